use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use pjmp_core::harness::output::{
    write_kernel_csv, write_ratios_csv, write_samples_csv, write_statespace_csv, write_trajectories_csv,
};
use pjmp_core::harness::{self, write_json, ExperimentConfig, Outcome, RunRecord, System};
use pjmp_core::semigroup::{kernel, kernel_ratios, Schedule};
use pjmp_core::simulate::{sample_at_times, simulate_paths, Sampler, SimConfig};
use pjmp_core::statespace::enumerate_reachable;
use pjmp_core::Config;

#[derive(Debug, Parser)]
#[command(name = "pjmp", version, about = "Exact analysis and simulation of pure-jump neuron networks")]
struct Cli {
    /// Network or experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Initial configuration as `v1;v2;...`; overrides the config.
    #[arg(long, global = true, allow_hyphen_values = true)]
    x0: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dump the invariant domain (or the reachable set) with jump targets and rates.
    Statespace {
        /// Dump every configuration reachable from x0 instead of the invariant domain.
        #[arg(long)]
        reachable: bool,
    },
    /// Transition kernel at time t.
    Kernel {
        #[arg(long)]
        t: f64,
    },
    /// Grid maxima of the kernel ratios.
    Ratios {
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<f64>>,
        #[arg(long)]
        u_points: Option<usize>,
    },
    /// Inequality checks.
    Verify {
        /// mlsi, corollary, sweep, denom, lemma31, cylindrical or all.
        #[arg(long, value_delimiter = ',')]
        check: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<f64>>,
    },
    /// Sample paths.
    Simulate {
        #[arg(long, default_value_t = 100)]
        paths: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long)]
        sampler: Option<Sampler>,
        /// Record the state at these times instead of every jump.
        #[arg(long, value_delimiter = ',')]
        at: Option<Vec<f64>>,
    },
    /// Tails of f(X_t) around its exact mean.
    Concentration {
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Tails of the empirical average along the observation schedule.
    Empirical {
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Run the experiment named in the config.
    Run,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Statespace { .. } => "statespace",
            Command::Kernel { .. } => "kernel",
            Command::Ratios { .. } => "ratios",
            Command::Verify { .. } => "verify",
            Command::Simulate { .. } => "simulate",
            Command::Concentration { .. } => "concentration",
            Command::Empirical { .. } => "empirical",
            Command::Run => "run",
        }
    }
}

fn first_x0(cfg: &ExperimentConfig, sys: &System) -> anyhow::Result<usize> {
    Ok(cfg.x0_indices(sys)?[0])
}

fn execute(cli: &Cli, cfg: &mut ExperimentConfig, out: &Path) -> anyhow::Result<Outcome> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let simple = |artifacts: Vec<PathBuf>| Outcome {
        pass: true,
        artifacts,
        failures: Vec::new(),
    };
    if let Command::Statespace { reachable: true } = cli.command {
        let p = &cfg.network;
        let x0 = match &cli.x0 {
            Some(text) => p.parse_config(text)?,
            None => Config::zeros(p),
        };
        let space = enumerate_reachable(p, &x0)?;
        let path = out.join("reachable.csv");
        write_statespace_csv(&path, p, &space)?;
        return Ok(simple(vec![path]));
    }
    let sys = System::new(cfg.network.clone())?;
    match &cli.command {
        Command::Statespace { .. } => {
            let path = out.join("statespace.csv");
            write_statespace_csv(&path, &sys.params, &sys.domain)?;
            Ok(simple(vec![path]))
        }
        Command::Kernel { t } => {
            let path = out.join("kernel.csv");
            write_kernel_csv(&path, &kernel(&sys.q, *t)?)?;
            Ok(simple(vec![path]))
        }
        Command::Ratios { t_grid, u_points } => {
            let settings = cfg.analysis_settings();
            let grid = t_grid.clone().unwrap_or(settings.ratio_t_grid);
            let report = kernel_ratios(
                &sys.q,
                &sys.domain,
                sys.model.t0_global,
                sys.mu.min_mass(),
                &grid,
                u_points.unwrap_or(settings.u_points),
            )?;
            let csv = out.join("ratios.csv");
            write_ratios_csv(&csv, &report)?;
            let json = out.join("ratios_summary.json");
            write_json(&json, &report)?;
            let finite = report.c11_hat.is_finite() && report.c12_hat.is_finite();
            Ok(Outcome {
                pass: finite,
                artifacts: vec![csv, json],
                failures: if finite { vec![] } else { vec!["ratios: infinite maximum".into()] },
            })
        }
        Command::Verify { check, t_grid } => {
            if let Some(c) = check {
                cfg.checks = c.clone();
            }
            if let Some(g) = t_grid {
                cfg.t_grid = g.clone();
            }
            cfg.validate()?;
            Ok(harness::run_verify_suite(&sys, cfg, out)?)
        }
        Command::Simulate {
            paths,
            horizon,
            sampler,
            at,
        } => {
            let x0 = first_x0(cfg, &sys)?;
            let sim = SimConfig {
                seed: cfg.seed,
                n_paths: *paths,
                horizon: *horizon,
                sampler: sampler.unwrap_or(cfg.sampler),
            };
            let path = out.join("simulate.csv");
            match at {
                Some(times) => {
                    let mut all = times.clone();
                    let skip_origin = all.first() != Some(&0.0);
                    if skip_origin {
                        all.insert(0, 0.0);
                    }
                    let rows = sample_at_times(&sys.params, &sys.domain, x0, &Schedule::new(all)?, &sim)?;
                    let rows: Vec<Vec<usize>> = if skip_origin {
                        rows.into_iter().map(|r| r[1..].to_vec()).collect()
                    } else {
                        rows
                    };
                    write_samples_csv(&path, times, &rows)?;
                }
                None => write_trajectories_csv(&path, &simulate_paths(&sys.params, &sys.domain, x0, &sim)?)?,
            }
            Ok(simple(vec![path]))
        }
        Command::Concentration { paths } => {
            if let Some(n) = paths {
                cfg.n_paths = *n;
            }
            cfg.validate()?;
            Ok(harness::run_concentration(&sys, cfg, out)?)
        }
        Command::Empirical { lambda, paths } => {
            if let Some(l) = lambda {
                cfg.lambda = *l;
            }
            if let Some(n) = paths {
                cfg.n_paths = *n;
            }
            cfg.validate()?;
            Ok(harness::run_empirical(&sys, cfg, out)?)
        }
        Command::Run => Ok(harness::run(&sys, cfg, out)?),
    }
}

fn main_inner(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building the thread pool")?;
    }
    let Some(config_path) = &cli.config else {
        bail!("--config <json> is required");
    };
    let (mut cfg, text) = ExperimentConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(x0) = &cli.x0 {
        cfg.x0 = Some(vec![x0.clone()]);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let name = match (&cli.command, cfg.experiment) {
        (Command::Run, kind) => format!("run:{}", kind.name()),
        (cmd, _) => cmd.name().to_string(),
    };
    let record = RunRecord::start(&name, &text, cfg.seed);
    let outcome = execute(&cli, &mut cfg, &out)?;
    let manifest = record.finish(&out, &outcome)?;
    for a in &outcome.artifacts {
        println!("{}", a.display());
    }
    println!("{}", manifest.display());
    for f in &outcome.failures {
        eprintln!("FAIL {f}");
    }
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
