//! Experiment configuration, the concentration experiments, the verification
//! suite and artifact emission.

pub mod experiments;
pub mod output;
pub mod stats;
pub mod verify;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PjmpError, Result};
use crate::inequalities::{
    delta_star_curve, fit_cubic_through_origin, probe_family, CubicFit, MinConstant, MlsiConstants, Probe,
    DEFAULT_DECAY_BASE,
};
use crate::model::{model_constants, Config, ModelConstants, NetworkParams};
use crate::observable::ObservableKind;
use crate::semigroup::{default_t_grid, kernel_ratios, RatioReport, DEFAULT_U_POINTS};
use crate::simulate::Sampler;
use crate::statespace::{build_rate_matrix, invariant_domain, invariant_measure, Distribution, RateMatrix, StateSpace};

use experiments::{
    concentration_experiment, empirical_experiment, ConcentrationSpec, EmpiricalSpec, ScheduleSource,
};
use verify::{run_verify, write_verify, Check, VerifySpec};

/// A network together with its invariant domain, generator and invariant measure.
#[derive(Debug, Clone)]
pub struct System {
    pub params: NetworkParams,
    pub domain: StateSpace,
    pub q: RateMatrix,
    pub mu: Distribution,
    pub model: ModelConstants,
}

impl System {
    pub fn new(params: NetworkParams) -> Result<Self> {
        let domain = invariant_domain(&params, &Config::zeros(&params))?;
        let q = build_rate_matrix(&domain, &params)?;
        let mu = invariant_measure(&q)?;
        let model = model_constants(&params, &domain)?;
        Ok(System { params, domain, q, mu, model })
    }

    /// Index in D of a configuration written as `v1;v2;...`.
    pub fn state_index(&self, text: &str) -> Result<usize> {
        let x = self.params.parse_config(text)?;
        self.domain
            .index_of(&x)
            .ok_or_else(|| PjmpError::InvalidConfig(format!("configuration {text} is not in the invariant domain")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub ratio_t_grid: Vec<f64>,
    pub u_points: usize,
    pub delta_t_grid: Vec<f64>,
    pub probe_seed: u64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            ratio_t_grid: default_t_grid(),
            u_points: DEFAULT_U_POINTS,
            delta_t_grid: (1..=30).map(|k| k as f64 / 10.0).collect(),
            probe_seed: 0,
        }
    }
}

/// Empirical ratio constants, the resulting theoretical constants, and the
/// sharp mLSI constant over the probe family.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub ratios: RatioReport,
    pub constants: MlsiConstants,
    pub family: Vec<Probe>,
    pub delta_curve: Vec<MinConstant>,
    pub fit: CubicFit,
}

impl Analysis {
    pub fn compute(sys: &System, settings: &AnalysisSettings) -> Result<Self> {
        let ratios = kernel_ratios(
            &sys.q,
            &sys.domain,
            sys.model.t0_global,
            sys.mu.min_mass(),
            &settings.ratio_t_grid,
            settings.u_points,
        )?;
        let constants = MlsiConstants::new(&sys.model, &ratios, sys.domain.len(), sys.params.n_neurons());
        let family = probe_family(&sys.params, &sys.domain, settings.probe_seed);
        let delta_curve = delta_star_curve(&sys.domain, &sys.q, &family, &settings.delta_t_grid)?;
        let ts: Vec<f64> = delta_curve.iter().map(|m| m.t).collect();
        let ys: Vec<f64> = delta_curve.iter().map(|m| m.value).collect();
        let fit = fit_cubic_through_origin(&ts, &ys)?;
        Ok(Analysis {
            ratios,
            constants,
            family,
            delta_curve,
            fit,
        })
    }

    pub fn delta_nondecreasing(&self) -> bool {
        self.delta_curve.windows(2).all(|w| w[1].value >= w[0].value)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Concentration,
    Empirical,
    #[default]
    VerifyAll,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Concentration => "concentration",
            ExperimentKind::Empirical => "empirical",
            ExperimentKind::VerifyAll => "verify-all",
        }
    }
}

fn default_times() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn default_r_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 * 0.25).collect()
}
fn default_epsilon() -> f64 {
    0.3
}
fn default_n_max() -> usize {
    10
}
fn default_n_paths() -> usize {
    100_000
}
fn default_one() -> f64 {
    1.0
}
fn default_decay_base() -> f64 {
    DEFAULT_DECAY_BASE
}
fn default_t_grid_verify() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0]
}
fn default_checks() -> Vec<String> {
    vec!["all".into()]
}
fn default_observable() -> ObservableKind {
    ObservableKind::Identity
}

/// Full experiment description. A bare network object is also accepted and
/// runs the verification suite with defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkParams,
    #[serde(default)]
    pub experiment: ExperimentKind,
    /// Initial configurations as `v1;v2;...`; all of D when absent.
    #[serde(default)]
    pub x0: Option<Vec<String>>,
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    /// Observation times for the empirical experiment; built from the
    /// threshold rule when absent.
    #[serde(default)]
    pub schedule: Option<Vec<f64>>,
    #[serde(default = "default_observable")]
    pub observable: ObservableKind,
    /// Neurons summed in the concentration observable; all when absent.
    #[serde(default)]
    pub neurons: Option<Vec<usize>>,
    #[serde(default)]
    pub neuron: usize,
    #[serde(default = "default_r_grid")]
    pub r_grid: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampler: Sampler,
    #[serde(default = "default_one")]
    pub lambda: f64,
    #[serde(default)]
    pub laplace_a: f64,
    #[serde(default = "default_decay_base")]
    pub decay_base: f64,
    #[serde(default = "default_t_grid_verify")]
    pub t_grid: Vec<f64>,
    #[serde(default = "default_checks")]
    pub checks: Vec<String>,
    #[serde(default)]
    pub ratio_t_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub u_points: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_network(network: NetworkParams) -> Self {
        let text = serde_json::json!({ "network": network }).to_string();
        serde_json::from_str(&text).expect("defaults deserialize")
    }

    /// Parses JSON text; `path` only labels error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let at = |e: serde_json::Error| PjmpError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(at)?;
        let cfg = if value.get("network").is_some() {
            serde_json::from_str::<ExperimentConfig>(text).map_err(at)?
        } else {
            Self::from_network(serde_json::from_str::<NetworkParams>(text).map_err(at)?)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| PjmpError::io(path, e))?;
        Ok((Self::parse(&text, path)?, text))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PjmpError::InvalidConfig(m));
        let positive = |name: &str, v: &[f64]| -> Result<()> {
            if v.is_empty() || v.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                return bad(format!("{name} must be nonempty with positive finite entries"));
            }
            Ok(())
        };
        positive("times", &self.times)?;
        positive("t_grid", &self.t_grid)?;
        if let Some(g) = &self.ratio_t_grid {
            positive("ratio_t_grid", g)?;
        }
        if self.r_grid.is_empty() || self.r_grid.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("r_grid must be nonempty with nonnegative finite entries".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad("epsilon must be nonnegative".into());
        }
        if self.n_max == 0 || self.n_paths == 0 {
            return bad("n_max and n_paths must be at least 1".into());
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad("lambda must be positive".into());
        }
        if !(self.decay_base > 0.0 && self.decay_base < 1.0) {
            return bad("decay_base must lie in (0, 1)".into());
        }
        let n = self.network.n_neurons();
        for &i in self.neurons.iter().flatten().chain(std::iter::once(&self.neuron)) {
            if i >= n {
                return Err(PjmpError::NeuronOutOfRange { index: i, n });
            }
        }
        Check::parse_list(&self.checks)?;
        Ok(())
    }

    pub fn x0_indices(&self, sys: &System) -> Result<Vec<usize>> {
        match &self.x0 {
            Some(list) => list.iter().map(|s| sys.state_index(s)).collect(),
            None => Ok((0..sys.domain.len()).collect()),
        }
    }

    pub fn analysis_settings(&self) -> AnalysisSettings {
        let mut s = AnalysisSettings {
            probe_seed: self.seed,
            ..AnalysisSettings::default()
        };
        if let Some(g) = &self.ratio_t_grid {
            s.ratio_t_grid = g.clone();
        }
        if let Some(u) = self.u_points {
            s.u_points = u;
        }
        s
    }

    pub fn concentration_spec(&self, sys: &System) -> Result<ConcentrationSpec> {
        Ok(ConcentrationSpec {
            times: self.times.clone(),
            x0: self.x0_indices(sys)?,
            observable: self.observable,
            neurons: self
                .neurons
                .clone()
                .unwrap_or_else(|| (0..self.network.n_neurons()).collect()),
            r_grid: self.r_grid.clone(),
            n_paths: self.n_paths,
            seed: self.seed,
            sampler: self.sampler,
        })
    }

    pub fn empirical_spec(&self, sys: &System) -> Result<EmpiricalSpec> {
        Ok(EmpiricalSpec {
            x0: self.x0_indices(sys)?[0],
            neuron: self.neuron,
            observable: self.observable,
            epsilon: self.epsilon,
            n_max: self.n_max,
            n_paths: self.n_paths,
            seed: self.seed,
            sampler: self.sampler,
            lambda: self.lambda,
            laplace_a: self.laplace_a,
            schedule: match &self.schedule {
                Some(times) => ScheduleSource::User(times.clone()),
                None => ScheduleSource::Built { base: self.decay_base },
            },
        })
    }

    pub fn verify_spec(&self) -> Result<VerifySpec> {
        Ok(VerifySpec {
            checks: Check::parse_list(&self.checks)?,
            t_grid: self.t_grid.clone(),
            decay_base: self.decay_base,
            ..VerifySpec::default()
        })
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| PjmpError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub subcommand: String,
    pub started_at: String,
    pub elapsed_s: f64,
    pub pass: bool,
    pub artifacts: Vec<PathBuf>,
    pub failures: Vec<String>,
    pub version: String,
}

/// Tracks wall time and artifacts of one invocation.
#[derive(Debug)]
pub struct RunRecord {
    subcommand: String,
    config_sha256: String,
    seed: u64,
    started_at: String,
    clock: Instant,
}

impl RunRecord {
    pub fn start(subcommand: &str, config_text: &str, seed: u64) -> Self {
        RunRecord {
            subcommand: subcommand.to_string(),
            config_sha256: sha256_hex(config_text),
            seed,
            started_at: chrono::Utc::now().to_rfc3339(),
            clock: Instant::now(),
        }
    }

    /// Writes `manifest.json` into `out` and returns its path.
    pub fn finish(self, out: &Path, outcome: &Outcome) -> Result<PathBuf> {
        let manifest = Manifest {
            config_sha256: self.config_sha256,
            seed: self.seed,
            subcommand: self.subcommand,
            started_at: self.started_at,
            elapsed_s: self.clock.elapsed().as_secs_f64(),
            pass: outcome.pass,
            artifacts: outcome.artifacts.clone(),
            failures: outcome.failures.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let path = out.join("manifest.json");
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

/// Result of a suite: pass flag, written files and names of failing reports.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub pass: bool,
    pub artifacts: Vec<PathBuf>,
    pub failures: Vec<String>,
}

pub fn run_concentration(sys: &System, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out).map_err(|e| PjmpError::io(out, e))?;
    let rep = concentration_experiment(sys, &cfg.concentration_spec(sys)?)?;
    let csv = out.join("concentration.csv");
    output::write_concentration_csv(&csv, &rep)?;
    let json = out.join("concentration_summary.json");
    write_json(&json, &rep)?;
    let mut failures = Vec::new();
    if !rep.exact_within_intervals {
        failures.push("concentration: exact tail outside a Wilson interval".into());
    }
    if !rep.covers_all {
        failures.push("concentration: single Q_hat does not cover every (t, x0)".into());
    }
    Ok(Outcome {
        pass: failures.is_empty(),
        artifacts: vec![csv, json],
        failures,
    })
}

pub fn run_empirical(sys: &System, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out).map_err(|e| PjmpError::io(out, e))?;
    let spec = cfg.empirical_spec(sys)?;
    let analysis = match spec.schedule {
        ScheduleSource::Built { .. } => Analysis::compute(sys, &cfg.analysis_settings())?,
        ScheduleSource::User(_) => Analysis::compute(
            sys,
            &AnalysisSettings {
                ratio_t_grid: cfg.ratio_t_grid.clone().unwrap_or_else(default_t_grid),
                ..cfg.analysis_settings()
            },
        )?,
    };
    let rep = empirical_experiment(sys, &analysis, &spec)?;
    let csv = out.join("empirical.csv");
    output::write_empirical_csv(&csv, &rep)?;
    let json = out.join("empirical_summary.json");
    write_json(&json, &rep)?;
    let failures = if rep.reproduced {
        Vec::new()
    } else {
        vec![format!(
            "empirical: log-tail slope {:?} above target {}",
            rep.slope_mc, rep.target_slope
        )]
    };
    Ok(Outcome {
        pass: rep.reproduced,
        artifacts: vec![csv, json],
        failures,
    })
}

pub fn run_verify_suite(sys: &System, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let analysis = Analysis::compute(sys, &cfg.analysis_settings())?;
    let summary = run_verify(sys, &analysis, &cfg.verify_spec()?)?;
    let artifacts = write_verify(out, &analysis, &summary)?;
    let failures = summary
        .checks
        .iter()
        .flat_map(|c| c.failures.iter().map(move |f| format!("{}: {f}", c.check.name())))
        .collect();
    Ok(Outcome {
        pass: summary.pass,
        artifacts,
        failures,
    })
}

/// Dispatches on `cfg.experiment`.
pub fn run(sys: &System, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    match cfg.experiment {
        ExperimentKind::Concentration => run_concentration(sys, cfg, out),
        ExperimentKind::Empirical => run_empirical(sys, cfg, out),
        ExperimentKind::VerifyAll => run_verify_suite(sys, cfg, out),
    }
}
