use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{write_json, Analysis, System};
use crate::error::{PjmpError, Result};
use crate::inequalities::{
    corollary_sides, cylindrical_mlsi_sides, denominator_shift_check, lipschitz_exp_bounds,
    mlsi_sides, schedule_builder, sweeping_out_check, ConditionReport, CubicFit, InequalityReport,
    MlsiConstants, FITTED_SLACK_TOL,
};
use crate::observable::{CoordinateFn, ObservableKind};
use crate::semigroup::kernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    Mlsi,
    Corollary,
    Sweep,
    Denom,
    Lemma31,
    Cylindrical,
}

impl Check {
    pub const ALL: [Check; 6] = [
        Check::Mlsi,
        Check::Corollary,
        Check::Sweep,
        Check::Denom,
        Check::Lemma31,
        Check::Cylindrical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Mlsi => "mlsi",
            Check::Corollary => "corollary",
            Check::Sweep => "sweep",
            Check::Denom => "denom",
            Check::Lemma31 => "lemma31",
            Check::Cylindrical => "cylindrical",
        }
    }

    /// Parses a check name; `all` expands to every check.
    pub fn parse_list(names: &[String]) -> Result<Vec<Check>> {
        let mut out = Vec::new();
        for name in names {
            if name == "all" {
                out.extend(Check::ALL);
                continue;
            }
            let c = Check::ALL
                .into_iter()
                .find(|c| c.name() == name)
                .ok_or_else(|| PjmpError::InvalidConfig(format!("unknown check '{name}'")))?;
            out.push(c);
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySpec {
    pub checks: Vec<Check>,
    pub t_grid: Vec<f64>,
    pub corollary_times: Vec<f64>,
    /// (t, s) pairs for the sweeping-out and denominator-shift checks.
    pub lemma_times: Vec<(f64, f64)>,
    pub lambdas: Vec<f64>,
    pub cylindrical_n: usize,
    pub decay_base: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            checks: Check::ALL.to_vec(),
            t_grid: vec![0.25, 0.5, 1.0, 2.0],
            corollary_times: vec![0.5, 1.0],
            lemma_times: vec![(1.0, 0.5), (2.0, 0.3), (1.0, 0.3)],
            lambdas: vec![0.25, 0.5, 1.0],
            cylindrical_n: 3,
            decay_base: crate::inequalities::DEFAULT_DECAY_BASE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: Check,
    pub pass: bool,
    pub skipped: Option<String>,
    pub rows: usize,
    pub min_slack: f64,
    pub failures: Vec<String>,
    #[serde(skip)]
    pub reports: Vec<InequalityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryEntry {
    pub function_id: String,
    pub neuron: usize,
    pub t: f64,
    pub r_hat: f64,
    pub two_jump: f64,
    pub zeta_hat: f64,
    pub zeta_theory: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub pass: bool,
    pub constants: MlsiConstants,
    pub c11_hat: f64,
    pub c12_hat: f64,
    pub t_hat: Option<f64>,
    pub delta_star: Vec<(f64, f64)>,
    pub delta_fit: CubicFit,
    pub delta_star_nondecreasing: bool,
    pub corollary: Vec<CorollaryEntry>,
    pub schedule_gaps: Vec<f64>,
    pub condition: Option<ConditionReport>,
    pub checks: Vec<CheckOutcome>,
}

fn outcome(check: Check, reports: Vec<InequalityReport>, tol: f64) -> CheckOutcome {
    let failures: Vec<String> = reports
        .iter()
        .filter(|r| r.slack < -tol)
        .map(|r| format!("{} t={} x={} {}: slack {:e}", r.name, r.meta.t, r.meta.x_index, r.meta.function_id, r.slack))
        .collect();
    CheckOutcome {
        check,
        pass: failures.is_empty(),
        skipped: None,
        rows: reports.len(),
        min_slack: reports.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min),
        failures,
        reports,
    }
}

fn exp_half(sys: &System) -> (String, Vec<f64>) {
    let p = &sys.params;
    ("exp(0.5*x0)".into(), sys.domain.tabulate(|x| (0.5 * p.potential_f64(x.get(0))).exp()))
}

fn tag(mut reports: Vec<InequalityReport>, id: &str) -> Vec<InequalityReport> {
    for r in &mut reports {
        let s = r.meta.s.map(|s| format!("|s={s}")).unwrap_or_default();
        r.meta.function_id = format!("{id}{s}");
    }
    reports
}

pub fn run_verify(sys: &System, analysis: &Analysis, spec: &VerifySpec) -> Result<VerifySummary> {
    let c = &analysis.constants;
    let mut summary = VerifySummary {
        pass: true,
        constants: *c,
        c11_hat: analysis.ratios.c11_hat,
        c12_hat: analysis.ratios.c12_hat,
        t_hat: analysis.ratios.t_hat,
        delta_star: analysis.delta_curve.iter().map(|m| (m.t, m.value)).collect(),
        delta_fit: analysis.fit,
        delta_star_nondecreasing: analysis.delta_nondecreasing(),
        corollary: Vec::new(),
        schedule_gaps: Vec::new(),
        condition: None,
        checks: Vec::new(),
    };
    for check in &spec.checks {
        let out = match check {
            Check::Mlsi => {
                let mut reports = Vec::new();
                for &t in &spec.t_grid {
                    let k = kernel(&sys.q, t)?;
                    for probe in &analysis.family {
                        for x in 0..sys.domain.len() {
                            reports.push(mlsi_sides(&sys.domain, &k, probe, x, c)?);
                        }
                    }
                }
                outcome(Check::Mlsi, reports, 0.0)
            }
            Check::Corollary => match sys.params.equal_weights() {
                None => CheckOutcome {
                    check: Check::Corollary,
                    pass: true,
                    skipped: Some("weights are not all equal".into()),
                    rows: 0,
                    min_slack: f64::INFINITY,
                    failures: Vec::new(),
                    reports: Vec::new(),
                },
                Some(_) => {
                    let mut reports = Vec::new();
                    let mut failures = Vec::new();
                    for kind in [ObservableKind::ExpNeg, ObservableKind::ShiftedIdentity] {
                        for i in 0..sys.params.n_neurons() {
                            let fi = CoordinateFn::from_kind(kind, i, &sys.params);
                            for &t in &spec.corollary_times {
                                let rep = corollary_sides(&sys.params, &sys.domain, &sys.q, &fi, t, c)?;
                                let r = rep.ratios;
                                if !r.r_hat.is_finite() {
                                    failures.push(format!("{} neuron {i}: shift ratio is infinite", fi.id()));
                                }
                                if r.two_jump > r.r_hat * r.r_hat + 1e-9 {
                                    failures.push(format!(
                                        "{} neuron {i}: two-jump ratio {} exceeds R_hat^2 = {}",
                                        fi.id(),
                                        r.two_jump,
                                        r.r_hat * r.r_hat
                                    ));
                                }
                                summary.corollary.push(CorollaryEntry {
                                    function_id: fi.id().to_string(),
                                    neuron: i,
                                    t,
                                    r_hat: r.r_hat,
                                    two_jump: r.two_jump,
                                    zeta_hat: rep.zeta_hat,
                                    zeta_theory: rep.zeta_theory,
                                });
                                reports.extend(tag(rep.reports, &format!("{}[x{i}]", fi.id())));
                            }
                        }
                    }
                    let mut out = outcome(Check::Corollary, reports, FITTED_SLACK_TOL);
                    out.pass &= failures.is_empty();
                    out.failures.extend(failures);
                    out
                }
            },
            Check::Sweep => {
                let (id, f) = exp_half(sys);
                let mut reports = Vec::new();
                for &(t, s) in &spec.lemma_times {
                    reports.extend(tag(sweeping_out_check(&sys.domain, &sys.q, &f, t, s, c)?, &id));
                }
                outcome(Check::Sweep, reports, 0.0)
            }
            Check::Denom => {
                let (id, f) = exp_half(sys);
                let g = sys.domain.carre_du_champ(&f);
                let mut reports = Vec::new();
                for &(t, s) in &spec.lemma_times {
                    let reps = denominator_shift_check(&sys.domain, &sys.q, &g, &f, t, s, c)?;
                    reports.extend(tag(reps, &format!("gamma/{id}")));
                }
                outcome(Check::Denom, reports, 0.0)
            }
            Check::Lemma31 => {
                let mut reports = Vec::new();
                let mut failures = Vec::new();
                for i in 0..sys.params.n_neurons() {
                    let fi = CoordinateFn::from_kind(ObservableKind::Identity, i, &sys.params);
                    for &lambda in &spec.lambdas {
                        let rep = lipschitz_exp_bounds(&sys.params, &sys.domain, &fi, lambda, sys.model.d_lip, 3)?;
                        failures.extend(rep.violations);
                        reports.extend(tag(rep.reports, &format!("identity[x{i}]")));
                    }
                }
                let mut out = outcome(Check::Lemma31, reports, 0.0);
                out.pass &= failures.is_empty();
                out
            }
            Check::Cylindrical => {
                let build = schedule_builder(c, &analysis.fit, spec.cylindrical_n, spec.decay_base)?;
                let fi = CoordinateFn::from_kind(ObservableKind::Identity, 0, &sys.params);
                let mut reports = Vec::new();
                for &lambda in &[0.5, 1.0] {
                    for x0 in 0..sys.domain.len() {
                        reports.push(cylindrical_mlsi_sides(
                            &sys.params,
                            &sys.domain,
                            &sys.q,
                            &build.schedule,
                            &fi,
                            lambda,
                            x0,
                            c,
                        )?);
                    }
                }
                summary.schedule_gaps = build.schedule.gaps().to_vec();
                summary.condition = Some(build.condition);
                outcome(Check::Cylindrical, reports, 0.0)
            }
        };
        summary.pass &= out.pass;
        summary.checks.push(out);
    }
    Ok(summary)
}

pub const CSV_HEADER: [&str; 8] = [
    "check",
    "t",
    "x_index",
    "function_id",
    "lhs",
    "rhs",
    "slack",
    "constants_used",
];

pub fn write_report_csv(path: &Path, check: &str, reports: &[InequalityReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let io = |e| csv_error(path, e);
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in reports {
        w.write_record([
            check.to_string(),
            r.meta.t.to_string(),
            r.meta.x_index.to_string(),
            r.meta.function_id.clone(),
            r.lhs.to_string(),
            r.rhs.to_string(),
            r.slack.to_string(),
            r.constants_used.clone(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| PjmpError::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> PjmpError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => PjmpError::io(path, source),
        other => PjmpError::InvalidConfig(format!("{}: {other:?}", path.display())),
    }
}

/// One CSV per check plus the δ* curve, kernel ratios and a JSON summary.
pub fn write_verify(out: &Path, analysis: &Analysis, summary: &VerifySummary) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| PjmpError::io(out, e))?;
    let mut artifacts = Vec::new();
    for o in &summary.checks {
        let path = out.join(format!("{}.csv", o.check.name()));
        write_report_csv(&path, o.check.name(), &o.reports)?;
        artifacts.push(path);
    }
    let path = out.join("delta_star.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record(["t", "delta_star", "delta_fit", "function_id", "x_index"])
        .map_err(|e| csv_error(&path, e))?;
    for m in &analysis.delta_curve {
        w.write_record([
            m.t.to_string(),
            m.value.to_string(),
            analysis.fit.eval(m.t).to_string(),
            m.function_id.clone().unwrap_or_default(),
            m.x_index.map(|x| x.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| PjmpError::io(&path, e))?;
    artifacts.push(path);

    let path = out.join("ratios.csv");
    super::output::write_ratios_csv(&path, &analysis.ratios)?;
    artifacts.push(path);

    let path = out.join("verify_summary.json");
    write_json(&path, summary)?;
    artifacts.push(path);
    Ok(artifacts)
}
