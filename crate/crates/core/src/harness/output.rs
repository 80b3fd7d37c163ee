use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::experiments::{ConcentrationReport, EmpiricalReport};
use super::verify::csv_error;
use crate::error::{PjmpError, Result};
use crate::model::NetworkParams;
use crate::semigroup::{Kernel, RatioReport};
use crate::simulate::Trajectory;
use crate::statespace::StateSpace;

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn finish(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| PjmpError::io(path, e))
}

/// state_index, potentials, then target_j, rate_j per neuron.
pub fn write_statespace_csv(path: &Path, p: &NetworkParams, space: &StateSpace) -> Result<()> {
    let file = File::create(path).map_err(|e| PjmpError::io(path, e))?;
    let mut out = BufWriter::new(file);
    space.write_csv(p, &mut out).map_err(|e| PjmpError::io(path, e))?;
    out.flush().map_err(|e| PjmpError::io(path, e))
}

pub fn write_kernel_csv(path: &Path, k: &Kernel) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["row", "column", "probability"]).map_err(|e| csv_error(path, e))?;
    for x in 0..k.dim() {
        for y in 0..k.dim() {
            w.write_record([x.to_string(), y.to_string(), k.get(x, y).to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    finish(path, w)
}

pub fn write_ratios_csv(path: &Path, r: &RatioReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "c11", "c12", "min_entry"]).map_err(|e| csv_error(path, e))?;
    for row in &r.rows {
        w.write_record([
            row.t.to_string(),
            row.c11.to_string(),
            row.c12.to_string(),
            row.min_entry.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// One row per path and observation time.
pub fn write_samples_csv(path: &Path, times: &[f64], rows: &[Vec<usize>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["path_id", "time", "state_index"]).map_err(|e| csv_error(path, e))?;
    for (id, row) in rows.iter().enumerate() {
        for (t, s) in times.iter().zip(row) {
            w.write_record([id.to_string(), t.to_string(), s.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    finish(path, w)
}

/// One row for the initial state and one per jump.
pub fn write_trajectories_csv(path: &Path, paths: &[Trajectory]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["path_id", "time", "state_index"]).map_err(|e| csv_error(path, e))?;
    for (id, tr) in paths.iter().enumerate() {
        let times = std::iter::once(0.0).chain(tr.events.iter().map(|(t, _)| *t));
        for (t, s) in times.zip(&tr.states) {
            w.write_record([id.to_string(), t.to_string(), s.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    finish(path, w)
}

pub fn write_concentration_csv(path: &Path, rep: &ConcentrationReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "x0_index", "mean", "r", "tail", "wilson_lo", "wilson_hi", "exact_tail", "q_hat_bound"])
        .map_err(|e| csv_error(path, e))?;
    for ((curve, (t, x0)), mean) in rep.curves.iter().zip(&rep.pairs).zip(&rep.means) {
        for k in 0..curve.abscissa.len() {
            let r = curve.abscissa[k];
            w.write_record([
                t.to_string(),
                x0.to_string(),
                mean.to_string(),
                r.to_string(),
                curve.tail[k].to_string(),
                curve.wilson_lo[k].to_string(),
                curve.wilson_hi[k].to_string(),
                curve.reference[k].to_string(),
                (rep.q_hat * (-r * r).exp()).to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    finish(path, w)
}

pub fn write_empirical_csv(path: &Path, rep: &EmpiricalReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["n", "tail", "wilson_lo", "wilson_hi", "exact_tail", "exact_mean", "gap"])
        .map_err(|e| csv_error(path, e))?;
    let c = &rep.curve;
    for k in 0..c.abscissa.len() {
        let gap = if k == 0 { 0.0 } else { rep.gaps[k - 1] };
        w.write_record([
            c.abscissa[k].to_string(),
            c.tail[k].to_string(),
            c.wilson_lo[k].to_string(),
            c.wilson_hi[k].to_string(),
            c.reference[k].to_string(),
            rep.exact_means[k].to_string(),
            gap.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}
