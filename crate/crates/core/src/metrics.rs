//! Reconstruction quality against a ground-truth point set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::index::NeighborIndex;

pub const DEFAULT_COMPLETENESS_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ACCURACY_PERCENTILE: f64 = 90.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Ground-truth points closer than this to the reconstruction count as covered (mm).
    pub completeness_threshold: f64,
    /// Percentile of reconstruction-to-truth distances reported as accuracy.
    pub accuracy_percentile: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            completeness_threshold: DEFAULT_COMPLETENESS_THRESHOLD,
            accuracy_percentile: DEFAULT_ACCURACY_PERCENTILE,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.completeness_threshold.is_finite() && self.completeness_threshold > 0.0) {
            return Err(Error::InvalidInput(format!(
                "completeness_threshold = {}, must be positive",
                self.completeness_threshold
            )));
        }
        if !(0.0..=100.0).contains(&self.accuracy_percentile) {
            return Err(Error::InvalidInput(format!(
                "accuracy_percentile = {}, must lie in [0, 100]",
                self.accuracy_percentile
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy_mm: f64,
    pub completeness_pct: f64,
    pub mae_mm: f64,
    pub sd_mm: f64,
    pub completeness_threshold_mm: f64,
    pub accuracy_percentile: f64,
}

/// Scores `recon` against `gt` with the default 90th-percentile accuracy.
/// Both clouds must already share a frame.
pub fn evaluate(recon: &PointCloud, gt: &PointCloud, completeness_threshold: f64) -> Result<EvalReport> {
    evaluate_with(
        recon,
        gt,
        &EvalOptions {
            completeness_threshold,
            ..EvalOptions::default()
        },
    )
}

pub fn evaluate_with(recon: &PointCloud, gt: &PointCloud, options: &EvalOptions) -> Result<EvalReport> {
    if recon.is_empty() || gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    options.validate()?;

    let gt_index = NeighborIndex::new(gt);
    let mut distances = nearest_distances(recon, &gt_index);

    let recon_index = NeighborIndex::new(recon);
    let threshold = options.completeness_threshold;
    let covered = gt
        .points()
        .par_iter()
        .filter(|g| recon_index.nearest(g).is_some_and(|n| n.distance < threshold))
        .count();

    let n = distances.len() as f64;
    let mae = distances.iter().sum::<f64>() / n;
    let variance = distances.iter().map(|d| (d - mae).powi(2)).sum::<f64>() / n;
    distances.sort_by(f64::total_cmp);

    Ok(EvalReport {
        accuracy_mm: percentile(&distances, options.accuracy_percentile),
        completeness_pct: 100.0 * covered as f64 / gt.len() as f64,
        mae_mm: mae,
        sd_mm: variance.sqrt(),
        completeness_threshold_mm: threshold,
        accuracy_percentile: options.accuracy_percentile,
    })
}

fn nearest_distances(cloud: &PointCloud, index: &NeighborIndex) -> Vec<f64> {
    cloud
        .points()
        .par_iter()
        .map(|p| index.nearest(p).map_or(f64::INFINITY, |n| n.distance))
        .collect()
}

/// Linear interpolation between closest ranks of an ascending slice.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        len => {
            let rank = (pct / 100.0).clamp(0.0, 1.0) * (len - 1) as f64;
            let lo = rank.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            let frac = rank - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        }
    }
}

/// Arithmetic mean of each metric over a batch. `None` for an empty batch.
pub fn batch_mean(reports: &[EvalReport]) -> Option<EvalReport> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(EvalReport {
        accuracy_mm: mean(|r| r.accuracy_mm),
        completeness_pct: mean(|r| r.completeness_pct),
        mae_mm: mean(|r| r.mae_mm),
        sd_mm: mean(|r| r.sd_mm),
        completeness_threshold_mm: first.completeness_threshold_mm,
        accuracy_percentile: first.accuracy_percentile,
    })
}

/// CSV with one row per fragment and a closing `Mean` row.
pub fn report_csv(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::from("id,accuracy_mm,completeness_pct,mae_mm,sd_mm\n");
    let push = |out: &mut String, id: &str, r: &EvalReport| {
        out.push_str(&format!(
            "{id},{:.4},{:.2},{:.4},{:.4}\n",
            r.accuracy_mm, r.completeness_pct, r.mae_mm, r.sd_mm
        ));
    };
    for (id, r) in rows {
        push(&mut out, id, r);
    }
    let reports: Vec<EvalReport> = rows.iter().map(|(_, r)| *r).collect();
    if let Some(mean) = batch_mean(&reports) {
        push(&mut out, "Mean", &mean);
    }
    out
}
