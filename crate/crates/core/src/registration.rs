//! Closed-form rigid fitting, bilateral boundary ICP and a trimmed ICP baseline.
//!
//! Both ICP variants estimate the transform that moves the second ("back")
//! cloud into the frame of the first ("front") cloud.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::BoundarySet;
use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud, RigidTransform};
use crate::index::NeighborIndex;

/// Least-squares rigid transform taking each pair's first point onto its second.
///
/// Centroid subtraction, SVD of the cross-covariance, and a sign flip on the
/// weakest singular direction when the raw solution would be a reflection.
pub fn rigid_fit_svd(pairs: &[(Point3, Point3)]) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateCorrespondence(format!(
            "{} pairs, need at least 3",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let (sum_src, sum_dst) = pairs.iter().fold(
        (Vector3::zeros(), Vector3::zeros()),
        |(a, b): (Vector3<f64>, Vector3<f64>), (p, q)| (a + p.coords, b + q.coords),
    );
    let src_mean = sum_src / n;
    let dst_mean = sum_dst / n;
    let mut h = Matrix3::zeros();
    for (p, q) in pairs {
        h += (p.coords - src_mean) * (q.coords - dst_mean).transpose();
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateCorrespondence("non-finite input".into()));
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateCorrespondence("SVD did not converge".into())),
    };
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if !(s[order[0]] > 0.0) || s[order[1]] <= s[order[0]] * 1e-12 {
        return Err(Error::DegenerateCorrespondence(
            "points are collinear or coincident".into(),
        ));
    }
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(order[2], order[2])] = -1.0;
    }
    let rotation = v * d * u.transpose();
    let translation = dst_mean - rotation * src_mean;
    Ok(RigidTransform::from_parts_unchecked(rotation, translation))
}

/// Sum of squared residuals `‖t(p) − q‖²` over the pairs.
pub fn sum_squared_error(pairs: &[(Point3, Point3)], t: &RigidTransform) -> f64 {
    pairs.iter().map(|(p, q)| (t.apply(p) - q).norm_squared()).sum()
}

/// Loop controls shared by [`bbicp`] and [`trimmed_icp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BbicpConfig {
    pub max_iterations: usize,
    /// Stop once the relative change of the objective falls below this.
    pub convergence_tol: f64,
    /// Fixed rejection distance in mm. When absent, the threshold is
    /// `reject_median_factor` times the median pair distance, measured on the
    /// first iteration and measured once more on the second.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correspondence_reject_distance: Option<f64>,
    pub reject_median_factor: f64,
    pub min_correspondences: usize,
}

impl Default for BbicpConfig {
    fn default() -> Self {
        BbicpConfig {
            max_iterations: 100,
            convergence_tol: 1e-6,
            correspondence_reject_distance: None,
            reject_median_factor: 5.0,
            min_correspondences: 10,
        }
    }
}

impl BbicpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidInput("convergence_tol must be positive".into()));
        }
        if let Some(d) = self.correspondence_reject_distance {
            if !(d > 0.0) {
                return Err(Error::InvalidInput(
                    "correspondence_reject_distance must be positive".into(),
                ));
            }
        }
        if !(self.reject_median_factor > 0.0) {
            return Err(Error::InvalidInput("reject_median_factor must be positive".into()));
        }
        Ok(())
    }

    fn threshold(&self, iteration: usize, distances: &[f64], previous: Option<f64>) -> f64 {
        if let Some(d) = self.correspondence_reject_distance {
            return d;
        }
        match previous {
            Some(tau) if iteration >= 2 => tau,
            _ => {
                let mut sorted = distances.to_vec();
                sorted.sort_by(f64::total_cmp);
                let median = sorted.get(sorted.len() / 2).copied().unwrap_or(0.0);
                (self.reject_median_factor * median).max(1e-9)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Sum over all pairs of the squared distance after this iteration's
    /// solve, each term capped at the squared rejection distance (mm²).
    /// Trimmed ICP reports the plain sum over its kept pairs.
    pub objective: f64,
    /// Root mean square distance over the pairs used in the solve.
    pub rms: f64,
    /// Pairs seeded by the front scan (front boundary point to back cloud).
    pub front_pairs: usize,
    /// Pairs seeded by the back scan (back boundary point to front cloud).
    pub back_pairs: usize,
    pub rejected: usize,
    pub reject_distance: f64,
    pub nn_queries: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Maps the back scan into the front scan's frame.
    pub transform: RigidTransform,
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub final_rms: f64,
    pub iterations: Vec<IterationRecord>,
}

impl RegistrationResult {
    /// CSV with one row per iteration.
    pub fn trace_csv(&self) -> String {
        let mut out =
            String::from("iteration,objective_mm2,rms_mm,front_pairs,back_pairs,rejected,reject_distance_mm,nn_queries\n");
        for (i, r) in self.iterations.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                i + 1,
                r.objective,
                r.rms,
                r.front_pairs,
                r.back_pairs,
                r.rejected,
                r.reject_distance,
                r.nn_queries
            ));
        }
        out
    }
}

struct Pair {
    /// Point in the back scan's own frame.
    source: Point3,
    /// Point in the front scan's frame.
    target: Point3,
    from_front: bool,
}

fn has_converged(previous: Option<f64>, current: f64, tol: f64) -> bool {
    if current <= f64::MIN_POSITIVE {
        return true;
    }
    match previous {
        Some(prev) => (prev - current).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE),
        None => false,
    }
}

/// Bilateral boundary ICP.
///
/// Each iteration pairs every front boundary point with its closest point in
/// the (currently transformed) back cloud and every back boundary point with
/// its closest point in the front cloud, drops pairs beyond the rejection
/// distance, and solves the rigid transform minimizing the summed squared
/// distances of all surviving pairs.
pub fn bbicp(
    front: &PointCloud,
    back: &PointCloud,
    front_boundary: &BoundarySet,
    back_boundary: &BoundarySet,
    init: &RigidTransform,
    config: &BbicpConfig,
) -> Result<RegistrationResult> {
    config.validate()?;
    front_boundary.check_bounds(front.len())?;
    back_boundary.check_bounds(back.len())?;
    if front.is_empty() || back.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let front_index = NeighborIndex::new(front);
    let back_index = NeighborIndex::new(back);
    bbicp_with_indices(
        front,
        back,
        &front_index,
        &back_index,
        front_boundary,
        back_boundary,
        init,
        config,
    )
}

/// [`bbicp`] over prebuilt neighbor indices of the two full clouds.
#[allow(clippy::too_many_arguments)]
pub fn bbicp_with_indices(
    front: &PointCloud,
    back: &PointCloud,
    front_index: &NeighborIndex,
    back_index: &NeighborIndex,
    front_boundary: &BoundarySet,
    back_boundary: &BoundarySet,
    init: &RigidTransform,
    config: &BbicpConfig,
) -> Result<RegistrationResult> {
    config.validate()?;
    let (fp, bp) = (front.points(), back.points());
    let mut current = *init;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut tau: Option<f64> = None;
    let mut converged = false;

    for iteration in 0..config.max_iterations {
        let queries_before = front_index.query_count() + back_index.query_count();
        let inverse = current.inverse();
        let (k1, k2): (Vec<Pair>, Vec<Pair>) = rayon::join(
            || {
                front_boundary
                    .indices()
                    .par_iter()
                    .map(|&i| {
                        let n = back_index
                            .nearest(&inverse.apply(&fp[i]))
                            .expect("back cloud is non-empty");
                        Pair {
                            source: bp[n.index],
                            target: fp[i],
                            from_front: true,
                        }
                    })
                    .collect()
            },
            || {
                back_boundary
                    .indices()
                    .par_iter()
                    .map(|&j| {
                        let n = front_index
                            .nearest(&current.apply(&bp[j]))
                            .expect("front cloud is non-empty");
                        Pair {
                            source: bp[j],
                            target: fp[n.index],
                            from_front: false,
                        }
                    })
                    .collect()
            },
        );
        let nn_queries = front_index.query_count() + back_index.query_count() - queries_before;

        let pairs: Vec<Pair> = k1.into_iter().chain(k2).collect();
        let distances: Vec<f64> = pairs
            .iter()
            .map(|p| (current.apply(&p.source) - p.target).norm())
            .collect();
        let threshold = config.threshold(iteration, &distances, tau);
        tau = Some(threshold);
        let kept: Vec<&Pair> = pairs
            .iter()
            .zip(&distances)
            .filter(|(_, &d)| d <= threshold)
            .map(|(p, _)| p)
            .collect();
        if kept.len() < config.min_correspondences.max(3) {
            return Err(Error::InsufficientCorrespondences {
                have: kept.len(),
                need: config.min_correspondences.max(3),
            });
        }
        let solve_pairs: Vec<(Point3, Point3)> = kept.iter().map(|p| (p.source, p.target)).collect();
        let next = rigid_fit_svd(&solve_pairs)?;
        let kept_error = sum_squared_error(&solve_pairs, &next);
        let cap = threshold * threshold;
        let objective: f64 = pairs
            .iter()
            .map(|p| (next.apply(&p.source) - p.target).norm_squared().min(cap))
            .sum();
        if !objective.is_finite() {
            return Err(Error::NonFiniteObjective(iteration + 1));
        }
        let previous = records.last().map(|r| r.objective);
        if iteration >= 2 && previous.is_some_and(|prev| objective > prev) {
            // With the threshold frozen the capped objective cannot rise in
            // exact arithmetic; a rise is rounding at a fixed point.
            converged = true;
            break;
        }
        let front_pairs = kept.iter().filter(|p| p.from_front).count();
        records.push(IterationRecord {
            objective,
            rms: (kept_error / kept.len() as f64).sqrt(),
            front_pairs,
            back_pairs: kept.len() - front_pairs,
            rejected: pairs.len() - kept.len(),
            reject_distance: threshold,
            nn_queries,
        });
        current = next;
        if has_converged(previous, objective, config.convergence_tol) {
            converged = true;
            break;
        }
    }
    Ok(finish(current, records, converged))
}

fn finish(transform: RigidTransform, records: Vec<IterationRecord>, converged: bool) -> RegistrationResult {
    RegistrationResult {
        transform,
        objective_trace: records.iter().map(|r| r.objective).collect(),
        iterations_run: records.len(),
        converged,
        final_rms: records.last().map_or(0.0, |r| r.rms),
        iterations: records,
    }
}

/// Point-to-point ICP over all source points that keeps only the
/// `trim_fraction` closest pairs each iteration. Distance rejection is not
/// applied; trimming takes its place.
pub fn trimmed_icp(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    trim_fraction: f64,
    config: &BbicpConfig,
) -> Result<RegistrationResult> {
    if !(trim_fraction > 0.0 && trim_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "trim_fraction = {trim_fraction}, must lie in (0, 1]"
        )));
    }
    config.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let index = NeighborIndex::new(target);
    let (sp, tp) = (source.points(), target.points());
    let keep = ((trim_fraction * sp.len() as f64).ceil() as usize).clamp(1, sp.len());
    let need = config.min_correspondences.max(3);
    if keep < need {
        return Err(Error::InsufficientCorrespondences { have: keep, need });
    }
    let mut current = *init;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    for iteration in 0..config.max_iterations {
        let before = index.query_count();
        let mut pairs: Vec<(f64, usize, usize)> = sp
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let n = index.nearest(&current.apply(p)).expect("target is non-empty");
                (n.distance, i, n.index)
            })
            .collect();
        let nn_queries = index.query_count() - before;
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let threshold = pairs[keep - 1].0;
        let solve_pairs: Vec<(Point3, Point3)> =
            pairs[..keep].iter().map(|&(_, i, j)| (sp[i], tp[j])).collect();
        let next = rigid_fit_svd(&solve_pairs)?;
        let objective = sum_squared_error(&solve_pairs, &next);
        if !objective.is_finite() {
            return Err(Error::NonFiniteObjective(iteration + 1));
        }
        let previous = records.last().map(|r| r.objective);
        records.push(IterationRecord {
            objective,
            rms: (objective / keep as f64).sqrt(),
            front_pairs: 0,
            back_pairs: keep,
            rejected: sp.len() - keep,
            reject_distance: threshold,
            nn_queries,
        });
        current = next;
        if has_converged(previous, objective, config.convergence_tol) {
            converged = true;
            break;
        }
    }
    Ok(finish(current, records, converged))
}
