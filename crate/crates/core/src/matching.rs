//! Front/back pairing across two batches and the contour-based initial pose.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::{Contour, ShapeDescriptor};
use crate::error::{Error, Result};
use crate::geom::{Plane, Point3, PointCloud, RigidTransform};
use crate::index::NeighborIndex;
use crate::registration::rigid_fit_svd;

/// Relative margin under which a runner-up in the same row flags a pair.
pub const AMBIGUITY_MARGIN: f64 = 0.10;

/// Best cyclic alignment of two descriptors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorDistanceResult {
    /// L2 norm of the accumulated-angle difference, radians.
    pub distance: f64,
    /// Vertex `v_0` of the first contour corresponds to `u_k` of the second.
    pub best_shift: usize,
    /// Whether the second contour was reflected (reversed vertex order).
    pub mirrored: bool,
}

/// Raw angles of the reflected contour, read from the same start vertex:
/// `[θ_0, θ_{n-1}, …, θ_1]`.
fn mirrored_angles(angles: &[f64]) -> Vec<f64> {
    let n = angles.len();
    (0..n).map(|i| angles[(n - i) % n]).collect()
}

fn shifted_distance(target: &[f64], raw: &[f64], shift: usize) -> f64 {
    let n = raw.len();
    let mut acc = 0.0;
    let mut sum = 0.0;
    for (i, t) in target.iter().enumerate() {
        acc += raw[(shift + i) % n];
        let d = t - acc;
        sum += d * d;
    }
    sum.sqrt()
}

/// Minimum over all start shifts of `q`, and over `q` and its reflection, of
/// `‖Θ(p, v_0) − Θ(q, u_k)‖₂`. Ties keep the smaller shift, unreflected first.
pub fn descriptor_distance(p: &ShapeDescriptor, q: &ShapeDescriptor) -> Result<DescriptorDistanceResult> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    if p.is_empty() {
        return Err(Error::InvalidInput("empty descriptor".into()));
    }
    let raw = q.turning_angles();
    let mirrored = mirrored_angles(&raw);
    let exact: f64 = p
        .theta_bar
        .iter()
        .zip(&q.theta_bar)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let mut best = DescriptorDistanceResult {
        distance: exact,
        best_shift: 0,
        mirrored: false,
    };
    for (is_mirrored, angles) in [(false, &raw), (true, &mirrored)] {
        for k in 0..raw.len() {
            if k == 0 && !is_mirrored {
                continue;
            }
            let d = shifted_distance(&p.theta_bar, angles, k);
            if d < best.distance {
                best = DescriptorDistanceResult {
                    distance: d,
                    best_shift: k,
                    mirrored: is_mirrored,
                };
            }
        }
    }
    Ok(best)
}

/// Minimum-cost perfect assignment of a square cost matrix (Hungarian method
/// with row/column potentials). Returns `col[row]`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if let Some(row) = cost.iter().find(|r| r.len() != n) {
        return Err(Error::LengthMismatch(n, row.len()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("non-finite cost".into()));
    }
    // 1-based arrays; column 0 is a virtual column used to seed each row.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let i0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = col0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub front: usize,
    pub back: usize,
    #[serde(flatten)]
    pub result: DescriptorDistanceResult,
    pub ambiguous: bool,
}

/// Optimal matching between a front batch and a back batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchAssignment {
    /// One entry per matched front scan, in front order.
    pub pairs: Vec<MatchedPair>,
    pub total_cost: f64,
    /// Full distance matrix, front rows by back columns.
    pub distances: Vec<Vec<f64>>,
}

impl BatchAssignment {
    pub fn ambiguity_flags(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.ambiguous).collect()
    }

    /// `back index` for every front index.
    pub fn permutation(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.back).collect()
    }
}

/// Full distance matrix, optimal assignment, and per-row ambiguity flags.
pub fn match_batches(front: &[ShapeDescriptor], back: &[ShapeDescriptor]) -> Result<BatchAssignment> {
    if front.len() != back.len() {
        return Err(Error::SizeMismatch {
            front: front.len(),
            back: back.len(),
        });
    }
    match_unbalanced(front, back)
}

/// [`match_batches`] for batches of different sizes: every scan of the
/// smaller side is paired, the surplus of the larger side stays unmatched.
pub fn match_unbalanced(front: &[ShapeDescriptor], back: &[ShapeDescriptor]) -> Result<BatchAssignment> {
    if front.is_empty() || back.is_empty() {
        return Err(Error::SizeMismatch {
            front: front.len(),
            back: back.len(),
        });
    }
    let results: Vec<Vec<DescriptorDistanceResult>> = front
        .par_iter()
        .map(|f| back.iter().map(|b| descriptor_distance(f, b)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let distances: Vec<Vec<f64>> = results
        .iter()
        .map(|row| row.iter().map(|r| r.distance).collect())
        .collect();

    // Pad to a square matrix with zero-cost dummy rows or columns.
    let n = front.len().max(back.len());
    let square: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| distances.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0)).collect())
        .collect();
    let assignment = min_cost_assignment(&square)?;

    let pairs: Vec<MatchedPair> = (0..front.len())
        .filter(|&i| assignment[i] < back.len())
        .map(|i| {
            let j = assignment[i];
            let chosen = distances[i][j];
            let runner_up = distances[i]
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != j)
                .map(|(_, &d)| d)
                .fold(f64::INFINITY, f64::min);
            MatchedPair {
                front: i,
                back: j,
                result: results[i][j],
                ambiguous: runner_up <= chosen * (1.0 + AMBIGUITY_MARGIN),
            }
        })
        .collect();
    let total_cost = pairs.iter().map(|p| distances[p.front][p.back]).sum();
    Ok(BatchAssignment {
        pairs,
        total_cost,
        distances,
    })
}

/// Pre-image of each 2D contour vertex: the scan point nearest to its lift
/// onto the fitting plane.
pub fn lift_contour(contour: &Contour, plane: &Plane, cloud: &PointCloud, index: &NeighborIndex) -> Result<Vec<Point3>> {
    contour
        .vertices()
        .iter()
        .map(|v| {
            index
                .nearest(&plane.lift(v))
                .map(|n| cloud.points()[n.index])
                .ok_or(Error::EmptyCloud)
        })
        .collect()
}

/// Rigid transform taking the back contour onto the front contour under the
/// correspondence `v_i ↔ u_{(k+i) mod n}`; when `mirrored` the back list is
/// first read in reverse from `u_0`.
pub fn initial_alignment(
    front_contour: &[Point3],
    back_contour: &[Point3],
    shift: usize,
    mirrored: bool,
) -> Result<RigidTransform> {
    let n = front_contour.len();
    if back_contour.len() != n {
        return Err(Error::LengthMismatch(n, back_contour.len()));
    }
    if n == 0 || shift >= n {
        return Err(Error::InvalidInput(format!("shift {shift} out of range for {n} vertices")));
    }
    let pairs: Vec<(Point3, Point3)> = (0..n)
        .map(|i| {
            let j = (shift + i) % n;
            let j = if mirrored { (n - j) % n } else { j };
            (back_contour[j], front_contour[i])
        })
        .collect();
    rigid_fit_svd(&pairs)
}

/// Which contour correspondences are tried when seeding registration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftSearch {
    /// Use the descriptor's argmin as is.
    Descriptor,
    /// Every shift under both orientations; the descriptor's choice wins ties.
    #[default]
    Exhaustive,
}

/// Initial pose together with the correspondence it came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourAlignment {
    pub transform: RigidTransform,
    pub shift: usize,
    pub mirrored: bool,
    /// RMS distance between corresponded contour points after the fit, mm.
    pub rms: f64,
}

fn alignment_rms(front: &[Point3], back: &[Point3], shift: usize, mirrored: bool, t: &RigidTransform) -> f64 {
    let n = front.len();
    let sum: f64 = (0..n)
        .map(|i| {
            let j = (shift + i) % n;
            let j = if mirrored { (n - j) % n } else { j };
            (t.apply(&back[j]) - front[i]).norm_squared()
        })
        .sum();
    (sum / n as f64).sqrt()
}

/// Initial alignment, optionally re-choosing the correspondence by the 3D
/// residual of the rigid fit instead of the descriptor distance alone.
///
/// Planar outlines of the two sides differ slightly (different fitting
/// planes, different rim heights), which can move the descriptor's best shift
/// a few samples off or prefer the wrong orientation for nearly symmetric
/// outlines. The 3D residual does not suffer from either.
pub fn align_contours(
    front_contour: &[Point3],
    back_contour: &[Point3],
    seed: &DescriptorDistanceResult,
    search: ShiftSearch,
) -> Result<ContourAlignment> {
    let fit = |shift: usize, mirrored: bool| -> Result<ContourAlignment> {
        let transform = initial_alignment(front_contour, back_contour, shift, mirrored)?;
        Ok(ContourAlignment {
            transform,
            shift,
            mirrored,
            rms: alignment_rms(front_contour, back_contour, shift, mirrored, &transform),
        })
    };
    let mut best = fit(seed.best_shift, seed.mirrored)?;
    if search == ShiftSearch::Exhaustive {
        let candidates: Vec<(usize, bool)> = [false, true]
            .into_iter()
            .flat_map(|m| (0..front_contour.len()).map(move |k| (k, m)))
            .collect();
        let fits: Vec<ContourAlignment> = candidates
            .par_iter()
            .map(|&(k, m)| fit(k, m))
            .collect::<Result<_>>()?;
        for candidate in fits {
            if candidate.rms < best.rms {
                best = candidate;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::{descriptor, descriptor_with_start, resample_uniform, Polygon2};
    use crate::geom::Point2;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn star(rng: &mut ChaCha8Rng, k: usize) -> Polygon2 {
        Polygon2::new(
            (0..k)
                .map(|i| {
                    let a = 2.0 * std::f64::consts::PI * (i as f64 + rng.random_range(-0.3..0.3)) / k as f64;
                    let r = rng.random_range(4.0..10.0);
                    Point2::new(r * a.cos(), r * a.sin())
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_descriptor(seed: u64, n: usize) -> ShapeDescriptor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(5..12);
        descriptor(&resample_uniform(&star(&mut rng, k), n).unwrap())
    }

    #[test]
    fn identical_is_zero() {
        let d = random_descriptor(1, 64);
        let r = descriptor_distance(&d, &d).unwrap();
        assert_eq!(r, DescriptorDistanceResult { distance: 0.0, best_shift: 0, mirrored: false });
    }

    #[test]
    fn rotated_start_recovers_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = resample_uniform(&star(&mut rng, 9), 80).unwrap();
        let p = descriptor(&c);
        let q = descriptor_with_start(&c, 80 - 5);
        let r = descriptor_distance(&p, &q).unwrap();
        assert_eq!((r.best_shift, r.mirrored), (5, false));
        assert!(r.distance < 1e-9);
    }

    #[test]
    fn reflected_contour_matches_mirrored() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let poly = star(&mut rng, 8);
        let c = resample_uniform(&poly, 64).unwrap();
        let flipped = Polygon2::new(poly.vertices().iter().map(|p| Point2::new(-p.x, p.y)).collect()).unwrap();
        let m = resample_uniform(&flipped, 64).unwrap();
        let r = descriptor_distance(&descriptor(&c), &descriptor(&m)).unwrap();
        assert!(r.mirrored);
        assert!(r.distance < 1e-9, "{}", r.distance);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            descriptor_distance(&random_descriptor(1, 16), &random_descriptor(1, 32)),
            Err(Error::LengthMismatch(16, 32))
        ));
    }

    /// Brute force from geometry: reflect, reverse, rotate, recompute.
    fn enumerate(p: &ShapeDescriptor, q: &Contour) -> DescriptorDistanceResult {
        let n = q.len();
        let reflected: Vec<Point2> = (0..n)
            .map(|i| q.vertices()[(n - i) % n])
            .map(|v| Point2::new(-v.x, v.y))
            .collect();
        let reflected = Contour::new(reflected, q.perimeter()).unwrap();
        let mut best = DescriptorDistanceResult { distance: f64::INFINITY, best_shift: 0, mirrored: false };
        for (mirrored, c) in [(false, q), (true, &reflected)] {
            for k in 0..n {
                let d = descriptor(&c.rotated(k));
                let dist = p.theta_bar.iter().zip(&d.theta_bar).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if dist < best.distance - 1e-12 {
                    best = DescriptorDistanceResult { distance: dist, best_shift: k, mirrored };
                }
            }
        }
        best
    }

    #[test]
    fn agrees_with_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..25 {
            let k = rng.random_range(5..10);
            let a = resample_uniform(&star(&mut rng, k), 32).unwrap();
            let b = resample_uniform(&star(&mut rng, k), 32).unwrap();
            let got = descriptor_distance(&descriptor(&a), &descriptor(&b)).unwrap();
            let want = enumerate(&descriptor(&a), &b);
            assert!((got.distance - want.distance).abs() < 1e-9);
            assert_eq!((got.best_shift, got.mirrored), (want.best_shift, want.mirrored));
        }
    }

    fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
        fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..cost.len() {
                if !used[j] {
                    used[j] = true;
                    go(cost, row + 1, used, acc + cost[row][j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        go(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
        best
    }

    proptest! {
        #[test]
        fn hungarian_is_optimal(n in 1usize..7, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
            let a = min_cost_assignment(&cost).unwrap();
            let mut seen = a.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            prop_assert!((total - brute_force_assignment(&cost)).abs() < 1e-9);
        }

        #[test]
        fn self_distance_is_zero(seed in any::<u64>()) {
            let d = random_descriptor(seed, 24);
            prop_assert_eq!(descriptor_distance(&d, &d).unwrap().distance, 0.0);
        }

        #[test]
        fn alignment_is_least_squares(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let front: Vec<Point3> = (0..20)
                .map(|_| Point3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-1.0..1.0)))
                .collect();
            let back: Vec<Point3> = front
                .iter()
                .map(|p| Point3::new(p.y + rng.random_range(-0.3..0.3), -p.x, p.z + 2.0))
                .collect();
            let t = initial_alignment(&front, &back, 0, false).unwrap();
            let rms = |t: &RigidTransform| front.iter().zip(&back).map(|(f, b)| (t.apply(b) - f).norm_squared()).sum::<f64>();
            let base = rms(&t);
            for _ in 0..100 {
                let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                let d = RigidTransform::from_axis_angle(axis, rng.random_range(-1e-3..1e-3),
                    Vector3::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3)));
                prop_assert!(rms(&d.compose(&t)) >= base - 1e-9);
            }
        }
    }

    #[test]
    fn permutation_is_recovered() {
        let descriptors: Vec<ShapeDescriptor> = (0..6).map(|s| random_descriptor(100 + s, 48)).collect();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut back = vec![descriptors[0].clone(); 6];
        for (i, &j) in perm.iter().enumerate() {
            back[j] = descriptors[i].clone();
        }
        let a = match_batches(&descriptors, &back).unwrap();
        assert_eq!(a.permutation(), perm);
        assert!(a.pairs.iter().all(|p| p.result.distance == 0.0 && !p.ambiguous));
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn single_pair_and_size_mismatch() {
        let d = random_descriptor(9, 16);
        let a = match_batches(std::slice::from_ref(&d), std::slice::from_ref(&d)).unwrap();
        assert_eq!(a.permutation(), vec![0]);
        assert!(!a.pairs[0].ambiguous);
        assert!(matches!(match_batches(std::slice::from_ref(&d), &[]), Err(Error::SizeMismatch { .. })));
        assert!(matches!(match_batches(&[], &[]), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn unbalanced_batches_pair_the_smaller_side() {
        let front: Vec<ShapeDescriptor> = (0..3).map(|s| random_descriptor(200 + s, 32)).collect();
        let back: Vec<ShapeDescriptor> = (0..5).map(|s| random_descriptor(300 + s, 32)).collect();
        let a = match_unbalanced(&front, &back).unwrap();
        assert_eq!(a.pairs.len(), 3);
        let mut best = f64::INFINITY;
        for i in 0..5 {
            for j in 0..5 {
                for k in 0..5 {
                    if i != j && j != k && i != k {
                        best = best.min(a.distances[0][i] + a.distances[1][j] + a.distances[2][k]);
                    }
                }
            }
        }
        assert!((a.total_cost - best).abs() < 1e-9);
        let flipped = match_unbalanced(&back, &front).unwrap();
        assert_eq!(flipped.pairs.len(), 3);
        assert!(matches!(match_batches(&front, &back), Err(Error::SizeMismatch { front: 3, back: 5 })));
    }

    #[test]
    fn duplicate_rows_are_flagged() {
        let a = random_descriptor(11, 32);
        let b = random_descriptor(12, 32);
        let r = match_batches(&[a.clone(), b.clone()], &[a.clone(), a]).unwrap();
        assert!(r.pairs[0].ambiguous);
    }

    #[test]
    fn alignment_identity_and_known_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let front: Vec<Point3> = (0..40)
            .map(|i| {
                let a = i as f64 * 0.157;
                Point3::new(10.0 * a.cos(), 7.0 * a.sin(), rng.random_range(-0.5..0.5))
            })
            .collect();
        let t = initial_alignment(&front, &front, 0, false).unwrap();
        assert!(t.rotation_angle_to(&RigidTransform::identity()) < 1e-9);
        assert!(t.translation_distance_to(&RigidTransform::identity()) < 1e-9);

        let star_t = RigidTransform::from_axis_angle(Vector3::new(0.2, 1.0, -0.4), 1.3, Vector3::new(4.0, -2.0, 9.0));
        let moved: Vec<Point3> = front.iter().map(|p| star_t.apply(p)).collect();
        let got = initial_alignment(&front, &moved, 0, false).unwrap();
        let want = star_t.inverse();
        assert!(got.rotation_angle_to(&want) < 1e-6);
        assert!(got.translation_distance_to(&want) < 1e-6);

        // Shift and mirror bookkeeping: rotate, then reverse, the back list.
        let n = moved.len();
        let shifted: Vec<Point3> = (0..n).map(|i| moved[(i + n - 7) % n]).collect();
        let got = initial_alignment(&front, &shifted, 7, false).unwrap();
        assert!(got.rotation_angle_to(&want) < 1e-6);
        let reversed: Vec<Point3> = (0..n).map(|i| shifted[(n - i) % n]).collect();
        let got = initial_alignment(&front, &reversed, 7, true).unwrap();
        assert!(got.rotation_angle_to(&want) < 1e-6);
    }

    #[test]
    fn exhaustive_search_fixes_a_bad_seed() {
        let front: Vec<Point3> = (0..60)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 60.0;
                let r = 10.0 + 2.0 * (3.0 * a).sin() + (5.0 * a).cos();
                Point3::new(r * a.cos(), r * a.sin(), 0.1 * (2.0 * a).sin())
            })
            .collect();
        let star_t = RigidTransform::from_axis_angle(Vector3::new(1.0, 0.3, 0.0), 2.0, Vector3::new(3.0, 1.0, -2.0));
        let n = front.len();
        let back: Vec<Point3> = (0..n).map(|i| star_t.apply(&front[(i + n - 11) % n])).collect();
        let seed = DescriptorDistanceResult { distance: 0.5, best_shift: 14, mirrored: true };
        let kept = align_contours(&front, &back, &seed, ShiftSearch::Descriptor).unwrap();
        assert_eq!((kept.shift, kept.mirrored), (14, true));
        let found = align_contours(&front, &back, &seed, ShiftSearch::Exhaustive).unwrap();
        assert_eq!((found.shift, found.mirrored), (11, false));
        assert!(found.rms < 1e-9);
        assert!(found.transform.rotation_angle_to(&star_t.inverse()) < 1e-9);
    }

    #[test]
    fn collinear_contour_is_degenerate() {
        let line: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(initial_alignment(&line, &line, 0, false), Err(Error::DegenerateCorrespondence(_))));
    }
}
