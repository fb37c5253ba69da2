//! Synthetic sherds with known pairing, poses and boundary labels.
//!
//! A fragment is a star-shaped outline laid on a sphere (or a plane), given a
//! thickness. The front scan sees the outer surface plus the fracture strip
//! around the edge; the back scan sees the inner surface plus the same strip,
//! sampled independently. The edge carries a low-amplitude sinusoidal relief,
//! a stand-in for the irregular fracture line.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::{descriptor, resample_uniform, Polygon2, ShapeDescriptor, DEFAULT_NC};
use crate::error::{Error, Result};
use crate::geom::{Point2, Point3, PointCloud, RigidTransform};
use crate::matching::descriptor_distance;

pub const MAX_BATCH: usize = 20;
pub const MAX_ATTEMPTS: usize = 100;
/// Upper bound on the strip share of any scan.
pub const MAX_OVERLAP: f64 = 0.2;

const ARC_TABLE: usize = 4096;

/// Star-shaped closed curve: control radii at equally spaced angles, joined by
/// periodic Catmull-Rom interpolation in the angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outline {
    radii: Vec<f64>,
}

impl Outline {
    pub fn new(radii: Vec<f64>) -> Result<Self> {
        if radii.len() < 3 {
            return Err(Error::InvalidSpec(format!("{} control radii, need 3", radii.len())));
        }
        if !radii.iter().all(|r| r.is_finite() && *r > 0.0) {
            return Err(Error::InvalidSpec("control radii must be positive".into()));
        }
        Ok(Outline { radii })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn radius_at(&self, phi: f64) -> f64 {
        let m = self.radii.len();
        let x = phi.rem_euclid(TAU) / TAU * m as f64;
        let i = x.floor() as usize % m;
        let t = x - x.floor();
        let r = |k: isize| self.radii[(i as isize + k).rem_euclid(m as isize) as usize];
        let (p0, p1, p2, p3) = (r(-1), r(0), r(1), r(2));
        let value = 0.5
            * (2.0 * p1
                + (p2 - p0) * t
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
                + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t * t * t);
        let floor = 0.2 * self.radii.iter().copied().fold(f64::INFINITY, f64::min);
        value.max(floor)
    }

    pub fn point(&self, phi: f64) -> Point2 {
        let r = self.radius_at(phi);
        Point2::new(r * phi.cos(), r * phi.sin())
    }

    pub fn contains(&self, p: &Point2, margin: f64) -> bool {
        let rho = p.coords.norm();
        rho < self.radius_at(p.y.atan2(p.x)) - margin
    }

    pub fn max_radius(&self) -> f64 {
        // Catmull-Rom can overshoot the control values a little.
        1.25 * self.radii.iter().copied().fold(0.0, f64::max)
    }

    /// Dense counter-clockwise polygon approximation.
    pub fn polygon(&self, samples: usize) -> Result<Polygon2> {
        Polygon2::new(
            (0..samples)
                .map(|i| self.point(TAU * i as f64 / samples as f64))
                .collect(),
        )
    }

    pub fn descriptor(&self, n_c: usize) -> Result<ShapeDescriptor> {
        Ok(descriptor(&resample_uniform(&self.polygon(1024)?, n_c)?))
    }
}

/// Arc-length parametrization of an [`Outline`].
struct ArcTable {
    phi: Vec<f64>,
    arc: Vec<f64>,
}

impl ArcTable {
    fn new(outline: &Outline) -> Self {
        let phi: Vec<f64> = (0..=ARC_TABLE).map(|i| TAU * i as f64 / ARC_TABLE as f64).collect();
        let mut arc = Vec::with_capacity(phi.len());
        let mut acc = 0.0;
        let mut prev = outline.point(0.0);
        for &f in &phi {
            let p = outline.point(f);
            acc += (p - prev).norm();
            arc.push(acc);
            prev = p;
        }
        ArcTable { phi, arc }
    }

    fn perimeter(&self) -> f64 {
        *self.arc.last().expect("non-empty table")
    }

    fn phi_at(&self, s: f64) -> f64 {
        let s = s.rem_euclid(self.perimeter());
        let i = self.arc.partition_point(|&a| a < s).clamp(1, self.arc.len() - 1);
        let (a0, a1) = (self.arc[i - 1], self.arc[i]);
        let t = if a1 > a0 { (s - a0) / (a1 - a0) } else { 0.0 };
        self.phi[i - 1] + t * (self.phi[i] - self.phi[i - 1])
    }
}

/// Outward unit normal of the outline at angle `phi` (the curve runs counter-clockwise).
fn outward_normal(outline: &Outline, phi: f64) -> nalgebra::Vector2<f64> {
    let h = 1e-5;
    let d = outline.point(phi + h) - outline.point(phi - h);
    nalgebra::Vector2::new(d.y, -d.x).normalize()
}

/// Full description of one synthetic fragment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragmentSpec {
    pub outline: Outline,
    /// Radius of the parent vessel wall, mm; `None` for a flat plate.
    pub shell_radius: Option<f64>,
    pub thickness: f64,
    pub sample_spacing: f64,
    pub noise_sigma: f64,
    /// Peak normal displacement of the fracture relief, mm.
    pub strip_amplitude: f64,
    /// Nominal wavelength of the fracture relief along the edge, mm.
    pub strip_wavelength: f64,
    pub seed: u64,
}

impl FragmentSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{what} must be positive, got {v}")))
            }
        };
        positive(self.thickness, "thickness")?;
        positive(self.sample_spacing, "sample_spacing")?;
        positive(self.strip_wavelength, "strip_wavelength")?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("noise_sigma {}", self.noise_sigma)));
        }
        if !(self.strip_amplitude >= 0.0 && self.strip_amplitude.is_finite()) {
            return Err(Error::InvalidSpec(format!("strip_amplitude {}", self.strip_amplitude)));
        }
        if let Some(r) = self.shell_radius {
            positive(r, "shell_radius")?;
            if self.thickness >= r {
                return Err(Error::InvalidSpec(format!(
                    "thickness {} must be below shell radius {r}",
                    self.thickness
                )));
            }
        }
        Outline::new(self.outline.radii.clone()).map(|_| ())
    }

    /// Point at tangent-plane position `uv` and depth `depth` below the outer surface.
    fn surface_point(&self, uv: Point2, depth: f64) -> Point3 {
        match self.shell_radius {
            None => Point3::new(uv.x, uv.y, -depth),
            Some(r) => {
                let d = Vector3::new(uv.x, uv.y, r).normalize();
                Point3::from(d * (r - depth) - Vector3::new(0.0, 0.0, r))
            }
        }
    }
}

/// Which face of the fragment a scan sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Front,
    Back,
}

/// One scan in the canonical frame, with strip bookkeeping.
struct RawScan {
    points: Vec<Point3>,
    strip: Vec<usize>,
    rim: Vec<usize>,
}

fn sample_surface(spec: &FragmentSpec, outline: &Outline, depth: f64, rng: &mut ChaCha8Rng, out: &mut Vec<Point3>) {
    let s = spec.sample_spacing;
    let extent = outline.max_radius();
    let (ox, oy) = (rng.random::<f64>() * s, rng.random::<f64>() * s);
    let steps = (2.0 * extent / s).ceil() as i64 + 1;
    for i in 0..steps {
        for j in 0..steps {
            let uv = Point2::new(
                -extent + ox + i as f64 * s + rng.random_range(-0.4..0.4) * s,
                -extent + oy + j as f64 * s + rng.random_range(-0.4..0.4) * s,
            );
            if outline.contains(&uv, 0.35 * s) {
                out.push(spec.surface_point(uv, depth));
            }
        }
    }
}

/// Strip rows run from the outer rim (`w = 0`) to the inner rim (`w = thickness`).
fn strip_rows(spec: &FragmentSpec) -> usize {
    (spec.thickness / spec.sample_spacing).ceil().max(1.0) as usize
}

fn strip_point(spec: &FragmentSpec, outline: &Outline, table: &ArcTable, arc: f64, w: f64) -> Point3 {
    let perimeter = table.perimeter();
    let waves = (perimeter / spec.strip_wavelength).round().max(1.0);
    let relief = spec.strip_amplitude * (TAU * waves * arc / perimeter).sin();
    let phi = table.phi_at(arc);
    let base = outline.point(phi) + outward_normal(outline, phi) * relief;
    spec.surface_point(base, w)
}

fn sample_strip(
    spec: &FragmentSpec,
    outline: &Outline,
    table: &ArcTable,
    rng: &mut ChaCha8Rng,
    rim_row: usize,
    out: &mut Vec<Point3>,
) -> (Vec<usize>, Vec<usize>) {
    let perimeter = table.perimeter();
    let n_arc = (perimeter / spec.sample_spacing).ceil() as usize;
    let step = perimeter / n_arc as f64;
    let n_w = strip_rows(spec);
    let phase = rng.random::<f64>();
    let mut strip = Vec::new();
    let mut rim = Vec::new();
    let row_height = spec.thickness / n_w as f64;
    for i in 0..n_arc {
        for row in 0..=n_w {
            let arc = (i as f64 + phase + rng.random_range(-0.45..0.45)) * step;
            let w = if row == 0 || row == n_w {
                row as f64 * row_height
            } else {
                (row as f64 + rng.random_range(-0.3..0.3)) * row_height
            };
            if row == rim_row {
                rim.push(out.len());
            }
            strip.push(out.len());
            out.push(strip_point(spec, outline, table, arc, w));
        }
    }
    (strip, rim)
}

fn sample_scan(spec: &FragmentSpec, side: Side, rng: &mut ChaCha8Rng) -> RawScan {
    let outline = &spec.outline;
    let table = ArcTable::new(outline);
    let mut points = Vec::new();
    let (depth, rim_row) = match side {
        Side::Front => (0.0, strip_rows(spec)),
        Side::Back => (spec.thickness, 0),
    };
    sample_surface(spec, outline, depth, rng, &mut points);
    let (strip, rim) = sample_strip(spec, outline, &table, rng, rim_row, &mut points);

    // Scanners emit points in no meaningful order.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(rng);
    let mut position = vec![0usize; order.len()];
    for (new, &old) in order.iter().enumerate() {
        position[old] = new;
    }
    let relabel = |ids: Vec<usize>| {
        let mut ids: Vec<usize> = ids.into_iter().map(|i| position[i]).collect();
        ids.sort_unstable();
        ids
    };
    RawScan {
        points: order.iter().map(|&i| points[i]).collect(),
        strip: relabel(strip),
        rim: relabel(rim),
    }
}

fn add_noise(points: &mut [Point3], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    for p in points {
        p.x += normal.sample(rng);
        p.y += normal.sample(rng);
        p.z += normal.sample(rng);
    }
}

/// Rotation about z plus an in-plane translation.
fn planar_pose(rng: &mut ChaCha8Rng, max_shift: f64) -> RigidTransform {
    RigidTransform::from_axis_angle(
        Vector3::z(),
        rng.random_range(0.0..TAU),
        Vector3::new(
            rng.random_range(-max_shift..max_shift),
            rng.random_range(-max_shift..max_shift),
            0.0,
        ),
    )
}

/// Half turn about a random horizontal axis: the fragment lying upside down.
fn flip(rng: &mut ChaCha8Rng) -> RigidTransform {
    let beta = rng.random_range(0.0..PI);
    RigidTransform::from_axis_angle(Vector3::new(beta.cos(), beta.sin(), 0.0), PI, Vector3::zeros())
}

/// Known facts about one generated fragment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragmentTruth {
    /// Canonical frame to front-scan frame.
    pub front_pose: RigidTransform,
    /// Canonical frame to back-scan frame.
    pub back_pose: RigidTransform,
    /// Front points on the inner rim, where the scan ends.
    pub front_boundary: Vec<usize>,
    /// Back points on the outer rim.
    pub back_boundary: Vec<usize>,
    pub front_strip: Vec<usize>,
    pub back_strip: Vec<usize>,
    pub front_overlap: f64,
    pub back_overlap: f64,
}

impl FragmentTruth {
    /// Motion taking the back scan into the front scan's frame.
    pub fn registration(&self) -> RigidTransform {
        self.front_pose.compose(&self.back_pose.inverse())
    }

    pub fn overlap_fraction(&self) -> f64 {
        self.front_overlap.max(self.back_overlap)
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedFragment {
    pub front: PointCloud,
    pub back: PointCloud,
    pub truth: FragmentTruth,
}

fn sub_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Both scans of one fragment, posed and noised, with their labels.
pub fn generate_fragment(spec: &FragmentSpec) -> Result<GeneratedFragment> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut front = sample_scan(spec, Side::Front, &mut rng);
    let mut back = sample_scan(spec, Side::Back, &mut rng);
    add_noise(&mut front.points, spec.noise_sigma, &mut rng);
    add_noise(&mut back.points, spec.noise_sigma, &mut rng);

    let front_pose = planar_pose(&mut rng, 20.0);
    let back_pose = planar_pose(&mut rng, 20.0).compose(&flip(&mut rng));
    let front_overlap = front.strip.len() as f64 / front.points.len() as f64;
    let back_overlap = back.strip.len() as f64 / back.points.len() as f64;
    if front_overlap.max(back_overlap) > MAX_OVERLAP {
        return Err(Error::InvalidSpec(format!(
            "strip makes up {:.3} of a scan, above {MAX_OVERLAP}",
            front_overlap.max(back_overlap)
        )));
    }
    let posed = |pose: &RigidTransform, pts: Vec<Point3>| PointCloud::new(pts.iter().map(|p| pose.apply(p)).collect());
    Ok(GeneratedFragment {
        front: posed(&front_pose, front.points)?,
        back: posed(&back_pose, back.points)?,
        truth: FragmentTruth {
            front_pose,
            back_pose,
            front_boundary: front.rim,
            back_boundary: back.rim,
            front_strip: front.strip,
            back_strip: back.strip,
            front_overlap,
            back_overlap,
        },
    })
}

/// Ground-truth models are sampled this many times more finely than the scans.
pub const GROUND_TRUTH_DENSITY: f64 = 2.0;

/// Complete closed model (both surfaces and the strip), sampled independently
/// of the scans, noise free, [`GROUND_TRUTH_DENSITY`] times finer, and
/// expressed in the front-scan frame.
pub fn ground_truth_model(spec: &FragmentSpec, truth: &FragmentTruth) -> Result<PointCloud> {
    spec.validate()?;
    let spec = &FragmentSpec {
        sample_spacing: spec.sample_spacing / GROUND_TRUTH_DENSITY,
        noise_sigma: 0.0,
        ..spec.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 0x6774, 1));
    let table = ArcTable::new(&spec.outline);
    let mut points = Vec::new();
    sample_surface(spec, &spec.outline, 0.0, &mut rng, &mut points);
    sample_surface(spec, &spec.outline, spec.thickness, &mut rng, &mut points);
    sample_strip(spec, &spec.outline, &table, &mut rng, usize::MAX, &mut points);
    PointCloud::new(points.iter().map(|p| truth.front_pose.apply(p)).collect())
}

/// Analytic rim curve at depth `w` in the canonical frame, `samples` points.
pub fn rim_curve(spec: &FragmentSpec, w: f64, samples: usize) -> Vec<Point3> {
    let table = ArcTable::new(&spec.outline);
    let perimeter = table.perimeter();
    (0..samples)
        .map(|i| strip_point(spec, &spec.outline, &table, perimeter * i as f64 / samples as f64, w))
        .collect()
}

/// Ranges from which batch fragments are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecRanges {
    pub control_points: (usize, usize),
    /// Base outline radius, mm.
    pub control_radius: (f64, f64),
    /// Each control radius is `base · (1 − jitter · U(0, 1))`.
    pub radius_jitter: f64,
    pub shell_radius: (f64, f64),
    /// Probability of a flat plate instead of a curved shell.
    pub flat_fraction: f64,
    pub thickness: (f64, f64),
    pub sample_spacing: f64,
    pub noise_sigma: f64,
    pub strip_amplitude: f64,
    pub strip_wavelength: f64,
    /// Fragments whose strip share exceeds this are redrawn.
    pub max_overlap: f64,
    /// Minimum descriptor distance (radians) between any two outlines.
    pub distinctness_floor: f64,
    /// When set, every odd fragment copies its predecessor's outline with
    /// this relative perturbation of each control radius.
    pub near_duplicate: Option<f64>,
}

impl Default for SpecRanges {
    fn default() -> Self {
        SpecRanges {
            control_points: (7, 12),
            control_radius: (25.0, 60.0),
            radius_jitter: 0.35,
            shell_radius: (80.0, 300.0),
            flat_fraction: 0.2,
            thickness: (1.0, 4.0),
            sample_spacing: 1.0,
            noise_sigma: 0.05,
            strip_amplitude: 0.4,
            strip_wavelength: 8.0,
            max_overlap: MAX_OVERLAP,
            distinctness_floor: 1.0,
            near_duplicate: None,
        }
    }
}

impl SpecRanges {
    /// Thin, wide shells with a strip share well under 10%.
    pub fn acceptance() -> Self {
        SpecRanges {
            control_radius: (45.0, 65.0),
            radius_jitter: 0.3,
            thickness: (0.6, 1.6),
            sample_spacing: 0.8,
            max_overlap: 0.1,
            ..SpecRanges::default()
        }
    }

    /// Pairs of near-identical outlines to provoke ambiguous matches.
    pub fn adversarial() -> Self {
        SpecRanges {
            distinctness_floor: 0.0,
            near_duplicate: Some(0.01),
            ..SpecRanges::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64), what: &str| {
            if a.is_finite() && b.is_finite() && 0.0 < a && a <= b {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{what} range ({a}, {b})")))
            }
        };
        ordered(self.control_radius, "control_radius")?;
        ordered(self.shell_radius, "shell_radius")?;
        ordered(self.thickness, "thickness")?;
        if self.control_points.0 < 3 || self.control_points.0 > self.control_points.1 {
            return Err(Error::InvalidSpec(format!("control_points {:?}", self.control_points)));
        }
        if !(0.0..1.0).contains(&self.radius_jitter) || !(0.0..=1.0).contains(&self.flat_fraction) {
            return Err(Error::InvalidSpec("jitter and flat_fraction must lie in [0, 1)".into()));
        }
        if !(self.max_overlap > 0.0 && self.max_overlap <= MAX_OVERLAP) {
            return Err(Error::InvalidSpec(format!("max_overlap {}", self.max_overlap)));
        }
        if !(self.distinctness_floor >= 0.0) {
            return Err(Error::InvalidSpec("negative distinctness floor".into()));
        }
        Ok(())
    }

    pub fn sample(&self, seed: u64) -> FragmentSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(self.control_points.0..=self.control_points.1);
        let base = rng.random_range(self.control_radius.0..=self.control_radius.1);
        let radii = (0..m)
            .map(|_| base * (1.0 - self.radius_jitter * rng.random::<f64>()))
            .collect();
        let shell_radius = if rng.random::<f64>() < self.flat_fraction {
            None
        } else {
            Some(rng.random_range(self.shell_radius.0..=self.shell_radius.1))
        };
        FragmentSpec {
            outline: Outline { radii },
            shell_radius,
            thickness: rng.random_range(self.thickness.0..=self.thickness.1),
            sample_spacing: self.sample_spacing,
            noise_sigma: self.noise_sigma,
            strip_amplitude: self.strip_amplitude,
            strip_wavelength: self.strip_wavelength,
            seed: rng.random(),
        }
    }

    fn perturbed(&self, of: &FragmentSpec, rel: f64, seed: u64) -> FragmentSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = self.sample(seed);
        spec.outline = Outline {
            radii: of
                .outline
                .radii
                .iter()
                .map(|r| r * (1.0 + rel * rng.random_range(-1.0..1.0)))
                .collect(),
        };
        spec
    }
}

/// Ground truth for a whole batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    /// `pairing[i]` is the position of fragment `i`'s back scan in the back batch.
    pub pairing: Vec<usize>,
    pub fragments: Vec<FragmentTruth>,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub specs: Vec<FragmentSpec>,
    pub front: Vec<PointCloud>,
    /// Back scans, shuffled.
    pub back: Vec<PointCloud>,
    pub truth: GroundTruth,
}

/// `n` distinct fragments; front scans in fragment order, back scans shuffled.
pub fn generate_batch(n: usize, seed: u64, ranges: &SpecRanges) -> Result<Batch> {
    if n == 0 || n > MAX_BATCH {
        return Err(Error::InvalidInput(format!("batch size {n} outside 1..={MAX_BATCH}")));
    }
    ranges.validate()?;
    let mut specs: Vec<FragmentSpec> = Vec::with_capacity(n);
    let mut descriptors: Vec<ShapeDescriptor> = Vec::with_capacity(n);
    let mut fragments = Vec::with_capacity(n);
    for i in 0..n {
        let mut accepted = None;
        for attempt in 0..MAX_ATTEMPTS {
            let s = sub_seed(seed, i as u64, attempt as u64);
            let spec = match (ranges.near_duplicate, i % 2) {
                (Some(rel), 1) => ranges.perturbed(&specs[i - 1], rel, s),
                _ => ranges.sample(s),
            };
            let fragment = match generate_fragment(&spec) {
                Ok(f) if f.truth.overlap_fraction() <= ranges.max_overlap => f,
                Ok(_) | Err(Error::InvalidSpec(_)) => continue,
                Err(e) => return Err(e),
            };
            let d = spec.outline.descriptor(DEFAULT_NC)?;
            let mut distinct = true;
            for other in &descriptors {
                if descriptor_distance(other, &d)?.distance <= ranges.distinctness_floor {
                    distinct = false;
                    break;
                }
            }
            if distinct {
                accepted = Some((spec, d, fragment));
                break;
            }
        }
        let (spec, d, fragment) = accepted.ok_or(Error::DistinctnessFailure {
            wanted: n,
            attempts: MAX_ATTEMPTS,
        })?;
        specs.push(spec);
        descriptors.push(d);
        fragments.push(fragment);
    }

    let mut pairing: Vec<usize> = (0..n).collect();
    pairing.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(seed, u64::MAX, 0)));
    let mut back = vec![None; n];
    let mut front = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    for (i, f) in fragments.into_iter().enumerate() {
        front.push(f.front);
        back[pairing[i]] = Some(f.back);
        truths.push(f.truth);
    }
    Ok(Batch {
        specs,
        front,
        back: back.into_iter().map(|b| b.expect("pairing is a permutation")).collect(),
        truth: GroundTruth {
            seed,
            pairing,
            fragments: truths,
        },
    })
}

/// Sampled upper hemisphere (`z ≥ 0`) whose open rim is the equator ring.
#[derive(Clone, Debug)]
pub struct Hemisphere {
    pub cloud: PointCloud,
    /// Indices of the equator ring.
    pub rim: Vec<usize>,
    pub spacing: f64,
    pub radius: f64,
}

/// About `target_points` points on latitude rings spaced evenly in arc length,
/// with the outermost ring exactly on `z = 0`.
pub fn hemisphere(target_points: usize, radius: f64, noise_sigma: f64, seed: u64) -> Hemisphere {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = (TAU * radius * radius / target_points.max(1) as f64).sqrt();
    let rings = ((PI / 2.0) * radius / spacing).round() as usize;
    let dphi = (PI / 2.0) / rings as f64;
    let mut points = Vec::with_capacity(target_points + rings);
    let mut rim = Vec::new();
    for j in 0..rings {
        let polar = PI / 2.0 - j as f64 * dphi;
        let count = ((TAU * radius * polar.sin()) / spacing).round().max(3.0) as usize;
        let phase = rng.random::<f64>() * TAU;
        for i in 0..count {
            let az = phase + TAU * (i as f64 + rng.random_range(-0.1..0.1)) / count as f64;
            if j == 0 {
                rim.push(points.len());
            }
            points.push(Point3::new(
                radius * polar.sin() * az.cos(),
                radius * polar.sin() * az.sin(),
                radius * polar.cos(),
            ));
        }
    }
    points.push(Point3::new(0.0, 0.0, radius));
    add_noise(&mut points, noise_sigma, &mut rng);
    Hemisphere {
        cloud: PointCloud::new(points).expect("finite samples"),
        rim,
        spacing,
        radius,
    }
}

/// Batch fragments can be generated in parallel once their specs are fixed.
pub fn generate_fragments(specs: &[FragmentSpec]) -> Result<Vec<GeneratedFragment>> {
    specs.par_iter().map(generate_fragment).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::NeighborIndex;
    use crate::matching::match_batches;

    fn flat_spec(noise: f64) -> FragmentSpec {
        FragmentSpec {
            outline: Outline::new(vec![30.0, 26.0, 33.0, 28.0, 24.0, 31.0, 29.0]).unwrap(),
            shell_radius: None,
            thickness: 1.5,
            sample_spacing: 1.0,
            noise_sigma: noise,
            strip_amplitude: 0.2,
            strip_wavelength: 6.0,
            seed: 7,
        }
    }

    fn hausdorff(a: &[Point3], b: &[Point3]) -> f64 {
        let ia = NeighborIndex::from_points(a);
        let ib = NeighborIndex::from_points(b);
        let one = |src: &[Point3], idx: &NeighborIndex| {
            src.iter().map(|p| idx.nearest(p).unwrap().distance).fold(0.0, f64::max)
        };
        one(a, &ib).max(one(b, &ia))
    }

    fn registered_strips(f: &GeneratedFragment) -> (Vec<Point3>, Vec<Point3>) {
        let t = f.truth.registration();
        let front: Vec<Point3> = f.truth.front_strip.iter().map(|&i| f.front.points()[i]).collect();
        let back: Vec<Point3> = f.truth.back_strip.iter().map(|&i| t.apply(&f.back.points()[i])).collect();
        (front, back)
    }

    #[test]
    fn flat_noise_free_strips_line_up() {
        let spec = flat_spec(0.0);
        let f = generate_fragment(&spec).unwrap();
        let (front, back) = registered_strips(&f);
        let index = NeighborIndex::from_points(&front);
        let rms = (back.iter().map(|p| index.nearest(p).unwrap().distance.powi(2)).sum::<f64>() / back.len() as f64).sqrt();
        assert!(rms < spec.sample_spacing / 2.0, "rms {rms}");
        // Back surface sits one thickness under the front surface once registered.
        let t = f.truth.registration();
        let canon_back = f.truth.front_pose.inverse().compose(&t);
        let strip: std::collections::HashSet<_> = f.truth.back_strip.iter().collect();
        for (i, p) in f.back.points().iter().enumerate().filter(|(i, _)| !strip.contains(i)) {
            assert!((canon_back.apply(p).z + spec.thickness).abs() < 1e-9, "point {i}");
        }
    }

    #[test]
    fn strip_hausdorff_bound() {
        for (shell, seed) in [(None, 1u64), (Some(120.0), 2), (Some(60.0), 3)] {
            let spec = FragmentSpec { shell_radius: shell, seed, ..flat_spec(0.05) };
            let f = generate_fragment(&spec).unwrap();
            let (front, back) = registered_strips(&f);
            let h = hausdorff(&front, &back);
            assert!(h < 2.0 * spec.sample_spacing + 6.0 * spec.noise_sigma, "{h}");
        }
    }

    #[test]
    fn labels_lie_on_the_rims() {
        let spec = FragmentSpec { shell_radius: Some(100.0), ..flat_spec(0.05) };
        let f = generate_fragment(&spec).unwrap();
        let inner = NeighborIndex::from_points(&rim_curve(&spec, spec.thickness, 20_000));
        let outer = NeighborIndex::from_points(&rim_curve(&spec, 0.0, 20_000));
        let front_inv = f.truth.front_pose.inverse();
        let back_inv = f.truth.back_pose.inverse();
        for &i in &f.truth.front_boundary {
            let d = inner.nearest(&front_inv.apply(&f.front.points()[i])).unwrap().distance;
            assert!(d < 1.5 * spec.sample_spacing);
        }
        for &i in &f.truth.back_boundary {
            let d = outer.nearest(&back_inv.apply(&f.back.points()[i])).unwrap().distance;
            assert!(d < 1.5 * spec.sample_spacing);
        }
    }

    #[test]
    fn overlap_fraction_recount() {
        let f = generate_fragment(&flat_spec(0.05)).unwrap();
        let strip: std::collections::BTreeSet<usize> = f.truth.front_strip.iter().copied().collect();
        assert_eq!(strip.len(), f.truth.front_strip.len());
        let recount = strip.len() as f64 / f.front.len() as f64;
        assert_eq!(recount, f.truth.front_overlap);
        assert!(f.truth.overlap_fraction() > 0.0 && f.truth.overlap_fraction() <= MAX_OVERLAP);
        assert!(f.truth.front_boundary.iter().all(|i| strip.contains(i)));
    }

    #[test]
    fn invalid_specs() {
        let thick = FragmentSpec { shell_radius: Some(1.0), thickness: 2.0, ..flat_spec(0.0) };
        assert!(matches!(generate_fragment(&thick), Err(Error::InvalidSpec(_))));
        let zero = FragmentSpec { sample_spacing: 0.0, ..flat_spec(0.0) };
        assert!(matches!(generate_fragment(&zero), Err(Error::InvalidSpec(_))));
        // A tiny outline is almost all strip.
        let small = FragmentSpec { outline: Outline::new(vec![2.0; 5]).unwrap(), ..flat_spec(0.0) };
        assert!(matches!(generate_fragment(&small), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn deterministic() {
        let a = generate_batch(3, 42, &SpecRanges::default()).unwrap();
        let b = generate_batch(3, 42, &SpecRanges::default()).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.specs, b.specs);
        for (x, y) in a.front.iter().chain(&a.back).zip(b.front.iter().chain(&b.back)) {
            assert_eq!(x.points(), y.points());
        }
    }

    #[test]
    fn batch_bounds_and_trivial_pairing() {
        assert!(generate_batch(0, 1, &SpecRanges::default()).is_err());
        assert!(generate_batch(21, 1, &SpecRanges::default()).is_err());
        assert_eq!(generate_batch(1, 1, &SpecRanges::default()).unwrap().truth.pairing, vec![0]);
    }

    #[test]
    fn unreachable_floor_fails() {
        let ranges = SpecRanges { distinctness_floor: 1e6, ..SpecRanges::default() };
        assert!(matches!(generate_batch(2, 3, &ranges), Err(Error::DistinctnessFailure { .. })));
    }

    #[test]
    fn outline_descriptors_recover_pairing() {
        let batch = generate_batch(8, 9, &SpecRanges::default()).unwrap();
        let front: Vec<_> = batch.specs.iter().map(|s| s.outline.descriptor(DEFAULT_NC).unwrap()).collect();
        let mut back = front.clone();
        for (i, &j) in batch.truth.pairing.iter().enumerate() {
            back[j] = front[i].clone();
        }
        assert_eq!(match_batches(&front, &back).unwrap().permutation(), batch.truth.pairing);
    }

    #[test]
    fn hemisphere_layout() {
        let h = hemisphere(10_000, 50.0, 0.0, 1);
        assert!((h.cloud.len() as f64 - 10_000.0).abs() < 600.0);
        assert!(h.rim.iter().all(|&i| h.cloud.points()[i].z.abs() < 1e-9));
        assert!(h.cloud.points().iter().all(|p| p.z >= -1e-9 && (p.coords.norm() - 50.0).abs() < 1e-9));
    }
}
