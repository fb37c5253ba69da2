//! Points, clouds, planes and rigid motions. All lengths are millimeters.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Point2 = nalgebra::Point2<f64>;

/// Ordered 3D point set. Indices are stable handles across every operation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    /// Per-point list of camera indices the point is visible in.
    visibility: Option<Vec<Vec<u32>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinitePoint(i));
        }
        Ok(PointCloud {
            points,
            visibility: None,
        })
    }

    pub fn with_visibility(mut self, visibility: Vec<Vec<u32>>) -> Result<Self> {
        if visibility.len() != self.points.len() {
            return Err(Error::InvalidInput(format!(
                "visibility has {} entries for {} points",
                visibility.len(),
                self.points.len()
            )));
        }
        self.visibility = Some(visibility);
        Ok(self)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn visibility(&self) -> Option<&[Vec<u32>]> {
        self.visibility.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Point3> {
        centroid(&self.points)
    }

    /// Sub-cloud of the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            visibility: self
                .visibility
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i].clone()).collect()),
        }
    }

    /// Concatenation; visibility is dropped unless both sides carry it.
    pub fn merged(&self, other: &PointCloud) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let visibility = match (&self.visibility, &other.visibility) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
            _ => None,
        };
        PointCloud { points, visibility }
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }
}

pub fn centroid(points: &[Point3]) -> Option<Point3> {
    if points.is_empty() {
        return None;
    }
    let sum = points
        .iter()
        .fold(Vector3::zeros(), |acc: Vector3<f64>, p| acc + p.coords);
    Some(Point3::from(sum / points.len() as f64))
}

/// Fitting plane through a centroid. `basis_u × basis_v = normal`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub centroid: Point3,
    pub normal: Vector3<f64>,
    pub basis_u: Vector3<f64>,
    pub basis_v: Vector3<f64>,
}

impl Plane {
    /// Builds a plane from a normal and a first in-plane direction, which is
    /// orthogonalized against the normal.
    pub fn new(centroid: Point3, normal: Vector3<f64>, u_hint: Vector3<f64>) -> Result<Self> {
        let n = normal
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("plane normal has zero length".into()))?;
        let u = (u_hint - n * n.dot(&u_hint))
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("in-plane hint is parallel to the normal".into()))?;
        let v = n.cross(&u);
        Ok(Plane {
            centroid,
            normal: n,
            basis_u: u,
            basis_v: v,
        })
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        (p - self.centroid).dot(&self.normal)
    }

    pub fn project(&self, p: &Point3) -> Point2 {
        let d = p - self.centroid;
        Point2::new(d.dot(&self.basis_u), d.dot(&self.basis_v))
    }

    /// Inverse of [`Plane::project`] onto the plane itself.
    pub fn lift(&self, q: &Point2) -> Point3 {
        self.centroid + self.basis_u * q.x + self.basis_v * q.y
    }
}

/// Least-variance plane through the centroid.
///
/// The normal is the covariance eigenvector of the smallest eigenvalue, signed
/// so that its largest-magnitude component is positive. The first in-plane
/// axis is the principal direction, signed the same way.
pub fn fit_plane_pca(cloud: &PointCloud) -> Result<Plane> {
    let points = cloud.points();
    if points.len() < 3 {
        return Err(Error::DegenerateCloud(format!(
            "{} points, need at least 3",
            points.len()
        )));
    }
    let c = centroid(points).expect("non-empty");
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;

    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (smallest, middle, largest) = (order[0], order[1], order[2]);
    let top = eig.eigenvalues[largest];
    if !(top > 0.0) || eig.eigenvalues[middle] <= top * 1e-12 {
        return Err(Error::DegenerateCloud(
            "points are collinear or coincident".into(),
        ));
    }
    let normal = canonical_sign(eig.eigenvectors.column(smallest).into_owned());
    let u = canonical_sign(eig.eigenvectors.column(largest).into_owned());
    Plane::new(c, normal, u)
}

fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    let i = v.iamax();
    if v[i] < 0.0 {
        -v
    } else {
        v
    }
}

pub fn project_to_plane(cloud: &PointCloud, plane: &Plane) -> Vec<Point2> {
    cloud.points().iter().map(|p| plane.project(p)).collect()
}

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ROTATION_TOL: f64 = 1e-9;

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > ROTATION_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation is not orthonormal (deviation {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidTransform(format!("det R = {det}")));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about `axis`, followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = match nalgebra::Unit::try_new(axis, 1e-12) {
            Some(axis) => *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix(),
            None => Matrix3::identity(),
        };
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle of the relative motion `self⁻¹ ∘ other`, in radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    pub fn translation_distance_to(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// On-disk form: rotation as three rows, translation in mm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformRepr {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = Error;

    fn try_from(r: TransformRepr) -> Result<Self> {
        let rotation = Matrix3::from_fn(|i, j| r.rotation[i][j]);
        RigidTransform::new(rotation, Vector3::from(r.translation))
    }
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let r = t.rotation;
        TransformRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.apply(p)).collect(),
        visibility: cloud.visibility.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let t = Vector3::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
        );
        RigidTransform::from_axis_angle(axis, rng.random_range(-3.0..3.0), t)
    }

    fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-20.0..20.0),
                        rng.random_range(-10.0..10.0),
                        rng.random_range(-2.0..2.0),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_finite_points() {
        let err = PointCloud::new(vec![Point3::new(0.0, f64::NAN, 0.0)]).unwrap_err();
        assert!(matches!(err, Error::NonFinitePoint(0)));
    }

    #[test]
    fn plane_of_exact_planar_points() {
        let pts = (0..50)
            .map(|i| Point3::new((i % 7) as f64, (i / 7) as f64 * 1.3, 5.0))
            .collect();
        let plane = fit_plane_pca(&PointCloud::new(pts).unwrap()).unwrap();
        assert!((plane.normal - Vector3::z()).norm() < 1e-12);
        assert!((plane.centroid.z - 5.0).abs() < 1e-12);
        assert!((plane.basis_u.cross(&plane.basis_v) - plane.normal).norm() < 1e-12);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(2.0, 2.0, 2.0),
        ];
        assert!(matches!(
            fit_plane_pca(&PointCloud::new(pts).unwrap()),
            Err(Error::DegenerateCloud(_))
        ));
        let two = PointCloud::new(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]).unwrap();
        assert!(matches!(fit_plane_pca(&two), Err(Error::DegenerateCloud(_))));
    }

    #[test]
    fn noisy_parabolic_sheet_normal_matches_brute_force_eigensolve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let pts: Vec<Point3> = (0..1000)
            .map(|_| {
                let x = rng.random_range(-10.0..10.0);
                let y = rng.random_range(-10.0..10.0);
                Point3::new(x, y, 0.01 * x * x + noise.sample(&mut rng))
            })
            .collect();
        let plane = fit_plane_pca(&PointCloud::new(pts.clone()).unwrap()).unwrap();
        assert!(plane.normal.angle(&Vector3::z()) < 2f64.to_radians());

        // Oracle: power iteration on (trace·I − C) converges to the smallest
        // eigenvector of the covariance C.
        let n = pts.len() as f64;
        let mean = pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
        let mut c = [[0.0f64; 3]; 3];
        for p in &pts {
            let d = p.coords - mean;
            for i in 0..3 {
                for j in 0..3 {
                    c[i][j] += d[i] * d[j] / n;
                }
            }
        }
        let tr = c[0][0] + c[1][1] + c[2][2];
        let mut v = [0.3, -0.2, 1.0];
        for _ in 0..5000 {
            let mut w = [0.0; 3];
            for i in 0..3 {
                w[i] = tr * v[i] - (0..3).map(|j| c[i][j] * v[j]).sum::<f64>();
            }
            let norm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
            v = [w[0] / norm, w[1] / norm, w[2] / norm];
        }
        let oracle = Vector3::from(v);
        assert!(plane.normal.dot(&oracle).abs() > 1.0 - 1e-9);
    }

    #[test]
    fn axis_aligned_projection() {
        let plane = Plane::new(Point3::origin(), Vector3::z(), Vector3::x()).unwrap();
        let q = plane.project(&Point3::new(3.0, 4.0, 7.0));
        assert_eq!((q.x, q.y), (3.0, 4.0));
        let c = plane.project(&plane.centroid);
        assert_eq!((c.x, c.y), (0.0, 0.0));
    }

    #[test]
    fn lift_of_projection_is_off_by_signed_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = random_cloud(&mut rng, 200);
        let plane = fit_plane_pca(&cloud).unwrap();
        for (p, q) in cloud.points().iter().zip(project_to_plane(&cloud, &plane)) {
            let back = plane.lift(&q);
            assert!(((p - back).norm() - plane.signed_distance(p).abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_and_pure_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = random_cloud(&mut rng, 20);
        let same = apply_transform(&RigidTransform::identity(), &cloud);
        assert_eq!(same.points(), cloud.points());

        let t = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(t.apply(&Point3::new(1.0, 1.0, 1.0)), Point3::new(1.0, 1.0, 2.0));
    }

    #[test]
    fn composition_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t1 = random_transform(&mut rng);
        let t2 = random_transform(&mut rng);
        let cloud = random_cloud(&mut rng, 100);
        let once = apply_transform(&t2.compose(&t1), &cloud);
        let twice = apply_transform(&t2, &apply_transform(&t1, &cloud));
        for (a, b) in once.points().iter().zip(twice.points()) {
            assert!((a - b).norm() < 1e-9);
        }
        let round = t1.compose(&t1.inverse());
        assert!((round.rotation() - Matrix3::identity()).abs().max() < 1e-9);
        assert!(round.translation().norm() < 1e-9);
    }

    #[test]
    fn invalid_rotations_are_rejected() {
        let mut reflect = Matrix3::identity();
        reflect[(2, 2)] = -1.0;
        assert!(RigidTransform::new(reflect, Vector3::zeros()).is_err());
        assert!(RigidTransform::new(Matrix3::identity() * 1.01, Vector3::zeros()).is_err());
    }

    #[test]
    fn transform_json_uses_row_major_rotation() {
        let t = RigidTransform::from_axis_angle(Vector3::z(), 0.5, Vector3::new(1.0, 2.0, 3.0));
        let s = serde_json::to_string(&t).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["rotation"][0][1].as_f64().unwrap(), t.rotation()[(0, 1)]);
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn transform_strategy() -> impl Strategy<Value = RigidTransform> {
            (
                prop::array::uniform3(-1.0f64..1.0),
                -3.1f64..3.1,
                prop::array::uniform3(-100.0f64..100.0),
            )
                .prop_map(|(a, ang, t)| {
                    RigidTransform::from_axis_angle(Vector3::from(a), ang, Vector3::from(t))
                })
        }

        proptest! {
            #[test]
            fn transforms_are_isometries(
                t in transform_strategy(),
                a in prop::array::uniform3(-50.0f64..50.0),
                b in prop::array::uniform3(-50.0f64..50.0),
            ) {
                let (a, b) = (Point3::from(a), Point3::from(b));
                let d0 = (a - b).norm();
                let d1 = (t.apply(&a) - t.apply(&b)).norm();
                prop_assert!((d0 - d1).abs() < 1e-9);
            }

            #[test]
            fn plane_fit_commutes_with_rigid_motion(t in transform_strategy(), seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let cloud = random_cloud(&mut rng, 60);
                let p0 = fit_plane_pca(&cloud).unwrap();
                let p1 = fit_plane_pca(&apply_transform(&t, &cloud)).unwrap();
                let moved_normal = t.apply_vector(&p0.normal);
                prop_assert!(p1.normal.dot(&moved_normal).abs() > 1.0 - 1e-6);
                prop_assert!((p1.centroid - t.apply(&p0.centroid)).norm() < 1e-6);
            }
        }
    }
}
