//! 3D boundary points of an open scan patch.
//!
//! Two stages: an optional image-space filter that keeps points projecting
//! near the silhouette of the segmentation mask in every view they are seen
//! in, then the angular-gap test on the local tangent plane.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Point3, PointCloud, RigidTransform, TransformRepr};
use crate::index::NeighborIndex;

pub const DEFAULT_K: usize = 16;
pub const DEFAULT_GAP_THRESHOLD: f64 = 2.0 * std::f64::consts::PI / 3.0;
pub const DEFAULT_PIXEL_THRESHOLD: f64 = 3.0;

/// Sorted, duplicate-free point indices into a parent cloud.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BoundaryDocument", into = "BoundaryDocument")]
pub struct BoundarySet {
    indices: Vec<usize>,
}

impl BoundarySet {
    /// Sorts and deduplicates; fails if any index is `>= cloud_len`.
    pub fn new(mut indices: Vec<usize>, cloud_len: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        let set = BoundarySet { indices };
        set.check_bounds(cloud_len)?;
        Ok(set)
    }

    pub fn check_bounds(&self, cloud_len: usize) -> Result<()> {
        match self.indices.last() {
            Some(&last) if last >= cloud_len => Err(Error::InvalidInput(format!(
                "boundary index {last} out of range for {cloud_len} points"
            ))),
            _ => Ok(()),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// On-disk index list.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryDocument {
    pub count: usize,
    pub indices: Vec<usize>,
}

impl TryFrom<BoundaryDocument> for BoundarySet {
    type Error = Error;

    fn try_from(doc: BoundaryDocument) -> Result<Self> {
        if doc.count != doc.indices.len() {
            return Err(Error::InvalidInput(format!(
                "boundary document declares {} indices but lists {}",
                doc.count,
                doc.indices.len()
            )));
        }
        BoundarySet::new(doc.indices, usize::MAX)
    }
}

impl From<BoundarySet> for BoundaryDocument {
    fn from(set: BoundarySet) -> Self {
        BoundaryDocument {
            count: set.indices.len(),
            indices: set.indices,
        }
    }
}

/// Binary segmentation raster, row-major, `true` = fragment.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    width: u32,
    height: u32,
    pixels: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() as u64 != width as u64 * height as u64 {
            return Err(Error::Mask(format!(
                "{} pixels for a {width}x{height} raster",
                pixels.len()
            )));
        }
        Ok(Mask {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let pixels = (0..height)
            .flat_map(|row| (0..width).map(move |col| (col, row)))
            .map(|(col, row)| f(col, row))
            .collect();
        Mask {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        col < self.width && row < self.height && self.pixels[(row * self.width + col) as usize]
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.iter().any(|&p| p)
    }

    /// Foreground pixels with a 4-neighbor that is background or off-image.
    pub fn contour_pixels(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for row in 0..self.height {
            for col in 0..self.width {
                if !self.get(col, row) {
                    continue;
                }
                let edge = col == 0
                    || row == 0
                    || col + 1 == self.width
                    || row + 1 == self.height
                    || !self.get(col - 1, row)
                    || !self.get(col + 1, row)
                    || !self.get(col, row - 1)
                    || !self.get(col, row + 1);
                if edge {
                    out.push((col, row));
                }
            }
        }
        out
    }

    /// Decodes an 8- or 16-bit PNG; any nonzero sample in a pixel marks foreground.
    pub fn from_png_bytes(data: &[u8]) -> Result<Self> {
        let mut decoder = png::Decoder::new(Cursor::new(data));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder.read_info().map_err(|e| Error::Mask(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Mask("image too large".into()))?;
        if size > 1 << 28 {
            return Err(Error::Mask("image too large".into()));
        }
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Mask(e.to_string()))?;
        let channels = info.color_type.samples();
        let (width, height) = (info.width, info.height);
        let stride = info.line_size;
        let pixels = (0..height as usize)
            .flat_map(|row| {
                let line = &buf[row * stride..row * stride + width as usize * channels];
                line.chunks(channels).map(|px| px.iter().any(|&s| s != 0)).collect::<Vec<_>>()
            })
            .collect();
        Mask::new(width, height, pixels)
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().expect("in-memory PNG header");
            let data: Vec<u8> = self.pixels.iter().map(|&p| if p { 255 } else { 0 }).collect();
            writer.write_image_data(&data).expect("in-memory PNG data");
        }
        out
    }
}

/// Calibrated view with its segmentation mask.
#[derive(Debug)]
pub struct CameraView {
    intrinsics: Matrix3<f64>,
    /// World to camera; the camera looks along its +z axis.
    pose: RigidTransform,
    mask: Mask,
    contour: Vec<(u32, u32)>,
    contour_index: NeighborIndex,
}

impl CameraView {
    pub fn new(intrinsics: Matrix3<f64>, pose: RigidTransform, mask: Mask) -> Result<Self> {
        if !(intrinsics[(0, 0)] > 0.0 && intrinsics[(1, 1)] > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if !intrinsics.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite intrinsics".into()));
        }
        if mask.is_empty() {
            return Err(Error::Mask("mask has no foreground pixels".into()));
        }
        let contour = mask.contour_pixels();
        let lifted: Vec<Point3> = contour
            .iter()
            .map(|&(c, r)| Point3::new(c as f64, r as f64, 0.0))
            .collect();
        Ok(CameraView {
            intrinsics,
            pose,
            contour_index: NeighborIndex::from_points(&lifted),
            contour,
            mask,
        })
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn contour_pixels(&self) -> &[(u32, u32)] {
        &self.contour
    }

    /// Pixel coordinates (column, row) of a world point, `None` behind the camera.
    pub fn project(&self, p: &Point3) -> Option<Point2> {
        let c = self.pose.apply(p);
        if c.z <= 0.0 {
            return None;
        }
        let h = self.intrinsics * Vector3::new(c.x / c.z, c.y / c.z, 1.0);
        Some(Point2::new(h.x / h.z, h.y / h.z))
    }

    pub fn in_frame(&self, px: &Point2) -> bool {
        px.x >= -0.5
            && px.y >= -0.5
            && px.x < self.mask.width as f64 - 0.5
            && px.y < self.mask.height as f64 - 0.5
    }

    /// Euclidean distance in pixels to the nearest mask-contour pixel center.
    pub fn contour_distance(&self, px: &Point2) -> f64 {
        self.contour_index
            .nearest(&Point3::new(px.x, px.y, 0.0))
            .map_or(f64::INFINITY, |n| n.distance)
    }
}

/// Points whose projection lies within `pixel_threshold` of the mask contour
/// in every view they are visible in.
///
/// Visibility comes from the cloud's per-point lists when present; otherwise a
/// point counts as visible in every view it projects into.
pub fn mask_candidate_filter(
    cloud: &PointCloud,
    views: &[CameraView],
    pixel_threshold: f64,
) -> Result<Vec<usize>> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    if let Some(vis) = cloud.visibility() {
        if let Some(bad) = vis.iter().flatten().find(|&&v| v as usize >= views.len()) {
            return Err(Error::InvalidInput(format!(
                "visibility references view {bad} but only {} views exist",
                views.len()
            )));
        }
    }
    let keep: Vec<bool> = cloud
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut seen = 0usize;
            let check = |view: &CameraView| -> Option<bool> {
                let px = view.project(p)?;
                if !view.in_frame(&px) {
                    return None;
                }
                Some(view.contour_distance(&px) < pixel_threshold)
            };
            let all_close = match cloud.visibility() {
                Some(vis) => vis[i].iter().all(|&v| {
                    seen += 1;
                    check(&views[v as usize]).unwrap_or(false)
                }),
                None => views.iter().all(|view| match check(view) {
                    Some(close) => {
                        seen += 1;
                        close
                    }
                    None => true,
                }),
            };
            all_close && seen > 0
        })
        .collect();
    Ok(keep
        .iter()
        .enumerate()
        .filter(|(_, &k)| k)
        .map(|(i, _)| i)
        .collect())
}

/// Largest angular gap (radians) between the `k` nearest neighbors of `center`
/// projected onto their least-squares tangent plane.
fn largest_gap(points: &[Point3], center: usize, neighbors: &[usize]) -> f64 {
    let p = points[center];
    let n = neighbors.len() as f64 + 1.0;
    let mean = neighbors
        .iter()
        .fold(p.coords, |acc, &j| acc + points[j].coords)
        / n;
    let mut cov = Matrix3::zeros();
    for q in std::iter::once(&p).chain(neighbors.iter().map(|&j| &points[j])) {
        let d = q.coords - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let u = eig.eigenvectors.column(order[2]).into_owned();
    let v = eig.eigenvectors.column(order[1]).into_owned();

    let mut angles: Vec<f64> = neighbors
        .iter()
        .filter_map(|&j| {
            let d = points[j] - p;
            let (x, y) = (d.dot(&u), d.dot(&v));
            (x != 0.0 || y != 0.0).then(|| y.atan2(x))
        })
        .collect();
    if angles.len() < 2 {
        return 2.0 * std::f64::consts::PI;
    }
    angles.sort_by(f64::total_cmp);
    let wrap = angles[0] + 2.0 * std::f64::consts::PI - angles[angles.len() - 1];
    angles
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(wrap, f64::max)
}

/// Angular-gap boundary test over `candidates`, with neighbors drawn from the full cloud.
pub fn extract_boundary(
    cloud: &PointCloud,
    candidates: &[usize],
    k: usize,
    gap_threshold: f64,
) -> Result<BoundarySet> {
    let index = NeighborIndex::new(cloud);
    extract_boundary_with_index(cloud, &index, candidates, k, gap_threshold)
}

pub fn extract_boundary_with_index(
    cloud: &PointCloud,
    index: &NeighborIndex,
    candidates: &[usize],
    k: usize,
    gap_threshold: f64,
) -> Result<BoundarySet> {
    if k < 4 {
        return Err(Error::InvalidInput(format!("k = {k}, need at least 4")));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no boundary candidates".into()));
    }
    if cloud.len() < k + 1 {
        return Err(Error::TooFewNeighbors {
            have: cloud.len(),
            need: k + 1,
        });
    }
    if let Some(&bad) = candidates.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::InvalidInput(format!("candidate {bad} out of range")));
    }
    let points = cloud.points();
    let hits: Vec<usize> = candidates
        .par_iter()
        .filter(|&&i| {
            let neighbors: Vec<usize> = index
                .k_nearest(&points[i], k + 1)
                .into_iter()
                .map(|n| n.index)
                .filter(|&j| j != i)
                .take(k)
                .collect();
            largest_gap(points, i, &neighbors) > gap_threshold
        })
        .copied()
        .collect();
    BoundarySet::new(hits, cloud.len())
}

/// Every point is a candidate when no imaging data exists.
pub fn extract_boundary_geometric(cloud: &PointCloud, k: usize, gap_threshold: f64) -> Result<BoundarySet> {
    let all: Vec<usize> = (0..cloud.len()).collect();
    extract_boundary(cloud, &all, k, gap_threshold)
}

/// One view of the camera metadata file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewDocument {
    /// 3×3 intrinsic matrix, rows.
    pub intrinsics: [[f64; 3]; 3],
    /// World-to-camera pose.
    #[serde(flatten)]
    pub pose: TransformRepr,
    /// PNG path, relative to the metadata file.
    pub mask: PathBuf,
}

/// Camera metadata for one scan: views plus optional per-point visibility.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraDocument {
    pub views: Vec<ViewDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<Vec<Vec<u32>>>,
}

impl CameraDocument {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Loads every view, reading masks relative to `base_dir`.
    pub fn load_views(&self, base_dir: &Path) -> Result<Vec<CameraView>> {
        self.views
            .iter()
            .map(|v| {
                let k = Matrix3::from_fn(|i, j| v.intrinsics[i][j]);
                let pose = RigidTransform::try_from(v.pose.clone())?;
                let path = base_dir.join(&v.mask);
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let mask = Mask::from_png_bytes(&bytes)
                    .map_err(|e| Error::Mask(format!("{}: {e}", path.display())))?;
                CameraView::new(k, pose, mask)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::apply_transform;
    use crate::synth::hemisphere;
    use std::f64::consts::PI;

    fn grid(n: usize, spacing: f64) -> PointCloud {
        PointCloud::new(
            (0..n)
                .flat_map(|i| (0..n).map(move |j| Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn grid_interior_and_edge() {
        let cloud = grid(21, 1.0);
        let idx = |i: usize, j: usize| i * 21 + j;
        let set = extract_boundary(&cloud, &[idx(10, 10), idx(0, 10), idx(10, 20), idx(0, 0)], 8, DEFAULT_GAP_THRESHOLD).unwrap();
        assert_eq!(set.indices(), &[idx(0, 0), idx(0, 10), idx(10, 20)]);
        let all = extract_boundary_geometric(&cloud, 8, DEFAULT_GAP_THRESHOLD).unwrap();
        assert_eq!(all.len(), 80);
    }

    #[test]
    fn gap_values_on_grid() {
        let cloud = grid(11, 1.0);
        let index = NeighborIndex::new(&cloud);
        let nb = |i: usize| -> Vec<usize> {
            index
                .k_nearest(&cloud.points()[i], 9)
                .into_iter()
                .map(|n| n.index)
                .filter(|&j| j != i)
                .collect()
        };
        let interior = 5 * 11 + 5;
        assert!((largest_gap(cloud.points(), interior, &nb(interior)) - PI / 4.0).abs() < 1e-9);
        let edge = 5;
        assert!(largest_gap(cloud.points(), edge, &nb(edge)) >= PI - 1e-9);
    }

    #[test]
    fn preconditions() {
        let cloud = grid(3, 1.0);
        assert!(matches!(extract_boundary(&cloud, &[0], 16, 2.0), Err(Error::TooFewNeighbors { .. })));
        assert!(extract_boundary(&cloud, &[0], 3, 2.0).is_err());
        assert!(extract_boundary(&cloud, &[], 4, 2.0).is_err());
    }

    #[test]
    fn threshold_monotonicity() {
        let h = hemisphere(3000, 30.0, 0.0, 1);
        let mut last = usize::MAX;
        for t in [1.5, 2.0, 2.5, 3.0, 3.5] {
            let n = extract_boundary_geometric(&h.cloud, DEFAULT_K, t).unwrap().len();
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn hemisphere_rim_is_found_and_motion_invariant() {
        let h = hemisphere(10_000, 50.0, 0.0, 2);
        let found = extract_boundary_geometric(&h.cloud, DEFAULT_K, DEFAULT_GAP_THRESHOLD).unwrap();
        let near = found
            .indices()
            .iter()
            .filter(|&&i| h.cloud.points()[i].z.abs() < 2.0 * h.spacing)
            .count();
        let hit = h.rim.iter().filter(|&&i| found.contains(i)).count();
        assert!(near as f64 / found.len() as f64 > 0.9);
        assert!(hit as f64 / h.rim.len() as f64 > 0.9);

        let g = RigidTransform::from_axis_angle(Vector3::new(0.3, -1.0, 0.4), 2.1, Vector3::new(10.0, -4.0, 7.5));
        let moved = extract_boundary_geometric(&apply_transform(&g, &h.cloud), DEFAULT_K, DEFAULT_GAP_THRESHOLD).unwrap();
        assert_eq!(moved, found);
    }

    fn downward_camera(height: f64, f: f64, size: u32) -> (Matrix3<f64>, RigidTransform) {
        let k = Matrix3::new(f, 0.0, size as f64 / 2.0, 0.0, f, size as f64 / 2.0, 0.0, 0.0, 1.0);
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        (k, RigidTransform::new(r, Vector3::new(0.0, 0.0, height)).unwrap())
    }

    #[test]
    fn mask_filter_matches_brute_force_projection() {
        let radius = 30.0;
        let h = hemisphere(4000, radius, 0.0, 3);
        let (k, pose) = downward_camera(200.0, 800.0, 400);
        let rim_px = 800.0 * radius / 200.0;
        let mask = Mask::from_fn(400, 400, |c, r| {
            let (x, y) = (c as f64 - 200.0, r as f64 - 200.0);
            (x * x + y * y).sqrt() <= rim_px
        });
        let view = CameraView::new(k, pose, mask.clone()).unwrap();
        let got = mask_candidate_filter(&h.cloud, std::slice::from_ref(&view), DEFAULT_PIXEL_THRESHOLD).unwrap();

        let contour = mask.contour_pixels();
        let want: Vec<usize> = h
            .cloud
            .points()
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                let zc = 200.0 - p.z;
                let (u, v) = (800.0 * p.x / zc + 200.0, 800.0 * -p.y / zc + 200.0);
                let d = contour
                    .iter()
                    .map(|&(c, r)| ((u - c as f64).powi(2) + (v - r as f64).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                d < DEFAULT_PIXEL_THRESHOLD
            })
            .map(|(i, _)| i)
            .collect();
        assert_eq!(got, want);
        assert!(!got.is_empty());
        // Candidates hug the rim; the rim itself is among them.
        assert!(h.rim.iter().all(|i| got.binary_search(i).is_ok()));
        let refined = extract_boundary(&h.cloud, &got, DEFAULT_K, DEFAULT_GAP_THRESHOLD).unwrap();
        assert!(refined.indices().iter().all(|i| got.binary_search(i).is_ok()));
    }

    #[test]
    fn mask_filter_single_point_cases() {
        let (k, pose) = downward_camera(100.0, 100.0, 101);
        let mask = Mask::from_fn(101, 101, |c, r| (40..=60).contains(&c) && (40..=60).contains(&r));
        let view = CameraView::new(k, pose, mask).unwrap();
        // World (x, y, 0) projects to (50.5 + x, 50.5 - y) for this camera.
        let on_contour = Point3::new(-10.5, 0.5, 0.0);
        let center = Point3::new(-0.5, 0.5, 0.0);
        let px = view.project(&on_contour).unwrap();
        assert!((px.x - 40.0).abs() < 1e-9 && (px.y - 50.0).abs() < 1e-9);
        let cloud = PointCloud::new(vec![on_contour, center])
            .unwrap()
            .with_visibility(vec![vec![0], vec![0]])
            .unwrap();
        assert_eq!(mask_candidate_filter(&cloud, std::slice::from_ref(&view), 3.0).unwrap(), vec![0]);
        let unseen = PointCloud::new(vec![on_contour]).unwrap().with_visibility(vec![vec![]]).unwrap();
        assert!(mask_candidate_filter(&unseen, std::slice::from_ref(&view), 3.0).unwrap().is_empty());
        assert!(matches!(mask_candidate_filter(&cloud, &[], 3.0), Err(Error::NoViews)));
        let bad = PointCloud::new(vec![center]).unwrap().with_visibility(vec![vec![4]]).unwrap();
        assert!(mask_candidate_filter(&bad, std::slice::from_ref(&view), 3.0).is_err());
    }

    #[test]
    fn png_masks_round_trip() {
        let mask = Mask::from_fn(13, 7, |c, r| (c + r) % 3 == 0);
        assert_eq!(Mask::from_png_bytes(&mask.to_png_bytes()).unwrap(), mask);
        assert!(Mask::from_png_bytes(b"not a png").is_err());
    }

    #[test]
    fn boundary_document_round_trip() {
        let set = BoundarySet::new(vec![5, 1, 3, 3], 10).unwrap();
        assert_eq!(set.indices(), &[1, 3, 5]);
        let json = serde_json::to_string(&set).unwrap();
        assert_eq!(serde_json::from_str::<BoundarySet>(&json).unwrap(), set);
        assert!(serde_json::from_str::<BoundarySet>(r#"{"count":2,"indices":[1]}"#).is_err());
        assert!(BoundarySet::new(vec![10], 10).is_err());
    }
}
