//! Planar outline extraction and the cumulative turning-angle descriptor.
//!
//! Pipeline per scan: alpha shape of the projected points, uniform arc-length
//! resampling into a clockwise [`Contour`], then [`ShapeDescriptor`] as the
//! prefix sums of the signed exterior angles.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{fit_plane_pca, project_to_plane, Plane, Point2, Point3, PointCloud};
use crate::index::NeighborIndex;

/// Default contour sample count.
pub const DEFAULT_NC: usize = 200;

const MIN_EDGE: f64 = 1e-9;

/// Twice the signed area; positive for counter-clockwise vertex order.
fn doubled_signed_area(v: &[Point2]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum()
}

pub fn signed_area(v: &[Point2]) -> f64 {
    0.5 * doubled_signed_area(v)
}

fn cross(o: &Point2, a: &Point2, b: &Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(a: &Point2, b: &Point2, p: &Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, touching included.
fn segments_intersect(a: &Point2, b: &Point2, c: &Point2, d: &Point2) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// First pair of non-adjacent edges that intersect, or adjacent edges that
/// fold back onto each other.
fn find_self_intersection(v: &[Point2]) -> Option<(usize, usize)> {
    let n = v.len();
    let edge = |i: usize| (v[i], v[(i + 1) % n]);
    let mut order: Vec<usize> = (0..n).collect();
    let min_x = |i: usize| v[i].x.min(v[(i + 1) % n].x);
    order.sort_by(|&a, &b| min_x(a).total_cmp(&min_x(b)));
    for (pos, &i) in order.iter().enumerate() {
        let (a, b) = edge(i);
        let max_x = a.x.max(b.x);
        for &j in &order[pos + 1..] {
            if min_x(j) > max_x {
                break;
            }
            let (c, d) = edge(j);
            let adjacent = (i + 1) % n == j || (j + 1) % n == i;
            if adjacent {
                // Shared endpoint is expected; only a fold-back overlaps further.
                let (shared, p, q) = if (i + 1) % n == j { (b, a, d) } else { (a, b, c) };
                if cross(&shared, &p, &q) == 0.0 && (p - shared).dot(&(q - shared)) > 0.0 {
                    return Some((i, j));
                }
                if n == 3 {
                    continue;
                }
            } else if segments_intersect(&a, &b, &c, &d) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Simple closed polygon; the edge from the last vertex back to the first is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon2 {
    vertices: Vec<Point2>,
}

impl Polygon2 {
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidPolygon(format!("{n} vertices, need at least 3")));
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidPolygon("non-finite vertex".into()));
        }
        for i in 0..n {
            if (vertices[(i + 1) % n] - vertices[i]).norm() <= MIN_EDGE {
                return Err(Error::InvalidPolygon(format!("edge {i} has zero length")));
            }
        }
        if let Some((i, j)) = find_self_intersection(&vertices) {
            return Err(Error::InvalidPolygon(format!("edges {i} and {j} intersect")));
        }
        Ok(Polygon2 { vertices })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| (self.vertices[(i + 1) % n] - self.vertices[i]).norm())
            .sum()
    }

    /// Distance from `p` to the nearest point of the boundary.
    pub fn boundary_distance(&self, p: &Point2) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| point_segment_distance(p, &self.vertices[i], &self.vertices[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn point_segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Clockwise outline sampled at `n_c` points, equally spaced by arc length of
/// the source polygon.
#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    vertices: Vec<Point2>,
    perimeter: f64,
}

impl Contour {
    /// Wraps an already resampled vertex list. Fails unless there are at least
    /// 8 finite vertices in clockwise order and the perimeter is positive.
    pub fn new(vertices: Vec<Point2>, perimeter: f64) -> Result<Self> {
        if vertices.len() < 8 {
            return Err(Error::InvalidInput(format!(
                "{} contour vertices, need at least 8",
                vertices.len()
            )));
        }
        if !vertices.iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::InvalidPolygon("non-finite contour vertex".into()));
        }
        if !(perimeter > 0.0 && perimeter.is_finite()) {
            return Err(Error::InvalidInput(format!("perimeter {perimeter}")));
        }
        if signed_area(&vertices) >= 0.0 {
            return Err(Error::InvalidPolygon("contour must be clockwise".into()));
        }
        Ok(Contour {
            vertices,
            perimeter,
        })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    pub fn edge_length(&self) -> f64 {
        self.perimeter / self.vertices.len() as f64
    }

    /// Same contour with vertex `start` moved to position 0.
    pub fn rotated(&self, start: usize) -> Contour {
        let mut vertices = self.vertices.clone();
        vertices.rotate_left(start % self.vertices.len());
        Contour {
            vertices,
            perimeter: self.perimeter,
        }
    }

    /// Signed exterior angle at every vertex; right turns are positive.
    pub fn turning_angles(&self) -> Vec<f64> {
        let v = &self.vertices;
        let n = v.len();
        (0..n)
            .map(|i| {
                let prev = v[(i + n - 1) % n];
                let next = v[(i + 1) % n];
                let e0 = v[i] - prev;
                let e1 = next - v[i];
                let turn_left = e0.x * e1.y - e0.y * e1.x;
                -turn_left.atan2(e0.dot(&e1))
            })
            .collect()
    }
}

/// Cumulative turning angles `theta_bar[i] = θ_0 + … + θ_i` plus the common edge length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeDescriptor {
    pub theta_bar: Vec<f64>,
    pub edge_length: f64,
}

impl ShapeDescriptor {
    pub fn len(&self) -> usize {
        self.theta_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_bar.is_empty()
    }

    /// Recovers the raw turning angles from the prefix sums.
    pub fn turning_angles(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.theta_bar
            .iter()
            .map(|&t| {
                let d = t - prev;
                prev = t;
                d
            })
            .collect()
    }

    pub fn from_turning_angles(angles: &[f64], edge_length: f64) -> Self {
        let mut acc = 0.0;
        ShapeDescriptor {
            theta_bar: angles
                .iter()
                .map(|&a| {
                    acc += a;
                    acc
                })
                .collect(),
            edge_length,
        }
    }
}

/// Arc-length resampling into a clockwise contour starting at vertex 0.
pub fn resample_uniform(poly: &Polygon2, n_c: usize) -> Result<Contour> {
    if n_c < 8 {
        return Err(Error::InvalidInput(format!("n_c = {n_c}, need at least 8")));
    }
    let src = poly.vertices();
    let mut ring: Vec<Point2> = if poly.signed_area() > 0.0 {
        std::iter::once(src[0]).chain(src[1..].iter().rev().copied()).collect()
    } else {
        src.to_vec()
    };
    ring.push(ring[0]);

    let lengths: Vec<f64> = ring.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let perimeter: f64 = lengths.iter().sum();
    let step = perimeter / n_c as f64;

    let mut vertices = Vec::with_capacity(n_c);
    let mut edge = 0usize;
    let mut edge_start = 0.0;
    for k in 0..n_c {
        let target = k as f64 * step;
        while edge + 1 < lengths.len() && edge_start + lengths[edge] <= target {
            edge_start += lengths[edge];
            edge += 1;
        }
        let t = ((target - edge_start) / lengths[edge]).clamp(0.0, 1.0);
        let (a, b) = (ring[edge], ring[edge + 1]);
        vertices.push(if t == 0.0 { a } else { a + (b - a) * t });
    }
    Ok(Contour {
        vertices,
        perimeter,
    })
}

pub fn descriptor(contour: &Contour) -> ShapeDescriptor {
    descriptor_with_start(contour, 0)
}

/// Descriptor of the contour read from vertex `start` onward.
pub fn descriptor_with_start(contour: &Contour, start: usize) -> ShapeDescriptor {
    let mut angles = contour.turning_angles();
    if !angles.is_empty() {
        let n = angles.len();
        angles.rotate_left(start % n);
    }
    ShapeDescriptor::from_turning_angles(&angles, contour.edge_length())
}

/// Median distance from each point to its nearest distinct neighbor.
pub fn median_spacing(points: &[Point2]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let lifted: Vec<Point3> = points.iter().map(|p| Point3::new(p.x, p.y, 0.0)).collect();
    let index = NeighborIndex::from_points(&lifted);
    let mut d: Vec<f64> = lifted
        .iter()
        .map(|p| index.k_nearest(p, 2).get(1).map_or(0.0, |n| n.distance))
        .collect();
    let mid = d.len() / 2;
    *d.select_nth_unstable_by(mid, f64::total_cmp).1
}

/// How the alpha radius is chosen for a scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaPolicy {
    /// Multiple of the median nearest-neighbor spacing.
    pub spacing_factor: f64,
    pub min_alpha: f64,
    pub max_alpha: f64,
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy {
            spacing_factor: 4.0,
            min_alpha: 0.5,
            max_alpha: 10.0,
        }
    }
}

impl AlphaPolicy {
    pub fn alpha_for(&self, points: &[Point2]) -> f64 {
        (self.spacing_factor * median_spacing(points)).clamp(self.min_alpha, self.max_alpha)
    }
}

fn circumradius(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    let ab = (b - a).norm();
    let bc = (c - b).norm();
    let ca = (a - c).norm();
    let area2 = cross(a, b, c).abs();
    if area2 == 0.0 {
        f64::INFINITY
    } else {
        ab * bc * ca / (2.0 * area2)
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Outer boundary of the alpha shape of `points`.
///
/// Delaunay triangles with circumradius below `alpha` form the shape. Its
/// boundary edges are traced into loops, and the counter-clockwise loop of
/// largest area is returned.
pub fn alpha_shape_contour(points: &[Point2], alpha: f64) -> Result<Polygon2> {
    if points.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "{} points, alpha shape needs at least 10",
            points.len()
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!("alpha = {alpha}, must be positive")));
    }
    let input: Vec<delaunator::Point> = points
        .iter()
        .map(|p| delaunator::Point { x: p.x, y: p.y })
        .collect();
    let tri = delaunator::triangulate(&input);
    let n_tri = tri.triangles.len() / 3;
    let corner = |t: usize, k: usize| tri.triangles[3 * t + k];

    let keep: Vec<bool> = (0..n_tri)
        .map(|t| {
            let (a, b, c) = (&points[corner(t, 0)], &points[corner(t, 1)], &points[corner(t, 2)]);
            circumradius(a, b, c) < alpha
        })
        .collect();

    let mut components = UnionFind((0..n_tri).collect());
    // Directed boundary edges (from, to, triangle) with the kept triangle on the left.
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    for t in (0..n_tri).filter(|&t| keep[t]) {
        let ccw = cross(&points[corner(t, 0)], &points[corner(t, 1)], &points[corner(t, 2)]) > 0.0;
        for k in 0..3 {
            let he = 3 * t + k;
            let twin = tri.halfedges[he];
            if twin != delaunator::EMPTY && keep[twin / 3] {
                components.union(t, twin / 3);
                continue;
            }
            let (a, b) = (corner(t, k), corner(t, (k + 1) % 3));
            edges.push(if ccw { (a, b, t) } else { (b, a, t) });
        }
    }
    if edges.is_empty() {
        return Err(Error::AlphaDegenerate);
    }

    let mut outgoing: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, e) in edges.iter().enumerate() {
        outgoing.entry(e.0).or_default().push(i);
    }
    let mut used = vec![false; edges.len()];
    let mut loops: Vec<(Vec<usize>, usize)> = Vec::new();
    for first in 0..edges.len() {
        if used[first] {
            continue;
        }
        used[first] = true;
        let mut chain = vec![edges[first].0];
        let mut current = first;
        loop {
            let (from, at, _) = edges[current];
            let back = points[from] - points[at];
            let back_angle = back.y.atan2(back.x);
            let mut best: Option<(f64, usize)> = None;
            let candidates = outgoing.get(&at).map(Vec::as_slice).unwrap_or(&[]);
            for &cand in candidates {
                if used[cand] && cand != first {
                    continue;
                }
                let dir = points[edges[cand].1] - points[at];
                // Clockwise sweep from the reversed incoming edge hugs the region on the left.
                let mut cw = back_angle - dir.y.atan2(dir.x);
                while cw <= 0.0 {
                    cw += 2.0 * PI;
                }
                while cw > 2.0 * PI {
                    cw -= 2.0 * PI;
                }
                if best.is_none_or(|(b, _)| cw < b) {
                    best = Some((cw, cand));
                }
            }
            match best {
                Some((_, next)) if next == first => break,
                Some((_, next)) => {
                    used[next] = true;
                    chain.push(edges[next].0);
                    current = next;
                }
                None => return Err(Error::AlphaDegenerate),
            }
        }
        loops.push((chain, components.find(edges[first].2)));
    }

    let (outer, component) = loops
        .into_iter()
        .map(|(chain, comp)| {
            let ring: Vec<Point2> = chain.iter().map(|&i| points[i]).collect();
            (signed_area(&ring), chain, ring, comp)
        })
        .filter(|(area, _, _, _)| *area > 0.0)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, chain, _, comp)| (chain, comp))
        .ok_or(Error::AlphaDegenerate)?;
    let outer = anchor_at_lowest_index(outer);

    let mut in_component = vec![false; points.len()];
    for t in (0..n_tri).filter(|&t| keep[t]) {
        if components.find(t) == component {
            for k in 0..3 {
                in_component[corner(t, k)] = true;
            }
        }
    }
    let kept = in_component.iter().filter(|&&b| b).count();
    let total = distinct_count(points);
    if 2 * kept < total {
        return Err(Error::AlphaTooSmall { kept, total });
    }
    Polygon2::new(outer.iter().map(|&i| points[i]).collect()).map_err(|_| Error::AlphaDegenerate)
}

/// Starts the loop at its lowest input index so the result does not depend on
/// triangulation order.
fn anchor_at_lowest_index(mut chain: Vec<usize>) -> Vec<usize> {
    let pos = chain
        .iter()
        .enumerate()
        .min_by_key(|(_, &i)| i)
        .map_or(0, |(p, _)| p);
    chain.rotate_left(pos);
    chain
}

fn distinct_count(points: &[Point2]) -> usize {
    let mut keys: Vec<(u64, u64)> = points
        .iter()
        .map(|p| ((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits()))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Everything derived from one scan's projected outline.
#[derive(Clone, Debug)]
pub struct ScanContour {
    pub plane: Plane,
    pub alpha: f64,
    pub polygon: Polygon2,
    pub contour: Contour,
    pub descriptor: ShapeDescriptor,
}

/// Plane fit, projection, alpha shape and resampling for a whole scan.
pub fn extract_scan_contour(cloud: &PointCloud, n_c: usize, policy: &AlphaPolicy) -> Result<ScanContour> {
    let plane = fit_plane_pca(cloud)?;
    let projected = project_to_plane(cloud, &plane);
    let alpha = policy.alpha_for(&projected);
    let polygon = alpha_shape_contour(&projected, alpha)?;
    let contour = resample_uniform(&polygon, n_c)?;
    let descriptor = descriptor(&contour);
    Ok(ScanContour {
        plane,
        alpha,
        polygon,
        contour,
        descriptor,
    })
}

/// Debug and CLI form of an extracted contour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourDocument {
    pub n_c: usize,
    pub alpha: f64,
    pub perimeter: f64,
    pub edge_length: f64,
    pub vertices: Vec<[f64; 2]>,
    pub theta_bar: Vec<f64>,
}

impl ContourDocument {
    pub fn new(contour: &Contour, descriptor: &ShapeDescriptor, alpha: f64) -> Self {
        ContourDocument {
            n_c: contour.len(),
            alpha,
            perimeter: contour.perimeter(),
            edge_length: descriptor.edge_length,
            vertices: contour.vertices().iter().map(|p| [p.x, p.y]).collect(),
            theta_bar: descriptor.theta_bar.clone(),
        }
    }

    pub fn descriptor(&self) -> ShapeDescriptor {
        ShapeDescriptor {
            theta_bar: self.theta_bar.clone(),
            edge_length: self.edge_length,
        }
    }
}
