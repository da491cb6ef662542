//! Point-to-mesh distances, generalized winding numbers and signed distance.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::mesh::SurfaceMesh;
use crate::Vec3;

/// Closest point on triangle `(a, b, c)` to `p`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Signed solid angle of triangle `(a, b, c)` seen from `p`
/// (Van Oosterom-Strackee); positive when `p` lies behind the triangle's
/// normal.
pub fn solid_angle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let (x, y, z) = (a - p, b - p, c - p);
    let (lx, ly, lz) = (x.norm(), y.norm(), z.norm());
    let num = x.dot(&y.cross(&z));
    let den = lx * ly * lz + x.dot(&y) * lz + x.dot(&z) * ly + y.dot(&z) * lx;
    2.0 * num.atan2(den)
}

/// Sum of signed solid angles over `4π`. About 1 inside an outward-oriented
/// closed mesh, 0 outside.
pub fn winding_number(mesh: &SurfaceMesh, query: &Vec3) -> Result<f64> {
    let d = brute_force_distance(mesh, query);
    if d <= 1e-12 {
        return Err(Error::contract("winding number queried on the surface"));
    }
    Ok(winding_number_unchecked(mesh, query))
}

fn winding_number_unchecked(mesh: &SurfaceMesh, query: &Vec3) -> f64 {
    let total: f64 = mesh
        .triangles
        .iter()
        .map(|t| {
            let [a, b, c] = t.map(|v| &mesh.positions[v as usize]);
            solid_angle(query, a, b, c)
        })
        .sum();
    total / (4.0 * PI)
}

fn brute_force_distance(mesh: &SurfaceMesh, query: &Vec3) -> f64 {
    mesh.triangles
        .iter()
        .map(|t| {
            let [a, b, c] = t.map(|v| &mesh.positions[v as usize]);
            (closest_point_on_triangle(query, a, b, c) - query).norm_squared()
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb { lo: Vec3::repeat(f64::INFINITY), hi: Vec3::repeat(f64::NEG_INFINITY) }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn distance_squared(&self, p: &Vec3) -> f64 {
        let d = Vec3::from_fn(|i, _| (self.lo[i] - p[i]).max(0.0).max(p[i] - self.hi[i]));
        d.norm_squared()
    }
}

#[derive(Debug, Clone)]
struct BvhNode {
    bounds: Aabb,
    // leaf: [start, end) into `order`; inner: children
    left: u32,
    right: u32,
    leaf: bool,
}

/// Distance result of [`MeshDistance::signed_distance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedDistance {
    pub value: f64,
    /// False when the mesh is open and `value` is an unsigned distance.
    pub signed: bool,
    pub closest: Vec3,
    pub triangle: usize,
}

/// Triangle BVH plus a cached watertightness check for repeated signed
/// distance queries against one mesh.
#[derive(Debug, Clone)]
pub struct MeshDistance {
    mesh: SurfaceMesh,
    closed: bool,
    order: Vec<u32>,
    nodes: Vec<BvhNode>,
}

impl MeshDistance {
    pub fn new(mesh: &SurfaceMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::invalid("distance queries need a non-empty mesh"));
        }
        let mut out = MeshDistance {
            closed: mesh.is_watertight(),
            mesh: mesh.clone(),
            order: (0..mesh.triangles.len() as u32).collect(),
            nodes: Vec::new(),
        };
        let centroids: Vec<Vec3> = (0..mesh.triangles.len())
            .map(|t| {
                let [a, b, c] = mesh.triangle_points(t);
                (a + b + c) / 3.0
            })
            .collect();
        out.build(0, mesh.triangles.len(), &centroids);
        Ok(out)
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn mesh(&self) -> &SurfaceMesh {
        &self.mesh
    }

    fn build(&mut self, start: usize, end: usize, centroids: &[Vec3]) -> u32 {
        let mut bounds = Aabb::empty();
        for &t in &self.order[start..end] {
            for p in self.mesh.triangle_points(t as usize) {
                bounds.grow(&p);
            }
        }
        let id = self.nodes.len() as u32;
        if end - start <= 4 {
            self.nodes.push(BvhNode { bounds, left: start as u32, right: end as u32, leaf: true });
            return id;
        }
        let mut cb = Aabb::empty();
        for &t in &self.order[start..end] {
            cb.grow(&centroids[t as usize]);
        }
        let axis = (cb.hi - cb.lo).imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        self.nodes.push(BvhNode { bounds, left: 0, right: 0, leaf: false });
        let left = self.build(start, mid, centroids);
        let right = self.build(mid, end, centroids);
        let node = &mut self.nodes[id as usize];
        node.left = left;
        node.right = right;
        id
    }

    /// Exact closest point; `(squared distance, point, triangle)`.
    pub fn closest(&self, query: &Vec3) -> (f64, Vec3, usize) {
        let mut best = (f64::INFINITY, Vec3::zeros(), usize::MAX);
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            if node.bounds.distance_squared(query) > best.0 {
                continue;
            }
            if node.leaf {
                for &t in &self.order[node.left as usize..node.right as usize] {
                    let [a, b, c] = self.mesh.triangle_points(t as usize);
                    let cp = closest_point_on_triangle(query, &a, &b, &c);
                    let d2 = (cp - query).norm_squared();
                    if d2 < best.0 || (d2 == best.0 && (t as usize) < best.2) {
                        best = (d2, cp, t as usize);
                    }
                }
            } else {
                let (l, r) = (node.left, node.right);
                let dl = self.nodes[l as usize].bounds.distance_squared(query);
                let dr = self.nodes[r as usize].bounds.distance_squared(query);
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }

    pub fn unsigned_distance(&self, query: &Vec3) -> f64 {
        self.closest(query).0.sqrt()
    }

    pub fn winding_number(&self, query: &Vec3) -> f64 {
        winding_number_unchecked(&self.mesh, query)
    }

    /// Negative inside (winding number above 0.5). Open meshes fall back to
    /// the unsigned distance with `signed = false`.
    pub fn signed_distance(&self, query: &Vec3) -> SignedDistance {
        let (d2, closest, triangle) = self.closest(query);
        let d = d2.sqrt();
        if !self.closed {
            return SignedDistance { value: d, signed: false, closest, triangle };
        }
        let inside = d > 0.0 && self.winding_number(query) > 0.5;
        SignedDistance { value: if inside { -d } else { d }, signed: true, closest, triangle }
    }
}

/// One-off signed distance query; builds the acceleration structure.
pub fn signed_distance(mesh: &SurfaceMesh, query: &Vec3) -> Result<SignedDistance> {
    Ok(MeshDistance::new(mesh)?.signed_distance(query))
}

/// Signed distances for many points, reusing signs where possible.
///
/// A cached sign stays valid while a point moves less than its cached
/// distance (the ball around it cannot reach the surface), so only the
/// unsigned distance is recomputed there.
#[derive(Debug, Clone)]
pub struct SdfCache {
    points: Vec<Vec3>,
    values: Vec<f64>,
}

impl SdfCache {
    pub fn new(query: &MeshDistance, points: &[Vec3]) -> Self {
        let values = points.iter().map(|p| query.signed_distance(p).value).collect();
        SdfCache { points: points.to_vec(), values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn update(&mut self, query: &MeshDistance, points: &[Vec3]) {
        assert_eq!(points.len(), self.points.len());
        for (i, p) in points.iter().enumerate() {
            if *p == self.points[i] {
                continue;
            }
            let moved = (p - self.points[i]).norm();
            let old = self.values[i];
            if query.is_closed() && moved < old.abs() {
                let d = query.unsigned_distance(p);
                self.values[i] = if old < 0.0 { -d } else { d };
            } else {
                self.values[i] = query.signed_distance(p).value;
            }
            self.points[i] = *p;
        }
    }
}
