//! Indexed triangle meshes, Wavefront OBJ I/O and closed primitive shapes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Vec3;

/// Links a surface vertex to the grid edge it was interpolated on:
/// `position = (1 - t) * v[a] + t * v[b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeProvenance {
    pub tet: u32,
    pub local_edge: u8,
    pub a: u32,
    pub b: u32,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurfaceMesh {
    pub positions: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub provenance: Option<Vec<EdgeProvenance>>,
}

impl SurfaceMesh {
    pub fn new(positions: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = SurfaceMesh { positions, triangles, provenance: None };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Index range and degeneracy checks.
    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v as usize >= n) {
                return Err(Error::invalid(format!("triangle {i} has an out-of-range index")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::invalid(format!("triangle {i} repeats a vertex")));
            }
        }
        if let Some(p) = &self.provenance {
            if p.len() != n {
                return Err(Error::invalid("provenance length differs from vertex count"));
            }
        }
        Ok(())
    }

    pub fn triangle_points(&self, tri: usize) -> [Vec3; 3] {
        self.triangles[tri].map(|v| self.positions[v as usize])
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.triangle_points(tri);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Undirected edge -> number of incident triangles.
    pub fn edge_degrees(&self) -> HashMap<(u32, u32), usize> {
        let mut map = HashMap::with_capacity(self.triangles.len() * 3 / 2);
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *map.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        map
    }

    /// Every edge borders exactly two triangles and each directed edge
    /// appears once (consistent orientation).
    pub fn is_watertight(&self) -> bool {
        if self.triangles.is_empty() {
            return false;
        }
        let mut directed: HashMap<(u32, u32), usize> = HashMap::with_capacity(self.triangles.len() * 3);
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &c)| c == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// V - E + F over the vertices referenced by triangles.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.positions.len()];
        for t in &self.triangles {
            for &v in t {
                used[v as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_degrees().len() as i64;
        v - e + self.triangles.len() as i64
    }

    /// Flips every triangle's winding.
    pub fn reversed(&self) -> Self {
        SurfaceMesh {
            positions: self.positions.clone(),
            triangles: self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn map_positions<F: Fn(&Vec3) -> Vec3>(&self, f: F) -> Self {
        SurfaceMesh {
            positions: self.positions.iter().map(f).collect(),
            triangles: self.triangles.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Axis-aligned bounds, `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.positions.first()?;
        Some(self.positions.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    pub fn to_obj_string(&self) -> String {
        let mut s = String::with_capacity(self.positions.len() * 40 + self.triangles.len() * 20);
        for p in &self.positions {
            // `{:?}` on f64 prints the shortest string that round-trips.
            let _ = writeln!(s, "v {:?} {:?} {:?}", p.x, p.y, p.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    /// Parses `v`/`f` records. Polygon faces are fan-triangulated, `v/vt/vn`
    /// index forms and negative indices are accepted, other records ignored.
    pub fn from_obj_str(text: &str) -> Result<Self> {
        let mut positions = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let coords: Vec<f64> = it
                        .take(3)
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::format(format!("line {}: {e}", lineno + 1)))?;
                    if coords.len() != 3 {
                        return Err(Error::format(format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                    }
                    positions.push(Vec3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for tok in it {
                        let head = tok.split('/').next().unwrap_or("");
                        let raw: i64 = head
                            .parse()
                            .map_err(|e| Error::format(format!("line {}: {e}", lineno + 1)))?;
                        let resolved = if raw > 0 {
                            raw - 1
                        } else if raw < 0 {
                            positions.len() as i64 + raw
                        } else {
                            -1
                        };
                        if resolved < 0 {
                            return Err(Error::format(format!("line {}: bad face index {raw}", lineno + 1)));
                        }
                        idx.push(resolved as u32);
                    }
                    if idx.len() < 3 {
                        return Err(Error::format(format!("line {}: face needs 3 indices", lineno + 1)));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        let mesh = SurfaceMesh { positions, triangles, provenance: None };
        mesh.validate().map_err(|e| Error::format(e.to_string()))?;
        Ok(mesh)
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_obj_string())?;
        Ok(())
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_obj_str(&text)
    }
}

/// Merges vertices that are bit-identical; used by the primitive builders.
fn weld(positions: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> SurfaceMesh {
    let mut remap = Vec::with_capacity(positions.len());
    let mut seen: HashMap<[u64; 3], u32> = HashMap::new();
    let mut out = Vec::new();
    for p in &positions {
        let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
        let id = *seen.entry(key).or_insert_with(|| {
            out.push(*p);
            (out.len() - 1) as u32
        });
        remap.push(id);
    }
    let triangles = triangles
        .into_iter()
        .map(|t| t.map(|v| remap[v as usize]))
        .collect();
    SurfaceMesh { positions: out, triangles, provenance: None }
}

/// Icosphere centred at the origin, outward winding.
pub fn icosphere(radius: f64, subdivisions: u32) -> SurfaceMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut positions: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut triangles: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        let mut mid = |a: u32, b: u32, positions: &mut Vec<Vec3>| -> u32 {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (positions[a as usize] + positions[b as usize]).normalize();
                positions.push(m);
                (positions.len() - 1) as u32
            })
        };
        for [a, b, c] in triangles {
            let ab = mid(a, b, &mut positions);
            let bc = mid(b, c, &mut positions);
            let ca = mid(c, a, &mut positions);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    for p in &mut positions {
        *p *= radius;
    }
    SurfaceMesh { positions, triangles, provenance: None }
}

/// Axis-aligned box centred at the origin, each face split into
/// `divisions x divisions` quads, outward winding.
pub fn box_mesh(half_extents: Vec3, divisions: u32) -> SurfaceMesh {
    let d = divisions.max(1);
    let mut positions = Vec::new();
    let mut triangles = Vec::new();
    for axis in 0..3 {
        for sign in [-1.0f64, 1.0] {
            let u_axis = (axis + 1) % 3;
            let v_axis = (axis + 2) % 3;
            let base = positions.len() as u32;
            for j in 0..=d {
                for i in 0..=d {
                    let mut p = Vec3::zeros();
                    p[axis] = sign * half_extents[axis];
                    p[u_axis] = half_extents[u_axis] * (-1.0 + 2.0 * i as f64 / d as f64);
                    p[v_axis] = half_extents[v_axis] * (-1.0 + 2.0 * j as f64 / d as f64);
                    positions.push(p);
                }
            }
            let id = |i: u32, j: u32| base + i + (d + 1) * j;
            for j in 0..d {
                for i in 0..d {
                    let (a, b, c, e) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                    // (u, v, axis) is right-handed, so CCW in (u, v) faces +axis.
                    if sign > 0.0 {
                        triangles.push([a, b, c]);
                        triangles.push([a, c, e]);
                    } else {
                        triangles.push([a, c, b]);
                        triangles.push([a, e, c]);
                    }
                }
            }
        }
    }
    weld(positions, triangles)
}

/// Unit-side cube `[-0.5, 0.5]^3` made of 12 triangles.
pub fn unit_cube() -> SurfaceMesh {
    box_mesh(Vec3::new(0.5, 0.5, 0.5), 1)
}

/// Capsule along z: a cylinder of `radius` and half-length `half_length`
/// capped by hemispheres.
pub fn capsule(radius: f64, half_length: f64, segments: u32, rings: u32) -> SurfaceMesh {
    let segments = segments.max(3);
    let rings = rings.max(1);
    // Latitude rows from the south pole to the north pole; the equator row is
    // duplicated and shifted to form the cylinder.
    let mut rows: Vec<(f64, f64)> = Vec::new(); // (ring radius, z)
    for k in 1..=rings {
        let theta = -std::f64::consts::FRAC_PI_2 + std::f64::consts::FRAC_PI_2 * k as f64 / rings as f64;
        rows.push((radius * theta.cos(), radius * theta.sin() - half_length));
    }
    for k in 0..rings {
        let theta = std::f64::consts::FRAC_PI_2 * k as f64 / rings as f64;
        rows.push((radius * theta.cos(), radius * theta.sin() + half_length));
    }
    let mut positions = vec![Vec3::new(0.0, 0.0, -radius - half_length)];
    for &(r, z) in &rows {
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            positions.push(Vec3::new(r * phi.cos(), r * phi.sin(), z));
        }
    }
    positions.push(Vec3::new(0.0, 0.0, radius + half_length));
    let north = (positions.len() - 1) as u32;
    let ring = |row: usize, s: u32| 1 + row as u32 * segments + (s % segments);
    let mut triangles = Vec::new();
    for s in 0..segments {
        triangles.push([0, ring(0, s + 1), ring(0, s)]);
    }
    for row in 0..rows.len() - 1 {
        for s in 0..segments {
            let (a, b) = (ring(row, s), ring(row, s + 1));
            let (c, d) = (ring(row + 1, s + 1), ring(row + 1, s));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let last = rows.len() - 1;
    for s in 0..segments {
        triangles.push([north, ring(last, s), ring(last, s + 1)]);
    }
    SurfaceMesh { positions, triangles, provenance: None }
}
