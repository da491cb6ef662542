//! Planar sections of triangle meshes and contour CSV files.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::march::edge_crossing;
use crate::mesh::SurfaceMesh;
use crate::Vec3;

/// The plane `{p : normal · p = offset}` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub normal: Vec3,
    pub offset: f64,
}

impl PlaneSpec {
    /// Normalizes `normal`; the offset is taken along the normalized normal.
    pub fn new(normal: Vec3, offset: f64) -> Result<Self> {
        let len = normal.norm();
        if !(len > 0.0) || !offset.is_finite() {
            return Err(Error::invalid("plane needs a non-zero normal and finite offset"));
        }
        Ok(PlaneSpec { normal: normal / len, offset })
    }

    pub fn z(offset: f64) -> Self {
        PlaneSpec { normal: Vec3::z(), offset }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Crossing of mesh edge `a -> b` with the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionCrossing {
    pub a: u32,
    pub b: u32,
}

/// One emitted section point: either an edge crossing or the midpoint of the
/// two crossings of one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SectionPoint {
    Endpoint(SectionCrossing),
    Midpoint(SectionCrossing, SectionCrossing),
}

/// Section points with the recipe needed for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub points: Vec<Vec3>,
    pub recipe: Vec<SectionPoint>,
}

fn crossing_point(mesh: &SurfaceMesh, plane: &PlaneSpec, c: SectionCrossing) -> Vec3 {
    let (pa, pb) = (mesh.positions[c.a as usize], mesh.positions[c.b as usize]);
    let (da, db) = (plane.signed_distance(&pa), plane.signed_distance(&pb));
    let mut p = edge_crossing(&pa, &pb, da, db).expect("section edges straddle the plane").point;
    // Remove the rounding residual so the point lies on the plane.
    p -= plane.normal * plane.signed_distance(&p);
    p
}

/// Intersects every triangle with the plane. Each crossing triangle emits
/// both segment endpoints followed by the segment midpoint. A vertex exactly
/// on the plane counts as being on the positive side: a plane touching the
/// mesh only at a vertex yields nothing when the rest of the mesh lies above
/// it, and degenerate points at that vertex when the rest lies below.
pub fn plane_section_detailed(mesh: &SurfaceMesh, plane: &PlaneSpec) -> Section {
    let dist: Vec<f64> = mesh.positions.iter().map(|p| plane.signed_distance(p)).collect();
    let mut recipe = Vec::new();
    for tri in &mesh.triangles {
        let neg: [bool; 3] = tri.map(|v| dist[v as usize] < 0.0);
        let n_neg = neg.iter().filter(|&&b| b).count();
        if n_neg == 0 || n_neg == 3 {
            continue;
        }
        let mut found = [SectionCrossing { a: 0, b: 0 }; 2];
        let mut k = 0;
        for e in 0..3 {
            let (i, j) = (e, (e + 1) % 3);
            if neg[i] != neg[j] {
                found[k] = SectionCrossing { a: tri[i], b: tri[j] };
                k += 1;
            }
        }
        recipe.push(SectionPoint::Endpoint(found[0]));
        recipe.push(SectionPoint::Endpoint(found[1]));
        recipe.push(SectionPoint::Midpoint(found[0], found[1]));
    }
    let points = recipe
        .iter()
        .map(|r| match *r {
            SectionPoint::Endpoint(c) => crossing_point(mesh, plane, c),
            SectionPoint::Midpoint(c, d) => {
                let m = (crossing_point(mesh, plane, c) + crossing_point(mesh, plane, d)) * 0.5;
                m - plane.normal * plane.signed_distance(&m)
            }
        })
        .collect();
    Section { points, recipe }
}

pub fn plane_section(mesh: &SurfaceMesh, plane: &PlaneSpec) -> Vec<Vec3> {
    plane_section_detailed(mesh, plane).points
}

fn crossing_backward(mesh: &SurfaceMesh, plane: &PlaneSpec, c: SectionCrossing, g: &Vec3, out: &mut [Vec3]) {
    let (pa, pb) = (mesh.positions[c.a as usize], mesh.positions[c.b as usize]);
    let (da, db) = (plane.signed_distance(&pa), plane.signed_distance(&pb));
    let x = edge_crossing(&pa, &pb, da, db).expect("section edges straddle the plane");
    // point = pa + t (pb - pa) with t depending on pa, pb through da, db.
    out[c.a as usize] += g * (1.0 - x.t) + plane.normal * g.dot(&x.d_sa);
    out[c.b as usize] += g * x.t + plane.normal * g.dot(&x.d_sb);
}

/// Pulls cotangents on section points back to mesh vertices.
pub fn section_backward(mesh: &SurfaceMesh, plane: &PlaneSpec, section: &Section, grads: &[Vec3]) -> Vec<Vec3> {
    let mut out = vec![Vec3::zeros(); mesh.positions.len()];
    for (r, g) in section.recipe.iter().zip(grads) {
        match *r {
            SectionPoint::Endpoint(c) => crossing_backward(mesh, plane, c, g, &mut out),
            SectionPoint::Midpoint(c, d) => {
                let half = g * 0.5;
                crossing_backward(mesh, plane, c, &half, &mut out);
                crossing_backward(mesh, plane, d, &half, &mut out);
            }
        }
    }
    out
}

/// `x,y,z,plane_id` rows with a header line.
pub fn contours_to_csv(contours: &[Vec<Vec3>]) -> String {
    let mut s = String::from("x,y,z,plane_id\n");
    for (id, pts) in contours.iter().enumerate() {
        for p in pts {
            let _ = writeln!(s, "{:?},{:?},{:?},{id}", p.x, p.y, p.z);
        }
    }
    s
}

/// Parses [`contours_to_csv`] output; `plane_count` sets how many (possibly
/// empty) contours to return.
pub fn contours_from_csv(text: &str, plane_count: usize) -> Result<Vec<Vec<Vec3>>> {
    let mut out = vec![Vec::new(); plane_count];
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with('x') || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(Error::format(format!("contour csv line {}: expected 4 columns", lineno + 1)));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::format(format!("line {}: {e}", lineno + 1)));
        let id: usize = cols[3].parse().map_err(|e| Error::format(format!("line {}: {e}", lineno + 1)))?;
        if id >= plane_count {
            return Err(Error::format(format!("line {}: plane id {id} out of range", lineno + 1)));
        }
        out[id].push(Vec3::new(parse(cols[0])?, parse(cols[1])?, parse(cols[2])?));
    }
    Ok(out)
}
