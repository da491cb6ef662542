//! Differentiable marching tetrahedra.
//!
//! A vertex is inside when its SDF is strictly negative; zero counts as
//! outside, so every crossing edge joins one inside and one outside vertex.
//! Surface vertices are shared between all tets incident to a crossing edge
//! (keyed by the sorted global vertex pair), which makes the output watertight
//! whenever the level set stays away from the domain boundary.
//!
//! Gradients are defined within a fixed sign pattern: the case selection is
//! piecewise constant and carries no derivative.

use std::collections::HashMap;

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::mesh::{EdgeProvenance, SurfaceMesh};
use crate::tetgrid::TetGrid;
use crate::Vec3;

/// Local tet edges as vertex pairs; the array index is the edge identifier.
pub const TET_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Triangles per case, as triples of local edge ids. Bit `i` of the case
/// index is set when vertex `i` is inside. Winding makes the triangle normal
/// point towards the outside vertices of a positively oriented tet.
pub const CASE_TABLE: [&[[u8; 3]]; 16] = [
    &[],
    &[[0, 1, 2]],
    &[[0, 4, 3]],
    &[[1, 2, 4], [1, 4, 3]],
    &[[1, 3, 5]],
    &[[0, 5, 2], [0, 3, 5]],
    &[[0, 4, 5], [0, 5, 1]],
    &[[2, 4, 5]],
    &[[2, 5, 4]],
    &[[0, 1, 5], [0, 5, 4]],
    &[[0, 5, 3], [0, 2, 5]],
    &[[1, 5, 3]],
    &[[1, 3, 4], [1, 4, 2]],
    &[[0, 3, 4]],
    &[[0, 2, 1]],
    &[],
];

pub fn is_inside(s: f64) -> bool {
    s < 0.0
}

/// Case index for four SDF values.
pub fn classify_tet(sdf: [f64; 4]) -> Result<usize> {
    if let Some(i) = sdf.iter().position(|s| !s.is_finite()) {
        return Err(Error::numeric(format!("non-finite sdf at tet vertex {i}")));
    }
    Ok(sdf
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &s)| if is_inside(s) { acc | (1 << i) } else { acc }))
}

/// Zero crossing on the segment `va -> vb` plus its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCrossing {
    pub point: Vec3,
    pub t: f64,
    /// d point / d sa
    pub d_sa: Vec3,
    /// d point / d sb
    pub d_sb: Vec3,
}

/// Linear interpolation of the zero crossing. `d point / d va = (1 - t) I` and
/// `d point / d vb = t I` follow from `t`.
pub fn edge_crossing(va: &Vec3, vb: &Vec3, sa: f64, sb: f64) -> Result<EdgeCrossing> {
    if is_inside(sa) == is_inside(sb) {
        return Err(Error::contract(format!("edge endpoints do not straddle zero (sa={sa}, sb={sb})")));
    }
    let denom = sa - sb;
    let t = sa / denom;
    let dir = vb - va;
    let inv2 = 1.0 / (denom * denom);
    Ok(EdgeCrossing {
        point: va + dir * t,
        t,
        d_sa: dir * (-sb * inv2),
        d_sb: dir * (sa * inv2),
    })
}

/// [`edge_crossing`] recorded on a tape.
pub fn edge_crossing_on_tape(tape: &mut Tape, va: [Var; 3], vb: [Var; 3], sa: Var, sb: Var) -> Result<[Var; 3]> {
    if is_inside(tape.value(sa)) == is_inside(tape.value(sb)) {
        return Err(Error::contract("edge endpoints do not straddle zero"));
    }
    let denom = tape.sub(sa, sb);
    let t = tape.div(sa, denom);
    let mut out = [va[0]; 3];
    for k in 0..3 {
        let d = tape.sub(vb[k], va[k]);
        let td = tape.mul(t, d);
        out[k] = tape.add(va[k], td);
    }
    Ok(out)
}

/// Extracts the zero level set of `grid` at its deformed vertex positions.
///
/// Triangles are emitted in `(tet index, local triangle index)` order and
/// surface vertices in order of first use, so the output is a pure function
/// of the grid.
pub fn marching_tetrahedra(grid: &TetGrid) -> Result<SurfaceMesh> {
    let sdf = grid.sdf();
    let verts = grid.vertices();
    if let Some(i) = sdf.iter().position(|s| !s.is_finite()) {
        return Err(Error::numeric(format!("non-finite sdf value at vertex {i}")));
    }
    let mut positions = Vec::new();
    let mut provenance = Vec::new();
    let mut triangles = Vec::new();
    let mut lookup: HashMap<(u32, u32), u32> = HashMap::new();

    for (ti, tet) in grid.tets().iter().enumerate() {
        let case = tet
            .iter()
            .enumerate()
            .fold(0usize, |acc, (i, &v)| if is_inside(sdf[v as usize]) { acc | (1 << i) } else { acc });
        let tris = CASE_TABLE[case];
        if tris.is_empty() {
            continue;
        }
        for tri in tris {
            let mut out = [0u32; 3];
            for (slot, &edge) in tri.iter().enumerate() {
                let (la, lb) = TET_EDGES[edge as usize];
                let (ga, gb) = (tet[la], tet[lb]);
                let (a, b) = (ga.min(gb), ga.max(gb));
                out[slot] = *lookup.entry((a, b)).or_insert_with(|| {
                    let (ia, ib) = (a as usize, b as usize);
                    let c = edge_crossing(&verts[ia], &verts[ib], sdf[ia], sdf[ib])
                        .expect("case table only selects straddling edges");
                    positions.push(c.point);
                    provenance.push(EdgeProvenance { tet: ti as u32, local_edge: edge, a, b, t: c.t });
                    (positions.len() - 1) as u32
                });
            }
            triangles.push(out);
        }
    }
    Ok(SurfaceMesh { positions, triangles, provenance: Some(provenance) })
}

/// Gradients of a scalar loss with respect to grid quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGradients {
    pub sdf: Vec<f64>,
    /// With respect to deformed vertex positions (no clamp mask applied).
    pub positions: Vec<Vec3>,
}

impl GridGradients {
    /// Position gradients with saturated offset components zeroed.
    pub fn offsets(&self, grid: &TetGrid) -> Vec<Vec3> {
        self.positions
            .iter()
            .zip(grid.clamp_mask())
            .map(|(g, mask)| Vec3::from_fn(|c, _| if mask[c] { 0.0 } else { g[c] }))
            .collect()
    }
}

/// Pulls per-surface-vertex cotangents back onto the grid through the
/// edge-crossing partials. Summation order is fixed by vertex index.
pub fn backward_surface_full(mesh: &SurfaceMesh, vertex_grads: &[Vec3], grid: &TetGrid) -> Result<GridGradients> {
    let prov = mesh
        .provenance
        .as_ref()
        .ok_or_else(|| Error::contract("surface mesh carries no grid provenance"))?;
    if vertex_grads.len() != prov.len() {
        return Err(Error::invalid("one cotangent per surface vertex required"));
    }
    let mut gs = vec![0.0; grid.vertex_count()];
    let mut gp = vec![Vec3::zeros(); grid.vertex_count()];
    let sdf = grid.sdf();
    let verts = grid.vertices();
    for (p, g) in prov.iter().zip(vertex_grads) {
        let (a, b) = (p.a as usize, p.b as usize);
        if a >= verts.len() || b >= verts.len() {
            return Err(Error::contract("provenance refers outside the grid"));
        }
        let c = edge_crossing(&verts[a], &verts[b], sdf[a], sdf[b])?;
        gs[a] += g.dot(&c.d_sa);
        gs[b] += g.dot(&c.d_sb);
        gp[a] += g * (1.0 - c.t);
        gp[b] += g * c.t;
    }
    Ok(GridGradients { sdf: gs, positions: gp })
}

/// Returns `(grad_sdf, grad_offsets)`; offset gradients are masked where the
/// clamp saturated.
pub fn backward_surface(mesh: &SurfaceMesh, vertex_grads: &[Vec3], grid: &TetGrid) -> Result<(Vec<f64>, Vec<Vec3>)> {
    let g = backward_surface_full(mesh, vertex_grads, grid)?;
    let off = g.offsets(grid);
    Ok((g.sdf, off))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tetgrid::{build_uniform_grid, tet_signed_volume};

    #[test]
    fn classify_examples() {
        assert_eq!(classify_tet([1.0, 1.0, 1.0, 1.0]).unwrap(), 0);
        assert_eq!(classify_tet([-1.0, 1.0, 1.0, 1.0]).unwrap(), 1);
        assert_eq!(classify_tet([-1.0, -1.0, 1.0, 1.0]).unwrap(), 3);
        assert_eq!(classify_tet([0.0, 0.0, 0.0, 0.0]).unwrap(), 0);
        assert!(matches!(classify_tet([f64::NAN, 1.0, 1.0, 1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn crossing_examples() {
        let a = Vec3::zeros();
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = edge_crossing(&a, &b, -1.0, 1.0).unwrap();
        assert_eq!((c.point, c.t), (Vec3::new(0.5, 0.0, 0.0), 0.5));
        let c = edge_crossing(&a, &b, -1.0, 3.0).unwrap();
        assert_eq!((c.point, c.t), (Vec3::new(0.25, 0.0, 0.0), 0.25));
        assert!(matches!(edge_crossing(&a, &b, 1.0, 2.0), Err(Error::ContractViolation(_))));
        assert!(matches!(edge_crossing(&a, &b, -1.0, -2.0), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn crossing_partials_match_finite_differences() {
        let va = Vec3::new(0.1, -0.2, 0.3);
        let vb = Vec3::new(0.7, 0.4, -0.1);
        let (sa, sb) = (-0.3, 0.8);
        let c = edge_crossing(&va, &vb, sa, sb).unwrap();
        let h = 1e-6;
        let fd_a = (edge_crossing(&va, &vb, sa + h, sb).unwrap().point - edge_crossing(&va, &vb, sa - h, sb).unwrap().point) / (2.0 * h);
        let fd_b = (edge_crossing(&va, &vb, sa, sb + h).unwrap().point - edge_crossing(&va, &vb, sa, sb - h).unwrap().point) / (2.0 * h);
        for k in 0..3 {
            assert!((fd_a[k] - c.d_sa[k]).abs() <= 1e-5 * c.d_sa[k].abs().max(1e-8));
            assert!((fd_b[k] - c.d_sb[k]).abs() <= 1e-5 * c.d_sb[k].abs().max(1e-8));
        }
    }

    #[test]
    fn single_edge_gradient_formula() {
        let g = build_uniform_grid(1).unwrap();
        // Only vertex 0 inside: three crossing edges from vertex 0.
        let mut sdf = vec![1.0; 8];
        sdf[0] = -1.0;
        let mut g = g;
        g.set_sdf(&sdf).unwrap();
        let mesh = marching_tetrahedra(&g).unwrap();
        let prov = mesh.provenance.clone().unwrap();
        let target = prov.iter().position(|p| (p.a, p.b) == (0, 1)).unwrap();
        let mut cot = vec![Vec3::zeros(); mesh.vertex_count()];
        cot[target] = Vec3::new(1.0, 0.0, 0.0);
        let (gs, _) = backward_surface(&mesh, &cot, &g).unwrap();
        let (sa, sb) = (-1.0f64, 1.0f64);
        let dx = g.vertices()[1].x - g.vertices()[0].x;
        assert!((gs[0] - (-sb / (sa - sb).powi(2) * dx)).abs() < 1e-15);

        let zero = vec![Vec3::zeros(); mesh.vertex_count()];
        let (gs, go) = backward_surface(&mesh, &zero, &g).unwrap();
        assert!(gs.iter().all(|&v| v == 0.0) && go.iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn missing_provenance_is_a_contract_violation() {
        let g = build_uniform_grid(1).unwrap();
        let mesh = crate::mesh::unit_cube();
        let cot = vec![Vec3::zeros(); mesh.vertex_count()];
        assert!(matches!(backward_surface(&mesh, &cot, &g), Err(Error::ContractViolation(_))));
    }

    /// Each local triangle must separate the inside vertices from the outside
    /// ones and face the outside.
    #[test]
    fn case_table_separates_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let mut v: [Vec3; 4] = std::array::from_fn(|_| Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
            if tet_signed_volume(&v[0], &v[1], &v[2], &v[3]) < 0.0 {
                v.swap(1, 2);
            }
            if tet_signed_volume(&v[0], &v[1], &v[2], &v[3]).abs() < 1e-3 {
                continue;
            }
            for case in 0..16usize {
                let s: [f64; 4] = std::array::from_fn(|i| {
                    let m = rng.gen_range(0.05..2.0);
                    if case >> i & 1 == 1 {
                        -m
                    } else {
                        m
                    }
                });
                assert_eq!(classify_tet(s).unwrap(), case);
                let tris = CASE_TABLE[case];
                let n_inside = case.count_ones();
                let expected = match n_inside {
                    0 | 4 => 0,
                    1 | 3 => 1,
                    _ => 2,
                };
                assert_eq!(tris.len(), expected, "case {case}");
                for tri in tris {
                    let p: Vec<Vec3> = tri
                        .iter()
                        .map(|&e| {
                            let (a, b) = TET_EDGES[e as usize];
                            edge_crossing(&v[a], &v[b], s[a], s[b]).unwrap().point
                        })
                        .collect();
                    let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
                    for i in 0..4 {
                        let side = n.dot(&(v[i] - p[0]));
                        if s[i] < 0.0 {
                            assert!(side < 0.0, "case {case}: inside vertex {i} on the outer side");
                        } else {
                            assert!(side > 0.0, "case {case}: outside vertex {i} on the inner side");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_positive_grid_is_empty() {
        let g = build_uniform_grid(4).unwrap();
        assert!(marching_tetrahedra(&g).unwrap().is_empty());
    }

    #[test]
    fn extraction_is_deterministic_and_tape_route_agrees() {
        let g = build_uniform_grid(6).unwrap().set_sdf_from_field(|p| p.norm() - 0.55).unwrap();
        let m1 = marching_tetrahedra(&g).unwrap();
        let m2 = marching_tetrahedra(&g).unwrap();
        assert_eq!(m1, m2);

        let mut tape = Tape::new();
        let va = tape.vars(&[0.1, 0.2, 0.3]);
        let vb = tape.vars(&[0.5, -0.2, 0.9]);
        let sa = tape.var(-0.4);
        let sb = tape.var(0.9);
        let p = edge_crossing_on_tape(&mut tape, [va[0], va[1], va[2]], [vb[0], vb[1], vb[2]], sa, sb).unwrap();
        let direct = edge_crossing(&Vec3::new(0.1, 0.2, 0.3), &Vec3::new(0.5, -0.2, 0.9), -0.4, 0.9).unwrap();
        let grads = tape.backward(p[0]).unwrap();
        assert!((tape.value(p[0]) - direct.point.x).abs() < 1e-15);
        assert!((grads.wrt(sa) - direct.d_sa.x).abs() < 1e-15);
        assert!((grads.wrt(sb) - direct.d_sb.x).abs() < 1e-15);
        assert!((grads.wrt(va[0]) - (1.0 - direct.t)).abs() < 1e-15);
    }
}
