use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::SurfaceMesh;
use crate::Vec3;

/// A surface point with the barycentric weights that generated it, so the
/// point is a linear function of the triangle's vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub point: Vec3,
    pub triangle: u32,
    pub barycentric: [f64; 3],
}

/// Draws `count` i.i.d. area-weighted uniform points. Deterministic in
/// `seed`. Zero-area triangles are never selected.
pub fn sample_surface(mesh: &SurfaceMesh, count: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::invalid("cannot sample a mesh with zero surface area"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.gen::<f64>() * total;
        let tri = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        let barycentric = [1.0 - s, s * (1.0 - r2), s * r2];
        let [a, b, c] = mesh.triangle_points(tri);
        out.push(SurfaceSample {
            point: a * barycentric[0] + b * barycentric[1] + c * barycentric[2],
            triangle: tri as u32,
            barycentric,
        });
    }
    Ok(out)
}

/// Recomputes sample points for moved mesh vertices (same connectivity).
pub fn resample_points(mesh: &SurfaceMesh, samples: &[SurfaceSample]) -> Vec<Vec3> {
    samples
        .iter()
        .map(|s| {
            let [a, b, c] = mesh.triangle_points(s.triangle as usize);
            a * s.barycentric[0] + b * s.barycentric[1] + c * s.barycentric[2]
        })
        .collect()
}

/// Scatters per-sample cotangents onto mesh vertices.
pub fn samples_backward(mesh: &SurfaceMesh, samples: &[SurfaceSample], grads: &[Vec3]) -> Vec<Vec3> {
    let mut out = vec![Vec3::zeros(); mesh.positions.len()];
    for (s, g) in samples.iter().zip(grads) {
        let tri = mesh.triangles[s.triangle as usize];
        for k in 0..3 {
            out[tri[k] as usize] += g * s.barycentric[k];
        }
    }
    out
}
