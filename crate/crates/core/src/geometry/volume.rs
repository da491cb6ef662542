use crate::error::{Error, Result};
use crate::mesh::SurfaceMesh;
use crate::Vec3;

/// Volume of the domain cube `[-1, 1]^3`.
pub const DOMAIN_VOLUME: f64 = 8.0;

/// Divergence-theorem volume without closure checks.
pub fn signed_volume_unchecked(mesh: &SurfaceMesh) -> f64 {
    mesh.triangles
        .iter()
        .map(|t| {
            let [a, b, c] = t.map(|v| mesh.positions[v as usize]);
            a.dot(&b.cross(&c))
        })
        .sum::<f64>()
        / 6.0
}

/// Enclosed volume of a closed mesh; positive for outward winding. An empty
/// mesh encloses nothing.
pub fn enclosed_volume(mesh: &SurfaceMesh) -> Result<f64> {
    if mesh.is_empty() {
        return Ok(0.0);
    }
    if !mesh.is_watertight() {
        return Err(Error::contract("enclosed volume needs a closed, consistently oriented mesh"));
    }
    Ok(signed_volume_unchecked(mesh))
}

/// Enclosed volume as a fraction of the domain cube.
pub fn normalized_volume(mesh: &SurfaceMesh) -> Result<f64> {
    let v = enclosed_volume(mesh)?;
    if v < 0.0 {
        return Err(Error::contract(format!("negative enclosed volume {v}: mesh is inside out")));
    }
    Ok(v / DOMAIN_VOLUME)
}

/// d(signed volume)/d(vertex position).
pub fn volume_gradient(mesh: &SurfaceMesh) -> Vec<Vec3> {
    let mut g = vec![Vec3::zeros(); mesh.positions.len()];
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|v| mesh.positions[v as usize]);
        g[t[0] as usize] += b.cross(&c) / 6.0;
        g[t[1] as usize] += c.cross(&a) / 6.0;
        g[t[2] as usize] += a.cross(&b) / 6.0;
    }
    g
}
