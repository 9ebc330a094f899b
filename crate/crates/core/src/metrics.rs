//! Overhang and intermediate-density measures.
//!
//! The projected undercut perimeter integrates
//! `H(b·∇ρ̄/|∇ρ̄| − cos ᾱ) b·∇ρ̄` with the gradient of the nodal ρ̄ field
//! taken at element centroids (one-point quadrature).

use crate::error::{Error, Result};
use crate::filter::gather_transpose_add;
use crate::mesh::StructuredMesh;

/// Default Heaviside sharpness ζ.
pub const ZETA: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverhangReport {
    pub angle_deg: f64,
    pub zeta: f64,
    pub pup: f64,
    pub npup: f64,
}

/// Shifted smooth Heaviside 1 / (1 + exp(−2ζξ)) and its derivative.
pub fn heaviside(xi: f64, zeta: f64) -> (f64, f64) {
    let h = 1.0 / (1.0 + (-2.0 * zeta * xi).exp());
    (h, 2.0 * zeta * h * (1.0 - h))
}

/// Centroid gradient coefficients: ∂N_a/∂x_k at the element centre.
fn centroid_gradients(mesh: &StructuredMesh) -> Vec<[f64; 3]> {
    let dim = mesh.dim();
    let size = mesh.element_size();
    let scale = (1usize << (dim - 1)) as f64;
    (0..mesh.nodes_per_element())
        .map(|a| {
            let mut g = [0.0; 3];
            for k in 0..dim {
                let s = if (a >> k) & 1 == 1 { 1.0 } else { -1.0 };
                g[k] = s / (scale * size[k]);
            }
            g
        })
        .collect()
}

fn check_angle(angle_deg: f64, zeta: f64) -> Result<()> {
    if !(angle_deg > 0.0 && angle_deg <= 90.0) {
        return Err(Error::invalid(format!("threshold angle {angle_deg} outside (0, 90]")));
    }
    if !(zeta > 0.0) {
        return Err(Error::invalid("Heaviside sharpness must be positive"));
    }
    Ok(())
}

fn gradient_guard(mesh: &StructuredMesh) -> f64 {
    let h = mesh.element_size().into_iter().fold(f64::INFINITY, f64::min);
    1e-8 / h
}

/// P_ᾱ of a nodal ρ̄ field.
pub fn pup(mesh: &StructuredMesh, rho_nodal: &[f64], angle_deg: f64, zeta: f64) -> Result<f64> {
    check_angle(angle_deg, zeta)?;
    if rho_nodal.len() != mesh.n_nodes() {
        return Err(Error::invalid("nodal density length does not match the mesh"));
    }
    let grads = centroid_gradients(mesh);
    let dim = mesh.dim();
    let nen = mesh.nodes_per_element();
    let b = mesh.build_axis().index();
    let cos_a = angle_deg.to_radians().cos();
    let eps = gradient_guard(mesh);
    let ve = mesh.element_volume();
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let nodes = mesh.element_nodes(e);
        let mut g = [0.0; 3];
        for a in 0..nen {
            let r = rho_nodal[nodes[a]];
            for k in 0..dim {
                g[k] += r * grads[a][k];
            }
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < eps {
            continue;
        }
        let s = g[b];
        total += heaviside(s / norm - cos_a, zeta).0 * s * ve;
    }
    Ok(total)
}

/// ∂P_ᾱ/∂ρ̄ at the nodes.
pub fn pup_gradient(mesh: &StructuredMesh, rho_nodal: &[f64], angle_deg: f64, zeta: f64) -> Result<Vec<f64>> {
    check_angle(angle_deg, zeta)?;
    if rho_nodal.len() != mesh.n_nodes() {
        return Err(Error::invalid("nodal density length does not match the mesh"));
    }
    let grads = centroid_gradients(mesh);
    let dim = mesh.dim();
    let nen = mesh.nodes_per_element();
    let b = mesh.build_axis().index();
    let cos_a = angle_deg.to_radians().cos();
    let eps = gradient_guard(mesh);
    let ve = mesh.element_volume();
    let mut out = vec![0.0; mesh.n_nodes()];
    for e in 0..mesh.n_elements() {
        let nodes = mesh.element_nodes(e);
        let mut g = [0.0; 3];
        for a in 0..nen {
            let r = rho_nodal[nodes[a]];
            for k in 0..dim {
                g[k] += r * grads[a][k];
            }
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < eps {
            continue;
        }
        let s = g[b];
        let (h, dh) = heaviside(s / norm - cos_a, zeta);
        // d/dg of H(s/|g| − c) s
        let mut df = [0.0; 3];
        for k in 0..dim {
            let bk = if k == b { 1.0 } else { 0.0 };
            let dxi = bk / norm - s * g[k] / (norm * norm * norm);
            df[k] = dh * dxi * s + h * bk;
        }
        for a in 0..nen {
            let v: f64 = (0..dim).map(|k| df[k] * grads[a][k]).sum();
            out[nodes[a]] += ve * v;
        }
    }
    Ok(out)
}

/// NP_ᾱ = P_ᾱ / |build plate|.
pub fn npup(mesh: &StructuredMesh, pup_value: f64) -> f64 {
    pup_value / mesh.plate_measure()
}

/// One overhang report per threshold angle.
pub fn npup_sweep(
    mesh: &StructuredMesh,
    rho_nodal: &[f64],
    angles_deg: &[f64],
    zeta: f64,
) -> Result<Vec<OverhangReport>> {
    if angles_deg.is_empty() {
        return Err(Error::invalid("angle list is empty"));
    }
    angles_deg
        .iter()
        .map(|&a| {
            let p = pup(mesh, rho_nodal, a, zeta)?;
            Ok(OverhangReport {
                angle_deg: a,
                zeta,
                pup: p,
                npup: npup(mesh, p),
            })
        })
        .collect()
}

/// ∫ 4ρ̄(1 − ρ̄) dx / |Ω| with elementwise ρ̄.
pub fn grayness(mesh: &StructuredMesh, rho_bar: &[f64]) -> f64 {
    let n = rho_bar.len().max(1) as f64;
    debug_assert_eq!(rho_bar.len(), mesh.n_elements());
    rho_bar.iter().map(|&r| 4.0 * r * (1.0 - r)).sum::<f64>() / n
}

/// Gradient of `grayness` with respect to the nodal ρ̄ (through the
/// element average).
pub fn grayness_gradient(mesh: &StructuredMesh, rho_bar: &[f64]) -> Vec<f64> {
    let n = mesh.n_elements() as f64;
    let elem: Vec<f64> = rho_bar.iter().map(|&r| 4.0 * (1.0 - 2.0 * r) / n).collect();
    let mut out = vec![0.0; mesh.n_nodes()];
    gather_transpose_add(mesh, &elem, &mut out);
    out
}

/// Connected solid components (ρ̄ ≥ threshold, face adjacency) that do
/// not reach the build plate. Returns the element count of each such
/// component.
pub fn floating_components(mesh: &StructuredMesh, rho_bar: &[f64], threshold: f64) -> Vec<usize> {
    let n = mesh.n_elements();
    let dim = mesh.dim();
    let counts = mesh.counts();
    let b = mesh.build_axis().index();
    let mut label = vec![usize::MAX; n];
    let mut floating = Vec::new();
    let mut stack = Vec::new();
    for seed in 0..n {
        if label[seed] != usize::MAX || rho_bar[seed] < threshold {
            continue;
        }
        label[seed] = seed;
        stack.push(seed);
        let mut size = 0;
        let mut grounded = false;
        while let Some(e) = stack.pop() {
            size += 1;
            let g = mesh.element_coords(e);
            if g[b] == 0 {
                grounded = true;
            }
            for k in 0..dim {
                for step in [-1i64, 1] {
                    let c = g[k] as i64 + step;
                    if c < 0 || c >= counts[k] as i64 {
                        continue;
                    }
                    let mut h = g;
                    h[k] = c as usize;
                    let f = mesh.element_index(h);
                    if label[f] == usize::MAX && rho_bar[f] >= threshold {
                        label[f] = seed;
                        stack.push(f);
                    }
                }
            }
        }
        if !grounded {
            floating.push(size);
        }
    }
    floating
}
