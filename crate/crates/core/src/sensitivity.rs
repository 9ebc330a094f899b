//! Adjoint sensitivities of the total cost.
//!
//! All state problems are self-adjoint compliance problems, so no extra
//! solves are needed: each term is assembled from the state itself.
//! Gradients with respect to the physical density are accumulated on the
//! nodal ρ̄ field (the elementwise ρ̄ is the nodal average) and then pulled
//! back through the projection and the filter.

use crate::assembly::{face_mass, DenseMatrix, Physics};
use crate::error::{Error, Result};
use crate::filter::{gather_transpose_add, DensityTriple, FilterOperator};
use crate::material::{ramp_conductivity, ramp_young, simp_young};
use crate::mesh::StructuredMesh;
use crate::process::{Evaluation, Model, StateSolution};

/// Contribution of one cost term, split into the part that acts through the
/// element densities and the part that acts directly on nodal ρ̄.
#[derive(Clone, Debug, PartialEq)]
pub struct TermGradient {
    /// Per parent element; zero outside the term's domain.
    pub elem: Vec<f64>,
    /// Per parent node; empty when the term has no nodal part.
    pub nodal: Vec<f64>,
}

impl TermGradient {
    /// Adds this term's total nodal derivative into `out`.
    pub fn add_nodal(&self, mesh: &StructuredMesh, out: &mut [f64]) {
        gather_transpose_add(mesh, &self.elem, out);
        for (o, v) in out.iter_mut().zip(&self.nodal) {
            *o += v;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityField {
    /// d total / d ρ̄ through the elementwise densities.
    pub d_rho_bar: Vec<f64>,
    /// d total / d ρ̄ at the nodes (element part pulled back plus nodal part).
    pub d_rho_bar_nodal: Vec<f64>,
    /// d total / d ρ per design variable.
    pub d_rho: Vec<f64>,
    pub main: TermGradient,
    pub layers: Vec<TermGradient>,
}

/// u_eᵀ K_ref u_e for element `e`.
pub fn element_energy(mesh: &StructuredMesh, kref: &DenseMatrix, field: &[f64], ncomp: usize, e: usize) -> f64 {
    let nodes = mesh.element_nodes(e);
    let nen = mesh.nodes_per_element();
    let mut ue = [0.0; 24];
    for a in 0..nen {
        for c in 0..ncomp {
            ue[a * ncomp + c] = field[nodes[a] * ncomp + c];
        }
    }
    kref.quad_form(&ue[..nen * ncomp])
}

/// ∂J_D/∂ρ̄_e = −E′(ρ̄_e) u_eᵀK₀u_e.
pub fn main_sensitivity(model: &Model, rho_bar: &[f64], u: &StateSolution) -> Result<TermGradient> {
    let mesh = model.mesh();
    if rho_bar.len() != mesh.n_elements() || u.field.len() != mesh.n_nodes() * mesh.dim() {
        return Err(Error::invalid("main sensitivity inputs do not match the mesh"));
    }
    let law = &model.spec().main_law;
    let k0 = &model.main_cache().elastic;
    let elem = (0..mesh.n_elements())
        .map(|e| -simp_young(rho_bar[e], law).1 * element_energy(mesh, k0, &u.field, mesh.dim(), e))
        .collect();
    Ok(TermGradient {
        elem,
        nodal: Vec::new(),
    })
}

fn layer_context<'a>(model: &'a Model, state: &StateSolution, physics: Physics) -> Result<(usize, f64, &'a DenseMatrix)> {
    let i = state.layer;
    let sub = model
        .submesh(i)
        .ok_or_else(|| Error::invalid(format!("layer {i} does not exist in this model")))?;
    if model.sub_physics() != Some(physics) {
        return Err(Error::invalid("state belongs to a different sub-problem type"));
    }
    let ncomp = physics.components(model.mesh().dim());
    if state.field.len() != sub.n_nodes() * ncomp {
        return Err(Error::invalid(format!("state of layer {i} does not match its sub-mesh")));
    }
    let cache = model.sub_cache().expect("layered model has a sub cache");
    Ok((i, model.weights()[i - 1], cache.matrix(physics)))
}

/// ∂(w_i J_P,i)/∂ρ̄ for a self-weight layer:
/// w_i [2 f′ᵀu_i − E′_RAMP u_eᵀK₀u_e].
pub fn selfweight_sensitivity(model: &Model, rho_bar: &[f64], state: &StateSolution) -> Result<TermGradient> {
    let (i, w, k0) = layer_context(model, state, Physics::Elasticity)?;
    let mesh = model.mesh();
    let sub = model.submesh(i).unwrap();
    let dim = mesh.dim();
    let b = mesh.build_axis().index();
    let nen = mesh.nodes_per_element();
    let load = -model.g_p() * mesh.element_volume() / nen as f64;
    let law = &model.spec().sub_law;
    let mut elem = vec![0.0; mesh.n_elements()];
    for (e, out) in elem.iter_mut().enumerate().take(sub.n_elements()) {
        let nodes = mesh.element_nodes(e);
        let ub: f64 = nodes[..nen].iter().map(|&n| state.field[n * dim + b]).sum();
        let energy = element_energy(mesh, k0, &state.field, dim, e);
        *out = w * (2.0 * load * ub - ramp_young(rho_bar[e], law).1 * energy);
    }
    Ok(TermGradient {
        elem,
        nodal: Vec::new(),
    })
}

/// ∂(w_i J_P,i)/∂ρ̄ for a thermal layer: −w_i κ′ θ_eᵀK₀θ_e per element and
/// +2 w_i q_i (M_f θ) on the nodes of Γ_i^u.
pub fn thermal_sensitivity(model: &Model, rho_bar: &[f64], state: &StateSolution) -> Result<TermGradient> {
    let (i, w, k0) = layer_context(model, state, Physics::Conduction)?;
    let mesh = model.mesh();
    let sub = model.submesh(i).unwrap();
    let law = &model.spec().sub_law;
    let mut elem = vec![0.0; mesh.n_elements()];
    for (e, out) in elem.iter_mut().enumerate().take(sub.n_elements()) {
        let energy = element_energy(mesh, k0, &state.field, 1, e);
        *out = -w * ramp_conductivity(rho_bar[e], law).1 * energy;
    }
    let mut nodal = vec![0.0; mesh.n_nodes()];
    let q = model.spec().heat_source_at(i);
    let size = mesh.element_size();
    for face in &sub.top().faces {
        let mf = face_mass(&size, face.axis);
        let nodes = sub.mesh().face_nodes(face);
        let theta: Vec<f64> = nodes.iter().map(|&n| state.field[n]).collect();
        for (n, v) in nodes.iter().zip(mf.mul_vec(&theta)) {
            nodal[*n] += 2.0 * w * q * v;
        }
    }
    Ok(TermGradient { elem, nodal })
}

/// Pulls a nodal d/dρ̄ field back to the design variables:
/// projection derivative, then the filter adjoint.
pub fn chain_rule(grad_nodal: &[f64], d_proj: &[f64], op: &FilterOperator) -> Result<Vec<f64>> {
    if grad_nodal.len() != d_proj.len() {
        return Err(Error::invalid("gradient and projection derivative lengths differ"));
    }
    let g: Vec<f64> = grad_nodal.iter().zip(d_proj).map(|(a, b)| a * b).collect();
    op.adjoint(&g)
}

/// Full sensitivity of the total cost for one evaluated iterate.
pub fn total_sensitivity(
    model: &Model,
    eval: &Evaluation,
    triple: &DensityTriple,
    op: &FilterOperator,
) -> Result<SensitivityField> {
    let mesh = model.mesh();
    let rho_bar = &eval.rho_bar;
    let main = main_sensitivity(model, rho_bar, &eval.main)?;
    let layers = eval
        .layers
        .iter()
        .map(|s| match model.sub_physics() {
            Some(Physics::Elasticity) => selfweight_sensitivity(model, rho_bar, s),
            _ => thermal_sensitivity(model, rho_bar, s),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut d_rho_bar = main.elem.clone();
    for t in &layers {
        for (d, v) in d_rho_bar.iter_mut().zip(&t.elem) {
            *d += v;
        }
    }
    let mut d_rho_bar_nodal = vec![0.0; mesh.n_nodes()];
    gather_transpose_add(mesh, &d_rho_bar, &mut d_rho_bar_nodal);
    for t in &layers {
        for (d, v) in d_rho_bar_nodal.iter_mut().zip(&t.nodal) {
            *d += v;
        }
    }
    let d_rho = chain_rule(&d_rho_bar_nodal, &triple.d_proj, op)?;
    Ok(SensitivityField {
        d_rho_bar,
        d_rho_bar_nodal,
        d_rho,
        main,
        layers,
    })
}
