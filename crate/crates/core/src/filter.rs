//! Helmholtz-type PDE density filter, threshold projection and the
//! maps between elementwise and nodal fields.
//!
//! Field layout: the design ρ is elementwise, the filtered ρ̂ and projected
//! ρ̄ are nodal, and the elementwise ρ̄ consumed by the material laws is the
//! average of the element's nodal values.

use serde::{Deserialize, Serialize};

use crate::assembly::{
    element_mass, element_stiffness_conduction, CholeskyFactor, CholeskySolver, Physics,
    ReducedAssembler,
};
use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;

/// Filter length r from the filter radius r̄.
pub fn filter_length(radius: f64) -> f64 {
    radius / (2.0 * 3f64.sqrt())
}

/// Factorized operator (r²K + M) over the nodes of one mesh, with natural
/// (homogeneous Neumann) boundary conditions.
pub struct FilterOperator {
    mesh: StructuredMesh,
    r: f64,
    asm: ReducedAssembler,
    factor: CholeskyFactor,
    values: Vec<f64>,
}

impl std::fmt::Debug for FilterOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FilterOperator")
            .field("r", &self.r)
            .field("nodes", &self.mesh.n_nodes())
            .finish()
    }
}

impl FilterOperator {
    /// Builds and factors the operator for filter radius `radius` (r̄).
    pub fn new(mesh: &StructuredMesh, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!("filter radius {radius} must be non-negative")));
        }
        let r = filter_length(radius);
        let size = mesh.element_size();
        let mut a = element_stiffness_conduction(1.0, &size)?.scaled(r * r);
        for (x, m) in a.data.iter_mut().zip(&element_mass(&size).data) {
            *x += m;
        }
        let asm = ReducedAssembler::new(mesh, Physics::Conduction, &vec![false; mesh.n_nodes()])?;
        let n = asm.n_free();
        let mut values = vec![0.0; asm.nnz_prefix(n)];
        let ones = vec![1.0; mesh.n_elements()];
        asm.scatter(0..mesh.n_elements(), &ones, &a, &mut values);
        let (rp, ci) = asm.prefix_pattern(n);
        let factor = CholeskySolver::analyze(n, rp, ci)?.factor(rp, ci, &values)?;
        Ok(Self {
            mesh: mesh.clone(),
            r,
            asm,
            factor,
            values,
        })
    }

    /// Filter length r (not the radius r̄).
    pub fn length(&self) -> f64 {
        self.r
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.mesh
    }

    /// y = (r²K + M) x over nodes.
    pub fn operator_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.asm.matrix_ref(self.asm.n_free(), &self.values).mul_into(x, &mut y);
        y
    }

    /// Element → node load T ρ with T[a, e] = V_e / 2^d for nodes a of e.
    fn element_load(&self, rho: &[f64]) -> Vec<f64> {
        let nen = self.mesh.nodes_per_element();
        let w = self.mesh.element_volume() / nen as f64;
        let mut f = vec![0.0; self.mesh.n_nodes()];
        for (e, &v) in rho.iter().enumerate() {
            let nodes = self.mesh.element_nodes(e);
            for &n in &nodes[..nen] {
                f[n] += w * v;
            }
        }
        f
    }

    fn check_elements(&self, len: usize) -> Result<()> {
        if len != self.mesh.n_elements() {
            return Err(Error::invalid(format!(
                "design field has {len} entries, mesh has {} elements",
                self.mesh.n_elements()
            )));
        }
        Ok(())
    }

    /// ρ̂ before the [0, 1] clamp.
    pub fn apply_unclamped(&self, rho: &[f64]) -> Result<Vec<f64>> {
        self.check_elements(rho.len())?;
        let clamped: Vec<f64> = rho.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let mut x = self.element_load(&clamped);
        self.factor.solve_in_place(&mut x);
        Ok(x)
    }

    /// Filtered nodal field ρ̂, clamped to [0, 1].
    pub fn apply(&self, rho: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.apply_unclamped(rho)?;
        for v in &mut x {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(x)
    }

    /// Transpose of the unclamped filter: nodal ∂J/∂ρ̂ → elementwise ∂J/∂ρ.
    pub fn adjoint(&self, grad_nodal: &[f64]) -> Result<Vec<f64>> {
        if grad_nodal.len() != self.mesh.n_nodes() {
            return Err(Error::invalid("nodal gradient length does not match the mesh"));
        }
        let mut lam = grad_nodal.to_vec();
        self.factor.solve_in_place(&mut lam);
        let nen = self.mesh.nodes_per_element();
        let w = self.mesh.element_volume() / nen as f64;
        Ok((0..self.mesh.n_elements())
            .map(|e| {
                let nodes = self.mesh.element_nodes(e);
                w * nodes[..nen].iter().map(|&n| lam[n]).sum::<f64>()
            })
            .collect())
    }
}

pub fn filter_apply(op: &FilterOperator, rho: &[f64]) -> Result<Vec<f64>> {
    op.apply(rho)
}

pub fn filter_adjoint(op: &FilterOperator, grad_nodal: &[f64]) -> Result<Vec<f64>> {
    op.adjoint(grad_nodal)
}

/// Threshold projection of one value; returns (ρ̄, dρ̄/dρ̂).
pub fn project_value(x: f64, beta: f64, gamma: f64) -> (f64, f64) {
    let tg = (beta * gamma).tanh();
    let den = tg + (beta * (1.0 - gamma)).tanh();
    let t = (beta * (x - gamma)).tanh();
    ((tg + t) / den, beta * (1.0 - t * t) / den)
}

/// Nodal projection ρ̂ → ρ̄ with its pointwise derivative.
pub fn project(rho_hat: &[f64], beta: f64, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    rho_hat.iter().map(|&x| project_value(x, beta, gamma)).unzip()
}

/// β-continuation: β_min, doubled every `beta_step` iterations from
/// iteration `start` on, capped at β_max.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_step: usize,
    pub gamma: f64,
    pub start: usize,
}

impl ProjectionSchedule {
    pub fn new(beta_min: f64, beta_max: f64, beta_step: usize, gamma: f64) -> Result<Self> {
        let s = Self {
            beta_min,
            beta_max,
            beta_step,
            gamma,
            start: 1,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max) {
            return Err(Error::invalid(format!(
                "projection needs 0 < beta_min <= beta_max, got {} and {}",
                self.beta_min, self.beta_max
            )));
        }
        if self.beta_step == 0 {
            return Err(Error::invalid("beta doubling interval must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("threshold {} outside (0, 1)", self.gamma)));
        }
        if self.start == 0 {
            return Err(Error::invalid("continuation start iteration is 1-based"));
        }
        Ok(())
    }
}

/// β at a 1-based iteration.
pub fn beta_at(iteration: usize, s: &ProjectionSchedule) -> f64 {
    let k = iteration.saturating_sub(s.start) / s.beta_step;
    let mut beta = s.beta_min;
    for _ in 0..k {
        beta *= 2.0;
        if beta >= s.beta_max {
            return s.beta_max;
        }
    }
    beta.min(s.beta_max)
}

/// Elementwise average of a nodal field.
pub fn gather(mesh: &StructuredMesh, nodal: &[f64]) -> Vec<f64> {
    let nen = mesh.nodes_per_element();
    let inv = 1.0 / nen as f64;
    (0..mesh.n_elements())
        .map(|e| {
            let nodes = mesh.element_nodes(e);
            nodes[..nen].iter().map(|&n| nodal[n]).sum::<f64>() * inv
        })
        .collect()
}

/// Transpose of `gather`, accumulated into `nodal`.
pub fn gather_transpose_add(mesh: &StructuredMesh, elem: &[f64], nodal: &mut [f64]) {
    let nen = mesh.nodes_per_element();
    let inv = 1.0 / nen as f64;
    for (e, &g) in elem.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let nodes = mesh.element_nodes(e);
        for &n in &nodes[..nen] {
            nodal[n] += g * inv;
        }
    }
}

/// The three density fields of one iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityTriple {
    /// Design variables, elementwise.
    pub rho: Vec<f64>,
    /// Filtered field, nodal.
    pub rho_hat: Vec<f64>,
    /// Projected field, nodal.
    pub rho_bar_nodal: Vec<f64>,
    /// Projected field averaged per element.
    pub rho_bar: Vec<f64>,
    /// dρ̄/dρ̂ at the nodes.
    pub d_proj: Vec<f64>,
    pub beta: f64,
}

impl DensityTriple {
    pub fn evaluate(op: &FilterOperator, rho: &[f64], beta: f64, gamma: f64) -> Result<Self> {
        let rho_hat = op.apply(rho)?;
        let (rho_bar_nodal, d_proj) = project(&rho_hat, beta, gamma);
        let rho_bar = gather(op.mesh(), &rho_bar_nodal);
        Ok(Self {
            rho: rho.to_vec(),
            rho_hat,
            rho_bar_nodal,
            rho_bar,
            d_proj,
            beta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constants_are_preserved() {
        let m = build_mesh(&[3.0, 2.0], &[15, 10], None).unwrap();
        let op = FilterOperator::new(&m, 0.7).unwrap();
        for c in [0.0, 0.3, 1.0] {
            let out = op.apply_unclamped(&vec![c; m.n_elements()]).unwrap();
            assert!(out.iter().all(|v| (v - c).abs() <= 1e-10));
        }
    }

    #[test]
    fn adjoint_pairs_with_forward() {
        let m = build_mesh(&[2.0, 1.0, 1.0], &[6, 3, 4], None).unwrap();
        let op = FilterOperator::new(&m, 0.5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..m.n_elements()).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..m.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fx = op.apply_unclamped(&x).unwrap();
        let aty = op.adjoint(&y).unwrap();
        let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        assert!(op.adjoint(&vec![0.0; m.n_nodes()]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_identities() {
        for beta in [0.5, 1.0, 8.0, 32.0] {
            for gamma in [0.2, 0.5, 0.8] {
                assert!(project_value(0.0, beta, gamma).0.abs() < 1e-15);
                assert!((project_value(1.0, beta, gamma).0 - 1.0).abs() < 1e-15);
            }
            assert!((project_value(0.5, beta, 0.5).0 - 0.5).abs() < 1e-15);
        }
        assert!((project_value(0.6, 32.0, 0.5).0 - 1.0).abs() < 1e-2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x: f64 = rng.gen_range(0.01..0.99);
            let beta = rng.gen_range(0.5..16.0);
            let h = 1e-6;
            let fd = (project_value(x + h, beta, 0.5).0 - project_value(x - h, beta, 0.5).0) / (2.0 * h);
            let d = project_value(x, beta, 0.5).1;
            assert!(d > 0.0);
            assert!(((fd - d) / d).abs() < 1e-6);
        }
    }

    #[test]
    fn beta_schedule() {
        let s = ProjectionSchedule::new(1.0, 32.0, 100, 0.5).unwrap();
        assert_eq!(beta_at(1, &s), 1.0);
        assert_eq!(beta_at(100, &s), 1.0);
        assert_eq!(beta_at(101, &s), 2.0);
        assert_eq!(beta_at(250, &s), 4.0);
        assert_eq!(beta_at(501, &s), 32.0);
        assert_eq!(beta_at(100_000, &s), 32.0);
        let late = ProjectionSchedule {
            beta_step: 25,
            start: 50,
            ..s
        };
        assert_eq!(beta_at(74, &late), 1.0);
        assert_eq!(beta_at(75, &late), 2.0);
        assert!(ProjectionSchedule::new(4.0, 2.0, 10, 0.5).is_err());
        assert!(ProjectionSchedule::new(1.0, 2.0, 0, 0.5).is_err());
    }

    #[test]
    fn gather_pairs_with_its_transpose() {
        let m = build_mesh(&[1.0, 1.0], &[4, 3], None).unwrap();
        let nodal: Vec<f64> = (0..m.n_nodes()).map(|n| n as f64 * 0.1).collect();
        let elem: Vec<f64> = (0..m.n_elements()).map(|e| 1.0 - e as f64 * 0.05).collect();
        let g = gather(&m, &nodal);
        let mut gt = vec![0.0; m.n_nodes()];
        gather_transpose_add(&m, &elem, &mut gt);
        let lhs: f64 = g.iter().zip(&elem).map(|(a, b)| a * b).sum();
        let rhs: f64 = nodal.iter().zip(&gt).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
