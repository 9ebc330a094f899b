//! The main elasticity problem, the per-layer build sub-problems, and the
//! total cost J_D + Σ w_i J_P,i.
//!
//! Every sub-problem clamps (or grounds) the build plate. With the build
//! axis numbered slowest the plate dofs come first, so after elimination the
//! system of layer i is the leading block of a single parent system over the
//! whole mesh. One pattern and one set of element slot maps serve all layers.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::assembly::{
    body_load, pcg, surface_flux_load, CholeskySolver, ElementMatrixCache, Physics,
    ReducedAssembler,
};
use crate::error::{Error, Result};
use crate::filter::gather;
use crate::material::{ramp_conductivity, ramp_young, simp_young, MaterialLaw};
use crate::mesh::{extract_submesh, Face, LayerPartition, StructuredMesh, SubMesh};
use crate::metrics::grayness;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    Standard,
    SelfWeight,
    Thermal,
    PupBaseline,
}

impl Formulation {
    /// Whether the formulation carries build sub-problems.
    pub fn has_layers(self) -> bool {
        matches!(self, Formulation::SelfWeight | Formulation::Thermal)
    }

    pub fn name(self) -> &'static str {
        match self {
            Formulation::Standard => "standard",
            Formulation::SelfWeight => "self_weight",
            Formulation::Thermal => "thermal",
            Formulation::PupBaseline => "pup_baseline",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Direct,
    Cg,
}

/// Uniform traction over the part of a boundary side that lies inside a
/// band `[lo, hi]` along `band_axis`. The traction density is chosen so the
/// resultant equals `force`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadBand {
    pub axis: usize,
    pub side: u8,
    pub band_axis: usize,
    pub lo: f64,
    pub hi: f64,
    pub force: Vec<f64>,
}

impl LoadBand {
    /// Faces of the side that overlap the band with positive length (Γ_N).
    pub fn faces(&self, mesh: &StructuredMesh) -> Vec<Face> {
        let h = mesh.element_size()[self.band_axis];
        mesh.boundary_faces(self.axis, self.side)
            .into_iter()
            .filter(|f| {
                let g = mesh.element_coords(f.element)[self.band_axis] as f64;
                overlap(g * h, (g + 1.0) * h, self.lo, self.hi) > 1e-12 * h
            })
            .collect()
    }

    /// Consistent nodal load of the band.
    pub fn nodal_load(&self, mesh: &StructuredMesh) -> Result<Vec<f64>> {
        let dim = mesh.dim();
        if self.axis >= dim || self.band_axis >= dim || self.axis == self.band_axis {
            return Err(Error::invalid("load band axes are inconsistent with the mesh"));
        }
        if self.force.len() != dim {
            return Err(Error::invalid(format!("load force has {} components", self.force.len())));
        }
        let size = mesh.element_size();
        let h = size[self.band_axis];
        let ext = mesh.extents()[self.band_axis];
        let width = overlap(0.0, ext, self.lo, self.hi);
        if width <= 0.0 {
            return Err(Error::invalid(format!(
                "load band [{}, {}] does not intersect the boundary",
                self.lo, self.hi
            )));
        }
        let cross: f64 = (0..dim)
            .filter(|&k| k != self.axis && k != self.band_axis)
            .map(|k| mesh.extents()[k])
            .product();
        let other: f64 = (0..dim)
            .filter(|&k| k != self.axis && k != self.band_axis)
            .map(|k| size[k])
            .product();
        let share = 1.0 / (1usize << (dim - 2)) as f64;
        let density = 1.0 / (width * cross);
        let mut f = vec![0.0; mesh.n_nodes() * dim];
        let local = mesh.face_local_nodes(self.axis, self.side);
        for face in self.faces(mesh) {
            let g = mesh.element_coords(face.element)[self.band_axis] as f64;
            let y0 = g * h;
            let a = self.lo.max(y0);
            let b = self.hi.min(y0 + h);
            // ∫_a^b N dy for the two linear shape functions along the band axis
            let t0 = (a - y0) / h;
            let t1 = (b - y0) / h;
            let w_lo = h * ((t1 - t0) - (t1 * t1 - t0 * t0) / 2.0);
            let w_hi = h * (t1 * t1 - t0 * t0) / 2.0;
            let nodes = mesh.element_nodes(face.element);
            for &la in &local {
                let wa = if (la >> self.band_axis) & 1 == 1 { w_hi } else { w_lo };
                let n = nodes[la];
                for c in 0..dim {
                    f[n * dim + c] += self.force[c] * density * wa * other * share;
                }
            }
        }
        Ok(f)
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Supports and loads of the main problem.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct BoundaryConditions {
    /// Homogeneous Dirichlet conditions as (node, component).
    pub fixed: Vec<(usize, usize)>,
    pub loads: Vec<LoadBand>,
}

/// Everything that defines the cost functional on a given mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub formulation: Formulation,
    pub layers: usize,
    /// Accept layer counts that do not divide the row count by snapping
    /// layer tops to the nearest row boundary.
    pub snap_layers: bool,
    pub w0: f64,
    pub total_time: f64,
    pub gravity: f64,
    pub volume_fraction: f64,
    /// Heat source per layer; a single entry applies to every layer.
    pub heat_source: Vec<f64>,
    pub main_law: MaterialLaw,
    pub sub_law: MaterialLaw,
    pub bcs: BoundaryConditions,
    pub main_solver: SolverKind,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl ProblemSpec {
    pub fn heat_source_at(&self, i: usize) -> f64 {
        if self.heat_source.len() == 1 {
            self.heat_source[0]
        } else {
            self.heat_source[i - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w0 > 0.0 && self.w0 <= 1.0) {
            return Err(Error::invalid(format!("w0 = {} outside (0, 1]", self.w0)));
        }
        if self.formulation.has_layers() {
            if self.layers == 0 {
                return Err(Error::invalid("number of layers must be at least 1"));
            }
            if self.formulation == Formulation::Thermal
                && !(self.heat_source.len() == 1 || self.heat_source.len() == self.layers)
            {
                return Err(Error::invalid(format!(
                    "heat source needs 1 or {} entries, got {}",
                    self.layers,
                    self.heat_source.len()
                )));
            }
        }
        if !(self.total_time > 0.0) {
            return Err(Error::invalid("total process time must be positive"));
        }
        if !(self.volume_fraction > 0.0 && self.volume_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "volume fraction {} outside (0, 1]",
                self.volume_fraction
            )));
        }
        if self.gravity < 0.0 {
            return Err(Error::invalid("gravity must be non-negative"));
        }
        for law in [&self.main_law, &self.sub_law] {
            if !(law.e_min > 0.0 && law.e_min < law.e0) {
                return Err(Error::invalid("material needs 0 < E_min < E0"));
            }
            if !(law.penalty >= 0.0) {
                return Err(Error::invalid("penalty must be non-negative"));
            }
            if !(law.kappa_min > 0.0 && law.kappa_min < 1.0) {
                return Err(Error::invalid("kappa_min must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

/// w_i = (T/l)(1 − w0)/w0 for every layer.
pub fn layer_weights(w0: f64, l: usize, total_time: f64) -> Result<Vec<f64>> {
    if !(w0 > 0.0 && w0 <= 1.0) {
        return Err(Error::invalid(format!("w0 = {w0} outside (0, 1]")));
    }
    if l == 0 || !(total_time > 0.0) {
        return Err(Error::invalid("layer weights need l >= 1 and T > 0"));
    }
    Ok(vec![(total_time / l as f64) * (1.0 - w0) / w0; l])
}

/// g_p = g / (v̄ |Ω|).
pub fn normalized_gravity(g: f64, volume_fraction: f64, volume: f64) -> Result<f64> {
    if !(volume_fraction > 0.0 && volume > 0.0) {
        return Err(Error::invalid("normalized gravity needs v̄ > 0 and |Ω| > 0"));
    }
    Ok(g / (volume_fraction * volume))
}

/// Solution of one state problem. `layer` is 0 for the main problem.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSolution {
    pub layer: usize,
    /// Nodal field over the dofs of the (sub-)mesh, node-major.
    pub field: Vec<f64>,
    /// Load functional at the solution.
    pub compliance: f64,
    /// Energy bilinear form at the solution.
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostBreakdown {
    pub j_d: f64,
    pub j_p: Vec<f64>,
    pub weights: Vec<f64>,
    pub total: f64,
    pub grayness: f64,
}

impl CostBreakdown {
    pub fn new(j_d: f64, j_p: Vec<f64>, weights: Vec<f64>, grayness: f64) -> Self {
        let mut total = j_d;
        for (j, w) in j_p.iter().zip(&weights) {
            total += w * j;
        }
        Self {
            j_d,
            j_p,
            weights,
            total,
            grayness,
        }
    }
}

/// Main problem, sub-problems, cost and all their states for one ρ̄.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub cost: CostBreakdown,
    pub rho_bar: Vec<f64>,
    pub main: StateSolution,
    pub layers: Vec<StateSolution>,
}

struct MainSystem {
    cache: ElementMatrixCache,
    asm: ReducedAssembler,
    solver: Option<CholeskySolver>,
    force: Vec<f64>,
    force_reduced: Vec<f64>,
    loaded_faces: Vec<Face>,
}

struct LayerSystem {
    sub: SubMesh,
    n: usize,
    n_elem: usize,
    solver: CholeskySolver,
}

struct SubSystems {
    physics: Physics,
    cache: ElementMatrixCache,
    asm: ReducedAssembler,
    partition: LayerPartition,
    layers: Vec<LayerSystem>,
}

/// Assembled problem description for one mesh and spec. Symbolic
/// factorizations are computed once here and reused for every design.
pub struct Model {
    mesh: StructuredMesh,
    spec: ProblemSpec,
    main: MainSystem,
    sub: Option<SubSystems>,
    g_p: f64,
    weights: Vec<f64>,
    factorizations: AtomicUsize,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("formulation", &self.spec.formulation)
            .field("elements", &self.mesh.n_elements())
            .field("layers", &self.weights.len())
            .finish()
    }
}

impl Model {
    pub fn new(mesh: &StructuredMesh, spec: ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let dim = mesh.dim();
        let ndof = mesh.n_nodes() * dim;

        let mut mask = vec![false; ndof];
        for &(node, comp) in &spec.bcs.fixed {
            if node >= mesh.n_nodes() || comp >= dim {
                return Err(Error::invalid(format!("support ({node}, {comp}) outside the mesh")));
            }
            mask[node * dim + comp] = true;
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Config("main problem has no supports".into()));
        }
        let mut force = vec![0.0; ndof];
        let mut loaded_faces = Vec::new();
        for band in &spec.bcs.loads {
            for (f, v) in force.iter_mut().zip(band.nodal_load(mesh)?) {
                *f += v;
            }
            loaded_faces.extend(band.faces(mesh));
        }
        let asm = ReducedAssembler::new(mesh, Physics::Elasticity, &mask)?;
        let force_reduced: Vec<f64> = asm.free_dofs().map(|d| force[d]).collect();
        let solver = match spec.main_solver {
            SolverKind::Direct => {
                let (rp, ci) = asm.prefix_pattern(asm.n_free());
                Some(CholeskySolver::analyze(asm.n_free(), rp, ci)?)
            }
            SolverKind::Cg => None,
        };
        let main = MainSystem {
            cache: ElementMatrixCache::new(mesh, spec.main_law.nu)?,
            asm,
            solver,
            force,
            force_reduced,
            loaded_faces,
        };

        let (sub, weights) = if spec.formulation.has_layers() {
            let partition = if spec.snap_layers && mesh.rows() % spec.layers != 0 {
                LayerPartition::snapped(mesh, spec.layers)?
            } else {
                LayerPartition::uniform(mesh, spec.layers)?
            };
            let physics = match spec.formulation {
                Formulation::SelfWeight => Physics::Elasticity,
                _ => Physics::Conduction,
            };
            let ncomp = physics.components(dim);
            let mut mask = vec![false; mesh.n_nodes() * ncomp];
            for n in mesh.plate_nodes() {
                for c in 0..ncomp {
                    mask[n * ncomp + c] = true;
                }
            }
            let c0 = mesh.cross_nodes() * ncomp;
            let asm = ReducedAssembler::new(mesh, physics, &mask)?;
            let mut layers = Vec::with_capacity(partition.len());
            for i in 1..=partition.len() {
                let sub = extract_submesh(mesh, &partition, i)?;
                let n = sub.n_nodes() * ncomp - c0;
                let (rp, ci) = asm.prefix_pattern(n);
                let solver = CholeskySolver::analyze(n, rp, ci).map_err(|e| e.in_layer(i))?;
                layers.push(LayerSystem {
                    n_elem: sub.n_elements(),
                    sub,
                    n,
                    solver,
                });
            }
            let weights = layer_weights(spec.w0, partition.len(), spec.total_time)?;
            (
                Some(SubSystems {
                    physics,
                    cache: ElementMatrixCache::new(mesh, spec.sub_law.nu)?,
                    asm,
                    partition,
                    layers,
                }),
                weights,
            )
        } else {
            (None, Vec::new())
        };

        let g_p = normalized_gravity(spec.gravity, spec.volume_fraction, mesh.domain_volume())?;
        Ok(Self {
            mesh: mesh.clone(),
            spec,
            main,
            sub,
            g_p,
            weights,
            factorizations: AtomicUsize::new(0),
        })
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.mesh
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn g_p(&self) -> f64 {
        self.g_p
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn partition(&self) -> Option<&LayerPartition> {
        self.sub.as_ref().map(|s| &s.partition)
    }

    pub fn submesh(&self, i: usize) -> Option<&SubMesh> {
        self.sub.as_ref().and_then(|s| s.layers.get(i.wrapping_sub(1))).map(|l| &l.sub)
    }

    /// Unit-modulus element matrices of the main problem.
    pub fn main_cache(&self) -> &ElementMatrixCache {
        &self.main.cache
    }

    /// Unit-parameter element matrices of the sub-problems.
    pub fn sub_cache(&self) -> Option<&ElementMatrixCache> {
        self.sub.as_ref().map(|s| &s.cache)
    }

    pub fn sub_physics(&self) -> Option<Physics> {
        self.sub.as_ref().map(|s| s.physics)
    }

    /// Global main-problem load vector.
    pub fn main_force(&self) -> &[f64] {
        &self.main.force
    }

    /// Faces carrying the main-problem traction (Γ_N).
    pub fn loaded_faces(&self) -> &[Face] {
        &self.main.loaded_faces
    }

    /// Number of matrix factorizations (or CG solves) performed so far.
    pub fn solve_count(&self) -> usize {
        self.factorizations.load(Ordering::Relaxed)
    }

    /// Main problem for elementwise ρ̄. `warm` seeds CG when the main solver
    /// is iterative.
    pub fn solve_main(&self, rho_bar: &[f64], warm: Option<&[f64]>) -> Result<StateSolution> {
        self.check_elements(rho_bar.len())?;
        let m = &self.main;
        let n = m.asm.n_free();
        let coeff: Vec<f64> = rho_bar.iter().map(|&r| simp_young(r, &self.spec.main_law).0).collect();
        let mut values = vec![0.0; m.asm.nnz_prefix(n)];
        m.asm.scatter(0..self.mesh.n_elements(), &coeff, &m.cache.elastic, &mut values);
        self.factorizations.fetch_add(1, Ordering::Relaxed);
        let x = match &m.solver {
            Some(solver) => {
                let (rp, ci) = m.asm.prefix_pattern(n);
                let factor = solver.factor(rp, ci, &values).map_err(config_on_singular)?;
                let mut x = m.force_reduced.clone();
                factor.solve_in_place(&mut x);
                refine(&m.asm, n, &values, &m.force_reduced, &mut x, |r| factor.solve_in_place(r))
                    .map_err(config_on_singular)?;
                x
            }
            None => {
                let mut x = match warm {
                    Some(w) if w.len() == self.mesh.n_nodes() * self.mesh.dim() => m.asm.restrict(w, n),
                    _ => vec![0.0; n],
                };
                pcg(
                    &m.asm.matrix_ref(n, &values),
                    &m.force_reduced,
                    &mut x,
                    self.spec.cg_tol,
                    self.spec.cg_max_iter,
                )?;
                x
            }
        };
        let energy = quad(&m.asm, n, &values, &x);
        let compliance: f64 = m.force_reduced.iter().zip(&x).map(|(f, u)| f * u).sum();
        Ok(StateSolution {
            layer: 0,
            field: m.asm.expand(&x, self.mesh.n_nodes() * self.mesh.dim()),
            compliance,
            energy,
        })
    }

    /// Sub-problem of layer `i` (1-based). `rho_bar` is elementwise and
    /// `rho_bar_nodal` nodal, both over the parent mesh.
    pub fn solve_layer(&self, i: usize, rho_bar: &[f64], rho_bar_nodal: &[f64]) -> Result<StateSolution> {
        let sub = self
            .sub
            .as_ref()
            .ok_or_else(|| Error::State("formulation has no build sub-problems".into()))?;
        if i == 0 || i > sub.layers.len() {
            return Err(Error::invalid(format!("layer {i} outside 1..={}", sub.layers.len())));
        }
        self.check_elements(rho_bar.len())?;
        if rho_bar_nodal.len() != self.mesh.n_nodes() {
            return Err(Error::invalid("nodal density length does not match the mesh"));
        }
        let layer = &sub.layers[i - 1];
        let ncomp = sub.physics.components(self.mesh.dim());
        let c0 = self.mesh.cross_nodes() * ncomp;
        let law = &self.spec.sub_law;
        let (coeff, kref): (Vec<f64>, _) = match sub.physics {
            Physics::Elasticity => (
                rho_bar[..layer.n_elem].iter().map(|&r| ramp_young(r, law).0).collect(),
                &sub.cache.elastic,
            ),
            _ => (
                rho_bar[..layer.n_elem].iter().map(|&r| ramp_conductivity(r, law).0).collect(),
                &sub.cache.conduction,
            ),
        };
        let smesh = layer.sub.mesh();
        let full_rhs = match sub.physics {
            Physics::Elasticity => body_load(smesh, &rho_bar[..layer.n_elem], self.g_p)?,
            _ => surface_flux_load(
                smesh,
                &layer.sub.top().faces,
                rho_bar_nodal,
                self.spec.heat_source_at(i),
            )?,
        };
        let rhs: Vec<f64> = full_rhs[c0..].to_vec();
        debug_assert_eq!(rhs.len(), layer.n);

        let run = || -> Result<StateSolution> {
            let mut values = vec![0.0; sub.asm.nnz_prefix(layer.n)];
            sub.asm.scatter(0..layer.n_elem, &coeff, kref, &mut values);
            let (rp, ci) = sub.asm.prefix_pattern(layer.n);
            self.factorizations.fetch_add(1, Ordering::Relaxed);
            let factor = layer.solver.factor(rp, ci, &values)?;
            let mut x = rhs.clone();
            factor.solve_in_place(&mut x);
            refine(&sub.asm, layer.n, &values, &rhs, &mut x, |r| factor.solve_in_place(r))?;
            let energy = quad(&sub.asm, layer.n, &values, &x);
            let compliance: f64 = rhs.iter().zip(&x).map(|(f, u)| f * u).sum();
            let mut field = vec![0.0; c0];
            field.extend_from_slice(&x);
            Ok(StateSolution {
                layer: i,
                field,
                compliance,
                energy,
            })
        };
        run().map_err(|e| e.in_layer(i))
    }

    /// Self-weight sub-problem of layer `i`.
    pub fn solve_selfweight_layer(&self, i: usize, rho_bar: &[f64]) -> Result<StateSolution> {
        if self.spec.formulation != Formulation::SelfWeight {
            return Err(Error::State("model is not a self-weight formulation".into()));
        }
        let dummy = vec![0.0; self.mesh.n_nodes()];
        self.solve_layer(i, rho_bar, &dummy)
    }

    /// Thermal sub-problem of layer `i`.
    pub fn solve_thermal_layer(&self, i: usize, rho_bar: &[f64], rho_bar_nodal: &[f64]) -> Result<StateSolution> {
        if self.spec.formulation != Formulation::Thermal {
            return Err(Error::State("model is not a thermal formulation".into()));
        }
        self.solve_layer(i, rho_bar, rho_bar_nodal)
    }

    /// Solves the main problem and every sub-problem for nodal ρ̄.
    pub fn evaluate(&self, rho_bar_nodal: &[f64], warm: Option<&[f64]>) -> Result<Evaluation> {
        if rho_bar_nodal.len() != self.mesh.n_nodes() {
            return Err(Error::invalid("nodal density length does not match the mesh"));
        }
        let rho_bar = gather(&self.mesh, rho_bar_nodal);
        let main = self.solve_main(&rho_bar, warm)?;
        self.evaluate_with_main(rho_bar_nodal, rho_bar, main)
    }

    /// Completes an evaluation whose main state is already solved.
    pub fn evaluate_with_main(
        &self,
        rho_bar_nodal: &[f64],
        rho_bar: Vec<f64>,
        main: StateSolution,
    ) -> Result<Evaluation> {
        if rho_bar_nodal.len() != self.mesh.n_nodes() {
            return Err(Error::invalid("nodal density length does not match the mesh"));
        }
        self.check_elements(rho_bar.len())?;
        let layers = self.solve_layers(&rho_bar, rho_bar_nodal)?;
        let j_p: Vec<f64> = layers.iter().map(|s| s.energy).collect();
        let cost = CostBreakdown::new(
            main.energy,
            j_p,
            self.weights.clone(),
            grayness(&self.mesh, &rho_bar),
        );
        Ok(Evaluation {
            cost,
            rho_bar,
            main,
            layers,
        })
    }

    #[cfg(feature = "parallel")]
    fn solve_layers(&self, rho_bar: &[f64], rho_bar_nodal: &[f64]) -> Result<Vec<StateSolution>> {
        use rayon::prelude::*;
        (1..=self.n_layers())
            .into_par_iter()
            .map(|i| self.solve_layer(i, rho_bar, rho_bar_nodal))
            .collect()
    }

    #[cfg(not(feature = "parallel"))]
    fn solve_layers(&self, rho_bar: &[f64], rho_bar_nodal: &[f64]) -> Result<Vec<StateSolution>> {
        (1..=self.n_layers())
            .map(|i| self.solve_layer(i, rho_bar, rho_bar_nodal))
            .collect()
    }

    fn check_elements(&self, len: usize) -> Result<()> {
        if len != self.mesh.n_elements() {
            return Err(Error::invalid(format!(
                "density has {len} entries, mesh has {} elements",
                self.mesh.n_elements()
            )));
        }
        Ok(())
    }
}

/// Total cost for nodal ρ̄.
pub fn total_cost(model: &Model, rho_bar_nodal: &[f64]) -> Result<CostBreakdown> {
    Ok(model.evaluate(rho_bar_nodal, None)?.cost)
}

fn config_on_singular(e: Error) -> Error {
    match e {
        Error::SingularSystem(msg) => Error::Config(format!(
            "main problem is singular ({msg}); check that the supports prevent rigid motion"
        )),
        other => other,
    }
}

fn quad(asm: &ReducedAssembler, n: usize, values: &[f64], x: &[f64]) -> f64 {
    let mut y = vec![0.0; n];
    asm.matrix_ref(n, values).mul_into(x, &mut y);
    x.iter().zip(&y).map(|(a, b)| a * b).sum()
}

/// One step of iterative refinement, then a residual check that catches
/// factorizations of numerically singular matrices.
fn refine(
    asm: &ReducedAssembler,
    n: usize,
    values: &[f64],
    b: &[f64],
    x: &mut [f64],
    solve: impl Fn(&mut [f64]),
) -> Result<()> {
    let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite solution".into()));
    }
    if bn == 0.0 {
        return Ok(());
    }
    let a = asm.matrix_ref(n, values);
    let mut r = vec![0.0; n];
    let residual = |x: &[f64], r: &mut Vec<f64>| {
        a.mul_into(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        r.iter().map(|v| v * v).sum::<f64>().sqrt() / bn
    };
    let mut rel = residual(x, &mut r);
    if rel > 1e-12 {
        solve(&mut r);
        for (xi, d) in x.iter_mut().zip(&r) {
            *xi += d;
        }
        rel = residual(x, &mut r);
    }
    if !(rel <= 1e-6) {
        return Err(Error::SingularSystem(format!("relative residual {rel:e}")));
    }
    Ok(())
}
