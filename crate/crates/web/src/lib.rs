//! Browser demo: optimize a small cantilever, inspect its overhang measure
//! and step through the build layers.

use std::path::Path;

use amtopo::cases::build_problem;
use amtopo::config::RunConfig;
use amtopo::filter::FilterOperator;
use amtopo::mesh::{LayerPartition, StructuredMesh};
use amtopo::metrics::{npup, pup, ZETA};
use amtopo::optimizer::run;
use amtopo::process::Model;
use wasm_bindgen::prelude::*;

/// State of the page: the mesh and the last optimized design.
#[wasm_bindgen]
pub struct Demo {
    nx: usize,
    ny: usize,
    mesh: StructuredMesh,
    rho_bar: Vec<f64>,
    rho_bar_nodal: Vec<f64>,
    history: Vec<f64>,
}

fn js_err(e: amtopo::Error) -> JsError {
    JsError::new(&e.to_string())
}

impl Demo {
    fn config(&self, formulation: &str, w0: f64, layers: usize, radius: f64, iterations: usize) -> String {
        // shortened continuation so a design appears within a few hundred iterations
        format!(
            "counts = [{}, {}]\nformulation = \"{formulation}\"\nw0 = {w0:?}\nlayers = {layers}\nsnap_layers = true\n\
             filter_radius = {radius:?}\nbeta_max = 8.0\nbeta_step = 25\nmax_iterations = {iterations}",
            self.nx, self.ny
        )
    }
}

#[wasm_bindgen]
impl Demo {
    /// A 12 × 6 cantilever on an `nx` × `ny` grid, starting from a uniform design.
    #[wasm_bindgen(constructor)]
    pub fn new(nx: usize, ny: usize) -> Result<Demo, JsError> {
        let cfg = RunConfig::from_toml_str(&format!("counts = [{nx}, {ny}]"), Path::new("demo.toml")).map_err(js_err)?;
        let problem = build_problem(&cfg).map_err(js_err)?;
        let mesh = problem.mesh;
        Ok(Demo {
            nx,
            ny,
            rho_bar: vec![cfg.volume_fraction; mesh.n_elements()],
            rho_bar_nodal: vec![cfg.volume_fraction; mesh.n_nodes()],
            history: Vec::new(),
            mesh,
        })
    }

    /// Runs the optimizer from scratch. `formulation` is one of
    /// `standard`, `self_weight`, `thermal`. Returns J_D of the result.
    pub fn optimize(
        &mut self,
        formulation: &str,
        w0: f64,
        layers: usize,
        radius: f64,
        iterations: usize,
    ) -> Result<f64, JsError> {
        let text = self.config(formulation, w0, layers, radius, iterations);
        let cfg = RunConfig::from_toml_str(&text, Path::new("demo.toml")).map_err(js_err)?;
        let problem = build_problem(&cfg).map_err(js_err)?;
        let model = Model::new(&problem.mesh, problem.spec.clone()).map_err(js_err)?;
        let op = FilterOperator::new(&problem.mesh, problem.filter_radius).map_err(js_err)?;
        let rho0 = vec![cfg.volume_fraction; problem.mesh.n_elements()];
        let mut history = Vec::new();
        let res = run(&model, &op, &problem.settings, rho0, |r| history.push(r.j_d)).map_err(js_err)?;
        self.rho_bar = res.triple.rho_bar;
        self.rho_bar_nodal = res.triple.rho_bar_nodal;
        self.history = history;
        Ok(res.cost.map_or(f64::NAN, |c| c.j_d))
    }

    pub fn width(&self) -> usize {
        self.nx
    }

    pub fn height(&self) -> usize {
        self.ny
    }

    /// Elementwise ρ̄, row by row from the build plate up.
    pub fn density(&self) -> Vec<f64> {
        self.rho_bar.clone()
    }

    /// J_D of every iteration of the last run.
    pub fn history(&self) -> Vec<f64> {
        self.history.clone()
    }

    /// Normalized projected undercut perimeter of the current design.
    pub fn npup(&self, angle_deg: f64) -> Result<f64, JsError> {
        let p = pup(&self.mesh, &self.rho_bar_nodal, angle_deg, ZETA).map_err(js_err)?;
        Ok(npup(&self.mesh, p))
    }

    /// Element rows printed once layer `i` of `layers` is deposited.
    pub fn layer_rows(&self, layers: usize, i: usize) -> Result<usize, JsError> {
        let p = LayerPartition::snapped(&self.mesh, layers).map_err(js_err)?;
        if i == 0 || i > p.len() {
            return Err(JsError::new(&format!("layer {i} outside 1..={}", p.len())));
        }
        Ok(p.rows(i).end)
    }
}
