//! Built-in load cases: supports, load bands and solver settings.

use crate::config::{Case, RunConfig};
use crate::error::{Error, Result};
use crate::filter::ProjectionSchedule;
use crate::material::MaterialLaw;
use crate::mesh::{Axis, StructuredMesh};
use crate::optimizer::{MmaSettings, OptimizerSettings, PupConstraint};
use crate::process::{BoundaryConditions, Formulation, LoadBand, ProblemSpec};

/// Everything needed to start an optimization run.
#[derive(Clone, Debug)]
pub struct Problem {
    pub mesh: StructuredMesh,
    pub spec: ProblemSpec,
    pub settings: OptimizerSettings,
    pub filter_radius: f64,
}

pub fn build_mesh_for(cfg: &RunConfig) -> Result<StructuredMesh> {
    let axis = Axis::from_index(cfg.build_axis)
        .ok_or_else(|| Error::Config(format!("bad build axis {}", cfg.build_axis)))?;
    StructuredMesh::new(&cfg.extents, &cfg.counts, axis)
}

/// Supports and load of a case on its mesh.
pub fn boundary_conditions(cfg: &RunConfig, mesh: &StructuredMesh) -> Result<BoundaryConditions> {
    let dim = mesh.dim();
    let size = mesh.element_size();
    let ext = mesh.extents();
    let counts = mesh.counts();
    let b = mesh.build_axis().index();
    let mut force = vec![0.0; dim];
    force[b] = -cfg.load;
    let left_nodes = || {
        (0..mesh.n_nodes()).filter(|&n| mesh.node_coords(n)[0] == 0)
    };
    let band = |band_axis: usize, lo: f64, hi: f64| {
        let (lo, hi) = match (cfg.load_lo, cfg.load_hi) {
            (Some(l), Some(h)) => (l, h),
            _ => (lo, hi),
        };
        LoadBand {
            axis: 0,
            side: 1,
            band_axis,
            lo,
            hi,
            force: force.clone(),
        }
    };
    let bcs = match cfg.case {
        Case::Cantilever2d | Case::Custom => {
            if b == 0 {
                return Err(Error::Config("cantilever supports need a build axis other than x".into()));
            }
            let fixed = left_nodes().flat_map(|n| (0..dim).map(move |c| (n, c))).collect();
            let mid = ext[b] / 2.0;
            let h = size[b];
            BoundaryConditions {
                fixed,
                loads: vec![band(b, mid - h / 2.0, mid + h / 2.0)],
            }
        }
        Case::Mbb2d => {
            let mut fixed: Vec<(usize, usize)> = left_nodes().map(|n| (n, 0)).collect();
            fixed.push((mesh.node_index([counts[0], 0, 0]), 1));
            let mut load = band(0, 0.0, size[0]);
            load.axis = 1;
            BoundaryConditions {
                fixed,
                loads: vec![load],
            }
        }
        Case::Beam3d => {
            let fixed = left_nodes().flat_map(|n| (0..dim).map(move |c| (n, c))).collect();
            BoundaryConditions {
                fixed,
                loads: vec![band(b, 0.0, size[b])],
            }
        }
    };
    Ok(bcs)
}

pub fn problem_spec(cfg: &RunConfig, mesh: &StructuredMesh) -> Result<ProblemSpec> {
    let main_law = MaterialLaw::simp(cfg.e0, cfg.e_min, cfg.simp_penalty, cfg.nu);
    let sub_law = MaterialLaw::ramp(cfg.e0, cfg.e_min, cfg.ramp_penalty, cfg.nu, cfg.kappa_min);
    Ok(ProblemSpec {
        formulation: cfg.formulation,
        layers: if cfg.formulation.has_layers() { cfg.layers } else { 0 },
        snap_layers: cfg.snap_layers,
        w0: cfg.w0,
        total_time: cfg.total_time,
        gravity: cfg.gravity,
        volume_fraction: cfg.volume_fraction,
        heat_source: cfg.heat_source.clone(),
        main_law,
        sub_law,
        bcs: boundary_conditions(cfg, mesh)?,
        main_solver: cfg.solver,
        cg_tol: cfg.cg_tol,
        cg_max_iter: cfg.cg_max_iter,
    })
}

pub fn optimizer_settings(cfg: &RunConfig) -> Result<OptimizerSettings> {
    let mut schedule = ProjectionSchedule::new(cfg.beta_min, cfg.beta_max, cfg.beta_step, cfg.eta)?;
    schedule.start = cfg.beta_start;
    let baseline = cfg.formulation == Formulation::PupBaseline;
    Ok(OptimizerSettings {
        schedule,
        tolerance: cfg.tolerance,
        max_iterations: cfg.max_iterations,
        volume_fraction: cfg.volume_fraction,
        mma: MmaSettings {
            asyinit: cfg.mma_asyinit,
            asyincr: cfg.mma_asyincr,
            asydecr: cfg.mma_asydecr,
            asymin: cfg.mma_asymin,
            move_limit: cfg.mma_move,
            ..MmaSettings::default()
        },
        pup: baseline.then_some(PupConstraint {
            angle_deg: cfg.pup_angle,
            limit: cfg.pup_limit,
            zeta: cfg.zeta,
        }),
        grayness_limit: baseline.then_some(cfg.grayness_limit),
    })
}

pub fn build_problem(cfg: &RunConfig) -> Result<Problem> {
    cfg.validate()?;
    let mesh = build_mesh_for(cfg)?;
    let spec = problem_spec(cfg, &mesh)?;
    Ok(Problem {
        spec,
        settings: optimizer_settings(cfg)?,
        filter_radius: cfg.filter_radius,
        mesh,
    })
}
