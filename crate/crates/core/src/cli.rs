//! Drivers behind the `amtopo` subcommands.

use std::path::{Path, PathBuf};

use crate::cases::build_problem;
use crate::config::{load_config, RunConfig};
use crate::error::{Error, Result};
use crate::filter::{gather, DensityTriple, FilterOperator};
use crate::io::{self, DensityKind, RunLogWriter, TimingReport};
use crate::mesh::StructuredMesh;
use crate::metrics::{npup_sweep, OverhangReport};
use crate::optimizer::{run, IterationRecord, RunResult};
use crate::process::Model;

/// Result of a `run` together with where its artifacts went.
#[derive(Debug)]
pub struct RunArtifacts {
    pub result: RunResult,
    pub mesh: StructuredMesh,
    pub overhang: Vec<OverhangReport>,
    pub out_dir: PathBuf,
}

fn initial_design(cfg: &RunConfig, mesh: &StructuredMesh) -> Result<Vec<f64>> {
    let n = mesh.n_elements();
    let Some(path) = &cfg.initial_density else {
        return Ok(vec![cfg.volume_fraction; n]);
    };
    let file = io::read_density_csv(path)?;
    if file.kind != DensityKind::Element {
        return Err(Error::Config(format!("{}: initial density must be elementwise", path.display())));
    }
    if file.values.len() != n {
        return Err(Error::Config(format!(
            "{}: {} values for a mesh of {n} elements",
            path.display(),
            file.values.len()
        )));
    }
    Ok(file.values)
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        return Ok(pool.install(f));
    }
    let _ = threads;
    Ok(f())
}

/// Writes the density snapshot of a triple: raw CSVs, the VTK file.
pub fn write_snapshot(dir: &Path, mesh: &StructuredMesh, t: &DensityTriple) -> Result<()> {
    io::write_density_csv(&dir.join("rho.csv"), DensityKind::Element, &t.rho)?;
    io::write_density_csv(&dir.join("rho_bar.csv"), DensityKind::Element, &t.rho_bar)?;
    io::write_density_csv(&dir.join("rho_bar_nodal.csv"), DensityKind::Node, &t.rho_bar_nodal)?;
    let rho_hat = gather(mesh, &t.rho_hat);
    io::write_vtk(
        mesh,
        &[("rho_bar", &t.rho_bar), ("rho", &t.rho), ("rho_hat", &rho_hat)],
        &dir.join("rho_bar.vtk"),
    )
}

/// Runs one configured optimization and writes its artifacts into the
/// output directory: `config.echo` first, `iters.csv` row by row, then
/// the density snapshot, `cost.csv` and `npup.csv` at the end.
pub fn run_case(cfg: &RunConfig, mut observer: impl FnMut(&IterationRecord) + Send) -> Result<RunArtifacts> {
    let problem = build_problem(cfg)?;
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let echo = out.join("config.echo");
    std::fs::write(&echo, cfg.echo()).map_err(|e| Error::io(&echo, e))?;
    let rho0 = initial_design(cfg, &problem.mesh)?;
    let mut writer = RunLogWriter::create(&out.join("iters.csv"))?;

    let result = with_threads(cfg.threads, || -> Result<RunResult> {
        let model = Model::new(&problem.mesh, problem.spec.clone())?;
        let op = FilterOperator::new(&problem.mesh, problem.filter_radius)?;
        let mut write_err = None;
        let result = run(&model, &op, &problem.settings, rho0, |r| {
            if write_err.is_none() {
                write_err = writer.append(r).err();
            }
            observer(r);
        })?;
        match write_err {
            Some(e) => Err(e),
            None => Ok(result),
        }
    })??;

    write_snapshot(&out, &problem.mesh, &result.triple)?;
    if let Some(cost) = &result.cost {
        io::write_cost_csv(&out.join("cost.csv"), cost, result.converged, result.log.records.len())?;
    }
    let overhang = npup_sweep(&problem.mesh, &result.triple.rho_bar_nodal, &cfg.npup_angles, cfg.zeta)?;
    io::export_sweep(&overhang, &out.join("npup.csv"))?;
    Ok(RunArtifacts {
        result,
        mesh: problem.mesh,
        overhang,
        out_dir: out,
    })
}

/// NPUP of a saved density over a set of angles. The mesh comes from
/// `config`, or from the `config.echo` next to the density file.
/// Elementwise files are turned into nodal fields by averaging.
pub fn sweep_file(density: &Path, config: Option<&Path>, angles: &[f64]) -> Result<Vec<OverhangReport>> {
    let cfg_path = match config {
        Some(p) => p.to_path_buf(),
        None => density.with_file_name("config.echo"),
    };
    let cfg = load_config(&cfg_path)?;
    let mesh = crate::cases::build_mesh_for(&cfg)?;
    let file = io::read_density_csv(density)?;
    let (expected, nodal) = match file.kind {
        DensityKind::Node => (mesh.n_nodes(), file.values.clone()),
        DensityKind::Element => (mesh.n_elements(), io::nodal_from_elements(&mesh, &file.values)),
    };
    if file.values.len() != expected {
        return Err(Error::invalid(format!(
            "{}: {} values, mesh from {} expects {expected}",
            density.display(),
            file.values.len(),
            cfg_path.display()
        )));
    }
    npup_sweep(&mesh, &nodal, angles, cfg.zeta)
}

/// Per-phase averages of each run log, labelled by file path.
pub fn timing_reports(logs: &[PathBuf]) -> Result<Vec<(String, TimingReport)>> {
    logs.iter()
        .map(|p| Ok((p.display().to_string(), io::timing_report(&io::read_runlog(p)?)?)))
        .collect()
}
