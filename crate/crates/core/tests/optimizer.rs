mod common;

use amtopo::filter::DensityTriple;
use amtopo::metrics::{grayness, pup};
use amtopo::optimizer::{run, IterationRecord, RunLog, RunResult};
use common::{setup, Setup};

fn run_text(text: &str) -> (Setup, RunResult) {
    let s = setup(text);
    let rho0 = vec![s.problem.settings.volume_fraction; s.problem.mesh.n_elements()];
    let r = run(&s.model, &s.op, &s.problem.settings, rho0, |_| {}).unwrap();
    (s, r)
}

fn costs(log: &RunLog) -> Vec<[u64; 6]> {
    log.records
        .iter()
        .map(|r: &IterationRecord| {
            [r.beta, r.j_d, r.total, r.grayness, r.vol_constraint, r.step_inf_norm].map(f64::to_bits)
        })
        .collect()
}

#[test]
fn standard_run_ends_on_the_volume_constraint() {
    let (s, r) = run_text("counts = [24, 12]\nw0 = 1.0");
    assert!(r.converged, "{} iterations", r.log.records.len());
    let last = r.log.records.last().unwrap();
    assert!(last.vol_constraint.abs() <= 1e-3, "{}", last.vol_constraint);
    assert_eq!(last.beta, s.problem.settings.schedule.beta_max);
    assert!(r.triple.rho.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn zero_iterations_returns_the_initial_state() {
    let (s, r) = run_text("counts = [24, 12]\nmax_iterations = 0");
    assert!(r.log.records.is_empty() && r.cost.is_none() && !r.converged);
    let expected = DensityTriple::evaluate(&s.op, &vec![0.5; 288], 1.0, 0.5).unwrap();
    assert_eq!(r.triple.rho, expected.rho);
    assert_eq!(r.triple.rho_bar, expected.rho_bar);
}

#[test]
fn repeated_runs_are_identical() {
    let text = "counts = [24, 12]\nformulation = \"thermal\"\nlayers = 4\nmax_iterations = 15";
    let (_, a) = run_text(text);
    let (_, b) = run_text(text);
    assert_eq!(costs(&a.log), costs(&b.log));
    assert_eq!(a.triple.rho, b.triple.rho);
}

#[test]
fn logged_total_is_the_cost_of_the_iterate() {
    let (s, r) = run_text("counts = [24, 12]\nformulation = \"self_weight\"\nlayers = 4\nmax_iterations = 12");
    let cost = r.cost.clone().unwrap();
    let last = r.log.records.last().unwrap();
    assert_eq!(last.total, cost.total);
    let again = s.model.evaluate(&r.triple.rho_bar_nodal, None).unwrap().cost;
    assert!((again.total - last.total).abs() <= 1e-12 * last.total.abs());
    assert!((last.total - (cost.j_d + cost.weights.iter().zip(&cost.j_p).map(|(w, j)| w * j).sum::<f64>())).abs()
        <= 1e-12 * last.total);
}

#[test]
fn pup_baseline_respects_its_limits() {
    let (s, r) = run_text("counts = [48, 24]\nformulation = \"pup_baseline\"\nmax_iterations = 400");
    let settings = &s.problem.settings;
    let pc = settings.pup.unwrap();
    let mesh = &s.problem.mesh;
    let p = pup(mesh, &r.triple.rho_bar_nodal, pc.angle_deg, pc.zeta).unwrap();
    let g = grayness(mesh, &r.triple.rho_bar);
    assert!(p <= pc.limit * 1.01, "P = {p}");
    assert!(g <= settings.grayness_limit.unwrap() * 1.01, "grayness {g}");
    let last = r.log.records.last().unwrap();
    assert!(last.pup_constraint.unwrap() <= 1e-2 && last.gray_constraint.unwrap() <= 1e-2);
}
