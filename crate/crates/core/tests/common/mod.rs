#![allow(dead_code)]

use std::path::Path;

use amtopo::cases::{build_problem, Problem};
use amtopo::config::RunConfig;
use amtopo::filter::{DensityTriple, FilterOperator};
use amtopo::process::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn config(text: &str) -> RunConfig {
    RunConfig::from_toml_str(text, Path::new("test.toml")).unwrap()
}

pub struct Setup {
    pub problem: Problem,
    pub model: Model,
    pub op: FilterOperator,
}

pub fn setup(text: &str) -> Setup {
    let problem = build_problem(&config(text)).unwrap();
    let model = Model::new(&problem.mesh, problem.spec.clone()).unwrap();
    let op = FilterOperator::new(&problem.mesh, problem.filter_radius).unwrap();
    Setup { problem, model, op }
}

pub fn random_design(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0.2..0.8)).collect()
}

/// Total cost as a function of the design variables.
pub fn total(s: &Setup, rho: &[f64], beta: f64) -> f64 {
    let t = DensityTriple::evaluate(&s.op, rho, beta, 0.5).unwrap();
    s.model.evaluate(&t.rho_bar_nodal, None).unwrap().cost.total
}

/// Plane-strain bilinear element stiffness by n×n Gauss quadrature,
/// written independently of the library (dofs node-major, nodes in the
/// bit layout: node a sits at ((a & 1), (a >> 1) & 1)).
pub fn quad_stiffness_gauss(e: f64, nu: f64, hx: f64, hy: f64, order: usize) -> Vec<Vec<f64>> {
    let (pts, wts) = gauss_legendre(order);
    let c = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let d = [
        [c * (1.0 - nu), c * nu, 0.0],
        [c * nu, c * (1.0 - nu), 0.0],
        [0.0, 0.0, c * (1.0 - 2.0 * nu) / 2.0],
    ];
    let mut k = vec![vec![0.0; 8]; 8];
    for (i, &xi) in pts.iter().enumerate() {
        for (j, &eta) in pts.iter().enumerate() {
            let w = wts[i] * wts[j] * hx * hy / 4.0;
            let mut b = [[0.0; 8]; 3];
            for a in 0..4 {
                let sx = if a & 1 == 1 { 1.0 } else { -1.0 };
                let sy = if (a >> 1) & 1 == 1 { 1.0 } else { -1.0 };
                let dndx = sx * (1.0 + sy * eta) / 4.0 * 2.0 / hx;
                let dndy = sy * (1.0 + sx * xi) / 4.0 * 2.0 / hy;
                b[0][2 * a] = dndx;
                b[1][2 * a + 1] = dndy;
                b[2][2 * a] = dndy;
                b[2][2 * a + 1] = dndx;
            }
            for p in 0..8 {
                for q in 0..8 {
                    let mut s = 0.0;
                    for r in 0..3 {
                        for t in 0..3 {
                            s += b[r][p] * d[r][t] * b[t][q];
                        }
                    }
                    k[p][q] += w * s;
                }
            }
        }
    }
    k
}

/// Gauss-Legendre points and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pn1) = if n == 1 { (z, 1.0) } else { (p1, p0) };
            let dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let (pn, pn1) = if n == 1 { (z, 1.0) } else { (p1, p0) };
                let dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
    }
    (x, w)
}

/// Dense Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Central difference with respect to one design variable of the
/// pipeline filter → project → solve → total cost.
pub fn end_to_end_check(s: &Setup, beta: f64, picks: usize, seed: u64, h: f64) -> f64 {
    let n = s.problem.mesh.n_elements();
    let rho = random_design(n, seed);
    let t = DensityTriple::evaluate(&s.op, &rho, beta, 0.5).unwrap();
    let eval = s.model.evaluate(&t.rho_bar_nodal, None).unwrap();
    let sens = amtopo::sensitivity::total_sensitivity(&s.model, &eval, &t, &s.op).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    for _ in 0..picks {
        let e = rng.gen_range(0..n);
        let mut p = rho.clone();
        p[e] += h;
        let fp = total(s, &p, beta);
        p[e] -= 2.0 * h;
        let fm = total(s, &p, beta);
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((sens.d_rho[e] - fd).abs() / fd.abs());
    }
    worst
}
