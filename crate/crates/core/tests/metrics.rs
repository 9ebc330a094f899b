use amtopo::mesh::{build_mesh, StructuredMesh};
use amtopo::metrics::{grayness, npup, npup_sweep, pup, pup_gradient, ZETA};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn nodal_field(mesh: &StructuredMesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    (0..mesh.n_nodes())
        .map(|n| {
            let p = mesh.node_position(n);
            f(p[0], p[1])
        })
        .collect()
}

fn ramp(t: f64) -> f64 {
    t.clamp(0.0, 1.0)
}

fn smooth_step(t: f64, width: f64) -> f64 {
    0.5 * (1.0 + (t / width).tanh())
}

/// Horizontal slab x ∈ [1, 3], y ∈ [0.8, 1.6] with smooth interfaces.
fn slab(x: f64, y: f64) -> f64 {
    let w = 0.04;
    smooth_step(x - 1.0, w) * smooth_step(3.0 - x, w) * smooth_step(y - 0.8, w) * smooth_step(1.6 - y, w)
}

#[test]
fn slab_perimeter_is_its_width() {
    let mesh = build_mesh(&[4.0, 2.4], &[400, 240], None).unwrap();
    let rho = nodal_field(&mesh, slab);
    let p = pup(&mesh, &rho, 45.0, ZETA).unwrap();
    assert!((p - 2.0).abs() <= 0.05 * 2.0, "{p}");
}

#[test]
fn vertical_stripe_has_no_undercut() {
    let mesh = build_mesh(&[4.0, 2.0], &[80, 40], None).unwrap();
    let rho = nodal_field(&mesh, |x, _| smooth_step(x - 1.5, 0.1) * smooth_step(2.5 - x, 0.1));
    let p = pup(&mesh, &rho, 45.0, ZETA).unwrap();
    assert!(p.abs() <= 1e-3 * 2.0, "{p}");
}

#[test]
fn npup_is_plate_normalized() {
    let m2 = build_mesh(&[12.0, 6.0], &[24, 12], None).unwrap();
    assert_eq!(npup(&m2, 0.0), 0.0);
    assert_eq!(npup(&m2, 3.0), 3.0 / 12.0);
    let m3 = build_mesh(&[12.0, 6.0, 6.0], &[12, 6, 6], None).unwrap();
    assert_eq!(npup(&m3, 3.0), 3.0 / 72.0);
}

#[test]
fn sweep_is_a_map_over_angles() {
    let mesh = build_mesh(&[4.0, 2.4], &[40, 24], None).unwrap();
    let rho = nodal_field(&mesh, slab);
    let rows = npup_sweep(&mesh, &rho, &[30.0, 45.0, 45.0, 60.0], ZETA).unwrap();
    assert_eq!(rows[1], rows[2]);
    for r in &rows {
        let p = pup(&mesh, &rho, r.angle_deg, ZETA).unwrap();
        assert_eq!(r.pup, p);
        assert_eq!(r.npup, npup(&mesh, p));
    }
    // a larger threshold angle admits more of the surface
    assert!(rows[0].pup <= rows[1].pup && rows[1].pup <= rows[3].pup);
}

#[test]
fn pup_gradient_matches_differences_at_an_interface() {
    let mesh = build_mesh(&[4.0, 2.0], &[40, 20], None).unwrap();
    // tilted smooth interface so every node sees a different direction
    let rho = nodal_field(&mesh, |x, y| smooth_step(y - 0.8 - 0.2 * x, 0.25));
    let g = pup_gradient(&mesh, &rho, 45.0, ZETA).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-6;
    let mut checked = 0;
    while checked < 20 {
        let a = rng.gen_range(0..mesh.n_nodes());
        // far from the interface |∇ρ̄| is tiny and any usable step is
        // already in the nonlinear range
        if (rho[a] - 0.5).abs() > 0.4 {
            continue;
        }
        let mut p = rho.clone();
        p[a] += h;
        let fp = pup(&mesh, &p, 45.0, ZETA).unwrap();
        p[a] -= 2.0 * h;
        let fm = pup(&mesh, &p, 45.0, ZETA).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        checked += 1;
        assert!((g[a] - fd).abs() <= 1e-3 * fd.abs(), "node {a}: {} vs {fd}", g[a]);
    }
}

#[test]
fn pup_gradient_support() {
    let mesh = build_mesh(&[4.0, 2.0], &[40, 20], None).unwrap();
    // linear ramp across rows 8..10 (y in [0.8, 1.0]), constant elsewhere
    let rho = nodal_field(&mesh, |_, y| ramp((y - 0.8) / 0.2));
    let g = pup_gradient(&mesh, &rho, 45.0, ZETA).unwrap();
    let h = 0.1;
    for n in 0..mesh.n_nodes() {
        let y = mesh.node_position(n)[1];
        if y < 0.8 - h - 1e-9 || y > 1.0 + h + 1e-9 {
            assert_eq!(g[n], 0.0, "node at y = {y}");
        }
    }
    assert!(g.iter().any(|&v| v != 0.0));
    let uniform = vec![0.3; mesh.n_nodes()];
    assert!(pup_gradient(&mesh, &uniform, 45.0, ZETA).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn pup_is_translation_invariant() {
    let mesh = build_mesh(&[6.0, 3.0], &[60, 30], None).unwrap();
    let at = |dx: f64| nodal_field(&mesh, move |x, y| slab(x - dx - 1.0, y - 0.2));
    let base = pup(&mesh, &at(0.0), 45.0, ZETA).unwrap();
    for shift in [0.3, 1.0, 1.5] {
        let p = pup(&mesh, &at(shift), 45.0, ZETA).unwrap();
        assert!((p - base).abs() <= 1e-6 * base, "{shift}: {p} vs {base}");
    }
}

#[test]
fn grayness_examples() {
    let mesh = build_mesh(&[2.0, 1.0], &[8, 4], None).unwrap();
    assert_eq!(grayness(&mesh, &[0.5; 32]), 1.0);
    let binary: Vec<f64> = (0..32).map(|e| (e % 3 == 0) as u8 as f64).collect();
    assert_eq!(grayness(&mesh, &binary), 0.0);
}
