use std::path::Path;

use amtopo::filter::{project_value, FilterOperator};
use amtopo::io::{density_csv_string, parse_density_csv, DensityKind};
use amtopo::material::{ramp_conductivity, MaterialLaw};
use amtopo::mesh::{build_mesh, extract_submesh, restrict_field, scatter_field, LayerPartition, StructuredMesh};
use amtopo::metrics::{grayness, npup_sweep, ZETA};
use amtopo::optimizer::{mma_step, MmaSettings, MmaState};
use proptest::prelude::*;

fn mesh2d() -> impl Strategy<Value = StructuredMesh> {
    (1usize..12, 1usize..12, 0.5f64..4.0, 0.5f64..4.0)
        .prop_map(|(nx, ny, lx, ly)| build_mesh(&[lx, ly], &[nx, ny], None).unwrap())
}

fn mesh_any() -> impl Strategy<Value = StructuredMesh> {
    prop_oneof![
        mesh2d(),
        (1usize..5, 1usize..5, 1usize..6).prop_map(|(a, b, c)| build_mesh(&[1.0, 2.0, 1.5], &[a, b, c], None).unwrap()),
    ]
}

fn field(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mesh_counts(m in mesh_any()) {
        let c = m.counts();
        let d = m.dim();
        prop_assert_eq!(m.n_elements(), c[..d].iter().product::<usize>());
        prop_assert_eq!(m.n_nodes(), c[..d].iter().map(|k| k + 1).product::<usize>());
        for e in 0..m.n_elements() {
            prop_assert_eq!(m.element_index(m.element_coords(e)), e);
        }
        for n in 0..m.n_nodes() {
            prop_assert_eq!(m.node_index(m.node_coords(n)), n);
        }
    }

    #[test]
    fn layers_nest_and_partition(m in mesh_any(), l in 1usize..12) {
        let rows = m.rows();
        let p = match LayerPartition::uniform(&m, l) {
            Ok(p) => p,
            Err(_) => {
                prop_assume!(l <= rows);
                LayerPartition::snapped(&m, l).unwrap()
            }
        };
        let mut covered = 0;
        let mut prev = 0;
        for i in 1..=p.len() {
            let added = p.added_rows(i);
            prop_assert_eq!(added.start, covered);
            prop_assert!(added.end > added.start);
            covered = added.end;
            let sub = extract_submesh(&m, &p, i).unwrap();
            prop_assert!(sub.n_elements() > prev);
            prev = sub.n_elements();
            // every sub-mesh element is the parent element of the same index
            let last = sub.n_elements() - 1;
            let (a, b) = (m.element_centroid(sub.parent_element(last)), sub.mesh().element_centroid(last));
            prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0)));
            let top = sub.top().measure(sub.mesh());
            prop_assert!((top - m.plate_measure()).abs() <= 1e-12 * m.plate_measure());
        }
        prop_assert_eq!(covered, rows);
    }

    #[test]
    fn restrict_then_scatter_is_identity(m in mesh2d(), seed in any::<u64>()) {
        let rows = m.rows();
        let p = LayerPartition::snapped(&m, rows.min(3)).unwrap();
        let f: Vec<f64> = (0..m.n_elements()).map(|e| ((e as u64 ^ seed) % 97) as f64).collect();
        for i in 1..=p.len() {
            let sub = extract_submesh(&m, &p, i).unwrap();
            let r = restrict_field(&f, &sub, &m).unwrap();
            let mut back = vec![f64::NAN; m.n_elements()];
            scatter_field(&r, &sub, &mut back).unwrap();
            for e in sub.element_map() {
                prop_assert_eq!(back[e], f[e]);
            }
        }
    }

    #[test]
    fn filter_preserves_constants_and_range(m in mesh2d(), radius in 0.05f64..2.0, c in 0.0f64..=1.0, seed in 0u64..1000) {
        let op = FilterOperator::new(&m, radius).unwrap();
        let out = op.apply_unclamped(&vec![c; m.n_elements()]).unwrap();
        prop_assert!(out.iter().all(|v| (v - c).abs() <= 1e-10));
        let rho: Vec<f64> = (0..m.n_elements()).map(|e| ((e as u64 * 7919 + seed) % 101) as f64 / 100.0).collect();
        prop_assert!(op.apply(&rho).unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn filter_adjoint_pairs(m in mesh_any(), radius in 0.05f64..2.0, x in field(512), y in prop::collection::vec(-1.0f64..1.0, 512)) {
        let ne = m.n_elements();
        let nn = m.n_nodes();
        prop_assume!(ne <= 512 && nn <= 512);
        let op = FilterOperator::new(&m, radius).unwrap();
        let fx = op.apply_unclamped(&x[..ne]).unwrap();
        let aty = op.adjoint(&y[..nn]).unwrap();
        let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn projection_is_monotone_into_unit_interval(a in 0.0f64..=1.0, b in 0.0f64..=1.0, beta in 0.1f64..64.0, gamma in 0.05f64..0.95) {
        let (pa, da) = project_value(a, beta, gamma);
        let (pb, _) = project_value(b, beta, gamma);
        prop_assert!((0.0..=1.0).contains(&pa) && da >= 0.0);
        if a <= b {
            prop_assert!(pa <= pb + 1e-15);
        }
    }

    #[test]
    fn materials_are_monotone_and_bounded(a in 0.0f64..=1.0, b in 0.0f64..=1.0, q in 0.0f64..8.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for law in [MaterialLaw::simp(1.0, 1e-9, q, 0.3), MaterialLaw::ramp(1.0, 1e-9, q, 0.3, 1e-9)] {
            let (el, del) = law.young(lo);
            let (eh, _) = law.young(hi);
            prop_assert!(el <= eh && del >= 0.0);
            prop_assert!(el >= 1e-9 && eh <= 1.0 + 1e-15);
            let (kl, _) = ramp_conductivity(lo, &law);
            let (kh, _) = ramp_conductivity(hi, &law);
            prop_assert!(kl <= kh && kl >= 1e-9 && kh <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn grayness_is_a_fraction(m in mesh2d(), f in field(144)) {
        let ne = m.n_elements();
        let g = grayness(&m, &f[..ne]);
        prop_assert!((0.0..=1.0).contains(&g));
    }

    #[test]
    fn sweep_is_a_map(m in mesh2d(), f in field(169), angles in prop::collection::vec(5.0f64..85.0, 1..5)) {
        let nn = m.n_nodes();
        let rows = npup_sweep(&m, &f[..nn], &angles, ZETA).unwrap();
        prop_assert_eq!(rows.len(), angles.len());
        for (r, &a) in rows.iter().zip(&angles) {
            prop_assert_eq!(r.angle_deg, a);
            let one = npup_sweep(&m, &f[..nn], &[a], ZETA).unwrap();
            prop_assert_eq!(&one[0], r);
        }
    }

    #[test]
    fn mma_iterates_stay_in_the_box(
        x in prop::collection::vec(0.0f64..=1.0, 1..20),
        g in prop::collection::vec(-10.0f64..10.0, 20),
        c in prop::collection::vec(-1.0f64..1.0, 20),
        f in -1.0f64..1.0,
    ) {
        let n = x.len();
        let mut st = MmaState::new(n, 1, MmaSettings::default()).unwrap();
        let mut cur = x.clone();
        for _ in 0..3 {
            let out = mma_step(&mut st, &cur, &g[..n], &[f], &[c[..n].to_vec()]).unwrap();
            prop_assert!(out.x.iter().all(|v| (0.0..=1.0).contains(v)));
            cur = out.x;
        }
    }

    #[test]
    fn density_csv_round_trips(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..50)) {
        let text = density_csv_string(DensityKind::Element, &v);
        let back = parse_density_csv(&text, Path::new("p.csv")).unwrap();
        prop_assert_eq!(&back.values, &v);
        prop_assert_eq!(density_csv_string(back.kind, &back.values), text);
    }
}
