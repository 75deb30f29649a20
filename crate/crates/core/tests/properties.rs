use branchwave::field::WaveField;
use branchwave::geometry::{build_grid, geodesic_distance, CoveringSpec, SheetPoint};
use branchwave::metricfield::{gauss_curvature, inj_bound_global, membership, Domain, Surface, SurfaceFunction};
use branchwave::packets::{cutoff_point, PacketSpec};
use branchwave::scattering::channel_masses;
use branchwave::spectral::cluster_levels;
use num_complex::Complex64;
use proptest::prelude::*;

fn point(n: usize) -> impl Strategy<Value = SheetPoint> {
    (-4.0f64..4.0, -4.0f64..4.0, 0..n)
        .prop_filter("not a branch point", |(x, y, _)| !(*y == 0.0 && x.abs() == 1.0))
        .prop_map(move |(x, y, k)| SheetPoint::new(x, y, k, &CoveringSpec::new(n).unwrap()).unwrap())
}

fn triple() -> impl Strategy<Value = (usize, SheetPoint, SheetPoint, SheetPoint)> {
    (2usize..5).prop_flat_map(|n| (Just(n), point(n), point(n), point(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn distance_is_a_metric((n, p, q, r) in triple()) {
        let spec = CoveringSpec::new(n).unwrap();
        let pq = geodesic_distance(&p, &q, &spec);
        prop_assert!((pq - geodesic_distance(&q, &p, &spec)).abs() <= 1e-12);
        prop_assert!(geodesic_distance(&p, &r, &spec) <= pq + geodesic_distance(&q, &r, &spec) + 1e-12);
        let planar = (p.x - q.x).hypot(p.y - q.y);
        prop_assert!(pq >= planar - 1e-12);
        prop_assert_eq!(geodesic_distance(&p, &p, &spec), 0.0);
    }

    #[test]
    fn monodromy_cycles(n in 2usize..6, k in 0usize..6) {
        let spec = CoveringSpec::new(n).unwrap();
        let k = k % n;
        prop_assert_eq!(spec.monodromy_inv(spec.monodromy(k)), k);
        prop_assert_eq!(spec.monodromy_pow(k, n as i64), k);
        prop_assert_eq!(spec.monodromy_pow(k, -1), spec.monodromy_inv(k));
    }

    #[test]
    fn cutoff_bounds(x in -4.0f64..4.0, y in -4.0f64..4.0) {
        let [chi, dx, dy, lap] = cutoff_point(x, y, 0.0).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&chi));
        // |x| - |y| is sqrt(2)-Lipschitz, so the radius-1/4 ball decides chi away from the lines
        let g = x.abs() - y.abs();
        if g <= 0.5 - 2f64.sqrt() / 4.0 - 1e-9 {
            prop_assert!((chi - 1.0).abs() < 1e-12 && dx == 0.0 && dy == 0.0 && lap == 0.0);
        }
        if g >= 0.5 + 2f64.sqrt() / 4.0 + 1e-9 {
            prop_assert!(chi.abs() < 1e-12 && dx == 0.0 && dy == 0.0 && lap == 0.0);
        }
        let m = cutoff_point(-x, y, 0.0).unwrap();
        prop_assert!((m[0] - chi).abs() < 1e-10);
        let f = cutoff_point(x, -y, 0.0).unwrap();
        prop_assert!((f[0] - chi).abs() < 1e-10);
    }

    #[test]
    fn eps_prime_is_a_fifth(eps in 0.001f64..0.999) {
        let p = PacketSpec::new(4.0, 8.0, 0.0, eps).unwrap();
        prop_assert_eq!(p.eps_prime(), eps / 5.0);
    }

    #[test]
    fn linear_graphs_are_flat(ax in -3.0f64..3.0, ay in -3.0f64..3.0, x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let f = SurfaceFunction::new(Surface::Linear { ax, ay });
        prop_assert_eq!(gauss_curvature(&f, x, y), 0.0);
    }

    #[test]
    fn global_bound_monotone(b in 0.0f64..3.0, db in 0.01f64..1.0, g in 0.1f64..5.0, dg in 0.01f64..1.0) {
        let base = inj_bound_global(b, g).unwrap();
        prop_assert!(inj_bound_global(b + db, g).unwrap() < base);
        prop_assert!(inj_bound_global(b, g + dg).unwrap() < base);
    }

    #[test]
    fn clusters_partition(mut v in prop::collection::vec(0.1f64..100.0, 1..40)) {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let c = cluster_levels(&v, 0.02);
        prop_assert_eq!(c.iter().map(|l| l.1).sum::<usize>(), v.len());
        prop_assert!(c.windows(2).all(|w| w[0].0 < w[1].0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn adjacency_is_symmetric(n in 2usize..5, hinv in prop::sample::select(vec![2.0f64, 3.0, 4.0, 6.0])) {
        let g = build_grid(CoveringSpec::new(n).unwrap(), 4.5, 1.0 / hinv).unwrap();
        for id in 0..g.num_nodes() {
            for (d, nb) in g.neighbors(id).iter().enumerate() {
                if let Some(m) = nb {
                    // opposite directions pair up as (0, 1) and (2, 3)
                    prop_assert_eq!(g.neighbor(*m, d ^ 1), Some(id));
                }
            }
        }
    }

    #[test]
    fn sheet_masses_sum_to_norm(n in 2usize..4, seed in prop::collection::vec(-1.0f64..1.0, 64)) {
        let g = build_grid(CoveringSpec::new(n).unwrap(), 4.5, 0.5).unwrap();
        let vals: Vec<Complex64> = (0..g.num_nodes())
            .map(|i| Complex64::new(seed[i % 64], seed[(i * 7 + 3) % 64]))
            .collect();
        let psi = WaveField::from_values(&g, vals).unwrap();
        let m = channel_masses(&g, &psi, 4.0);
        let total: f64 = m.total.iter().sum();
        prop_assert!((total - psi.norm_sq()).abs() <= 1e-10 * psi.norm_sq().max(1.0));
        prop_assert!(m.far.iter().zip(&m.total).all(|(f, t)| *f <= *t + 1e-15));
    }

    #[test]
    fn membership_monotone(gamma in 0.05f64..2.0, eps in 0.05f64..2.0, dg in 0.0f64..2.0, de in 0.0f64..2.0) {
        let f = SurfaceFunction::new(Surface::GaussianBump { amp: 0.3, sigma: 0.6, center: (0.0, 3.0) });
        let dom = Domain::new(6.0, 2);
        let a = membership(&f, 0.1, gamma, eps, &dom).unwrap();
        let b = membership(&f, 0.1, gamma + dg, eps + de, &dom).unwrap();
        prop_assert!(!a.member_gamma_eps || b.member_gamma_eps);
    }
}
