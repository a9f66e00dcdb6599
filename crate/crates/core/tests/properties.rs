use logismos::forest::patches::label_distance;
use logismos::geom::Affine;
use logismos::graph::{brute_force_solve, check_solution, random_instance};
use logismos::maxflow::FlowBuilder;
use logismos::registration::fit_rigid;
use logismos::stats::r_squared;
use logismos::volume::Volume3D;
use logismos::{Error, Vec3};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn solve_matches_brute_force(seed in any::<u64>()) {
        let mut g = random_instance(seed, 2e4).unwrap();
        match (g.solve(), brute_force_solve(&g)) {
            (Ok(s), Ok(b)) => {
                prop_assert_eq!(s.total_cost_scaled, b.total_cost_scaled);
                prop_assert!(check_solution(&g, &s).unwrap().is_empty());
            }
            (Err(Error::Infeasible), Err(Error::Infeasible)) => {}
            (a, b) => prop_assert!(false, "solver {:?} vs brute force {:?}", a.map(|s| s.total_cost), b.map(|s| s.total_cost)),
        }
    }

    #[test]
    fn warm_resolve_matches_cold(seed in any::<u64>(), edits in prop::collection::vec((any::<u16>(), -2.0f64..2.0), 1..6)) {
        let mut g = random_instance(seed, 2e4).unwrap();
        if g.solve().is_err() {
            return Ok(());
        }
        let kk = g.layout.n_nodes;
        for (v, c) in edits {
            let v = v as usize % g.n_vars();
            let col: Vec<f64> = (0..kk).map(|k| c * (k as f64 - 1.0)).collect();
            g.set_column_costs(v, &col).unwrap();
            let warm = g.solve();
            let cold = g.clone().solve_cold();
            match (warm, cold) {
                (Ok(w), Ok(c)) => prop_assert_eq!(w.total_cost_scaled, c.total_cost_scaled),
                (Err(Error::Infeasible), Err(Error::Infeasible)) => {}
                (a, b) => prop_assert!(false, "warm {:?} vs cold {:?}", a.is_ok(), b.is_ok()),
            }
        }
    }

    #[test]
    fn max_flow_equals_min_cut(n in 3usize..9, arcs in prop::collection::vec((0usize..9, 0usize..9, 0i64..20), 1..30), terms in prop::collection::vec((0i64..15, 0i64..15), 9)) {
        let mut b = FlowBuilder::new(n);
        for &(u, v, c) in &arcs {
            if u % n != v % n {
                b.add_edge(u % n, v % n, c, 0);
            }
        }
        for v in 0..n {
            b.add_terminal(v, terms[v].0, terms[v].1);
        }
        let mut net = b.build();
        let f = net.solve_cold();
        prop_assert_eq!(f, net.cut_value());
        // enumerate every cut for the minimum
        let mut best = i64::MAX;
        for mask in 0u32..(1 << n) {
            let src = |v: usize| mask >> v & 1 == 1;
            let mut c = 0;
            for v in 0..n {
                c += if src(v) { terms[v].1 } else { terms[v].0 };
            }
            for &(u, v, cap) in &arcs {
                let (u, v) = (u % n, v % n);
                if u != v && src(u) && !src(v) {
                    c += cap;
                }
            }
            best = best.min(c);
        }
        prop_assert_eq!(f, best);
    }

    #[test]
    fn label_distance_is_a_pseudometric(a in prop::collection::vec(0u8..3, 27), b in prop::collection::vec(0u8..3, 27), c in prop::collection::vec(0u8..3, 27)) {
        let d = |x: &[u8], y: &[u8]| label_distance(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
    }

    #[test]
    fn affine_inverse_round_trips(rx in -1.0f64..1.0, ry in -1.0f64..1.0, rz in -1.0f64..1.0, t in prop::array::uniform3(-20.0f64..20.0), p in prop::array::uniform3(-50.0f64..50.0)) {
        let a = Affine::from_euler(rx, ry, rz, Vec3::from(t));
        let p = Vec3::from(p);
        let back = a.inverse().unwrap().apply(&a.apply(&p));
        prop_assert!((back - p).norm() < 1e-9);
    }

    #[test]
    fn rigid_fit_recovers_motion(rx in -0.5f64..0.5, ry in -0.5f64..0.5, rz in -0.5f64..0.5, t in prop::array::uniform3(-5.0f64..5.0)) {
        let pts: Vec<Vec3> = (0..20).map(|i| { let f = i as f64; Vec3::new(f.sin() * 10.0, (f * 0.7).cos() * 8.0, f * 0.5) }).collect();
        let a = Affine::from_euler(rx, ry, rz, Vec3::from(t));
        let moved: Vec<Vec3> = pts.iter().map(|p| a.apply(p)).collect();
        let fit = fit_rigid(&pts, &moved).unwrap();
        for (p, q) in pts.iter().zip(&moved) {
            prop_assert!((fit.apply(p) - q).norm() < 1e-8);
        }
    }

    #[test]
    fn volume_bytes_round_trip(data in prop::collection::vec(-1e6f32..1e6, 24)) {
        let v = Volume3D::new([2, 3, 4], [0.5, 0.6, 0.7], [1.0, -2.0, 3.0], data).unwrap();
        let back = Volume3D::from_le_bytes(&v.header(), &v.to_le_bytes()).unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn r_squared_of_linear_data_is_one(a in -5.0f64..5.0, b in -5.0f64..5.0, xs in prop::collection::vec(-10.0f64..10.0, 3..20)) {
        prop_assume!(a.abs() > 1e-3);
        prop_assume!(xs.iter().any(|&x| (x - xs[0]).abs() > 1e-3));
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        prop_assert!((r_squared(&xs, &ys) - 1.0).abs() < 1e-9);
    }
}
