use obstacle_core::harness::{lipschitz_record, parallelogram_residual};
use obstacle_core::mesh::{build_rectangle_mesh, prolongate, refine_uniform};
use obstacle_core::vi::{solve_pdas, solve_psor, solve_psor_from};
use obstacle_core::{
    ControlProblem, CostParams, FemSpace, NodalField, ObstacleProblem, PdasOptions, PsorOptions, Rect, ScalarFn,
    Side, VISolver,
};
use proptest::prelude::*;

fn sides() -> impl Strategy<Value = Vec<Side>> {
    prop::sample::subsequence(Side::ALL.to_vec(), 1..=4)
}

fn rect() -> impl Strategy<Value = Rect> {
    (-2.0..2.0f64, 0.2..3.0f64, -2.0..2.0f64, 0.2..3.0f64)
        .prop_map(|(x0, w, y0, h)| Rect::new(x0, x0 + w, y0, y0 + h).unwrap())
}

fn space(nx: usize, ny: usize, r: Rect, s: &[Side]) -> FemSpace {
    FemSpace::new(build_rectangle_mesh(nx, ny, r, s).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn triangle_areas_tile_the_rectangle(nx in 1usize..7, ny in 1usize..7, r in rect(), s in sides()) {
        let m = build_rectangle_mesh(nx, ny, r, &s).unwrap();
        prop_assert_eq!(m.num_triangles(), 2 * nx * ny);
        let total: f64 = (0..m.num_triangles()).map(|t| m.triangle_area(t)).sum();
        for t in 0..m.num_triangles() {
            prop_assert!(m.triangle_area(t) > 0.0);
        }
        prop_assert!((total - r.area()).abs() <= 1e-12 * r.area());
    }

    #[test]
    fn affine_functions_are_reproduced(
        nx in 1usize..6, ny in 1usize..6, r in rect(),
        a0 in -5.0..5.0f64, ax in -5.0..5.0f64, ay in -5.0..5.0f64,
        sx in 0.0..1.0f64, sy in 0.0..1.0f64,
    ) {
        let m = build_rectangle_mesh(nx, ny, r, &[Side::Left]).unwrap();
        let f = |x: f64, y: f64| a0 + ax * x + ay * y;
        let v = obstacle_core::mesh::interpolate(&m, f).unwrap();
        let (x, y) = (r.x0 + sx * r.width(), r.y0 + sy * r.height());
        let got = m.evaluate(&v, x, y).unwrap();
        prop_assert!((got - f(x, y)).abs() <= 1e-11 * (1.0 + f(x, y).abs()));
    }

    #[test]
    fn stiffness_annihilates_constants_and_mass_integrates_one(
        nx in 1usize..6, ny in 1usize..6, r in rect(), c in -3.0..3.0f64,
    ) {
        let sp = space(nx, ny, r, &[Side::Bottom]);
        let ones = vec![c; sp.num_vertices()];
        let au = sp.stiffness().mul(&ones).unwrap();
        prop_assert!(au.iter().all(|x| x.abs() <= 1e-12 * (1.0 + c.abs())));
        let mass = sp.mass().quad(&vec![1.0; sp.num_vertices()]).unwrap();
        prop_assert!((mass - r.area()).abs() <= 1e-12 * r.area());
    }

    #[test]
    fn prolongation_preserves_norms(
        n in 1usize..4, vals in prop::collection::vec(-10.0..10.0f64, 16), s in sides(),
    ) {
        let coarse = build_rectangle_mesh(n, n, Rect::UNIT, &s).unwrap();
        let fine = refine_uniform(&refine_uniform(&coarse).unwrap()).unwrap();
        let nv = coarse.num_vertices();
        let v = NodalField::new(vals.iter().cycle().take(nv).copied().collect(), 0).unwrap();
        let pv = prolongate(&coarse, &fine, &v).unwrap();
        let (cs, fs) = (FemSpace::new(coarse).unwrap(), FemSpace::new(fine).unwrap());
        let (a, b) = (cs.l2_norm(&v).unwrap(), fs.l2_norm(&pv).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        let (a, b) = (cs.h1_norm(&v).unwrap(), fs.h1_norm(&pv).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn parallelogram_identity_in_h(
        a in prop::collection::vec(-10.0..10.0f64, 25),
        b in prop::collection::vec(-10.0..10.0f64, 25),
        mu in 0.0..1.0f64,
    ) {
        let sp = space(4, 4, Rect::UNIT, &[Side::Left]);
        let res = parallelogram_residual(&sp, &a, &b, mu).unwrap();
        let scale = sp.mass().quad(&a).unwrap() + sp.mass().quad(&b).unwrap();
        prop_assert!(res <= 1e-13 * (1.0 + scale));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn solvers_agree_and_solution_is_unique(
        n in 2usize..6, s in sides(),
        g in prop::collection::vec(-40.0..40.0f64, 36),
        start in prop::collection::vec(-5.0..5.0f64, 36),
        q in -3.0..3.0f64, b in 0.0..1.5f64,
    ) {
        let sp = space(n, n, Rect::UNIT, &s);
        let nv = sp.num_vertices();
        let flux = sp.flux_load(|_, _| q).unwrap();
        let prob = ObstacleProblem::new(&sp, &g[..nv], &flux, b).unwrap();
        let pd = solve_pdas(&prob, PdasOptions::default()).unwrap();
        let ps = solve_psor(&prob, PsorOptions::default()).unwrap();
        let ps2 = solve_psor_from(&prob, PsorOptions::default(), &start[..nv]).unwrap();
        prop_assert!(pd.converged && ps.converged && ps2.converged);
        let scale = 1.0 + pd.state.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(pd.state.max_abs_diff(&ps.state) <= 1e-7 * scale);
        prop_assert!(ps.state.max_abs_diff(&ps2.state) <= 1e-7 * scale);
        pd.check(&prob, 1e-9).unwrap();
    }

    #[test]
    fn control_to_state_map_is_lipschitz(
        g1 in prop::collection::vec(-30.0..30.0f64, 36),
        g2 in prop::collection::vec(-30.0..30.0f64, 36),
        b in 0.0..1.0f64,
    ) {
        let sp = space(5, 5, Rect::UNIT, &[Side::Left, Side::Bottom]);
        let params = CostParams::new(1.0, b, ScalarFn::constant(0.0)).unwrap();
        let cp = ControlProblem::new(&sp, params, VISolver::Pdas(PdasOptions::default())).unwrap();
        let lambda = sp.coercivity_constant().unwrap();
        prop_assume!(sp.l2_distance(&g1, &g2).unwrap() > 1e-6);
        let r = lipschitz_record(&cp, lambda, 0, &g1, &g2).unwrap();
        prop_assert!(r.ratio <= 1.0 + 1e-9, "ratio {}", r.ratio);
    }
}
