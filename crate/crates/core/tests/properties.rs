use proptest::prelude::*;
use wass_splines::mm_sinkhorn::all_marginals;
use wass_splines::phase_ot::{phase_cost_matrix, sinkhorn_pairwise, CouplingMatrix, PairwiseOptions};
use wass_splines::semidiscrete::{sdv_gradient, sdv_objective, ParticleBundle, PenaltyTarget, SdvProblem};
use wass_splines::*;

fn phase(d: usize) -> impl Strategy<Value = PhasePoint> {
    (prop::collection::vec(-3.0..3.0f64, d), prop::collection::vec(-3.0..3.0f64, d))
        .prop_map(|(x, v)| PhasePoint::new(x, v).unwrap())
}

fn knots(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (3..=max, 1..=2usize).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(0.2..1.5f64, n - 1),
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d), n),
        )
            .prop_map(|(gaps, pts)| {
                let mut t = vec![0.0];
                for g in gaps {
                    t.push(t.last().unwrap() + g);
                }
                (t, pts)
            })
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

proptest! {
    #[test]
    fn hermite_energy_is_nonnegative(p in phase(2), q in phase(2)) {
        prop_assert!(hermite_energy(&p, &q).unwrap() >= 0.0);
    }

    #[test]
    fn hermite_energy_is_symmetric_under_reversal(p in phase(1), q in phase(1)) {
        // running the cubic backwards swaps endpoints and flips velocities
        let rp = PhasePoint::new(q.x.clone(), q.v.iter().map(|v| -v).collect()).unwrap();
        let rq = PhasePoint::new(p.x.clone(), p.v.iter().map(|v| -v).collect()).unwrap();
        let a = hermite_energy(&p, &q).unwrap();
        let b = hermite_energy(&rp, &rq).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn spline_cost_matches_interpolant((t, x) in knots(8)) {
        let a = spline_cost(&t, &x).unwrap();
        let b = fit_cubic_interpolant(&t, &x).unwrap().energy();
        prop_assert!(rel(a, b) < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn spline_cost_under_affine_time_change((t, x) in knots(6), shift in -5.0..5.0f64, scale in 0.3..3.0f64) {
        let base = spline_cost(&t, &x).unwrap();
        let moved: Vec<f64> = t.iter().map(|s| scale * s + shift).collect();
        // x(t) = y(scale t + shift) => |x''|^2 dt picks up scale^-3
        let c = spline_cost(&moved, &x).unwrap();
        prop_assert!(rel(c * scale.powi(3), base) < 1e-8);
    }

    #[test]
    fn spline_cost_under_time_reversal((t, x) in knots(7)) {
        let end = *t.last().unwrap();
        let rt: Vec<f64> = t.iter().rev().map(|s| end - s).collect();
        let rx: Vec<Vec<f64>> = x.iter().rev().cloned().collect();
        prop_assert!(rel(spline_cost(&rt, &rx).unwrap(), spline_cost(&t, &x).unwrap()) < 1e-8);
    }

    #[test]
    fn interpolant_passes_through_knots((t, x) in knots(7)) {
        let p = fit_cubic_interpolant(&t, &x).unwrap();
        for (ti, xi) in t.iter().zip(&x) {
            let (y, _) = p.eval(*ti);
            for (a, b) in y.iter().zip(xi) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rasterized_mixtures_are_normalized(
        m1 in -0.5..0.5f64, m2 in -0.5..0.5f64, var in 0.005..0.5f64, w in 0.1..0.9f64, nx in 3..40usize,
    ) {
        let g = Grid::new_1d(nx, -1.0, 1.0).unwrap();
        let mix = GaussianMixture::new(vec![
            GaussianComponent { weight: w, mean: vec![m1], variance: var },
            GaussianComponent { weight: 1.0 - w, mean: vec![m2], variance: var * 2.0 },
        ]).unwrap();
        let d = mix.rasterize(&g).unwrap();
        prop_assert!((d.mass() - 1.0).abs() < 1e-12);
        prop_assert!(d.weights().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn quartile_level_is_monotone(w in prop::collection::vec(0.0..1.0f64, 2..30), q1 in 0.01..0.99f64, q2 in 0.01..0.99f64) {
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let (lo, hi) = if q1 < q2 { (q1, q2) } else { (q2, q1) };
        prop_assert!(quartile_level(&w, hi) <= quartile_level(&w, lo));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn chain_marginals_have_unit_mass(seed in 0u64..1000, nx in 3..8usize, accel in any::<bool>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::new_1d(nx, 0.0, 1.0).unwrap();
        let t = TimeGrid::new(5, 1.0).unwrap();
        let mut dens = || DensityGrid::new(g.clone(), (0..nx).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap();
        let cs = vec![Constraint::new(0, dens()), Constraint::new(2, dens()), Constraint::new(4, dens())];
        let cost = if accel { CostKind::Acceleration } else { CostKind::Speed };
        let k = build_chain_kernel(&g, &t, 0.5, cost).unwrap();
        let (pot, rep) = sinkhorn_solve(&k, &cs, &SolveOptions::default()).unwrap();
        prop_assert!(rep.converged);
        for m in all_marginals(&pot, &k).unwrap() {
            prop_assert!((m.mass() - 1.0).abs() < 1e-12);
            prop_assert!(m.weights().iter().all(|v| *v >= 0.0));
        }
        for c in &cs {
            let m = all_marginals(&pot, &k).unwrap().swap_remove(c.step);
            prop_assert!(m.l1_distance(&c.density) < 1e-6);
        }
    }

    #[test]
    fn pairwise_coupling_beats_independent(seed in 0u64..1000, k in 1..6usize, l in 1..6usize, eps in 0.05..5.0f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = |n: usize| {
            let pts = (0..n)
                .map(|_| PhasePoint::new(vec![rng.gen_range(-1.0..1.0)], vec![rng.gen_range(-1.0..1.0)]).unwrap())
                .collect();
            WeightedPhaseCloud::uniform(pts).unwrap()
        };
        let (a, b) = (cloud(k), cloud(l));
        let c = phase_cost_matrix(&a, &b).unwrap();
        let (pi, _) = sinkhorn_pairwise(&c, a.weights(), b.weights(), eps, &PairwiseOptions::default()).unwrap();
        let indep: Vec<f64> = a.weights().iter().flat_map(|x| b.weights().iter().map(move |y| x * y)).collect();
        let ind = CouplingMatrix::new(k, l, indep, vec![0.0; k], vec![0.0; l]).unwrap();
        prop_assert!(pi.entropic_objective(&c, eps) <= ind.entropic_objective(&c, eps) + 1e-9);
    }

    #[test]
    fn sdv_permutation_and_translation(seed in 0u64..1000, n in 1..5usize, knots in 2..5usize, d in 1..3usize) {
        use rand::seq::SliceRandom;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let times: Vec<f64> = (0..knots).map(|i| i as f64 + rng.gen_range(0.0..0.3)).collect();
        let block = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<Vec<f64>>> {
            (0..knots).map(|_| (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()).collect()
        };
        let x = block(&mut rng);
        let v = block(&mut rng);
        let y = block(&mut rng);
        let targets: Vec<PenaltyTarget> = (0..knots).map(|i| PenaltyTarget::new(i, y[i].clone(), 0.3).unwrap()).collect();
        let p = SdvProblem::new(targets.clone());
        let b = ParticleBundle::new(times.clone(), x.clone(), v.clone()).unwrap();
        let f = sdv_objective(&b, &p).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let shuffle = |a: &Vec<Vec<Vec<f64>>>| a.iter().map(|k| perm.iter().map(|&j| k[j].clone()).collect()).collect();
        let bp = ParticleBundle::new(times.clone(), shuffle(&x), shuffle(&v)).unwrap();
        prop_assert!(rel(sdv_objective(&bp, &p).unwrap(), f) < 1e-12);

        let shift: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mv = |a: &Vec<Vec<f64>>| a.iter().map(|q| q.iter().zip(&shift).map(|(u, s)| u + s).collect()).collect::<Vec<Vec<f64>>>();
        let bt = ParticleBundle::new(times, x.iter().map(mv).collect(), v.clone()).unwrap();
        let pt = SdvProblem::new(targets.iter().map(|t| PenaltyTarget::new(t.knot, mv(&t.points), t.epsilon).unwrap()).collect());
        prop_assert!(rel(sdv_objective(&bt, &pt).unwrap(), f) < 1e-9);
        let (gx, gv) = sdv_gradient(&b, &p).unwrap();
        let (tx, tv) = sdv_gradient(&bt, &pt).unwrap();
        let flat = |a: &Vec<Vec<Vec<f64>>>| a.iter().flatten().flatten().copied().collect::<Vec<f64>>();
        for (a, b) in flat(&gx).iter().chain(&flat(&gv)).zip(flat(&tx).iter().chain(&flat(&tv))) {
            prop_assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
        }
    }
}

#[test]
fn pairwise_entropy_grows_with_epsilon() {
    let pts = |xs: &[(f64, f64)]| {
        WeightedPhaseCloud::uniform(xs.iter().map(|&(x, v)| PhasePoint::new(vec![x], vec![v]).unwrap()).collect())
            .unwrap()
    };
    let a = pts(&[(0.0, 0.0), (0.3, 1.0), (1.0, -0.5), (-0.7, 0.2)]);
    let b = pts(&[(0.5, 0.0), (1.2, 0.4), (-0.2, -1.0)]);
    let c = phase_cost_matrix(&a, &b).unwrap();
    let h: Vec<f64> = [0.1, 1.0, 10.0]
        .iter()
        .map(|&e| sinkhorn_pairwise(&c, a.weights(), b.weights(), e, &PairwiseOptions::default()).unwrap().0.entropy())
        .collect();
    assert!(h[0] <= h[1] && h[1] <= h[2], "{h:?}");
}
