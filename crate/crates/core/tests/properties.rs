use mmc_core::ekf::{
    jacobian, state_transition, symmetric_eigenvalues, EkfConfig, EkfState, ObservationMode,
};
use mmc_core::link::{
    conditional_slot_statistics, error_probability, grid_threshold, optimal_threshold,
    slot_statistics, SlotStatistics,
};
use mmc_core::mobility::reflect_into_vessel;
use mmc_core::physics::{
    arrival_probabilities, effective_velocity, impulse_response, velocity_at, PhysicalParams,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params_strategy() -> impl Strategy<Value = PhysicalParams> {
    (
        1e-4f64..1e-2,
        1e2f64..1e5,
        5e-6f64..5e-5,
        1e-9f64..1e-8,
        10u32..3000,
    )
        .prop_map(|(mu, kappa, r_v, d_m, spb)| PhysicalParams {
            mu,
            eta: mu,
            kappa,
            r_v,
            d_m,
            r_rx: r_v / 4.0,
            r_tx: r_v / 4.0,
            v_rx: mmc_core::physics::sphere_volume(r_v / 4.0),
            steps_per_bit: spb,
            ..PhysicalParams::default()
        })
}

fn stats_strategy() -> impl Strategy<Value = SlotStatistics> {
    (0.0f64..200.0, 1.0f64..400.0, 1.0f64..300.0, 1.0f64..900.0).prop_map(
        |(mu0, var0, gap, var1)| SlotStatistics {
            mu0,
            var0,
            mu1: mu0 + gap,
            var1,
        },
    )
}

proptest! {
    #[test]
    fn velocity_decreases_outward(p in params_strategy(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let v_lo = velocity_at(lo * p.r_v, &p);
        let v_hi = velocity_at(hi * p.r_v, &p);
        prop_assert!(v_lo >= v_hi);
        prop_assert!(v_hi >= 0.0);
        prop_assert_eq!(velocity_at(p.r_v * (1.0 + a), &p), 0.0);
    }

    #[test]
    fn mean_velocity_is_area_average(p in params_strategy()) {
        // midpoint rule over annuli
        let n = 4000;
        let dr = p.r_v / n as f64;
        let flux: f64 = (0..n)
            .map(|i| {
                let r = (i as f64 + 0.5) * dr;
                velocity_at(r, &p) * 2.0 * std::f64::consts::PI * r * dr
            })
            .sum();
        let avg = flux / (std::f64::consts::PI * p.r_v * p.r_v);
        prop_assert!((avg - effective_velocity(&p)).abs() <= 1e-6 * effective_velocity(&p));
    }

    #[test]
    fn impulse_response_is_a_probability(p in params_strategy(), t in 1e-6f64..10.0, d in 0.0f64..1e-3) {
        let h = impulse_response(t, d, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
    }

    #[test]
    fn slot_probabilities_are_unimodal(p in params_strategy(), d in 1e-6f64..5e-4) {
        let probs = arrival_probabilities(d, &p);
        prop_assert!(!probs.is_empty());
        let peak = probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        for w in probs[..=peak].windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        for w in probs[peak..].windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(probs.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn reflection_stays_inside(y in -1e-3f64..1e-3, z in -1e-3f64..1e-3, r_v in 1e-6f64..1e-4) {
        let (ry, rz) = reflect_into_vessel(y, z, r_v);
        prop_assert!(ry.hypot(rz) <= r_v * (1.0 + 1e-12));
        // direction is kept
        prop_assert!(ry * y >= 0.0 && rz * z >= 0.0);
        if y.hypot(z) <= r_v {
            prop_assert_eq!((ry, rz), (y, z));
        }
    }

    #[test]
    fn jacobian_matches_finite_differences(p in params_strategy(), x in -1e-3f64..1e-3, a in -0.9f64..0.9, b in -0.9f64..0.9) {
        let l = [x, a * p.r_v, b * p.r_v];
        let j = jacobian(&l, &p);
        let h = 1e-4 * p.r_v;
        for col in 0..3 {
            let mut up = l;
            let mut dn = l;
            up[col] += h;
            dn[col] -= h;
            let fu = state_transition(&up, &p);
            let fd = state_transition(&dn, &p);
            for row in 0..3 {
                let fdiff = (fu[row] - fd[row]) / (2.0 * h);
                let scale = j[row][col].abs().max(1e-12);
                prop_assert!((fdiff - j[row][col]).abs() <= 1e-6 * scale + 1e-9, "({row},{col}) {fdiff} vs {}", j[row][col]);
            }
        }
    }

    #[test]
    fn covariance_stays_symmetric_psd(seed in any::<u64>(), sigma in 1e-8f64..1e-5, update in any::<bool>()) {
        let p = PhysicalParams::default();
        let mode = if update { ObservationMode::Update } else { ObservationMode::Feedback };
        let cfg = EkfConfig { mode, sigma_obs: sigma, ..EkfConfig::default() };
        let truth = [1e-4, 5e-6, 5e-6];
        let mut f = EkfState::new(truth, &p, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            f.predict();
            let z = f.observe(&truth, &mut rng);
            f.update(&z).unwrap();
            let c = f.covariance;
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert_eq!(c[i][j], c[j][i]);
                }
            }
            let scale = c[0][0].abs().max(c[1][1].abs()).max(c[2][2].abs());
            prop_assert!(symmetric_eigenvalues(&c).iter().all(|&e| e >= -1e-12 * scale));
        }
    }

    #[test]
    fn closed_form_threshold_beats_grid(s in stats_strategy()) {
        let t = optimal_threshold(&s).unwrap();
        let g = grid_threshold(&s, s.mu0 - 5.0 * s.var0.sqrt(), s.mu1 + 5.0 * s.var1.sqrt(), 0.01);
        prop_assert!(error_probability(&s, t) <= error_probability(&s, g) + 1e-12);
        prop_assert!((t - g).abs() <= 0.01 + 1e-9 || (error_probability(&s, t) - error_probability(&s, g)).abs() < 1e-12);
    }

    #[test]
    fn hypothesis_gap_is_current_contribution(
        levels in proptest::collection::vec(0.0f64..2e5, 0..12),
        n in 0.0f64..2e5,
        p1 in 1e-5f64..1e-2,
        tail in proptest::collection::vec(0.0f64..1e-3, 0..12),
        ns in 0.0f64..1.0,
    ) {
        let mut probs = vec![p1];
        probs.extend(tail);
        let s = slot_statistics(&levels, n, &probs, ns);
        prop_assert!(((s.mu1 - s.mu0) - n * p1).abs() <= 1e-9 * (n * p1).max(1.0));
        prop_assert!(s.var0 >= 0.0 && s.var1 >= 0.0);
        let c = conditional_slot_statistics(&levels, n, &probs, ns);
        prop_assert!(((c.mu1 - c.mu0) - n * p1).abs() <= 1e-9 * (n * p1).max(1.0));
    }
}
