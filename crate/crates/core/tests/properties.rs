//! Property tests of invariants that hold for every admissible input.

use proptest::prelude::*;

use hjbd_core::first_order_hj::envelope;
use hjbd_core::gibbs_sampler::truncated_std_normal;
use hjbd_core::special::{erfcx, normal_cdf, normal_isf};
use hjbd_core::tv_imaging::{decode_pgm, encode_pgm, plateau_fraction, psnr, rof_map, rof_objective, Image};
use hjbd_core::verification::{CheckResult, VerificationReport};
use hjbd_core::viscous_hj::{
    posterior_summary_quadrature, s_eps_closed_quadratic, u_pm_closed_l1, EstimatorParams, QuadratureConfig,
};
use hjbd_core::Prior;

fn params() -> impl Strategy<Value = EstimatorParams> {
    (-3.0f64..3.9, -4.6f64..3.9).prop_map(|(lt, le)| EstimatorParams { t: lt.exp(), eps: le.exp() })
}

fn priors() -> impl Strategy<Value = Prior> {
    prop_oneof![
        Just(Prior::zero()),
        (0.05f64..20.0).prop_map(|m| Prior::quadratic(m).unwrap()),
        prop::collection::vec(0.0f64..5.0, 1..4).prop_map(|l| Prior::weighted_l1(l).unwrap()),
        (0.1f64..5.0).prop_map(|r| Prior::ball(r).unwrap()),
    ]
}

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn prox_satisfies_the_subgradient_inequality(prior in priors(), seed in point(3), z in point(3), t in 0.01f64..50.0) {
        let n = prior.dim().unwrap_or(3);
        let (x, z) = (&seed[..n], &z[..n]);
        let p = prior.prox(x, t).unwrap();
        // probes must lie in dom J
        let z = if prior.has_full_domain() { z.to_vec() } else { prior.prox(z, 1.0).unwrap() };
        let gap = prior.prox_inclusion_gap(x, t, &p, &z);
        let scale = 1.0 + z.iter().chain(x).map(|v| v.abs()).sum::<f64>() * (1.0 + 1.0 / t);
        prop_assert!(gap >= -1e-10 * scale, "gap {gap}");
    }

    #[test]
    fn envelope_lies_between_zero_and_the_prior(prior in priors(), x in point(3), t in 0.01f64..50.0) {
        let n = prior.dim().unwrap_or(3);
        let e = envelope(&prior, &x[..n], t).unwrap();
        prop_assert!(e.value >= 0.0);
        prop_assert!(e.value <= prior.eval(&x[..n]).unwrap() + 1e-12 * (1.0 + e.value));
    }

    #[test]
    fn l1_posterior_mean_is_shrunk_toward_the_threshold(x in -100.0f64..100.0, lambda in 0.0f64..5.0, p in params()) {
        let s = u_pm_closed_l1(&[lambda], &[x], p).unwrap();
        let u = s.u_pm[0];
        let tau = p.t * lambda;
        let soft = x.signum() * (x.abs() - tau).max(0.0);
        let slack = 1e-12 * (1.0 + x.abs());
        prop_assert!((u - soft) * x.signum() >= -slack && (x - u) * x.signum() >= -slack);
        prop_assert!((u - x).abs() <= tau + slack);
        prop_assert!(s.mse > 0.0 && s.mse <= p.t * p.eps * (1.0 + 1e-12));
    }

    #[test]
    fn l1_posterior_mean_is_increasing(x in -60.0f64..60.0, dx in 1e-3f64..5.0, lambda in 0.1f64..5.0, p in params()) {
        let a = u_pm_closed_l1(&[lambda], &[x], p).unwrap().u_pm[0];
        let b = u_pm_closed_l1(&[lambda], &[x + dx], p).unwrap().u_pm[0];
        prop_assert!(b >= a);
        prop_assert!(b - a <= dx * (1.0 + 1e-12));
    }

    #[test]
    fn erfcx_reflection(x in 0.0f64..5.0) {
        // erfcx(-x) = 2 exp(x^2) - erfcx(x), no cancellation for x >= 0
        let lhs = erfcx(-x);
        let rhs = 2.0 * (x * x).exp() - erfcx(x);
        prop_assert!((lhs - rhs).abs() <= 1e-13 * lhs);
    }

    #[test]
    fn erfcx_is_decreasing(x in -5.0f64..1e3, dx in 1e-6f64..10.0) {
        prop_assert!(erfcx(x + dx) < erfcx(x));
    }

    #[test]
    // below -3 the upper tail rounds toward 1 and the inversion is ill-conditioned
    fn normal_isf_inverts_the_tail(z in -3.0f64..37.0) {
        let q = normal_cdf(-z);
        prop_assume!(q > 0.0);
        let back = normal_isf(q);
        prop_assert!((back - z).abs() <= 1e-9 * (1.0 + z.abs()), "{z} -> {q} -> {back}");
    }

    #[test]
    fn truncated_draws_stay_in_the_interval(a in -40.0f64..40.0, w in 1e-6f64..20.0, u in 0.0f64..1.0) {
        let y = truncated_std_normal(a, a + w, u);
        prop_assert!(y >= a && y <= a + w, "{y} not in [{a}, {}]", a + w);
    }

    #[test]
    fn tikhonov_quadrature_matches_closed_form(m in 0.1f64..10.0, x in -10.0f64..10.0, p in params()) {
        let q = posterior_summary_quadrature(&Prior::quadratic(m).unwrap(), &[x], p, &QuadratureConfig::default()).unwrap();
        let c = s_eps_closed_quadratic(m, &[x], p).unwrap();
        prop_assert!((q.u_pm[0] - c.u_pm[0]).abs() <= 1e-8 * (1.0 + c.u_pm[0].abs()));
        prop_assert!((q.mse - c.mse).abs() <= 1e-8 * c.mse);
        prop_assert!((q.s_eps - c.s_eps).abs() <= 1e-8 * (1.0 + c.s_eps.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn pgm_round_trip_of_8bit_images(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let px: Vec<f64> = (0..w * h).map(|i| ((seed >> (i % 56)) as u8 ^ i as u8) as f64).collect();
        let img = Image::new(w, h, px).unwrap();
        prop_assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn image_metrics_are_well_behaved(px in prop::collection::vec(0.0f64..255.0, 24), shift in 0.1f64..50.0) {
        let a = Image::new(6, 4, px.clone()).unwrap();
        let b = Image::new(6, 4, px.iter().map(|v| v + shift).collect()).unwrap();
        let f = plateau_fraction(&a, 1e-6);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn rof_map_beats_perturbations(px in prop::collection::vec(0.0f64..255.0, 20), noise in prop::collection::vec(-1.0f64..1.0, 20), t in 0.5f64..30.0, lambda in 0.1f64..3.0) {
        let x = Image::new(5, 4, px).unwrap();
        let y = rof_map(&x, t, lambda).unwrap();
        let probe = Image::new(5, 4, y.pixels().iter().zip(&noise).map(|(a, b)| a + b).collect()).unwrap();
        let (fy, fp) = (rof_objective(&x, &y, t, lambda), rof_objective(&x, &probe, t, lambda));
        prop_assert!(fy <= fp + 1e-9 * fp.abs().max(1.0));
        prop_assert!(fy <= rof_objective(&x, &x, t, lambda) + 1e-9);
    }

    #[test]
    fn report_json_round_trip(obs in prop::collection::vec(prop_oneof![Just(f64::INFINITY), Just(f64::NEG_INFINITY), -1e6f64..1e6], 0..5), passed in any::<bool>(), seed in any::<u64>()) {
        let r = VerificationReport {
            checks: vec![CheckResult::new("c", passed, obs.clone(), obs, 1e-9, "d")],
            seed,
            timestamp: "2026-01-01T00:00:00+00:00".into(),
        };
        prop_assert_eq!(VerificationReport::from_json(&r.to_json()).unwrap(), r);
    }
}

#[test]
fn prior_json_round_trip() {
    for p in [
        Prior::zero(),
        Prior::quadratic(2.5).unwrap().with_dim(Some(3)),
        Prior::weighted_l1(vec![1.0, 0.5]).unwrap(),
        Prior::anisotropic_tv(1.0, 4, 3).unwrap(),
        Prior::ball(2.0).unwrap(),
    ] {
        assert_eq!(Prior::from_json(&p.to_json()).unwrap(), p);
    }
    assert!(Prior::from_json(r#"{"kind":"WeightedL1","lambda":[-1]}"#).is_err());
    assert!(Prior::from_json(r#"{"kind":"Quadratic","m":1,"extra":2}"#).is_err());
}
