use noisyact::activations::{
    apply, expected_output, forward_input_noise, forward_output_noise, half_normal_mean, half_normal_std,
    hard_sat, input_noise_var, output_noise_var, saturated_gradient, sigma, HardSatFn, HardSatKind, NoiseCtx,
    NoiseMode, NoisyActConfig,
};
use noisyact::autodiff::{sign, Tape};
use noisyact::gradcheck::{central_difference, relative_error, FD_STEP, FD_TOLERANCE};
use noisyact::{RngStream, Tensor};
use proptest::prelude::*;

const KINDS: [HardSatKind; 2] = [HardSatKind::HardSigmoid, HardSatKind::HardTanh];

fn t1(v: f64) -> Tensor {
    Tensor::vector(vec![v])
}

/// Forward value and tape gradients `(dφ/dx, dφ/dp)` for one scalar input
/// with frozen noise `z` (ε for output modes, ξ for input modes).
fn tape_point(cfg: &NoisyActConfig, x: f64, p: f64, z: f64) -> (f64, f64, f64) {
    let mut tape = Tape::new();
    let xv = tape.leaf(t1(x));
    let pv = tape.leaf(t1(p));
    let out = if cfg.mode.is_output_noise() {
        output_noise_var(&mut tape, cfg, xv, pv, t1(z), cfg.c).unwrap()
    } else {
        input_noise_var(&mut tape, cfg, xv, Some(pv), t1(z), cfg.c).unwrap()
    };
    let root = tape.sum(out).unwrap();
    let g = tape.backward(root).unwrap();
    (
        tape.value(out).data()[0],
        g.get(xv).unwrap().data()[0],
        g.get(pv).unwrap().data()[0],
    )
}

/// Input points whose finite-difference stencil crosses a kink.
fn near_kink(cfg: &NoisyActConfig, x: f64, p: f64, z: f64) -> bool {
    let base = cfg.hard_fn();
    let band = 1e-4;
    let near = |v: f64| (v.abs() - base.x_t).abs() < band;
    match cfg.mode {
        NoiseMode::Nan | NoiseMode::Nah => near(x),
        NoiseMode::Nani => near(x + cfg.sigma_fixed * z),
        NoiseMode::Nanis => near(x) || near(x + cfg.sigma_fixed * z),
        NoiseMode::Nanil => near(x) || near(x + sigma(cfg.c, p, base.delta(x)) * z),
        NoiseMode::Deterministic => near(x),
    }
}

fn random_config(rng: &mut RngStream, mode: NoiseMode) -> (NoisyActConfig, f64, f64, f64) {
    let kind = KINDS[rng.below(2)];
    let alpha = if rng.below(2) == 0 { 1.0 } else { rng.uniform(0.5, 1.5) };
    let cfg = NoisyActConfig::new(kind, mode)
        .with_alpha(alpha)
        .with_c(rng.uniform(0.1, 3.0))
        .with_sigma_fixed(rng.uniform(0.01, 0.5));
    let x = rng.uniform(-6.0, 6.0);
    let p = rng.uniform(-3.0, 3.0);
    let xi = rng.normal();
    let z = if mode == NoiseMode::Nah { xi.abs() } else { xi };
    (cfg, x, p, z)
}

#[test]
fn tape_gradients_match_closed_form_and_differences() {
    let mut rng = RngStream::new(2024);
    for mode in [NoiseMode::Nan, NoiseMode::Nah, NoiseMode::Nani, NoiseMode::Nanil, NoiseMode::Nanis] {
        let mut checked = 0;
        while checked < 200 {
            let (cfg, x, p, z) = random_config(&mut rng, mode);
            if near_kink(&cfg, x, p, z) {
                continue;
            }
            checked += 1;
            let (_, dx, dp) = tape_point(&cfg, x, p, z);
            let nx = central_difference(|v| tape_point(&cfg, v, p, z).0, x, FD_STEP);
            let np = central_difference(|v| tape_point(&cfg, x, v, z).0, p, FD_STEP);
            assert!(relative_error(dx, nx) < FD_TOLERANCE, "{mode} dx {dx} vs {nx} at {cfg:?} x={x}");
            assert!(relative_error(dp, np) < FD_TOLERANCE, "{mode} dp {dp} vs {np} at {cfg:?} x={x}");
            if mode.is_output_noise() {
                let closed = saturated_gradient(&cfg, x, p, z);
                assert!((closed.dx - dx).abs() <= 1e-12 * dx.abs().max(1.0), "{mode} closed dx");
                assert!((closed.dp - dp).abs() <= 1e-12 * dp.abs().max(1.0), "{mode} closed dp");
            }
        }
    }
}

#[test]
fn monte_carlo_mean_matches_expected_output() {
    let n = 20_000;
    let mut rng = RngStream::new(5);
    for kind in KINDS {
        for mode in [NoiseMode::Nan, NoiseMode::Nah] {
            let cfg = NoisyActConfig::new(kind, mode).with_alpha(0.9).with_c(1.0);
            let p = 1.3;
            for x in [-3.0, -1.5, 0.25, 2.5] {
                let xs = Tensor::full(&[n], x);
                let samples = forward_output_noise(&cfg, &xs, p, &mut rng, true).unwrap();
                let mean = samples.mean();
                let expected = expected_output(&cfg, &t1(x), p).unwrap().data()[0];
                let eps_std = if mode == NoiseMode::Nah { half_normal_std() } else { 1.0 };
                let noise_std = sigma(cfg.c, p, cfg.hard_fn().delta(x)) * eps_std;
                let tol = 5.0 * noise_std / (n as f64).sqrt() + 1e-15;
                assert!((mean - expected).abs() <= tol, "{kind:?} {mode} x={x}: {mean} vs {expected}");
            }
        }
    }
}

#[test]
fn expected_output_oracle() {
    // Independent closed form: αh + (1-α)u + d·σ·E[ε].
    for kind in KINDS {
        let base = HardSatFn::of(kind);
        for alpha in [0.9, 1.0, 1.2] {
            for (mode, mean_eps) in [(NoiseMode::Nan, 0.0), (NoiseMode::Nah, half_normal_mean())] {
                let cfg = NoisyActConfig::new(kind, mode).with_alpha(alpha).with_c(0.7);
                for i in -12..=12 {
                    let x = 0.5 * i as f64;
                    let p = 0.8;
                    let d = -sign(x) * sign(1.0 - alpha);
                    let want = alpha * base.h(x)
                        + (1.0 - alpha) * base.u(x)
                        + d * sigma(0.7, p, base.delta(x)) * mean_eps;
                    let got = expected_output(&cfg, &t1(x), p).unwrap().data()[0];
                    assert!((got - want).abs() < 1e-12, "{kind:?} {mode} α={alpha} x={x}");
                }
            }
        }
    }
}

#[test]
fn input_noise_is_removed_at_test_time() {
    let x = Tensor::vector(vec![-3.0, -0.5, 0.0, 0.99, 4.0]);
    for mode in [NoiseMode::Nani, NoiseMode::Nanil, NoiseMode::Nanis] {
        let cfg = NoisyActConfig::new(HardSatKind::HardTanh, mode);
        let mut rng = RngStream::new(1);
        let before = rng.position();
        let y = forward_input_noise(&cfg, &x, 0.5, &mut rng, false).unwrap();
        assert_eq!(y, hard_sat(&HardSatFn::HARD_TANH, &x));
        assert_eq!(rng.position(), before);
    }
}

#[test]
fn nani_example_saturates() {
    let cfg = NoisyActConfig::new(HardSatKind::HardTanh, NoiseMode::Nani).with_sigma_fixed(0.05);
    let mut tape = Tape::new();
    let x = tape.leaf(t1(0.99));
    let y = input_noise_var(&mut tape, &cfg, x, None, t1(1.0), cfg.c).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0]);
}

#[test]
fn eval_context_consumes_no_randomness() {
    for mode in NoiseMode::ALL {
        let cfg = NoisyActConfig::new(HardSatKind::HardSigmoid, mode);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-4.0, 0.0, 3.0]));
        let p = tape.leaf(t1(0.3));
        let mut ctx = NoiseCtx::eval();
        assert!(apply(&mut tape, &cfg, x, Some(p), &mut ctx).is_ok(), "{mode}");
    }
}

fn kind_strategy() -> impl Strategy<Value = HardSatKind> {
    prop_oneof![Just(HardSatKind::HardSigmoid), Just(HardSatKind::HardTanh)]
}

proptest! {
    #[test]
    fn hard_sat_range_and_monotone(kind in kind_strategy(), a in -1e3f64..1e3, b in -1e3f64..1e3) {
        let f = HardSatFn::of(kind);
        for v in [a, b] {
            prop_assert!(f.h(v) >= f.clip_lo && f.h(v) <= f.clip_hi);
        }
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(f.h(lo) <= f.h(hi));
    }

    #[test]
    fn linear_regime_is_exact(kind in kind_strategy(), t in -1.0f64..=1.0, p in -5.0f64..5.0,
                              xi in -4.0f64..4.0, seed in 0u64..1000) {
        let f = HardSatFn::of(kind);
        let x = t * f.x_t;
        for mode in [NoiseMode::Nan, NoiseMode::Nah] {
            let cfg = NoisyActConfig::new(kind, mode).with_alpha(0.9);
            let mut rng = RngStream::new(seed);
            let y = forward_output_noise(&cfg, &t1(x), p, &mut rng, true).unwrap();
            prop_assert_eq!(y.data()[0], f.h(x));
            let (v, _, _) = tape_point(&cfg, x, p, xi);
            prop_assert_eq!(v, f.h(x));
        }
    }

    #[test]
    fn half_normal_noise_points_toward_clip(kind in kind_strategy(), x in -50.0f64..50.0,
                                            alpha in 0.0f64..=1.0, p in -5.0f64..5.0,
                                            eps in 1e-3f64..5.0, c in 0.1f64..5.0) {
        let f = HardSatFn::of(kind);
        let cfg = NoisyActConfig::new(kind, NoiseMode::Nah).with_alpha(alpha).with_c(c);
        let s = sigma(c, p, f.delta(x));
        prop_assume!(s > 0.0);
        let (v, _, _) = tape_point(&cfg, x, p, eps);
        let mean = alpha * f.h(x) + (1.0 - alpha) * f.u(x);
        prop_assert_eq!(sign(v - mean), -sign(x));
    }

    #[test]
    fn noise_scale_grows_with_saturation(kind in kind_strategy(), p in -5.0f64..5.0,
                                         a in 0.0f64..20.0, b in 0.0f64..20.0, c in 0.1f64..5.0) {
        let f = HardSatFn::of(kind);
        let (near, far) = if a <= b { (a, b) } else { (b, a) };
        for s in [1.0, -1.0] {
            let x0 = s * (f.x_t + near);
            let x1 = s * (f.x_t + far);
            prop_assert!(sigma(c, p, f.delta(x0)) <= sigma(c, p, f.delta(x1)));
        }
    }

    #[test]
    fn two_forms_agree(kind in kind_strategy(), x in -20.0f64..20.0, alpha in 0.0f64..2.0,
                       p in -5.0f64..5.0, xi in -4.0f64..4.0, c in 0.0f64..5.0) {
        let f = HardSatFn::of(kind);
        let cfg = NoisyActConfig::new(kind, NoiseMode::Nan).with_alpha(alpha).with_c(c);
        let (v, _, _) = tape_point(&cfg, x, p, xi);
        let d = -sign(x) * sign(1.0 - alpha);
        let mixed = alpha * f.h(x) + (1.0 - alpha) * f.u(x) + d * sigma(c, p, f.delta(x)) * xi;
        prop_assert!((v - mixed).abs() <= 1e-12 * mixed.abs().max(1.0));
    }
}

#[test]
fn hard_sigmoid_fixed_point() {
    let f = HardSatFn::HARD_SIGMOID;
    assert_eq!(f.h(2.0 / 3.0), 2.0 / 3.0);
    let mut x = 0.0;
    for _ in 0..200 {
        x = f.h(x);
    }
    assert!((x - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn larger_noise_draw_moves_output_further() {
    let cfg = NoisyActConfig::new(HardSatKind::HardTanh, NoiseMode::Nah);
    let (small, _, _) = tape_point(&cfg, 3.0, 1.0, 1.0);
    let (large, _, _) = tape_point(&cfg, 3.0, 1.0, 1e3);
    assert!((large - 1.0).abs() > (small - 1.0).abs());
    assert!(large < small);
}

#[test]
fn saturated_gradient_scales_with_noise_draw() {
    for kind in KINDS {
        let cfg = NoisyActConfig::new(kind, NoiseMode::Nah);
        let x = 3.0 * HardSatFn::of(kind).x_t;
        let (_, small, _) = tape_point(&cfg, x, 1.0, 1.0);
        let (_, large, _) = tape_point(&cfg, x, 1.0, 1e3);
        assert!(small != 0.0);
        assert!(large.abs() > 100.0 * small.abs(), "{kind:?}: {large} vs {small}");
    }
}
