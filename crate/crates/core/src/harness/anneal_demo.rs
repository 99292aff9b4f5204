//! Annealed noisy gradient descent on a 1-D multimodal objective.
//!
//! `f(x) = 0.1·x² + sin(3x)` has several wells; the deepest sits near
//! `x ≈ -0.512`. Each run starts uniformly in `start_range` and iterates
//! `x <- x - lr·(f'(x) + c_t·ξ)` with `c_t` from [`AnnealSchedule`] (or 0 for
//! the noiseless baseline). The final point is then relaxed with plain
//! descent and counted as a hit when it lands in the global well.

use serde::Serialize;

use crate::harness::config::DemoConfig;
use crate::rng::RngStream;
use crate::training::AnnealSchedule;

pub fn objective(x: f64) -> f64 {
    0.1 * x * x + (3.0 * x).sin()
}

pub fn objective_grad(x: f64) -> f64 {
    0.2 * x + 3.0 * (3.0 * x).cos()
}

/// Location of the global minimum, found by a dense grid plus Newton polish.
pub fn global_minimum() -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=120_000 {
        let x = -6.0 + 1e-4 * i as f64;
        let f = objective(x);
        if f < best.0 {
            best = (f, x);
        }
    }
    let mut x = best.1;
    for _ in 0..20 {
        let h = 0.2 - 9.0 * (3.0 * x).sin();
        x -= objective_grad(x) / h;
    }
    x
}

/// Plain gradient descent until the step is negligible.
pub fn relax(mut x: f64) -> f64 {
    for _ in 0..100_000 {
        let step = 0.01 * objective_grad(x);
        x -= step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    x
}

impl DemoConfig {
    pub fn schedule(&self) -> AnnealSchedule {
        AnnealSchedule {
            c0: self.c0,
            floor: self.floor,
            period: self.period,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BasinStats {
    pub annealed: bool,
    pub runs: usize,
    pub global_hits: usize,
    pub fraction: f64,
}

/// Noise scale used at each step: the schedule, or zero without annealing.
pub fn noise_trace(cfg: &DemoConfig, annealed: bool) -> impl Iterator<Item = f64> + '_ {
    let schedule = cfg.schedule();
    (0..cfg.steps).map(move |k| if annealed { schedule.value(k) } else { 0.0 })
}

/// One descent from `x0`; returns the relaxed end point.
pub fn descend(cfg: &DemoConfig, x0: f64, annealed: bool, rng: &mut RngStream) -> f64 {
    let mut x = x0;
    for c in noise_trace(cfg, annealed) {
        let noise = if c > 0.0 { c * rng.normal() } else { 0.0 };
        x -= cfg.lr * (objective_grad(x) + noise);
    }
    relax(x)
}

/// Runs `cfg.starts` descents. Start points depend only on `seed`, so the
/// annealed and noiseless runs share them.
pub fn run_anneal_demo(cfg: &DemoConfig, seed: u64, annealed: bool) -> BasinStats {
    let target = global_minimum();
    let mut starts_rng = RngStream::substream(seed, 0);
    let mut noise_rng = RngStream::substream(seed, 1);
    let [lo, hi] = cfg.start_range;
    let starts: Vec<f64> = (0..cfg.starts).map(|_| starts_rng.uniform(lo, hi)).collect();
    let global_hits = starts
        .iter()
        .filter(|&&x0| (descend(cfg, x0, annealed, &mut noise_rng) - target).abs() < 1e-3)
        .count();
    BasinStats {
        annealed,
        runs: cfg.starts,
        global_hits,
        fraction: global_hits as f64 / cfg.starts as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_minimum_location() {
        let x = global_minimum();
        assert!((x + 0.512).abs() < 1e-3, "{x}");
        assert!(objective_grad(x).abs() < 1e-12);
    }

    #[test]
    fn noiseless_stays_in_global_basin() {
        let cfg = DemoConfig::default();
        let target = global_minimum();
        let mut rng = RngStream::new(0);
        let before = rng.position();
        for x0 in [-1.2, -0.9, -0.5, 0.0, 0.3] {
            let end = descend(&DemoConfig { steps: 2000, ..cfg.clone() }, x0, false, &mut rng);
            assert!((end - target).abs() < 1e-6, "start {x0} ended at {end}");
        }
        assert_eq!(rng.position(), before);
    }

    #[test]
    fn trace_matches_schedule() {
        let cfg = DemoConfig {
            steps: 20_000,
            ..DemoConfig::default()
        };
        let s = cfg.schedule();
        for (k, c) in noise_trace(&cfg, true).enumerate() {
            assert_eq!(c, s.value(k as u64));
        }
        assert!(noise_trace(&cfg, false).all(|c| c == 0.0));
    }
}
