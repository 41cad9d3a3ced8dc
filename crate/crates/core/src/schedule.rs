//! Discrete variance-preserving noise schedules and timestep sampling.
//!
//! Timesteps are 1-indexed, `t ∈ {1..T}`, with the convention `ᾱ_0 = 1` so
//! that the reverse-step boundary at `t = 1` is defined. The forward process
//! is `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε` with `ᾱ_t = ∏_{s≤t}(1−β_s)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// How the per-step variances `β_t` are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// `β_t` linear from `beta_start` to `beta_end`.
    Linear,
    /// `√β_t` linear from `√beta_start` to `√beta_end`.
    ScaledLinear,
    /// Squared-cosine cumulative schedule; ignores the beta range.
    Cosine,
}

/// Precomputed schedule tables: `β_t`, `α_t`, `ᾱ_t` and the posterior width
/// `σ_t = ((1−ᾱ_{t−1})/(1−ᾱ_t))·β_t` used by stochastic-latent matching.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn build(kind: ScheduleKind, t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max < 2 {
            return Err(Error::Schedule(format!("need T >= 2, got {t_max}")));
        }
        if kind != ScheduleKind::Cosine
            && !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)
        {
            return Err(Error::Schedule(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }

        let beta: Vec<f64> = match kind {
            ScheduleKind::Linear => linspace(beta_start, beta_end, t_max),
            ScheduleKind::ScaledLinear => linspace(beta_start.sqrt(), beta_end.sqrt(), t_max)
                .into_iter()
                .map(|b| b * b)
                .collect(),
            ScheduleKind::Cosine => {
                // ᾱ(u) ∝ cos²((u/T + 0.008)/1.008 · π/2), β_t = 1 − ᾱ_t/ᾱ_{t−1}, capped.
                let f = |u: f64| {
                    let arg = (u / t_max as f64 + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2;
                    arg.cos().powi(2)
                };
                (1..=t_max)
                    .map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).min(0.999))
                    .collect()
            }
        };

        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(t_max);
        let mut prod = 1.0;
        for &a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        let mut posterior_sigma = Vec::with_capacity(t_max);
        for t in 1..=t_max {
            let prev = if t == 1 { 1.0 } else { alpha_bar[t - 2] };
            posterior_sigma.push((1.0 - prev) / (1.0 - alpha_bar[t - 1]) * beta[t - 1]);
        }

        Ok(Self { kind, beta, alpha, alpha_bar, posterior_sigma })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of training timesteps `T`.
    pub fn t_max(&self) -> usize {
        self.beta.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t >= 1 && t <= self.t_max() {
            Ok(())
        } else {
            Err(Error::TimestepRange { t, lo: 1, hi: self.t_max() })
        }
    }

    /// `β_t`, `t ∈ {1..T}`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// `α_t = 1 − β_t`, `t ∈ {1..T}`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`; accepts `t = 0` and returns 1 by convention.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Posterior width `σ_t = ((1−ᾱ_{t−1})/(1−ᾱ_t))·β_t`; zero at `t = 1`.
    pub fn posterior_sigma(&self, t: usize) -> f64 {
        self.posterior_sigma[t - 1]
    }
}

fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    (0..n)
        .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Forward perturbation `√ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
///
/// `t = 0` is accepted (identity, `ᾱ_0 = 1`).
pub fn perturb(x0: &ImageTensor, t: usize, eps: &ImageTensor, sched: &NoiseSchedule) -> Result<ImageTensor> {
    x0.check_same_shape(eps)?;
    if t > sched.t_max() {
        return Err(Error::TimestepRange { t, lo: 0, hi: sched.t_max() });
    }
    let ab = sched.alpha_bar(t);
    Ok(ImageTensor::lin_comb(ab.sqrt(), x0, (1.0 - ab).sqrt(), eps))
}

/// Timestep sampling strategy over optimization iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestepKind {
    /// I.i.d. uniform draws over the range.
    Random,
    /// Deterministic non-increasing sweep from high to low, uniformly spaced.
    Decreasing,
    /// Random draws re-sorted descending.
    NonIncreasing,
}

/// A validated plan for drawing one timestep per iteration.
#[derive(Debug, Clone)]
pub struct TimestepPlan {
    pub kind: TimestepKind,
    pub t_min_frac: f64,
    pub t_max_frac: f64,
    pub n_iters: usize,
    pub seed: u64,
}

impl TimestepPlan {
    pub fn new(kind: TimestepKind, t_min_frac: f64, t_max_frac: f64, n_iters: usize, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&t_min_frac) || !(t_max_frac > 0.0 && t_max_frac <= 1.0) {
            return Err(Error::Plan(format!(
                "fractions out of range: [{t_min_frac}, {t_max_frac}]"
            )));
        }
        if t_min_frac >= t_max_frac {
            return Err(Error::Plan(format!(
                "need t_min_frac < t_max_frac, got [{t_min_frac}, {t_max_frac}]"
            )));
        }
        if n_iters == 0 {
            return Err(Error::Plan("n_iters must be positive".into()));
        }
        Ok(Self { kind, t_min_frac, t_max_frac, n_iters, seed })
    }

    /// Integer range `[lo, hi]` the plan covers; fractions round to nearest,
    /// clamped so `lo >= 1`.
    pub fn range(&self, t_max: usize) -> (usize, usize) {
        let lo = ((self.t_min_frac * t_max as f64).round() as usize).max(1);
        let hi = ((self.t_max_frac * t_max as f64).round() as usize).clamp(lo, t_max);
        (lo, hi)
    }
}

/// One timestep per iteration according to the plan.
pub fn sample_timesteps(plan: &TimestepPlan, t_max: usize) -> Vec<usize> {
    let (lo, hi) = plan.range(t_max);
    let n = plan.n_iters;
    match plan.kind {
        TimestepKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            (0..n).map(|_| rng.random_range(lo..=hi)).collect()
        }
        TimestepKind::Decreasing => {
            if n == 1 {
                return vec![hi];
            }
            (0..n)
                .map(|i| {
                    let frac = i as f64 / (n - 1) as f64;
                    (hi as f64 - frac * (hi - lo) as f64).round() as usize
                })
                .collect()
        }
        TimestepKind::NonIncreasing => {
            let mut ts = sample_timesteps(
                &TimestepPlan { kind: TimestepKind::Random, ..plan.clone() },
                t_max,
            );
            ts.sort_unstable_by(|a, b| b.cmp(a));
            ts
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_first_alpha_bar() {
        let s = NoiseSchedule::build(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
        assert_relative_eq!(s.alpha_bar(1), 0.9999, max_relative = 1e-15);
    }

    #[test]
    fn two_step_hand_product() {
        let s = NoiseSchedule::build(ScheduleKind::Linear, 2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        assert_eq!(s.alpha_bar(2), 0.25);
    }

    #[test]
    fn scaled_linear_matches_compensated_product() {
        // Independent oracle: compensated (TwoProduct) accumulation of ∏(1−β_s).
        let t_max = 1000;
        let s = NoiseSchedule::build(ScheduleKind::ScaledLinear, t_max, 0.00085, 0.012).unwrap();
        let sqrt_lo = 0.00085f64.sqrt();
        let sqrt_hi = 0.012f64.sqrt();
        let mut prod = 1.0f64;
        let mut err = 0.0f64;
        for i in 0..t_max {
            let b = sqrt_lo + (sqrt_hi - sqrt_lo) * i as f64 / (t_max - 1) as f64;
            let a = 1.0 - b * b;
            let h = prod * a;
            let low = prod.mul_add(a, -h);
            err = err * a + low;
            prod = h;
        }
        let oracle = prod + err;
        assert_relative_eq!(s.alpha_bar(t_max), oracle, max_relative = 1e-12);
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(NoiseSchedule::build(ScheduleKind::Linear, 1, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::build(ScheduleKind::Linear, 10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::build(ScheduleKind::Linear, 10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::build(ScheduleKind::Linear, 10, 1e-4, 1.0).is_err());
        // Cosine ignores the beta range entirely.
        assert!(NoiseSchedule::build(ScheduleKind::Cosine, 10, 1.0, 0.0).is_ok());
    }

    #[test]
    fn alpha_bar_strictly_decreasing_all_kinds() {
        for kind in [ScheduleKind::Linear, ScheduleKind::ScaledLinear, ScheduleKind::Cosine] {
            let s = NoiseSchedule::build(kind, 1000, 1e-4, 0.02).unwrap();
            for t in 1..=s.t_max() {
                assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0, "{kind:?} t={t}");
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1), "{kind:?} t={t}");
            }
        }
    }

    #[test]
    fn posterior_sigma_positive_above_one() {
        let s = NoiseSchedule::build(ScheduleKind::Linear, 100, 1e-4, 0.02).unwrap();
        assert_eq!(s.posterior_sigma(1), 0.0);
        for t in 2..=100 {
            assert!(s.posterior_sigma(t) > 0.0);
        }
    }

    #[test]
    fn perturb_identity_at_t0_and_zero_input() {
        let s = NoiseSchedule::build(ScheduleKind::Linear, 100, 1e-4, 0.02).unwrap();
        let x0 = ImageTensor::from_fn(4, 4, 1, |y, x, _| (y + x) as f64);
        let eps = ImageTensor::full(4, 4, 1, 0.7);
        assert_eq!(perturb(&x0, 0, &eps, &s).unwrap(), x0);

        let zero = ImageTensor::zeros(4, 4, 1);
        let out = perturb(&zero, 50, &eps, &s).unwrap();
        let expect = eps.scale((1.0 - s.alpha_bar(50)).sqrt());
        assert!(out.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn perturb_direct_arithmetic() {
        // T=2 with β=0.5 gives ᾱ_2 = 0.25: output must be 0.5·x0 + √0.75·ε.
        let s = NoiseSchedule::build(ScheduleKind::Linear, 2, 0.5, 0.5).unwrap();
        let x0 = ImageTensor::from_fn(3, 3, 1, |y, x, _| (y * 3 + x) as f64);
        let eps = ImageTensor::from_fn(3, 3, 1, |y, x, _| 0.1 * (y as f64 - x as f64));
        let out = perturb(&x0, 2, &eps, &s).unwrap();
        let expect = ImageTensor::lin_comb(0.5, &x0, 0.75f64.sqrt(), &eps);
        assert!(out.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn perturb_shape_mismatch_errors() {
        let s = NoiseSchedule::build(ScheduleKind::Linear, 10, 1e-4, 0.02).unwrap();
        let x0 = ImageTensor::zeros(4, 4, 1);
        let eps = ImageTensor::zeros(4, 3, 1);
        assert!(perturb(&x0, 5, &eps, &s).is_err());
    }

    #[test]
    fn decreasing_three_point_grid() {
        let plan = TimestepPlan::new(TimestepKind::Decreasing, 0.2, 0.9, 3, 0).unwrap();
        assert_eq!(sample_timesteps(&plan, 1000), vec![900, 550, 200]);
    }

    #[test]
    fn decreasing_single_iteration() {
        let plan = TimestepPlan::new(TimestepKind::Decreasing, 0.2, 0.9, 1, 0).unwrap();
        assert_eq!(sample_timesteps(&plan, 1000), vec![900]);
    }

    #[test]
    fn random_reproducible_and_centered() {
        let plan = TimestepPlan::new(TimestepKind::Random, 0.2, 0.9, 100_000, 42).unwrap();
        let a = sample_timesteps(&plan, 1000);
        let b = sample_timesteps(&plan, 1000);
        assert_eq!(a, b);
        let mean = a.iter().sum::<usize>() as f64 / a.len() as f64;
        assert!((mean - 550.0).abs() < 5.5, "mean = {mean}");
        assert!(a.iter().all(|&t| (200..=900).contains(&t)));
    }

    #[test]
    fn non_increasing_is_sorted_random() {
        let plan = TimestepPlan::new(TimestepKind::NonIncreasing, 0.2, 0.9, 50, 7).unwrap();
        let ts = sample_timesteps(&plan, 1000);
        assert!(ts.windows(2).all(|w| w[0] >= w[1]));
        let rand_plan = TimestepPlan::new(TimestepKind::Random, 0.2, 0.9, 50, 7).unwrap();
        let mut sorted = sample_timesteps(&rand_plan, 1000);
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(ts, sorted);
    }

    #[test]
    fn plan_validation() {
        assert!(TimestepPlan::new(TimestepKind::Random, 0.9, 0.2, 10, 0).is_err());
        assert!(TimestepPlan::new(TimestepKind::Random, 0.2, 0.9, 0, 0).is_err());
    }
}
