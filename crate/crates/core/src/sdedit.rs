//! DDIM-based SDEdit runners and the DDS ↔ single-step-SDEdit equivalence.
//!
//! A reverse step reconstructs `x̂_{0|t}` by Tweedie's formula and re-noises
//! at the next level with a chosen noise term `ε̃`:
//!
//! `x_prev = √ᾱ_prev·x̂_{0|t} + √(1−ᾱ_prev)·ε̃`
//!
//! Two noise choices are supported: a fresh Gaussian draw (stochastic
//! editing) and the proximal single-step inversion, where `ε̃` is the
//! source-branch noise prediction evaluated once per level — no multi-step
//! pivot is ever computed. With the proximal choice and the forward latent
//! built as `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε̃_t`, one deterministic reverse step
//! is exactly the minimizer form whose objective is the DDS residual scaled
//! by `√(1−ᾱ_t)/√ᾱ_t` — the equivalence report below checks this end to end.
//!
//! Note on indexing: the noise prediction for `ε̃` is evaluated at level `t`
//! (the forward-process convention), not at the step target.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::denoiser::{eps_guided_ip2p_src, eps_guided_ip2p_tgt, GuidanceWeights};
use crate::error::Result;
use crate::image::ImageTensor;
use crate::schedule::{perturb, NoiseSchedule};
use crate::world::{ImageTether, WorldBundle};

/// One reverse step of a run: `x_t` at level `t` stepped to `x_prev` at
/// level `t_next`, with the Tweedie estimate and the injected noise term.
#[derive(Debug, Clone)]
pub struct SdeditStepRecord {
    pub t: usize,
    pub t_next: usize,
    pub x_t: ImageTensor,
    pub x_prev: ImageTensor,
    pub x0_hat: ImageTensor,
    pub eps_tilde: ImageTensor,
    pub eta_beta: f64,
    /// DDS-form objective at this step: `√(1−ᾱ_t)/√ᾱ_t · ‖ε_pred − ε̃‖`.
    pub objective: f64,
}

impl SdeditStepRecord {
    /// Reconstruction residual of the stored step.
    pub fn reconstruction_gap(&self, sched: &NoiseSchedule) -> f64 {
        let ab = sched.alpha_bar(self.t_next);
        let rebuilt = ImageTensor::lin_comb(ab.sqrt(), &self.x0_hat, (1.0 - ab).sqrt(), &self.eps_tilde);
        self.x_prev.dist(&rebuilt)
    }
}

/// Tweedie estimate `x̂_{0|t} = (x_t − √(1−ᾱ_t)·ε_pred)/√ᾱ_t`.
pub fn tweedie_x0(
    x_t: &ImageTensor,
    t: usize,
    eps_pred: &ImageTensor,
    sched: &NoiseSchedule,
) -> ImageTensor {
    let ab = sched.alpha_bar(t);
    ImageTensor::lin_comb(1.0 / ab.sqrt(), x_t, -(1.0 - ab).sqrt() / ab.sqrt(), eps_pred)
}

/// Single reverse step to the adjacent level `t−1` (`ᾱ_0 = 1`, so the final
/// step returns the Tweedie estimate exactly).
pub fn ddim_step(
    x_t: &ImageTensor,
    t: usize,
    eps_pred: &ImageTensor,
    eps_tilde: &ImageTensor,
    sched: &NoiseSchedule,
) -> ImageTensor {
    ddim_step_to(x_t, t, t - 1, eps_pred, eps_tilde, sched)
}

/// Reverse step to an arbitrary lower level, for coarse inference grids.
pub fn ddim_step_to(
    x_t: &ImageTensor,
    t: usize,
    t_next: usize,
    eps_pred: &ImageTensor,
    eps_tilde: &ImageTensor,
    sched: &NoiseSchedule,
) -> ImageTensor {
    let x0_hat = tweedie_x0(x_t, t, eps_pred, sched);
    let ab = sched.alpha_bar(t_next);
    ImageTensor::lin_comb(ab.sqrt(), &x0_hat, (1.0 - ab).sqrt(), eps_tilde)
}

/// Proximal inversion noise: the source-branch prediction evaluated once at
/// the current source path point, `ε̃ = ε_θ(x_t^src, y^src, t)` with the text
/// scale held at zero. The caller owns the path recursion
/// `x_t^src = √ᾱ_t·x0_src + √(1−ᾱ_t)·ε̃_t`.
pub fn proximal_inversion_noise(
    x_t_src_path: &ImageTensor,
    t: usize,
    sched: &NoiseSchedule,
    worlds: &WorldBundle,
    tether: &ImageTether,
    omega_i: f64,
) -> ImageTensor {
    eps_guided_ip2p_src(worlds, x_t_src_path, t, sched, omega_i, tether)
}

/// Expanded closed form of the deterministic proximal step: the Tweedie
/// estimate is eliminated in favor of the two noise predictions,
///
/// `x_next = √ᾱ_next·(x0 + pf·ε̃ − pf·ε_pred) + √(1−ᾱ_next)·ε̃`,
///
/// with `pf = √(1−ᾱ_t)/√ᾱ_t`, valid when `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε̃`.
pub fn proximal_step_expanded(
    x0: &ImageTensor,
    t: usize,
    t_next: usize,
    eps_pred: &ImageTensor,
    eps_tilde: &ImageTensor,
    sched: &NoiseSchedule,
) -> ImageTensor {
    let ab_t = sched.alpha_bar(t);
    let ab_n = sched.alpha_bar(t_next);
    let pf = (1.0 - ab_t).sqrt() / ab_t.sqrt();
    let inner = ImageTensor::lin_comb(1.0, x0, pf, &eps_tilde.sub(eps_pred));
    ImageTensor::lin_comb(ab_n.sqrt(), &inner, (1.0 - ab_n).sqrt(), eps_tilde)
}

/// Everything the DDS ↔ single-step-SDEdit equivalence check produces.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    /// Closed-form minimizer of `‖x̂_{0|t} − x0‖²` over `x0`: the Tweedie
    /// estimate itself.
    pub minimizer: ImageTensor,
    /// DDS-form objective `√(1−ᾱ_t)/√ᾱ_t·‖ε_pred − ε_src‖`, both branches at
    /// their own forward latents built from the shared inversion noise.
    pub objective_dds: f64,
    /// `‖x̂_{0|t} − x0_tgt‖`; equals the prefactor times the residual against
    /// the injected noise, and coincides with `objective_dds` at the
    /// inversion fixed point.
    pub objective_x0_gap: f64,
    /// Minimization-route step (expanded form, no Tweedie evaluation).
    pub step_minimizer: ImageTensor,
    /// Sampler-route step (Tweedie then re-noise).
    pub step_sampler: ImageTensor,
    /// `‖step_minimizer − step_sampler‖`.
    pub step_gap: f64,
    /// Prefactor `√(1−ᾱ_t)/√ᾱ_t` of the objective.
    pub prefactor: f64,
    /// Residual `‖ε_pred − ε̃‖` against the injected inversion noise.
    pub injected_residual: f64,
}

impl EquivalenceReport {
    pub fn step_within(&self, tol: f64) -> bool {
        self.step_gap <= tol * (1.0 + self.step_minimizer.norm())
    }
}

/// Build both forward latents from one proximal inversion noise, evaluate
/// the guided prediction of each branch at its own latent, and run one
/// deterministic reverse step along two algebraically equal routes.
/// `eps_seed` is the Gaussian seed of the single-evaluation inversion.
#[allow(clippy::too_many_arguments)]
pub fn verify_dds_sdedit_equivalence(
    x0_tgt: &ImageTensor,
    x0_src: &ImageTensor,
    t: usize,
    sched: &NoiseSchedule,
    worlds: &WorldBundle,
    tether: &ImageTether,
    gw: &GuidanceWeights,
    eps_seed: &ImageTensor,
) -> Result<EquivalenceReport> {
    sched.check_t(t)?;
    // One evaluation at the Gaussian-perturbed seed, then both branch
    // latents are rebuilt from the returned noise.
    let x_seed = perturb(x0_src, t, eps_seed, sched)?;
    let eps_tilde = proximal_inversion_noise(&x_seed, t, sched, worlds, tether, gw.omega_i);
    let x_t_src = perturb(x0_src, t, &eps_tilde, sched)?;
    let x_t_tgt = perturb(x0_tgt, t, &eps_tilde, sched)?;
    let eps_src = eps_guided_ip2p_src(worlds, &x_t_src, t, sched, gw.omega_i, tether);
    let eps_pred = eps_guided_ip2p_tgt(worlds, &x_t_tgt, t, sched, gw, tether);

    let minimizer = tweedie_x0(&x_t_tgt, t, &eps_pred, sched);
    let ab = sched.alpha_bar(t);
    let prefactor = (1.0 - ab).sqrt() / ab.sqrt();
    let objective_dds = prefactor * eps_pred.dist(&eps_src);
    let objective_x0_gap = minimizer.dist(x0_tgt);
    let injected_residual = eps_pred.dist(&eps_tilde);

    let step_minimizer = proximal_step_expanded(x0_tgt, t, t - 1, &eps_pred, &eps_tilde, sched);
    let step_sampler = ddim_step(&x_t_tgt, t, &eps_pred, &eps_tilde, sched);
    let step_gap = step_minimizer.dist(&step_sampler);

    Ok(EquivalenceReport {
        minimizer,
        objective_dds,
        objective_x0_gap,
        step_minimizer,
        step_sampler,
        step_gap,
        prefactor,
        injected_residual,
    })
}

/// Noise-term policy for [`run_sdedit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdeditMode {
    /// Fresh Gaussian draw per step (reverse VP-SDE editing).
    Stochastic,
    /// Deterministic proximal inversion noise.
    DeterministicProximal,
}

/// Perturb the source image to `t_start = round(strength·T)` and run the
/// reverse process down a uniform grid of at most `n_steps` steps, target
/// predictions from the dual-guided combinator.
#[allow(clippy::too_many_arguments)]
pub fn run_sdedit(
    x0_src: &ImageTensor,
    worlds: &WorldBundle,
    tether: &ImageTether,
    gw: &GuidanceWeights,
    sched: &NoiseSchedule,
    n_steps: usize,
    strength: f64,
    mode: SdeditMode,
    seed: u64,
) -> Result<(ImageTensor, Vec<SdeditStepRecord>)> {
    assert!(n_steps >= 1, "need at least one step");
    assert!(strength > 0.0 && strength <= 1.0, "strength must be in (0,1]");
    let t_max = sched.t_max();
    let t_start = ((strength * t_max as f64).round() as usize).clamp(1, t_max);

    // Uniform grid t_start → 0, deduplicated when n_steps exceeds t_start.
    let mut grid: Vec<usize> = (0..=n_steps)
        .map(|k| (t_start as f64 * (n_steps - k) as f64 / n_steps as f64).round() as usize)
        .collect();
    grid.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = x0_src.shape();
    let draw = |rng: &mut ChaCha8Rng| {
        ImageTensor::from_fn(h, w, c, |_, _, _| StandardNormal.sample(rng))
    };

    let eps_gauss = draw(&mut rng);
    let mut x = perturb(x0_src, t_start, &eps_gauss, sched)?;
    let mut eps_tilde_path = eps_gauss;
    let mut records = Vec::with_capacity(grid.len().saturating_sub(1));

    for pair in grid.windows(2) {
        let (t, t_next) = (pair[0], pair[1]);
        let eps_pred = eps_guided_ip2p_tgt(worlds, &x, t, sched, gw, tether);
        let (eps_tilde, eta_beta) = match mode {
            SdeditMode::Stochastic => (draw(&mut rng), (1.0 - sched.alpha_bar(t_next)).sqrt()),
            SdeditMode::DeterministicProximal => {
                let x_src_path = perturb(x0_src, t, &eps_tilde_path, sched)?;
                let tilde = proximal_inversion_noise(&x_src_path, t, sched, worlds, tether, gw.omega_i);
                (tilde, 0.0)
            }
        };
        let x0_hat = tweedie_x0(&x, t, &eps_pred, sched);
        let x_prev = ddim_step_to(&x, t, t_next, &eps_pred, &eps_tilde, sched);
        let ab = sched.alpha_bar(t);
        let objective = (1.0 - ab).sqrt() / ab.sqrt() * eps_pred.dist(&eps_tilde);
        records.push(SdeditStepRecord {
            t,
            t_next,
            x_t: x.clone(),
            x_prev: x_prev.clone(),
            x0_hat,
            eps_tilde: eps_tilde.clone(),
            eta_beta,
            objective,
        });
        eps_tilde_path = eps_tilde;
        x = x_prev;
    }
    Ok((x, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleKind;
    use crate::world::{make_scene, MixtureComponent, MixtureWorld, SceneSize};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sched() -> NoiseSchedule {
        NoiseSchedule::build(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap()
    }

    fn random_image(seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(16, 16, 1, |_, _, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn tweedie_inverts_perturb_exactly() {
        let s = sched();
        let x0 = random_image(1);
        let eps = random_image(2);
        let x_t = perturb(&x0, 444, &eps, &s).unwrap();
        let back = tweedie_x0(&x_t, 444, &eps, &s);
        assert!(back.max_abs_diff(&x0) < 1e-10);
    }

    #[test]
    fn tweedie_zero_inputs() {
        let s = sched();
        let zero = ImageTensor::zeros(4, 4, 1);
        let out = tweedie_x0(&zero, 100, &zero, &s);
        assert!(out.norm() == 0.0);
    }

    #[test]
    fn tweedie_round_trip_random() {
        let s = sched();
        let x_t = random_image(3);
        let eps_pred = random_image(4);
        for t in [1usize, 250, 999] {
            let x0_hat = tweedie_x0(&x_t, t, &eps_pred, &s);
            let rebuilt = perturb(&x0_hat, t, &eps_pred, &s).unwrap();
            assert!(rebuilt.max_abs_diff(&x_t) < 1e-10, "t={t}");
        }
    }

    #[test]
    fn ddim_final_step_returns_tweedie() {
        let s = sched();
        let x_t = random_image(5);
        let eps_pred = random_image(6);
        let eps_tilde = random_image(7);
        let out = ddim_step(&x_t, 1, &eps_pred, &eps_tilde, &s);
        let x0_hat = tweedie_x0(&x_t, 1, &eps_pred, &s);
        assert!(out.max_abs_diff(&x0_hat) < 1e-12);
    }

    #[test]
    fn ddim_step_stays_on_forward_trajectory() {
        // With the exact noise as both prediction and injected term, the
        // step lands on the forward latent of the same x0 one level down.
        let s = sched();
        let x0 = random_image(8);
        let eps = random_image(9);
        let t = 700;
        let x_t = perturb(&x0, t, &eps, &s).unwrap();
        let stepped = ddim_step(&x_t, t, &eps, &eps, &s);
        let expect = perturb(&x0, t - 1, &eps, &s).unwrap();
        assert!(stepped.max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn proximal_noise_for_point_mass_prior() {
        // Degenerate source prior: the prediction is the exact noise
        // direction toward the diffused mode.
        let s = sched();
        let mu = ImageTensor::full(16, 16, 1, 0.25);
        let world = MixtureWorld::new(
            "point",
            vec![MixtureComponent { weight: 1.0, mean: mu.clone(), var: 1e-12 }],
        )
        .unwrap();
        let worlds = WorldBundle::new(world.clone(), world).unwrap();
        let tether = ImageTether::new(mu.clone(), 1e6).unwrap();
        let t = 350;
        let x_path = random_image(10);
        let got = proximal_inversion_noise(&x_path, t, &s, &worlds, &tether, 0.0);
        let ab = s.alpha_bar(t);
        let expect = ImageTensor::lin_comb(
            1.0 / (1.0 - ab).sqrt(),
            &x_path,
            -ab.sqrt() / (1.0 - ab).sqrt(),
            &mu,
        );
        assert!(got.max_abs_diff(&expect) < 1e-9);
    }

    #[test]
    fn proximal_noise_varies_with_level() {
        let s = sched();
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let tether = ImageTether::new(scene.x0_src.clone(), 1.0).unwrap();
        let seed_eps = random_image(11);
        let mut outputs = Vec::new();
        for t in [200usize, 500, 900] {
            let path = perturb(&scene.x0_src, t, &seed_eps, &s).unwrap();
            outputs.push(proximal_inversion_noise(&path, t, &s, &scene.worlds, &tether, 1.5));
        }
        assert!(outputs[0].dist(&outputs[1]) > 1e-6);
        assert!(outputs[1].dist(&outputs[2]) > 1e-6);
    }

    #[test]
    fn expanded_step_matches_sampler_route() {
        let s = sched();
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let tether = ImageTether::new(scene.x0_src.clone(), 1.0).unwrap();
        let gw = GuidanceWeights::default();
        for (i, t) in [50usize, 320, 820].iter().enumerate() {
            let x0_tgt = random_image(20 + i as u64);
            let seed_eps = random_image(30 + i as u64);
            let x_src = perturb(&scene.x0_src, *t, &seed_eps, &s).unwrap();
            let eps_tilde =
                proximal_inversion_noise(&x_src, *t, &s, &scene.worlds, &tether, gw.omega_i);
            let x_t_tgt = perturb(&x0_tgt, *t, &eps_tilde, &s).unwrap();
            let eps_pred = eps_guided_ip2p_tgt(&scene.worlds, &x_t_tgt, *t, &s, &gw, &tether);
            let sampler = ddim_step(&x_t_tgt, *t, &eps_pred, &eps_tilde, &s);
            let expanded =
                proximal_step_expanded(&x0_tgt, *t, t - 1, &eps_pred, &eps_tilde, &s);
            assert!(
                sampler.max_abs_diff(&expanded) < 1e-10,
                "t={t}: {}",
                sampler.max_abs_diff(&expanded)
            );
        }
    }

    #[test]
    fn equivalence_report_zero_for_identical_branches() {
        let s = sched();
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let worlds = WorldBundle::new(scene.worlds.src.clone(), scene.worlds.src.clone()).unwrap();
        let tether = ImageTether::new(scene.x0_src.clone(), 1.0).unwrap();
        // Same prompt on both branches and ω_y = 0: the two branch latents
        // coincide and so do the predictions, so the objective vanishes.
        let gw = GuidanceWeights::new(0.0, 1.5).unwrap();
        let report = verify_dds_sdedit_equivalence(
            &scene.x0_src,
            &scene.x0_src,
            400,
            &s,
            &worlds,
            &tether,
            &gw,
            &random_image(40),
        )
        .unwrap();
        assert!(report.objective_dds < 1e-12, "objective {}", report.objective_dds);
        assert!(report.step_within(1e-8));
    }

    #[test]
    fn equivalence_x0_gap_is_prefactor_times_injected_residual() {
        let s = sched();
        let scene = make_scene("checker-bg", SceneSize::Small).unwrap();
        let tether = ImageTether::new(scene.x0_src.clone(), 0.8).unwrap();
        let gw = GuidanceWeights::default();
        let report = verify_dds_sdedit_equivalence(
            &random_image(41),
            &scene.x0_src,
            512,
            &s,
            &scene.worlds,
            &tether,
            &gw,
            &random_image(42),
        )
        .unwrap();
        let expect = report.prefactor * report.injected_residual;
        let rel = (report.objective_x0_gap - expect).abs() / expect.max(1e-12);
        assert!(rel < 1e-10, "x0 gap vs prefactor·residual: {rel}");
        assert!(report.step_within(1e-8));
    }

    #[test]
    fn equivalence_prefactor_matches_directional_sensitivity() {
        // Perturb the target prediction along a random direction and check
        // the induced change of ‖x̂_{0|t} − x0‖ against the closed prefactor.
        let s = sched();
        let t = 600;
        let ab = s.alpha_bar(t);
        let pf = (1.0 - ab).sqrt() / ab.sqrt();
        let x0 = random_image(43);
        let eps_tilde = random_image(44);
        let x_t = perturb(&x0, t, &eps_tilde, &s).unwrap();
        let eps_pred = random_image(45);
        let dir = random_image(46).scale(1.0 / random_image(46).norm());
        let h = 1e-6;
        let gap = |pred: &ImageTensor| tweedie_x0(&x_t, t, pred, &s).dist(&x0);
        let plus = gap(&eps_pred.add(&dir.scale(h)));
        let minus = gap(&eps_pred.sub(&dir.scale(h)));
        let fd = (plus - minus) / (2.0 * h);
        // |d gap / d pred along dir| is at most pf, with equality when the
        // residual aligns with the direction; use an aligned direction.
        let residual = tweedie_x0(&x_t, t, &eps_pred, &s).sub(&x0);
        let aligned = residual.scale(1.0 / residual.norm());
        let plus_a = gap(&eps_pred.add(&aligned.scale(h)));
        let minus_a = gap(&eps_pred.sub(&aligned.scale(h)));
        let fd_aligned = ((plus_a - minus_a) / (2.0 * h)).abs();
        assert!((fd_aligned - pf).abs() / pf < 1e-6, "fd {fd_aligned} vs pf {pf}");
        assert!(fd.abs() <= pf * (1.0 + 1e-6));
    }

    #[test]
    fn run_sdedit_tiny_strength_is_noop() {
        let s = sched();
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let tether = ImageTether::new(scene.x0_src.clone(), 1.0).unwrap();
        let (out, records) = run_sdedit(
            &scene.x0_src,
            &scene.worlds,
            &tether,
            &GuidanceWeights::default(),
            &s,
            1,
            0.001,
            SdeditMode::DeterministicProximal,
            7,
        )
        .unwrap();
        assert_eq!(records.len(), 1);
        // t_start = 1 and ᾱ_1 ≈ 1: one step recovers the source up to the
        // tiny injected perturbation.
        assert!(out.dist(&scene.x0_src) / scene.x0_src.norm() < 0.05);
    }

    #[test]
    fn run_sdedit_deterministic_reruns_bit_identical() {
        let s = sched();
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let tether = ImageTether::new(scene.x0_src.clone(), 1.0).unwrap();
        let run = || {
            run_sdedit(
                &scene.x0_src,
                &scene.worlds,
                &tether,
                &GuidanceWeights::default(),
                &s,
                12,
                0.7,
                SdeditMode::DeterministicProximal,
                99,
            )
            .unwrap()
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra.len(), rb.len());
        for (x, y) in ra.iter().zip(&rb) {
            assert_eq!(x.x_prev, y.x_prev);
        }
    }

    #[test]
    fn run_sdedit_improves_target_likelihood() {
        let s = sched();
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let tether = ImageTether::new(scene.x0_src.clone(), 1.0).unwrap();
        let (out, records) = run_sdedit(
            &scene.x0_src,
            &scene.worlds,
            &tether,
            &GuidanceWeights::default(),
            &s,
            25,
            0.7,
            SdeditMode::DeterministicProximal,
            13,
        )
        .unwrap();
        let before = scene.worlds.tgt.log_density(&scene.x0_src);
        let after = scene.worlds.tgt.log_density(&out);
        assert!(after > before, "log-likelihood did not improve: {before} -> {after}");
        for rec in &records {
            assert!(rec.reconstruction_gap(&s) < 1e-10);
        }
    }

    #[test]
    fn run_sdedit_stochastic_mode_runs() {
        let s = sched();
        let scene = make_scene("ring-to-cross", SceneSize::Small).unwrap();
        let tether = ImageTether::new(scene.x0_src.clone(), 1.0).unwrap();
        let (_, records) = run_sdedit(
            &scene.x0_src,
            &scene.worlds,
            &tether,
            &GuidanceWeights::default(),
            &s,
            8,
            0.5,
            SdeditMode::Stochastic,
            3,
        )
        .unwrap();
        assert!(!records.is_empty());
        for rec in &records {
            // The stochastic multiplier vanishes only at the final step to 0.
            if rec.t_next > 0 {
                assert!(rec.eta_beta > 0.0);
            }
            assert!(rec.reconstruction_gap(&s) < 1e-10);
        }
    }
}
