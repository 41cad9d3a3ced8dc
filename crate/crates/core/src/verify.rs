//! Self-check suite: every closed form in the crate against an independent
//! numerical route, with fixed seeds and pinned tolerances.
//!
//! Each check reports its measured error so a report can show the margin,
//! not just a verdict. The checks are parameterized where that makes fault
//! injection possible (a corrupted weighting schedule must fail the endpoint
//! check while leaving unrelated checks green).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::denoiser::{
    eps_exact, eps_guided_ip2p_src, eps_guided_ip2p_tgt, freeu_filter, FreeUConfig,
    GuidanceWeights,
};
use crate::distill::{grad_pds, pds_phi_psi, phi_psi, PdsMode, WeightingSchedule};
use crate::generator::{CameraOp, Generator};
use crate::image::ImageTensor;
use crate::schedule::{perturb, NoiseSchedule, ScheduleKind};
use crate::sdedit::{
    ddim_step, proximal_inversion_noise, proximal_step_expanded, tweedie_x0,
    verify_dds_sdedit_equivalence,
};
use crate::world::{conditioned_mixture, make_scene, ConditionSet, ImageTether, SceneSize, SCENE_NAMES};

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub tolerance: f64,
    pub max_error: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn from_error(name: &'static str, tolerance: f64, max_error: f64, detail: impl Into<String>) -> Self {
        Self { name, tolerance, max_error, passed: max_error <= tolerance, detail: detail.into() }
    }
}

fn base_schedule() -> NoiseSchedule {
    NoiseSchedule::build(ScheduleKind::Linear, 1000, 1e-4, 0.02).expect("default schedule")
}

fn random_image(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    ImageTensor::from_fn(h, w, c, |_, _, _| StandardNormal.sample(rng))
}

/// Run the whole suite with fixed seeds.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check_weighting_endpoints(&WeightingSchedule::dreamcatalyst()),
        check_pds_decomposition(200),
        check_pds_probe_regression(),
        check_proximal_step_expansion(),
        check_dds_sdedit_equivalence(50),
        check_equivalence_prefactor(),
        check_score_finite_difference(100),
        check_generator_adjoint(),
        check_camera_adjoint(),
        check_pullback_finite_difference(),
        check_identity_gradient_finite_difference(),
        check_tweedie_round_trip(),
        check_schedule_log_product(),
        check_freeu_parseval(),
        check_mixture_conditioning_quadrature(),
        check_guidance_recomposition(),
    ]
}

/// Closed-form weighting endpoints and strict monotonicity on a T=1000 grid.
pub fn check_weighting_endpoints(ws: &WeightingSchedule) -> CheckResult {
    let sched = base_schedule();
    let t_max = sched.t_max();
    let tol = 1e-12;
    let targets = [
        (0usize, 0.075, 0.2),
        (t_max, 0.075 * std::f64::consts::E, 1.0),
    ];
    let mut max_err: f64 = 0.0;
    for &(t, phi_ref, psi_ref) in &targets {
        match phi_psi(ws, t, &sched) {
            Ok((phi, psi)) => {
                max_err = max_err.max((phi - phi_ref).abs()).max((psi - psi_ref).abs());
            }
            Err(_) => max_err = f64::INFINITY,
        }
    }
    let mut monotone = true;
    let mut prev = phi_psi(ws, 0, &sched).unwrap_or((f64::INFINITY, f64::INFINITY));
    for t in 1..=t_max {
        let cur = phi_psi(ws, t, &sched).unwrap_or((f64::NEG_INFINITY, f64::NEG_INFINITY));
        if cur.0 <= prev.0 || cur.1 <= prev.1 {
            monotone = false;
            break;
        }
        prev = cur;
    }
    if !monotone {
        max_err = f64::INFINITY;
    }
    CheckResult::from_error(
        "weighting_endpoints",
        tol,
        max_err,
        "phi(0)=chi, phi(T)=chi*e, psi(0)=delta, psi(T)=1; strictly increasing",
    )
}

/// Direct vs decomposed stochastic-latent gradients over random probes on
/// every schedule kind.
pub fn check_pds_decomposition(probes_per_kind: usize) -> CheckResult {
    let scene = make_scene("two-blobs", SceneSize::Small).expect("scene");
    let tether = ImageTether::new(scene.x0_src.clone(), 1.0).expect("tether");
    let gw = GuidanceWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xbd5);
    let mut max_rel: f64 = 0.0;
    for kind in [ScheduleKind::Linear, ScheduleKind::ScaledLinear, ScheduleKind::Cosine] {
        let sched = NoiseSchedule::build(kind, 1000, 1e-4, 0.02).expect("schedule");
        for _ in 0..probes_per_kind {
            let t = 2 + (rng.next_u64() as usize) % (sched.t_max() - 1);
            let eps = random_image(16, 16, 1, &mut rng);
            let eps_prev = random_image(16, 16, 1, &mut rng);
            let x0_tgt = random_image(16, 16, 1, &mut rng);
            let direct = grad_pds(
                &x0_tgt, &scene.x0_src, t, &eps, &eps_prev, &sched, &scene.worlds, &tether, &gw,
                PdsMode::Direct,
            )
            .expect("direct");
            let decomposed = grad_pds(
                &x0_tgt, &scene.x0_src, t, &eps, &eps_prev, &sched, &scene.worlds, &tether, &gw,
                PdsMode::Decomposed,
            )
            .expect("decomposed");
            let rel =
                direct.grad_x0.dist(&decomposed.grad_x0) / (1.0 + direct.grad_x0.norm());
            max_rel = max_rel.max(rel);
        }
    }
    CheckResult::from_error(
        "pds_decomposition",
        1e-8,
        max_rel,
        format!("{probes_per_kind} probes per schedule kind, t in [2, T]"),
    )
}

/// Closed-form PDS coefficients against a linear-probe regression on the
/// literal latent definition.
pub fn check_pds_probe_regression() -> CheckResult {
    let sched = base_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e6);
    let mut max_err: f64 = 0.0;
    for &(t, t_prev) in &[(5usize, 3usize), (40, 38), (250, 248), (800, 798), (1000, 999)] {
        let (phi, psi) = pds_phi_psi(&sched, t, t_prev);
        let ab_t = sched.alpha_bar(t);
        let ab_p = sched.alpha_bar(t_prev);
        let sigma = (1.0 - ab_p) / (1.0 - ab_t) * sched.beta(t);
        let latent = |x0: &ImageTensor, pred: &ImageTensor, eps: &ImageTensor, eps_prev: &ImageTensor| {
            let x_prev = ImageTensor::lin_comb(ab_p.sqrt(), x0, (1.0 - ab_p).sqrt(), eps_prev);
            let x_t = ImageTensor::lin_comb(ab_t.sqrt(), x0, (1.0 - ab_t).sqrt(), eps);
            let x0_hat = ImageTensor::lin_comb(
                1.0 / ab_t.sqrt(),
                &x_t,
                -(1.0 - ab_t).sqrt() / ab_t.sqrt(),
                pred,
            );
            let mu = ImageTensor::lin_comb(
                ab_p.sqrt() * sched.beta(t) / (1.0 - ab_t),
                &x0_hat,
                sched.alpha(t).sqrt() * (1.0 - ab_p) / (1.0 - ab_t),
                &x_t,
            );
            x_prev.sub(&mu).scale(1.0 / sigma)
        };
        let eps = random_image(16, 16, 1, &mut rng);
        let eps_prev = random_image(16, 16, 1, &mut rng);
        let x0 = random_image(16, 16, 1, &mut rng);
        let pred = random_image(16, 16, 1, &mut rng);
        let base = latent(&x0, &pred, &eps, &eps_prev);

        let dx0 = random_image(16, 16, 1, &mut rng);
        let resp = latent(&x0.add(&dx0), &pred, &eps, &eps_prev).sub(&base);
        let phi_probe = resp.dot(&dx0) / dx0.dot(&dx0);
        max_err = max_err.max((phi - phi_probe).abs() / (1.0 + phi_probe.abs()));

        let dpred = random_image(16, 16, 1, &mut rng);
        let resp = latent(&x0, &pred.add(&dpred), &eps, &eps_prev).sub(&base);
        let psi_probe = resp.dot(&dpred) / dpred.dot(&dpred);
        max_err = max_err.max((psi - psi_probe).abs() / (1.0 + psi_probe.abs()));
    }
    CheckResult::from_error(
        "pds_probe_regression",
        1e-8,
        max_err,
        "phi/psi from linear probes of the literal latent",
    )
}

/// The sampler route of the deterministic proximal step against its
/// expanded closed form, term by term on random probes.
pub fn check_proximal_step_expansion() -> CheckResult {
    let sched = base_schedule();
    let scene = make_scene("two-blobs", SceneSize::Small).expect("scene");
    let tether = ImageTether::new(scene.x0_src.clone(), 1.0).expect("tether");
    let gw = GuidanceWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xe15);
    let mut max_rel: f64 = 0.0;
    for _ in 0..40 {
        let t = 2 + (rng.next_u64() as usize) % 998;
        let x0_tgt = random_image(16, 16, 1, &mut rng);
        let seed_eps = random_image(16, 16, 1, &mut rng);
        let x_src = perturb(&scene.x0_src, t, &seed_eps, &sched).expect("perturb");
        let eps_tilde =
            proximal_inversion_noise(&x_src, t, &sched, &scene.worlds, &tether, gw.omega_i);
        let x_t_tgt = perturb(&x0_tgt, t, &eps_tilde, &sched).expect("perturb");
        let eps_pred = eps_guided_ip2p_tgt(&scene.worlds, &x_t_tgt, t, &sched, &gw, &tether);
        let sampler = ddim_step(&x_t_tgt, t, &eps_pred, &eps_tilde, &sched);
        let expanded = proximal_step_expanded(&x0_tgt, t, t - 1, &eps_pred, &eps_tilde, &sched);
        max_rel = max_rel.max(sampler.dist(&expanded) / (1.0 + sampler.norm()));
    }
    CheckResult::from_error(
        "proximal_step_expansion",
        1e-10,
        max_rel,
        "Tweedie route vs expanded form, 40 probes",
    )
}

/// One exact-minimization reverse step equals the sampler step.
pub fn check_dds_sdedit_equivalence(probes: usize) -> CheckResult {
    let sched = base_schedule();
    let scene = make_scene("two-blobs", SceneSize::Small).expect("scene");
    let tether = ImageTether::new(scene.x0_src.clone(), 1.0).expect("tether");
    let gw = GuidanceWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xdd5);
    let mut max_rel: f64 = 0.0;
    for _ in 0..probes {
        let t = 2 + (rng.next_u64() as usize) % 998;
        let x0_tgt = random_image(16, 16, 1, &mut rng);
        let seed = random_image(16, 16, 1, &mut rng);
        let report = verify_dds_sdedit_equivalence(
            &x0_tgt, &scene.x0_src, t, &sched, &scene.worlds, &tether, &gw, &seed,
        )
        .expect("report");
        max_rel = max_rel.max(report.step_gap / (1.0 + report.step_minimizer.norm()));
    }
    CheckResult::from_error(
        "dds_sdedit_equivalence",
        1e-8,
        max_rel,
        format!("minimization vs sampler step on {probes} probes"),
    )
}

/// The objective prefactor against the finite-difference sensitivity of
/// `‖x̂_(0|t) − x0‖` to prediction perturbations along the residual.
pub fn check_equivalence_prefactor() -> CheckResult {
    let sched = base_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(0xfac);
    let mut max_rel: f64 = 0.0;
    for &t in &[120usize, 480, 890] {
        let ab = sched.alpha_bar(t);
        let pf = (1.0 - ab).sqrt() / ab.sqrt();
        let x0 = random_image(16, 16, 1, &mut rng);
        let eps = random_image(16, 16, 1, &mut rng);
        let x_t = perturb(&x0, t, &eps, &sched).expect("perturb");
        let pred = random_image(16, 16, 1, &mut rng);
        let residual = tweedie_x0(&x_t, t, &pred, &sched).sub(&x0);
        let dir = residual.scale(1.0 / residual.norm());
        let h = 1e-6;
        let gap = |p: &ImageTensor| tweedie_x0(&x_t, t, p, &sched).dist(&x0);
        let fd = ((gap(&pred.add(&dir.scale(h))) - gap(&pred.sub(&dir.scale(h)))) / (2.0 * h)).abs();
        max_rel = max_rel.max((fd - pf).abs() / pf);
    }
    CheckResult::from_error(
        "equivalence_prefactor",
        1e-6,
        max_rel,
        "directional finite difference of the x0 gap",
    )
}

/// Exact noise prediction against a central finite-difference score oracle
/// on every built-in scene.
pub fn check_score_finite_difference(probes_per_scene: usize) -> CheckResult {
    let sched = base_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5c0);
    let mut max_rel: f64 = 0.0;
    for name in SCENE_NAMES {
        let scene = make_scene(name, SceneSize::Small).expect("scene");
        let worlds = [&scene.worlds.src, &scene.worlds.tgt, &scene.worlds.null];
        for i in 0..probes_per_scene {
            let t = 1 + (rng.next_u64() as usize) % sched.t_max();
            let world = worlds[i % worlds.len()];
            let cond = ConditionSet::text_only(world);
            let eps = random_image(16, 16, 1, &mut rng);
            let x_t = perturb(&scene.x0_src, t, &eps, &sched).expect("perturb");
            let exact = eps_exact(&cond, &x_t, t, &sched);

            let ab = sched.alpha_bar(t);
            let om_sqrt = (1.0 - ab).sqrt();
            let step = 1e-4;
            let mut fd = ImageTensor::zeros(16, 16, 1);
            for d in 0..fd.len() {
                let mut plus = x_t.clone();
                plus.data_mut()[d] += step;
                let mut minus = x_t.clone();
                minus.data_mut()[d] -= step;
                fd.data_mut()[d] = -om_sqrt
                    * (world.log_density_at(&plus, ab) - world.log_density_at(&minus, ab))
                    / (2.0 * step);
            }
            max_rel = max_rel.max(exact.dist(&fd) / fd.norm().max(1e-12));
        }
    }
    CheckResult::from_error(
        "score_finite_difference",
        1e-4,
        max_rel,
        format!("{probes_per_scene} probes per scene, central step 1e-4"),
    )
}

/// `⟨J·u, v⟩ = ⟨u, Jᵀ·v⟩` for the generator, with and without a camera.
pub fn check_generator_adjoint() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xad1);
    let gen = Generator::linear_basis(16, 16, 1, 64).expect("basis");
    let cams = [None, Some(CameraOp::new("probe", 2, 2, 12, 12, 2).expect("camera"))];
    let mut max_rel: f64 = 0.0;
    for cam in &cams {
        for _ in 0..10 {
            let u: Vec<f64> = (0..64).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut gen_u = gen.clone();
            gen_u.psi_mut().copy_from_slice(&u);
            let ju = gen_u.render(cam.as_ref());
            let v = random_image(ju.height(), ju.width(), 1, &mut rng);
            let lhs = ju.dot(&v);
            let rhs: f64 = u.iter().zip(gen.pullback(cam.as_ref(), &v)).map(|(a, b)| a * b).sum();
            max_rel = max_rel.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
    }
    CheckResult::from_error("generator_adjoint", 1e-10, max_rel, "10 probes per camera setting")
}

/// `⟨C·x, y⟩ = ⟨x, Cᵀ·y⟩` for crop/downsample observations.
pub fn check_camera_adjoint() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xca3);
    let cams = [
        CameraOp::full(16, 16),
        CameraOp::new("c1", 3, 1, 12, 12, 1).expect("camera"),
        CameraOp::new("c2", 0, 4, 12, 12, 2).expect("camera"),
    ];
    let mut max_rel: f64 = 0.0;
    for cam in &cams {
        for _ in 0..10 {
            let x = random_image(16, 16, 1, &mut rng);
            let cx = cam.observe(&x);
            let y = random_image(cx.height(), cx.width(), 1, &mut rng);
            let lhs = cx.dot(&y);
            let rhs = x.dot(&cam.adjoint(&y, 16, 16));
            max_rel = max_rel.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
    }
    CheckResult::from_error("camera_adjoint", 1e-10, max_rel, "10 probes per camera")
}

/// Basis pullback against finite differences of `⟨g, render(ψ)⟩`.
pub fn check_pullback_finite_difference() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfd0);
    let mut gen = Generator::linear_basis(16, 16, 1, 48).expect("basis");
    let psi: Vec<f64> = (0..48).map(|_| StandardNormal.sample(&mut rng)).collect();
    gen.psi_mut().copy_from_slice(&psi);
    let g = random_image(16, 16, 1, &mut rng);
    let analytic = gen.pullback(None, &g);
    let h = 1e-6;
    let mut max_rel: f64 = 0.0;
    for (k, &grad_k) in analytic.iter().enumerate() {
        let mut plus = gen.clone();
        plus.psi_mut()[k] += h;
        let mut minus = gen.clone();
        minus.psi_mut()[k] -= h;
        let fd = (plus.render(None).dot(&g) - minus.render(None).dot(&g)) / (2.0 * h);
        max_rel = max_rel.max((grad_k - fd).abs() / fd.abs().max(1e-9));
    }
    CheckResult::from_error("pullback_finite_difference", 1e-6, max_rel, "all 48 basis modes")
}

/// `∇‖x0_tgt − x0_src‖² = 2(x0_tgt − x0_src)` against central differences,
/// compared in the norm sense (per-coordinate relative error is meaningless
/// where the gradient crosses zero).
pub fn check_identity_gradient_finite_difference() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1de);
    let x0_tgt = random_image(16, 16, 1, &mut rng);
    let x0_src = random_image(16, 16, 1, &mut rng);
    let analytic = x0_tgt.sub(&x0_src).scale(2.0);
    let h = 1e-5;
    let mut fd = ImageTensor::zeros(16, 16, 1);
    for i in 0..x0_tgt.len() {
        let mut plus = x0_tgt.clone();
        plus.data_mut()[i] += h;
        let mut minus = x0_tgt.clone();
        minus.data_mut()[i] -= h;
        let f = |x: &ImageTensor| {
            let d = x.sub(&x0_src);
            d.dot(&d)
        };
        fd.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    let rel = analytic.dist(&fd) / fd.norm();
    CheckResult::from_error(
        "identity_gradient_finite_difference",
        1e-6,
        rel,
        "full gradient vs central differences, norm-relative",
    )
}

/// Re-perturbing the Tweedie estimate reproduces the input latent.
pub fn check_tweedie_round_trip() -> CheckResult {
    let sched = base_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7dd);
    let mut max_rel: f64 = 0.0;
    for &t in &[1usize, 77, 340, 999] {
        let x_t = random_image(16, 16, 1, &mut rng);
        let pred = random_image(16, 16, 1, &mut rng);
        let x0_hat = tweedie_x0(&x_t, t, &pred, &sched);
        let rebuilt = perturb(&x0_hat, t, &pred, &sched).expect("perturb");
        max_rel = max_rel.max(rebuilt.dist(&x_t) / (1.0 + x_t.norm()));
    }
    CheckResult::from_error("tweedie_round_trip", 1e-10, max_rel, "4 noise levels")
}

/// `ᾱ` rebuilt from summed `ln α` against the direct running product.
pub fn check_schedule_log_product() -> CheckResult {
    let mut max_rel: f64 = 0.0;
    for kind in [ScheduleKind::Linear, ScheduleKind::ScaledLinear, ScheduleKind::Cosine] {
        let sched = NoiseSchedule::build(kind, 1000, 1e-4, 0.02).expect("schedule");
        let mut log_sum = 0.0;
        for t in 1..=sched.t_max() {
            log_sum += sched.alpha(t).ln();
            let via_logs = log_sum.exp();
            max_rel = max_rel.max((via_logs - sched.alpha_bar(t)).abs() / sched.alpha_bar(t));
        }
    }
    CheckResult::from_error("schedule_log_product", 1e-10, max_rel, "all kinds, every t")
}

/// Equal-gain frequency reweighting preserves scaled Parseval energy.
pub fn check_freeu_parseval() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf2e);
    let cfg = FreeUConfig { b: 1.15, s: 1.15, cutoff_frac: 0.25 };
    let mut max_rel: f64 = 0.0;
    for _ in 0..5 {
        let img = random_image(16, 16, 1, &mut rng);
        let out = freeu_filter(&img, &cfg);
        let rel = (out.dot(&out) - cfg.b * cfg.b * img.dot(&img)).abs() / img.dot(&img);
        max_rel = max_rel.max(rel);
    }
    CheckResult::from_error("freeu_parseval", 1e-10, max_rel, "b = s, 5 random images")
}

/// Conditioned mixture against trapezoid quadrature of prior × tether
/// likelihood on a 1D slice.
pub fn check_mixture_conditioning_quadrature() -> CheckResult {
    let scene = make_scene("two-blobs", SceneSize::Small).expect("scene");
    let world = &scene.worlds.src;
    let lambda = 0.7;
    let tether = ImageTether::new(scene.x0_src.clone(), lambda).expect("tether");
    let cond = conditioned_mixture(world, Some(&tether));
    let coord = world.dim() / 2;
    let n = 201;
    let span = 3.0;
    let mut raw = Vec::with_capacity(n);
    let mut ana = Vec::with_capacity(n);
    for i in 0..n {
        let s = -span + 2.0 * span * i as f64 / (n - 1) as f64;
        let mut x = scene.x0_src.clone();
        x.data_mut()[coord] += s;
        let sq: f64 = x
            .data()
            .iter()
            .zip(tether.tether.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        raw.push(world.log_density(&x) - sq / (2.0 * lambda * lambda));
        ana.push(cond.log_density(&x));
    }
    let normalize = |logs: &[f64]| {
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|&l| (l - m).exp()).collect();
        let total: f64 = w.windows(2).map(|p| 0.5 * (p[0] + p[1])).sum();
        w.into_iter().map(|v| v / total).collect::<Vec<_>>()
    };
    let raw_n = normalize(&raw);
    let ana_n = normalize(&ana);
    let max_err = raw_n
        .iter()
        .zip(&ana_n)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    CheckResult::from_error(
        "mixture_conditioning_quadrature",
        1e-9,
        max_err,
        "normalized slice densities, 201-point trapezoid",
    )
}

/// Dual-guidance combinators against an independent four-term assembly.
pub fn check_guidance_recomposition() -> CheckResult {
    let sched = base_schedule();
    let scene = make_scene("checker-bg", SceneSize::Small).expect("scene");
    let tether = ImageTether::new(scene.x0_src.clone(), 0.8).expect("tether");
    let gw = GuidanceWeights::new(4.0, 1.5).expect("weights");
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c0);
    let mut max_rel: f64 = 0.0;
    for _ in 0..10 {
        let t = 1 + (rng.next_u64() as usize) % sched.t_max();
        let x_t = random_image(16, 16, 1, &mut rng);
        let e_null = eps_exact(&ConditionSet::text_only(&scene.worlds.null), &x_t, t, &sched);
        let e_null_img =
            eps_exact(&ConditionSet::with_image(&scene.worlds.null, &tether), &x_t, t, &sched);
        let e_tgt_img =
            eps_exact(&ConditionSet::with_image(&scene.worlds.tgt, &tether), &x_t, t, &sched);
        let manual_tgt = ImageTensor::from_fn(16, 16, 1, |y, x, c| {
            e_null.get(y, x, c)
                + gw.omega_y * (e_tgt_img.get(y, x, c) - e_null_img.get(y, x, c))
                + gw.omega_i * (e_null_img.get(y, x, c) - e_null.get(y, x, c))
        });
        let got_tgt = eps_guided_ip2p_tgt(&scene.worlds, &x_t, t, &sched, &gw, &tether);
        max_rel = max_rel.max(got_tgt.dist(&manual_tgt) / (1.0 + manual_tgt.norm()));

        let manual_src = ImageTensor::from_fn(16, 16, 1, |y, x, c| {
            e_null.get(y, x, c) + gw.omega_i * (e_null_img.get(y, x, c) - e_null.get(y, x, c))
        });
        let got_src = eps_guided_ip2p_src(&scene.worlds, &x_t, t, &sched, gw.omega_i, &tether);
        max_rel = max_rel.max(got_src.dist(&manual_src) / (1.0 + manual_src.norm()));
    }
    CheckResult::from_error("guidance_recomposition", 1e-12, max_rel, "10 probes, both branches")
}
