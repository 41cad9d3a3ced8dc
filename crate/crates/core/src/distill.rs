//! Distillation gradient operators and their timestep weightings.
//!
//! All operators share two conventions. First, the denoiser is never
//! differentiated through: every gradient is taken with the noise-prediction
//! network treated as a constant (the usual Jacobian omission). Second, the
//! same noise draw perturbs the source and target branches; the
//! stochastic-latent decomposition below is exact only under shared noise.
//!
//! The editing objective in its general form is
//! `Φ(t)·R_iden + Ψ(t)·L_DDS`, with `R_iden = ‖x0_tgt − x0_src‖²` and
//! `L_DDS` the squared difference of guided noise predictions. The supported
//! weightings are the stochastic-latent (PDS-derived) coefficients, the
//! DreamCatalyst closed form `Φ*(t) = χ·e^{t/T}`, `Ψ*(t) = δ + γ·(t/T)^{1/e}`,
//! and a constant pair for ablations (Φ=0, Ψ=1 recovers plain DDS).

use crate::denoiser::{
    eps_guided_ip2p_src, eps_guided_ip2p_tgt, eps_guided_simple, freeu_filter, FreeUConfig,
    GuidanceWeights,
};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::schedule::{perturb, NoiseSchedule};
use crate::world::{ImageTether, Prompt, WorldBundle};

/// Which `(Φ(t), Ψ(t))` pair an editing run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingKind {
    /// Coefficients implied by stochastic-latent matching.
    PdsDerived,
    /// The closed-form reweighting `(χe^{t/T}, δ + γ(t/T)^{1/e})`.
    DreamCatalyst,
    /// Fixed `(Φ, Ψ)` for ablations.
    Constant,
}

/// Evaluator for a `(Φ(t), Ψ(t))` pair.
#[derive(Debug, Clone)]
pub struct WeightingSchedule {
    pub kind: WeightingKind,
    pub chi: f64,
    pub delta: f64,
    pub gamma: f64,
    pub const_phi: f64,
    pub const_psi: f64,
    /// DDIM inference-grid size used when evaluating the PDS-derived curve;
    /// the reverse step targets `t − T/steps` rather than `t − 1`. On the
    /// adjacent grid the identity coefficient cancels exactly, so the curve
    /// is only informative at the coarser inference spacing.
    pub pds_inference_steps: usize,
}

impl WeightingSchedule {
    /// DreamCatalyst constants χ=0.075, δ=0.2, γ=0.8.
    pub fn dreamcatalyst() -> Self {
        Self {
            kind: WeightingKind::DreamCatalyst,
            chi: 0.075,
            delta: 0.2,
            gamma: 0.8,
            const_phi: 0.0,
            const_psi: 1.0,
            pds_inference_steps: 500,
        }
    }

    pub fn constant(phi: f64, psi: f64) -> Self {
        Self { const_phi: phi, const_psi: psi, kind: WeightingKind::Constant, ..Self::dreamcatalyst() }
    }

    pub fn pds_derived(inference_steps: usize) -> Self {
        Self {
            kind: WeightingKind::PdsDerived,
            pds_inference_steps: inference_steps.max(1),
            ..Self::dreamcatalyst()
        }
    }
}

/// `(Φ(t), Ψ(t))` for the schedule. DreamCatalyst and Constant accept
/// `t ∈ {0..T}`; the PDS-derived curve needs a reverse step and returns
/// `(0, 0)` at `t = 1` where the posterior width vanishes.
pub fn phi_psi(ws: &WeightingSchedule, t: usize, sched: &NoiseSchedule) -> Result<(f64, f64)> {
    let t_max = sched.t_max();
    if t > t_max {
        return Err(Error::TimestepRange { t, lo: 0, hi: t_max });
    }
    match ws.kind {
        WeightingKind::Constant => Ok((ws.const_phi, ws.const_psi)),
        WeightingKind::DreamCatalyst => {
            let frac = t as f64 / t_max as f64;
            let phi = ws.chi * frac.exp();
            let psi = ws.delta + ws.gamma * frac.powf(1.0 / std::f64::consts::E);
            Ok((phi, psi))
        }
        WeightingKind::PdsDerived => {
            if t == 0 {
                return Err(Error::TimestepRange { t, lo: 1, hi: t_max });
            }
            let stride = ((t_max as f64 / ws.pds_inference_steps as f64).round() as usize).max(1);
            let t_prev = if t > stride { t - stride } else { t.saturating_sub(1) };
            if t_prev == 0 {
                // No reverse step exists below t = 1; the latent is undefined.
                return Ok((0.0, 0.0));
            }
            Ok(pds_phi_psi(sched, t, t_prev))
        }
    }
}

/// Closed-form stochastic-latent coefficients for a reverse step `t → t_prev`.
///
/// Writing the posterior mean in affine form `μ_θ = A·x_t − B·ε_θ` with
/// `A = [√ᾱ_p·β_t/√ᾱ_t + √α_t(1−ᾱ_p)]/(1−ᾱ_t)` and
/// `B = √ᾱ_p·β_t/(√ᾱ_t·√(1−ᾱ_t))`, the shared-noise difference of latents
/// `z = (x_{t_prev} − μ_θ(x_t))/σ` expands to
/// `Φ·Δx0 + Ψ·Δε_θ` with `Φ = (√ᾱ_p − A√ᾱ_t)/σ` and `Ψ = B/σ`,
/// `σ = ((1−ᾱ_p)/(1−ᾱ_t))·β_t`.
pub fn pds_phi_psi(sched: &NoiseSchedule, t: usize, t_prev: usize) -> (f64, f64) {
    assert!(t_prev < t, "reverse step must go down: {t_prev} !< {t}");
    let ab_t = sched.alpha_bar(t);
    let ab_p = sched.alpha_bar(t_prev);
    let beta = sched.beta(t);
    let sigma = (1.0 - ab_p) / (1.0 - ab_t) * beta;
    let (a, b) = posterior_mean_coeffs(sched, t, t_prev);
    let phi = (ab_p.sqrt() - a * ab_t.sqrt()) / sigma;
    let psi = b / sigma;
    (phi, psi)
}

/// Affine form `μ_θ = A·x_t − B·ε_θ` of the reverse-posterior mean.
fn posterior_mean_coeffs(sched: &NoiseSchedule, t: usize, t_prev: usize) -> (f64, f64) {
    let ab_t = sched.alpha_bar(t);
    let ab_p = sched.alpha_bar(t_prev);
    let beta = sched.beta(t);
    let alpha = sched.alpha(t);
    let a = (ab_p.sqrt() * beta / ab_t.sqrt() + alpha.sqrt() * (1.0 - ab_p)) / (1.0 - ab_t);
    let b = ab_p.sqrt() * beta / (ab_t.sqrt() * (1.0 - ab_t).sqrt());
    (a, b)
}

/// Diagnostic split of a distillation gradient:
/// `grad_x0 = phi·identity_term + psi·dds_term`.
#[derive(Debug, Clone)]
pub struct GradParts {
    pub phi: f64,
    pub psi: f64,
    pub identity_term: ImageTensor,
    pub dds_term: ImageTensor,
}

/// A gradient with respect to the rendered image, before the generator
/// Jacobian is applied.
#[derive(Debug, Clone)]
pub struct DistillGrad {
    pub grad_x0: ImageTensor,
    pub parts: Option<GradParts>,
}

impl DistillGrad {
    /// Residual of the diagnostic split, `‖grad − (φ·id + ψ·dds)‖`.
    pub fn parts_residual(&self) -> Option<f64> {
        self.parts.as_ref().map(|p| {
            let recombined =
                ImageTensor::lin_comb(p.phi, &p.identity_term, p.psi, &p.dds_term);
            self.grad_x0.dist(&recombined)
        })
    }
}

/// Score-distillation gradient `ε_θ^ω(x_t, y, t) − ε` with
/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε` and plain text-scale guidance.
pub fn grad_sds(
    gen_x0: &ImageTensor,
    y: Prompt,
    t: usize,
    eps: &ImageTensor,
    sched: &NoiseSchedule,
    worlds: &WorldBundle,
    omega_y: f64,
) -> Result<DistillGrad> {
    sched.check_t(t)?;
    let x_t = perturb(gen_x0, t, eps, sched)?;
    let pred = eps_guided_simple(worlds, y, &x_t, t, sched, omega_y);
    Ok(DistillGrad { grad_x0: pred.sub(eps), parts: None })
}

/// Delta-denoising gradient: difference of guided predictions between the
/// target branch and the frozen source branch, the same `ε` perturbing both.
#[allow(clippy::too_many_arguments)]
pub fn grad_dds(
    x0_tgt: &ImageTensor,
    x0_src: &ImageTensor,
    t: usize,
    eps: &ImageTensor,
    sched: &NoiseSchedule,
    worlds: &WorldBundle,
    tether: &ImageTether,
    gw: &GuidanceWeights,
) -> Result<DistillGrad> {
    let (pred_tgt, pred_src) = branch_predictions(x0_tgt, x0_src, t, eps, sched, worlds, tether, gw, None)?;
    let dds = pred_tgt.sub(&pred_src);
    Ok(DistillGrad {
        grad_x0: dds.clone(),
        parts: Some(GradParts {
            phi: 0.0,
            psi: 1.0,
            identity_term: x0_tgt.sub(x0_src),
            dds_term: dds,
        }),
    })
}

/// Guided noise predictions for the two branches at the shared perturbation.
/// The target branch takes the dual image+text combinator; the source branch
/// holds the text scale at zero. `freeu` filters the target prediction only.
#[allow(clippy::too_many_arguments)]
fn branch_predictions(
    x0_tgt: &ImageTensor,
    x0_src: &ImageTensor,
    t: usize,
    eps: &ImageTensor,
    sched: &NoiseSchedule,
    worlds: &WorldBundle,
    tether: &ImageTether,
    gw: &GuidanceWeights,
    freeu: Option<&FreeUConfig>,
) -> Result<(ImageTensor, ImageTensor)> {
    sched.check_t(t)?;
    x0_tgt.check_same_shape(x0_src)?;
    let x_t_tgt = perturb(x0_tgt, t, eps, sched)?;
    let x_t_src = perturb(x0_src, t, eps, sched)?;
    let mut pred_tgt = eps_guided_ip2p_tgt(worlds, &x_t_tgt, t, sched, gw, tether);
    if let Some(cfg) = freeu {
        pred_tgt = freeu_filter(&pred_tgt, cfg);
    }
    let pred_src = eps_guided_ip2p_src(worlds, &x_t_src, t, sched, gw.omega_i, tether);
    Ok((pred_tgt, pred_src))
}

/// Evaluation route for the stochastic-latent gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdsMode {
    /// Difference of latents `z_t = (x_{t−1} − μ_θ(x_t))/σ_t`.
    Direct,
    /// `Φ(t)·(x0_tgt − x0_src) + Ψ(t)·(ε_θ^ω(tgt) − ε_θ^ω(src))`.
    Decomposed,
}

/// Stochastic-latent matching gradient. `eps` perturbs both branches at `t`,
/// `eps_prev` at `t−1`; both are shared across branches, which is what makes
/// the two modes agree.
#[allow(clippy::too_many_arguments)]
pub fn grad_pds(
    x0_tgt: &ImageTensor,
    x0_src: &ImageTensor,
    t: usize,
    eps: &ImageTensor,
    eps_prev: &ImageTensor,
    sched: &NoiseSchedule,
    worlds: &WorldBundle,
    tether: &ImageTether,
    gw: &GuidanceWeights,
    mode: PdsMode,
) -> Result<DistillGrad> {
    if t < 2 {
        return Err(Error::TimestepRange { t, lo: 2, hi: sched.t_max() });
    }
    let (pred_tgt, pred_src) =
        branch_predictions(x0_tgt, x0_src, t, eps, sched, worlds, tether, gw, None)?;
    let (phi, psi) = pds_phi_psi(sched, t, t - 1);
    let identity_term = x0_tgt.sub(x0_src);
    let dds_term = pred_tgt.sub(&pred_src);

    let grad_x0 = match mode {
        PdsMode::Decomposed => ImageTensor::lin_comb(phi, &identity_term, psi, &dds_term),
        PdsMode::Direct => {
            // Literal latent: x̂_{0|t} by Tweedie, then the posterior mean as
            // its defining mixture of x̂ and x_t. No affine-form shortcut, so
            // agreement with the decomposed route is a real cross-check.
            let sigma = sched.posterior_sigma(t);
            let ab_t = sched.alpha_bar(t);
            let ab_p = sched.alpha_bar(t - 1);
            let beta = sched.beta(t);
            let alpha = sched.alpha(t);
            let latent = |x0: &ImageTensor, pred: &ImageTensor| -> Result<ImageTensor> {
                let x_prev = perturb(x0, t - 1, eps_prev, sched)?;
                let x_t = perturb(x0, t, eps, sched)?;
                let x0_hat = ImageTensor::lin_comb(
                    1.0 / ab_t.sqrt(),
                    &x_t,
                    -(1.0 - ab_t).sqrt() / ab_t.sqrt(),
                    pred,
                );
                let mu = ImageTensor::lin_comb(
                    ab_p.sqrt() * beta / (1.0 - ab_t),
                    &x0_hat,
                    alpha.sqrt() * (1.0 - ab_p) / (1.0 - ab_t),
                    &x_t,
                );
                Ok(x_prev.sub(&mu).scale(1.0 / sigma))
            };
            let z_tgt = latent(x0_tgt, &pred_tgt)?;
            let z_src = latent(x0_src, &pred_src)?;
            z_tgt.sub(&z_src)
        }
    };
    Ok(DistillGrad {
        grad_x0,
        parts: Some(GradParts { phi, psi, identity_term, dds_term }),
    })
}

/// Reweighted editing gradient
/// `Φ(t)·∇R_iden + Ψ(t)·∇L_DDS` with `∇R_iden = 2(x0_tgt − x0_src)`.
///
/// The factor 2 comes from differentiating the squared norm; the weighting
/// multiplies the true gradient. `freeu` filters the target-branch prediction
/// before the DDS difference is formed (both-branch filtering is a caller
/// choice made by pre-filtering, not supported here).
#[allow(clippy::too_many_arguments)]
pub fn grad_dreamcatalyst(
    x0_tgt: &ImageTensor,
    x0_src: &ImageTensor,
    t: usize,
    eps: &ImageTensor,
    sched: &NoiseSchedule,
    worlds: &WorldBundle,
    tether: &ImageTether,
    gw: &GuidanceWeights,
    ws: &WeightingSchedule,
    freeu: Option<&FreeUConfig>,
) -> Result<DistillGrad> {
    let (pred_tgt, pred_src) =
        branch_predictions(x0_tgt, x0_src, t, eps, sched, worlds, tether, gw, freeu)?;
    let (phi, psi) = phi_psi(ws, t, sched)?;
    let identity_term = x0_tgt.sub(x0_src).scale(2.0);
    let dds_term = pred_tgt.sub(&pred_src);
    Ok(DistillGrad {
        grad_x0: ImageTensor::lin_comb(phi, &identity_term, psi, &dds_term),
        parts: Some(GradParts { phi, psi, identity_term, dds_term }),
    })
}
