//! Differentiable toy generators, linear camera observations, and the
//! optimization loop that applies distillation gradients through the
//! generator Jacobian.
//!
//! Two parameterizations are provided. `PixelGrid` is the identity map (one
//! parameter per pixel). `LinearBasis` synthesizes the image from `K`
//! orthonormal low-frequency cosine modes, so parameters underdetermine
//! pixels and the generator regularizes the way an implicit representation
//! does. Both expose exact Jacobian-transpose products, so the chain through
//! a camera observation is exact as well.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::denoiser::{FreeUConfig, GuidanceWeights};
use crate::distill::{
    grad_dds, grad_dreamcatalyst, grad_pds, grad_sds, PdsMode, WeightingSchedule,
};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::schedule::{sample_timesteps, NoiseSchedule, TimestepPlan};
use crate::world::{ImageTether, MixtureComponent, MixtureWorld, Prompt, Scene, WorldBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    PixelGrid,
    LinearBasis,
}

/// Parameterized image source `ψ ↦ x0`.
#[derive(Debug, Clone)]
pub struct Generator {
    kind: GeneratorKind,
    height: usize,
    width: usize,
    channels: usize,
    psi: Vec<f64>,
    /// `K × (H·W·C)` synthesis rows, orthonormal; empty for `PixelGrid`.
    basis: Vec<f64>,
    n_modes: usize,
}

impl Generator {
    pub fn pixel_grid(height: usize, width: usize, channels: usize) -> Self {
        let n = height * width * channels;
        Self {
            kind: GeneratorKind::PixelGrid,
            height,
            width,
            channels,
            psi: vec![0.0; n],
            basis: Vec::new(),
            n_modes: n,
        }
    }

    /// Orthonormal 2D cosine modes, lowest spatial frequencies first.
    pub fn linear_basis(height: usize, width: usize, channels: usize, k: usize) -> Result<Self> {
        let dim = height * width * channels;
        if k == 0 || k > dim {
            return Err(Error::Generator(format!("basis size {k} out of range 1..={dim}")));
        }
        let mut keys: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(dim);
        for p in 0..height {
            for q in 0..width {
                for c in 0..channels {
                    keys.push((p + q, p, q, c));
                }
            }
        }
        keys.sort_unstable();
        keys.truncate(k);

        let mut basis = Vec::with_capacity(k * dim);
        for &(_, p, q, c) in &keys {
            let np = if p == 0 { (1.0 / height as f64).sqrt() } else { (2.0 / height as f64).sqrt() };
            let nq = if q == 0 { (1.0 / width as f64).sqrt() } else { (2.0 / width as f64).sqrt() };
            for y in 0..height {
                let gy = np * (std::f64::consts::PI * (2 * y + 1) as f64 * p as f64
                    / (2.0 * height as f64))
                    .cos();
                for x in 0..width {
                    let gx = nq * (std::f64::consts::PI * (2 * x + 1) as f64 * q as f64
                        / (2.0 * width as f64))
                        .cos();
                    for ch in 0..channels {
                        basis.push(if ch == c { gy * gx } else { 0.0 });
                    }
                }
            }
        }
        Ok(Self {
            kind: GeneratorKind::LinearBasis,
            height,
            width,
            channels,
            psi: vec![0.0; k],
            basis,
            n_modes: k,
        })
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn param_len(&self) -> usize {
        self.n_modes
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn psi_mut(&mut self) -> &mut [f64] {
        &mut self.psi
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Set parameters to the best representation of `img` (projection for
    /// the basis generator, copy for the pixel grid).
    pub fn fit_to(&mut self, img: &ImageTensor) -> Result<()> {
        let expected = (self.height, self.width, self.channels);
        if img.shape() != expected {
            return Err(Error::ShapeMismatch { expected, got: img.shape() });
        }
        match self.kind {
            GeneratorKind::PixelGrid => self.psi.copy_from_slice(img.data()),
            GeneratorKind::LinearBasis => {
                let dim = img.len();
                for k in 0..self.n_modes {
                    let row = &self.basis[k * dim..(k + 1) * dim];
                    self.psi[k] = row.iter().zip(img.data()).map(|(b, v)| b * v).sum();
                }
            }
        }
        Ok(())
    }

    /// Render the full image, then apply the camera if one is given.
    pub fn render(&self, cam: Option<&CameraOp>) -> ImageTensor {
        let full = match self.kind {
            GeneratorKind::PixelGrid => ImageTensor::new(
                self.height,
                self.width,
                self.channels,
                self.psi.clone(),
            )
            .expect("pixel grid shape is consistent"),
            GeneratorKind::LinearBasis => {
                let dim = self.height * self.width * self.channels;
                let mut data = vec![0.0; dim];
                for (k, &coef) in self.psi.iter().enumerate() {
                    let row = &self.basis[k * dim..(k + 1) * dim];
                    for (d, b) in data.iter_mut().zip(row) {
                        *d += coef * b;
                    }
                }
                ImageTensor::new(self.height, self.width, self.channels, data)
                    .expect("basis synthesis shape is consistent")
            }
        };
        match cam {
            Some(cam) => cam.observe(&full),
            None => full,
        }
    }

    /// Exact Jacobian-transpose application: camera adjoint first, then the
    /// generator adjoint (identity or basis projection).
    pub fn pullback(&self, cam: Option<&CameraOp>, grad_x0: &ImageTensor) -> Vec<f64> {
        let full_grad = match cam {
            Some(cam) => cam.adjoint(grad_x0, self.height, self.width),
            None => grad_x0.clone(),
        };
        match self.kind {
            GeneratorKind::PixelGrid => full_grad.data().to_vec(),
            GeneratorKind::LinearBasis => {
                let dim = full_grad.len();
                (0..self.n_modes)
                    .map(|k| {
                        let row = &self.basis[k * dim..(k + 1) * dim];
                        row.iter().zip(full_grad.data()).map(|(b, g)| b * g).sum()
                    })
                    .collect()
            }
        }
    }
}

/// Linear observation: crop window plus optional block-mean downsampling.
/// Every row of the induced matrix has norm at most 1, and the pushforward
/// of an isotropic mixture stays isotropic (disjoint pixel blocks).
#[derive(Debug, Clone)]
pub struct CameraOp {
    pub id: String,
    pub y0: usize,
    pub x0: usize,
    pub crop_h: usize,
    pub crop_w: usize,
    pub downsample: usize,
}

impl CameraOp {
    pub fn new(
        id: impl Into<String>,
        y0: usize,
        x0: usize,
        crop_h: usize,
        crop_w: usize,
        downsample: usize,
    ) -> Result<Self> {
        if crop_h == 0 || crop_w == 0 || downsample == 0 {
            return Err(Error::Generator("camera window must be non-empty".into()));
        }
        if !crop_h.is_multiple_of(downsample) || !crop_w.is_multiple_of(downsample) {
            return Err(Error::Generator(format!(
                "downsample {downsample} must divide the window {crop_h}x{crop_w}"
            )));
        }
        Ok(Self { id: id.into(), y0, x0, crop_h, crop_w, downsample })
    }

    /// Full-frame identity view.
    pub fn full(height: usize, width: usize) -> Self {
        Self { id: "full".into(), y0: 0, x0: 0, crop_h: height, crop_w: width, downsample: 1 }
    }

    /// Four overlapping 3/4-size crops, the default multi-view rig.
    pub fn default_rig(height: usize, width: usize) -> Vec<CameraOp> {
        let ch = 3 * height / 4;
        let cw = 3 * width / 4;
        let dy = height - ch;
        let dx = width - cw;
        [(0, 0), (0, dx), (dy, 0), (dy, dx)]
            .iter()
            .enumerate()
            .map(|(i, &(y0, x0))| CameraOp {
                id: format!("crop{i}"),
                y0,
                x0,
                crop_h: ch,
                crop_w: cw,
                downsample: 1,
            })
            .collect()
    }

    pub fn out_dims(&self, channels: usize) -> (usize, usize, usize) {
        (self.crop_h / self.downsample, self.crop_w / self.downsample, channels)
    }

    pub fn observe(&self, img: &ImageTensor) -> ImageTensor {
        let (h, w, c) = img.shape();
        assert!(self.y0 + self.crop_h <= h && self.x0 + self.crop_w <= w, "window out of bounds");
        let d = self.downsample;
        let inv = 1.0 / (d * d) as f64;
        let (oh, ow, _) = self.out_dims(c);
        ImageTensor::from_fn(oh, ow, c, |yy, xx, ch| {
            let mut acc = 0.0;
            for i in 0..d {
                for j in 0..d {
                    acc += img.get(self.y0 + yy * d + i, self.x0 + xx * d + j, ch);
                }
            }
            acc * inv
        })
    }

    /// Transpose of [`observe`](Self::observe) as a map back to full frames.
    pub fn adjoint(&self, grad_obs: &ImageTensor, full_h: usize, full_w: usize) -> ImageTensor {
        let (oh, ow, c) = grad_obs.shape();
        let d = self.downsample;
        let inv = 1.0 / (d * d) as f64;
        let mut out = ImageTensor::zeros(full_h, full_w, c);
        for yy in 0..oh {
            for xx in 0..ow {
                for ch in 0..c {
                    let g = grad_obs.get(yy, xx, ch) * inv;
                    for i in 0..d {
                        for j in 0..d {
                            let y = self.y0 + yy * d + i;
                            let x = self.x0 + xx * d + j;
                            out.set(y, x, ch, out.get(y, x, ch) + g);
                        }
                    }
                }
            }
        }
        out
    }

    /// Pushforward of an isotropic mixture through the observation: means
    /// observed, variance scaled by the block size, weights untouched.
    pub fn observe_world(&self, world: &MixtureWorld) -> MixtureWorld {
        let d2 = (self.downsample * self.downsample) as f64;
        let comps = world
            .components()
            .iter()
            .map(|c| MixtureComponent {
                weight: c.weight,
                mean: self.observe(&c.mean),
                var: c.var / d2,
            })
            .collect();
        MixtureWorld::new(format!("{}@{}", world.label(), self.id), comps)
            .expect("pushforward preserves mixture validity")
    }

    pub fn observe_bundle(&self, bundle: &WorldBundle) -> WorldBundle {
        WorldBundle {
            src: self.observe_world(&bundle.src),
            tgt: self.observe_world(&bundle.tgt),
            null: self.observe_world(&bundle.null),
        }
    }
}

/// Adam with linear warmup and per-step exponential decay:
/// `lr(step) = base_rate·min(1, step/warmup_steps)·decay_rate^step`.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    pub base_rate: f64,
    pub warmup_steps: usize,
    pub decay_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(n_params: usize, base_rate: f64, warmup_steps: usize, decay_rate: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            base_rate,
            warmup_steps,
            decay_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            (step as f64 / self.warmup_steps as f64).min(1.0)
        };
        self.base_rate * warm * self.decay_rate.powi(step as i32)
    }

    pub fn update(&mut self, psi: &mut [f64], grad: &[f64]) {
        assert_eq!(psi.len(), self.m.len(), "optimizer sized for a different parameter count");
        assert_eq!(psi.len(), grad.len());
        self.step += 1;
        let lr = self.learning_rate_at(self.step);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..psi.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            psi[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Which distillation gradient drives the edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditMethod {
    Sds,
    Dds,
    Pds,
    DreamCatalyst,
}

/// Everything an edit run needs besides the generator and scene.
#[derive(Debug, Clone)]
pub struct EditOptions {
    pub method: EditMethod,
    pub ws: WeightingSchedule,
    pub gw: GuidanceWeights,
    pub freeu: Option<FreeUConfig>,
    /// Image-tether width for the source condition.
    pub lambda: f64,
    pub plan: TimestepPlan,
    pub pds_mode: PdsMode,
}

/// Per-iteration trace entry.
#[derive(Debug, Clone, Copy)]
pub struct IterRecord {
    pub iter: usize,
    pub t: usize,
    pub grad_norm: f64,
    /// `‖render − x0_src‖` over the scene's background mask.
    pub d_id: f64,
    /// Negative log-likelihood of the render under the target mixture.
    pub d_edit: f64,
}

/// `‖a − b‖` restricted to masked pixels (all channels of each pixel).
pub fn masked_distance(a: &ImageTensor, b: &ImageTensor, mask: &[bool]) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let (_, w, c) = a.shape();
    let mut acc = 0.0;
    for (i, &keep) in mask.iter().enumerate() {
        if keep {
            let (y, x) = (i / w, i % w);
            for ch in 0..c {
                let r = a.get(y, x, ch) - b.get(y, x, ch);
                acc += r * r;
            }
        }
    }
    acc.sqrt()
}

/// Run the distillation edit. Each iteration samples one timestep from the
/// plan, evaluates the method's gradient for every camera with shared noise
/// draws per camera, averages the pulled-back gradients in a fixed order,
/// and applies one Adam update. The observer sees the full render after
/// each update.
#[allow(clippy::too_many_arguments)]
pub fn edit_loop(
    mut gen: Generator,
    scene: &Scene,
    cameras: &[CameraOp],
    opts: &EditOptions,
    sched: &NoiseSchedule,
    mut opt: OptimizerState,
    seed: u64,
    mut observer: impl FnMut(usize, &ImageTensor),
) -> Result<(Generator, Vec<IterRecord>)> {
    let full_cam;
    let cams: &[CameraOp] = if cameras.is_empty() {
        let (h, w, _) = scene.worlds.shape();
        full_cam = [CameraOp::full(h, w)];
        &full_cam
    } else {
        cameras
    };

    struct View {
        cam: CameraOp,
        worlds: WorldBundle,
        x0_src: ImageTensor,
        tether: ImageTether,
    }
    let views: Vec<View> = cams
        .iter()
        .map(|cam| {
            let x0_src = cam.observe(&scene.x0_src);
            Ok(View {
                cam: cam.clone(),
                worlds: cam.observe_bundle(&scene.worlds),
                x0_src: x0_src.clone(),
                tether: ImageTether::new(x0_src, opts.lambda)?,
            })
        })
        .collect::<Result<_>>()?;

    let timesteps = sample_timesteps(&opts.plan, sched.t_max());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(timesteps.len());

    for (iter, &t) in timesteps.iter().enumerate() {
        let mut psum = vec![0.0; gen.param_len()];
        for view in &views {
            let (oh, ow, oc) = view.cam.out_dims(scene.worlds.shape().2);
            let draw = |rng: &mut ChaCha8Rng| {
                ImageTensor::from_fn(oh, ow, oc, |_, _, _| StandardNormal.sample(rng))
            };
            let eps = draw(&mut rng);
            let x0_tgt = gen.render(Some(&view.cam));
            let grad = match opts.method {
                EditMethod::Sds => {
                    grad_sds(&x0_tgt, Prompt::Tgt, t, &eps, sched, &view.worlds, opts.gw.omega_y)?
                }
                EditMethod::Dds => grad_dds(
                    &x0_tgt, &view.x0_src, t, &eps, sched, &view.worlds, &view.tether, &opts.gw,
                )?,
                EditMethod::Pds => {
                    let eps_prev = draw(&mut rng);
                    grad_pds(
                        &x0_tgt, &view.x0_src, t, &eps, &eps_prev, sched, &view.worlds,
                        &view.tether, &opts.gw, opts.pds_mode,
                    )?
                }
                EditMethod::DreamCatalyst => grad_dreamcatalyst(
                    &x0_tgt, &view.x0_src, t, &eps, sched, &view.worlds, &view.tether, &opts.gw,
                    &opts.ws, opts.freeu.as_ref(),
                )?,
            };
            let pgrad = gen.pullback(Some(&view.cam), &grad.grad_x0);
            for (acc, g) in psum.iter_mut().zip(&pgrad) {
                *acc += g;
            }
        }
        let inv = 1.0 / views.len() as f64;
        for g in psum.iter_mut() {
            *g *= inv;
        }
        let grad_norm = psum.iter().map(|g| g * g).sum::<f64>().sqrt();
        opt.update(gen.psi_mut(), &psum);

        let render = gen.render(None);
        let d_id = masked_distance(&render, &scene.x0_src, &scene.background);
        let d_edit = -scene.worlds.tgt.log_density(&render);
        observer(iter, &render);
        records.push(IterRecord { iter, t, grad_norm, d_id, d_edit });
    }
    Ok((gen, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{ScheduleKind, TimestepKind};
    use crate::world::{make_scene, SceneSize};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sched() -> NoiseSchedule {
        NoiseSchedule::build(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap()
    }

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(h, w, c, |_, _, _| StandardNormal.sample(&mut rng))
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn pixel_grid_render_is_identity() {
        let mut gen = Generator::pixel_grid(4, 4, 1);
        let img = random_image(4, 4, 1, 1);
        gen.fit_to(&img).unwrap();
        assert_eq!(gen.render(None), img);
        // And the pullback with no camera is the identity too.
        let g = random_image(4, 4, 1, 2);
        assert_eq!(gen.pullback(None, &g), g.data().to_vec());
    }

    #[test]
    fn basis_first_mode_is_constant_image() {
        let mut gen = Generator::linear_basis(8, 8, 1, 16).unwrap();
        gen.psi_mut()[0] = 1.0;
        let img = gen.render(None);
        // Mode (p=0, q=0) is the normalized constant image.
        let expect = 1.0 / 8.0;
        for &v in img.data() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_rows_orthonormal_and_projection_round_trips() {
        let gen = Generator::linear_basis(16, 16, 1, 64).unwrap();
        let dim = 16 * 16;
        for a in 0..gen.param_len() {
            for b in a..gen.param_len() {
                let ra = &gen.basis[a * dim..(a + 1) * dim];
                let rb = &gen.basis[b * dim..(b + 1) * dim];
                let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "rows {a},{b}: {dot}");
            }
        }
        // project(render(psi)) = psi by orthonormality.
        let mut gen2 = gen.clone();
        let psi = random_vec(64, 3);
        gen2.psi_mut().copy_from_slice(&psi);
        let img = gen2.render(None);
        let mut gen3 = gen.clone();
        gen3.fit_to(&img).unwrap();
        for (a, b) in gen3.psi().iter().zip(&psi) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn pullback_is_exact_adjoint_of_render() {
        // ⟨J·u, v⟩ = ⟨u, Jᵀ·v⟩ for random probes, with and without cameras.
        let gen = Generator::linear_basis(16, 16, 1, 64).unwrap();
        let cams = [None, Some(CameraOp::new("c", 2, 3, 8, 8, 2).unwrap())];
        for (i, cam) in cams.iter().enumerate() {
            let u = random_vec(64, 10 + i as u64);
            let mut gen_u = gen.clone();
            gen_u.psi_mut().copy_from_slice(&u);
            let ju = gen_u.render(cam.as_ref());
            let v = random_image(ju.height(), ju.width(), ju.channels(), 20 + i as u64);
            let lhs = ju.dot(&v);
            let jtv = gen.pullback(cam.as_ref(), &v);
            let rhs: f64 = u.iter().zip(&jtv).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()),
                "adjoint mismatch: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn pullback_matches_finite_differences() {
        // d⟨g, render(ψ)⟩/dψ_k against central differences.
        let mut gen = Generator::linear_basis(16, 16, 1, 32).unwrap();
        let psi = random_vec(32, 30);
        gen.psi_mut().copy_from_slice(&psi);
        let g = random_image(16, 16, 1, 31);
        let analytic = gen.pullback(None, &g);
        let h = 1e-6;
        for k in (0..32).step_by(5) {
            let mut plus = gen.clone();
            plus.psi_mut()[k] += h;
            let mut minus = gen.clone();
            minus.psi_mut()[k] -= h;
            let fd = (plus.render(None).dot(&g) - minus.render(None).dot(&g)) / (2.0 * h);
            let rel = (analytic[k] - fd).abs() / fd.abs().max(1e-9);
            assert!(rel < 1e-6, "mode {k}: rel {rel}");
        }
    }

    #[test]
    fn camera_adjoint_identity() {
        let cam = CameraOp::new("c", 1, 2, 12, 8, 2).unwrap();
        let x = random_image(16, 16, 1, 40);
        let cx = cam.observe(&x);
        let y = random_image(cx.height(), cx.width(), 1, 41);
        let lhs = cx.dot(&y);
        let rhs = x.dot(&cam.adjoint(&y, 16, 16));
        assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn camera_norm_bounded_by_one() {
        let cam = CameraOp::new("c", 0, 0, 8, 8, 2).unwrap();
        for seed in 0..5 {
            let x = random_image(16, 16, 1, 50 + seed);
            let cx = cam.observe(&x);
            assert!(cx.norm() <= x.norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn camera_pushforward_matches_observed_samples() {
        // Observing the world then scoring equals scoring observed samples:
        // check mean/variance bookkeeping on a single component.
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let cam = CameraOp::new("c", 0, 0, 8, 8, 2).unwrap();
        let pushed = cam.observe_world(&scene.worlds.src);
        for (orig, obs) in scene.worlds.src.components().iter().zip(pushed.components()) {
            assert_eq!(obs.mean, cam.observe(&orig.mean));
            assert!((obs.var - orig.var / 4.0).abs() < 1e-15);
            assert!((obs.weight - orig.weight).abs() < 1e-15);
        }
    }

    #[test]
    fn warmup_then_strict_decay() {
        let opt = OptimizerState::new(4, 1e-2, 100, 0.999);
        for step in 1..100 {
            assert!(opt.learning_rate_at(step + 1) >= opt.learning_rate_at(step));
        }
        for step in 100..300 {
            assert!(opt.learning_rate_at(step + 1) < opt.learning_rate_at(step));
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let mut gen = Generator::linear_basis(16, 16, 1, 64).unwrap();
        gen.fit_to(&scene.x0_src).unwrap();
        let before = gen.psi().to_vec();
        let opts = EditOptions {
            method: EditMethod::DreamCatalyst,
            ws: WeightingSchedule::dreamcatalyst(),
            gw: GuidanceWeights::default(),
            freeu: None,
            lambda: 1.0,
            plan: TimestepPlan::new(TimestepKind::Random, 0.2, 0.9, 5, 1).unwrap(),
            pds_mode: PdsMode::Decomposed,
        };
        let opt = OptimizerState::new(gen.param_len(), 0.0, 100, 0.999);
        let (gen, _) =
            edit_loop(gen, &scene, &[], &opts, &sched(), opt, 7, |_, _| {}).unwrap();
        assert_eq!(gen.psi(), before.as_slice());
    }

    #[test]
    fn noop_edit_is_stable() {
        // Target prompt equal to the source prompt and the generator started
        // at the source image: the identity metric must not drift. A shared
        // prompt means no text push, so the text scale is zero and the two
        // branch predictions coincide at the shared latent.
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let mut noop = scene.clone();
        noop.worlds = WorldBundle::new(scene.worlds.src.clone(), scene.worlds.src.clone()).unwrap();
        let mut gen = Generator::pixel_grid(16, 16, 1);
        gen.fit_to(&scene.x0_src).unwrap();
        let opts = EditOptions {
            method: EditMethod::DreamCatalyst,
            ws: WeightingSchedule::dreamcatalyst(),
            gw: GuidanceWeights::new(0.0, 1.5).unwrap(),
            freeu: None,
            lambda: 1.0,
            plan: TimestepPlan::new(TimestepKind::Decreasing, 0.2, 0.9, 100, 1).unwrap(),
            pds_mode: PdsMode::Decomposed,
        };
        let opt = OptimizerState::new(gen.param_len(), 1e-2, 100, 0.999);
        let (_, records) =
            edit_loop(gen, &noop, &[], &opts, &sched(), opt, 11, |_, _| {}).unwrap();
        let d0 = records.first().unwrap().d_id;
        let dn = records.last().unwrap().d_id;
        assert!((dn - d0).abs() <= 1e-3, "identity drift {d0} -> {dn}");
    }

    #[test]
    fn edit_loop_reproducible_bitwise() {
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let run = || {
            let mut gen = Generator::linear_basis(16, 16, 1, 64).unwrap();
            gen.fit_to(&scene.x0_src).unwrap();
            let opts = EditOptions {
                method: EditMethod::DreamCatalyst,
                ws: WeightingSchedule::dreamcatalyst(),
                gw: GuidanceWeights::default(),
                freeu: Some(FreeUConfig::default()),
                lambda: 1.0,
                plan: TimestepPlan::new(TimestepKind::Decreasing, 0.2, 0.9, 20, 5).unwrap(),
                pds_mode: PdsMode::Decomposed,
            };
            let cams = CameraOp::default_rig(16, 16);
            let opt = OptimizerState::new(gen.param_len(), 1e-2, 25, 0.999);
            edit_loop(gen, &scene, &cams, &opts, &sched(), opt, 17, |_, _| {}).unwrap()
        };
        let (ga, ra) = run();
        let (gb, rb) = run();
        assert_eq!(ga.psi(), gb.psi());
        for (a, b) in ra.iter().zip(&rb) {
            assert_eq!(a.grad_norm.to_bits(), b.grad_norm.to_bits());
            assert_eq!(a.d_edit.to_bits(), b.d_edit.to_bits());
        }
    }

    #[test]
    fn edit_loop_moves_toward_target() {
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let mut gen = Generator::linear_basis(16, 16, 1, 64).unwrap();
        gen.fit_to(&scene.x0_src).unwrap();
        let opts = EditOptions {
            method: EditMethod::DreamCatalyst,
            ws: WeightingSchedule::dreamcatalyst(),
            gw: GuidanceWeights::default(),
            freeu: None,
            lambda: 1.0,
            plan: TimestepPlan::new(TimestepKind::Decreasing, 0.2, 0.9, 150, 3).unwrap(),
            pds_mode: PdsMode::Decomposed,
        };
        let cams = CameraOp::default_rig(16, 16);
        let opt = OptimizerState::new(gen.param_len(), 1e-2, 25, 0.999);
        let (_, records) =
            edit_loop(gen, &scene, &cams, &opts, &sched(), opt, 23, |_, _| {}).unwrap();
        let first = records.first().unwrap().d_edit;
        let last = records.last().unwrap().d_edit;
        assert!(last < first, "no edit progress: {first} -> {last}");
    }

    #[test]
    fn pds_method_runs_in_loop() {
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let mut gen = Generator::linear_basis(16, 16, 1, 64).unwrap();
        gen.fit_to(&scene.x0_src).unwrap();
        let opts = EditOptions {
            method: EditMethod::Pds,
            ws: WeightingSchedule::pds_derived(500),
            gw: GuidanceWeights::default(),
            freeu: None,
            lambda: 1.0,
            plan: TimestepPlan::new(TimestepKind::Random, 0.2, 0.9, 10, 9).unwrap(),
            pds_mode: PdsMode::Direct,
        };
        let opt = OptimizerState::new(gen.param_len(), 1e-2, 25, 0.999);
        let (_, records) = edit_loop(gen, &scene, &[], &opts, &sched(), opt, 29, |_, _| {}).unwrap();
        assert_eq!(records.len(), 10);
        assert!(records.iter().all(|r| r.grad_norm.is_finite()));
    }
}
