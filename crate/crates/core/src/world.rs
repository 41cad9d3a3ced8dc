//! Toy scenes: Gaussian-mixture image distributions with exact scores.
//!
//! A [`MixtureWorld`] plays the role of a pretrained conditional diffusion
//! prior — one mixture per text prompt, with the null prompt mapped to the
//! union mixture of all classes. Image conditioning is an explicit Gaussian
//! tether surrogate: conditioning on an image `x̃` with width `λ` multiplies
//! the density by `N(x̃; x, λ²I)`, which keeps every branch in closed form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// One isotropic Gaussian component in pixel space.
#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: ImageTensor,
    pub var: f64,
}

/// Weighted mixture of isotropic Gaussians over images.
#[derive(Debug, Clone)]
pub struct MixtureWorld {
    label: String,
    components: Vec<MixtureComponent>,
}

impl MixtureWorld {
    pub fn new(label: impl Into<String>, components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Mixture("empty component list".into()));
        }
        let shape = components[0].mean.shape();
        let mut sum = 0.0;
        for c in &components {
            if c.weight <= 0.0 {
                return Err(Error::Mixture(format!("non-positive weight {}", c.weight)));
            }
            if c.var <= 0.0 {
                return Err(Error::Mixture(format!("non-positive variance {}", c.var)));
            }
            if c.mean.shape() != shape {
                return Err(Error::Mixture("component means differ in shape".into()));
            }
            sum += c.weight;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Mixture(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { label: label.into(), components })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.components[0].mean.shape()
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// Union of two worlds with equal class mass, used as the null prompt.
    pub fn union(a: &Self, b: &Self, label: impl Into<String>) -> Result<Self> {
        let mut components = Vec::with_capacity(a.components.len() + b.components.len());
        for c in &a.components {
            components.push(MixtureComponent { weight: 0.5 * c.weight, ..c.clone() });
        }
        for c in &b.components {
            components.push(MixtureComponent { weight: 0.5 * c.weight, ..c.clone() });
        }
        Self::new(label, components)
    }

    /// Log-density of the clean-data distribution at `x`.
    pub fn log_density(&self, x: &ImageTensor) -> f64 {
        self.log_density_at(x, 1.0)
    }

    /// Log-density of the time-`t` marginal, `ᾱ_t` supplied by the caller.
    /// Each component `(w, μ, v)` diffuses to `N(√ᾱ·μ, (ᾱ·v + 1−ᾱ)I)`.
    pub fn log_density_at(&self, x: &ImageTensor, alpha_bar: f64) -> f64 {
        let d = self.dim() as f64;
        let sab = alpha_bar.sqrt();
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let s = alpha_bar * c.var + (1.0 - alpha_bar);
                let sq: f64 = x
                    .data()
                    .iter()
                    .zip(c.mean.data())
                    .map(|(&xi, &mi)| {
                        let r = xi - sab * mi;
                        r * r
                    })
                    .sum();
                c.weight.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * s).ln() - sq / (2.0 * s)
            })
            .collect();
        log_sum_exp(&logs)
    }
}

pub(crate) fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + logs.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

/// Image-conditioning tether: observed image `x̃` with width `λ`.
#[derive(Debug, Clone)]
pub struct ImageTether {
    pub tether: ImageTensor,
    pub lambda: f64,
}

impl ImageTether {
    pub fn new(tether: ImageTensor, lambda: f64) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(Error::Parameter(format!("tether lambda must be positive, got {lambda}")));
        }
        Ok(Self { tether, lambda })
    }
}

/// A text prompt with an optional image condition, resolved against a world.
#[derive(Debug, Clone, Copy)]
pub struct ConditionSet<'a> {
    pub text: &'a MixtureWorld,
    pub image: Option<&'a ImageTether>,
}

impl<'a> ConditionSet<'a> {
    pub fn text_only(text: &'a MixtureWorld) -> Self {
        Self { text, image: None }
    }

    pub fn with_image(text: &'a MixtureWorld, image: &'a ImageTether) -> Self {
        Self { text, image: Some(image) }
    }
}

/// Product-density mixture for image conditioning.
///
/// Component `(w, μ, v)` becomes weight `∝ w·N(x̃; μ, (v+λ²)I)`, mean
/// `(λ²μ + v·x̃)/(v+λ²)`, variance `v·λ²/(v+λ²)`; weights renormalized.
/// Without an image condition the world is returned unchanged.
pub fn conditioned_mixture(world: &MixtureWorld, image: Option<&ImageTether>) -> MixtureWorld {
    let Some(cond) = image else {
        return world.clone();
    };
    let d = world.dim() as f64;
    let l2 = cond.lambda * cond.lambda;
    let log_w: Vec<f64> = world
        .components
        .iter()
        .map(|c| {
            let s = c.var + l2;
            let sq: f64 = cond
                .tether
                .data()
                .iter()
                .zip(c.mean.data())
                .map(|(&ti, &mi)| (ti - mi) * (ti - mi))
                .sum();
            c.weight.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * s).ln() - sq / (2.0 * s)
        })
        .collect();
    let norm = log_sum_exp(&log_w);
    let components = world
        .components
        .iter()
        .zip(&log_w)
        .map(|(c, &lw)| {
            let s = c.var + l2;
            MixtureComponent {
                weight: (lw - norm).exp(),
                mean: ImageTensor::lin_comb(l2 / s, &c.mean, c.var / s, &cond.tether),
                var: c.var * l2 / s,
            }
        })
        .collect();
    MixtureWorld { label: format!("{}|image", world.label), components }
}

/// The three prompts every scene resolves: source class, target class, null.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prompt {
    Src,
    Tgt,
    Null,
}

/// Source, target and null-prompt worlds over a common image shape.
#[derive(Debug, Clone)]
pub struct WorldBundle {
    pub src: MixtureWorld,
    pub tgt: MixtureWorld,
    pub null: MixtureWorld,
}

impl WorldBundle {
    pub fn new(src: MixtureWorld, tgt: MixtureWorld) -> Result<Self> {
        let null = MixtureWorld::union(&src, &tgt, "null")?;
        Ok(Self { src, tgt, null })
    }

    pub fn world(&self, prompt: Prompt) -> &MixtureWorld {
        match prompt {
            Prompt::Src => &self.src,
            Prompt::Tgt => &self.tgt,
            Prompt::Null => &self.null,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.src.shape()
    }
}

/// Image geometry for the built-in scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneSize {
    /// 16×16 single channel (default).
    Small,
    /// 32×32 RGB.
    Rgb32,
}

impl SceneSize {
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            SceneSize::Small => (16, 16, 1),
            SceneSize::Rgb32 => (32, 32, 3),
        }
    }
}

/// A ready-to-edit fixture: worlds, a sampled source image, and the mask of
/// the background region shared by source and target mixtures.
#[derive(Debug, Clone)]
pub struct Scene {
    pub name: String,
    pub worlds: WorldBundle,
    pub x0_src: ImageTensor,
    pub background: Vec<bool>,
    /// Display range for pixmap export.
    pub data_range: (f64, f64),
}

/// Names of the built-in scenes.
pub const SCENE_NAMES: [&str; 3] = ["two-blobs", "ring-to-cross", "checker-bg"];

/// Build a named scene. The source image is drawn from the source mixture
/// with a per-scene fixed seed, so repeated calls are bit-identical.
pub fn make_scene(name: &str, size: SceneSize) -> Result<Scene> {
    let (h, w, c) = size.dims();
    match name {
        "two-blobs" => {
            let stripe_top = 3 * h / 4;
            let base = canvas_with_stripes(h, w, c, stripe_top);
            let background = mask_rows(h, w, stripe_top..h);
            let src = blob_class("src_class", &base, &background, (4 * h / 16, 5 * w / 16))?;
            let tgt = blob_class("tgt_class", &base, &background, (8 * h / 16, 10 * w / 16))?;
            finish_scene("two-blobs", src, tgt, background, 0x2b_10b5)
        }
        "ring-to-cross" => {
            let base = canvas_with_corners(h, w, c);
            let background = mask_corners(h, w);
            let cy = h as f64 / 2.0 - 0.5;
            let cx = w as f64 / 2.0 - 0.5;
            let radius = h as f64 * 0.28;
            let ring = |y: usize, x: usize| {
                let r = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                (-(r - radius).powi(2) / 1.2).exp()
            };
            let bar = h.max(2) / 8;
            let cross = |y: usize, x: usize| {
                let on = (y as isize - cy as isize).unsigned_abs() <= bar
                    || (x as isize - cx as isize).unsigned_abs() <= bar;
                if on { 1.0 } else { 0.0 }
            };
            let src = shape_class("src_class", &base, &background, &ring)?;
            let tgt = shape_class("tgt_class", &base, &background, &cross)?;
            finish_scene("ring-to-cross", src, tgt, background, 0x41_c055)
        }
        "checker-bg" => {
            let half = h / 2;
            let base = canvas_with_checker(h, w, c, half);
            let background = mask_rows(h, w, half..h);
            let src = blob_class("src_class", &base, &background, (h / 4, w / 4))?;
            let tgt = blob_class("tgt_class", &base, &background, (h / 4, 3 * w / 4))?;
            finish_scene("checker-bg", src, tgt, background, 0xc4_ec8e)
        }
        other => Err(Error::UnknownScene(other.to_string())),
    }
}

const CLASS_VAR: f64 = 0.02;

fn finish_scene(
    name: &str,
    src: MixtureWorld,
    tgt: MixtureWorld,
    background: Vec<bool>,
    seed: u64,
) -> Result<Scene> {
    let x0_src = sample_from(&src, seed);
    let worlds = WorldBundle::new(src, tgt)?;
    Ok(Scene {
        name: name.to_string(),
        worlds,
        x0_src,
        background,
        data_range: (-0.3, 1.5),
    })
}

fn sample_from(world: &MixtureWorld, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Component choice by cumulative weight, then mean + √v·noise.
    let u: f64 = rand::Rng::random_range(&mut rng, 0.0..1.0);
    let mut acc = 0.0;
    let mut chosen = &world.components[0];
    for comp in &world.components {
        acc += comp.weight;
        if u <= acc {
            chosen = comp;
            break;
        }
    }
    let sd = chosen.var.sqrt();
    let (h, w, c) = chosen.mean.shape();
    let noise = ImageTensor::from_fn(h, w, c, |_, _, _| StandardNormal.sample(&mut rng));
    ImageTensor::lin_comb(1.0, &chosen.mean, sd, &noise)
}

fn canvas_with_stripes(h: usize, w: usize, c: usize, stripe_top: usize) -> ImageTensor {
    // Smooth vertical shading plus period-4 stripes: structured but
    // low-frequency, so a low-pass generator basis can represent the
    // background and coarse spectral bands couple to it.
    ImageTensor::from_fn(h, w, c, |y, _, _| {
        let shade = 0.1 + 0.25 * y as f64 / (h - 1) as f64;
        if y >= stripe_top {
            shade + if (y - stripe_top) % 4 < 2 { 0.3 } else { -0.1 }
        } else {
            shade
        }
    })
}

fn canvas_with_corners(h: usize, w: usize, c: usize) -> ImageTensor {
    ImageTensor::from_fn(h, w, c, |y, x, _| {
        let m = h / 8 + 1;
        let corner = (y < m || y >= h - m) && (x < m || x >= w - m);
        if corner { 0.7 } else { 0.1 }
    })
}

fn canvas_with_checker(h: usize, w: usize, c: usize, top: usize) -> ImageTensor {
    ImageTensor::from_fn(h, w, c, |y, x, _| {
        if y >= top {
            if (y / 2 + x / 2) % 2 == 0 { 0.65 } else { 0.35 }
        } else {
            0.1
        }
    })
}

fn gaussian_bump(h: usize, w: usize, c: usize, center: (usize, usize), amp: f64) -> ImageTensor {
    let sigma = h as f64 / 9.0;
    ImageTensor::from_fn(h, w, c, |y, x, ch| {
        let dy = y as f64 - center.0 as f64;
        let dx = x as f64 - center.1 as f64;
        // Channel tints keep RGB scenes non-degenerate.
        let tint = match ch {
            0 => 1.0,
            1 => 0.75,
            _ => 0.5,
        };
        amp * tint * (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
    })
}

/// Two-component class: the same structure at slightly different amplitude.
/// Class content is zeroed on the background mask so the background is
/// exactly shared between source and target mixtures.
fn blob_class(
    label: &str,
    base: &ImageTensor,
    background: &[bool],
    center: (usize, usize),
) -> Result<MixtureWorld> {
    let (h, w, c) = base.shape();
    let bump = gaussian_bump(h, w, c, center, 1.0);
    shape_class(label, base, background, &|y, x| bump.get(y, x, 0))
}

fn shape_class(
    label: &str,
    base: &ImageTensor,
    background: &[bool],
    shape: &dyn Fn(usize, usize) -> f64,
) -> Result<MixtureWorld> {
    let (h, w, c) = base.shape();
    let comps = [0.9, 1.1]
        .iter()
        .map(|&amp| MixtureComponent {
            weight: 0.5,
            mean: ImageTensor::from_fn(h, w, c, |y, x, ch| {
                let tint = match ch {
                    0 => 1.0,
                    1 => 0.75,
                    _ => 0.5,
                };
                let on = if background[y * w + x] { 0.0 } else { shape(y, x) };
                base.get(y, x, ch) + amp * tint * on
            }),
            var: CLASS_VAR,
        })
        .collect();
    MixtureWorld::new(label, comps)
}

fn mask_rows(h: usize, w: usize, rows: std::ops::Range<usize>) -> Vec<bool> {
    let mut mask = vec![false; h * w];
    for y in rows {
        for x in 0..w {
            mask[y * w + x] = true;
        }
    }
    mask
}

fn mask_corners(h: usize, w: usize) -> Vec<bool> {
    let m = h / 8 + 1;
    let mut mask = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if (y < m || y >= h - m) && (x < m || x >= w - m) {
                mask[y * w + x] = true;
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_world(mean_val: f64, var: f64) -> MixtureWorld {
        MixtureWorld::new(
            "w",
            vec![MixtureComponent {
                weight: 1.0,
                mean: ImageTensor::full(2, 2, 1, mean_val),
                var,
            }],
        )
        .unwrap()
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mean = ImageTensor::zeros(2, 2, 1);
        let bad = MixtureWorld::new(
            "w",
            vec![
                MixtureComponent { weight: 0.5, mean: mean.clone(), var: 1.0 },
                MixtureComponent { weight: 0.6, mean, var: 1.0 },
            ],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn conditioning_hand_case() {
        // Single component (w=1, μ, v=1), x̃ = μ+2, λ=1 → mean μ+1, var 1/2.
        let world = unit_world(0.0, 1.0);
        let tether = ImageTether::new(ImageTensor::full(2, 2, 1, 2.0), 1.0).unwrap();
        let out = conditioned_mixture(&world, Some(&tether));
        assert_eq!(out.components().len(), 1);
        let comp = &out.components()[0];
        assert_relative_eq!(comp.weight, 1.0, max_relative = 1e-14);
        assert_relative_eq!(comp.var, 0.5, max_relative = 1e-14);
        for &m in comp.mean.data() {
            assert_relative_eq!(m, 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn vanishing_tether_is_identity() {
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let world = &scene.worlds.src;
        let tether = ImageTether::new(scene.x0_src.clone(), 1e6).unwrap();
        let out = conditioned_mixture(world, Some(&tether));
        for (a, b) in out.components().iter().zip(world.components()) {
            assert!(a.mean.max_abs_diff(&b.mean) < 1e-9);
            assert!((a.var - b.var).abs() < 1e-9);
        }
    }

    #[test]
    fn dominating_tether_moves_means_to_image() {
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let tether = ImageTether::new(scene.x0_src.clone(), 1e-6).unwrap();
        let out = conditioned_mixture(&scene.worlds.tgt, Some(&tether));
        for comp in out.components() {
            assert!(comp.mean.max_abs_diff(&scene.x0_src) < 1e-9);
        }
    }

    #[test]
    fn conditioning_preserves_count_and_mass() {
        let scene = make_scene("ring-to-cross", SceneSize::Small).unwrap();
        let tether = ImageTether::new(scene.x0_src.clone(), 0.5).unwrap();
        let out = conditioned_mixture(&scene.worlds.null, Some(&tether));
        assert_eq!(out.components().len(), scene.worlds.null.components().len());
        let total: f64 = out.components().iter().map(|c| c.weight).sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn product_density_matches_quadrature_on_slice() {
        // The conditioned mixture restricted to a 1D slice must be, up to a
        // constant, the prior density times the tether likelihood. Both are
        // normalized over the slice by trapezoid quadrature and compared.
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let world = &scene.worlds.src;
        let lambda = 0.7;
        let tether = ImageTether::new(scene.x0_src.clone(), lambda).unwrap();
        let cond = conditioned_mixture(world, Some(&tether));

        let d = world.dim();
        let base = scene.x0_src.clone();
        let coord = d / 2;
        let n = 241;
        let span = 3.0;
        let mut raw = Vec::with_capacity(n);
        let mut ana = Vec::with_capacity(n);
        for i in 0..n {
            let s = -span + 2.0 * span * i as f64 / (n - 1) as f64;
            let mut x = base.clone();
            x.data_mut()[coord] += s;
            // log prior + log tether likelihood (x̃ fixed, x varies)
            let sq: f64 = x
                .data()
                .iter()
                .zip(tether.tether.data())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            let log_like = -sq / (2.0 * lambda * lambda);
            raw.push(world.log_density(&x) + log_like);
            ana.push(cond.log_density(&x));
        }
        // Normalize both over the slice, then compare pointwise.
        let norm = |logs: &[f64]| {
            let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logs.iter().map(|&l| (l - m).exp()).collect();
            let mut total = 0.0;
            for i in 1..weights.len() {
                total += 0.5 * (weights[i] + weights[i - 1]);
            }
            weights.into_iter().map(|v| v / total).collect::<Vec<_>>()
        };
        let raw_n = norm(&raw);
        let ana_n = norm(&ana);
        for (a, b) in raw_n.iter().zip(&ana_n) {
            assert!((a - b).abs() < 1e-9, "quadrature mismatch: {a} vs {b}");
        }
    }

    #[test]
    fn scenes_are_deterministic_and_supported() {
        for name in SCENE_NAMES {
            let a = make_scene(name, SceneSize::Small).unwrap();
            let b = make_scene(name, SceneSize::Small).unwrap();
            assert_eq!(a.x0_src, b.x0_src, "{name}");
            assert!(a.worlds.src.log_density(&a.x0_src).is_finite(), "{name}");
            assert!(a.background.iter().any(|&m| m), "{name}");
        }
        assert!(make_scene("no-such-scene", SceneSize::Small).is_err());
    }

    #[test]
    fn background_identical_across_classes() {
        let scene = make_scene("two-blobs", SceneSize::Small).unwrap();
        let (_, w, _) = scene.worlds.shape();
        let src_mean = &scene.worlds.src.components()[0].mean;
        let tgt_mean = &scene.worlds.tgt.components()[0].mean;
        for (i, &bg) in scene.background.iter().enumerate() {
            if bg {
                let (y, x) = (i / w, i % w);
                assert!((src_mean.get(y, x, 0) - tgt_mean.get(y, x, 0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rgb_scene_builds() {
        let scene = make_scene("two-blobs", SceneSize::Rgb32).unwrap();
        assert_eq!(scene.worlds.shape(), (32, 32, 3));
        assert_eq!(scene.background.len(), 32 * 32);
    }
}
