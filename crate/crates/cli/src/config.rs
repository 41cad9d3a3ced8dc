//! Run configuration: flat `key = value` sections, one section per module.
//!
//! Parsing is strict by design: unknown sections or keys are hard errors
//! with line numbers, so a config can never silently carry a typo. The
//! serializer writes floats in shortest round-trip form and `parse ∘
//! serialize` is the identity.

use std::fmt::Write as _;

use sdlab_core::distill::{PdsMode, WeightingKind, WeightingSchedule};
use sdlab_core::generator::{EditMethod, GeneratorKind};
use sdlab_core::schedule::{ScheduleKind, TimestepKind};
use sdlab_core::sdedit::SdeditMode;
use sdlab_core::world::SceneSize;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // [world]
    pub scene: String,
    pub size: SceneSize,
    // [schedule]
    pub schedule_kind: ScheduleKind,
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    // [plan]
    pub plan_kind: TimestepKind,
    pub t_min_frac: f64,
    pub t_max_frac: f64,
    pub n_iters: usize,
    // [method]
    pub method: EditMethod,
    pub pds_mode: PdsMode,
    // [weighting]
    pub weighting_kind: WeightingKind,
    pub chi: f64,
    pub delta: f64,
    pub gamma: f64,
    pub const_phi: f64,
    pub const_psi: f64,
    pub pds_inference_steps: usize,
    // [guidance]
    pub omega_y: f64,
    pub omega_i: f64,
    pub lambda: f64,
    // [freeu]
    pub freeu_enabled: bool,
    pub freeu_b: f64,
    pub freeu_s: f64,
    pub freeu_cutoff: f64,
    // [generator]
    pub generator_kind: GeneratorKind,
    pub basis_k: usize,
    // [optimizer]
    pub base_rate: f64,
    pub warmup_steps: usize,
    pub decay_rate: f64,
    // [sdedit]
    pub sdedit_steps: usize,
    pub sdedit_strength: f64,
    pub sdedit_mode: SdeditMode,
    // [run]
    pub seed: u64,
    pub out: String,
    pub frame_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: "two-blobs".into(),
            size: SceneSize::Small,
            schedule_kind: ScheduleKind::Linear,
            t_max: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            plan_kind: TimestepKind::Decreasing,
            t_min_frac: 0.2,
            t_max_frac: 0.9,
            n_iters: 500,
            method: EditMethod::DreamCatalyst,
            pds_mode: PdsMode::Decomposed,
            weighting_kind: WeightingKind::DreamCatalyst,
            chi: 0.075,
            delta: 0.2,
            gamma: 0.8,
            const_phi: 0.0,
            const_psi: 1.0,
            pds_inference_steps: 500,
            omega_y: 7.5,
            omega_i: 1.5,
            lambda: 4.0,
            freeu_enabled: false,
            freeu_b: 1.1,
            freeu_s: 0.9,
            freeu_cutoff: 0.15,
            generator_kind: GeneratorKind::LinearBasis,
            basis_k: 64,
            base_rate: 1e-2,
            warmup_steps: 100,
            decay_rate: 0.995,
            sdedit_steps: 25,
            sdedit_strength: 0.7,
            sdedit_mode: SdeditMode::DeterministicProximal,
            seed: 7,
            out: "out/run".into(),
            frame_every: 0,
        }
    }
}

impl RunConfig {
    pub fn weighting_schedule(&self) -> WeightingSchedule {
        WeightingSchedule {
            kind: self.weighting_kind,
            chi: self.chi,
            delta: self.delta,
            gamma: self.gamma,
            const_phi: self.const_phi,
            const_psi: self.const_psi,
            pds_inference_steps: self.pds_inference_steps,
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !SECTIONS.contains(&section.as_str()) {
                    return Err(format!("line {line_no}: unknown section [{section}]"));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("line {line_no}: expected `key = value`, got `{line}`"));
            };
            let key = key.trim();
            let value = value.trim();
            cfg.assign(&section, key, value)
                .map_err(|e| format!("line {line_no}: {e}"))?;
        }
        Ok(cfg)
    }

    fn assign(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("invalid value `{value}` for `{key}`"))
        }
        match (section, key) {
            ("world", "scene") => self.scene = value.to_string(),
            ("world", "size") => {
                self.size = match value {
                    "16x16x1" => SceneSize::Small,
                    "32x32x3" => SceneSize::Rgb32,
                    other => return Err(format!("unknown size `{other}` (16x16x1 or 32x32x3)")),
                }
            }
            ("schedule", "kind") => {
                self.schedule_kind = match value {
                    "linear" => ScheduleKind::Linear,
                    "scaled-linear" => ScheduleKind::ScaledLinear,
                    "cosine" => ScheduleKind::Cosine,
                    other => return Err(format!("unknown schedule kind `{other}`")),
                }
            }
            ("schedule", "t_max") => self.t_max = num(key, value)?,
            ("schedule", "beta_start") => self.beta_start = num(key, value)?,
            ("schedule", "beta_end") => self.beta_end = num(key, value)?,
            ("plan", "kind") => {
                self.plan_kind = match value {
                    "random" => TimestepKind::Random,
                    "decreasing" => TimestepKind::Decreasing,
                    "non-increasing" => TimestepKind::NonIncreasing,
                    other => return Err(format!("unknown plan kind `{other}`")),
                }
            }
            ("plan", "t_min_frac") => self.t_min_frac = num(key, value)?,
            ("plan", "t_max_frac") => self.t_max_frac = num(key, value)?,
            ("plan", "n_iters") => self.n_iters = num(key, value)?,
            ("method", "name") => {
                self.method = match value {
                    "sds" => EditMethod::Sds,
                    "dds" => EditMethod::Dds,
                    "pds" => EditMethod::Pds,
                    "dreamcatalyst" => EditMethod::DreamCatalyst,
                    other => return Err(format!("unknown method `{other}`")),
                }
            }
            ("method", "pds_mode") => {
                self.pds_mode = match value {
                    "direct" => PdsMode::Direct,
                    "decomposed" => PdsMode::Decomposed,
                    other => return Err(format!("unknown pds mode `{other}`")),
                }
            }
            ("weighting", "kind") => {
                self.weighting_kind = match value {
                    "dreamcatalyst" => WeightingKind::DreamCatalyst,
                    "pds-derived" => WeightingKind::PdsDerived,
                    "constant" => WeightingKind::Constant,
                    other => return Err(format!("unknown weighting kind `{other}`")),
                }
            }
            ("weighting", "chi") => self.chi = num(key, value)?,
            ("weighting", "delta") => self.delta = num(key, value)?,
            ("weighting", "gamma") => self.gamma = num(key, value)?,
            ("weighting", "const_phi") => self.const_phi = num(key, value)?,
            ("weighting", "const_psi") => self.const_psi = num(key, value)?,
            ("weighting", "pds_inference_steps") => self.pds_inference_steps = num(key, value)?,
            ("guidance", "omega_y") => self.omega_y = num(key, value)?,
            ("guidance", "omega_i") => self.omega_i = num(key, value)?,
            ("guidance", "lambda") => self.lambda = num(key, value)?,
            ("freeu", "enabled") => self.freeu_enabled = num(key, value)?,
            ("freeu", "b") => self.freeu_b = num(key, value)?,
            ("freeu", "s") => self.freeu_s = num(key, value)?,
            ("freeu", "cutoff_frac") => self.freeu_cutoff = num(key, value)?,
            ("generator", "kind") => {
                self.generator_kind = match value {
                    "pixel-grid" => GeneratorKind::PixelGrid,
                    "linear-basis" => GeneratorKind::LinearBasis,
                    other => return Err(format!("unknown generator kind `{other}`")),
                }
            }
            ("generator", "basis_k") => self.basis_k = num(key, value)?,
            ("optimizer", "base_rate") => self.base_rate = num(key, value)?,
            ("optimizer", "warmup_steps") => self.warmup_steps = num(key, value)?,
            ("optimizer", "decay_rate") => self.decay_rate = num(key, value)?,
            ("sdedit", "n_steps") => self.sdedit_steps = num(key, value)?,
            ("sdedit", "strength") => self.sdedit_strength = num(key, value)?,
            ("sdedit", "mode") => {
                self.sdedit_mode = match value {
                    "stochastic" => SdeditMode::Stochastic,
                    "deterministic-proximal" => SdeditMode::DeterministicProximal,
                    other => return Err(format!("unknown sdedit mode `{other}`")),
                }
            }
            ("run", "seed") => self.seed = num(key, value)?,
            ("run", "out") => self.out = value.to_string(),
            ("run", "frame_every") => self.frame_every = num(key, value)?,
            ("", _) => return Err(format!("key `{key}` outside any section")),
            (section, key) => {
                return Err(format!("unknown key `{key}` in section [{section}]"))
            }
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let size = match self.size {
            SceneSize::Small => "16x16x1",
            SceneSize::Rgb32 => "32x32x3",
        };
        let schedule_kind = match self.schedule_kind {
            ScheduleKind::Linear => "linear",
            ScheduleKind::ScaledLinear => "scaled-linear",
            ScheduleKind::Cosine => "cosine",
        };
        let plan_kind = match self.plan_kind {
            TimestepKind::Random => "random",
            TimestepKind::Decreasing => "decreasing",
            TimestepKind::NonIncreasing => "non-increasing",
        };
        let method = match self.method {
            EditMethod::Sds => "sds",
            EditMethod::Dds => "dds",
            EditMethod::Pds => "pds",
            EditMethod::DreamCatalyst => "dreamcatalyst",
        };
        let pds_mode = match self.pds_mode {
            PdsMode::Direct => "direct",
            PdsMode::Decomposed => "decomposed",
        };
        let weighting = match self.weighting_kind {
            WeightingKind::DreamCatalyst => "dreamcatalyst",
            WeightingKind::PdsDerived => "pds-derived",
            WeightingKind::Constant => "constant",
        };
        let generator = match self.generator_kind {
            GeneratorKind::PixelGrid => "pixel-grid",
            GeneratorKind::LinearBasis => "linear-basis",
        };
        let sdedit_mode = match self.sdedit_mode {
            SdeditMode::Stochastic => "stochastic",
            SdeditMode::DeterministicProximal => "deterministic-proximal",
        };
        let _ = write!(
            s,
            "[world]\nscene = {}\nsize = {}\n\n\
             [schedule]\nkind = {}\nt_max = {}\nbeta_start = {}\nbeta_end = {}\n\n\
             [plan]\nkind = {}\nt_min_frac = {}\nt_max_frac = {}\nn_iters = {}\n\n\
             [method]\nname = {}\npds_mode = {}\n\n\
             [weighting]\nkind = {}\nchi = {}\ndelta = {}\ngamma = {}\nconst_phi = {}\nconst_psi = {}\npds_inference_steps = {}\n\n\
             [guidance]\nomega_y = {}\nomega_i = {}\nlambda = {}\n\n\
             [freeu]\nenabled = {}\nb = {}\ns = {}\ncutoff_frac = {}\n\n\
             [generator]\nkind = {}\nbasis_k = {}\n\n\
             [optimizer]\nbase_rate = {}\nwarmup_steps = {}\ndecay_rate = {}\n\n\
             [sdedit]\nn_steps = {}\nstrength = {}\nmode = {}\n\n\
             [run]\nseed = {}\nout = {}\nframe_every = {}\n",
            self.scene, size,
            schedule_kind, self.t_max, self.beta_start, self.beta_end,
            plan_kind, self.t_min_frac, self.t_max_frac, self.n_iters,
            method, pds_mode,
            weighting, self.chi, self.delta, self.gamma, self.const_phi, self.const_psi,
            self.pds_inference_steps,
            self.omega_y, self.omega_i, self.lambda,
            self.freeu_enabled, self.freeu_b, self.freeu_s, self.freeu_cutoff,
            generator, self.basis_k,
            self.base_rate, self.warmup_steps, self.decay_rate,
            self.sdedit_steps, self.sdedit_strength, sdedit_mode,
            self.seed, self.out, self.frame_every,
        );
        s
    }
}

const SECTIONS: [&str; 11] = [
    "world", "schedule", "plan", "method", "weighting", "guidance", "freeu", "generator",
    "optimizer", "sdedit", "run",
];
