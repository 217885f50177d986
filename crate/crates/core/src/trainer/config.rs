use super::loss::{Distance, LossConfig};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kv;
use crate::lossweights::WeightScheme;
use crate::maskgen::{MaskStrategy, MultiblockConfig, MultiblockParams, OrientationPolicy, StripeParams};
use crate::sampling::Rounding;
use crate::tokens::ClsPolicy;
use crate::vit::{EncoderConfig, PosEmbedKind, PredictorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskKind {
    #[default]
    Stripe,
    Quadrant,
    Multiblock,
}

impl MaskKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stripe" => Ok(MaskKind::Stripe),
            "quadrant" => Ok(MaskKind::Quadrant),
            "multiblock" => Ok(MaskKind::Multiblock),
            _ => Err(Error::Config(format!(
                "unknown masking strategy `{s}` (stripe, quadrant, multiblock)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Stripe => "stripe",
            MaskKind::Quadrant => "quadrant",
            MaskKind::Multiblock => "multiblock",
        }
    }
}

/// Everything a training run depends on. Every field has a `key = value`
/// spelling; see [`TrainConfig::to_kv`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    /// `None` means 10% of all steps.
    pub warmup_steps: Option<u64>,
    pub ema_start: f64,
    pub ema_end: f64,
    pub encoder: EncoderConfig,
    pub predictor: PredictorConfig,
    pub masking: MaskKind,
    pub stripe: StripeParams,
    pub multiblock: MultiblockConfig,
    pub cls: ClsPolicy,
    pub loss: LossConfig,
    /// Encode the teacher reference from the full image instead of the
    /// target subset alone.
    pub target_full_context: bool,
    /// Extra checkpoint every this many steps; 0 keeps per-epoch only.
    pub checkpoint_every: u64,
    /// Sample rows used for the end-of-epoch collapse indicator.
    pub stats_samples: usize,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::tiny(GridSpec::default());
        TrainConfig {
            seed: 0,
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            min_lr: 1e-6,
            weight_decay: 0.04,
            warmup_steps: None,
            ema_start: 0.996,
            ema_end: 1.0,
            predictor: PredictorConfig::for_encoder(&encoder),
            encoder,
            masking: MaskKind::Stripe,
            stripe: StripeParams::default(),
            multiblock: MultiblockConfig::default(),
            cls: ClsPolicy::default(),
            loss: LossConfig::default(),
            target_full_context: false,
            checkpoint_every: 0,
            stats_samples: 32,
            workers: 1,
        }
    }
}

const MODEL_KEYS: &[&str] = &[
    "embed_dim",
    "depth",
    "num_heads",
    "mlp_ratio",
    "image_size",
    "patch_size",
    "pos_embed",
    "channels",
];

fn preset(name: &str, grid: GridSpec) -> Result<EncoderConfig> {
    match name {
        "tiny" => Ok(EncoderConfig::tiny(grid)),
        "small" => Ok(EncoderConfig::small(grid)),
        "micro" => Ok(EncoderConfig::micro(grid)),
        _ => Err(Error::Config(format!("unknown model `{name}` (micro, tiny, small)"))),
    }
}

fn parse_range(key: &str, s: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| Error::Config(format!("`{key}` expects a range `lo..hi`, got `{s}`")))?;
    Ok((kv::value(key, a.trim())?, kv::value(key, b.trim())?))
}

/// `blocks:scale_lo..scale_hi:aspect_lo..aspect_hi`, modes separated by `;`.
fn parse_modes(key: &str, s: &str) -> Result<Vec<MultiblockParams>> {
    s.split(';')
        .map(|m| {
            let parts: Vec<&str> = m.trim().split(':').collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!(
                    "`{key}` mode `{m}` should look like 4:0.15..0.2:0.75..1.5"
                )));
            }
            Ok(MultiblockParams {
                num_blocks: kv::value(key, parts[0].trim())?,
                scale_range: parse_range(key, parts[1])?,
                aspect_range: parse_range(key, parts[2])?,
            })
        })
        .collect()
}

fn render_modes(modes: &[MultiblockParams]) -> String {
    modes
        .iter()
        .map(|m| {
            format!(
                "{}:{}..{}:{}..{}",
                m.num_blocks, m.scale_range.0, m.scale_range.1, m.aspect_range.0, m.aspect_range.1
            )
        })
        .collect::<Vec<_>>()
        .join(";")
}

impl TrainConfig {
    /// Builds a config from defaults plus `pairs`, later pairs winning.
    ///
    /// `model` presets apply first, then encoder geometry, then everything
    /// else, so `model = small` never clobbers an explicit `depth`. The
    /// predictor follows the encoder unless its own keys are given.
    pub fn from_pairs<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> Result<Self> {
        let mut map: Vec<(&str, &str)> = Vec::new();
        for (k, v) in pairs {
            let (k, v) = (k.as_ref(), v.as_ref());
            map.retain(|(ek, _)| *ek != k);
            map.push((k, v));
        }
        let get = |key: &str| map.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);

        let mut cfg = TrainConfig::default();
        let image_size: usize = match get("image_size") {
            Some(v) => kv::value("image_size", v)?,
            None => cfg.encoder.grid.image_size(),
        };
        let patch_size: usize = match get("patch_size") {
            Some(v) => kv::value("patch_size", v)?,
            None => cfg.encoder.grid.patch_size(),
        };
        let grid = GridSpec::from_image_size(image_size, patch_size)?;
        cfg.encoder = preset(get("model").unwrap_or("tiny"), grid)?;
        for &(k, v) in &map {
            match k {
                "embed_dim" => cfg.encoder.embed_dim = kv::value(k, v)?,
                "depth" => cfg.encoder.depth = kv::value(k, v)?,
                "num_heads" => cfg.encoder.num_heads = kv::value(k, v)?,
                "mlp_ratio" => cfg.encoder.mlp_ratio = kv::value(k, v)?,
                "channels" => cfg.encoder.channels = kv::value(k, v)?,
                "pos_embed" => {
                    cfg.encoder.pos_embed = match v {
                        "learnable" => PosEmbedKind::Learnable,
                        "sinusoidal" => PosEmbedKind::Sinusoidal,
                        _ => return Err(Error::Config(format!("bad pos_embed `{v}`"))),
                    }
                }
                _ => {}
            }
        }
        cfg.predictor = PredictorConfig::for_encoder(&cfg.encoder);
        for &(k, v) in &map {
            if k == "model" || MODEL_KEYS.contains(&k) {
                continue;
            }
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pairs(&kv::parse(text)?)
    }

    fn apply(&mut self, k: &str, v: &str) -> Result<()> {
        match k {
            "seed" => self.seed = kv::value(k, v)?,
            "epochs" => self.epochs = kv::value(k, v)?,
            "batch_size" => self.batch_size = kv::value(k, v)?,
            "lr" => self.lr = kv::value(k, v)?,
            "min_lr" => self.min_lr = kv::value(k, v)?,
            "weight_decay" => self.weight_decay = kv::value(k, v)?,
            "warmup_steps" => {
                self.warmup_steps = if v == "auto" { None } else { Some(kv::value(k, v)?) }
            }
            "ema_start" => self.ema_start = kv::value(k, v)?,
            "ema_end" => self.ema_end = kv::value(k, v)?,
            "predictor_width" => self.predictor.width = kv::value(k, v)?,
            "predictor_depth" => self.predictor.depth = kv::value(k, v)?,
            "predictor_heads" => self.predictor.num_heads = kv::value(k, v)?,
            "predictor_mlp_ratio" => self.predictor.mlp_ratio = kv::value(k, v)?,
            "masking" => self.masking = MaskKind::parse(v)?,
            "stripe_width" => self.stripe.width = kv::value(k, v)?,
            "stripe_spread" => self.stripe.center_spread = kv::value(k, v)?,
            "stripe_orientation" => {
                self.stripe.orientation = match v {
                    "random" => OrientationPolicy::Random,
                    "horizontal" => OrientationPolicy::Horizontal,
                    "vertical" => OrientationPolicy::Vertical,
                    _ => return Err(Error::Config(format!("bad stripe_orientation `{v}`"))),
                }
            }
            "stripe_rounding" => {
                self.stripe.rounding = match v {
                    "half_even" => Rounding::HalfEven,
                    "half_away" => Rounding::HalfAway,
                    _ => return Err(Error::Config(format!("bad stripe_rounding `{v}`"))),
                }
            }
            "multiblock_modes" => self.multiblock.modes = parse_modes(k, v)?,
            "multiblock_budget" => self.multiblock.resample_budget = kv::value(k, v)?,
            "cls_p_source" => self.cls.p_source = kv::value(k, v)?,
            "cls_enabled" => self.cls.enabled = kv::flag(k, v)?,
            "border_drop" => self.cls.border_drop = kv::flag(k, v)?,
            "distance" => {
                let beta = match self.loss.distance {
                    Distance::SmoothL1 { beta } => beta,
                    Distance::L2 => 1.0,
                };
                self.loss.distance = match v {
                    "smooth_l1" => Distance::SmoothL1 { beta },
                    "l2" => Distance::L2,
                    _ => return Err(Error::Config(format!("bad distance `{v}` (smooth_l1, l2)"))),
                }
            }
            "smooth_l1_beta" => {
                let beta = kv::value(k, v)?;
                if let Distance::SmoothL1 { beta: b } = &mut self.loss.distance {
                    *b = beta;
                }
            }
            "weight_scheme" => {
                self.loss.weights.scheme = match v {
                    "circular" => WeightScheme::Circular,
                    "uniform" => WeightScheme::Uniform,
                    _ => return Err(Error::Config(format!("bad weight_scheme `{v}`"))),
                }
            }
            "weight_radius" => self.loss.weights.falloff_radius = kv::value(k, v)?,
            "weight_steepness" => self.loss.weights.steepness = kv::value(k, v)?,
            "target_full_context" => self.target_full_context = kv::flag(k, v)?,
            "checkpoint_every" => self.checkpoint_every = kv::value(k, v)?,
            "stats_samples" => self.stats_samples = kv::value(k, v)?,
            "workers" => self.workers = kv::value(k, v)?,
            _ => return Err(Error::Config(format!("unknown key `{k}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        for (name, v) in [("lr", self.lr), ("min_lr", self.min_lr), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [("ema_start", self.ema_start), ("ema_end", self.ema_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        self.encoder.validate()?;
        self.predictor.validate(&self.encoder)?;
        self.mask_strategy().validate(&self.encoder.grid)?;
        self.cls.validate()?;
        self.loss.validate()
    }

    pub fn grid(&self) -> GridSpec {
        self.encoder.grid
    }

    pub fn mask_strategy(&self) -> MaskStrategy {
        match self.masking {
            MaskKind::Stripe => MaskStrategy::Stripe(self.stripe),
            MaskKind::Quadrant => MaskStrategy::Quadrant,
            MaskKind::Multiblock => MaskStrategy::Multiblock(self.multiblock.clone()),
        }
    }

    /// Every field as ordered `key = value` pairs; `from_pairs` inverts it.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let e = &self.encoder;
        let (distance, beta) = match self.loss.distance {
            Distance::SmoothL1 { beta } => ("smooth_l1", beta),
            Distance::L2 => ("l2", 1.0),
        };
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("min_lr", self.min_lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            (
                "warmup_steps",
                self.warmup_steps.map_or("auto".into(), |w| w.to_string()),
            ),
            ("ema_start", self.ema_start.to_string()),
            ("ema_end", self.ema_end.to_string()),
            ("image_size", e.grid.image_size().to_string()),
            ("patch_size", e.grid.patch_size().to_string()),
            ("channels", e.channels.to_string()),
            ("embed_dim", e.embed_dim.to_string()),
            ("depth", e.depth.to_string()),
            ("num_heads", e.num_heads.to_string()),
            ("mlp_ratio", e.mlp_ratio.to_string()),
            (
                "pos_embed",
                match e.pos_embed {
                    PosEmbedKind::Learnable => "learnable",
                    PosEmbedKind::Sinusoidal => "sinusoidal",
                }
                .into(),
            ),
            ("predictor_width", self.predictor.width.to_string()),
            ("predictor_depth", self.predictor.depth.to_string()),
            ("predictor_heads", self.predictor.num_heads.to_string()),
            ("predictor_mlp_ratio", self.predictor.mlp_ratio.to_string()),
            ("masking", self.masking.name().into()),
            ("stripe_width", self.stripe.width.to_string()),
            ("stripe_spread", self.stripe.center_spread.to_string()),
            (
                "stripe_orientation",
                match self.stripe.orientation {
                    OrientationPolicy::Random => "random",
                    OrientationPolicy::Horizontal => "horizontal",
                    OrientationPolicy::Vertical => "vertical",
                }
                .into(),
            ),
            (
                "stripe_rounding",
                match self.stripe.rounding {
                    Rounding::HalfEven => "half_even",
                    Rounding::HalfAway => "half_away",
                }
                .into(),
            ),
            ("multiblock_modes", render_modes(&self.multiblock.modes)),
            ("multiblock_budget", self.multiblock.resample_budget.to_string()),
            ("cls_p_source", self.cls.p_source.to_string()),
            ("cls_enabled", self.cls.enabled.to_string()),
            ("border_drop", self.cls.border_drop.to_string()),
            ("distance", distance.into()),
            ("smooth_l1_beta", beta.to_string()),
            (
                "weight_scheme",
                match self.loss.weights.scheme {
                    WeightScheme::Circular => "circular",
                    WeightScheme::Uniform => "uniform",
                }
                .into(),
            ),
            ("weight_radius", self.loss.weights.falloff_radius.to_string()),
            ("weight_steepness", self.loss.weights.steepness.to_string()),
            ("target_full_context", self.target_full_context.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("stats_samples", self.stats_samples.to_string()),
            ("workers", self.workers.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_kv(&self) -> String {
        kv::render(&self.to_pairs())
    }
}
