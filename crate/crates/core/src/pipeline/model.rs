use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{ConvGruParams, ConvGruVars, FusionCell, FusionCellVars, SsmaConfig, SsmaParams, SsmaVars, DEFAULT_ETA};
use crate::geometry::{compose_camera_transform, CameraIntrinsics, Pose};
use crate::nn::{Checkpoint, ConvParams, ConvVars, Graph, Precision, Tensor4, Var};
use crate::sequencing::Frame;
use crate::warp::{prior_plan, ScatterPlan, DEFAULT_FILL};

/// Number of decoder levels. Level 0 is the bottleneck at quarter
/// resolution, level 2 the full-resolution output level.
pub const DECODER_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "bl")]
    Bl,
    #[serde(rename = "t-gru")]
    TGru,
    #[serde(rename = "st-gru")]
    StGru,
    #[serde(rename = "t-atte")]
    TAtte,
    #[serde(rename = "st-atte")]
    StAtte,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Attention,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Bl, Variant::TGru, Variant::StGru, Variant::TAtte, Variant::StAtte];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Bl => "bl",
            Variant::TGru => "t-gru",
            Variant::StGru => "st-gru",
            Variant::TAtte => "t-atte",
            Variant::StAtte => "st-atte",
        }
    }

    pub fn cell(self) -> Option<CellKind> {
        match self {
            Variant::Bl => None,
            Variant::TGru | Variant::StGru => Some(CellKind::Gru),
            Variant::TAtte | Variant::StAtte => Some(CellKind::Attention),
        }
    }

    /// Whether priors are registered into the current camera.
    pub fn is_spatial(self) -> bool {
        matches!(self, Variant::StGru | Variant::StAtte)
    }

    /// The temporal-only variant with the same cell.
    pub fn temporal_counterpart(self) -> Option<Variant> {
        match self {
            Variant::StGru => Some(Variant::TGru),
            Variant::StAtte => Some(Variant::TAtte),
            _ => None,
        }
    }

    /// GRU cells fuse the two coarsest levels, attention cells all three.
    pub fn default_fusion_levels(self) -> BTreeSet<usize> {
        match self.cell() {
            None => BTreeSet::new(),
            Some(CellKind::Gru) => [0, 1].into(),
            Some(CellKind::Attention) => [0, 1, 2].into(),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder_channels: Vec<usize>,
    pub num_classes: usize,
    pub fusion_levels: BTreeSet<usize>,
    pub eta: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, num_classes: usize) -> Self {
        Self {
            variant,
            encoder_channels: vec![8, 16, 32],
            num_classes,
            fusion_levels: variant.default_fusion_levels(),
            eta: DEFAULT_ETA,
        }
    }

    /// Fusion levels actually used (none for the baseline).
    pub fn active_levels(&self) -> BTreeSet<usize> {
        match self.variant {
            Variant::Bl => BTreeSet::new(),
            _ => self.fusion_levels.clone(),
        }
    }

    /// Channel width of decoder level `level`.
    pub fn decoder_channels(&self, level: usize) -> usize {
        self.encoder_channels[DECODER_LEVELS - 1 - level]
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.len() != DECODER_LEVELS || self.encoder_channels.contains(&0) {
            return Err(Error::Config(format!(
                "encoder needs {DECODER_LEVELS} non-empty levels, got {:?}",
                self.encoder_channels
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("at least two classes are needed".into()));
        }
        if let Some(&l) = self.fusion_levels.iter().find(|&&l| l >= DECODER_LEVELS) {
            return Err(Error::Config(format!(
                "fusion level {l} does not exist (decoder levels 0..{DECODER_LEVELS})"
            )));
        }
        if self.variant.cell() == Some(CellKind::Attention) {
            for &l in &self.fusion_levels {
                SsmaConfig::new(self.decoder_channels(l), self.eta)?;
            }
        }
        Ok(())
    }
}

/// Toy encoder-decoder with optional fusion cells in the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// One 3×3 convolution + ReLU per encoder level; levels 1 and 2 follow a
    /// 2×2 average pooling.
    pub encoder: Vec<ConvParams>,
    /// Decoder levels 1 and 2: upsample, concatenate the encoder skip,
    /// convolve + ReLU.
    pub decoder: Vec<ConvParams>,
    pub head: ConvParams,
    pub fusion: BTreeMap<usize, FusionCell>,
}

fn cell_seed(seed: u64, level: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (0xf00d + level as u64)
}

/// Builds a model with deterministic initialization. The backbone depends
/// only on the seed, so every variant shares it for a given seed.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let ch = &cfg.encoder_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = vec![
        ConvParams::init(3, ch[0], true, &mut rng),
        ConvParams::init(ch[0], ch[1], true, &mut rng),
        ConvParams::init(ch[1], ch[2], true, &mut rng),
    ];
    let decoder = vec![
        ConvParams::init(ch[2] + ch[1], ch[1], true, &mut rng),
        ConvParams::init(ch[1] + ch[0], ch[0], true, &mut rng),
    ];
    let head = ConvParams::init(ch[0], cfg.num_classes, true, &mut rng);
    let mut fusion = BTreeMap::new();
    for level in cfg.active_levels() {
        let c = cfg.decoder_channels(level);
        let mut r = ChaCha8Rng::seed_from_u64(cell_seed(seed, level));
        let cell = match cfg.variant.cell() {
            Some(CellKind::Gru) => FusionCell::ConvGru(ConvGruParams::init(c, &mut r)),
            Some(CellKind::Attention) => FusionCell::Ssma(SsmaParams::init(SsmaConfig::new(c, cfg.eta)?, &mut r)?),
            None => unreachable!("baseline has no active levels"),
        };
        fusion.insert(level, cell);
    }
    Ok(Model {
        config: cfg.clone(),
        encoder,
        decoder,
        head,
        fusion,
    })
}

impl Model {
    /// Visits every parameter tensor with its name, in canonical order.
    pub fn for_each(&self, f: &mut dyn FnMut(String, &Tensor4)) {
        for (i, p) in self.encoder.iter().enumerate() {
            p.for_each(&format!("encoder.{i}"), f);
        }
        for (i, p) in self.decoder.iter().enumerate() {
            p.for_each(&format!("decoder.{}", i + 1), f);
        }
        self.head.for_each("head", f);
        for (level, cell) in &self.fusion {
            let prefix = format!("fusion.{level}");
            match cell {
                FusionCell::Ssma(p) => p.for_each(&prefix, f),
                FusionCell::ConvGru(p) => p.for_each(&prefix, f),
            }
        }
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor4)) {
        for (i, p) in self.encoder.iter_mut().enumerate() {
            p.for_each_mut(&format!("encoder.{i}"), f);
        }
        for (i, p) in self.decoder.iter_mut().enumerate() {
            p.for_each_mut(&format!("decoder.{}", i + 1), f);
        }
        self.head.for_each_mut("head", f);
        for (level, cell) in self.fusion.iter_mut() {
            let prefix = format!("fusion.{level}");
            match cell {
                FusionCell::Ssma(p) => p.for_each_mut(&prefix, f),
                FusionCell::ConvGru(p) => p.for_each_mut(&prefix, f),
            }
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor4)> {
        let mut out = Vec::new();
        self.for_each(&mut |n, t| out.push((n, t.clone())));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, t| n += t.len());
        n
    }

    pub fn fusion_param_count(&self) -> usize {
        self.fusion.values().map(FusionCell::param_count).sum()
    }

    /// Rounds every parameter to the nearest single-precision value.
    pub fn round_to_f32(&mut self) {
        self.for_each_mut(&mut |_, t| t.round_to_f32());
    }

    pub fn to_checkpoint(&self, precision: Precision, mut meta: serde_json::Value) -> Result<Checkpoint> {
        if !meta.is_object() {
            meta = serde_json::json!({});
        }
        meta["model"] = serde_json::to_value(&self.config)?;
        Ok(Checkpoint {
            precision,
            params: self.named_params(),
            meta,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_value(
            ckpt.meta
                .get("model")
                .cloned()
                .ok_or_else(|| Error::Config("checkpoint has no model config".into()))?,
        )?;
        let mut model = build_model(&cfg, 0)?;
        let mut missing = Vec::new();
        let mut mismatched = Vec::new();
        model.for_each_mut(&mut |name, t| match ckpt.get(&name) {
            Some(src) if src.shape() == t.shape() => *t = src.clone(),
            Some(_) => mismatched.push(name),
            None => missing.push(name),
        });
        if !missing.is_empty() || !mismatched.is_empty() {
            return Err(Error::Config(format!(
                "checkpoint does not match the model: missing {missing:?}, wrong shape {mismatched:?}"
            )));
        }
        if ckpt.params.len() != model.named_params().len() {
            return Err(Error::Config("checkpoint has unexpected extra parameters".into()));
        }
        Ok(model)
    }

    /// Adds every parameter to `g` as a leaf, in canonical order.
    pub fn bind(&self, g: &mut Graph) -> (ModelVars, Vec<Var>) {
        let mut vars = Vec::new();
        self.for_each(&mut |_, t| vars.push(g.leaf(t.clone())));
        let mv = self.assemble(&vars).expect("vars come from this model");
        (mv, vars)
    }

    /// Reassembles graph handles from leaves listed in canonical order.
    pub fn assemble(&self, vars: &[Var]) -> Result<ModelVars> {
        let mut it = vars.iter().copied();
        let mut next_conv = |p: &ConvParams| -> Result<ConvVars> {
            let mut take = || it.next().ok_or_else(|| Error::Shape("too few parameter variables".into()));
            let weight = take()?;
            let bias = if p.bias.is_some() { Some(take()?) } else { None };
            Ok(ConvVars { weight, bias })
        };
        let encoder = self.encoder.iter().map(&mut next_conv).collect::<Result<Vec<_>>>()?;
        let decoder = self.decoder.iter().map(&mut next_conv).collect::<Result<Vec<_>>>()?;
        let head = next_conv(&self.head)?;
        let mut fusion = BTreeMap::new();
        for (&level, cell) in &self.fusion {
            let v = match cell {
                FusionCell::Ssma(p) => FusionCellVars::Ssma(SsmaVars {
                    compress1: next_conv(&p.compress1)?,
                    expand: next_conv(&p.expand)?,
                    compress2: next_conv(&p.compress2)?,
                }),
                FusionCell::ConvGru(p) => FusionCellVars::ConvGru(ConvGruVars {
                    wz: next_conv(&p.wz)?,
                    uz: next_conv(&p.uz)?,
                    wr: next_conv(&p.wr)?,
                    ur: next_conv(&p.ur)?,
                    w: next_conv(&p.w)?,
                    u: next_conv(&p.u)?,
                }),
            };
            fusion.insert(level, v);
        }
        if it.next().is_some() {
            return Err(Error::Shape("too many parameter variables".into()));
        }
        Ok(ModelVars {
            encoder,
            decoder,
            head,
            fusion,
        })
    }
}

/// Graph handles of a bound [`Model`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: Vec<ConvVars>,
    pub decoder: Vec<ConvVars>,
    pub head: ConvVars,
    pub fusion: BTreeMap<usize, FusionCellVars>,
}

/// Registration plans of one frame's priors, indexed by decoder level.
pub type LevelPlans = BTreeMap<usize, Rc<ScatterPlan>>;

/// Spatial size of decoder level `level` for an `h`×`w` input.
pub fn level_size(level: usize, h: usize, w: usize) -> (usize, usize) {
    let f = 1 << (DECODER_LEVELS - 1 - level);
    (h / f, w / f)
}

/// Camera motion from frame `t−1` to frame `t` for every frame of a sequence
/// of robot poses (`None` for the first frame).
pub fn camera_motions(poses: &[Pose], te: &Pose) -> Vec<Option<Pose>> {
    std::iter::once(None)
        .chain(poses.windows(2).map(|w| {
            let tr = w[0].inverse().compose(&w[1]);
            Some(compose_camera_transform(&tr, te))
        }))
        .collect()
}

/// Registration plans for every frame of a sequence. Empty for
/// temporal-only variants and for the first frame.
pub fn sequence_plans(
    cfg: &ModelConfig,
    frames: &[Frame],
    poses: &[Pose],
    k: &CameraIntrinsics,
    te: &Pose,
) -> Result<Vec<LevelPlans>> {
    if frames.len() != poses.len() {
        return Err(Error::Shape(format!("{} frames but {} poses", frames.len(), poses.len())));
    }
    let mut out = vec![LevelPlans::new(); frames.len()];
    if !cfg.variant.is_spatial() {
        return Ok(out);
    }
    for (t, tc) in camera_motions(poses, te).into_iter().enumerate() {
        let Some(tc) = tc else { continue };
        for level in cfg.active_levels() {
            let (h, w) = level_size(level, k.height, k.width);
            let plan = prior_plan(&frames[t - 1].depth, &tc, k, h, w)?;
            out[t].insert(level, Rc::new(plan));
        }
    }
    Ok(out)
}

/// Network input tensor of one frame.
pub fn frame_input(frame: &Frame) -> Tensor4 {
    Tensor4::from_map(&frame.rgb.to_feature_map())
}

/// Records the recurrent forward pass over a sequence of input images and
/// returns the logits of the last frame. The baseline only looks at the
/// last image.
pub fn sequence_graph(
    g: &mut Graph,
    cfg: &ModelConfig,
    mv: &ModelVars,
    images: &[Var],
    plans: &[LevelPlans],
) -> Result<Var> {
    if images.is_empty() {
        return Err(Error::Config("empty sequence".into()));
    }
    if images.len() != plans.len() {
        return Err(Error::Shape(format!("{} images but {} plan sets", images.len(), plans.len())));
    }
    let [_, _, h, w] = g.shape(images[0]);
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::Shape(format!("input {w}x{h} must be divisible by 4")));
    }
    let levels = cfg.active_levels();
    let deepest_needed = levels.iter().max().copied();
    let start = if cfg.variant == Variant::Bl { images.len() - 1 } else { 0 };
    let mut state: BTreeMap<usize, Var> = BTreeMap::new();
    let last = images.len() - 1;

    let fuse = |g: &mut Graph, level: usize, t: usize, x: Var, state: &mut BTreeMap<usize, Var>| -> Result<Var> {
        let Some(cell) = mv.fusion.get(&level) else {
            return Ok(x);
        };
        let prior = match state.get(&level) {
            None => g.leaf(Tensor4::filled(g.shape(x), DEFAULT_FILL)),
            Some(&s) if cfg.variant.is_spatial() => {
                let plan = plans[t]
                    .get(&level)
                    .ok_or_else(|| Error::Config(format!("missing registration plan for level {level}")))?;
                g.scatter(s, Rc::clone(plan), DEFAULT_FILL)?
            }
            Some(&s) => s,
        };
        let out = cell.apply(g, x, prior)?;
        state.insert(level, out);
        Ok(out)
    };

    let mut logits = None;
    for t in start..images.len() {
        let c0 = mv.encoder[0].apply(g, images[t])?;
        let e0 = g.relu(c0);
        let p0 = g.avg_pool2(e0)?;
        let c1 = mv.encoder[1].apply(g, p0)?;
        let e1 = g.relu(c1);
        let p1 = g.avg_pool2(e1)?;
        let c2 = mv.encoder[2].apply(g, p1)?;
        let e2 = g.relu(c2);
        let mut d = fuse(g, 0, t, e2, &mut state)?;
        // earlier frames only feed the recurrence, so stop at the deepest fused level
        let stop = if t == last { DECODER_LEVELS - 1 } else { deepest_needed.unwrap_or(0) };
        let skips = [e1, e0];
        for level in 1..=stop {
            let up = g.upsample2(d);
            let cat = g.concat(up, skips[level - 1])?;
            let c = mv.decoder[level - 1].apply(g, cat)?;
            let r = g.relu(c);
            d = fuse(g, level, t, r, &mut state)?;
        }
        if t == last {
            logits = Some(mv.head.apply(g, d)?);
        }
    }
    Ok(logits.expect("last frame processed"))
}

/// Class logits `1 × classes × H × W` of the last frame of a sequence.
pub fn forward_sequence(
    model: &Model,
    frames: &[Frame],
    poses: &[Pose],
    k: &CameraIntrinsics,
    te: &Pose,
) -> Result<Tensor4> {
    if frames.is_empty() {
        return Err(Error::Config("empty sequence".into()));
    }
    let plans = sequence_plans(&model.config, frames, poses, k, te)?;
    let mut g = Graph::new();
    let (mv, _) = model.bind(&mut g);
    let images: Vec<Var> = frames.iter().map(|f| g.leaf(frame_input(f))).collect();
    let out = sequence_graph(&mut g, &model.config, &mv, &images, &plans)?;
    Ok(g.value(out).clone())
}

/// Per-pixel argmax of `1 × C × H × W` logits.
pub fn predict(logits: &Tensor4) -> Vec<u8> {
    let [_, c, h, w] = logits.shape();
    let n = h * w;
    let d = logits.data();
    (0..n)
        .map(|i| {
            let mut best = 0;
            for k in 1..c {
                if d[k * n + i] > d[best * n + i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}
