//! Recurrent fusion cells and the registration-plus-fusion step.
//!
//! Two cells combine the current decoder features with a prior:
//!
//! - **SSMA** gates the channel concatenation of current and prior features
//!   with a sigmoid attention tensor produced by a compress/expand
//!   bottleneck, then compresses the gated tensor back to `C` channels.
//! - **ConvGRU** is a gated recurrent unit whose dense transforms are 3×3
//!   same-size convolutions.
//!
//! [`st_fusion_step`] optionally registers the recurrent state into the
//! current camera before fusing (the spatial-temporal variants).

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::nn::{ConvParams, ConvVars, Graph, Tensor4, Var};
use crate::raster::{DepthImage, FeatureMap};
use crate::warp::{self, DEFAULT_FILL};

/// Default channel compression factor of the attention bottleneck.
pub const DEFAULT_ETA: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SsmaConfig {
    pub channels: usize,
    pub eta: usize,
}

impl SsmaConfig {
    pub fn new(channels: usize, eta: usize) -> Result<Self> {
        let cfg = Self { channels, eta };
        cfg.bottleneck()?;
        Ok(cfg)
    }

    /// Bottleneck width `2C / η`.
    pub fn bottleneck(&self) -> Result<usize> {
        if self.eta == 0 || self.channels == 0 || 2 * self.channels / self.eta < 1 {
            return Err(Error::Config(format!(
                "SSMA needs 2C/eta >= 1 (C = {}, eta = {})",
                self.channels, self.eta
            )));
        }
        Ok(2 * self.channels / self.eta)
    }
}

/// SSMA parameters: `compress1` (2C → 2C/η), `expand` (2C/η → 2C, sigmoid
/// activated) and `compress2` (2C → C).
#[derive(Debug, Clone, PartialEq)]
pub struct SsmaParams {
    pub compress1: ConvParams,
    pub expand: ConvParams,
    pub compress2: ConvParams,
}

#[derive(Debug, Clone, Copy)]
pub struct SsmaVars {
    pub compress1: ConvVars,
    pub expand: ConvVars,
    pub compress2: ConvVars,
}

impl SsmaParams {
    pub fn zeros(cfg: SsmaConfig) -> Result<Self> {
        let b = cfg.bottleneck()?;
        let c2 = 2 * cfg.channels;
        Ok(Self {
            compress1: ConvParams::zeros(c2, b, true),
            expand: ConvParams::zeros(b, c2, true),
            compress2: ConvParams::zeros(c2, cfg.channels, true),
        })
    }

    pub fn init(cfg: SsmaConfig, rng: &mut impl Rng) -> Result<Self> {
        let b = cfg.bottleneck()?;
        let c2 = 2 * cfg.channels;
        Ok(Self {
            compress1: ConvParams::init(c2, b, true, rng),
            expand: ConvParams::init(b, c2, true, rng),
            compress2: ConvParams::init(c2, cfg.channels, true, rng),
        })
    }

    pub fn channels(&self) -> usize {
        self.compress2.out_channels()
    }

    pub fn param_count(&self) -> usize {
        self.compress1.param_count() + self.expand.param_count() + self.compress2.param_count()
    }

    pub fn bind(&self, g: &mut Graph, vars: &mut Vec<Var>) -> SsmaVars {
        SsmaVars {
            compress1: self.compress1.bind(g, vars),
            expand: self.expand.bind(g, vars),
            compress2: self.compress2.bind(g, vars),
        }
    }

    pub fn for_each(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor4)) {
        self.compress1.for_each(&format!("{prefix}.compress1"), f);
        self.expand.for_each(&format!("{prefix}.expand"), f);
        self.compress2.for_each(&format!("{prefix}.compress2"), f);
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor4)) {
        self.compress1.for_each_mut(&format!("{prefix}.compress1"), f);
        self.expand.for_each_mut(&format!("{prefix}.expand"), f);
        self.compress2.for_each_mut(&format!("{prefix}.compress2"), f);
    }
}

/// Intermediate SSMA nodes, exposed for inspection of the attention gate.
#[derive(Debug, Clone, Copy)]
pub struct SsmaNodes {
    pub gate: Var,
    pub fused: Var,
}

/// Records an SSMA fusion of `current` and `prior` on `g`.
pub fn ssma_graph(g: &mut Graph, p: &SsmaVars, current: Var, prior: Var) -> Result<SsmaNodes> {
    if g.shape(current) != g.shape(prior) {
        return Err(Error::Shape(format!(
            "SSMA inputs differ: {:?} vs {:?}",
            g.shape(current),
            g.shape(prior)
        )));
    }
    let x = g.concat(current, prior)?;
    let bottleneck = p.compress1.apply(g, x)?;
    let bottleneck = g.relu(bottleneck);
    let expanded = p.expand.apply(g, bottleneck)?;
    let gate = g.sigmoid(expanded);
    let gated = g.hadamard(x, gate)?;
    let fused = p.compress2.apply(g, gated)?;
    Ok(SsmaNodes { gate, fused })
}

/// SSMA fusion of the current feature map with a (registered) prior.
pub fn ssma_forward(f_t: &FeatureMap, f_prior: &FeatureMap, p: &SsmaParams) -> Result<FeatureMap> {
    check_cell_inputs(f_t, f_prior, p.channels())?;
    let mut g = Graph::new();
    let mut vars = Vec::new();
    let pv = p.bind(&mut g, &mut vars);
    let a = g.leaf(Tensor4::from_map(f_t));
    let b = g.leaf(Tensor4::from_map(f_prior));
    let out = ssma_graph(&mut g, &pv, a, b)?;
    Ok(g.value(out.fused).to_map(0))
}

fn check_cell_inputs(a: &FeatureMap, b: &FeatureMap, channels: usize) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "fusion inputs differ: {}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    if a.channels() != channels {
        return Err(Error::Shape(format!(
            "cell expects {channels} channels, got {}",
            a.channels()
        )));
    }
    Ok(())
}

/// ConvGRU gate convolutions. Input-side (`w*`) convolutions carry a bias,
/// hidden-side (`u*`) ones do not.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGruParams {
    pub wz: ConvParams,
    pub uz: ConvParams,
    pub wr: ConvParams,
    pub ur: ConvParams,
    pub w: ConvParams,
    pub u: ConvParams,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGruVars {
    pub wz: ConvVars,
    pub uz: ConvVars,
    pub wr: ConvVars,
    pub ur: ConvVars,
    pub w: ConvVars,
    pub u: ConvVars,
}

impl ConvGruParams {
    pub fn zeros(channels: usize) -> Self {
        let wc = || ConvParams::zeros(channels, channels, true);
        let uc = || ConvParams::zeros(channels, channels, false);
        Self {
            wz: wc(),
            uz: uc(),
            wr: wc(),
            ur: uc(),
            w: wc(),
            u: uc(),
        }
    }

    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            wz: ConvParams::init(channels, channels, true, rng),
            uz: ConvParams::init(channels, channels, false, rng),
            wr: ConvParams::init(channels, channels, true, rng),
            ur: ConvParams::init(channels, channels, false, rng),
            w: ConvParams::init(channels, channels, true, rng),
            u: ConvParams::init(channels, channels, false, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.w.out_channels()
    }

    fn gates(&self) -> [(&'static str, &ConvParams); 6] {
        [
            ("wz", &self.wz),
            ("uz", &self.uz),
            ("wr", &self.wr),
            ("ur", &self.ur),
            ("w", &self.w),
            ("u", &self.u),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.gates().iter().map(|(_, p)| p.param_count()).sum()
    }

    pub fn bind(&self, g: &mut Graph, vars: &mut Vec<Var>) -> ConvGruVars {
        ConvGruVars {
            wz: self.wz.bind(g, vars),
            uz: self.uz.bind(g, vars),
            wr: self.wr.bind(g, vars),
            ur: self.ur.bind(g, vars),
            w: self.w.bind(g, vars),
            u: self.u.bind(g, vars),
        }
    }

    pub fn for_each(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor4)) {
        for (name, p) in self.gates() {
            p.for_each(&format!("{prefix}.{name}"), f);
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor4)) {
        self.wz.for_each_mut(&format!("{prefix}.wz"), f);
        self.uz.for_each_mut(&format!("{prefix}.uz"), f);
        self.wr.for_each_mut(&format!("{prefix}.wr"), f);
        self.ur.for_each_mut(&format!("{prefix}.ur"), f);
        self.w.for_each_mut(&format!("{prefix}.w"), f);
        self.u.for_each_mut(&format!("{prefix}.u"), f);
    }
}

/// Intermediate ConvGRU nodes.
#[derive(Debug, Clone, Copy)]
pub struct GruNodes {
    pub update: Var,
    pub reset: Var,
    pub candidate: Var,
    pub hidden: Var,
}

/// Records one ConvGRU step on `g`:
/// `z = σ(Wz∗x + Uz∗h)`, `r = σ(Wr∗x + Ur∗h)`,
/// `h̃ = tanh(W∗x + U∗(r⊙h))`, `h' = (1−z)⊙h + z⊙h̃`.
pub fn gru_graph(g: &mut Graph, p: &ConvGruVars, x: Var, h_prev: Var) -> Result<GruNodes> {
    if g.shape(x) != g.shape(h_prev) {
        return Err(Error::Shape(format!(
            "ConvGRU inputs differ: {:?} vs {:?}",
            g.shape(x),
            g.shape(h_prev)
        )));
    }
    let gate = |g: &mut Graph, w: &ConvVars, u: &ConvVars, h: Var| -> Result<Var> {
        let a = w.apply(g, x)?;
        let b = u.apply(g, h)?;
        g.add(a, b)
    };
    let zl = gate(g, &p.wz, &p.uz, h_prev)?;
    let update = g.sigmoid(zl);
    let rl = gate(g, &p.wr, &p.ur, h_prev)?;
    let reset = g.sigmoid(rl);
    let rh = g.hadamard(reset, h_prev)?;
    let cl = gate(g, &p.w, &p.u, rh)?;
    let candidate = g.tanh(cl);
    let neg_h = g.scale(h_prev, -1.0);
    let step = g.add(candidate, neg_h)?;
    let gated = g.hadamard(update, step)?;
    let hidden = g.add(h_prev, gated)?;
    Ok(GruNodes {
        update,
        reset,
        candidate,
        hidden,
    })
}

/// One ConvGRU step on feature maps.
pub fn conv_gru_step(x: &FeatureMap, h_prev: &FeatureMap, p: &ConvGruParams) -> Result<FeatureMap> {
    check_cell_inputs(x, h_prev, p.channels())?;
    let mut g = Graph::new();
    let mut vars = Vec::new();
    let pv = p.bind(&mut g, &mut vars);
    let xv = g.leaf(Tensor4::from_map(x));
    let hv = g.leaf(Tensor4::from_map(h_prev));
    let out = gru_graph(&mut g, &pv, xv, hv)?;
    Ok(g.value(out.hidden).to_map(0))
}

/// A fusion cell with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionCell {
    Ssma(SsmaParams),
    ConvGru(ConvGruParams),
}

impl FusionCell {
    pub fn channels(&self) -> usize {
        match self {
            FusionCell::Ssma(p) => p.channels(),
            FusionCell::ConvGru(p) => p.channels(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            FusionCell::Ssma(p) => p.param_count(),
            FusionCell::ConvGru(p) => p.param_count(),
        }
    }
}

/// Bound cell handles.
#[derive(Debug, Clone, Copy)]
pub enum FusionCellVars {
    Ssma(SsmaVars),
    ConvGru(ConvGruVars),
}

impl FusionCell {
    pub fn bind(&self, g: &mut Graph, vars: &mut Vec<Var>) -> FusionCellVars {
        match self {
            FusionCell::Ssma(p) => FusionCellVars::Ssma(p.bind(g, vars)),
            FusionCell::ConvGru(p) => FusionCellVars::ConvGru(p.bind(g, vars)),
        }
    }
}

impl FusionCellVars {
    /// Fuses `current` with `prior`; the result is both the layer output and
    /// the next recurrent state.
    pub fn apply(&self, g: &mut Graph, current: Var, prior: Var) -> Result<Var> {
        match self {
            FusionCellVars::Ssma(p) => Ok(ssma_graph(g, p, current, prior)?.fused),
            FusionCellVars::ConvGru(p) => Ok(gru_graph(g, p, current, prior)?.hidden),
        }
    }
}

/// Recurrent state of one fusion layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FusionState {
    /// GRU hidden state or the previous SSMA output; `None` before the first frame.
    pub hidden: Option<FeatureMap>,
    pub frame_index: usize,
}

/// Whether the prior is registered into the current camera before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorMode {
    Temporal,
    SpatialTemporal,
}

/// Geometry needed to register a prior: depth of the prior frame at full
/// resolution and the camera motion from the prior to the current frame.
#[derive(Debug, Clone, Copy)]
pub struct Registration<'a> {
    pub depth_full: &'a DepthImage,
    pub tc: &'a Pose,
    pub k: &'a CameraIntrinsics,
}

/// One ST-Fusion layer step: builds the prior from `state`, fuses it with
/// `f_t`, and returns the fused map with the advanced state.
pub fn st_fusion_step(
    f_t: &FeatureMap,
    state: &FusionState,
    registration: Registration<'_>,
    cell: &FusionCell,
    mode: PriorMode,
) -> Result<(FeatureMap, FusionState)> {
    let prior = match &state.hidden {
        None => FeatureMap::filled(f_t.channels(), f_t.height(), f_t.width(), DEFAULT_FILL),
        Some(h) => {
            if !h.same_shape(f_t) {
                return Err(Error::Shape("fusion state does not match the feature map".into()));
            }
            match mode {
                PriorMode::Temporal => h.clone(),
                PriorMode::SpatialTemporal => {
                    warp::register_prior(h, registration.depth_full, registration.tc, registration.k)?.map
                }
            }
        }
    };
    let out = match cell {
        FusionCell::Ssma(p) => ssma_forward(f_t, &prior, p)?,
        FusionCell::ConvGru(p) => conv_gru_step(f_t, &prior, p)?,
    };
    let next = FusionState {
        hidden: Some(out.clone()),
        frame_index: state.frame_index + 1,
    };
    Ok((out, next))
}
