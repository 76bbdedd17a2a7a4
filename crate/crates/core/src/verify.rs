//! Finite-difference gradient suite over every differentiable operation,
//! the fusion cells and the full recurrent pipeline.

use std::collections::BTreeSet;
use std::rc::Rc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fusion::{gru_graph, ssma_graph, ConvGruParams, SsmaConfig, SsmaParams};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::nn::{grad_check, GradCheckOptions, GradCheckReport, Tensor4, Var};
use crate::pipeline::{build_model, sequence_graph, sequence_plans, ModelConfig, Variant};
use crate::raster::DepthImage;
use crate::sequencing::Frame;
use crate::warp::{prior_plan, DEFAULT_FILL};
use crate::RgbImage;

/// Error bound for single operations.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
/// Error bound for the SSMA graph and the unrolled ConvGRU.
pub const CELL_TOLERANCE: f64 = 1e-4;
/// Error bound for the end-to-end pipeline.
pub const PIPELINE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub tolerance: f64,
    pub passed: bool,
    pub report: GradCheckReport,
}

fn random(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4 {
    Tensor4::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero so no finite-difference step crosses the
/// ReLU kink.
fn off_kink(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4 {
    Tensor4::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn entry(name: &str, tolerance: f64, report: GradCheckReport) -> SuiteEntry {
    SuiteEntry {
        name: name.to_string(),
        tolerance,
        passed: report.max_rel_error < tolerance,
        report,
    }
}

/// A plan with collisions and holes: a tilted depth field seen after a
/// sideways move and a small rotation.
fn test_plan(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<Rc<crate::warp::ScatterPlan>> {
    let k = CameraIntrinsics::new(w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h)?;
    let data = (0..h * w)
        .map(|i| (1.0 + 0.3 * ((i % w) as f64 / w as f64) + rng.gen_range(0.0..0.2)) as f32)
        .collect();
    let depth = DepthImage::new(h, w, data)?;
    let tc = Pose::from_axis_angle(Vector3::new(0.0, 0.05, 0.02), Vector3::new(0.12, -0.03, 0.02));
    Ok(Rc::new(prior_plan(&depth, &tc, &k, h, w)?))
}

/// Checks every differentiable operation in isolation.
pub fn primitive_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exact = GradCheckOptions::with_h(1e-3);
    let smooth = GradCheckOptions::default();
    let mut out = Vec::new();
    let s = [2, 3, 4, 5];

    let x = random(&mut rng, s);
    let w = random(&mut rng, [4, 3, 3, 3]);
    let b = random(&mut rng, [1, 4, 1, 1]);
    let r = grad_check(&[x, w, b], &exact, |g, v| g.conv2d(v[0], v[1], Some(v[2])))?;
    out.push(entry("conv2d", PRIMITIVE_TOLERANCE, r));

    let r = grad_check(&[random(&mut rng, s)], &smooth, |g, v| Ok(g.sigmoid(v[0])))?;
    out.push(entry("sigmoid", PRIMITIVE_TOLERANCE, r));
    let r = grad_check(&[random(&mut rng, s)], &smooth, |g, v| Ok(g.tanh(v[0])))?;
    out.push(entry("tanh", PRIMITIVE_TOLERANCE, r));
    let r = grad_check(&[off_kink(&mut rng, s)], &exact, |g, v| Ok(g.relu(v[0])))?;
    out.push(entry("relu", PRIMITIVE_TOLERANCE, r));

    let pair = [random(&mut rng, s), random(&mut rng, [2, 2, 4, 5])];
    let r = grad_check(&pair, &exact, |g, v| g.concat(v[0], v[1]))?;
    out.push(entry("concat", PRIMITIVE_TOLERANCE, r));
    let pair = [random(&mut rng, s), random(&mut rng, s)];
    let r = grad_check(&pair, &exact, |g, v| g.hadamard(v[0], v[1]))?;
    out.push(entry("hadamard", PRIMITIVE_TOLERANCE, r));
    let r = grad_check(&pair, &exact, |g, v| g.add(v[0], v[1]))?;
    out.push(entry("add", PRIMITIVE_TOLERANCE, r));
    let r = grad_check(&[random(&mut rng, s)], &exact, |g, v| Ok(g.affine(v[0], -1.0, 1.0)))?;
    out.push(entry("affine", PRIMITIVE_TOLERANCE, r));
    let r = grad_check(&[random(&mut rng, s)], &exact, |g, v| Ok(g.scale(v[0], 0.37)))?;
    out.push(entry("scale", PRIMITIVE_TOLERANCE, r));
    let r = grad_check(&[random(&mut rng, [2, 3, 4, 6])], &exact, |g, v| g.avg_pool2(v[0]))?;
    out.push(entry("avg_pool2", PRIMITIVE_TOLERANCE, r));
    let r = grad_check(&[random(&mut rng, s)], &exact, |g, v| Ok(g.upsample2(v[0])))?;
    out.push(entry("upsample2", PRIMITIVE_TOLERANCE, r));

    let plan = test_plan(8, 10, &mut rng)?;
    let r = grad_check(&[random(&mut rng, [1, 3, 8, 10])], &exact, |g, v| {
        g.scatter(v[0], Rc::clone(&plan), DEFAULT_FILL)
    })?;
    out.push(entry("scatter", PRIMITIVE_TOLERANCE, r));

    let labels: Rc<Vec<u8>> = Rc::new((0..20).map(|_| rng.gen_range(0..3)).collect());
    let weights = Rc::new(vec![1.3, 0.4, 2.0]);
    let r = grad_check(&[random(&mut rng, [1, 3, 4, 5])], &smooth, |g, v| {
        g.cross_entropy(v[0], Rc::clone(&labels), Rc::clone(&weights))
    })?;
    out.push(entry("cross_entropy", PRIMITIVE_TOLERANCE, r));
    Ok(out)
}

/// SSMA graph and a three-step ConvGRU chain, with respect to inputs and
/// every parameter.
pub fn cell_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradCheckOptions::default();
    let mut out = Vec::new();

    let ssma = SsmaParams::init(SsmaConfig::new(4, 4)?, &mut rng)?;
    let mut inputs = vec![random(&mut rng, [1, 4, 5, 6]), random(&mut rng, [1, 4, 5, 6])];
    ssma.for_each("", &mut |_, t| inputs.push(t.clone()));
    let r = grad_check(&inputs, &opts, |g, v| {
        let mut params = Vec::new();
        let pv = ssma.bind(g, &mut params);
        // rebind the cell onto the checked leaves
        let pv = rebind(pv, &params, &v[2..]);
        Ok(ssma_graph(g, &pv, v[0], v[1])?.fused)
    })?;
    out.push(entry("ssma", CELL_TOLERANCE, r));

    let gru = ConvGruParams::init(3, &mut rng);
    let steps = 3;
    let mut inputs: Vec<Tensor4> = (0..steps).map(|_| random(&mut rng, [1, 3, 5, 5])).collect();
    inputs.push(random(&mut rng, [1, 3, 5, 5]));
    gru.for_each("", &mut |_, t| inputs.push(t.clone()));
    let r = grad_check(&inputs, &opts, |g, v| {
        let mut params = Vec::new();
        let pv = gru.bind(g, &mut params);
        let pv = rebind(pv, &params, &v[steps + 1..]);
        let mut h = v[steps];
        for &x in &v[..steps] {
            h = gru_graph(g, &pv, x, h)?.hidden;
        }
        Ok(h)
    })?;
    out.push(entry("conv_gru_3_steps", CELL_TOLERANCE, r));
    Ok(out)
}

/// Maps handles bound by a cell onto the checker's leaves, which hold the
/// same tensors in the same order.
fn rebind<T>(bound: T, from: &[Var], to: &[Var]) -> T
where
    T: MapVars,
{
    bound.map_vars(&|v| {
        let i = from.iter().position(|&f| f == v).expect("bound parameter");
        to[i]
    })
}

/// Rewrites every graph handle held by a parameter set.
pub trait MapVars {
    fn map_vars(self, f: &dyn Fn(Var) -> Var) -> Self;
}

impl MapVars for crate::nn::ConvVars {
    fn map_vars(self, f: &dyn Fn(Var) -> Var) -> Self {
        Self {
            weight: f(self.weight),
            bias: self.bias.map(f),
        }
    }
}

impl MapVars for crate::fusion::SsmaVars {
    fn map_vars(self, f: &dyn Fn(Var) -> Var) -> Self {
        Self {
            compress1: self.compress1.map_vars(f),
            expand: self.expand.map_vars(f),
            compress2: self.compress2.map_vars(f),
        }
    }
}

impl MapVars for crate::fusion::ConvGruVars {
    fn map_vars(self, f: &dyn Fn(Var) -> Var) -> Self {
        Self {
            wz: self.wz.map_vars(f),
            uz: self.uz.map_vars(f),
            wr: self.wr.map_vars(f),
            ur: self.ur.map_vars(f),
            w: self.w.map_vars(f),
            u: self.u.map_vars(f),
        }
    }
}

/// Weighted loss of a full ST-Atte sequence on a 16×16 scene with real
/// registration plans, checked against every parameter tensor and every
/// input image. Each tensor is subsampled to `per_tensor` elements.
pub fn pipeline_suite(seed: u64, per_tensor: usize) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, len) = (16, 16, 3);
    let k = CameraIntrinsics::new(14.0, 14.0, 8.0, 8.0, w, h)?;
    let te = Pose::identity();
    let frames: Vec<Frame> = (0..len)
        .map(|_| {
            let mut rgb = RgbImage::new(h, w);
            for y in 0..h {
                for x in 0..w {
                    rgb.set(y, x, [rng.gen(), rng.gen(), rng.gen()]);
                }
            }
            let depth = (0..h * w).map(|_| rng.gen_range(0.9f32..1.3)).collect();
            Frame {
                rgb,
                depth: DepthImage::new(h, w, depth).expect("sized"),
            }
        })
        .collect();
    let poses: Vec<Pose> = (0..len)
        .map(|i| Pose::from_axis_angle(Vector3::new(0.0, 0.0, 0.03 * i as f64), Vector3::new(0.07 * i as f64, 0.02, 0.0)))
        .collect();
    let mut cfg = ModelConfig::new(Variant::StAtte, 3);
    cfg.fusion_levels = BTreeSet::from([0, 1, 2]);
    let model = build_model(&cfg, seed)?;
    let plans = sequence_plans(&cfg, &frames, &poses, &k, &te)?;
    let labels: Rc<Vec<u8>> = Rc::new((0..h * w).map(|_| rng.gen_range(0..3)).collect());
    let weights = Rc::new(vec![0.5, 1.5, 2.5]);

    let mut inputs: Vec<Tensor4> = frames.iter().map(crate::pipeline::model::frame_input).collect();
    model.for_each(&mut |_, t| inputs.push(t.clone()));
    let opts = GradCheckOptions {
        max_per_input: Some(per_tensor),
        seed,
        ..Default::default()
    };
    let r = grad_check(&inputs, &opts, |g, v| {
        let mv = model.assemble(&v[len..])?;
        let logits = sequence_graph(g, &cfg, &mv, &v[..len], &plans)?;
        g.cross_entropy(logits, Rc::clone(&labels), Rc::clone(&weights))
    })?;
    Ok(vec![entry("st_atte_pipeline", PIPELINE_TOLERANCE, r)])
}

/// Every check in the suite.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut out = primitive_suite(seed)?;
    out.extend(cell_suite(seed)?);
    out.extend(pipeline_suite(seed, 12)?);
    Ok(out)
}
