//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. The training trends (9 to 11) take the bulk of the
//! runtime.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::rc::Rc;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stwarp::fusion::{conv_gru_step, ssma_forward, ConvGruParams, SsmaConfig, SsmaParams};
use stwarp::io::Dataset;
use stwarp::metrics::{class_weights, iou_from_confusion, ConfusionMatrix, DEFAULT_EPSILON};
use stwarp::nn::{ops, Graph, Tensor4, Var};
use stwarp::odometry::{inject_noise, refine_with_depth, IcpConfig, NoiseSpec, PoseSource};
use stwarp::pipeline::model::frame_input;
use stwarp::pipeline::{
    build_model, evaluate, sequence_graph, sequence_plans, train_toy, EvalConfig, ModelConfig, SequenceSpec, Split,
    TrainConfig, TrainOutcome, Variant,
};
use stwarp::sequencing::{sample_random, sample_regular, Frame, Spacing};
use stwarp::synthscene::{Preset, Scene, SceneConfig};
use stwarp::warp::{
    compute_shift_matrix, prior_plan, register_feature_map, register_prior, resize_shift_matrix, ScatterPlan,
};
use stwarp::{compose_camera_transform, CameraIntrinsics, DepthImage, FeatureMap, Pose, RgbImage};

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- oracles

/// Scalar double-loop registration: back-project, move, project, round half
/// up, keep the nearest target depth with the earliest source on ties.
fn scatter_oracle(f: &FeatureMap, depth: &DepthImage, tc: &Pose, k: &CameraIntrinsics, fill: f64) -> (Vec<f64>, Vec<bool>) {
    let (c, h, w) = (f.channels(), f.height(), f.width());
    let inv = tc.inverse();
    let r = inv.rotation_matrix();
    let t = *inv.translation();
    let mut out = vec![fill; c * h * w];
    let mut zbuf = vec![f64::INFINITY; h * w];
    let mut hit = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let d = depth.get(y, x);
            if !(d.is_finite() && d > 0.0) {
                continue;
            }
            let d = d as f64;
            let p = [(x as f64 - k.cx) / k.fx * d, (y as f64 - k.cy) / k.fy * d, d];
            let q: Vec<f64> = (0..3)
                .map(|i| r[(i, 0)] * p[0] + r[(i, 1)] * p[1] + r[(i, 2)] * p[2] + t[i])
                .collect();
            if !(q[2] > 0.0) {
                continue;
            }
            let du = k.fx * q[0] / q[2] + k.cx - x as f64;
            let dv = k.fy * q[1] / q[2] + k.cy - y as f64;
            let tx = (x as f64 + du + 0.5).floor();
            let ty = (y as f64 + dv + 0.5).floor();
            if tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                continue;
            }
            let di = ty as usize * w + tx as usize;
            if q[2] < zbuf[di] {
                zbuf[di] = q[2];
                hit[di] = true;
                for ch in 0..c {
                    out[ch * h * w + di] = f.get(ch, y, x);
                }
            }
        }
    }
    (out, hit)
}

/// Central differences of a graph-built scalar, compared against the
/// graph's backward pass. Returns the worst `|a − n| / max(|a|, |n|, 1e-6)`.
fn fd_max_error(inputs: &[Tensor4], h: f64, per_tensor: Option<usize>, seed: u64, build: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor4]| -> f64 {
        let mut g = Graph::new();
        let v: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let out = build(&mut g, &v);
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (ii, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[ii]).cloned().unwrap_or_else(|| Tensor4::zeros(x.shape()));
        let idx: Vec<usize> = match per_tensor {
            Some(m) if m < x.len() => (0..m).map(|_| rng.gen_range(0..x.len())).collect(),
            _ => (0..x.len()).collect(),
        };
        for i in idx {
            let orig = x.data()[i];
            work[ii].data_mut()[i] = orig + h;
            let fp = eval(&work);
            work[ii].data_mut()[i] = orig - h;
            let fm = eval(&work);
            work[ii].data_mut()[i] = orig;
            let n = (fp - fm) / (2.0 * h);
            let a = analytic.data()[i];
            let e = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            worst = worst.max(if e.is_finite() { e } else { f64::INFINITY });
        }
    }
    worst
}

fn reduce(g: &mut Graph, out: Var, seed: u64) -> Var {
    let len = g.value(out).len();
    if len == 1 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    g.dot(out, Rc::new(probe)).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4 {
    Tensor4::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

// ---------------------------------------------------------------- criteria

fn c1_registration_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut collisions = 0usize;
    for trial in 0..100 {
        let w = rng.gen_range(4..=96);
        let h = rng.gen_range(4..=64);
        let c = rng.gen_range(1..=8);
        let f = rng.gen_range(0.5..1.5) * w as f64;
        let k = CameraIntrinsics::new(f, f * rng.gen_range(0.9..1.1), w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        let depth: Vec<f32> = (0..h * w)
            .map(|_| if rng.gen_bool(0.05) { 0.0 } else { rng.gen_range(0.3f32..3.0) })
            .collect();
        let depth = DepthImage::new(h, w, depth).unwrap();
        let tc = Pose::from_axis_angle(
            Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
            Vector3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)),
        );
        let fm = random_map(&mut rng, c, h, w);
        let delta = compute_shift_matrix(&depth, &tc, &k).unwrap();
        let got = register_feature_map(&fm, &delta, delta.target_depth(), 0.1).unwrap();
        let (want, hit) = scatter_oracle(&fm, &depth, &tc, &k, 0.1);
        let same = got.map.data().iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same || got.hit_mask != hit {
            return Err(format!("trial {trial} ({w}x{h}x{c}) differs from the scalar oracle"));
        }
        collisions += delta.valid_mask().iter().filter(|&&v| v).count() - hit.iter().filter(|&&v| v).count();
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        secs < 30.0,
        format!("100 triples bitwise equal, {collisions} occluded or out-of-view sources, {secs:.2} s"),
    )
}

fn c2_closed_form_shift() -> Verdict {
    let (w, h) = (96, 64);
    let k = CameraIntrinsics::new(100.0, 100.0, 48.0, 32.0, w, h).unwrap();
    let depth = DepthImage::constant(h, w, 1.0);
    let tc = Pose::from_translation(Vector3::new(0.1, 0.0, 0.0));
    let full = compute_shift_matrix(&depth, &tc, &k).unwrap();
    let half = resize_shift_matrix(&full, h / 2, w / 2).unwrap();
    let mut worst: f64 = 0.0;
    let mut count = [0usize; 2];
    for (n, (m, target)) in [(&full, -10.0), (&half, -5.0)].into_iter().enumerate() {
        for y in 0..m.height() {
            for x in 0..m.width() {
                if !m.is_valid(y, x) {
                    continue;
                }
                let (du, dv) = m.shift(y, x);
                if (du + 0.5).floor() != target || (dv + 0.5).floor() != 0.0 {
                    return Err(format!("shift ({du}, {dv}) at ({x}, {y}), expected ({target}, 0)"));
                }
                worst = worst.max((du - target).abs()).max(dv.abs());
                count[n] += 1;
            }
        }
    }
    check(
        worst <= 0.5 && count[0] == w * h && count[1] == w * h / 4,
        format!("{} full-res shifts = (-10, 0), {} half-res = (-5, 0), max deviation {worst:.1e}", count[0], count[1]),
    )
}

fn c3_occlusion() -> Verdict {
    // far wall at 1 m on the left, near board at 0.5 m on the right; moving
    // right by 5 cm shifts far pixels by -5 and near pixels by -10, so near
    // columns 10..14 and far columns 5..9 collide on columns 0..4
    let (w, h, c) = (20, 6, 3);
    let k = CameraIntrinsics::new(100.0, 100.0, 10.0, 3.0, w, h).unwrap();
    let depth: Vec<f32> = (0..h * w).map(|i| if i % w < 10 { 1.0 } else { 0.5 }).collect();
    let depth = DepthImage::new(h, w, depth).unwrap();
    let fm = FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|i| i as f64).collect()).unwrap();
    let tc = Pose::from_translation(Vector3::new(0.05, 0.0, 0.0));
    let reg = register_prior(&fm, &depth, &tc, &k).unwrap();
    let mut contested = 0;
    for y in 0..h {
        for x in 0..5 {
            contested += 1;
            for ch in 0..c {
                let near = fm.get(ch, y, x + 10);
                if reg.map.get(ch, y, x) != near {
                    return Err(format!("pixel ({x}, {y}) channel {ch}: {} instead of the near value {near}", reg.map.get(ch, y, x)));
                }
            }
        }
    }
    check(contested == 30, format!("{contested} contested pixels all carry the near surface's vector"))
}

fn c4_gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let s = [2, 3, 4, 4];
    let off_kink = |rng: &mut ChaCha8Rng| {
        Tensor4::from_fn(s, |_| rng.gen_range(0.1..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
    };
    let plan = {
        let k = CameraIntrinsics::new(8.0, 8.0, 4.0, 3.0, 8, 6).unwrap();
        let d: Vec<f32> = (0..48).map(|_| rng.gen_range(0.8f32..1.2)).collect();
        let tc = Pose::from_axis_angle(Vector3::new(0.0, 0.04, 0.0), Vector3::new(0.1, 0.0, 0.0));
        Rc::new(prior_plan(&DepthImage::new(6, 8, d).unwrap(), &tc, &k, 6, 8).unwrap())
    };
    let labels = Rc::new((0..16).map(|_| rng.gen_range(0..3u8)).collect::<Vec<_>>());
    let weights = Rc::new(vec![0.7, 1.1, 2.3]);

    type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;
    let prims: Vec<(&str, Vec<Tensor4>, f64, Build)> = vec![
        ("conv2d", vec![random_tensor(&mut rng, s), random_tensor(&mut rng, [5, 3, 3, 3]), random_tensor(&mut rng, [1, 5, 1, 1])], 1e-3,
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2])).unwrap())),
        ("sigmoid", vec![random_tensor(&mut rng, s)], 1e-5, Box::new(|g, v| g.sigmoid(v[0]))),
        ("tanh", vec![random_tensor(&mut rng, s)], 1e-5, Box::new(|g, v| g.tanh(v[0]))),
        ("relu", vec![off_kink(&mut rng)], 1e-3, Box::new(|g, v| g.relu(v[0]))),
        ("concat", vec![random_tensor(&mut rng, s), random_tensor(&mut rng, [2, 1, 4, 4])], 1e-3,
            Box::new(|g, v| g.concat(v[0], v[1]).unwrap())),
        ("hadamard", vec![random_tensor(&mut rng, s), random_tensor(&mut rng, s)], 1e-3,
            Box::new(|g, v| g.hadamard(v[0], v[1]).unwrap())),
        ("add", vec![random_tensor(&mut rng, s), random_tensor(&mut rng, s)], 1e-3, Box::new(|g, v| g.add(v[0], v[1]).unwrap())),
        ("affine", vec![random_tensor(&mut rng, s)], 1e-3, Box::new(|g, v| g.affine(v[0], -1.0, 1.0))),
        ("scale", vec![random_tensor(&mut rng, s)], 1e-3, Box::new(|g, v| g.scale(v[0], 1.7))),
        ("avg_pool2", vec![random_tensor(&mut rng, s)], 1e-3, Box::new(|g, v| g.avg_pool2(v[0]).unwrap())),
        ("upsample2", vec![random_tensor(&mut rng, s)], 1e-3, Box::new(|g, v| g.upsample2(v[0]))),
        ("scatter", vec![random_tensor(&mut rng, [1, 2, 6, 8])], 1e-3, {
            let plan = Rc::clone(&plan);
            Box::new(move |g, v| g.scatter(v[0], Rc::clone(&plan), 0.1).unwrap())
        }),
        ("cross_entropy", vec![random_tensor(&mut rng, [1, 3, 4, 4])], 1e-5, {
            let (l, w) = (Rc::clone(&labels), Rc::clone(&weights));
            Box::new(move |g, v| g.cross_entropy(v[0], Rc::clone(&l), Rc::clone(&w)).unwrap())
        }),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, (name, inputs, h, build)) in prims.iter().enumerate() {
        let e = fd_max_error(inputs, *h, None, 0, &|g, v| {
            let out = build(g, v);
            reduce(g, out, i as u64)
        });
        ok &= e < 1e-6;
        lines.push(format!("{name} {e:.1e}"));
    }

    // SSMA and a three-step ConvGRU chain, through every parameter
    let ssma = SsmaParams::init(SsmaConfig::new(4, 4).unwrap(), &mut rng).unwrap();
    let mut inputs = vec![random_tensor(&mut rng, [1, 4, 5, 5]), random_tensor(&mut rng, [1, 4, 5, 5])];
    ssma.for_each("", &mut |_, t| inputs.push(t.clone()));
    let e_ssma = fd_max_error(&inputs, 1e-5, None, 0, &|g, v| {
        use stwarp::fusion::{ssma_graph, SsmaVars};
        use stwarp::nn::ConvVars;
        let c = |i: usize| ConvVars { weight: v[i], bias: Some(v[i + 1]) };
        let p = SsmaVars { compress1: c(2), expand: c(4), compress2: c(6) };
        let out = ssma_graph(g, &p, v[0], v[1]).unwrap().fused;
        reduce(g, out, 77)
    });
    let gru = ConvGruParams::init(3, &mut rng);
    let mut inputs: Vec<Tensor4> = (0..4).map(|_| random_tensor(&mut rng, [1, 3, 5, 5])).collect();
    let mut names = Vec::new();
    gru.for_each("g", &mut |n, t| {
        names.push(n);
        inputs.push(t.clone());
    });
    let e_gru = fd_max_error(&inputs, 1e-5, None, 0, &|g, v| {
        use stwarp::fusion::{gru_graph, ConvGruVars};
        use stwarp::nn::ConvVars;
        let find = |n: &str| names.iter().position(|m| m == n).map(|i| v[4 + i]);
        let c = |n: &str| ConvVars { weight: find(&format!("g.{n}.weight")).unwrap(), bias: find(&format!("g.{n}.bias")) };
        let p = ConvGruVars { wz: c("wz"), uz: c("uz"), wr: c("wr"), ur: c("ur"), w: c("w"), u: c("u") };
        let mut h = v[3];
        for &x in &v[..3] {
            h = gru_graph(g, &p, x, h).unwrap().hidden;
        }
        reduce(g, h, 78)
    });
    ok &= e_ssma < 1e-4 && e_gru < 1e-4;
    lines.push(format!("ssma {e_ssma:.1e}"));
    lines.push(format!("gru x3 {e_gru:.1e}"));

    // full ST-Atte sequence on 16x16 with real registration plans
    let (h, w, n) = (16, 16, 3);
    let k = CameraIntrinsics::new(14.0, 14.0, 8.0, 8.0, w, h).unwrap();
    let frames: Vec<Frame> = (0..n)
        .map(|_| {
            let mut rgb = RgbImage::new(h, w);
            for y in 0..h {
                for x in 0..w {
                    rgb.set(y, x, [rng.gen(), rng.gen(), rng.gen()]);
                }
            }
            let d = (0..h * w).map(|_| rng.gen_range(0.9f32..1.3)).collect();
            Frame { rgb, depth: DepthImage::new(h, w, d).unwrap() }
        })
        .collect();
    let poses: Vec<Pose> = (0..n)
        .map(|i| Pose::from_axis_angle(Vector3::new(0.0, 0.0, 0.04 * i as f64), Vector3::new(0.08 * i as f64, 0.0, 0.0)))
        .collect();
    let mut cfg = ModelConfig::new(Variant::StAtte, 3);
    cfg.fusion_levels = BTreeSet::from([0, 1, 2]);
    let model = build_model(&cfg, 9).unwrap();
    let plans = sequence_plans(&cfg, &frames, &poses, &k, &Pose::identity()).unwrap();
    let labels = Rc::new((0..h * w).map(|_| rng.gen_range(0..3u8)).collect::<Vec<_>>());
    let mut inputs: Vec<Tensor4> = frames.iter().map(frame_input).collect();
    model.for_each(&mut |_, t| inputs.push(t.clone()));
    let e_pipe = fd_max_error(&inputs, 1e-5, Some(8), 5, &|g, v| {
        let mv = model.assemble(&v[n..]).unwrap();
        let logits = sequence_graph(g, &cfg, &mv, &v[..n], &plans).unwrap();
        g.cross_entropy(logits, Rc::clone(&labels), Rc::clone(&weights)).unwrap()
    });
    ok &= e_pipe < 1e-3;
    lines.push(format!("st-atte pipeline {e_pipe:.1e}"));
    let secs = start.elapsed().as_secs_f64();
    check(ok && secs < 120.0, format!("{} ({secs:.1} s)", lines.join(", ")))
}

fn c5_fusion_traces() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_map(&mut rng, 8, 7, 9);
    let b = random_map(&mut rng, 8, 7, 9);
    let ssma = ssma_forward(&a, &b, &SsmaParams::zeros(SsmaConfig::new(8, 16).unwrap()).unwrap()).unwrap();
    let e_ssma = ssma.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gru = conv_gru_step(&a, &b, &ConvGruParams::zeros(8)).unwrap();
    let e_gru = gru.data().iter().zip(b.data()).fold(0.0f64, |m, (o, hp)| m.max((o - 0.5 * hp).abs()));
    check(
        e_ssma <= 1e-12 && e_gru <= 1e-12,
        format!("zero SSMA max |out| {e_ssma:.1e}, zero ConvGRU max |out - h/2| {e_gru:.1e}"),
    )
}

fn c6_metric_identities() -> Verdict {
    let c = 5;
    let logits = Tensor4::zeros([1, c, 6, 7]);
    let labels: Vec<u8> = (0..42).map(|i| (i % c) as u8).collect();
    let ce = ops::weighted_cross_entropy(&logits, &labels, &[1.0; 5]).unwrap();
    let e_ce = (ce - (c as f64).ln()).abs();
    let w = [0.3, 1.0, 2.0, 4.0, 0.1];
    let wce = ops::weighted_cross_entropy(&logits, &labels, &w).unwrap();
    let mean_w = labels.iter().map(|&l| w[l as usize]).sum::<f64>() / labels.len() as f64;
    let e_wce = (wce - mean_w * (c as f64).ln()).abs();

    let mut cm = ConfusionMatrix::new(3);
    cm.accumulate(&[0, 1, 2, 2, 1, 0, 0], &[0, 1, 2, 2, 1, 0, 0]).unwrap();
    let r = iou_from_confusion(&cm, None).unwrap();
    let perfect = r.per_class_iou.iter().all(|v| *v == Some(100.0)) && r.miou == 100.0 && r.wiou == 100.0;

    let areas = [5000u64, 2000, 700, 300, 10];
    let w = class_weights(&areas, DEFAULT_EPSILON).unwrap().weights;
    let monotone = w.iter().all(|&v| v > 0.0) && w.windows(2).all(|p| p[0] < p[1]);
    check(
        e_ce <= 1e-9 && e_wce <= 1e-9 && perfect && monotone,
        format!("|CE - ln 5| = {e_ce:.1e}, weighted {e_wce:.1e}, diagonal IoU 100: {perfect}, weights {w:.3?}"),
    )
}

fn c7_sampler() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let last = rng.gen_range(4..200);
        let s = sample_random(last, 5, 6, &mut rng).unwrap();
        if *s.last().unwrap() != last || s.windows(2).any(|p| p[1] <= p[0] || p[1] - p[0] > 6) {
            return Err(format!("bad sequence {s:?}"));
        }
    }
    for last in 4..100 {
        if sample_random(last, 5, 1, &mut rng).unwrap() != sample_regular(last, 5).unwrap() {
            return Err(format!("delta_max = 1 differs from regular spacing at {last}"));
        }
    }
    // 15,000 sequences far from frame 0 give 60,000 independent gaps
    let mut counts = [0u64; 6];
    for _ in 0..15_000 {
        let s = sample_random(10_000, 5, 6, &mut rng).unwrap();
        for p in s.windows(2) {
            counts[p[1] - p[0] - 1] += 1;
        }
    }
    let n: f64 = 60_000.0;
    let (p, e) = (1.0 / 6.0, n / 6.0);
    let sigma = (n * p * (1.0 - p)).sqrt();
    let worst = counts.iter().map(|&c| (c as f64 - e).abs() / sigma).fold(0.0, f64::max);
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // chi-square with 5 degrees of freedom: mean 5, sd sqrt(10)
    let chi2_bound = 5.0 + 3.0 * 10f64.sqrt();
    check(
        worst <= 3.0 && chi2 <= chi2_bound,
        format!("gaps in [1, 6], counts {counts:?}, max |z| {worst:.2}, chi2 {chi2:.2} <= {chi2_bound:.2}"),
    )
}

fn c8_icp() -> Verdict {
    let mut injected = 0.0;
    let mut refined = 0.0;
    for seed in 0..20u64 {
        let scene = Scene::new(SceneConfig::preset(Preset::Sb, 8, 100 + seed)).unwrap();
        let (i, j) = (2, 3 + (seed % 3) as usize);
        let (a, b) = (scene.render_frame(i), scene.render_frame(j));
        let truth = scene.config.robot_pose(i).inverse() * scene.config.robot_pose(j);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = inject_noise(&truth, &NoiseSpec { sigma_t: 0.01, sigma_r: 0.5 }, &mut rng);
        let r = refine_with_depth(&noisy, &a.depth, &b.depth, &scene.intrinsics, &scene.extrinsics_pose(), &IcpConfig::default());
        let est = r.map(|r| r.pose).unwrap_or(noisy);
        injected += noisy.error_to(&truth);
        refined += est.error_to(&truth);
    }
    let ratio = refined / injected;

    let scene = Scene::new(SceneConfig::preset(Preset::Sb, 4, 1)).unwrap();
    let f = scene.render_frame(1);
    let r = refine_with_depth(&Pose::identity(), &f.depth, &f.depth, &scene.intrinsics, &scene.extrinsics_pose(), &IcpConfig::default())
        .map_err(|e| e.to_string())?;
    let id_err = r.pose.error_to(&Pose::identity());
    check(
        ratio <= 0.5 && id_err <= 1e-9,
        format!(
            "mean injected error {:.4}, refined {:.4} (ratio {ratio:.3}); identity pair error {id_err:.1e}",
            injected / 20.0,
            refined / 20.0
        ),
    )
}

// Training trends -------------------------------------------------------

const SEEDS: [u64; 3] = [1, 2, 3];
const EPOCHS: usize = 20;

struct World {
    ds: Dataset,
    split: Split,
}

fn world(seed: u64) -> World {
    let cfg = SceneConfig {
        image_w: 48,
        image_h: 32,
        ..SceneConfig::preset(Preset::Sb, 600, seed)
    };
    let ds = Scene::new(cfg).unwrap().dataset().unwrap();
    let split = Split::along_trajectory(&ds, 5).unwrap();
    World { ds, split }
}

fn train(w: &World, variant: Variant, spacing: Spacing, seed: u64) -> TrainOutcome {
    let t = Instant::now();
    let cfg = TrainConfig {
        epochs: EPOCHS,
        spacing,
        seed,
        ..Default::default()
    };
    let model = build_model(&ModelConfig::new(variant, 3), seed).unwrap();
    let out = train_toy(model, &w.ds, &w.split.train, &w.split.val, &cfg).unwrap();
    eprintln!("  trained {variant} ({spacing}, seed {seed}) in {:.0} s", t.elapsed().as_secs_f64());
    out
}

fn test_miou(w: &World, out: &TrainOutcome, spacing: Spacing, poses: PoseSource, seed: u64) -> f64 {
    let cfg = EvalConfig {
        sequence: SequenceSpec {
            spacing,
            ..Default::default()
        },
        pose_source: poses,
        seed: 1000 + seed,
        threads: 1,
    };
    evaluate(&out.model, &w.ds, &w.split.test, &cfg, Some(&out.class_weights)).unwrap().iou.miou
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Test mIoU per seed for every evaluation of the trend criteria.
#[derive(Default)]
struct TrendResults {
    // criterion 9: trained and tested on random spacing
    bl_random: Vec<f64>,
    st_atte_random: Vec<f64>,
    // criterion 10: trained on regular spacing, (variant, [reg, rnd]) per seed
    framerate: Vec<(Variant, f64, f64)>,
    // criterion 11: ST variants trained and tested on regular spacing
    odometry: Vec<(Variant, PoseSource, f64)>,
    bl_regular: Vec<f64>,
}

fn run_trends() -> TrendResults {
    let mut r = TrendResults::default();
    for seed in SEEDS {
        let w = world(seed);
        let bl = train(&w, Variant::Bl, Spacing::Random, seed);
        r.bl_random.push(test_miou(&w, &bl, Spacing::Random, PoseSource::GroundTruth, seed));
        let st = train(&w, Variant::StAtte, Spacing::Random, seed);
        r.st_atte_random.push(test_miou(&w, &st, Spacing::Random, PoseSource::GroundTruth, seed));

        let bl = train(&w, Variant::Bl, Spacing::Regular, seed);
        r.bl_regular.push(test_miou(&w, &bl, Spacing::Regular, PoseSource::GroundTruth, seed));
        for v in [Variant::TGru, Variant::StGru, Variant::TAtte, Variant::StAtte] {
            let out = train(&w, v, Spacing::Regular, seed);
            let reg = test_miou(&w, &out, Spacing::Regular, PoseSource::GroundTruth, seed);
            let rnd = test_miou(&w, &out, Spacing::Random, PoseSource::GroundTruth, seed);
            r.framerate.push((v, reg, rnd));
            if v.is_spatial() {
                for p in [PoseSource::Wheel, PoseSource::Refined] {
                    r.odometry.push((v, p, test_miou(&w, &out, Spacing::Regular, p, seed)));
                }
            }
        }
    }
    r
}

fn c9_st_over_baseline(r: &TrendResults) -> Verdict {
    let (bl, st) = (mean(&r.bl_random), mean(&r.st_atte_random));
    check(
        st >= bl + 1.0,
        format!("random spacing, 3 seeds: BL {bl:.2}, ST-Atte {st:.2} ({:+.2})", st - bl),
    )
}

fn degradation(r: &TrendResults, v: Variant) -> f64 {
    let d: Vec<f64> = r.framerate.iter().filter(|x| x.0 == v).map(|x| (x.1 - x.2).abs()).collect();
    mean(&d)
}

fn c10_framerate(r: &TrendResults) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for st in [Variant::StGru, Variant::StAtte] {
        let t = st.temporal_counterpart().unwrap();
        let (ds, dt) = (degradation(r, st), degradation(r, t));
        ok &= ds < dt;
        parts.push(format!("{st} |reg-rnd| {ds:.2} vs {t} {dt:.2}"));
    }
    check(ok, parts.join("; "))
}

fn c11_odometry(r: &TrendResults) -> Verdict {
    let bl = mean(&r.bl_regular);
    let mut ok = true;
    let mut parts = Vec::new();
    for v in [Variant::StGru, Variant::StAtte] {
        let m = |p: PoseSource| {
            mean(&r.odometry.iter().filter(|x| x.0 == v && x.1 == p).map(|x| x.2).collect::<Vec<_>>())
        };
        let (wheel, refined) = (m(PoseSource::Wheel), m(PoseSource::Refined));
        ok &= refined >= wheel && wheel > bl && refined > bl;
        let gt = mean(&r.framerate.iter().filter(|x| x.0 == v).map(|x| x.1).collect::<Vec<_>>());
        parts.push(format!("{v} wheel {wheel:.2} refined {refined:.2} (true poses {gt:.2})"));
    }
    check(ok, format!("{}; BL {bl:.2}", parts.join("; ")))
}

fn c12_render_warp_consistency() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut agree, mut total) = (0usize, 0usize);
    for preset in [Preset::Sb, Preset::Bup] {
        let scene = Scene::new(SceneConfig::preset(preset, 60, 12)).unwrap();
        let te = scene.extrinsics_pose();
        for _ in 0..15 {
            let i = rng.gen_range(0..50);
            let j = i + rng.gen_range(1..=6);
            let (a, b) = (scene.render_frame(i), scene.render_frame(j));
            let tr = scene.config.robot_pose(i).inverse() * scene.config.robot_pose(j);
            let tc = compose_camera_transform(&tr, &te);
            let (h, w) = (a.labels.height, a.labels.width);
            let labels = FeatureMap::from_vec(1, h, w, a.labels.data.iter().map(|&l| l as f64).collect()).unwrap();
            let delta = compute_shift_matrix(&a.depth, &tc, &scene.intrinsics).unwrap();
            let plan = ScatterPlan::build(&delta, delta.target_depth()).unwrap();
            for d in 0..h * w {
                if let Some(src) = plan.winner(d) {
                    total += 1;
                    agree += (labels.data()[src] as u8 == b.labels.data[d]) as usize;
                }
            }
        }
    }
    let frac = agree as f64 / total as f64;
    check(
        frac >= 0.98,
        format!("{:.2}% of {total} warped labels agree over 30 pairs with gaps 1..6", 100.0 * frac),
    )
}

fn run(n: usize, f: impl FnOnce() -> Verdict) -> bool {
    let t = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = t.elapsed().as_secs_f64();
    match &v {
        Ok(d) => println!("criterion {n:>2}: PASS  {d}  [{secs:.1} s]"),
        Err(d) => println!("criterion {n:>2}: FAIL  {d}  [{secs:.1} s]"),
    }
    v.is_ok()
}

fn main() {
    let mut passed = vec![
        run(1, c1_registration_oracle),
        run(2, c2_closed_form_shift),
        run(3, c3_occlusion),
        run(4, c4_gradients),
        run(5, c5_fusion_traces),
        run(6, c6_metric_identities),
        run(7, c7_sampler),
        run(8, c8_icp),
    ];
    let t = Instant::now();
    let trends = catch_unwind(run_trends);
    eprintln!("  trend training took {:.0} s", t.elapsed().as_secs_f64());
    match &trends {
        Ok(r) => {
            passed.push(run(9, || c9_st_over_baseline(r)));
            passed.push(run(10, || c10_framerate(r)));
            passed.push(run(11, || c11_odometry(r)));
        }
        Err(_) => {
            for n in 9..=11 {
                passed.push(run(n, || Err("training run panicked".into())));
            }
        }
    }
    passed.push(run(12, c12_render_warp_consistency));
    let failed: Vec<usize> = passed.iter().enumerate().filter(|(_, &p)| !p).map(|(i, _)| i + 1).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
