//! Spatial registration of feature maps between frames.
//!
//! A prior frame's feature map is moved into the current camera's pixel grid
//! by forward-scattering every element along its reprojection shift. The
//! shift field is computed once at depth resolution and resampled for each
//! decoder resolution. Collisions are resolved with a z-buffer on the depth
//! each element would have in the current camera.
//!
//! Pose convention: `tc` is the pose of the current camera `j` expressed in
//! the prior camera `i` (the camera motion, as produced by
//! [`compose_camera_transform`](crate::geometry::compose_camera_transform)).
//! Points observed in `i` are carried into `j` by `tc⁻¹`.

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pixel, Pose};
use crate::raster::{DepthImage, FeatureMap};

pub use crate::raster::is_valid_depth;

/// Value of registered pixels that receive no element.
pub const DEFAULT_FILL: f64 = 0.1;

/// Per-pixel reprojection displacement with validity mask and the depth each
/// element lands at in the target camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftMatrix {
    height: usize,
    width: usize,
    du: Vec<f64>,
    dv: Vec<f64>,
    target_depth: Vec<f64>,
    valid: Vec<bool>,
}

impl ShiftMatrix {
    /// Uniform field, mainly for tests and demos.
    pub fn uniform(height: usize, width: usize, du: f64, dv: f64, depth: f64) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            du: vec![du; n],
            dv: vec![dv; n],
            target_depth: vec![depth; n],
            valid: vec![true; n],
        }
    }

    pub fn from_parts(
        height: usize,
        width: usize,
        du: Vec<f64>,
        dv: Vec<f64>,
        target_depth: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = height * width;
        if du.len() != n || dv.len() != n || target_depth.len() != n || valid.len() != n {
            return Err(Error::Shape("shift matrix component lengths differ".into()));
        }
        Ok(Self {
            height,
            width,
            du,
            dv,
            target_depth,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shift(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.du[i], self.dv[i])
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn du(&self) -> &[f64] {
        &self.du
    }
    pub fn dv(&self) -> &[f64] {
        &self.dv
    }
    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    /// Depth of each source element expressed in the target camera.
    pub fn target_depth(&self) -> &[f64] {
        &self.target_depth
    }
}

/// Reprojection shift of every pixel of `depth` under camera motion `tc`.
pub fn compute_shift_matrix(
    depth: &DepthImage,
    tc: &Pose,
    k: &CameraIntrinsics,
) -> Result<ShiftMatrix> {
    let (h, w) = (depth.height(), depth.width());
    if h != k.height || w != k.width {
        return Err(Error::Shape(format!(
            "depth {}x{} does not match intrinsics {}x{}",
            w, h, k.width, k.height
        )));
    }
    let to_target = tc.inverse();
    let r = to_target.rotation_matrix();
    let t = *to_target.translation();
    let n = h * w;
    let mut du = vec![0.0; n];
    let mut dv = vec![0.0; n];
    let mut zt = vec![0.0; n];
    let mut valid = vec![false; n];

    for y in 0..h {
        let ny = (y as f64 - k.cy) / k.fy;
        for x in 0..w {
            let i = y * w + x;
            let d = depth.data()[i];
            if !is_valid_depth(d) {
                continue;
            }
            let d = d as f64;
            let nx = (x as f64 - k.cx) / k.fx;
            let (px, py, pz) = (nx * d, ny * d, d);
            let qx = r[(0, 0)] * px + r[(0, 1)] * py + r[(0, 2)] * pz + t.x;
            let qy = r[(1, 0)] * px + r[(1, 1)] * py + r[(1, 2)] * pz + t.y;
            let qz = r[(2, 0)] * px + r[(2, 1)] * py + r[(2, 2)] * pz + t.z;
            if !(qz > 0.0) {
                continue;
            }
            du[i] = k.fx * qx / qz + k.cx - x as f64;
            dv[i] = k.fy * qy / qz + k.cy - y as f64;
            zt[i] = qz;
            valid[i] = true;
        }
    }
    ShiftMatrix::from_parts(h, w, du, dv, zt, valid)
}

/// Source sample positions and weights for resizing one axis with
/// pixel-center alignment.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinearly resamples the shift field to `target_h`×`target_w` and scales
/// the shifts by the resize factors. An output pixel is valid only if every
/// source pixel with non-zero weight is valid.
pub fn resize_shift_matrix(delta: &ShiftMatrix, target_h: usize, target_w: usize) -> Result<ShiftMatrix> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::Shape("resize target must be at least 1x1".into()));
    }
    let (h, w) = (delta.height, delta.width);
    let sx = target_w as f64 / w as f64;
    let sy = target_h as f64 / h as f64;
    let xs = axis_taps(w, target_w);
    let ys = axis_taps(h, target_h);
    let n = target_h * target_w;
    let mut du = vec![0.0; n];
    let mut dv = vec![0.0; n];
    let mut zt = vec![0.0; n];
    let mut valid = vec![false; n];

    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let taps = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x1, (1.0 - fy) * fx),
                (y1, x0, fy * (1.0 - fx)),
                (y1, x1, fy * fx),
            ];
            let mut ok = true;
            let (mut a, mut b, mut z) = (0.0, 0.0, 0.0);
            for &(ty, tx, wgt) in &taps {
                if wgt == 0.0 {
                    continue;
                }
                let i = ty * w + tx;
                if !delta.valid[i] {
                    ok = false;
                    break;
                }
                a += wgt * delta.du[i];
                b += wgt * delta.dv[i];
                z += wgt * delta.target_depth[i];
            }
            if ok {
                let o = oy * target_w + ox;
                du[o] = a * sx;
                dv[o] = b * sy;
                zt[o] = z;
                valid[o] = true;
            }
        }
    }
    ShiftMatrix::from_parts(target_h, target_w, du, dv, zt, valid)
}

/// Rounds to the nearest integer, ties toward positive infinity.
#[inline]
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Winner table of a z-buffered forward scatter: for every destination pixel
/// the row-major index of the source pixel that landed there, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPlan {
    height: usize,
    width: usize,
    winners: Vec<u32>,
    depth: Vec<f64>,
}

const NO_SOURCE: u32 = u32::MAX;

impl ScatterPlan {
    /// Identity plan: every pixel keeps its own element.
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            winners: (0..(height * width) as u32).collect(),
            depth: vec![0.0; height * width],
        }
    }

    /// Resolves destinations and collisions for `delta` with the element
    /// depths in `target_depth`.
    pub fn build(delta: &ShiftMatrix, target_depth: &[f64]) -> Result<Self> {
        let (h, w) = (delta.height, delta.width);
        if target_depth.len() != h * w {
            return Err(Error::Shape(format!(
                "{} target depths for a {w}x{h} shift matrix",
                target_depth.len()
            )));
        }
        let n = h * w;
        // Destination index of every source element.
        let dest: Vec<Option<usize>> = (0..n)
            .map(|i| {
                if !delta.valid[i] {
                    return None;
                }
                let x = (i % w) as f64 + delta.du[i];
                let y = (i / w) as f64 + delta.dv[i];
                let (rx, ry) = (round_half_up(x), round_half_up(y));
                (rx >= 0.0 && ry >= 0.0 && rx < w as f64 && ry < h as f64)
                    .then(|| ry as usize * w + rx as usize)
            })
            .collect();

        let mut winners = vec![NO_SOURCE; n];
        let mut zbuf = vec![f64::INFINITY; n];
        for (src, d) in dest.iter().enumerate() {
            let Some(d) = *d else { continue };
            let z = target_depth[src];
            // strict comparison: the earliest source wins equal depths
            if z < zbuf[d] {
                zbuf[d] = z;
                winners[d] = src as u32;
            }
        }
        Ok(Self {
            height: h,
            width: w,
            winners,
            depth: zbuf,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }

    /// Source index that won destination `d`.
    #[inline]
    pub fn winner(&self, d: usize) -> Option<usize> {
        let s = self.winners[d];
        (s != NO_SOURCE).then_some(s as usize)
    }

    pub fn hit_mask(&self) -> Vec<bool> {
        self.winners.iter().map(|&s| s != NO_SOURCE).collect()
    }

    pub fn hit_count(&self) -> usize {
        self.winners.iter().filter(|&&s| s != NO_SOURCE).count()
    }

    /// Gathers `src` (channel-major, `channels` planes) through the plan.
    pub fn apply(&self, src: &[f64], channels: usize, fill: f64, out: &mut [f64]) {
        let n = self.height * self.width;
        debug_assert_eq!(src.len(), channels * n);
        debug_assert_eq!(out.len(), channels * n);
        for c in 0..channels {
            let s = &src[c * n..(c + 1) * n];
            let o = &mut out[c * n..(c + 1) * n];
            for (d, slot) in o.iter_mut().enumerate() {
                let wi = self.winners[d];
                *slot = if wi == NO_SOURCE { fill } else { s[wi as usize] };
            }
        }
    }

    /// Transpose of [`apply`](Self::apply) w.r.t. the source values: each
    /// winner receives the gradient of its destination, losers receive zero.
    pub fn apply_transpose(&self, grad_out: &[f64], channels: usize, grad_src: &mut [f64]) {
        let n = self.height * self.width;
        for c in 0..channels {
            let g = &grad_out[c * n..(c + 1) * n];
            let gs = &mut grad_src[c * n..(c + 1) * n];
            for (d, &gv) in g.iter().enumerate() {
                let wi = self.winners[d];
                if wi != NO_SOURCE {
                    gs[wi as usize] += gv;
                }
            }
        }
    }
}

/// Result of registering a feature map into the target frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredMap {
    pub map: FeatureMap,
    /// Target-frame depth of the winning element; `0` where nothing landed.
    pub target_depth: DepthImage,
    pub hit_mask: Vec<bool>,
}

/// Forward-scatters `f` along `delta`, keeping the nearest element (in
/// target-frame depth) at every destination. Whole pixels win, not channels.
pub fn register_feature_map(
    f: &FeatureMap,
    delta: &ShiftMatrix,
    target_depth: &[f64],
    fill_value: f64,
) -> Result<RegisteredMap> {
    if f.height() != delta.height || f.width() != delta.width {
        return Err(Error::Shape(format!(
            "feature map {}x{} does not match shift matrix {}x{}",
            f.width(),
            f.height(),
            delta.width,
            delta.height
        )));
    }
    let plan = ScatterPlan::build(delta, target_depth)?;
    Ok(registered_from_plan(f, &plan, fill_value))
}

pub(crate) fn registered_from_plan(f: &FeatureMap, plan: &ScatterPlan, fill_value: f64) -> RegisteredMap {
    let mut out = FeatureMap::filled(f.channels(), f.height(), f.width(), fill_value);
    plan.apply(f.data(), f.channels(), fill_value, out.data_mut());
    let depth: Vec<f32> = plan
        .depth
        .iter()
        .map(|&z| if z.is_finite() { z as f32 } else { 0.0 })
        .collect();
    RegisteredMap {
        map: out,
        target_depth: DepthImage::new(plan.height, plan.width, depth).expect("sized by plan"),
        hit_mask: plan.hit_mask(),
    }
}

/// Shift field for a map of `height`×`width` derived from full-resolution
/// depth and camera motion.
pub fn shift_for_resolution(
    depth_full: &DepthImage,
    tc: &Pose,
    k: &CameraIntrinsics,
    height: usize,
    width: usize,
) -> Result<ShiftMatrix> {
    if height > depth_full.height() || width > depth_full.width() {
        return Err(Error::Shape(format!(
            "feature map {width}x{height} larger than depth {}x{}",
            depth_full.width(),
            depth_full.height()
        )));
    }
    let full = compute_shift_matrix(depth_full, tc, k)?;
    if height == full.height && width == full.width {
        Ok(full)
    } else {
        resize_shift_matrix(&full, height, width)
    }
}

/// Scatter plan registering a `height`×`width` map from the prior frame.
pub fn prior_plan(
    depth_full: &DepthImage,
    tc: &Pose,
    k: &CameraIntrinsics,
    height: usize,
    width: usize,
) -> Result<ScatterPlan> {
    let delta = shift_for_resolution(depth_full, tc, k, height, width)?;
    ScatterPlan::build(&delta, &delta.target_depth)
}

/// Registers a prior-frame feature map of any resolution up to the depth
/// resolution into the current frame, with the default hole fill.
pub fn register_prior(
    f_prior: &FeatureMap,
    depth_full: &DepthImage,
    tc: &Pose,
    k: &CameraIntrinsics,
) -> Result<RegisteredMap> {
    let delta = shift_for_resolution(depth_full, tc, k, f_prior.height(), f_prior.width())?;
    register_feature_map(f_prior, &delta, &delta.target_depth, DEFAULT_FILL)
}

/// Continuous destination of pixel `(x, y)` under `delta`.
pub fn destination(delta: &ShiftMatrix, y: usize, x: usize) -> Pixel {
    let (du, dv) = delta.shift(y, x);
    Pixel::new(x as f64 + du, y as f64 + dv)
}
