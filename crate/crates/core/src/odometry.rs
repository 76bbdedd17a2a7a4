//! Relative robot poses from wheel odometry, depth-based ICP refinement and
//! pose-noise injection.

use nalgebra::{Matrix6, SymmetricEigen, Vector3, Vector6};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose_camera_transform, CameraIntrinsics, Pixel, Point3, Pose};
use crate::raster::DepthImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryReading {
    pub timestamp: f64,
    pub pose: Pose,
}

/// Per-axis standard deviations of injected pose noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Meters.
    pub sigma_t: f64,
    /// Degrees.
    pub sigma_r: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_t: 0.01,
            sigma_r: 0.5,
        }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            sigma_t: 0.0,
            sigma_r: 0.0,
        }
    }
}

/// Pose at time `t`, interpolating translation linearly and rotation by slerp.
pub fn interpolate(log: &[OdometryReading], t: f64) -> Result<Pose> {
    let (first, last) = match (log.first(), log.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Config("empty odometry log".into())),
    };
    if !(t >= first.timestamp && t <= last.timestamp) {
        return Err(Error::Extrapolation {
            t,
            start: first.timestamp,
            end: last.timestamp,
        });
    }
    if log.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::Config("odometry timestamps must be non-decreasing".into()));
    }
    // first reading with timestamp >= t
    let hi = log.partition_point(|r| r.timestamp < t);
    let b = &log[hi];
    if b.timestamp == t || hi == 0 {
        return Ok(b.pose);
    }
    let a = &log[hi - 1];
    let s = (t - a.timestamp) / (b.timestamp - a.timestamp);
    let trans = a.pose.translation().lerp(b.pose.translation(), s);
    let rot = a.pose.rotation().slerp(b.pose.rotation(), s);
    Ok(Pose::new(rot, trans))
}

/// Pose of the robot at `t_j` expressed in its frame at `t_i`,
/// `pose(t_i)⁻¹ ∘ pose(t_j)`.
pub fn relative_pose(log: &[OdometryReading], t_i: f64, t_j: f64) -> Result<Pose> {
    if t_i == t_j {
        interpolate(log, t_i)?;
        return Ok(Pose::identity());
    }
    let pi = interpolate(log, t_i)?;
    let pj = interpolate(log, t_j)?;
    Ok(pi.inverse().compose(&pj))
}

/// Perturbs translation by per-axis Gaussian noise and rotation by a
/// per-axis Gaussian rotation vector.
pub fn inject_noise(p: &Pose, spec: &NoiseSpec, rng: &mut impl Rng) -> Pose {
    if spec.sigma_t == 0.0 && spec.sigma_r == 0.0 {
        return *p;
    }
    let nt = Normal::new(0.0, spec.sigma_t.max(0.0)).expect("finite sigma");
    let nr = Normal::new(0.0, spec.sigma_r.max(0.0).to_radians()).expect("finite sigma");
    let dt = Vector3::new(nt.sample(rng), nt.sample(rng), nt.sample(rng));
    let dw = Vector3::new(nr.sample(rng), nr.sample(rng), nr.sample(rng));
    let noise = Pose::from_axis_angle(dw, Vector3::zeros());
    Pose::new(noise.rotation() * p.rotation(), p.translation() + dt)
}

/// ICP settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the norm of the 6-vector update.
    pub min_update: f64,
    pub stride: usize,
    /// Correspondences with larger point-to-plane residual are rejected (m).
    pub residual_clamp: f64,
    pub min_correspondences: usize,
    /// Neighbouring depths differing by more than this break normal estimation (m).
    pub max_depth_jump: f64,
    /// Smallest allowed eigenvalue ratio of the normal equations.
    pub min_conditioning: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            min_update: 1e-6,
            stride: 2,
            residual_clamp: 0.05,
            min_correspondences: 100,
            max_depth_jump: 0.02,
            min_conditioning: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    /// Refined robot pose, or the initial guess when not converged.
    pub pose: Pose,
    pub converged: bool,
    pub iterations: usize,
    pub correspondences: usize,
}

/// Camera-frame points and normals of a depth image.
struct Surface {
    points: Vec<Option<Point3>>,
    normals: Vec<Option<Vector3<f64>>>,
    width: usize,
    height: usize,
}

impl Surface {
    fn new(depth: &DepthImage, k: &CameraIntrinsics, max_jump: f64) -> Self {
        let (h, w) = (depth.height(), depth.width());
        let points: Vec<Option<Point3>> = (0..h * w)
            .map(|i| {
                depth
                    .valid(i / w, i % w)
                    .map(|d| k.backproject_unchecked(Pixel::new((i % w) as f64, (i / w) as f64), d))
            })
            .collect();
        let mut normals = vec![None; h * w];
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let i = y * w + x;
                let (Some(c), Some(l), Some(r), Some(u), Some(d)) =
                    (points[i], points[i - 1], points[i + 1], points[i - w], points[i + w])
                else {
                    continue;
                };
                if [l, r, u, d].iter().any(|p| (p.z - c.z).abs() > max_jump) {
                    continue;
                }
                let n = (r - l).cross(&(d - u));
                let norm = n.norm();
                if norm < 1e-12 {
                    continue;
                }
                let mut n = n / norm;
                if n.dot(&c.coords) > 0.0 {
                    n = -n;
                }
                normals[i] = Some(n);
            }
        }
        Self {
            points,
            normals,
            width: w,
            height: h,
        }
    }
}

/// Refines the robot motion `init` (pose of frame `j` in frame `i`) by
/// point-to-plane ICP with projective association between `depth_j` and
/// `depth_i`. `te` is the camera pose in the robot frame.
pub fn refine_with_depth(
    init: &Pose,
    depth_i: &DepthImage,
    depth_j: &DepthImage,
    k: &CameraIntrinsics,
    te: &Pose,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    if depth_i.height() != k.height
        || depth_i.width() != k.width
        || depth_j.height() != k.height
        || depth_j.width() != k.width
    {
        return Err(Error::Shape("depth images must match the intrinsics".into()));
    }
    let target = Surface::new(depth_i, k, cfg.max_depth_jump);
    let stride = cfg.stride.max(1);
    let sources: Vec<Point3> = (0..k.height)
        .step_by(stride)
        .flat_map(|y| (0..k.width).step_by(stride).map(move |x| (y, x)))
        .filter_map(|(y, x)| {
            depth_j
                .valid(y, x)
                .map(|d| k.backproject_unchecked(Pixel::new(x as f64, y as f64), d))
        })
        .collect();

    let mut tc = compose_camera_transform(init, te);
    let mut correspondences = 0;
    for iter in 1..=cfg.max_iterations {
        let mut hess = Matrix6::<f64>::zeros();
        let mut grad = Vector6::<f64>::zeros();
        correspondences = 0;
        for p in &sources {
            let pt = tc.transform_point(p);
            if !(pt.z > 0.0) {
                continue;
            }
            let q = k.project_unchecked(&pt);
            let (u, v) = ((q.u + 0.5).floor(), (q.v + 0.5).floor());
            if u < 0.0 || v < 0.0 || u >= target.width as f64 || v >= target.height as f64 {
                continue;
            }
            let ti = v as usize * target.width + u as usize;
            let (Some(tp), Some(n)) = (target.points[ti], target.normals[ti]) else {
                continue;
            };
            let r = n.dot(&(pt - tp));
            if r.abs() > cfg.residual_clamp {
                continue;
            }
            let rot = pt.coords.cross(&n);
            let j = Vector6::new(rot.x, rot.y, rot.z, n.x, n.y, n.z);
            hess += j * j.transpose();
            grad += j * r;
            correspondences += 1;
        }
        if correspondences < cfg.min_correspondences {
            return Err(Error::DegenerateGeometry(format!(
                "{correspondences} valid correspondences (need {})",
                cfg.min_correspondences
            )));
        }
        let eig = SymmetricEigen::new(hess).eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        if !(hi > 0.0) || lo / hi < cfg.min_conditioning {
            return Err(Error::DegenerateGeometry(format!(
                "ill-conditioned normal equations (eigenvalue ratio {:.3e})",
                if hi > 0.0 { lo / hi } else { 0.0 }
            )));
        }
        let Some(step) = hess.cholesky().map(|c| c.solve(&(-grad))) else {
            return Err(Error::DegenerateGeometry("normal equations not positive definite".into()));
        };
        if step.norm() < cfg.min_update {
            return Ok(IcpResult {
                pose: te.compose(&tc).compose(&te.inverse()),
                converged: true,
                iterations: iter,
                correspondences,
            });
        }
        let delta = Pose::from_axis_angle(
            Vector3::new(step[0], step[1], step[2]),
            Vector3::new(step[3], step[4], step[5]),
        );
        tc = delta.compose(&tc);
    }
    log::warn!("ICP did not converge in {} iterations", cfg.max_iterations);
    Ok(IcpResult {
        pose: *init,
        converged: false,
        iterations: cfg.max_iterations,
        correspondences,
    })
}

/// Where relative poses between frames come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PoseSource {
    #[default]
    GroundTruth,
    Wheel,
    Refined,
}

impl std::str::FromStr for PoseSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" | "ground-truth" => Ok(PoseSource::GroundTruth),
            "wheel" => Ok(PoseSource::Wheel),
            "refined" | "icp" => Ok(PoseSource::Refined),
            other => Err(Error::Config(format!("unknown pose source {other:?}"))),
        }
    }
}

impl std::fmt::Display for PoseSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoseSource::GroundTruth => "ground-truth",
            PoseSource::Wheel => "wheel",
            PoseSource::Refined => "refined",
        })
    }
}
