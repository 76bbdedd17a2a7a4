//! Deterministic synthetic RGB-D sequences: a textured ground plane with
//! class-labeled ellipsoid blobs, rendered analytically along a known
//! camera trajectory.
//!
//! World frame: z up, ground plane at z = 0. Robot frame: x forward, y left,
//! z up. The camera is mounted at `plane_depth` meters above the robot
//! origin. Depth rasters hold exact z-depth of the nearest intersection.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Point3, Pose};
use crate::io::Dataset;
use crate::raster::{DepthImage, LabelImage, RgbImage};
use crate::sequencing::Frame;

pub const BACKGROUND: u8 = 0;
pub const CROP: u8 = 1;
pub const WEED: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    /// Downward-looking camera strafing in a straight line.
    NadirStrafe,
    /// Tilted camera on a gently curving path.
    ObliqueArc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image_w: usize,
    pub image_h: usize,
    pub num_classes: usize,
    /// Horizontal field of view in degrees.
    pub hfov_deg: f64,
    /// Blobs per square meter of covered ground, drawn uniformly from this range.
    pub blob_density: [f64; 2],
    /// Crop blob radius range (m).
    pub crop_radius: [f64; 2],
    /// Weed blob radius range (m).
    pub weed_radius: [f64; 2],
    /// Fraction of blobs that are crops.
    pub crop_fraction: f64,
    /// Camera height above the ground (m).
    pub plane_depth: f64,
    pub trajectory: TrajectoryKind,
    /// Meters per second.
    pub speed: f64,
    pub fps: f64,
    pub frames: usize,
    /// Every `label_every`-th frame is annotated.
    pub label_every: usize,
    /// Per-pixel sensor noise standard deviation (8-bit levels).
    pub pixel_noise: f64,
    /// Per-blob color jitter standard deviation (8-bit levels).
    pub color_jitter: f64,
    /// Wheel odometry noise per frame, meters / degrees.
    pub wheel_noise: crate::odometry::NoiseSpec,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::preset(Preset::Sb, 600, 1)
    }
}

/// Named scene presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Arable-field-like nadir strafe.
    Sb,
    /// Glasshouse-rail-like oblique arc.
    Bup,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sb" => Ok(Preset::Sb),
            "bup" => Ok(Preset::Bup),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}

impl SceneConfig {
    pub fn preset(preset: Preset, frames: usize, seed: u64) -> Self {
        let base = Self {
            image_w: 96,
            image_h: 64,
            num_classes: 3,
            hfov_deg: 60.0,
            blob_density: [7.0, 9.0],
            crop_radius: [0.05, 0.085],
            weed_radius: [0.03, 0.055],
            crop_fraction: 0.55,
            plane_depth: 1.0,
            trajectory: TrajectoryKind::NadirStrafe,
            speed: 0.4,
            fps: 15.0,
            frames,
            label_every: 4,
            pixel_noise: 40.0,
            color_jitter: 8.0,
            wheel_noise: crate::odometry::NoiseSpec::default(),
            seed,
        };
        match preset {
            Preset::Sb => base,
            Preset::Bup => Self {
                trajectory: TrajectoryKind::ObliqueArc,
                plane_depth: 0.9,
                blob_density: [10.0, 12.0],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.image_w == 0 || self.image_h == 0 {
            return bad("image size must be positive");
        }
        if self.num_classes != 3 {
            return bad("the generator renders exactly 3 classes");
        }
        if !(self.crop_radius[0] > 0.0 && self.weed_radius[0] > 0.0)
            || self.crop_radius[0] > self.crop_radius[1]
            || self.weed_radius[0] > self.weed_radius[1]
        {
            return bad("blob sizes must be positive ranges");
        }
        let max_height = 2.0 * self.crop_radius[1].max(self.weed_radius[1]);
        if !(self.plane_depth > max_height) {
            return bad("plane depth must exceed the tallest blob");
        }
        if !(self.fps > 0.0) || self.frames == 0 || self.label_every == 0 {
            return bad("fps, frames and label_every must be positive");
        }
        if self.blob_density[0] < 0.0 || self.blob_density[0] > self.blob_density[1] {
            return bad("blob density range");
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let fx = self.image_w as f64 / (2.0 * (self.hfov_deg.to_radians() / 2.0).tan());
        CameraIntrinsics {
            fx,
            fy: fx,
            cx: (self.image_w as f64 - 1.0) / 2.0,
            cy: (self.image_h as f64 - 1.0) / 2.0,
            width: self.image_w,
            height: self.image_h,
        }
    }

    /// Camera pose in the robot frame.
    pub fn extrinsics(&self) -> Pose {
        // camera x = robot x, camera y = −robot y, camera z = −robot z
        let nadir = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let r = match self.trajectory {
            TrajectoryKind::NadirStrafe => nadir,
            TrajectoryKind::ObliqueArc => {
                let tilt = 25f64.to_radians();
                let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, tilt.cos(), -tilt.sin(), 0.0, tilt.sin(), tilt.cos());
                rx * nadir
            }
        };
        Pose::from_matrix(&r, Vector3::new(0.0, 0.0, self.plane_depth))
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }

    /// Ground-truth robot pose in the world.
    pub fn robot_pose(&self, frame: usize) -> Pose {
        let t = self.timestamp(frame);
        match self.trajectory {
            TrajectoryKind::NadirStrafe => Pose::from_translation(Vector3::new(self.speed * t, 0.0, 0.0)),
            TrajectoryKind::ObliqueArc => {
                let omega = 0.05;
                let radius = self.speed / omega;
                let yaw = omega * t;
                Pose::from_axis_angle(
                    Vector3::new(0.0, 0.0, yaw),
                    Vector3::new(radius * yaw.sin(), radius * (1.0 - yaw.cos()), 0.0),
                )
            }
        }
    }

    pub fn is_labeled(&self, frame: usize) -> bool {
        frame % self.label_every == self.label_every - 1
    }
}

/// Axis-aligned ellipsoid resting on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub class: u8,
    pub color: [f64; 3],
}

/// A ray with unit direction in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Point3, direction: Vector3<f64>) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
        }
    }
}

/// Nearest intersection along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Unshaded-noise-free color, 8-bit scale.
    pub color: [f64; 3],
    /// Distance along the ray; infinite when nothing is hit.
    pub range: f64,
    pub class: u8,
    pub blob: Option<usize>,
}

impl Hit {
    pub fn miss() -> Self {
        Self {
            color: [0.0; 3],
            range: f64::INFINITY,
            class: BACKGROUND,
            blob: None,
        }
    }
}

/// Scene geometry and camera trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub config: SceneConfig,
    pub blobs: Vec<Blob>,
    pub intrinsics: CameraIntrinsics,
    /// `[tx, ty, tz, qx, qy, qz, qw]` of the camera in the robot frame.
    pub extrinsics: [f64; 7],
}

fn soil_color(x: f64, y: f64) -> [f64; 3] {
    let t = (7.0 * x).sin() * (5.0 * y).cos() + 0.5 * (23.0 * x + 11.0 * y).sin();
    [120.0 + 18.0 * t, 92.0 + 14.0 * t, 62.0 + 10.0 * t]
}

const CROP_BASE: [f64; 3] = [78.0, 150.0, 62.0];
const WEED_BASE: [f64; 3] = [96.0, 146.0, 52.0];

fn pose_to_array(p: &Pose) -> [f64; 7] {
    let t = p.translation();
    let q = p.quaternion_xyzw();
    [t.x, t.y, t.z, q[0], q[1], q[2], q[3]]
}

impl Scene {
    pub fn new(config: SceneConfig) -> Result<Self> {
        config.validate()?;
        let k = config.intrinsics();
        let te = config.extrinsics();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        // ground area covered by the image corners over the trajectory
        let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
        let step = (config.frames / 50).max(1);
        for f in (0..config.frames).step_by(step).chain(std::iter::once(config.frames - 1)) {
            let cam = config.robot_pose(f).compose(&te);
            for (u, v) in [(0.0, 0.0), (k.width as f64, 0.0), (0.0, k.height as f64), (k.width as f64, k.height as f64)] {
                let d = cam.rotation() * Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
                if d.z < -1e-9 {
                    let o = cam.translation();
                    let g = o + d * (-o.z / d.z);
                    lo = lo.inf(&g);
                    hi = hi.sup(&g);
                }
            }
        }
        let margin = config.crop_radius[1] * 2.0;
        let (x0, x1, y0, y1) = (lo.x - margin, hi.x + margin, lo.y - margin, hi.y + margin);
        let area = (x1 - x0) * (y1 - y0);
        let density = rng.gen_range(config.blob_density[0]..=config.blob_density[1]);
        let count = (density * area).round() as usize;
        let jitter = Normal::new(0.0, config.color_jitter.max(0.0)).expect("finite");
        let blobs = (0..count)
            .map(|_| {
                let crop = rng.gen_bool(config.crop_fraction.clamp(0.0, 1.0));
                let range = if crop { config.crop_radius } else { config.weed_radius };
                let r = rng.gen_range(range[0]..=range[1]);
                let (rx, ry) = (r * rng.gen_range(0.8..1.2), r * rng.gen_range(0.8..1.2));
                let rz = r * rng.gen_range(0.5..0.8);
                let x = rng.gen_range(x0..x1);
                let y = rng.gen_range(y0..y1);
                let base = if crop { CROP_BASE } else { WEED_BASE };
                let color = [
                    base[0] + jitter.sample(&mut rng),
                    base[1] + jitter.sample(&mut rng),
                    base[2] + jitter.sample(&mut rng),
                ];
                Blob {
                    // centers sit slightly below the apex height so blobs rest on the soil
                    center: [x, y, 0.4 * rz],
                    radii: [rx, ry, rz],
                    class: if crop { CROP } else { WEED },
                    color,
                }
            })
            .collect();
        Ok(Self {
            intrinsics: k,
            extrinsics: pose_to_array(&te),
            config,
            blobs,
        })
    }

    /// Scene with an explicit blob list, used by tests and oracles.
    pub fn with_blobs(config: SceneConfig, blobs: Vec<Blob>) -> Result<Self> {
        config.validate()?;
        let te = config.extrinsics();
        Ok(Self {
            intrinsics: config.intrinsics(),
            extrinsics: pose_to_array(&te),
            config,
            blobs,
        })
    }

    pub fn extrinsics_pose(&self) -> Pose {
        let e = &self.extrinsics;
        Pose::from_parts([e[0], e[1], e[2]], [e[3], e[4], e[5], e[6]]).expect("stored pose is valid")
    }

    /// Camera pose in the world at `frame`.
    pub fn camera_pose(&self, frame: usize) -> Pose {
        self.config.robot_pose(frame).compose(&self.extrinsics_pose())
    }

    /// Nearest positive intersection among the ground plane and every blob.
    pub fn render_pixel(&self, ray: &Ray) -> Hit {
        let mut best = Hit::miss();
        let (o, d) = (ray.origin, ray.direction);
        if d.z < 0.0 && o.z > 0.0 {
            let t = -o.z / d.z;
            let p = o + d * t;
            best = Hit {
                color: soil_color(p.x, p.y),
                range: t,
                class: BACKGROUND,
                blob: None,
            };
        }
        for (bi, b) in self.blobs.iter().enumerate() {
            if let Some(t) = ellipsoid_hit(b, &o, &d) {
                if t < best.range {
                    let p = o + d * t;
                    // flat shading by the surface normal's vertical component
                    let n = Vector3::new(
                        (p.x - b.center[0]) / (b.radii[0] * b.radii[0]),
                        (p.y - b.center[1]) / (b.radii[1] * b.radii[1]),
                        (p.z - b.center[2]) / (b.radii[2] * b.radii[2]),
                    )
                    .normalize();
                    let shade = 0.8 + 0.2 * n.z;
                    best = Hit {
                        color: [b.color[0] * shade, b.color[1] * shade, b.color[2] * shade],
                        range: t,
                        class: b.class,
                        blob: Some(bi),
                    };
                }
            }
        }
        best
    }

    /// Renders frame `frame`: RGB with sensor noise, exact z-depth and labels.
    pub fn render_frame(&self, frame: usize) -> RenderedFrame {
        let k = &self.intrinsics;
        let cam = self.camera_pose(frame);
        let rot = cam.rotation_matrix();
        let origin = Point3::from(*cam.translation());
        let (w, h) = (k.width, k.height);
        let mut rgb = RgbImage::new(h, w);
        let mut depth = vec![0f32; w * h];
        let mut labels = vec![BACKGROUND; w * h];
        // sensor noise is a deterministic function of the seed and the camera pose
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(self.config.seed, &cam));
        let noise = Normal::new(0.0, self.config.pixel_noise.max(0.0)).expect("finite");
        for y in 0..h {
            for x in 0..w {
                let dc = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
                let norm = dc.norm();
                let ray = Ray {
                    origin,
                    direction: rot * (dc / norm),
                };
                let hit = self.render_pixel(&ray);
                let i = y * w + x;
                if hit.range.is_finite() {
                    // z-depth from range along a unit ray
                    depth[i] = (hit.range / norm) as f32;
                }
                labels[i] = hit.class;
                let mut c = [0u8; 3];
                for ch in 0..3 {
                    c[ch] = (hit.color[ch] + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
                }
                rgb.set(y, x, c);
            }
        }
        RenderedFrame {
            rgb,
            depth: DepthImage::new(h, w, depth).expect("sized"),
            labels: LabelImage::new(h, w, labels).expect("sized"),
            robot_pose: self.config.robot_pose(frame),
        }
    }
}

impl Scene {
    /// Dead-reckoned wheel odometry: every inter-frame motion is perturbed
    /// by the configured noise and integrated, so errors accumulate.
    pub fn wheel_trajectory(&self) -> Vec<Pose> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_0d0e);
        let mut out = Vec::with_capacity(self.config.frames);
        let mut prev_gt = self.config.robot_pose(0);
        let mut current = prev_gt;
        out.push(current);
        for f in 1..self.config.frames {
            let gt = self.config.robot_pose(f);
            let step = prev_gt.inverse().compose(&gt);
            current = current.compose(&crate::odometry::inject_noise(&step, &self.config.wheel_noise, &mut rng));
            out.push(current);
            prev_gt = gt;
        }
        out
    }

    /// Renders the whole sequence into memory.
    pub fn dataset(&self) -> Result<Dataset> {
        let n = self.config.frames;
        let mut frames = Vec::with_capacity(n);
        let mut labels = BTreeMap::new();
        for f in 0..n {
            let r = self.render_frame(f);
            if self.config.is_labeled(f) {
                labels.insert(f, r.labels);
            }
            frames.push(Frame {
                rgb: r.rgb,
                depth: r.depth,
            });
        }
        Ok(Dataset {
            intrinsics: self.intrinsics,
            extrinsics: self.extrinsics_pose(),
            frames,
            timestamps: (0..n).map(|f| self.config.timestamp(f)).collect(),
            wheel: self.wheel_trajectory(),
            ground_truth: Some((0..n).map(|f| self.config.robot_pose(f)).collect()),
            labels,
        })
    }
}

/// Generates a sequence and writes it to `out` in the dataset layout, with
/// `scene.json` describing the scene.
pub fn generate_sequence(cfg: SceneConfig, out: &Path) -> Result<Dataset> {
    let scene = Scene::new(cfg)?;
    let ds = scene.dataset()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    ds.save(out)?;
    crate::io::write_json(&out.join("scene.json"), &scene)?;
    Ok(ds)
}

fn noise_seed(seed: u64, cam: &Pose) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for v in pose_to_array(cam) {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Smallest positive ray parameter hitting the ellipsoid.
fn ellipsoid_hit(b: &Blob, o: &Point3, d: &Vector3<f64>) -> Option<f64> {
    let oc = Vector3::new(
        (o.x - b.center[0]) / b.radii[0],
        (o.y - b.center[1]) / b.radii[1],
        (o.z - b.center[2]) / b.radii[2],
    );
    let ds = Vector3::new(d.x / b.radii[0], d.y / b.radii[1], d.z / b.radii[2]);
    let a = ds.dot(&ds);
    let bh = oc.dot(&ds);
    let c = oc.dot(&oc) - 1.0;
    let disc = bh * bh - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-bh - sq) / a;
    let t1 = (-bh + sq) / a;
    if t0 > 1e-9 {
        Some(t0)
    } else if t1 > 1e-9 {
        Some(t1)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub labels: LabelImage,
    pub robot_pose: Pose,
}
