//! File formats and on-disk datasets.
//!
//! A dataset directory looks like
//!
//! ```text
//! frames/000000.ppm      8-bit RGB
//! depth/000000.dpt       little-endian f32 z-depth, row-major
//! labels/000003.pgm      8-bit class indices, annotated frames only
//! trajectory.txt         wheel odometry: `t tx ty tz qx qy qz qw` per frame
//! intrinsics.json        pinhole parameters plus the camera extrinsics
//! ```
//!
//! Generated datasets also carry `groundtruth_trajectory.txt` and `scene.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::odometry::OdometryReading;
use crate::raster::{DepthImage, LabelImage, RgbImage};
use crate::sequencing::Frame;

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::format(path, e.to_string()))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage {
        height: h as usize,
        width: w as usize,
        data: img.into_raw(),
    })
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write_pnm(path, &img.data, img.width, img.height, PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8)
}

pub fn read_pgm(path: &Path) -> Result<LabelImage> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let img = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        _ => return Err(Error::format(path, "expected an 8-bit grayscale image")),
    };
    let (w, h) = img.dimensions();
    LabelImage::new(h as usize, w as usize, img.into_raw())
}

pub fn write_pgm(path: &Path, labels: &LabelImage) -> Result<()> {
    let subtype = PnmSubtype::Graymap(SampleEncoding::Binary);
    write_pnm(path, &labels.data, labels.width, labels.height, subtype, ExtendedColorType::L8)
}

fn write_pnm(
    path: &Path,
    data: &[u8],
    width: usize,
    height: usize,
    subtype: PnmSubtype,
    color: ExtendedColorType,
) -> Result<()> {
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(subtype)
        .write_image(data, width as u32, height as u32, color)
        .map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a raw depth raster; the dimensions come from the intrinsics.
pub fn read_dpt(path: &Path, height: usize, width: usize) -> Result<DepthImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != height * width * 4 {
        return Err(Error::format(
            path,
            format!("{} bytes, expected {} for {width}x{height}", bytes.len(), height * width * 4),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    DepthImage::new(height, width, data)
}

pub fn write_dpt(path: &Path, depth: &DepthImage) -> Result<()> {
    let bytes: Vec<u8> = depth.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(path, &bytes)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<OdometryReading>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::format(path, format!("line {}: {msg}", lineno + 1));
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("non-numeric field"))?;
        if v.len() != 8 {
            return Err(bad("expected 8 fields: t tx ty tz qx qy qz qw"));
        }
        let pose = Pose::from_parts([v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]]).map_err(|e| bad(&e.to_string()))?;
        if let Some(prev) = out.last().map(|r: &OdometryReading| r.timestamp) {
            if v[0] < prev {
                return Err(bad("timestamps must be non-decreasing"));
            }
        }
        out.push(OdometryReading { timestamp: v[0], pose });
    }
    Ok(out)
}

pub fn format_trajectory(readings: &[OdometryReading]) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for r in readings {
        let t = r.pose.translation();
        let q = r.pose.quaternion_xyzw();
        s.push_str(&format!(
            "{:.6} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}\n",
            r.timestamp, t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        ));
    }
    s
}

pub fn write_trajectory(path: &Path, readings: &[OdometryReading]) -> Result<()> {
    write_atomic(path, format_trajectory(readings).as_bytes())
}

/// Contents of `intrinsics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraManifest {
    #[serde(flatten)]
    pub intrinsics: CameraIntrinsics,
    /// Camera pose in the robot frame as `[tx, ty, tz, qx, qy, qz, qw]`;
    /// identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrinsics: Option<[f64; 7]>,
}

impl CameraManifest {
    pub fn extrinsics_pose(&self) -> Result<Pose> {
        match self.extrinsics {
            None => Ok(Pose::identity()),
            Some(e) => Pose::from_parts([e[0], e[1], e[2]], [e[3], e[4], e[5], e[6]]),
        }
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:06}.{ext}")
}

/// An RGB-D sequence held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub intrinsics: CameraIntrinsics,
    /// Camera pose in the robot frame.
    pub extrinsics: Pose,
    pub frames: Vec<Frame>,
    pub timestamps: Vec<f64>,
    /// Wheel-odometry robot pose per frame.
    pub wheel: Vec<Pose>,
    /// True robot pose per frame, when known.
    pub ground_truth: Option<Vec<Pose>>,
    /// Annotations keyed by frame index.
    pub labels: BTreeMap<usize, LabelImage>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        self.labels.keys().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.timestamps.len() != n || self.wheel.len() != n {
            return Err(Error::Shape(format!(
                "{n} frames, {} timestamps, {} wheel poses",
                self.timestamps.len(),
                self.wheel.len()
            )));
        }
        if let Some(gt) = &self.ground_truth {
            if gt.len() != n {
                return Err(Error::Shape(format!("{n} frames, {} ground-truth poses", gt.len())));
            }
        }
        let k = &self.intrinsics;
        for f in &self.frames {
            if f.rgb.height != k.height || f.rgb.width != k.width || f.depth.height() != k.height || f.depth.width() != k.width
            {
                return Err(Error::Shape("frame size differs from the intrinsics".into()));
            }
        }
        for (&i, l) in &self.labels {
            if i >= n || l.height != k.height || l.width != k.width {
                return Err(Error::Shape(format!("label {i} does not match a frame")));
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: CameraManifest = read_json(&dir.join("intrinsics.json"))?;
        manifest.intrinsics.validate()?;
        let k = manifest.intrinsics;
        let wheel_log = read_trajectory(&dir.join("trajectory.txt"))?;
        let gt_path = dir.join("groundtruth_trajectory.txt");
        let ground_truth = if gt_path.exists() {
            Some(read_trajectory(&gt_path)?.into_iter().map(|r| r.pose).collect())
        } else {
            None
        };
        let mut frames = Vec::with_capacity(wheel_log.len());
        for i in 0..wheel_log.len() {
            let rgb = read_ppm(&dir.join("frames").join(frame_name(i, "ppm")))?;
            let depth = read_dpt(&dir.join("depth").join(frame_name(i, "dpt")), k.height, k.width)?;
            frames.push(Frame { rgb, depth });
        }
        let mut labels = BTreeMap::new();
        let label_dir = dir.join("labels");
        if label_dir.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(&label_dir)
                .map_err(|e| Error::io(&label_dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
                .collect();
            entries.sort();
            for p in entries {
                let idx: usize = p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::format(&p, "label file name is not a frame index"))?;
                labels.insert(idx, read_pgm(&p)?);
            }
        }
        let ds = Self {
            intrinsics: k,
            extrinsics: manifest.extrinsics_pose()?,
            frames,
            timestamps: wheel_log.iter().map(|r| r.timestamp).collect(),
            wheel: wheel_log.into_iter().map(|r| r.pose).collect(),
            ground_truth,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        for sub in ["frames", "depth", "labels"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        for (i, f) in self.frames.iter().enumerate() {
            write_ppm(&dir.join("frames").join(frame_name(i, "ppm")), &f.rgb)?;
            write_dpt(&dir.join("depth").join(frame_name(i, "dpt")), &f.depth)?;
        }
        for (&i, l) in &self.labels {
            write_pgm(&dir.join("labels").join(frame_name(i, "pgm")), l)?;
        }
        let readings = |poses: &[Pose]| -> Vec<OdometryReading> {
            poses
                .iter()
                .zip(&self.timestamps)
                .map(|(p, &t)| OdometryReading { timestamp: t, pose: *p })
                .collect()
        };
        write_trajectory(&dir.join("trajectory.txt"), &readings(&self.wheel))?;
        if let Some(gt) = &self.ground_truth {
            write_trajectory(&dir.join("groundtruth_trajectory.txt"), &readings(gt))?;
        }
        let t = self.extrinsics.translation();
        let q = self.extrinsics.quaternion_xyzw();
        write_json(
            &dir.join("intrinsics.json"),
            &CameraManifest {
                intrinsics: self.intrinsics,
                extrinsics: Some([t.x, t.y, t.z, q[0], q[1], q[2], q[3]]),
            },
        )
    }
}
