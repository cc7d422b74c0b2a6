//! On-disk sequence directories.
//!
//! ```text
//! meta.json            width, height, bracket_exposures_us, frame_count,
//!                      crf_file, poses_file (optional), intrinsics, fps (optional)
//! frames/NNNNNN_K.png  8-bit grayscale, K = bracket slot 0..4
//! poses.csv            frame,qw,qx,qy,qz,tx,ty,tz (camera-to-world)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader};
use nalgebra::Vector3;

use super::{BracketedFrame, BracketedSequence, Intrinsics, Result, SceneError, BRACKET_LADDER_US};
use crate::photometry::{CameraResponse, Exposure, Image};
use crate::vision::{RigidPose, So3};

const DEFAULT_FPS: f64 = 20.0;
const QUATERNION_NORM_TOL: f64 = 1e-6;
const POSES_HEADER: [&str; 8] = ["frame", "qw", "qx", "qy", "qz", "tx", "ty", "tz"];

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SequenceMeta {
    pub width: usize,
    pub height: usize,
    pub bracket_exposures_us: Vec<f64>,
    pub frame_count: usize,
    pub crf_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses_file: Option<String>,
    pub intrinsics: Intrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
}

fn load_err(path: &Path, message: impl Into<String>) -> SceneError {
    SceneError::Load { path: path.display().to_string(), message: message.into() }
}

pub fn frame_path(dir: &Path, frame: usize, slot: usize) -> PathBuf {
    dir.join("frames").join(format!("{frame:06}_{slot}.png"))
}

/// Writes `sequence` to `dir`, creating it if needed.
pub fn save_sequence(sequence: &BracketedSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("frames"))?;
    for (i, frame) in sequence.frames().iter().enumerate() {
        for (k, img) in frame.images().iter().enumerate() {
            let path = frame_path(dir, i, k);
            let buf = GrayImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
                .expect("buffer matches dimensions");
            buf.save(&path).map_err(|e| load_err(&path, e.to_string()))?;
        }
    }
    sequence.response.save(&dir.join("crf.txt"))?;
    let poses_file = match sequence.gt_poses() {
        Some(poses) => {
            let path = dir.join("poses.csv");
            write_poses(&path, poses)?;
            Some("poses.csv".to_string())
        }
        None => None,
    };
    let meta = SequenceMeta {
        width: sequence.frames()[0].width(),
        height: sequence.frames()[0].height(),
        bracket_exposures_us: BRACKET_LADDER_US.to_vec(),
        frame_count: sequence.len(),
        crf_file: "crf.txt".into(),
        poses_file,
        intrinsics: sequence.intrinsics,
        fps: Some(sequence.fps),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serialises");
    fs::write(dir.join("meta.json"), json)?;
    Ok(())
}

fn write_poses(path: &Path, poses: &[RigidPose]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| load_err(path, e.to_string()))?;
    w.write_record(POSES_HEADER).map_err(|e| load_err(path, e.to_string()))?;
    for (i, p) in poses.iter().enumerate() {
        let [qw, qx, qy, qz] = p.rotation.to_quaternion();
        let t = p.translation;
        let fields: Vec<String> = std::iter::once(i.to_string())
            .chain([qw, qx, qy, qz, t.x, t.y, t.z].iter().map(|v| format!("{v:.17e}")))
            .collect();
        w.write_record(&fields).map_err(|e| load_err(path, e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn read_poses(path: &Path, frame_count: usize) -> Result<Vec<RigidPose>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| load_err(path, e.to_string()))?;
    let header = r.headers().map_err(|e| load_err(path, e.to_string()))?;
    if header.iter().map(str::trim).ne(POSES_HEADER) {
        return Err(load_err(path, format!("unexpected header {header:?}")));
    }
    let mut poses: Vec<Option<RigidPose>> = vec![None; frame_count];
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| load_err(path, e.to_string()))?;
        let bad = |what: &str| load_err(path, format!("row {}: {what}", line + 2));
        if record.len() != POSES_HEADER.len() {
            return Err(bad("wrong number of fields"));
        }
        let frame: usize = record[0].trim().parse().map_err(|_| bad("frame index is not an integer"))?;
        let vals = (1..8)
            .map(|j| record[j].trim().parse::<f64>().map_err(|_| bad("non-numeric field")))
            .collect::<Result<Vec<f64>>>()?;
        let norm = vals[..4].iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
            return Err(bad(&format!("quaternion norm {norm} is not 1")));
        }
        let slot = poses.get_mut(frame).ok_or_else(|| bad("frame index out of range"))?;
        *slot = Some(RigidPose {
            rotation: So3::from_quaternion(vals[0], vals[1], vals[2], vals[3]),
            translation: Vector3::new(vals[4], vals[5], vals[6]),
        });
    }
    poses
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| load_err(path, format!("no pose for frame {i}"))))
        .collect()
}

fn read_frame(path: &Path, width: usize, height: usize, exposure: Exposure) -> Result<Image> {
    let img = ImageReader::open(path)
        .map_err(|e| load_err(path, e.to_string()))?
        .decode()
        .map_err(|e| load_err(path, e.to_string()))?;
    if img.color() != image::ColorType::L8 {
        return Err(load_err(path, format!("expected 8-bit grayscale, got {:?}", img.color())));
    }
    let gray = img.into_luma8();
    if gray.width() as usize != width || gray.height() as usize != height {
        return Err(load_err(path, format!("size {}x{} differs from meta.json", gray.width(), gray.height())));
    }
    Ok(Image::new(width, height, gray.into_raw(), exposure)?)
}

/// Loads a sequence directory, validating it against the fixed format.
pub fn load_sequence(dir: &Path) -> Result<BracketedSequence> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| load_err(&meta_path, e.to_string()))?;
    let meta: SequenceMeta = serde_json::from_str(&text).map_err(|e| load_err(&meta_path, e.to_string()))?;
    if meta.bracket_exposures_us != BRACKET_LADDER_US {
        return Err(load_err(
            &meta_path,
            format!("bracket ladder {:?} differs from {:?}", meta.bracket_exposures_us, BRACKET_LADDER_US),
        ));
    }
    let response = CameraResponse::load(&dir.join(&meta.crf_file))?;
    let gt_poses = match &meta.poses_file {
        Some(file) => Some(read_poses(&dir.join(file), meta.frame_count)?),
        None => None,
    };
    let fps = meta.fps.unwrap_or(DEFAULT_FPS);
    let mut frames = Vec::with_capacity(meta.frame_count);
    for i in 0..meta.frame_count {
        let images = BRACKET_LADDER_US
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let path = frame_path(dir, i, k);
                if !path.exists() {
                    return Err(load_err(&path, "missing frame"));
                }
                read_frame(&path, meta.width, meta.height, Exposure::new(t, 0.0)?)
            })
            .collect::<Result<Vec<_>>>()?;
        frames.push(BracketedFrame::new(images, i as f64 / fps)?);
    }
    BracketedSequence::new(frames, response, meta.intrinsics, gt_poses, fps)
}
