//! On-disk formats.
//!
//! Boxes travel as JSON Lines, one [`BoxRecord`] per line. Point clouds are
//! flat little-endian `f32` records of 4 channels `(x, y, z, intensity)` or
//! 5 channels `(x, y, z, intensity, t)`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::ensemble::DetectionSet;
use crate::error::{Error, Result};
use crate::geometry::{Box3D, Label};
use crate::pointcloud::{PointCloud, TimedPoint};
use crate::scalar::Scalar;

fn default_score() -> f64 {
    1.0
}

/// Wire form of one box. Unknown keys are ignored when reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub frame_id: String,
    #[serde(default)]
    pub timestamp: f64,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub heading: f64,
    #[serde(default = "default_score")]
    pub score: f64,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_points: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<u32>,
}

impl BoxRecord {
    pub fn from_box<T: Scalar>(b: &Box3D<T>, frame_id: &str, timestamp: T) -> Self {
        BoxRecord {
            frame_id: frame_id.to_owned(),
            timestamp: timestamp.as_f64(),
            cx: b.cx.as_f64(),
            cy: b.cy.as_f64(),
            cz: b.cz.as_f64(),
            l: b.length.as_f64(),
            w: b.width.as_f64(),
            h: b.height.as_f64(),
            heading: b.heading.as_f64(),
            score: b.score.as_f64(),
            label: b.label,
            track_id: b.track_id,
            difficulty: b.difficulty,
            num_points: b.num_points,
            source_id: b.source_id,
        }
    }

    /// Converts and validates. The heading is wrapped into `(-π, π]`.
    pub fn to_box<T: Scalar>(&self) -> Result<Box3D<T>> {
        if !self.heading.is_finite() {
            return Err(Error::invalid("heading is not finite"));
        }
        let mut b = Box3D::new(
            T::lit(self.cx),
            T::lit(self.cy),
            T::lit(self.cz),
            T::lit(self.l),
            T::lit(self.w),
            T::lit(self.h),
            T::lit(self.heading),
        )
        .with_score(T::lit(self.score))
        .with_label(self.label);
        b.track_id = self.track_id;
        b.difficulty = self.difficulty;
        b.num_points = self.num_points;
        b.source_id = self.source_id;
        b.validate()?;
        Ok(b)
    }
}

/// Frames keyed by id, in order of first appearance.
pub type FrameMap<T> = IndexMap<String, DetectionSet<T>>;

pub fn read_boxes<T: Scalar>(path: impl AsRef<Path>) -> Result<FrameMap<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_boxes(BufReader::new(file))
}

/// Parses JSONL box records, grouping by frame and keeping line order
/// within each frame. Blank lines are skipped.
pub fn parse_boxes<T: Scalar>(reader: impl BufRead) -> Result<FrameMap<T>> {
    let mut frames: FrameMap<T> = IndexMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BoxRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let b = rec.to_box::<T>().map_err(|e| Error::Validation {
            line: line_no,
            message: match e {
                Error::InvalidArgument(m) => m,
                other => other.to_string(),
            },
        })?;
        let set = frames.entry(rec.frame_id.clone()).or_insert_with(|| DetectionSet {
            frame_id: rec.frame_id.clone(),
            timestamp: T::lit(rec.timestamp),
            boxes: Vec::new(),
            source_id: rec.source_id.unwrap_or(0),
        });
        set.boxes.push(b);
    }
    Ok(frames)
}

pub fn write_boxes<'a, T: Scalar>(
    path: impl AsRef<Path>,
    sets: impl IntoIterator<Item = &'a DetectionSet<T>>,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_boxes_to(&mut w, sets).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_boxes_to<'a, T: Scalar>(
    w: &mut impl Write,
    sets: impl IntoIterator<Item = &'a DetectionSet<T>>,
) -> std::io::Result<()> {
    for set in sets {
        for b in &set.boxes {
            let rec = BoxRecord::from_box(b, &set.frame_id, set.timestamp);
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Writes any serializable records as JSON Lines.
pub fn write_jsonl<S: Serialize>(path: impl AsRef<Path>, records: impl IntoIterator<Item = S>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_channels(channels: usize) -> Result<()> {
    if channels == 4 || channels == 5 {
        Ok(())
    } else {
        Err(Error::invalid(format!("point files have 4 or 5 channels, not {channels}")))
    }
}

pub fn read_points<T: Scalar>(path: impl AsRef<Path>, channels: usize) -> Result<PointCloud<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cloud = decode_points(&bytes, channels)?;
    cloud.frame_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(cloud)
}

/// Decodes little-endian `f32` records. With 4 channels `t` is set to 0.
pub fn decode_points<T: Scalar>(bytes: &[u8], channels: usize) -> Result<PointCloud<T>> {
    check_channels(channels)?;
    let record = 4 * channels;
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::Format(format!(
            "file size {} is not a multiple of the {record}-byte record size ({channels} x f32)",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / record);
    for (idx, chunk) in bytes.chunks_exact(record).enumerate() {
        let mut v = [0f32; 5];
        for (c, word) in chunk.chunks_exact(4).enumerate() {
            v[c] = f32::from_le_bytes([word[0], word[1], word[2], word[3]]);
        }
        if let Some(c) = v[..channels].iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidRecord {
                record: idx,
                message: format!("channel {c} is not finite"),
            });
        }
        let f = |x: f32| T::lit(f64::from(x));
        points.push(TimedPoint::new(f(v[0]), f(v[1]), f(v[2]), f(v[3])).with_t(f(v[4])));
    }
    Ok(PointCloud::new(points))
}

pub fn encode_points<T: Scalar>(cloud: &PointCloud<T>, channels: usize) -> Result<Vec<u8>> {
    check_channels(channels)?;
    let mut out = Vec::with_capacity(cloud.len() * channels * 4);
    for p in &cloud.points {
        for v in &p.features()[..channels] {
            let x = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_points<T: Scalar>(path: impl AsRef<Path>, cloud: &PointCloud<T>, channels: usize) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_points(cloud, channels)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
