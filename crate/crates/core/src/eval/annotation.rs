use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{BBox, Error, ImageDims, Point, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medi,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medi, Difficulty::Hard];

    pub fn label(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medi => "medi",
            Difficulty::Hard => "hard",
        }
    }
}

/// Which image(s) of a pair are affected by truncation or occlusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    None,
    Src,
    Tgt,
    Both,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::None, Side::Src, Side::Tgt, Side::Both];

    pub fn label(self) -> &'static str {
        match self {
            Side::None => "none",
            Side::Src => "src",
            Side::Tgt => "tgt",
            Side::Both => "both",
        }
    }
}

/// One annotated image pair, as stored in the JSON-lines annotation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairAnnotation {
    pub pair_id: String,
    pub src_image: String,
    pub tgt_image: String,
    pub category: String,
    pub src_kps: Vec<Point>,
    pub tgt_kps: Vec<Point>,
    pub src_bbox: BBox,
    pub tgt_bbox: BBox,
    pub src_dims: ImageDims,
    pub tgt_dims: ImageDims,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viewpoint: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<Side>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occlusion: Option<Side>,
}

impl PairAnnotation {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| {
            Err(Error::InvalidAnnotation {
                pair_id: self.pair_id.clone(),
                message,
            })
        };
        if self.src_kps.len() != self.tgt_kps.len() {
            return fail(format!(
                "{} source keypoints but {} target keypoints",
                self.src_kps.len(),
                self.tgt_kps.len()
            ));
        }
        if self.src_kps.is_empty() {
            return fail("no keypoints".into());
        }
        for (side, dims, kps, bbox) in [
            ("source", self.src_dims, &self.src_kps, &self.src_bbox),
            ("target", self.tgt_dims, &self.tgt_kps, &self.tgt_bbox),
        ] {
            if dims.height == 0 || dims.width == 0 {
                return fail(format!("{side} image has zero size"));
            }
            if let Some((i, kp)) = kps.iter().enumerate().find(|(_, kp)| !dims.contains(**kp)) {
                return fail(format!(
                    "{side} keypoint #{i} ({}, {}) outside {}x{} image",
                    kp.y, kp.x, dims.height, dims.width
                ));
            }
            let inside = bbox.y >= 0.0
                && bbox.x >= 0.0
                && bbox.height > 0.0
                && bbox.width > 0.0
                && bbox.y + bbox.height <= dims.height as f64
                && bbox.x + bbox.width <= dims.width as f64;
            if !inside {
                return fail(format!(
                    "{side} bbox {bbox:?} not inside {}x{} image",
                    dims.height, dims.width
                ));
            }
        }
        Ok(())
    }
}

/// Reads a JSON-lines annotation file; blank lines are skipped.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<PairAnnotation>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

pub fn parse_annotations(text: &str) -> Result<Vec<PairAnnotation>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ann: PairAnnotation =
            serde_json::from_str(line).map_err(|e| Error::AnnotationSyntax {
                line: n + 1,
                message: e.to_string(),
            })?;
        ann.validate()?;
        out.push(ann);
    }
    Ok(out)
}

pub fn write_annotations(path: impl AsRef<Path>, pairs: &[PairAnnotation]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for pair in pairs {
        let line = serde_json::to_string(pair).expect("annotation serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
