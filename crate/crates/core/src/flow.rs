//! Hyperpixel flow and keypoint transfer.

use std::fmt::Write as _;

use crate::eval::PairAnnotation;
use crate::hyperimage::HyperImage;
use crate::rhm::ConfidenceTensor;
use crate::{Error, Point, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowEntry {
    /// Row-major index of the assigned target cell.
    pub target_index: usize,
    /// Image coordinate of that cell, `T(x_q)`.
    pub target: Point,
    pub confidence: f64,
}

/// One assigned target per source cell, row-major over the source grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    grid: (usize, usize),
    entries: Vec<FlowEntry>,
}

impl Flow {
    pub fn new(grid: (usize, usize), entries: Vec<FlowEntry>) -> Result<Self> {
        if entries.len() != grid.0 * grid.1 {
            return Err(Error::DimMismatch(format!(
                "{} flow entries for a {}x{} grid",
                entries.len(),
                grid.0,
                grid.1
            )));
        }
        Ok(Self { grid, entries })
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn entries(&self) -> &[FlowEntry] {
        &self.entries
    }

    pub fn target(&self, i: usize, j: usize) -> Point {
        self.entries[i * self.grid.1 + j].target
    }

    /// Every target coordinate moved by `v`.
    pub fn translated(&self, v: Point) -> Self {
        Self {
            grid: self.grid,
            entries: self
                .entries
                .iter()
                .map(|e| FlowEntry {
                    target: e.target + v,
                    ..*e
                })
                .collect(),
        }
    }

    /// Text table, one line per source cell:
    /// `i j y_src x_src y_tgt x_tgt conf` with six decimals.
    pub fn to_table(&self, src: &HyperImage) -> String {
        let mut out = String::with_capacity(self.entries.len() * 64);
        for (q, e) in self.entries.iter().enumerate() {
            let (i, j) = (q / self.grid.1, q % self.grid.1);
            let s = src.coord(i, j);
            let _ = writeln!(
                out,
                "{i} {j} {:.6} {:.6} {:.6} {:.6} {:.6}",
                s.y, s.x, e.target.y, e.target.x, e.confidence
            );
        }
        out
    }
}

/// Assigns each source cell its highest-confidence target cell. Ties go to the
/// smallest row-major target index.
pub fn form_flow(conf: &ConfidenceTensor, src: &HyperImage, tgt: &HyperImage) -> Result<Flow> {
    let src_grid = (src.grid_height(), src.grid_width());
    let tgt_grid = (tgt.grid_height(), tgt.grid_width());
    if conf.src_grid() != src_grid || conf.tgt_grid() != tgt_grid {
        return Err(Error::DimMismatch(format!(
            "confidence tensor is {:?} x {:?}, hyperimages are {src_grid:?} x {tgt_grid:?}",
            conf.src_grid(),
            conf.tgt_grid()
        )));
    }
    let entries = (0..conf.rows())
        .map(|q| {
            let row = conf.row(q);
            let mut best = 0;
            for (t, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = t;
                }
            }
            FlowEntry {
                target_index: best,
                target: tgt.coord_flat(best),
                confidence: row[best],
            }
        })
        .collect();
    Flow::new(src_grid, entries)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeypointPrediction {
    pub point: Point,
    /// Number of source cells whose receptive field covered the keypoint.
    pub neighbors: usize,
}

/// Predicts where `keypoint` lands in the target: the mean over covering source
/// cells `q` of `T(x_q) + (keypoint - x_q)`.
pub fn transfer_keypoint(
    flow: &Flow,
    src: &HyperImage,
    keypoint: Point,
) -> Result<KeypointPrediction> {
    if flow.grid != (src.grid_height(), src.grid_width()) {
        return Err(Error::DimMismatch(format!(
            "flow grid {:?} does not match source grid {}x{}",
            flow.grid,
            src.grid_height(),
            src.grid_width()
        )));
    }
    let neighbors = src.neighbors_covering(keypoint)?;
    if neighbors.is_empty() {
        return Err(Error::NoCoveringCell {
            y: keypoint.y,
            x: keypoint.x,
        });
    }
    let (mut sy, mut sx) = (0.0, 0.0);
    for hp in &neighbors {
        let (i, j) = hp.position;
        let moved = flow.target(i, j) + (keypoint - hp.coord);
        sy += moved.y;
        sx += moved.x;
    }
    let n = neighbors.len() as f64;
    Ok(KeypointPrediction {
        point: Point::new(sy / n, sx / n),
        neighbors: neighbors.len(),
    })
}

/// Transfers every source keypoint of `annotation`, in order.
pub fn transfer_all(
    flow: &Flow,
    src: &HyperImage,
    annotation: &PairAnnotation,
) -> Result<Vec<KeypointPrediction>> {
    annotation
        .src_kps
        .iter()
        .enumerate()
        .map(|(index, &kp)| {
            transfer_keypoint(flow, src, kp).map_err(|e| Error::Keypoint {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}
