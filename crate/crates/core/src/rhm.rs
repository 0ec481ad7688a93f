//! Regularized Hough matching.
//!
//! Every candidate match `m = (q, t)` between a source and a target hyperpixel
//! gets an appearance score `a(m) = relu(cos(f_q, f_t))^d` and votes with that
//! score into the bin of a 2D offset histogram holding `x_t - x_q`. With a
//! hard bin assignment the confidence of `m` is
//!
//! ```text
//! confidence(m) = a(m) * V(bin(m)),   V(b) = sum of a(m') over all m' with bin(m') = b
//! ```
//!
//! which is computed in two passes over the `|H| x |H'|` match space. Only ratios
//! and argmaxes of confidences are meaningful; no normalization is applied.

use rayon::prelude::*;

use crate::hyperimage::HyperImage;
use crate::{Error, ImageDims, Point, Result};

/// Source rows per work unit. Fixed so the partial vote sums, and therefore the
/// output bits, never depend on the number of worker threads. Large enough that
/// repacking the target matrix for every block stays cheap next to the product.
const ROW_BLOCK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OffsetNormalizer {
    /// Divide offsets by the target image height and width.
    TargetImageDims,
    /// Divide both offset components by a fixed pixel range.
    FixedRange(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhmConfig {
    pub exponent: u32,
    pub bins_y: usize,
    pub bins_x: usize,
    pub normalizer: OffsetNormalizer,
}

impl Default for RhmConfig {
    fn default() -> Self {
        Self {
            exponent: 3,
            bins_y: 10,
            bins_x: 10,
            normalizer: OffsetNormalizer::TargetImageDims,
        }
    }
}

impl RhmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.exponent == 0 {
            return Err(Error::InvalidConfig(
                "similarity exponent must be >= 1".into(),
            ));
        }
        if self.bins_y == 0 || self.bins_x == 0 {
            return Err(Error::InvalidConfig(format!(
                "offset bins must be >= 1, got {}x{}",
                self.bins_y, self.bins_x
            )));
        }
        if let OffsetNormalizer::FixedRange(r) = self.normalizer {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "offset range must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }

    fn ranges(&self, tgt_dims: ImageDims) -> (f64, f64) {
        match self.normalizer {
            OffsetNormalizer::TargetImageDims => (tgt_dims.height as f64, tgt_dims.width as f64),
            OffsetNormalizer::FixedRange(r) => (r, r),
        }
    }

    pub fn bin_count(&self) -> usize {
        self.bins_y * self.bins_x
    }
}

/// `relu(cos)^exponent`, with the cosine capped at 1.
#[inline]
fn activate(cos: f64, exponent: u32) -> f64 {
    if cos > 0.0 {
        cos.min(1.0).powi(exponent as i32)
    } else {
        0.0
    }
}

/// Appearance score of a candidate match: the rectified cosine similarity of
/// the two features raised to `exponent`. Zero-norm inputs score 0.
pub fn appearance_similarity(a: &[f64], b: &[f64], exponent: u32) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(format!(
            "feature lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(activate(dot / (na * nb), exponent))
}

/// Bin of a normalized offset along one axis; offsets outside `[-1, 1]` clamp
/// into the edge bins.
#[inline]
fn axis_bin(offset: f64, range: f64, bins: usize) -> usize {
    let idx = ((offset / range + 1.0) / 2.0 * bins as f64).floor();
    idx.max(0.0).min((bins - 1) as f64) as usize
}

/// Hough bin `(by, bx)` of the offset `x_tgt - x_src`.
pub fn offset_bin(
    x_src: Point,
    x_tgt: Point,
    cfg: &RhmConfig,
    tgt_dims: ImageDims,
) -> (usize, usize) {
    let (ry, rx) = cfg.ranges(tgt_dims);
    (
        axis_bin(x_tgt.y - x_src.y, ry, cfg.bins_y),
        axis_bin(x_tgt.x - x_src.x, rx, cfg.bins_x),
    )
}

/// Confidences over all source x target cells, row-major by source cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceTensor {
    src_grid: (usize, usize),
    tgt_grid: (usize, usize),
    values: Vec<f64>,
}

impl ConfidenceTensor {
    pub fn new(
        src_grid: (usize, usize),
        tgt_grid: (usize, usize),
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != src_grid.0 * src_grid.1 * tgt_grid.0 * tgt_grid.1 {
            return Err(Error::DimMismatch(format!(
                "{} confidences for {src_grid:?} x {tgt_grid:?} grids",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::DimMismatch(
                "confidences must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            src_grid,
            tgt_grid,
            values,
        })
    }

    pub fn src_grid(&self) -> (usize, usize) {
        self.src_grid
    }

    pub fn tgt_grid(&self) -> (usize, usize) {
        self.tgt_grid
    }

    pub fn rows(&self) -> usize {
        self.src_grid.0 * self.src_grid.1
    }

    pub fn cols(&self) -> usize {
        self.tgt_grid.0 * self.tgt_grid.1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, q: usize) -> &[f64] {
        let m = self.cols();
        &self.values[q * m..(q + 1) * m]
    }

    pub fn get(&self, q: usize, t: usize) -> f64 {
        self.values[q * self.cols() + t]
    }

    /// Multiplies every confidence by `factor` (which must be positive).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// Accumulated appearance mass per offset bin.
#[derive(Clone, Debug, PartialEq)]
pub struct HoughHistogram {
    bins_y: usize,
    bins_x: usize,
    votes: Vec<f64>,
}

impl HoughHistogram {
    pub fn bins(&self) -> (usize, usize) {
        (self.bins_y, self.bins_x)
    }

    pub fn get(&self, by: usize, bx: usize) -> f64 {
        self.votes[by * self.bins_x + bx]
    }

    pub fn votes(&self) -> &[f64] {
        &self.votes
    }

    pub fn total(&self) -> f64 {
        self.votes.iter().sum()
    }
}

fn check_pair(src: &HyperImage, tgt: &HyperImage, cfg: &RhmConfig) -> Result<()> {
    cfg.validate()?;
    if src.dim() != tgt.dim() {
        return Err(Error::DimMismatch(format!(
            "hyperpixel dims differ: source {} vs target {}",
            src.dim(),
            tgt.dim()
        )));
    }
    Ok(())
}

fn normalized_rows(h: &HyperImage) -> Vec<f64> {
    let mut out = h.features().to_vec();
    out.par_chunks_mut(h.dim()).for_each(|row| {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    });
    out
}

/// Cosines for all matches, computed block by block. `visit` receives each
/// block (block index, raw cosines) and is expected to turn it into appearance
/// scores in place; its results are returned in block order.
fn appearance_blocks<T, F>(
    src: &HyperImage,
    tgt: &HyperImage,
    values: &mut [f64],
    visit: F,
) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut [f64]) -> T + Sync,
{
    let d = src.dim();
    let m = tgt.cell_count();
    let a = normalized_rows(src);
    let b = normalized_rows(tgt);
    values
        .par_chunks_mut(ROW_BLOCK * m)
        .enumerate()
        .map(|(blk, chunk)| {
            let rows = chunk.len() / m;
            let a_blk = &a[blk * ROW_BLOCK * d..(blk * ROW_BLOCK + rows) * d];
            // chunk = a_blk (rows x d) * b^T (d x m); b is row-major m x d.
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    d,
                    m,
                    1.0,
                    a_blk.as_ptr(),
                    d as isize,
                    1,
                    b.as_ptr(),
                    1,
                    d as isize,
                    0.0,
                    chunk.as_mut_ptr(),
                    m as isize,
                    1,
                );
            }
            visit(blk, chunk)
        })
        .collect()
}

/// Per-axis bin lookup tables: `ys[i_src * tgt_h + i_tgt]`, `xs[j_src * tgt_w + j_tgt]`.
struct BinTables {
    ys: Vec<usize>,
    xs: Vec<usize>,
    bins_x: usize,
}

impl BinTables {
    fn new(src: &HyperImage, tgt: &HyperImage, cfg: &RhmConfig) -> Self {
        let (ry, rx) = cfg.ranges(tgt.image_dims());
        let (sg, tg) = (src.geometry(), tgt.geometry());
        let mut ys = Vec::with_capacity(src.grid_height() * tgt.grid_height());
        for i in 0..src.grid_height() {
            let y = sg.cell_center(i, 0).y;
            for it in 0..tgt.grid_height() {
                ys.push(axis_bin(tg.cell_center(it, 0).y - y, ry, cfg.bins_y));
            }
        }
        let mut xs = Vec::with_capacity(src.grid_width() * tgt.grid_width());
        for j in 0..src.grid_width() {
            let x = sg.cell_center(0, j).x;
            for jt in 0..tgt.grid_width() {
                xs.push(axis_bin(tg.cell_center(0, jt).x - x, rx, cfg.bins_x));
            }
        }
        Self {
            ys,
            xs,
            bins_x: cfg.bins_x,
        }
    }

    /// Calls `f(t, bin)` for every target cell `t`, given source cell `q`.
    #[inline]
    fn for_row(
        &self,
        q: usize,
        src_w: usize,
        tgt_h: usize,
        tgt_w: usize,
        mut f: impl FnMut(usize, usize),
    ) {
        let (i, j) = (q / src_w, q % src_w);
        let ys = &self.ys[i * tgt_h..(i + 1) * tgt_h];
        let xs = &self.xs[j * tgt_w..(j + 1) * tgt_w];
        for (it, &by) in ys.iter().enumerate() {
            let base = by * self.bins_x;
            for (jt, &bx) in xs.iter().enumerate() {
                f(it * tgt_w + jt, base + bx);
            }
        }
    }
}

/// Regularized Hough matching; see the module docs.
pub fn match_rhm(src: &HyperImage, tgt: &HyperImage, cfg: &RhmConfig) -> Result<ConfidenceTensor> {
    match_rhm_with_votes(src, tgt, cfg).map(|(c, _)| c)
}

/// [`match_rhm`], also returning the offset histogram it voted into.
pub fn match_rhm_with_votes(
    src: &HyperImage,
    tgt: &HyperImage,
    cfg: &RhmConfig,
) -> Result<(ConfidenceTensor, HoughHistogram)> {
    check_pair(src, tgt, cfg)?;
    let (n, m) = (src.cell_count(), tgt.cell_count());
    let (src_w, tgt_h, tgt_w) = (src.grid_width(), tgt.grid_height(), tgt.grid_width());
    let tables = BinTables::new(src, tgt, cfg);
    let nbins = cfg.bin_count();

    let mut values = vec![0.0; n * m];
    let exponent = cfg.exponent;
    let partials = appearance_blocks(src, tgt, &mut values, |blk, chunk| {
        let mut votes = vec![0.0; nbins];
        for (r, row) in chunk.chunks_exact_mut(m).enumerate() {
            tables.for_row(blk * ROW_BLOCK + r, src_w, tgt_h, tgt_w, |t, b| {
                let a = activate(row[t], exponent);
                row[t] = a;
                votes[b] += a;
            });
        }
        votes
    });
    let mut votes = vec![0.0; nbins];
    for part in &partials {
        for (v, p) in votes.iter_mut().zip(part) {
            *v += p;
        }
    }

    values
        .par_chunks_mut(ROW_BLOCK * m)
        .enumerate()
        .for_each(|(blk, chunk)| {
            for (r, row) in chunk.chunks_exact_mut(m).enumerate() {
                tables.for_row(blk * ROW_BLOCK + r, src_w, tgt_h, tgt_w, |t, b| {
                    row[t] *= votes[b]
                });
            }
        });

    let tensor = ConfidenceTensor {
        src_grid: (src.grid_height(), src.grid_width()),
        tgt_grid: (tgt.grid_height(), tgt.grid_width()),
        values,
    };
    let hist = HoughHistogram {
        bins_y: cfg.bins_y,
        bins_x: cfg.bins_x,
        votes,
    };
    Ok((tensor, hist))
}

/// Appearance scores alone, without geometric voting.
pub fn match_nn_only(
    src: &HyperImage,
    tgt: &HyperImage,
    cfg: &RhmConfig,
) -> Result<ConfidenceTensor> {
    check_pair(src, tgt, cfg)?;
    let mut values = vec![0.0; src.cell_count() * tgt.cell_count()];
    appearance_blocks(src, tgt, &mut values, |_, chunk| {
        chunk
            .iter_mut()
            .for_each(|v| *v = activate(*v, cfg.exponent));
    });
    Ok(ConfidenceTensor {
        src_grid: (src.grid_height(), src.grid_width()),
        tgt_grid: (tgt.grid_height(), tgt.grid_width()),
        values,
    })
}
