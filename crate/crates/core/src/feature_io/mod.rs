//! Multi-layer feature-map container and the HFM1 binary format.
//!
//! HFM1 layout, all integers and floats little-endian:
//!
//! ```text
//! "HFM1"                      4 bytes magic
//! u32 format_version          = 1
//! u32 image_id_len            followed by that many UTF-8 bytes
//! u32 image_height, u32 image_width
//! u32 layer_count
//! per layer:
//!   u32 layer_id, u32 C, u32 H, u32 W
//!   f32 stride_y, f32 stride_x, f32 offset_y, f32 offset_x, f32 rf_size
//!   C*H*W f32 values, row-major (C, then H, then W)
//! ```

mod source;
mod synth;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::{Error, Point, Result};

pub use source::{DirStackSource, MemoryStackSource, StackSource};
pub use synth::{planted_pair, synth_stack, LayerSpec, NormalStream, SplitMix64};

pub const MAGIC: [u8; 4] = *b"HFM1";
pub const FORMAT_VERSION: u32 = 1;

/// Image-space placement of one layer's cell grid.
///
/// Cell `(i, j)` is centered at `(offset_y + i * stride_y, offset_x + j * stride_x)`
/// and sees a square receptive field of side `rf_size` around that center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerGeometry {
    pub stride_y: f32,
    pub stride_x: f32,
    pub offset_y: f32,
    pub offset_x: f32,
    pub rf_size: f32,
}

impl LayerGeometry {
    pub const fn new(
        stride_y: f32,
        stride_x: f32,
        offset_y: f32,
        offset_x: f32,
        rf_size: f32,
    ) -> Self {
        Self {
            stride_y,
            stride_x,
            offset_y,
            offset_x,
            rf_size,
        }
    }

    /// Same stride and offset on both axes.
    pub const fn isotropic(stride: f32, offset: f32, rf_size: f32) -> Self {
        Self::new(stride, stride, offset, offset, rf_size)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        Point::new(
            self.offset_y as f64 + i as f64 * self.stride_y as f64,
            self.offset_x as f64 + j as f64 * self.stride_x as f64,
        )
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            self.stride_y,
            self.stride_x,
            self.offset_y,
            self.offset_x,
            self.rf_size,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidStack(format!("non-finite geometry {self:?}")));
        }
        if self.stride_y <= 0.0 || self.stride_x <= 0.0 || self.rf_size <= 0.0 {
            return Err(Error::InvalidStack(format!(
                "strides and rf_size must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One layer's activations, `C x H x W` row-major with channel outermost.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    layer_id: u32,
    channels: usize,
    height: usize,
    width: usize,
    geometry: LayerGeometry,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        layer_id: u32,
        channels: usize,
        height: usize,
        width: usize,
        geometry: LayerGeometry,
        values: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidStack(format!(
                "layer {layer_id}: empty shape {channels}x{height}x{width}"
            )));
        }
        let expected = channels * height * width;
        if values.len() != expected {
            return Err(Error::InvalidStack(format!(
                "layer {layer_id}: {} values for shape {channels}x{height}x{width}",
                values.len()
            )));
        }
        geometry.validate()?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer_id, index });
        }
        Ok(Self {
            layer_id,
            channels,
            height,
            width,
            geometry,
            values,
        })
    }

    pub fn layer_id(&self) -> u32 {
        self.layer_id
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn geometry(&self) -> &LayerGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// One channel plane, `H x W` row-major.
    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, channel: usize, i: usize, j: usize) -> f32 {
        self.values[(channel * self.height + i) * self.width + j]
    }
}

/// All exported layers of one image, sorted by layer id.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    image_id: String,
    image_height: u32,
    image_width: u32,
    layers: Vec<FeatureMap>,
}

impl FeatureStack {
    pub fn new(
        image_id: impl Into<String>,
        image_height: u32,
        image_width: u32,
        layers: Vec<FeatureMap>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if image_height == 0 || image_width == 0 {
            return Err(Error::InvalidStack(format!(
                "image `{image_id}` has zero size {image_height}x{image_width}"
            )));
        }
        if layers.is_empty() {
            return Err(Error::InvalidStack(format!(
                "image `{image_id}` has no layers"
            )));
        }
        for pair in layers.windows(2) {
            if pair[1].layer_id <= pair[0].layer_id {
                return Err(Error::InvalidStack(format!(
                    "layer ids must be strictly increasing, found {} after {}",
                    pair[1].layer_id, pair[0].layer_id
                )));
            }
        }
        for layer in &layers {
            check_overhang(layer, image_height, image_width)?;
        }
        Ok(Self {
            image_id,
            image_height,
            image_width,
            layers,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn image_height(&self) -> u32 {
        self.image_height
    }

    pub fn image_width(&self) -> u32 {
        self.image_width
    }

    pub fn image_dims(&self) -> crate::ImageDims {
        crate::ImageDims::new(self.image_height, self.image_width)
    }

    pub fn layers(&self) -> &[FeatureMap] {
        &self.layers
    }

    pub fn layer(&self, layer_id: u32) -> Option<&FeatureMap> {
        self.layers
            .binary_search_by_key(&layer_id, |l| l.layer_id)
            .ok()
            .map(|i| &self.layers[i])
    }

    pub fn layer_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.layers.iter().map(|l| l.layer_id)
    }
}

// Cell centers may overhang the image by at most one receptive field.
fn check_overhang(layer: &FeatureMap, image_height: u32, image_width: u32) -> Result<()> {
    let g = &layer.geometry;
    let rf = g.rf_size as f64;
    let first = g.cell_center(0, 0);
    let last = g.cell_center(layer.height - 1, layer.width - 1);
    let ok_y = first.y >= -rf && last.y <= image_height as f64 + rf;
    let ok_x = first.x >= -rf && last.x <= image_width as f64 + rf;
    if !(ok_y && ok_x) {
        return Err(Error::InvalidStack(format!(
            "layer {}: cell centers span ({:.3},{:.3})..({:.3},{:.3}), beyond one receptive field ({rf}) of the {image_height}x{image_width} image",
            layer.layer_id, first.y, first.x, last.y, last.x
        )));
    }
    Ok(())
}

pub fn save_stack(stack: &FeatureStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_stack(stack, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_stack<W: Write>(stack: &FeatureStack, out: &mut W) -> std::io::Result<()> {
    out.write_all(&MAGIC)?;
    out.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    let id = stack.image_id.as_bytes();
    out.write_u32::<LittleEndian>(len_u32(id.len())?)?;
    out.write_all(id)?;
    out.write_u32::<LittleEndian>(stack.image_height)?;
    out.write_u32::<LittleEndian>(stack.image_width)?;
    out.write_u32::<LittleEndian>(len_u32(stack.layers.len())?)?;
    for layer in &stack.layers {
        out.write_u32::<LittleEndian>(layer.layer_id)?;
        out.write_u32::<LittleEndian>(len_u32(layer.channels)?)?;
        out.write_u32::<LittleEndian>(len_u32(layer.height)?)?;
        out.write_u32::<LittleEndian>(len_u32(layer.width)?)?;
        let g = &layer.geometry;
        for v in [g.stride_y, g.stride_x, g.offset_y, g.offset_x, g.rf_size] {
            out.write_f32::<LittleEndian>(v)?;
        }
        let mut buf = Vec::with_capacity(layer.values.len() * 4);
        for v in &layer.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn len_u32(n: usize) -> std::io::Result<u32> {
    u32::try_from(n)
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "length exceeds u32"))
}

pub fn load_stack(path: impl AsRef<Path>) -> Result<FeatureStack> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_stack(&bytes)
}

/// Decodes an in-memory HFM1 image.
pub fn parse_stack(bytes: &[u8]) -> Result<FeatureStack> {
    let mut cur = bytes;
    if cur.len() < 4 || cur[..4] != MAGIC {
        let found = &cur[..cur.len().min(4)];
        return Err(Error::Format(format!(
            "bad magic {found:?}, expected \"HFM1\""
        )));
    }
    cur = &cur[4..];
    let version = read_u32(&mut cur, "format_version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {version}"
        )));
    }
    let id_len = read_u32(&mut cur, "image_id_len")? as usize;
    let id_bytes = take(&mut cur, id_len, "image_id")?;
    let image_id = std::str::from_utf8(id_bytes)
        .map_err(|e| Error::Format(format!("image_id is not UTF-8: {e}")))?
        .to_owned();
    let image_height = read_u32(&mut cur, "image_height")?;
    let image_width = read_u32(&mut cur, "image_width")?;
    let layer_count = read_u32(&mut cur, "layer_count")?;

    let mut layers = Vec::new();
    for n in 0..layer_count {
        let layer_id = read_u32(&mut cur, "layer_id")?;
        let channels = read_u32(&mut cur, "C")? as usize;
        let height = read_u32(&mut cur, "H")? as usize;
        let width = read_u32(&mut cur, "W")? as usize;
        let mut g = [0f32; 5];
        for v in &mut g {
            *v = cur
                .read_f32::<LittleEndian>()
                .map_err(|_| truncated(&format!("geometry of layer #{n}")))?;
        }
        let count = (channels as u64) * (height as u64) * (width as u64);
        let needed = count.checked_mul(4).filter(|&b| b <= cur.len() as u64).ok_or_else(|| {
            Error::Corrupt(format!(
                "layer {layer_id} declares {channels}x{height}x{width} values but only {} bytes remain",
                cur.len()
            ))
        })?;
        let payload = take(&mut cur, needed as usize, "values")?;
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let geometry = LayerGeometry::new(g[0], g[1], g[2], g[3], g[4]);
        layers.push(FeatureMap::new(
            layer_id, channels, height, width, geometry, values,
        )?);
    }
    if !cur.is_empty() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after last layer",
            cur.len()
        )));
    }
    FeatureStack::new(image_id, image_height, image_width, layers)
}

fn truncated(what: &str) -> Error {
    Error::Corrupt(format!("file truncated while reading {what}"))
}

fn read_u32(cur: &mut &[u8], what: &str) -> Result<u32> {
    cur.read_u32::<LittleEndian>().map_err(|_| truncated(what))
}

fn take<'a>(cur: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if cur.len() < n {
        return Err(truncated(what));
    }
    let (head, tail) = cur.split_at(n);
    *cur = tail;
    Ok(head)
}
