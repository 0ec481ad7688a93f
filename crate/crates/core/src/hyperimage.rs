//! Hyperimage assembly: selected layers upsampled onto the base grid and
//! concatenated along channels.

use rayon::prelude::*;

use crate::feature_io::{FeatureMap, FeatureStack, LayerGeometry};
use crate::{Error, ImageDims, Point, Result};

/// Layers forming a hyperimage; `base` defines the grid, `rest` follows in order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LayerSet {
    base: u32,
    rest: Vec<u32>,
}

impl LayerSet {
    pub fn new(base: u32, rest: Vec<u32>) -> Result<Self> {
        if rest.contains(&base) {
            return Err(Error::InvalidLayerSet(format!(
                "base layer {base} repeated in {rest:?}"
            )));
        }
        let mut seen = rest.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidLayerSet(format!(
                "duplicate layer ids in {rest:?}"
            )));
        }
        Ok(Self { base, rest })
    }

    /// Smallest id becomes the base, the others follow in ascending order.
    pub fn from_ids(ids: &[u32]) -> Result<Self> {
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        let Some((&base, rest)) = sorted.split_first() else {
            return Err(Error::InvalidLayerSet("no layers given".into()));
        };
        Self::new(base, rest.to_vec())
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn rest(&self) -> &[u32] {
        &self.rest
    }

    /// Base first, then `rest` in order.
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        std::iter::once(self.base).chain(self.rest.iter().copied())
    }

    pub fn len(&self) -> usize {
        1 + self.rest.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl std::fmt::Display for LayerSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let ids: Vec<String> = self.ids().map(|l| l.to_string()).collect();
        f.write_str(&ids.join(","))
    }
}

/// Where one layer's channels sit inside the hyperpixel feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelBlock {
    pub layer_id: u32,
    pub start: usize,
    pub channels: usize,
}

/// Co-registered multi-layer features on the base grid, stored cell-major
/// (`features[p * dim + c]`).
#[derive(Clone, Debug, PartialEq)]
pub struct HyperImage {
    grid_height: usize,
    grid_width: usize,
    dim: usize,
    features: Vec<f64>,
    geometry: LayerGeometry,
    image_dims: ImageDims,
    blocks: Vec<ChannelBlock>,
}

/// A grid position with its image coordinate and feature vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperpixel<'a> {
    pub position: (usize, usize),
    pub coord: Point,
    pub feature: &'a [f64],
}

impl HyperImage {
    /// Wraps precomputed cell-major features as a single-block hyperimage.
    pub fn from_features(
        grid_height: usize,
        grid_width: usize,
        dim: usize,
        features: Vec<f64>,
        geometry: LayerGeometry,
        image_dims: ImageDims,
    ) -> Result<Self> {
        if grid_height == 0 || grid_width == 0 || dim == 0 {
            return Err(Error::DimMismatch(format!(
                "empty hyperimage {grid_height}x{grid_width}x{dim}"
            )));
        }
        if features.len() != grid_height * grid_width * dim {
            return Err(Error::DimMismatch(format!(
                "{} features for a {grid_height}x{grid_width}x{dim} hyperimage",
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimMismatch("non-finite hyperpixel feature".into()));
        }
        Ok(Self {
            grid_height,
            grid_width,
            dim,
            features,
            geometry,
            image_dims,
            blocks: vec![ChannelBlock {
                layer_id: 0,
                start: 0,
                channels: dim,
            }],
        })
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn cell_count(&self) -> usize {
        self.grid_height * self.grid_width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn geometry(&self) -> &LayerGeometry {
        &self.geometry
    }

    pub fn image_dims(&self) -> ImageDims {
        self.image_dims
    }

    pub fn blocks(&self) -> &[ChannelBlock] {
        &self.blocks
    }

    /// Feature of the cell with row-major index `q`.
    pub fn feature(&self, q: usize) -> &[f64] {
        &self.features[q * self.dim..(q + 1) * self.dim]
    }

    pub fn coord(&self, i: usize, j: usize) -> Point {
        self.geometry.cell_center(i, j)
    }

    pub fn coord_flat(&self, q: usize) -> Point {
        self.coord(q / self.grid_width, q % self.grid_width)
    }

    pub fn hyperpixel_at(&self, i: usize, j: usize) -> Result<Hyperpixel<'_>> {
        if i >= self.grid_height || j >= self.grid_width {
            return Err(Error::OutOfGrid {
                i,
                j,
                height: self.grid_height,
                width: self.grid_width,
            });
        }
        Ok(self.hyperpixel_unchecked(i, j))
    }

    fn hyperpixel_unchecked(&self, i: usize, j: usize) -> Hyperpixel<'_> {
        Hyperpixel {
            position: (i, j),
            coord: self.coord(i, j),
            feature: self.feature(i * self.grid_width + j),
        }
    }

    /// Hyperpixels whose base receptive field (a square of side `rf_size`
    /// centered on the cell) contains `keypoint`, boundaries included, in
    /// row-major order.
    pub fn neighbors_covering(&self, keypoint: Point) -> Result<Vec<Hyperpixel<'_>>> {
        if !keypoint.is_finite() || !self.image_dims.contains(keypoint) {
            return Err(Error::KeypointOutOfBounds {
                y: keypoint.y,
                x: keypoint.x,
                height: self.image_dims.height,
                width: self.image_dims.width,
            });
        }
        let g = &self.geometry;
        let half = g.rf_size as f64 / 2.0;
        let rows = covering_range(
            keypoint.y,
            g.offset_y as f64,
            g.stride_y as f64,
            half,
            self.grid_height,
        );
        let cols = covering_range(
            keypoint.x,
            g.offset_x as f64,
            g.stride_x as f64,
            half,
            self.grid_width,
        );
        let mut out = Vec::new();
        for i in rows {
            for j in cols.clone() {
                let c = self.coord(i, j);
                if (keypoint.y - c.y).abs() <= half && (keypoint.x - c.x).abs() <= half {
                    out.push(self.hyperpixel_unchecked(i, j));
                }
            }
        }
        Ok(out)
    }

    /// Channels contributed by `layer_id`, one slice per cell.
    pub fn layer_channels(&self, layer_id: u32) -> Option<impl Iterator<Item = &[f64]> + '_> {
        let block = *self.blocks.iter().find(|b| b.layer_id == layer_id)?;
        Some(
            self.features
                .chunks_exact(self.dim)
                .map(move |f| &f[block.start..block.start + block.channels]),
        )
    }
}

// Candidate index range along one axis, padded by one cell on each side so the
// exact containment test downstream decides boundary cases.
fn covering_range(
    k: f64,
    offset: f64,
    stride: f64,
    half: f64,
    len: usize,
) -> std::ops::Range<usize> {
    let lo = ((k - half - offset) / stride).floor() - 1.0;
    let hi = ((k + half - offset) / stride).ceil() + 1.0;
    let lo = lo.max(0.0).min(len as f64) as usize;
    let hi = (hi + 1.0).max(0.0).min(len as f64) as usize;
    lo..hi.max(lo)
}

/// Builds the hyperimage for `layers`: the base map as-is, every other layer
/// bilinearly upsampled to the base grid, concatenated in `layers` order.
pub fn assemble(stack: &FeatureStack, layers: &LayerSet) -> Result<HyperImage> {
    let maps = layers
        .ids()
        .map(|id| stack.layer(id).ok_or(Error::MissingLayer(id)))
        .collect::<Result<Vec<&FeatureMap>>>()?;
    let base = maps[0];
    let (out_h, out_w) = (base.height(), base.width());
    for m in &maps[1..] {
        if m.height() > out_h || m.width() > out_w {
            return Err(Error::BaseNotLargest {
                base: base.layer_id(),
                base_h: out_h,
                base_w: out_w,
                other: m.layer_id(),
                other_h: m.height(),
                other_w: m.width(),
            });
        }
    }

    let mut blocks = Vec::with_capacity(maps.len());
    let mut start = 0;
    for m in &maps {
        blocks.push(ChannelBlock {
            layer_id: m.layer_id(),
            start,
            channels: m.channels(),
        });
        start += m.channels();
    }
    let dim = start;

    let resampled: Vec<Vec<f64>> = maps
        .par_iter()
        .map(|m| upsample_cell_major(m, out_h, out_w))
        .collect();

    let cells = out_h * out_w;
    let mut features = vec![0.0; cells * dim];
    for (block, data) in blocks.iter().zip(&resampled) {
        for (dst, src) in features
            .chunks_exact_mut(dim)
            .zip(data.chunks_exact(block.channels))
        {
            dst[block.start..block.start + block.channels].copy_from_slice(src);
        }
    }

    Ok(HyperImage {
        grid_height: out_h,
        grid_width: out_w,
        dim,
        features,
        geometry: *base.geometry(),
        image_dims: stack.image_dims(),
        blocks,
    })
}

/// Bilinear taps for one output axis: `(i0, i1, weight of i1)`.
///
/// The sampling coordinate is `(dst + 0.5) * in_len / out_len - 0.5`, clamped
/// to `[0, in_len - 1]`.
pub(crate) fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    let max = (in_len - 1) as f64;
    (0..out_len)
        .map(|dst| {
            let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Resamples `map` to `out_h x out_w`, returning cell-major data (`[p * C + c]`).
fn upsample_cell_major(map: &FeatureMap, out_h: usize, out_w: usize) -> Vec<f64> {
    let c = map.channels();
    let (in_h, in_w) = (map.height(), map.width());
    let mut out = vec![0.0; out_h * out_w * c];
    if in_h == out_h && in_w == out_w {
        for ch in 0..c {
            for (p, &v) in map.plane(ch).iter().enumerate() {
                out[p * c + ch] = v as f64;
            }
        }
        return out;
    }
    let ty = axis_taps(in_h, out_h);
    let tx = axis_taps(in_w, out_w);
    for ch in 0..c {
        let plane = map.plane(ch);
        let at = |i: usize, j: usize| plane[i * in_w + j] as f64;
        for (oi, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (oj, &(x0, x1, wx)) in tx.iter().enumerate() {
                let top = (1.0 - wx) * at(y0, x0) + wx * at(y0, x1);
                let bottom = (1.0 - wx) * at(y1, x0) + wx * at(y1, x1);
                out[(oi * out_w + oj) * c + ch] = (1.0 - wy) * top + wy * bottom;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_io::{synth_stack, LayerSpec};
    use proptest::prelude::*;

    fn geom() -> LayerGeometry {
        LayerGeometry::isotropic(4.0, 2.0, 8.0)
    }

    fn map(
        id: u32,
        c: usize,
        h: usize,
        w: usize,
        values: Vec<f32>,
        g: LayerGeometry,
    ) -> FeatureMap {
        FeatureMap::new(id, c, h, w, g, values).unwrap()
    }

    #[test]
    fn layer_set_validation() {
        assert!(LayerSet::new(1, vec![2, 3]).is_ok());
        assert!(LayerSet::new(1, vec![2, 1]).is_err());
        assert!(LayerSet::new(1, vec![2, 2]).is_err());
        let s = LayerSet::from_ids(&[5, 2, 9]).unwrap();
        assert_eq!(s.base(), 2);
        assert_eq!(s.rest(), &[5, 9]);
        assert_eq!(s.to_string(), "2,5,9");
        assert!(LayerSet::from_ids(&[]).is_err());
        assert!(LayerSet::from_ids(&[3, 3]).is_err());
    }

    #[test]
    fn base_only_is_transpose() {
        let stack = synth_stack(5, &[LayerSpec::new(0, 4, 3, 3, geom())], (12, 12)).unwrap();
        let h = assemble(&stack, &LayerSet::new(0, vec![]).unwrap()).unwrap();
        let m = &stack.layers()[0];
        assert_eq!((h.grid_height(), h.grid_width(), h.dim()), (3, 3, 4));
        for i in 0..3 {
            for j in 0..3 {
                for c in 0..4 {
                    assert_eq!(h.feature(i * 3 + j)[c], m.get(c, i, j) as f64);
                }
            }
        }
    }

    #[test]
    fn constant_layer_stays_constant() {
        let base = map(0, 1, 5, 7, vec![0.0; 35], geom());
        let coarse = map(
            1,
            2,
            2,
            3,
            vec![3.5; 12],
            LayerGeometry::isotropic(8.0, 4.0, 16.0),
        );
        let stack = FeatureStack::new("c", 28, 28, vec![base, coarse]).unwrap();
        let h = assemble(&stack, &LayerSet::new(0, vec![1]).unwrap()).unwrap();
        assert_eq!(h.dim(), 3);
        for q in 0..h.cell_count() {
            assert_eq!(&h.feature(q)[1..], &[3.5, 3.5]);
        }
    }

    #[test]
    fn two_by_two_upsampled_matches_hand_bilinear() {
        // [[1,2],[3,4]] is the plane v(sy, sx) = 1 + 2 sy + sx, so bilinear
        // interpolation reproduces it exactly at the sampling coordinates.
        // For 2 -> 4 the coordinates are (d + 0.5) / 2 - 0.5 clamped to [0, 1].
        let coords = [0.0, 0.25, 0.75, 1.0];
        let base = map(0, 1, 4, 4, vec![0.0; 16], geom());
        let coarse = map(
            1,
            1,
            2,
            2,
            vec![1.0, 2.0, 3.0, 4.0],
            LayerGeometry::isotropic(8.0, 4.0, 16.0),
        );
        let stack = FeatureStack::new("b", 16, 16, vec![base, coarse]).unwrap();
        let h = assemble(&stack, &LayerSet::new(0, vec![1]).unwrap()).unwrap();
        for (i, sy) in coords.iter().enumerate() {
            for (j, sx) in coords.iter().enumerate() {
                let expected = 1.0 + 2.0 * sy + sx;
                assert_eq!(h.feature(i * 4 + j)[1], expected, "cell ({i},{j})");
            }
        }
    }

    #[test]
    fn base_must_be_largest() {
        let small = map(
            0,
            1,
            2,
            2,
            vec![0.0; 4],
            LayerGeometry::isotropic(8.0, 4.0, 16.0),
        );
        let big = map(1, 1, 4, 4, vec![0.0; 16], geom());
        let stack = FeatureStack::new("b", 16, 16, vec![small, big]).unwrap();
        assert!(matches!(
            assemble(&stack, &LayerSet::new(0, vec![1]).unwrap()),
            Err(Error::BaseNotLargest { .. })
        ));
        assert!(matches!(
            assemble(&stack, &LayerSet::new(0, vec![7]).unwrap()),
            Err(Error::MissingLayer(7))
        ));
        assert!(assemble(&stack, &LayerSet::new(1, vec![0]).unwrap()).is_ok());
    }

    #[test]
    fn permuting_rest_permutes_blocks() {
        let g1 = LayerGeometry::isotropic(8.0, 4.0, 16.0);
        let specs = [
            LayerSpec::new(0, 3, 6, 6, geom()),
            LayerSpec::new(1, 2, 3, 3, g1),
            LayerSpec::new(2, 4, 2, 3, g1),
        ];
        let stack = synth_stack(9, &specs, (24, 24)).unwrap();
        let a = assemble(&stack, &LayerSet::new(0, vec![1, 2]).unwrap()).unwrap();
        let b = assemble(&stack, &LayerSet::new(0, vec![2, 1]).unwrap()).unwrap();
        for layer in [0, 1, 2] {
            let xa: Vec<&[f64]> = a.layer_channels(layer).unwrap().collect();
            let xb: Vec<&[f64]> = b.layer_channels(layer).unwrap().collect();
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn same_resolution_layers_copied_exactly() {
        let specs = [
            LayerSpec::new(0, 3, 4, 5, geom()),
            LayerSpec::new(4, 2, 4, 5, geom()),
        ];
        let stack = synth_stack(11, &specs, (20, 20)).unwrap();
        let h = assemble(&stack, &LayerSet::new(0, vec![4]).unwrap()).unwrap();
        let m = stack.layer(4).unwrap();
        for (q, f) in h.layer_channels(4).unwrap().enumerate() {
            for (c, v) in f.iter().enumerate() {
                assert_eq!(*v, m.get(c, q / 5, q % 5) as f64);
            }
        }
    }

    #[test]
    fn assembly_independent_of_thread_count() {
        let g1 = LayerGeometry::isotropic(8.0, 4.0, 16.0);
        let specs = [
            LayerSpec::new(0, 3, 9, 7, geom()),
            LayerSpec::new(1, 5, 4, 3, g1),
            LayerSpec::new(2, 2, 2, 2, g1),
        ];
        let stack = synth_stack(2, &specs, (36, 28)).unwrap();
        let set = LayerSet::new(0, vec![1, 2]).unwrap();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| assemble(&stack, &set)).unwrap();
        let b = four.install(|| assemble(&stack, &set)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hyperpixel_coordinates() {
        let stack = synth_stack(1, &[LayerSpec::new(0, 2, 3, 4, geom())], (16, 16)).unwrap();
        let h = assemble(&stack, &LayerSet::new(0, vec![]).unwrap()).unwrap();
        assert_eq!(h.hyperpixel_at(0, 0).unwrap().coord, Point::new(2.0, 2.0));
        let hp = h.hyperpixel_at(1, 2).unwrap();
        assert_eq!(hp.coord, Point::new(6.0, 10.0));
        assert_eq!(hp.feature, h.feature(6));
        assert!(matches!(
            h.hyperpixel_at(3, 0),
            Err(Error::OutOfGrid { .. })
        ));
        assert!(h.hyperpixel_at(0, 4).is_err());
    }

    fn brute_force(h: &HyperImage, k: Point) -> Vec<(usize, usize)> {
        let half = h.geometry().rf_size as f64 / 2.0;
        let mut out = vec![];
        for i in 0..h.grid_height() {
            for j in 0..h.grid_width() {
                let c = h.coord(i, j);
                if (c.y - k.y).abs() <= half && (c.x - k.x).abs() <= half {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn positions(v: &[Hyperpixel<'_>]) -> Vec<(usize, usize)> {
        v.iter().map(|h| h.position).collect()
    }

    #[test]
    fn neighbor_boundaries() {
        // rf equal to stride: cells at x = 2 and 6, midpoint 4 is on both borders
        let g = LayerGeometry::isotropic(4.0, 2.0, 4.0);
        let stack = synth_stack(1, &[LayerSpec::new(0, 1, 4, 4, g)], (16, 16)).unwrap();
        let h = assemble(&stack, &LayerSet::new(0, vec![]).unwrap()).unwrap();
        let n = h.neighbors_covering(Point::new(2.0, 4.0)).unwrap();
        assert_eq!(positions(&n), vec![(0, 0), (0, 1)]);
        let n = h.neighbors_covering(Point::new(6.0, 6.0)).unwrap();
        assert_eq!(positions(&n), vec![(1, 1)]);
        assert!(h.neighbors_covering(Point::new(-0.5, 3.0)).is_err());
        assert!(h.neighbors_covering(Point::new(3.0, 16.5)).is_err());
        assert!(h.neighbors_covering(Point::new(f64::NAN, 3.0)).is_err());
    }

    proptest! {
        #[test]
        fn neighbors_match_exhaustive_scan(
            stride in 1.0f32..9.0,
            offset in 0.0f32..6.0,
            rf_scale in 0.5f32..4.0,
            rows in 1usize..9,
            cols in 1usize..9,
            fy in 0.0f64..=1.0,
            fx in 0.0f64..=1.0,
        ) {
            let rf = stride * rf_scale;
            let g = LayerGeometry::new(stride, stride * 0.75, offset, offset * 0.5, rf);
            let dims = (
                (offset + stride * rows as f32).ceil().max(1.0) as u32,
                (offset * 0.5 + stride * 0.75 * cols as f32).ceil().max(1.0) as u32,
            );
            let stack = synth_stack(0, &[LayerSpec::new(0, 1, rows, cols, g)], dims).unwrap();
            let h = assemble(&stack, &LayerSet::new(0, vec![]).unwrap()).unwrap();
            let k = Point::new(fy * dims.0 as f64, fx * dims.1 as f64);
            let got = positions(&h.neighbors_covering(k).unwrap());
            prop_assert_eq!(got, brute_force(&h, k));
        }

        #[test]
        fn cell_center_always_covered(i in 0usize..6, j in 0usize..6) {
            let g = LayerGeometry::isotropic(4.0, 2.0, 4.0);
            let stack = synth_stack(0, &[LayerSpec::new(0, 1, 6, 6, g)], (24, 24)).unwrap();
            let h = assemble(&stack, &LayerSet::new(0, vec![]).unwrap()).unwrap();
            let n = h.neighbors_covering(h.coord(i, j)).unwrap();
            prop_assert!(positions(&n).contains(&(i, j)));
        }
    }
}
