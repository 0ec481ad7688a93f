//! Deterministic synthetic feature stacks for tests and fixtures.
//!
//! Values come from a SplitMix64 stream fed through the Box–Muller transform:
//!
//! * `SplitMix64`: `state += 0x9E3779B97F4A7C15`, then
//!   `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9`,
//!   `z = (z ^ (z >> 27)) * 0x94D049BB133111EB`, output `z ^ (z >> 31)`
//!   (all arithmetic wrapping on `u64`).
//! * Each Box–Muller step draws two words `a`, `b` and forms
//!   `u1 = ((a >> 11) + 1) * 2^-53` in `(0, 1]` and `u2 = (b >> 11) * 2^-53` in `[0, 1)`;
//!   with `r = sqrt(-2 ln u1)` it yields `r cos(2 pi u2)` and then `r sin(2 pi u2)`.
//! * Samples are computed in `f64` and rounded to `f32`.
//!
//! `synth_stack` consumes one stream seeded with `seed`, filling layers in the
//! given order and each layer in storage order (channel, row, column).
//! `planted_pair` draws the cells that a shift exposes from a second stream
//! seeded with `seed ^ FRESH_NOISE_SALT`, again in storage order.

use crate::{Error, Result};

use super::{FeatureMap, FeatureStack, LayerGeometry};

pub const FRESH_NOISE_SALT: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (multiply-shift, negligible bias for small `n`).
    pub fn next_below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

/// Standard-normal samples via Box–Muller over [`SplitMix64`].
#[derive(Clone, Debug)]
pub struct NormalStream {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: SplitMix64::new(seed),
            spare: None,
        }
    }

    pub fn next_f64(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn next_f32(&mut self) -> f32 {
        self.next_f64() as f32
    }
}

/// Shape and geometry of one synthetic layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSpec {
    pub layer_id: u32,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub geometry: LayerGeometry,
}

impl LayerSpec {
    pub fn new(
        layer_id: u32,
        channels: usize,
        height: usize,
        width: usize,
        geometry: LayerGeometry,
    ) -> Self {
        Self {
            layer_id,
            channels,
            height,
            width,
            geometry,
        }
    }
}

/// Builds a stack whose values are i.i.d. standard normal, fully determined by
/// `seed`, `layers` and `image_dims`.
pub fn synth_stack(
    seed: u64,
    layers: &[LayerSpec],
    image_dims: (u32, u32),
) -> Result<FeatureStack> {
    if layers.is_empty() {
        return Err(Error::InvalidConfig(
            "synthetic stack needs at least one layer".into(),
        ));
    }
    let mut normal = NormalStream::new(seed);
    let maps = layers
        .iter()
        .map(|spec| {
            let n = spec.channels * spec.height * spec.width;
            let values = (0..n).map(|_| normal.next_f32()).collect();
            FeatureMap::new(
                spec.layer_id,
                spec.channels,
                spec.height,
                spec.width,
                spec.geometry,
                values,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureStack::new(format!("synth-{seed}"), image_dims.0, image_dims.1, maps)
}

/// Returns `(source, target)` where every target layer is the source layer
/// translated by `shift = (dy, dx)` cells: `target[c][i][j] = source[c][i - dy][j - dx]`.
/// Cells with no source counterpart are filled with fresh noise.
pub fn planted_pair(
    seed: u64,
    layers: &[LayerSpec],
    image_dims: (u32, u32),
    shift: (i32, i32),
) -> Result<(FeatureStack, FeatureStack)> {
    let (dy, dx) = shift;
    for spec in layers {
        if dy.unsigned_abs() as usize >= spec.height || dx.unsigned_abs() as usize >= spec.width {
            return Err(Error::InvalidConfig(format!(
                "shift ({dy},{dx}) does not fit layer {} of {}x{} cells",
                spec.layer_id, spec.height, spec.width
            )));
        }
    }
    let source = synth_stack(seed, layers, image_dims)?;
    let mut fresh = NormalStream::new(seed ^ FRESH_NOISE_SALT);
    let maps = source
        .layers()
        .iter()
        .map(|map| {
            let (c, h, w) = (map.channels(), map.height(), map.width());
            let mut values = Vec::with_capacity(c * h * w);
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let si = i as i64 - dy as i64;
                        let sj = j as i64 - dx as i64;
                        let v = if (0..h as i64).contains(&si) && (0..w as i64).contains(&sj) {
                            map.get(ch, si as usize, sj as usize)
                        } else {
                            fresh.next_f32()
                        };
                        values.push(v);
                    }
                }
            }
            FeatureMap::new(map.layer_id(), c, h, w, *map.geometry(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    let target = FeatureStack::new(
        format!("synth-{seed}-shifted"),
        image_dims.0,
        image_dims.1,
        maps,
    )?;
    Ok((source, target))
}
