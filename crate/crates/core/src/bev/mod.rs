//! Ego-centric bird's-eye-view rasters.
//!
//! A raster has three channels: 0 holds the static environment (drivable
//! area, intersections, lane center lines), 1 the dynamic agents and 2 the ego
//! footprint. Intensities live in `[0, 1]`.

mod draw;
pub mod io;
mod transform;

pub use draw::{rasterize_dynamic, rasterize_static, render_ego, render_ego_in_frame, render_scene};
pub use transform::WorldToRaster;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RASTER_SIZE: usize = 224;
pub const NUM_CHANNELS: usize = 3;

pub const CH_ENV: usize = 0;
pub const CH_DYNAMIC: usize = 1;
pub const CH_EGO: usize = 2;

/// Channel-0 intensities of the static map layers.
pub const DRIVABLE_INTENSITY: f32 = 0.25;
pub const INTERSECTION_INTENSITY: f32 = 0.5;
pub const LANE_INTENSITY: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterSpec {
    pub width: usize,
    pub height: usize,
    /// Meters per pixel.
    pub resolution: f64,
    /// Pixel (column, row) where the ego reference point is drawn.
    pub ego_anchor: [f64; 2],
    /// Rotate the world so the ego heading points up; otherwise world +y is up.
    pub ego_heading_up: bool,
}

impl Default for RasterSpec {
    fn default() -> Self {
        Self {
            width: RASTER_SIZE,
            height: RASTER_SIZE,
            resolution: 0.5,
            ego_anchor: [112.0, 168.0],
            ego_heading_up: true,
        }
    }
}

impl RasterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width != RASTER_SIZE || self.height != RASTER_SIZE {
            return Err(Error::invalid(format!(
                "raster must be {RASTER_SIZE}x{RASTER_SIZE}, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(Error::invalid("raster resolution must be positive"));
        }
        if !self.ego_anchor.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("raster anchor must be finite"));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Three planar channels, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BevRaster {
    spec: RasterSpec,
    data: Vec<f32>,
}

impl BevRaster {
    pub fn zeros(spec: RasterSpec) -> Self {
        Self {
            data: vec![0.0; NUM_CHANNELS * spec.num_pixels()],
            spec,
        }
    }

    /// Build from planar channel data; values are checked to lie in `[0, 1]`.
    pub fn from_planar(spec: RasterSpec, data: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        if data.len() != NUM_CHANNELS * spec.num_pixels() {
            return Err(Error::invalid(format!(
                "raster data has {} values, expected {}",
                data.len(),
                NUM_CHANNELS * spec.num_pixels()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("raster values must lie in [0, 1]"));
        }
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &RasterSpec {
        &self.spec
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.spec.num_pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.spec.num_pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[c * self.spec.num_pixels() + row * self.spec.width + col]
    }

    /// Set a value, clamped into `[0, 1]`.
    pub fn set(&mut self, c: usize, row: usize, col: usize, v: f32) {
        let idx = c * self.spec.num_pixels() + row * self.spec.width + col;
        self.data[idx] = v.clamp(0.0, 1.0);
    }

    /// Pixels with a non-zero value in channel `c`, as (row, col).
    pub fn lit_pixels(&self, c: usize) -> Vec<(usize, usize)> {
        let w = self.spec.width;
        self.channel(c)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, _)| (i / w, i % w))
            .collect()
    }

    /// Intensity-weighted centroid (column, row) of channel `c`.
    pub fn centroid(&self, c: usize) -> Option<[f64; 2]> {
        let w = self.spec.width;
        let (mut sc, mut sr, mut total) = (0.0, 0.0, 0.0);
        for (i, v) in self.channel(c).iter().enumerate() {
            let v = *v as f64;
            sc += v * (i % w) as f64;
            sr += v * (i / w) as f64;
            total += v;
        }
        (total > 0.0).then(|| [sc / total, sr / total])
    }

    /// Copy of this raster with every channel except `keep` zeroed.
    pub fn only_channels(&self, keep: &[usize]) -> Self {
        let mut out = Self::zeros(self.spec);
        for &c in keep {
            out.channel_mut(c).copy_from_slice(self.channel(c));
        }
        out
    }

    /// The dynamic and ego channels, i.e. everything the static map does not explain.
    pub fn dynamic_part(&self) -> Self {
        self.only_channels(&[CH_DYNAMIC, CH_EGO])
    }

    pub fn all_in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn same_spec(&self, other: &BevRaster) -> Result<()> {
        if self.spec == other.spec {
            Ok(())
        } else {
            Err(Error::invalid("raster specs differ"))
        }
    }
}

/// Channelwise saturating sum.
pub fn compose(env: &BevRaster, dynamic: &BevRaster) -> Result<BevRaster> {
    env.same_spec(dynamic)?;
    let data = env
        .data
        .iter()
        .zip(&dynamic.data)
        .map(|(a, b)| (a + b).min(1.0))
        .collect();
    Ok(BevRaster { spec: env.spec, data })
}
