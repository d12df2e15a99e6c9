use crate::flat_vehicle::VehicleState;
use crate::geometry::Vec2;

use super::RasterSpec;

/// Similarity transform from world meters to continuous pixel coordinates
/// (column, row). Pixel centers sit on integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldToRaster {
    origin: Vec2,
    cos: f64,
    sin: f64,
    scale: f64,
    anchor: Vec2,
}

impl WorldToRaster {
    pub fn new(ego: &VehicleState, spec: &RasterSpec) -> Self {
        // Heading-up maps the ego heading to -row; north-up is the same map
        // with heading fixed at +pi/2, written out exactly.
        let (sin, cos) = if spec.ego_heading_up {
            ego.theta.sin_cos()
        } else {
            (1.0, 0.0)
        };
        Self {
            origin: ego.position(),
            cos,
            sin,
            scale: 1.0 / spec.resolution,
            anchor: Vec2::new(spec.ego_anchor[0], spec.ego_anchor[1]),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn to_raster(&self, w: Vec2) -> Vec2 {
        let d = w - self.origin;
        let forward = self.cos * d.x + self.sin * d.y;
        let left = -self.sin * d.x + self.cos * d.y;
        Vec2::new(self.anchor.x - left * self.scale, self.anchor.y - forward * self.scale)
    }

    pub fn to_world(&self, p: Vec2) -> Vec2 {
        let left = (self.anchor.x - p.x) / self.scale;
        let forward = (self.anchor.y - p.y) / self.scale;
        self.origin
            + Vec2::new(
                self.cos * forward - self.sin * left,
                self.sin * forward + self.cos * left,
            )
    }
}
