use crate::error::Result;
use crate::flat_vehicle::{VehicleParams, VehicleState};
use crate::geometry::{point_in_polygon, OrientedBox, Vec2};
use crate::scenario::StaticMap;

use super::{
    compose, BevRaster, RasterSpec, WorldToRaster, CH_DYNAMIC, CH_EGO, CH_ENV, DRIVABLE_INTENSITY,
    INTERSECTION_INTENSITY, LANE_INTENSITY,
};

/// Subsamples per pixel axis used for box coverage.
const SUPERSAMPLE: usize = 4;

/// Polyline sampling step in pixels.
const LINE_STEP_PX: f64 = 0.25;

struct Canvas<'a> {
    plane: &'a mut [f32],
    width: usize,
    height: usize,
}

impl Canvas<'_> {
    fn bump(&mut self, row: usize, col: usize, v: f32) {
        let px = &mut self.plane[row * self.width + col];
        *px = px.max(v.clamp(0.0, 1.0));
    }

    /// Inclusive pixel index range covering `[lo, hi]` in continuous coordinates.
    fn span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
        let a = (lo - 0.5).ceil().max(0.0);
        let b = (hi + 0.5).floor().min(n as f64 - 1.0);
        (a <= b).then_some((a as usize, b as usize))
    }

    fn fill_polygon(&mut self, pts: &[Vec2], v: f32) {
        if pts.len() < 3 {
            return;
        }
        let (min, max) = bounds(pts);
        let (Some((c0, c1)), Some((r0, r1))) = (
            Self::span(min.x - 0.5, max.x + 0.5, self.width),
            Self::span(min.y - 0.5, max.y + 0.5, self.height),
        ) else {
            return;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                if point_in_polygon(Vec2::new(col as f64, row as f64), pts) {
                    self.bump(row, col, v);
                }
            }
        }
    }

    fn draw_polyline(&mut self, pts: &[Vec2], v: f32) {
        let (w, h) = (self.width as f64, self.height as f64);
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            // skip segments whose bounding box misses the image
            if a.x.max(b.x) < -0.5 || a.x.min(b.x) > w - 0.5 || a.y.max(b.y) < -0.5 || a.y.min(b.y) > h - 0.5 {
                continue;
            }
            let n = ((b - a).norm() / LINE_STEP_PX).ceil().max(1.0) as usize;
            for i in 0..=n {
                let p = a + (b - a) * (i as f64 / n as f64);
                let (col, row) = (p.x.round(), p.y.round());
                if col >= 0.0 && row >= 0.0 && col < w && row < h {
                    self.bump(row as usize, col as usize, v);
                }
            }
        }
    }

    /// Fill a convex quad with per-pixel area coverage.
    fn fill_convex_coverage(&mut self, quad: &[Vec2; 4]) {
        let (min, max) = bounds(quad);
        let (Some((c0, c1)), Some((r0, r1))) = (
            Self::span(min.x - 0.5, max.x + 0.5, self.width),
            Self::span(min.y - 0.5, max.y + 0.5, self.height),
        ) else {
            return;
        };
        let n = SUPERSAMPLE;
        let total = (n * n) as f32;
        for row in r0..=r1 {
            for col in c0..=c1 {
                let mut hits = 0usize;
                for i in 0..n {
                    for j in 0..n {
                        let p = Vec2::new(
                            col as f64 - 0.5 + (j as f64 + 0.5) / n as f64,
                            row as f64 - 0.5 + (i as f64 + 0.5) / n as f64,
                        );
                        if inside_convex(quad, p) {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    self.bump(row, col, hits as f32 / total);
                }
            }
        }
    }
}

fn bounds(pts: &[Vec2]) -> (Vec2, Vec2) {
    pts.iter().fold(
        (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

fn inside_convex(quad: &[Vec2; 4], p: Vec2) -> bool {
    let mut sign = 0.0f64;
    for i in 0..4 {
        let a = quad[i];
        let b = quad[(i + 1) % 4];
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if cross != 0.0 {
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
    }
    true
}

fn canvas(raster: &mut BevRaster, c: usize) -> Canvas<'_> {
    let (width, height) = (raster.spec().width, raster.spec().height);
    Canvas {
        plane: raster.channel_mut(c),
        width,
        height,
    }
}

fn draw_boxes(raster: &mut BevRaster, c: usize, tf: &WorldToRaster, boxes: &[OrientedBox]) {
    let (w, h) = (raster.spec().width as f64, raster.spec().height as f64);
    let mut cv = canvas(raster, c);
    for b in boxes {
        let quad = b.corners().map(|p| tf.to_raster(p));
        let (min, max) = bounds(&quad);
        if max.x < -0.5 || max.y < -0.5 || min.x > w - 0.5 || min.y > h - 0.5 {
            continue;
        }
        cv.fill_convex_coverage(&quad);
    }
}

/// Static environment into channel 0: drivable areas, then intersections,
/// then lane center lines, combined by maximum.
pub fn rasterize_static(map: &StaticMap, ego: &VehicleState, spec: &RasterSpec) -> Result<BevRaster> {
    spec.validate()?;
    let tf = WorldToRaster::new(ego, spec);
    let mut raster = BevRaster::zeros(*spec);
    let mut cv = canvas(&mut raster, CH_ENV);
    let project = |poly: &Vec<Vec2>| poly.iter().map(|p| tf.to_raster(*p)).collect::<Vec<_>>();
    for area in &map.drivable_areas {
        cv.fill_polygon(&project(area), DRIVABLE_INTENSITY);
    }
    for area in &map.intersections {
        cv.fill_polygon(&project(area), INTERSECTION_INTENSITY);
    }
    for lane in &map.lanes {
        cv.draw_polyline(&project(lane), LANE_INTENSITY);
    }
    Ok(raster)
}

/// Agent footprints into channel 1 with area coverage; boxes fully outside the
/// field of view are skipped.
pub fn rasterize_dynamic(agents: &[OrientedBox], ego: &VehicleState, spec: &RasterSpec) -> Result<BevRaster> {
    spec.validate()?;
    let tf = WorldToRaster::new(ego, spec);
    let mut raster = BevRaster::zeros(*spec);
    draw_boxes(&mut raster, CH_DYNAMIC, &tf, agents);
    Ok(raster)
}

/// Ego footprint into channel 2, drawn relative to `frame_pose`.
///
/// With `frame_pose == ego` this is the usual ego-centric rendering.
pub fn render_ego_in_frame(
    ego: &VehicleState,
    frame_pose: &VehicleState,
    params: &VehicleParams,
    spec: &RasterSpec,
) -> Result<BevRaster> {
    spec.validate()?;
    let tf = WorldToRaster::new(frame_pose, spec);
    let mut raster = BevRaster::zeros(*spec);
    draw_boxes(&mut raster, CH_EGO, &tf, &[params.footprint(ego)]);
    Ok(raster)
}

pub fn render_ego(ego: &VehicleState, params: &VehicleParams, spec: &RasterSpec) -> Result<BevRaster> {
    render_ego_in_frame(ego, ego, params, spec)
}

/// Full composed raster (env + dynamic + ego) in the frame of `frame_pose`.
pub fn render_scene(
    map: &StaticMap,
    agents: &[OrientedBox],
    ego: &VehicleState,
    frame_pose: &VehicleState,
    params: &VehicleParams,
    spec: &RasterSpec,
) -> Result<BevRaster> {
    let env = rasterize_static(map, frame_pose, spec)?;
    let dynamic = rasterize_dynamic(agents, frame_pose, spec)?;
    let ego_layer = render_ego_in_frame(ego, frame_pose, params, spec)?;
    compose(&compose(&env, &dynamic)?, &ego_layer)
}
