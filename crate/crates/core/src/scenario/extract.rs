//! Training-record extraction: drop short scenarios, then emit one record per
//! frame that still has a full decision horizon ahead of it.

use serde::{Deserialize, Serialize};

use super::{Scenario, MIN_SCENARIO_FRAMES};
use crate::bev::{rasterize_static, render_scene, BevRaster, RasterSpec};
use crate::error::{Error, Result};
use crate::flat_vehicle::VehicleParams;
use crate::geometry::{world_to_local, Vec2};
use crate::DECISION_HORIZON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterLayer {
    /// env + dynamic + ego.
    Composed,
    /// Static environment only.
    Env,
}

/// Lazily rendered raster: the scene at `frame`, viewed from the ego pose at `view_frame`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterRef {
    pub scenario_id: String,
    pub frame: usize,
    pub view_frame: usize,
    pub layer: RasterLayer,
}

impl RasterRef {
    pub fn render(&self, scenario: &Scenario, params: &VehicleParams, spec: &RasterSpec) -> Result<BevRaster> {
        if scenario.id != self.scenario_id {
            return Err(Error::invalid(format!(
                "raster ref for `{}` rendered against `{}`",
                self.scenario_id, scenario.id
            )));
        }
        let view = scenario
            .ego_log
            .get(self.view_frame)
            .ok_or_else(|| Error::Domain(format!("view frame {} out of range", self.view_frame)))?;
        let ego = scenario
            .ego_log
            .get(self.frame)
            .ok_or_else(|| Error::Domain(format!("frame {} out of range", self.frame)))?;
        match self.layer {
            RasterLayer::Env => rasterize_static(&scenario.map, view, spec),
            RasterLayer::Composed => render_scene(
                &scenario.map,
                &scenario.agent_boxes(self.frame),
                ego,
                view,
                params,
                spec,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub scenario_id: String,
    pub frame: usize,
    /// Ego positions at frames `frame + 1 ..= frame + 40`, in the ego frame at `frame`.
    pub target_positions: Vec<Vec2>,
    pub current_bev: RasterRef,
    pub next_bev: RasterRef,
    pub next_env: RasterRef,
}

/// Logged future positions relative to the ego pose at `frame`.
pub fn future_in_ego_frame(scenario: &Scenario, frame: usize) -> Result<Vec<Vec2>> {
    if frame + DECISION_HORIZON >= scenario.len() {
        return Err(Error::Horizon {
            frame,
            needed: DECISION_HORIZON,
            len: scenario.len(),
        });
    }
    let origin = &scenario.ego_log[frame];
    Ok(scenario.ego_log[frame + 1..=frame + DECISION_HORIZON]
        .iter()
        .map(|s| world_to_local(s.position(), origin.position(), origin.theta))
        .collect())
}

pub fn filter_and_extract(scenarios: &[Scenario]) -> Vec<TrainingRecord> {
    let mut out = Vec::new();
    for s in scenarios {
        if s.len() < MIN_SCENARIO_FRAMES {
            log::warn!(
                "dropping scenario `{}`: {} frames < {MIN_SCENARIO_FRAMES}",
                s.id,
                s.len()
            );
            continue;
        }
        let rref = |frame, view_frame, layer| RasterRef {
            scenario_id: s.id.clone(),
            frame,
            view_frame,
            layer,
        };
        for f in 0..s.len() - DECISION_HORIZON {
            let target_positions = future_in_ego_frame(s, f).expect("frame range checked");
            out.push(TrainingRecord {
                scenario_id: s.id.clone(),
                frame: f,
                target_positions,
                current_bev: rref(f, f, RasterLayer::Composed),
                next_bev: rref(f + 1, f, RasterLayer::Composed),
                next_env: rref(f + 1, f, RasterLayer::Env),
            });
        }
    }
    out
}
