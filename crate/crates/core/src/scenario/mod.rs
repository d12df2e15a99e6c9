//! Scenario logs: static map, agent tracks and the ego log at 0.1 s.

pub mod extract;
pub mod fixtures;
pub mod format;

pub use extract::{filter_and_extract, future_in_ego_frame, RasterLayer, RasterRef, TrainingRecord};
pub use format::{load_scenario_file, load_scenarios, save_scenario, write_scenario_file, SCHEMA_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flat_vehicle::VehicleState;
use crate::geometry::{OrientedBox, Vec2};
use crate::FRAME_DT;

/// Scenarios shorter than this are dropped before extraction (24 s).
pub const MIN_SCENARIO_FRAMES: usize = 240;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StaticMap {
    #[serde(default)]
    pub lanes: Vec<Vec<Vec2>>,
    #[serde(default)]
    pub drivable_areas: Vec<Vec<Vec2>>,
    #[serde(default)]
    pub intersections: Vec<Vec<Vec2>>,
}

impl StaticMap {
    pub fn validate(&self) -> Result<()> {
        let finite = |p: &Vec2| p.x.is_finite() && p.y.is_finite();
        for lane in &self.lanes {
            if lane.len() < 2 || !lane.iter().all(finite) {
                return Err(Error::invalid("lane polylines need at least two finite points"));
            }
        }
        for poly in self.drivable_areas.iter().chain(&self.intersections) {
            if poly.len() < 3 || !poly.iter().all(finite) {
                return Err(Error::invalid("polygons need at least three finite points"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub px: f64,
    pub py: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub id: u32,
    pub kind: AgentKind,
    /// (length, width) in meters.
    pub extent: [f64; 2],
    /// One entry per scenario frame; `None` while the agent is absent.
    pub poses: Vec<Option<AgentPose>>,
}

impl AgentTrack {
    pub fn footprint(&self, frame: usize) -> Option<OrientedBox> {
        let pose = self.poses.get(frame).copied().flatten()?;
        Some(OrientedBox::new(
            Vec2::new(pose.px, pose.py),
            pose.heading,
            self.extent[0],
            self.extent[1],
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightState {
    Red,
    Yellow,
    Green,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalPhase {
    pub from_frame: usize,
    pub state: LightState,
}

/// A signal head and its schedule. Carried as metadata only; it is not rasterized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub id: u32,
    pub position: Vec2,
    pub phases: Vec<SignalPhase>,
}

impl TrafficLight {
    pub fn state_at(&self, frame: usize) -> Option<LightState> {
        self.phases
            .iter()
            .filter(|p| p.from_frame <= frame)
            .max_by_key(|p| p.from_frame)
            .map(|p| p.state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub dt: f64,
    pub ego_log: Vec<VehicleState>,
    pub agents: Vec<AgentTrack>,
    pub map: StaticMap,
    pub traffic_lights: Vec<TrafficLight>,
}

impl Scenario {
    pub fn len(&self) -> usize {
        self.ego_log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ego_log.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len().saturating_sub(1) as f64 * self.dt
    }

    /// Footprints of every agent present at `frame`.
    pub fn agent_boxes(&self, frame: usize) -> Vec<OrientedBox> {
        self.agents.iter().filter_map(|a| a.footprint(frame)).collect()
    }

    pub fn ego_positions(&self) -> Vec<Vec2> {
        self.ego_log.iter().map(|s| s.position()).collect()
    }

    pub fn light_states(&self, frame: usize) -> Vec<(u32, Option<LightState>)> {
        self.traffic_lights.iter().map(|l| (l.id, l.state_at(frame))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if (self.dt - FRAME_DT).abs() > 1e-12 {
            return Err(Error::invalid(format!("dt must be {FRAME_DT}, got {}", self.dt)));
        }
        if self.ego_log.is_empty() {
            return Err(Error::invalid("scenario has no frames"));
        }
        for s in &self.ego_log {
            VehicleState::new(s.px, s.py, s.theta, s.v)?;
        }
        for a in &self.agents {
            if a.poses.len() != self.len() {
                return Err(Error::invalid(format!("agent {} track length mismatch", a.id)));
            }
            if !a.extent.iter().all(|x| x.is_finite() && *x > 0.0) {
                return Err(Error::invalid(format!("agent {} has non-positive extent", a.id)));
            }
        }
        self.map.validate()
    }

    /// Apply a rigid transform (rotation about the origin, then translation) to everything.
    pub fn transformed(&self, rotation: f64, translation: Vec2) -> Scenario {
        use crate::geometry::{rotate, wrap_angle};
        let tp = |p: &Vec2| rotate(*p, rotation) + translation;
        let tpoly =
            |polys: &Vec<Vec<Vec2>>| -> Vec<Vec<Vec2>> { polys.iter().map(|l| l.iter().map(tp).collect()).collect() };
        Scenario {
            id: self.id.clone(),
            dt: self.dt,
            ego_log: self
                .ego_log
                .iter()
                .map(|s| {
                    let p = tp(&s.position());
                    VehicleState {
                        px: p.x,
                        py: p.y,
                        theta: wrap_angle(s.theta + rotation),
                        v: s.v,
                    }
                })
                .collect(),
            agents: self
                .agents
                .iter()
                .map(|a| AgentTrack {
                    poses: a
                        .poses
                        .iter()
                        .map(|p| {
                            p.map(|p| {
                                let q = tp(&Vec2::new(p.px, p.py));
                                AgentPose {
                                    px: q.x,
                                    py: q.y,
                                    heading: wrap_angle(p.heading + rotation),
                                }
                            })
                        })
                        .collect(),
                    ..a.clone()
                })
                .collect(),
            map: StaticMap {
                lanes: tpoly(&self.map.lanes),
                drivable_areas: tpoly(&self.map.drivable_areas),
                intersections: tpoly(&self.map.intersections),
            },
            traffic_lights: self
                .traffic_lights
                .iter()
                .map(|l| TrafficLight {
                    position: tp(&l.position),
                    ..l.clone()
                })
                .collect(),
        }
    }
}
