//! Synthetic scenarios.
//!
//! Ego logs are produced by integrating the bicycle model under smooth
//! control schedules, so every log is kinematically consistent. Agents follow
//! scripted straight-line tracks.

use std::ops::Range;

use super::{AgentKind, AgentPose, AgentTrack, LightState, Scenario, SignalPhase, StaticMap, TrafficLight};
use crate::error::{Error, Result};
use crate::flat_vehicle::{integrate, VehicleControl, VehicleParams, VehicleState, MAX_SUBSTEP};
use crate::geometry::Vec2;
use crate::FRAME_DT;

/// First frame at which the ego footprint overlaps the parked car in [`stalled_agent`].
pub const STALLED_AGENT_OVERLAP_FRAME: usize = 52;

const VEHICLE_EXTENT: [f64; 2] = [4.5, 1.9];
const PEDESTRIAN_EXTENT: [f64; 2] = [0.6, 0.6];

/// Quintic smoothstep on [0, 1], clamped outside.
fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
}

/// Derivative of `smoothstep((t - t1) / (t2 - t1))` with respect to `t`.
fn smooth_pulse(t: f64, t1: f64, t2: f64) -> f64 {
    if t <= t1 || t >= t2 {
        return 0.0;
    }
    let x = (t - t1) / (t2 - t1);
    30.0 * x * x * (1.0 - x) * (1.0 - x) / (t2 - t1)
}

fn drive<F>(start: VehicleState, frames: usize, control: F) -> Vec<VehicleState>
where
    F: Fn(f64) -> VehicleControl,
{
    let params = VehicleParams::default();
    let mut log = Vec::with_capacity(frames);
    log.push(start);
    for f in 1..frames {
        let t0 = (f - 1) as f64 * FRAME_DT;
        let prev = log[f - 1];
        let next = integrate(&prev, &params, FRAME_DT, MAX_SUBSTEP, |dt, _| control(t0 + dt))
            .expect("fixture controls are finite");
        log.push(next);
    }
    log
}

struct TrackBuilder {
    frames: usize,
    next_id: u32,
    tracks: Vec<AgentTrack>,
}

impl TrackBuilder {
    fn new(frames: usize) -> Self {
        Self {
            frames,
            next_id: 1,
            tracks: Vec::new(),
        }
    }

    /// Agent moving from `p0` (at time 0) with constant velocity, present on `active` frames.
    fn linear(&mut self, kind: AgentKind, p0: Vec2, vel: Vec2, heading: f64, active: Range<usize>) -> &mut Self {
        let extent = match kind {
            AgentKind::Vehicle => VEHICLE_EXTENT,
            AgentKind::Pedestrian => PEDESTRIAN_EXTENT,
        };
        let poses = (0..self.frames)
            .map(|f| {
                active.contains(&f).then(|| {
                    let p = p0 + vel * (f as f64 * FRAME_DT);
                    AgentPose {
                        px: p.x,
                        py: p.y,
                        heading,
                    }
                })
            })
            .collect();
        self.tracks.push(AgentTrack {
            id: self.next_id,
            kind,
            extent,
            poses,
        });
        self.next_id += 1;
        self
    }

    fn parked(&mut self, p: Vec2, heading: f64) -> &mut Self {
        let frames = self.frames;
        self.linear(AgentKind::Vehicle, p, Vec2::zeros(), heading, 0..frames)
    }

    fn build(&mut self) -> Vec<AgentTrack> {
        std::mem::take(&mut self.tracks)
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Vec2> {
    vec![
        Vec2::new(x0, y0),
        Vec2::new(x1, y0),
        Vec2::new(x1, y1),
        Vec2::new(x0, y1),
    ]
}

fn line(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Vec2> {
    vec![Vec2::new(x0, y0), Vec2::new(x1, y1)]
}

fn straight_map(lane_ys: &[f64]) -> StaticMap {
    let lo = lane_ys.iter().cloned().fold(f64::INFINITY, f64::min) - 1.75;
    let hi = lane_ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.75;
    StaticMap {
        lanes: lane_ys.iter().map(|y| line(-100.0, *y, 500.0, *y)).collect(),
        drivable_areas: vec![rect(-100.0, lo, 500.0, hi)],
        intersections: Vec::new(),
    }
}

/// Four-way intersection centered at (50, 0) with two lanes per road.
fn intersection_map() -> StaticMap {
    let arc: Vec<Vec2> = (0..=16)
        .map(|i| {
            let a = std::f64::consts::FRAC_PI_2 * i as f64 / 16.0;
            Vec2::new(43.75 + 8.0 * a.sin(), -9.75 + 8.0 * a.cos())
        })
        .collect();
    StaticMap {
        lanes: vec![
            line(-100.0, -1.75, 200.0, -1.75),
            line(200.0, 1.75, -100.0, 1.75),
            line(48.25, -150.0, 48.25, 150.0),
            line(51.75, 150.0, 51.75, -150.0),
            arc,
        ],
        drivable_areas: vec![rect(-100.0, -3.5, 200.0, 3.5), rect(46.5, -150.0, 53.5, 150.0)],
        intersections: vec![rect(44.0, -6.0, 56.0, 6.0)],
    }
}

fn light(phases: &[(usize, LightState)]) -> Vec<TrafficLight> {
    vec![TrafficLight {
        id: 1,
        position: Vec2::new(44.0, -1.75),
        phases: phases
            .iter()
            .map(|(f, s)| SignalPhase {
                from_frame: *f,
                state: *s,
            })
            .collect(),
    }]
}

fn scenario(
    id: &str,
    ego_log: Vec<VehicleState>,
    agents: Vec<AgentTrack>,
    map: StaticMap,
    lights: Vec<TrafficLight>,
) -> Scenario {
    Scenario {
        id: id.to_string(),
        dt: FRAME_DT,
        ego_log,
        agents,
        map,
        traffic_lights: lights,
    }
}

fn state(px: f64, py: f64, theta: f64, v: f64) -> VehicleState {
    VehicleState::new(px, py, theta, v).expect("fixture state")
}

/// Ego at constant speed along +x on an empty single-lane road.
pub fn constant_velocity(frames: usize, speed: f64) -> Scenario {
    let log = (0..frames)
        .map(|f| state(speed * FRAME_DT * f as f64, 0.0, 0.0, speed))
        .collect();
    scenario("constant_velocity", log, Vec::new(), straight_map(&[0.0]), Vec::new())
}

/// 30 s two-way road: ego cruises at 8 m/s behind a lead car, with oncoming
/// traffic and a pedestrian on the shoulder.
pub fn straight_road() -> Scenario {
    let frames = 300;
    let log = drive(state(0.0, 0.0, 0.0, 8.0), frames, |_| VehicleControl::default());
    let agents = TrackBuilder::new(frames)
        .linear(
            AgentKind::Vehicle,
            Vec2::new(25.0, 0.0),
            Vec2::new(8.0, 0.0),
            0.0,
            0..frames,
        )
        .linear(
            AgentKind::Vehicle,
            Vec2::new(260.0, 3.5),
            Vec2::new(-9.0, 0.0),
            std::f64::consts::PI,
            0..frames,
        )
        .linear(
            AgentKind::Pedestrian,
            Vec2::new(34.0, -4.5),
            Vec2::new(1.2, 0.0),
            0.0,
            50..250,
        )
        .build();
    scenario("straight_road", log, agents, straight_map(&[0.0, 3.5]), Vec::new())
}

/// Ego drives at 5 m/s straight into a parked car; first overlap at
/// [`STALLED_AGENT_OVERLAP_FRAME`].
pub fn stalled_agent() -> Scenario {
    let frames = 120;
    let log = (0..frames).map(|f| state(0.5 * f as f64, 0.0, 0.0, 5.0)).collect();
    let agents = TrackBuilder::new(frames).parked(Vec2::new(30.2, 0.0), 0.0).build();
    scenario("stalled_agent", log, agents, straight_map(&[0.0]), Vec::new())
}

/// Red light: the ego brakes smoothly from 8 m/s to a stop before the
/// intersection while cross traffic flows.
pub fn red_light_stop() -> Scenario {
    let frames = 300;
    let log = drive(state(0.0, -1.75, 0.0, 8.0), frames, |t| VehicleControl {
        a: -8.0 * smooth_pulse(t, 1.5, 7.5),
        phi: 0.0,
    });
    let up = std::f64::consts::FRAC_PI_2;
    let mut b = TrackBuilder::new(frames);
    for k in 0..4 {
        b.linear(
            AgentKind::Vehicle,
            Vec2::new(48.25, -60.0 - 35.0 * k as f64),
            Vec2::new(0.0, 8.0),
            up,
            0..frames,
        );
        b.linear(
            AgentKind::Vehicle,
            Vec2::new(51.75, 40.0 + 35.0 * k as f64),
            Vec2::new(0.0, -8.0),
            -up,
            0..frames,
        );
    }
    b.parked(Vec2::new(59.0, 1.75), std::f64::consts::PI);
    b.linear(
        AgentKind::Pedestrian,
        Vec2::new(42.0, -8.0),
        Vec2::new(0.0, 0.0),
        up,
        0..frames,
    );
    scenario(
        "red_light_stop",
        log,
        b.build(),
        intersection_map(),
        light(&[(0, LightState::Red)]),
    )
}

/// Green light: the ego turns right through a busy intersection.
pub fn green_light_dynamic() -> Scenario {
    let frames = 300;
    let params = VehicleParams::default();
    let (v, radius, x_turn) = (4.5, 8.0, 43.75);
    let t_in = x_turn / v;
    let t_out = t_in + std::f64::consts::FRAC_PI_2 * radius / v;
    let phi = -(params.wheelbase / radius).atan();
    let ramp = 0.5;
    let log = drive(state(0.0, -1.75, 0.0, v), frames, |t| VehicleControl {
        a: 0.0,
        phi: phi * (smoothstep((t - t_in + 0.5 * ramp) / ramp) - smoothstep((t - t_out + 0.5 * ramp) / ramp)),
    });
    let up = std::f64::consts::FRAC_PI_2;
    let pi = std::f64::consts::PI;
    let mut b = TrackBuilder::new(frames);
    b.linear(
        AgentKind::Vehicle,
        Vec2::new(15.0, -1.75),
        Vec2::new(6.0, 0.0),
        0.0,
        0..frames,
    );
    for k in 0..5 {
        b.linear(
            AgentKind::Vehicle,
            Vec2::new(90.0 + 30.0 * k as f64, 1.75),
            Vec2::new(-8.0, 0.0),
            pi,
            0..frames,
        );
    }
    b.parked(Vec2::new(48.25, -20.0), up);
    b.parked(Vec2::new(48.25, -27.0), up);
    b.linear(
        AgentKind::Pedestrian,
        Vec2::new(44.0, 8.0),
        Vec2::new(1.3, 0.0),
        0.0,
        0..100,
    );
    scenario(
        "green_light_dynamic",
        log,
        b.build(),
        intersection_map(),
        light(&[(0, LightState::Green)]),
    )
}

/// Three-lane road: the ego accelerates from 6 to 14 m/s among traffic in
/// the neighbouring lanes.
pub fn multi_agent_straight() -> Scenario {
    let frames = 300;
    let log = drive(state(0.0, 0.0, 0.0, 6.0), frames, |t| VehicleControl {
        a: 8.0 * smooth_pulse(t, 1.0, 6.0),
        phi: 0.0,
    });
    let mut b = TrackBuilder::new(frames);
    for x in [-10.0, 20.0, 50.0] {
        b.linear(
            AgentKind::Vehicle,
            Vec2::new(x, 3.5),
            Vec2::new(12.0, 0.0),
            0.0,
            0..frames,
        );
    }
    for x in [5.0, 35.0, 70.0, 110.0] {
        b.linear(
            AgentKind::Vehicle,
            Vec2::new(x, -3.5),
            Vec2::new(9.0, 0.0),
            0.0,
            0..frames,
        );
    }
    b.linear(
        AgentKind::Vehicle,
        Vec2::new(30.0, 0.0),
        Vec2::new(16.0, 0.0),
        0.0,
        0..frames,
    );
    b.linear(
        AgentKind::Vehicle,
        Vec2::new(-20.0, 0.0),
        Vec2::new(10.0, 0.0),
        0.0,
        0..frames,
    );
    b.linear(
        AgentKind::Pedestrian,
        Vec2::new(10.0, -7.0),
        Vec2::new(1.4, 0.0),
        0.0,
        0..frames,
    );
    b.linear(
        AgentKind::Pedestrian,
        Vec2::new(80.0, 7.0),
        Vec2::new(-1.1, 0.0),
        std::f64::consts::PI,
        20..280,
    );
    scenario(
        "multi_agent_straight",
        log,
        b.build(),
        straight_map(&[-3.5, 0.0, 3.5]),
        Vec::new(),
    )
}

/// Red-to-green: the ego waits at the stop line and pulls away once the light
/// turns green at frame 50.
pub fn red_to_green_start() -> Scenario {
    let frames = 300;
    let log = drive(state(36.0, -1.75, 0.0, 0.0), frames, |t| VehicleControl {
        a: 8.0 * smooth_pulse(t, 5.5, 10.5),
        phi: 0.0,
    });
    let up = std::f64::consts::FRAC_PI_2;
    let pi = std::f64::consts::PI;
    let mut b = TrackBuilder::new(frames);
    b.linear(
        AgentKind::Vehicle,
        Vec2::new(48.25, -10.0),
        Vec2::new(0.0, 8.0),
        up,
        0..frames,
    );
    b.linear(
        AgentKind::Vehicle,
        Vec2::new(48.25, -30.0),
        Vec2::new(0.0, 8.0),
        up,
        0..frames,
    );
    b.parked(Vec2::new(48.25, -12.0), up);
    b.parked(Vec2::new(30.0, -1.75), 0.0);
    // oncoming car waits, then leaves westbound from frame 60
    let mut oncoming: Vec<Option<AgentPose>> = Vec::with_capacity(frames);
    for f in 0..frames {
        let t = f as f64 * FRAME_DT;
        let x = if t < 6.0 { 59.0 } else { 59.0 - 6.0 * (t - 6.0) };
        oncoming.push(Some(AgentPose {
            px: x,
            py: 1.75,
            heading: pi,
        }));
    }
    let mut agents = b.build();
    agents.push(AgentTrack {
        id: agents.len() as u32 + 1,
        kind: AgentKind::Vehicle,
        extent: VEHICLE_EXTENT,
        poses: oncoming,
    });
    scenario(
        "red_to_green_start",
        log,
        agents,
        intersection_map(),
        light(&[(0, LightState::Red), (50, LightState::Green)]),
    )
}

/// The four prediction archetypes: red-light stop, green-light dynamic
/// intersection, multi-agent straight road, red-to-green start.
pub fn archetype_scenes() -> Vec<Scenario> {
    vec![
        red_light_stop(),
        green_light_dynamic(),
        multi_agent_straight(),
        red_to_green_start(),
    ]
}

pub fn basic() -> Vec<Scenario> {
    vec![straight_road(), stalled_agent()]
}

pub fn all() -> Vec<Scenario> {
    let mut out = basic();
    out.extend(archetype_scenes());
    out
}

/// Fixture sets by name: `basic`, `paper-scenes`, `all`.
pub fn by_set(name: &str) -> Result<Vec<Scenario>> {
    match name {
        "basic" => Ok(basic()),
        "paper-scenes" => Ok(archetype_scenes()),
        "all" => Ok(all()),
        other => Err(Error::invalid(format!("unknown fixture set `{other}`"))),
    }
}

/// Scenarios whose logged ego never overlaps an agent.
pub fn collision_free() -> Vec<Scenario> {
    all().into_iter().filter(|s| s.id != "stalled_agent").collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_overlaps(s: &Scenario) -> Vec<usize> {
        let p = VehicleParams::default();
        (0..s.len())
            .filter(|&f| {
                let ego = p.footprint(&s.ego_log[f]);
                s.agent_boxes(f).iter().any(|b| b.intersects(&ego))
            })
            .collect()
    }

    #[test]
    fn fixtures_validate() {
        for s in all() {
            s.validate().unwrap();
            assert!(s.len() >= 120, "{}", s.id);
        }
        assert_eq!(straight_road().len(), 300);
        assert_eq!(archetype_scenes().len(), 4);
    }

    #[test]
    fn collision_free_logs_have_no_overlap() {
        for s in collision_free() {
            assert!(
                log_overlaps(&s).is_empty(),
                "{} overlaps at {:?}",
                s.id,
                log_overlaps(&s)
            );
        }
    }

    #[test]
    fn stalled_agent_overlap_frame() {
        let overlaps = log_overlaps(&stalled_agent());
        assert_eq!(overlaps.first(), Some(&STALLED_AGENT_OVERLAP_FRAME));
    }

    #[test]
    fn smooth_profiles_reach_targets() {
        let stop = red_light_stop();
        let last = stop.ego_log.last().unwrap();
        assert!(last.v < 1e-9);
        assert!((last.px - 36.0).abs() < 1e-6, "stopped at {}", last.px);
        let go = red_to_green_start();
        assert_eq!(go.ego_log[50].v, 0.0);
        assert!((go.ego_log[120].v - 8.0).abs() < 1e-9);
        let turn = green_light_dynamic();
        let end = turn.ego_log.last().unwrap();
        assert!(
            (end.theta + std::f64::consts::FRAC_PI_2).abs() < 0.05,
            "heading {}",
            end.theta
        );
        assert_eq!(by_set("paper-scenes").unwrap().len(), 4);
        assert!(by_set("nope").is_err());
    }

    #[test]
    fn light_schedule() {
        let s = red_to_green_start();
        assert_eq!(s.traffic_lights[0].state_at(49), Some(LightState::Red));
        assert_eq!(s.traffic_lights[0].state_at(50), Some(LightState::Green));
    }
}
