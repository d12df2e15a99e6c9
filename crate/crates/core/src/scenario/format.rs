//! JSON Lines scenario files.
//!
//! Line 1 is a header object:
//! `{"schema_version", "id", "dt", "map", "agents": [{"id", "kind", "extent"}], "traffic_lights"}`.
//! Every following line is one frame:
//! `{"frame", "ego": {"px", "py", "theta", "v"}, "agents": [{"id", "px", "py", "heading"}]}`.
//! Frames are numbered from 0 without gaps; agents missing from a frame are absent there.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{AgentKind, AgentPose, AgentTrack, Scenario, StaticMap, TrafficLight};
use crate::error::{Error, Result};
use crate::flat_vehicle::VehicleState;
use crate::FRAME_DT;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AgentHeader {
    id: u32,
    kind: AgentKind,
    extent: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AgentFramePose {
    id: u32,
    px: f64,
    py: f64,
    heading: f64,
}

struct LineCtx<'a> {
    file: &'a Path,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.to_path_buf(),
            line: self.line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn object(&self, text: &str) -> Result<Map<String, Value>> {
        match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(map)) => Ok(map),
            Ok(_) => Err(self.err("<line>", "expected a JSON object")),
            Err(e) => Err(self.err("<line>", e.to_string())),
        }
    }

    fn field<T: DeserializeOwned>(&self, obj: &Map<String, Value>, key: &str) -> Result<T> {
        let value = obj.get(key).ok_or_else(|| self.err(key, "missing field"))?;
        T::deserialize(value).map_err(|e| self.err(key, e.to_string()))
    }

    fn optional<T: DeserializeOwned + Default>(&self, obj: &Map<String, Value>, key: &str) -> Result<T> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(T::default()),
            Some(v) => T::deserialize(v).map_err(|e| self.err(key, e.to_string())),
        }
    }
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, first) = lines
        .next()
        .ok_or_else(|| LineCtx { file: path, line: 1 }.err("<header>", "empty file"))?;
    let first = first.map_err(|e| Error::io(path, e))?;
    let ctx = LineCtx { file: path, line: 1 };
    let header = ctx.object(&first)?;

    let version: u32 = ctx.field(&header, "schema_version")?;
    if version != SCHEMA_VERSION {
        return Err(ctx.err("schema_version", format!("unsupported version {version}")));
    }
    let id: String = ctx.field(&header, "id")?;
    let dt: f64 = ctx.field(&header, "dt")?;
    if (dt - FRAME_DT).abs() > 1e-12 {
        return Err(ctx.err("dt", format!("must be {FRAME_DT}, got {dt}")));
    }
    let map: StaticMap = ctx.optional(&header, "map")?;
    map.validate().map_err(|e| ctx.err("map", e.to_string()))?;
    let agent_headers: Vec<AgentHeader> = ctx.optional(&header, "agents")?;
    let traffic_lights: Vec<TrafficLight> = ctx.optional(&header, "traffic_lights")?;

    let mut index: HashMap<u32, usize> = HashMap::new();
    for (i, a) in agent_headers.iter().enumerate() {
        if index.insert(a.id, i).is_some() {
            return Err(ctx.err("agents", format!("duplicate agent id {}", a.id)));
        }
        if !a.extent.iter().all(|x| x.is_finite() && *x > 0.0) {
            return Err(ctx.err("agents", format!("agent {} has non-positive extent", a.id)));
        }
    }

    let mut ego_log = Vec::new();
    let mut poses: Vec<Vec<Option<AgentPose>>> = vec![Vec::new(); agent_headers.len()];
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = LineCtx {
            file: path,
            line: i + 1,
        };
        let obj = ctx.object(&line)?;
        let frame: usize = ctx.field(&obj, "frame")?;
        if frame != ego_log.len() {
            return Err(ctx.err("frame", format!("expected frame {}, got {frame}", ego_log.len())));
        }
        let ego: VehicleState = ctx.field(&obj, "ego")?;
        let ego = VehicleState::new(ego.px, ego.py, ego.theta, ego.v).map_err(|e| ctx.err("ego", e.to_string()))?;
        ego_log.push(ego);
        for track in poses.iter_mut() {
            track.push(None);
        }
        let frame_agents: Vec<AgentFramePose> = ctx.optional(&obj, "agents")?;
        for a in frame_agents {
            let slot = *index
                .get(&a.id)
                .ok_or_else(|| ctx.err("agents", format!("agent {} not declared in header", a.id)))?;
            if ![a.px, a.py, a.heading].iter().all(|x| x.is_finite()) {
                return Err(ctx.err("agents", format!("agent {} pose not finite", a.id)));
            }
            let cell = &mut poses[slot][frame];
            if cell.is_some() {
                return Err(ctx.err("agents", format!("agent {} listed twice", a.id)));
            }
            *cell = Some(AgentPose {
                px: a.px,
                py: a.py,
                heading: a.heading,
            });
        }
    }
    if ego_log.is_empty() {
        return Err(LineCtx { file: path, line: 2 }.err("frame", "scenario has no frames"));
    }

    let agents = agent_headers
        .into_iter()
        .zip(poses)
        .map(|(h, poses)| AgentTrack {
            id: h.id,
            kind: h.kind,
            extent: h.extent,
            poses,
        })
        .collect();
    Ok(Scenario {
        id,
        dt,
        ego_log,
        agents,
        map,
        traffic_lights,
    })
}

/// Every `*.jsonl` file in `dir`, in file-name order.
pub fn load_scenarios(dir: &Path) -> Result<Vec<Scenario>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    files.iter().map(|p| load_scenario_file(p)).collect()
}

pub fn save_scenario<W: Write>(scenario: &Scenario, mut out: W) -> Result<()> {
    let agents: Vec<AgentHeader> = scenario
        .agents
        .iter()
        .map(|a| AgentHeader {
            id: a.id,
            kind: a.kind,
            extent: a.extent,
        })
        .collect();
    let header = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "id": scenario.id,
        "dt": scenario.dt,
        "map": scenario.map,
        "agents": agents,
        "traffic_lights": scenario.traffic_lights,
    });
    let io = |e: std::io::Error| Error::io("<scenario writer>", e);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(io)?;
    for (f, ego) in scenario.ego_log.iter().enumerate() {
        let poses: Vec<AgentFramePose> = scenario
            .agents
            .iter()
            .filter_map(|a| {
                a.poses[f].map(|p| AgentFramePose {
                    id: a.id,
                    px: p.px,
                    py: p.py,
                    heading: p.heading,
                })
            })
            .collect();
        let line = serde_json::json!({ "frame": f, "ego": ego, "agents": poses });
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_scenario_file(scenario: &Scenario, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    save_scenario(scenario, BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::fixtures;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_scenarios(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn round_trip_is_field_identical() {
        let dir = tempfile::tempdir().unwrap();
        for s in fixtures::all() {
            let p = dir.path().join(format!("{}.jsonl", s.id));
            write_scenario_file(&s, &p).unwrap();
            let back = load_scenario_file(&p).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn wrong_dt_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.jsonl",
            "{\"schema_version\":1,\"id\":\"x\",\"dt\":0.2}\n{\"frame\":0,\"ego\":{\"px\":0,\"py\":0,\"theta\":0,\"v\":1}}\n",
        );
        match load_scenario_file(&p) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(field, "dt");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_frame_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.jsonl",
            concat!(
                "{\"schema_version\":1,\"id\":\"x\",\"dt\":0.1}\n",
                "{\"frame\":0,\"ego\":{\"px\":0,\"py\":0,\"theta\":0,\"v\":1}}\n",
                "{\"frame\":1,\"ego\":{\"px\":0,\"py\":0,\"theta\":0}}\n",
            ),
        );
        match load_scenario_file(&p) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "ego");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let p = write(
            dir.path(),
            "b.jsonl",
            concat!(
                "{\"schema_version\":1,\"id\":\"x\",\"dt\":0.1}\n",
                "{\"frame\":0,\"ego\":{\"px\":0,\"py\":0,\"theta\":0,\"v\":1},\"agents\":[{\"id\":9,\"px\":0,\"py\":0,\"heading\":0}]}\n",
            ),
        );
        assert!(matches!(load_scenario_file(&p), Err(Error::Parse { line: 2, .. })));
        let p = write(
            dir.path(),
            "c.jsonl",
            "{\"schema_version\":1,\"id\":\"x\",\"dt\":0.1}\n{not json\n",
        );
        assert!(matches!(load_scenario_file(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn agent_gaps_survive() {
        let s = fixtures::straight_road();
        let ped = s.agents.iter().find(|a| a.kind == AgentKind::Pedestrian).unwrap();
        assert!(ped.poses[0].is_none());
        assert!(ped.poses.iter().any(|p| p.is_some()));
        let mut buf = Vec::new();
        save_scenario(&s, &mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        std::fs::write(&p, buf).unwrap();
        assert_eq!(load_scenario_file(&p).unwrap().agents, s.agents);
    }
}
