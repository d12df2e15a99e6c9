//! Decision-making seam: observations in, 40 ego-frame waypoints out.

pub mod external;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev::BevRaster;
use crate::flat_vehicle::VehicleState;
use crate::geometry::{world_to_local, Vec2};
use crate::scenario::Scenario;
use crate::{CONTEXT_LENGTH, DECISION_HORIZON, FRAME_DT};

pub use external::{
    ChannelTransport, ExternalConfig, ExternalPolicy, LineTransport, RasterTransfer, SubprocessTransport,
    PROTOCOL_VERSION,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("malformed decision: {0}")]
    MalformedDecision(String),
    #[error("remote error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("policy `{0}` needs the oracle scenario view")]
    MissingOracle(String),
    #[error("frame {frame} has no full decision horizon in a {len}-frame log")]
    Horizon { frame: usize, len: usize },
    #[error("invalid observation: {0}")]
    Observation(String),
    #[error("policy process: {0}")]
    Process(String),
    #[error("unknown policy `{0}`")]
    Unknown(String),
}

/// One past frame as seen by the policy.
#[derive(Debug, Clone)]
pub struct HistoryFrame {
    pub frame: usize,
    pub ego: VehicleState,
    /// Composed raster in this frame's ego view; absent when the running
    /// policy declared it does not need rasters.
    pub raster: Option<Arc<BevRaster>>,
}

#[derive(Debug, Clone)]
pub struct Observation {
    history: Vec<HistoryFrame>,
}

impl Observation {
    /// History ordered oldest to newest; the newest entry is the current frame.
    pub fn new(history: Vec<HistoryFrame>) -> Result<Self, PolicyError> {
        if history.is_empty() {
            return Err(PolicyError::Observation("empty history".into()));
        }
        if history.len() > CONTEXT_LENGTH {
            return Err(PolicyError::Observation(format!(
                "history of {} frames exceeds context length {CONTEXT_LENGTH}",
                history.len()
            )));
        }
        if history.windows(2).any(|w| w[0].frame >= w[1].frame) {
            return Err(PolicyError::Observation("history not ordered oldest to newest".into()));
        }
        Ok(Self { history })
    }

    pub fn single(frame: usize, ego: VehicleState) -> Self {
        Self {
            history: vec![HistoryFrame {
                frame,
                ego,
                raster: None,
            }],
        }
    }

    pub fn history(&self) -> &[HistoryFrame] {
        &self.history
    }

    pub fn current(&self) -> &HistoryFrame {
        self.history.last().expect("history is never empty")
    }

    pub fn ego(&self) -> &VehicleState {
        &self.current().ego
    }
}

/// Forty future positions in the ego frame at 0.1 s spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct Decision {
    waypoints: Vec<Vec2>,
}

impl Decision {
    pub fn new(waypoints: Vec<Vec2>) -> Result<Self, PolicyError> {
        if waypoints.len() != DECISION_HORIZON {
            return Err(PolicyError::MalformedDecision(format!(
                "expected {DECISION_HORIZON} waypoints, got {}",
                waypoints.len()
            )));
        }
        if let Some(k) = waypoints.iter().position(|w| !(w.x.is_finite() && w.y.is_finite())) {
            return Err(PolicyError::MalformedDecision(format!("waypoint {k} is not finite")));
        }
        Ok(Self { waypoints })
    }

    pub fn zeros() -> Self {
        Self {
            waypoints: vec![Vec2::zeros(); DECISION_HORIZON],
        }
    }

    pub fn waypoints(&self) -> &[Vec2] {
        &self.waypoints
    }

    pub fn last(&self) -> Vec2 {
        self.waypoints[DECISION_HORIZON - 1]
    }
}

impl TryFrom<Vec<Vec2>> for Decision {
    type Error = PolicyError;

    fn try_from(w: Vec<Vec2>) -> Result<Self, PolicyError> {
        Decision::new(w)
    }
}

impl From<Decision> for Vec<Vec2> {
    fn from(d: Decision) -> Self {
        d.waypoints
    }
}

/// Privileged access to the logged scenario, granted to oracle policies only.
#[derive(Debug, Clone, Copy)]
pub struct OracleView<'a> {
    pub scenario: &'a Scenario,
    pub frame: usize,
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    /// Whether observations must carry rendered rasters.
    fn needs_rasters(&self) -> bool {
        true
    }

    /// Whether the policy reads the logged scenario; only such policies are
    /// handed an [`OracleView`].
    fn uses_oracle(&self) -> bool {
        false
    }

    fn decide(&mut self, obs: &Observation, oracle: Option<OracleView<'_>>) -> Result<Decision, PolicyError>;
}

/// Logged future ego positions, expressed in the observed ego frame.
///
/// When the observed ego matches the log this is exactly the extraction
/// target; in closed loop it steers back onto the logged positions.
#[derive(Debug, Default, Clone)]
pub struct ReplayPolicy;

impl Policy for ReplayPolicy {
    fn name(&self) -> &str {
        "replay"
    }

    fn needs_rasters(&self) -> bool {
        false
    }

    fn uses_oracle(&self) -> bool {
        true
    }

    fn decide(&mut self, obs: &Observation, oracle: Option<OracleView<'_>>) -> Result<Decision, PolicyError> {
        let view = oracle.ok_or_else(|| PolicyError::MissingOracle(self.name().into()))?;
        let log = &view.scenario.ego_log;
        if view.frame + DECISION_HORIZON >= log.len() {
            return Err(PolicyError::Horizon {
                frame: view.frame,
                len: log.len(),
            });
        }
        let ego = obs.ego();
        let waypoints = log[view.frame + 1..=view.frame + DECISION_HORIZON]
            .iter()
            .map(|s| world_to_local(s.position(), ego.position(), ego.theta))
            .collect();
        Decision::new(waypoints)
    }
}

/// Straight ahead at the current speed.
#[derive(Debug, Default, Clone)]
pub struct ConstantVelocityPolicy;

pub fn constant_velocity_waypoints(v: f64) -> Vec<Vec2> {
    (1..=DECISION_HORIZON)
        .map(|k| Vec2::new(v * FRAME_DT * k as f64, 0.0))
        .collect()
}

impl Policy for ConstantVelocityPolicy {
    fn name(&self) -> &str {
        "cv"
    }

    fn needs_rasters(&self) -> bool {
        false
    }

    fn decide(&mut self, obs: &Observation, _oracle: Option<OracleView<'_>>) -> Result<Decision, PolicyError> {
        Decision::new(constant_velocity_waypoints(obs.ego().v))
    }
}

/// Adds seeded Gaussian noise to every waypoint of the wrapped policy.
pub struct NoisyPolicy {
    inner: Box<dyn Policy>,
    noise: Normal<f64>,
    rng: ChaCha8Rng,
    name: String,
}

impl NoisyPolicy {
    pub fn new(inner: Box<dyn Policy>, sigma: f64, seed: u64) -> Result<Self, PolicyError> {
        let noise =
            Normal::new(0.0, sigma).map_err(|e| PolicyError::Observation(format!("noise sigma {sigma}: {e}")))?;
        let name = format!("{}+noise", inner.name());
        Ok(Self {
            inner,
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
            name,
        })
    }
}

impl Policy for NoisyPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn needs_rasters(&self) -> bool {
        self.inner.needs_rasters()
    }

    fn uses_oracle(&self) -> bool {
        self.inner.uses_oracle()
    }

    fn decide(&mut self, obs: &Observation, oracle: Option<OracleView<'_>>) -> Result<Decision, PolicyError> {
        let d = self.inner.decide(obs, oracle)?;
        let waypoints = d
            .waypoints()
            .iter()
            .map(|w| w + Vec2::new(self.noise.sample(&mut self.rng), self.noise.sample(&mut self.rng)))
            .collect();
        Decision::new(waypoints)
    }
}

/// Everything a policy factory may need.
#[derive(Debug, Clone)]
pub struct PolicyOptions {
    /// Command line for external policies.
    pub cmd: Option<String>,
    pub external: ExternalConfig,
    /// Standard deviation of waypoint noise in meters; zero disables the wrapper.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self {
            cmd: None,
            external: ExternalConfig::default(),
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

pub type PolicyFactory = Box<dyn Fn(&PolicyOptions) -> Result<Box<dyn Policy>, PolicyError> + Send + Sync>;

/// Policies constructible by name.
pub struct PolicyRegistry {
    factories: BTreeMap<String, PolicyFactory>,
}

impl fmt::Debug for PolicyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `replay`, `cv` and `external`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("replay", |_| Ok(Box::new(ReplayPolicy)));
        r.register("cv", |_| Ok(Box::new(ConstantVelocityPolicy)));
        r.register("external", |opts| {
            let cmd = opts
                .cmd
                .as_deref()
                .ok_or_else(|| PolicyError::Process("external policy needs a command".into()))?;
            Ok(Box::new(ExternalPolicy::spawn(cmd, opts.external.clone())?))
        });
        r
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&PolicyOptions) -> Result<Box<dyn Policy>, PolicyError> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    /// Build a fresh policy, wrapped with noise when `opts.noise_sigma > 0`.
    pub fn create(&self, name: &str, opts: &PolicyOptions) -> Result<Box<dyn Policy>, PolicyError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| PolicyError::Unknown(name.to_string()))?;
        let policy = factory(opts)?;
        if opts.noise_sigma > 0.0 {
            Ok(Box::new(NoisyPolicy::new(policy, opts.noise_sigma, opts.seed)?))
        } else {
            Ok(policy)
        }
    }
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
