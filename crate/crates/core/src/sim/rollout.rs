//! Auto-regressive BEV prediction rollouts.
//!
//! The view is fixed at the ego pose of the start frame. The rollout is seeded
//! with the ground-truth raster of that frame; each prediction is appended to
//! the history the predictor sees next.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::bev::{rasterize_static, BevRaster, RasterSpec, WorldToRaster, CH_DYNAMIC};
use crate::error::{Error, Result};
use crate::flat_vehicle::{VehicleParams, VehicleState};
use crate::geometry::Vec2;
use crate::losses::prediction_loss;
use crate::policy::{Decision, Observation, OracleView, Policy, ReplayPolicy};
use crate::scenario::{RasterLayer, RasterRef, Scenario};
use crate::{CONTEXT_LENGTH, FRAME_DT};

pub const ROLLOUT_STEPS: usize = 60;

pub struct PredictionContext<'a> {
    /// Step being predicted, 1-based.
    pub step: usize,
    /// Seed and earlier predictions, oldest first, at most the context length.
    pub history: &'a [Arc<BevRaster>],
    /// Logged decision at the previous frame, when the log still has a full horizon.
    pub decision: Option<&'a Decision>,
    /// Pose every raster of this rollout is drawn from.
    pub view: &'a VehicleState,
    pub start_frame: usize,
    pub spec: &'a RasterSpec,
    pub params: &'a VehicleParams,
    /// Present only for predictors that declare `uses_oracle`.
    pub oracle: Option<&'a Scenario>,
}

pub trait Predictor: Send {
    fn name(&self) -> &str;

    fn uses_oracle(&self) -> bool {
        false
    }

    /// Composed raster for `ctx.step`.
    fn predict(&mut self, ctx: &PredictionContext<'_>) -> Result<BevRaster>;
}

/// Repeats the most recent raster.
#[derive(Debug, Default, Clone)]
pub struct IdentityPredictor;

impl Predictor for IdentityPredictor {
    fn name(&self) -> &str {
        "identity"
    }

    fn predict(&mut self, ctx: &PredictionContext<'_>) -> Result<BevRaster> {
        let last = ctx
            .history
            .last()
            .ok_or_else(|| Error::Domain("empty rollout history".into()))?;
        Ok(BevRaster::clone(last))
    }
}

/// Renders the logged scene; scores zero by construction.
#[derive(Debug, Default, Clone)]
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn uses_oracle(&self) -> bool {
        true
    }

    fn predict(&mut self, ctx: &PredictionContext<'_>) -> Result<BevRaster> {
        let scenario = ctx
            .oracle
            .ok_or_else(|| Error::invalid("oracle predictor without scenario"))?;
        ground_truth_ref(scenario, ctx.start_frame, ctx.step).render(scenario, ctx.params, ctx.spec)
    }
}

/// Translates the seed's dynamic channel at a constant world velocity,
/// sampling bilinearly. Environment and ego channels stay as seeded.
#[derive(Debug, Clone)]
pub struct CvShiftPredictor {
    velocity: Vec2,
}

impl CvShiftPredictor {
    pub fn new(velocity: Vec2) -> Self {
        Self { velocity }
    }
}

fn shift_channel(src: &BevRaster, c: usize, shift: Vec2) -> BevRaster {
    let mut out = src.clone();
    let (w, h) = (src.spec().width as isize, src.spec().height as isize);
    let sample = |row: isize, col: isize| -> f64 {
        if row < 0 || col < 0 || row >= h || col >= w {
            0.0
        } else {
            src.get(c, row as usize, col as usize) as f64
        }
    };
    for row in 0..h {
        for col in 0..w {
            let x = col as f64 - shift.x;
            let y = row as f64 - shift.y;
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let (c0, r0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * sample(r0, c0) + fx * sample(r0, c0 + 1))
                + fy * ((1.0 - fx) * sample(r0 + 1, c0) + fx * sample(r0 + 1, c0 + 1));
            out.set(c, row as usize, col as usize, v as f32);
        }
    }
    out
}

impl Predictor for CvShiftPredictor {
    fn name(&self) -> &str {
        "cv-shift"
    }

    fn predict(&mut self, ctx: &PredictionContext<'_>) -> Result<BevRaster> {
        let seed = ctx
            .history
            .first()
            .ok_or_else(|| Error::Domain("empty rollout history".into()))?;
        let tf = WorldToRaster::new(ctx.view, ctx.spec);
        let d = self.velocity * (ctx.step as f64 * FRAME_DT);
        let shift = tf.to_raster(ctx.view.position() + d) - tf.to_raster(ctx.view.position());
        Ok(shift_channel(seed, CH_DYNAMIC, shift))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOptions {
    /// World velocity used by `cv-shift`, m/s.
    pub shift_velocity: Vec2,
}

impl Default for PredictorOptions {
    fn default() -> Self {
        Self {
            shift_velocity: Vec2::zeros(),
        }
    }
}

pub type PredictorFactory = Box<dyn Fn(&PredictorOptions) -> Box<dyn Predictor> + Send + Sync>;

pub struct PredictorRegistry {
    factories: BTreeMap<String, PredictorFactory>,
}

impl fmt::Debug for PredictorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl PredictorRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `identity`, `oracle` and `cv-shift`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("identity", |_| Box::new(IdentityPredictor));
        r.register("oracle", |_| Box::new(OraclePredictor));
        r.register("cv-shift", |o| Box::new(CvShiftPredictor::new(o.shift_velocity)));
        r
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&PredictorOptions) -> Box<dyn Predictor> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, opts: &PredictorOptions) -> Result<Box<dyn Predictor>> {
        self.factories
            .get(name)
            .map(|f| f(opts))
            .ok_or_else(|| Error::invalid(format!("unknown predictor `{name}`")))
    }
}

impl Default for PredictorRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    pub start_frame: usize,
    pub steps: usize,
    pub spec: RasterSpec,
    pub params: VehicleParams,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            start_frame: 0,
            steps: ROLLOUT_STEPS,
            spec: RasterSpec::default(),
            params: VehicleParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub scenario_id: String,
    pub predictor: String,
    pub start_frame: usize,
    /// Static environment in the rollout view; identical for every step.
    pub env: Arc<BevRaster>,
    /// Index 0 is the seed; index k the ground truth of step k.
    pub ground_truth: Vec<Arc<BevRaster>>,
    /// Index k-1 is the prediction for step k.
    pub predicted: Vec<Arc<BevRaster>>,
    /// Set when the predictor failed; earlier predictions are kept.
    pub error: Option<String>,
}

impl Rollout {
    /// Prediction loss of every completed step, from the dynamic part of the prediction.
    pub fn losses(&self) -> Result<Vec<f64>> {
        self.predicted
            .iter()
            .zip(&self.ground_truth[1..])
            .map(|(p, g)| prediction_loss(&self.env, &p.dynamic_part(), g))
            .collect()
    }
}

fn ground_truth_ref(scenario: &Scenario, start: usize, step: usize) -> RasterRef {
    RasterRef {
        scenario_id: scenario.id.clone(),
        frame: start + step,
        view_frame: start,
        layer: RasterLayer::Composed,
    }
}

pub fn run_prediction_rollout(
    scenario: &Scenario,
    predictor: &mut dyn Predictor,
    config: &RolloutConfig,
) -> Result<Rollout> {
    scenario.validate()?;
    config.spec.validate()?;
    let start = config.start_frame;
    if config.steps == 0 || start + config.steps >= scenario.len() {
        return Err(Error::Horizon {
            frame: start,
            needed: config.steps,
            len: scenario.len(),
        });
    }
    let view = scenario.ego_log[start];
    let ground_truth = (0..=config.steps)
        .map(|k| {
            ground_truth_ref(scenario, start, k)
                .render(scenario, &config.params, &config.spec)
                .map(Arc::new)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rollout = Rollout {
        scenario_id: scenario.id.clone(),
        predictor: predictor.name().to_string(),
        start_frame: start,
        env: Arc::new(rasterize_static(&scenario.map, &view, &config.spec)?),
        ground_truth,
        predicted: Vec::with_capacity(config.steps),
        error: None,
    };
    let mut history: Vec<Arc<BevRaster>> = vec![rollout.ground_truth[0].clone()];
    let oracle = predictor.uses_oracle().then_some(scenario);
    for step in 1..=config.steps {
        let frame = start + step - 1;
        let decision = ReplayPolicy
            .decide(
                &Observation::single(frame, scenario.ego_log[frame]),
                Some(OracleView { scenario, frame }),
            )
            .ok();
        let ctx = PredictionContext {
            step,
            history: &history,
            decision: decision.as_ref(),
            view: &view,
            start_frame: start,
            spec: &config.spec,
            params: &config.params,
            oracle,
        };
        match predictor.predict(&ctx) {
            Ok(p) => {
                let p = Arc::new(p);
                rollout.predicted.push(p.clone());
                if history.len() == CONTEXT_LENGTH {
                    history.remove(0);
                }
                history.push(p);
            }
            Err(e) => {
                rollout.error = Some(format!("step {step}: {e}"));
                break;
            }
        }
    }
    Ok(rollout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::fixtures;

    #[test]
    fn identity_repeats_seed() {
        let s = fixtures::straight_road();
        let r = run_prediction_rollout(&s, &mut IdentityPredictor, &RolloutConfig::default()).unwrap();
        assert_eq!(r.predicted.len(), 60);
        assert!(r.predicted.iter().all(|p| **p == *r.ground_truth[0]));
    }

    #[test]
    fn oracle_scores_zero() {
        let s = fixtures::green_light_dynamic();
        let config = RolloutConfig {
            start_frame: 80,
            ..RolloutConfig::default()
        };
        let r = run_prediction_rollout(&s, &mut OraclePredictor, &config).unwrap();
        let losses = r.losses().unwrap();
        assert_eq!(losses.len(), 60);
        assert!(losses.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn shifter_moves_lead_car_centroid() {
        let s = fixtures::straight_road();
        let mut p = CvShiftPredictor::new(Vec2::new(8.0, 0.0));
        let r = run_prediction_rollout(&s, &mut p, &RolloutConfig::default()).unwrap();
        let seed = r.ground_truth[0].centroid(CH_DYNAMIC).unwrap();
        for (i, pred) in r.predicted.iter().enumerate() {
            let k = (i + 1) as f64;
            let c = pred.centroid(CH_DYNAMIC).unwrap();
            let expected_rows = 8.0 * 0.1 * k / 0.5;
            assert!((seed[1] - c[1] - expected_rows).abs() < 1.0, "step {k}");
            assert!((seed[0] - c[0]).abs() < 1.0);
        }
    }

    struct FailsAt(usize);

    impl Predictor for FailsAt {
        fn name(&self) -> &str {
            "fails"
        }

        fn predict(&mut self, ctx: &PredictionContext<'_>) -> Result<BevRaster> {
            if ctx.step == self.0 {
                Err(Error::Domain("boom".into()))
            } else {
                Ok(BevRaster::clone(&ctx.history[0]))
            }
        }
    }

    #[test]
    fn failure_keeps_partial_results() {
        let s = fixtures::straight_road();
        let r = run_prediction_rollout(&s, &mut FailsAt(7), &RolloutConfig::default()).unwrap();
        assert_eq!(r.predicted.len(), 6);
        assert!(r.error.unwrap().contains("step 7"));
    }

    #[test]
    fn horizon_checked() {
        let s = fixtures::constant_velocity(60, 3.0);
        assert!(run_prediction_rollout(&s, &mut IdentityPredictor, &RolloutConfig::default()).is_err());
        let reg = PredictorRegistry::with_builtins();
        assert_eq!(reg.names(), vec!["cv-shift", "identity", "oracle"]);
        assert!(reg.create("nope", &PredictorOptions::default()).is_err());
    }
}
