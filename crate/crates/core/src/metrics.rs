//! Open-loop (ADE, FDE, FDR, ADR) and closed-loop (L2, CR, OR) metrics and the
//! per-horizon report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::FRAME_DT;

/// Report horizons in seconds.
pub const HORIZONS_S: [f64; 5] = [0.5, 1.0, 2.0, 3.0, 4.0];

/// Row order of the report.
pub const METRIC_NAMES: [&str; 7] = ["ADE", "FDE", "FDR", "ADR", "L2", "CR", "OR"];

/// Averaged displacements are Euclidean by default; `Squared` averages
/// squared distances instead. Final displacements stay Euclidean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Displacement {
    #[default]
    Euclidean,
    Squared,
}

impl Displacement {
    fn apply(self, d: f64) -> f64 {
        match self {
            Displacement::Euclidean => d,
            Displacement::Squared => d * d,
        }
    }
}

/// Frame index for a horizon in seconds; must be a whole number of frames.
pub fn horizon_frames(seconds: f64) -> Result<usize> {
    let f = seconds / FRAME_DT;
    let r = f.round();
    if !(seconds > 0.0) || (f - r).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "horizon {seconds} s is not a positive multiple of {FRAME_DT} s"
        )));
    }
    Ok(r as usize)
}

fn check_horizon(len: usize, h: usize) -> Result<()> {
    if h == 0 || h > len {
        return Err(Error::Domain(format!("horizon of {h} frames on a sequence of {len}")));
    }
    Ok(())
}

/// Row `k` of `pred` and `reference` is the position at frame `k + 1`.
pub fn ade_fde(pred: &[Vec2], reference: &[Vec2], h: usize, kind: Displacement) -> Result<(f64, f64)> {
    check_horizon(pred.len().min(reference.len()), h)?;
    let d: Vec<f64> = pred[..h]
        .iter()
        .zip(&reference[..h])
        .map(|(p, r)| (p - r).norm())
        .collect();
    let ade = d.iter().map(|x| kind.apply(*x)).sum::<f64>() / h as f64;
    Ok((ade, d[h - 1]))
}

fn nearest(p: &Vec2, reference: &[Vec2]) -> f64 {
    reference.iter().map(|r| (p - r).norm()).fold(f64::INFINITY, f64::min)
}

/// Distances to the closest reference waypoint, regardless of its index.
pub fn fdr_adr(pred: &[Vec2], reference: &[Vec2], h: usize, kind: Displacement) -> Result<(f64, f64)> {
    if reference.is_empty() {
        return Err(Error::Domain("empty reference".into()));
    }
    check_horizon(pred.len(), h)?;
    let d: Vec<f64> = pred[..h].iter().map(|p| nearest(p, reference)).collect();
    let adr = d.iter().map(|x| kind.apply(*x)).sum::<f64>() / h as f64;
    Ok((d[h - 1], adr))
}

/// Per-frame record of one closed-loop scene. Index 0 is the start frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub executed: Vec<Vec2>,
    pub reference: Vec<Vec2>,
    pub collision: Vec<bool>,
    pub offroad: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoop {
    pub l2: f64,
    pub cr: f64,
    pub or: f64,
}

pub fn closed_loop_metrics(scenes: &[SceneOutcome], h: usize, kind: Displacement) -> Result<ClosedLoop> {
    if scenes.is_empty() {
        return Err(Error::Domain("no scenes".into()));
    }
    let (mut l2, mut collided, mut offroad) = (0.0, 0usize, 0usize);
    for s in scenes {
        let n = s
            .executed
            .len()
            .min(s.reference.len())
            .min(s.collision.len())
            .min(s.offroad.len());
        if h >= n {
            return Err(Error::Domain(format!("horizon of {h} frames on a {n}-frame trace")));
        }
        l2 += (1..=h)
            .map(|k| kind.apply((s.executed[k] - s.reference[k]).norm()))
            .sum::<f64>()
            / h as f64;
        collided += s.collision[..=h].iter().any(|c| *c) as usize;
        offroad += s.offroad[..=h].iter().any(|c| *c) as usize;
    }
    let n = scenes.len() as f64;
    Ok(ClosedLoop {
        l2: l2 / n,
        cr: collided as f64 / n,
        or: offroad as f64 / n,
    })
}

/// One open-loop decision with its same-index reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopCase {
    pub pred: Vec<Vec2>,
    pub reference: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    /// Aligned with [`MetricReport::horizons_s`]; `None` when not measured.
    pub values: Vec<Option<f64>>,
    pub avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scene_count: usize,
    pub decision_count: usize,
    pub displacement: Displacement,
    pub horizons_s: Vec<f64>,
    pub rows: Vec<MetricRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

impl MetricReport {
    pub fn build(
        open: &[OpenLoopCase],
        closed: &[SceneOutcome],
        horizons_s: &[f64],
        kind: Displacement,
    ) -> Result<Self> {
        let mut cols: Vec<[Option<f64>; 7]> = Vec::with_capacity(horizons_s.len());
        for &hs in horizons_s {
            let h = horizon_frames(hs)?;
            let mut col = [None; 7];
            if !open.is_empty() {
                let mut acc = [0.0; 4];
                for c in open {
                    let (ade, fde) = ade_fde(&c.pred, &c.reference, h, kind)?;
                    let (fdr, adr) = fdr_adr(&c.pred, &c.reference, h, kind)?;
                    for (a, v) in acc.iter_mut().zip([ade, fde, fdr, adr]) {
                        *a += v;
                    }
                }
                for (slot, a) in col.iter_mut().zip(acc) {
                    *slot = Some(a / open.len() as f64);
                }
            }
            if !closed.is_empty() {
                let cl = closed_loop_metrics(closed, h, kind)?;
                col[4] = Some(cl.l2);
                col[5] = Some(cl.cr);
                col[6] = Some(cl.or);
            }
            cols.push(col);
        }
        let rows = METRIC_NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let values: Vec<Option<f64>> = cols.iter().map(|c| c[i]).collect();
                let avg = if values.iter().all(Option::is_some) {
                    mean(values.iter().flatten().copied())
                } else {
                    None
                };
                MetricRow {
                    metric: name.to_string(),
                    values,
                    avg,
                }
            })
            .collect();
        Ok(Self {
            scene_count: closed.len(),
            decision_count: open.len(),
            displacement: kind,
            horizons_s: horizons_s.to_vec(),
            rows,
        })
    }

    pub fn get(&self, metric: &str, horizon_s: f64) -> Option<f64> {
        let col = self.horizons_s.iter().position(|h| *h == horizon_s)?;
        self.rows.iter().find(|r| r.metric == metric)?.values[col]
    }

    /// One row per metric, one column per horizon plus `avg`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for h in &self.horizons_s {
            let _ = write!(out, ",{h}s");
        }
        out.push_str(",avg\n");
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&r.metric);
            for v in &r.values {
                let _ = write!(out, ",{}", cell(*v));
            }
            let _ = writeln!(out, ",{}", cell(r.avg));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
