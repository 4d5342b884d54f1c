//! Relative Adoption Metric: top-10 reference curves per size bucket and
//! model scores against them.

use std::collections::HashMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{ModelId, Registry, SizeBucket};
use crate::series::{milestone_value, DownloadSeries, SeriesError, MILESTONE_DAYS};
use crate::stats::Quartiles;

/// Number of models in a reference set.
pub const REFERENCE_SIZE: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum RamError {
    #[error("bucket {bucket}: only {found} models with data, need {REFERENCE_SIZE}")]
    InsufficientReference { bucket: SizeBucket, found: usize },
    #[error("reference median must be positive, got {0}")]
    NonPositiveMedian(f64),
    #[error("no reference curve for bucket {0}")]
    Unavailable(SizeBucket),
    #[error("model or group {0} not in registry")]
    UnknownModel(String),
    #[error("{model} is in bucket {model_bucket}, reference curve is for {curve_bucket}")]
    BucketMismatch { model: String, model_bucket: SizeBucket, curve_bucket: SizeBucket },
    #[error("reference curve format error: {0}")]
    Format(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// Reference statistics at one milestone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilestoneStats {
    pub t: u32,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Members contributing a value; below [`REFERENCE_SIZE`] means reduced support.
    pub support: usize,
}

impl MilestoneStats {
    pub fn reduced_support(&self) -> bool {
        self.support < REFERENCE_SIZE
    }
}

/// Median and type-7 quartiles over whatever member values are available.
pub fn reference_stats(values: &[f64], t: u32) -> Option<MilestoneStats> {
    let q = Quartiles::of(values)?;
    Some(MilestoneStats { t, median: q.median, q1: q.q1, q3: q.q3, support: values.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCurve {
    pub bucket: SizeBucket,
    pub reference_date: NaiveDate,
    pub milestones: Vec<MilestoneStats>,
    pub members: Vec<ModelId>,
}

impl ReferenceCurve {
    pub fn at(&self, t: u32) -> Option<&MilestoneStats> {
        self.milestones.iter().find(|m| m.t == t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reference curve serializes")
    }

    pub fn from_json(text: &str) -> Result<ReferenceCurve, RamError> {
        let curve: ReferenceCurve =
            serde_json::from_str(text).map_err(|e| RamError::Format(e.to_string()))?;
        for m in &curve.milestones {
            if !(m.q1 <= m.median && m.median <= m.q3) {
                return Err(RamError::Format(format!("t={}: quartiles out of order", m.t)));
            }
            if !MILESTONE_DAYS.iter().any(|&d| u32::from(d) == m.t) {
                return Err(RamError::Format(format!("unknown milestone {}", m.t)));
            }
        }
        Ok(curve)
    }
}

/// The ten models in `bucket` with the most cumulative downloads as of
/// `reference_date`. Ties go to the lexicographically smaller id.
pub fn select_top10(
    bucket: SizeBucket,
    registry: &Registry,
    series: &HashMap<String, DownloadSeries>,
    reference_date: NaiveDate,
) -> Result<Vec<ModelId>, RamError> {
    let mut ranked: Vec<(f64, &ModelId)> = registry
        .records()
        .iter()
        .filter(|r| r.bucket() == bucket)
        .filter_map(|r| {
            let v = series.get(r.model_id.as_str())?.value_on_or_before(reference_date)?;
            Some((v, &r.model_id))
        })
        .collect();
    if ranked.len() < REFERENCE_SIZE {
        return Err(RamError::InsufficientReference { bucket, found: ranked.len() });
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(ranked.into_iter().take(REFERENCE_SIZE).map(|(_, id)| id.clone()).collect())
}

/// Builds the reference curve for `bucket` from data up to `reference_date`.
///
/// Members younger than a milestone stay in the set but contribute nothing
/// there; milestones nobody has reached are omitted.
pub fn build_reference_curve(
    bucket: SizeBucket,
    registry: &Registry,
    series: &HashMap<String, DownloadSeries>,
    reference_date: NaiveDate,
) -> Result<ReferenceCurve, RamError> {
    let members = select_top10(bucket, registry, series, reference_date)?;
    let mut milestones = Vec::new();
    for &t in &MILESTONE_DAYS {
        let t = u32::from(t);
        let mut values = Vec::with_capacity(members.len());
        for id in &members {
            let rec = registry.get(id.as_str()).expect("member comes from registry");
            let s = series[id.as_str()].truncated(reference_date);
            if let Some(v) = milestone_value(&s, rec.release_date, t)? {
                values.push(v);
            }
        }
        if let Some(stats) = reference_stats(&values, t) {
            if stats.reduced_support() {
                log::warn!("{bucket} t={t}: reduced support {}/{REFERENCE_SIZE}", stats.support);
            }
            milestones.push(stats);
        }
    }
    Ok(ReferenceCurve { bucket, reference_date, milestones, members })
}

/// `downloads / median`.
pub fn ram_score(downloads: f64, median: f64) -> Result<f64, RamError> {
    if !(median > 0.0) {
        return Err(RamError::NonPositiveMedian(median));
    }
    Ok(downloads / median)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RamScore {
    pub model: String,
    pub bucket: SizeBucket,
    pub t: u32,
    pub downloads: f64,
    pub score: f64,
    pub reference_date: NaiveDate,
    pub reduced_support: bool,
}

/// Scores given milestone values against a curve, stopping at the first
/// milestone without a value or without reference data.
pub fn score_values(
    model: &str,
    values: &[(u32, Option<f64>)],
    curve: &ReferenceCurve,
) -> Result<Vec<RamScore>, RamError> {
    let mut out = Vec::new();
    for &(t, v) in values {
        let (Some(downloads), Some(stats)) = (v, curve.at(t)) else { break };
        out.push(RamScore {
            model: model.to_string(),
            bucket: curve.bucket,
            t,
            downloads,
            score: ram_score(downloads, stats.median)?,
            reference_date: curve.reference_date,
            reduced_support: stats.reduced_support(),
        });
    }
    Ok(out)
}

/// RAM over every reached milestone for a model or variant group. Group
/// members are summed before milestones are read; the earliest member
/// release date anchors the group.
pub fn ram_trajectory(
    id: &str,
    registry: &Registry,
    series: &HashMap<String, DownloadSeries>,
    curve: &ReferenceCurve,
) -> Result<Vec<RamScore>, RamError> {
    let members = registry
        .group_members(id)
        .ok_or_else(|| RamError::UnknownModel(id.to_string()))?;
    let recs: Vec<_> = members.iter().filter_map(|m| registry.get(m.as_str())).collect();
    let first = recs.first().ok_or_else(|| RamError::UnknownModel(id.to_string()))?;
    let bucket = first.bucket();
    if bucket != curve.bucket {
        return Err(RamError::BucketMismatch {
            model: id.to_string(),
            model_bucket: bucket,
            curve_bucket: curve.bucket,
        });
    }
    let release = recs.iter().map(|r| r.release_date).min().expect("non-empty");
    let summed = DownloadSeries::sum(id, members.iter().filter_map(|m| series.get(m.as_str())))
        .truncated(curve.reference_date);
    let mut values = Vec::new();
    for &t in &MILESTONE_DAYS {
        values.push((u32::from(t), milestone_value(&summed, release, u32::from(t))?));
    }
    score_values(id, &values, curve)
}

/// CSV `model,bucket,t,downloads,score,reference_date`; scores to two
/// decimals, downloads as integers.
pub fn write_scores_csv<W: Write>(out: W, scores: &[RamScore]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "bucket", "t", "downloads", "score", "reference_date"])?;
    for s in scores {
        w.write_record([
            s.model.clone(),
            s.bucket.label().to_string(),
            s.t.to_string(),
            format!("{:.0}", s.downloads),
            format!("{:.2}", s.score),
            s.reference_date.to_string(),
        ])?;
    }
    w.flush()
}
