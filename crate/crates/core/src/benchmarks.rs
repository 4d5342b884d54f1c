//! Arena Elo frontiers, Intelligence Index trend fits and inference token
//! shares.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use thiserror::Error;

use crate::derivatives::{GroupBy, Share};
use crate::registry::{ModelId, Region, Registry};
use crate::series::first_of_month;

/// Arena rating recalibration date; earlier ratings are shifted up.
pub const ELO_CUTOVER: NaiveDate = match NaiveDate::from_ymd_opt(2025, 5, 19) {
    Some(d) => d,
    None => panic!(),
};
pub const ELO_SHIFT: f64 = 59.2;
/// Index fits use only observations on or after this date.
pub const INDEX_SCOPE_START: NaiveDate = match NaiveDate::from_ymd_opt(2024, 4, 1) {
    Some(d) => d,
    None => panic!(),
};
/// The token provider publishes only its monthly top 10.
pub const TOKEN_REPORT_LIMIT: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate fit: all observations share one date")]
    Degenerate,
    #[error("{model} at {date} is already adjusted")]
    AlreadyAdjusted { model: String, date: NaiveDate },
    #[error("{count} token records in {month}, at most {TOKEN_REPORT_LIMIT} allowed")]
    TooManyRecords { month: NaiveDate, count: usize },
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("benchmark file format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EloObservation {
    pub model_id: ModelId,
    pub region: Region,
    pub observed_at: NaiveDate,
    pub elo: f64,
    /// Set once the recalibration shift has been applied.
    pub adjusted: bool,
}

/// Applies the recalibration shift with the default cutover and size.
pub fn adjust_elo(obs: &EloObservation) -> Result<EloObservation, BenchError> {
    adjust_elo_with(obs, ELO_CUTOVER, ELO_SHIFT)
}

/// Adds `shift` iff `observed_at < cutover`. Marks the result adjusted
/// either way; adjusting twice is an error.
pub fn adjust_elo_with(
    obs: &EloObservation,
    cutover: NaiveDate,
    shift: f64,
) -> Result<EloObservation, BenchError> {
    if obs.adjusted {
        return Err(BenchError::AlreadyAdjusted {
            model: obs.model_id.to_string(),
            date: obs.observed_at,
        });
    }
    let mut out = obs.clone();
    if obs.observed_at < cutover {
        out.elo += shift;
    }
    out.adjusted = true;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub date: NaiveDate,
    pub elo: f64,
    /// Model holding the frontier; carried from an earlier date when the
    /// current best falls short.
    pub leader: ModelId,
}

/// Running maximum of the region's best rating over the union of its
/// observation dates.
pub fn elo_frontier(observations: &[EloObservation], region: Region) -> Vec<FrontierPoint> {
    let mut best: BTreeMap<NaiveDate, (f64, &ModelId)> = BTreeMap::new();
    for o in observations.iter().filter(|o| o.region == region && o.elo.is_finite()) {
        best.entry(o.observed_at)
            .and_modify(|cur| {
                if o.elo > cur.0 || (o.elo == cur.0 && &o.model_id < cur.1) {
                    *cur = (o.elo, &o.model_id);
                }
            })
            .or_insert((o.elo, &o.model_id));
    }
    let mut out: Vec<FrontierPoint> = Vec::with_capacity(best.len());
    for (date, (elo, model)) in best {
        match out.last() {
            Some(prev) if prev.elo >= elo => out.push(FrontierPoint { date, ..prev.clone() }),
            _ => out.push(FrontierPoint { date, elo, leader: model.clone() }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexObservation {
    pub model_id: ModelId,
    pub region: Region,
    pub observed_at: NaiveDate,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    /// Points per day.
    pub slope: f64,
    /// Fitted value at `epoch`.
    pub intercept: f64,
    pub residual_rms: f64,
    /// Day zero of the regression: the first observation date.
    pub epoch: NaiveDate,
    pub n: usize,
}

impl LinearFit {
    pub fn predict(&self, date: NaiveDate) -> f64 {
        self.intercept + self.slope * (date - self.epoch).num_days() as f64
    }
}

/// Least squares `y = intercept + slope * x` via centered sums. Returns
/// `(slope, intercept, residual_rms)`.
pub fn ols(points: &[(f64, f64)]) -> Result<(f64, f64, f64), BenchError> {
    let n = points.len();
    if n < 2 {
        return Err(BenchError::InsufficientData { needed: 2, got: n });
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(BenchError::Degenerate);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points.iter().map(|&(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok((slope, intercept, (sse / nf).sqrt()))
}

/// Trend of the region's best index score per date, from
/// [`INDEX_SCOPE_START`] on.
pub fn fit_linear_trend(
    observations: &[IndexObservation],
    region: Region,
) -> Result<LinearFit, BenchError> {
    let in_scope: Vec<&IndexObservation> = observations
        .iter()
        .filter(|o| o.region == region && o.observed_at >= INDEX_SCOPE_START && o.score.is_finite())
        .collect();
    if in_scope.len() < 2 {
        return Err(BenchError::InsufficientData { needed: 2, got: in_scope.len() });
    }
    let mut top: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    for o in in_scope {
        let e = top.entry(o.observed_at).or_insert(f64::NEG_INFINITY);
        *e = e.max(o.score);
    }
    if top.len() < 2 {
        return Err(BenchError::Degenerate);
    }
    let epoch = *top.keys().next().expect("non-empty");
    let points: Vec<(f64, f64)> =
        top.iter().map(|(&d, &s)| ((d - epoch).num_days() as f64, s)).collect();
    let (slope, intercept, residual_rms) = ols(&points)?;
    Ok(LinearFit { slope, intercept, residual_rms, epoch, n: points.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenShareRecord {
    /// First-of-month label.
    pub month: NaiveDate,
    pub model_id: ModelId,
    pub organization: String,
    pub region: Region,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenShares {
    pub shares: BTreeMap<String, Share>,
    /// Always set: only the provider's top models are reported, so every
    /// group may be undercounted.
    pub truncated: bool,
}

/// Token share per group in `month`. Zero total tokens gives an empty map.
pub fn token_share(
    records: &[TokenShareRecord],
    group_by: GroupBy,
    month: NaiveDate,
) -> Result<TokenShares, BenchError> {
    let month = first_of_month(month);
    let in_month: Vec<&TokenShareRecord> =
        records.iter().filter(|r| first_of_month(r.month) == month).collect();
    if in_month.len() > TOKEN_REPORT_LIMIT {
        return Err(BenchError::TooManyRecords { month, count: in_month.len() });
    }
    let mut tokens: BTreeMap<String, u64> = BTreeMap::new();
    for r in in_month {
        let key = match group_by {
            GroupBy::Organization => r.organization.clone(),
            GroupBy::Region => r.region.to_string(),
        };
        *tokens.entry(key).or_default() += r.tokens;
    }
    let total: u64 = tokens.values().sum();
    let shares = if total == 0 {
        BTreeMap::new()
    } else {
        tokens
            .into_iter()
            .map(|(k, n)| (k, Share { share: n as f64 / total as f64, count: n }))
            .collect()
    };
    Ok(TokenShares { shares, truncated: true })
}

fn read_rows(text: &str, cols: [&str; 3]) -> Result<Vec<(usize, [String; 3])>, BenchError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| BenchError::Format(e.to_string()))?.clone();
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(c))
                .ok_or_else(|| BenchError::Format(format!("expected header {}", cols.join(","))))
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| BenchError::Row { line, message: e.to_string() })?;
        let get = |k: usize| row.get(idx[k]).unwrap_or("").to_string();
        out.push((line, [get(0), get(1), get(2)]));
    }
    Ok(out)
}

fn parse_date(line: usize, s: &str) -> Result<NaiveDate, BenchError> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| BenchError::Row { line, message: format!("bad date {s:?}") })
}

fn parse_id(line: usize, s: &str) -> Result<ModelId, BenchError> {
    ModelId::parse(s).map_err(|e| BenchError::Row { line, message: e.to_string() })
}

fn parse_f64(line: usize, s: &str) -> Result<f64, BenchError> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| BenchError::Row { line, message: format!("bad number {s:?}") })
}

/// Reads `date,model_id,elo`; regions come from the registry. Ratings are
/// returned unadjusted.
pub fn read_elo_csv(text: &str, registry: &Registry) -> Result<Vec<EloObservation>, BenchError> {
    read_rows(text, ["date", "model_id", "elo"])?
        .into_iter()
        .map(|(line, [date, id, elo])| {
            let model_id = parse_id(line, &id)?;
            Ok(EloObservation {
                region: registry.attribute(model_id.as_str()).1,
                model_id,
                observed_at: parse_date(line, &date)?,
                elo: parse_f64(line, &elo)?,
                adjusted: false,
            })
        })
        .collect()
}

/// Reads `date,model_id,score`.
pub fn read_index_csv(text: &str, registry: &Registry) -> Result<Vec<IndexObservation>, BenchError> {
    read_rows(text, ["date", "model_id", "score"])?
        .into_iter()
        .map(|(line, [date, id, score])| {
            let model_id = parse_id(line, &id)?;
            Ok(IndexObservation {
                region: registry.attribute(model_id.as_str()).1,
                model_id,
                observed_at: parse_date(line, &date)?,
                score: parse_f64(line, &score)?,
            })
        })
        .collect()
}

/// Reads `month,model_id,tokens`; organization and region come from the
/// registry. Months may be `YYYY-MM` or any date within the month.
pub fn read_tokens_csv(text: &str, registry: &Registry) -> Result<Vec<TokenShareRecord>, BenchError> {
    read_rows(text, ["month", "model_id", "tokens"])?
        .into_iter()
        .map(|(line, [month, id, tokens])| {
            let model_id = parse_id(line, &id)?;
            let month = if month.len() == 7 {
                parse_date(line, &format!("{month}-01"))?
            } else {
                first_of_month(parse_date(line, &month)?)
            };
            let tokens = tokens
                .parse::<u64>()
                .map_err(|_| BenchError::Row { line, message: format!("bad tokens {tokens:?}") })?;
            let (organization, region) = registry.attribute(model_id.as_str());
            Ok(TokenShareRecord { month, model_id, organization, region, tokens })
        })
        .collect()
}

/// Shifts every date by `days`; used to check fit equivariance.
pub fn shift_dates(obs: &[IndexObservation], days: u64) -> Vec<IndexObservation> {
    obs.iter()
        .map(|o| IndexObservation { observed_at: o.observed_at + Days::new(days), ..o.clone() })
        .collect()
}
