//! Report tables and long-form plot data.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;

use crate::benchmarks::{
    adjust_elo, elo_frontier, fit_linear_trend, read_elo_csv, read_index_csv, read_tokens_csv,
    token_share,
};
use crate::derivatives::{filter_derivatives, monthly_shares, read_derivatives_csv, DerivativeRules, GroupBy};
use crate::ingest::SnapshotStore;
use crate::pipeline::{process_models, PipelineConfig};
use crate::ram::{build_reference_curve, ram_trajectory, ReferenceCurve};
use crate::registry::{Region, Registry, SizeBucket};
use crate::series::{aggregate_group, first_of_month, format_value, MonthlySeries};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReportKind {
    RegionDownloads,
    OrgDownloads,
    SizeDistribution,
    DerivativeShare,
    TokenShare,
    EloFrontier,
    IndexTrend,
    RamReference,
    RamTrajectory,
}

impl ReportKind {
    pub const ALL: [ReportKind; 9] = [
        ReportKind::RegionDownloads,
        ReportKind::OrgDownloads,
        ReportKind::SizeDistribution,
        ReportKind::DerivativeShare,
        ReportKind::TokenShare,
        ReportKind::EloFrontier,
        ReportKind::IndexTrend,
        ReportKind::RamReference,
        ReportKind::RamTrajectory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportKind::RegionDownloads => "region_downloads",
            ReportKind::OrgDownloads => "org_downloads",
            ReportKind::SizeDistribution => "size_distribution",
            ReportKind::DerivativeShare => "derivative_share",
            ReportKind::TokenShare => "token_share",
            ReportKind::EloFrontier => "elo_frontier",
            ReportKind::IndexTrend => "index_trend",
            ReportKind::RamReference => "ram_reference",
            ReportKind::RamTrajectory => "ram_trajectory",
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReportKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        ReportKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::Usage(format!("unknown report kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Usage(format!("unknown output format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSpec {
    pub kind: ReportKind,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub group_by: Option<GroupBy>,
    pub format: OutputFormat,
    pub output: PathBuf,
    /// Model or variant group, for `ram_trajectory`.
    pub model: Option<String>,
    /// Size bucket, for `ram_reference`.
    pub bucket: Option<SizeBucket>,
    /// Input file for derivative, token, Elo and index reports.
    pub input: Option<PathBuf>,
    /// Precomputed reference curve JSON for `ram_trajectory`.
    pub reference: Option<PathBuf>,
    /// Months masked out of `derivative_share`.
    pub exclude_months: Vec<NaiveDate>,
}

impl ReportSpec {
    pub fn new(kind: ReportKind, output: impl Into<PathBuf>) -> ReportSpec {
        ReportSpec {
            kind,
            from: None,
            to: None,
            group_by: None,
            format: OutputFormat::Csv,
            output: output.into(),
            model: None,
            bucket: None,
            input: None,
            reference: None,
            exclude_months: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Usage(format!("{} report needs {what}", self.kind)))
            }
        };
        match self.kind {
            ReportKind::DerivativeShare
            | ReportKind::TokenShare
            | ReportKind::EloFrontier
            | ReportKind::IndexTrend => need(self.input.is_some(), "an input file")?,
            ReportKind::RamReference => need(self.bucket.is_some(), "a bucket")?,
            ReportKind::RamTrajectory => need(self.model.is_some(), "a model or group id")?,
            _ => {}
        }
        if let (Some(a), Some(b)) = (self.from, self.to) {
            if a > b {
                return Err(Error::Usage(format!("date range {a}..{b} is empty")));
            }
        }
        Ok(())
    }

    fn in_range(&self, d: NaiveDate) -> bool {
        self.from.is_none_or(|f| d >= f) && self.to.is_none_or(|t| d <= t)
    }

    /// Sidecar log path: the output path with `.log` appended.
    pub fn log_path(&self) -> PathBuf {
        let mut s = self.output.clone().into_os_string();
        s.push(".log");
        PathBuf::from(s)
    }
}

/// A table cell with a fixed textual rendering.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    /// Rounded to the nearest integer.
    Int(f64),
    /// Fixed number of decimals.
    Fixed(f64, usize),
    /// Shortest round-trip form.
    Num(f64),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => format!("{v:.0}"),
            Cell::Fixed(v, p) => format!("{v:.p$}"),
            Cell::Num(v) => format_value(*v),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Text(s) => serde_json::Value::String(s.clone()),
            other => {
                let text = other.render();
                serde_json::from_str(&text).unwrap_or(serde_json::Value::String(text))
            }
        }
    }
}

fn text(s: impl ToString) -> Cell {
    Cell::Text(s.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub series: String,
    pub x: String,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportArtifact {
    pub kind: ReportKind,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub plot: Vec<PlotRow>,
    pub warnings: Vec<String>,
}

impl ReportArtifact {
    fn new(kind: ReportKind, columns: Vec<&'static str>) -> ReportArtifact {
        ReportArtifact { kind, columns, rows: Vec::new(), plot: Vec::new(), warnings: Vec::new() }
    }

    fn plot(&mut self, series: impl ToString, x: impl ToString, y: f64) {
        self.plot.push(PlotRow { series: series.to_string(), x: x.to_string(), y });
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, serde_json::Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| (c.to_string(), v.json()))
                    .collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&rows).expect("json");
        s.push('\n');
        s
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }
}

/// Long-form `series,x,y` table for any plotting tool.
pub fn emit_plot_data(artifact: &ReportArtifact) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "x", "y"]).expect("in-memory write");
    for r in &artifact.plot {
        w.write_record([r.series.as_str(), r.x.as_str(), &format_value(r.y)]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Everything a report may read.
pub struct ReportContext<'a> {
    pub registry: &'a Registry,
    pub store: Option<&'a SnapshotStore>,
    pub pipeline: PipelineConfig,
}

fn read_input(spec: &ReportSpec) -> Result<String> {
    let path = spec.input.as_ref().expect("validated");
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn store<'a>(ctx: &ReportContext<'a>) -> Result<&'a SnapshotStore> {
    ctx.store.ok_or_else(|| Error::Usage("this report needs --store".into()))
}

/// Builds the artifact without touching the output path.
pub fn build_report(spec: &ReportSpec, ctx: &ReportContext) -> Result<ReportArtifact> {
    spec.validate()?;
    match spec.kind {
        ReportKind::RegionDownloads => group_downloads(spec, ctx, GroupBy::Region),
        ReportKind::OrgDownloads => group_downloads(spec, ctx, GroupBy::Organization),
        ReportKind::SizeDistribution => size_distribution(spec, ctx),
        ReportKind::DerivativeShare => derivative_report(spec, ctx),
        ReportKind::TokenShare => token_report(spec, ctx),
        ReportKind::EloFrontier => elo_report(spec, ctx),
        ReportKind::IndexTrend => index_report(spec, ctx),
        ReportKind::RamReference => ram_reference_report(spec, ctx),
        ReportKind::RamTrajectory => ram_trajectory_report(spec, ctx),
    }
}

/// Builds the report, writes it to `spec.output` and the warnings to the
/// sidecar log. Both files are byte-identical for identical inputs.
pub fn run_report(spec: &ReportSpec, ctx: &ReportContext) -> Result<ReportArtifact> {
    let artifact = build_report(spec, ctx)?;
    write_file(&spec.output, &artifact.render(spec.format))?;
    let mut log = String::new();
    for w in &artifact.warnings {
        log.push_str("warning: ");
        log.push_str(w);
        log.push('\n');
    }
    write_file(&spec.log_path(), &log)?;
    Ok(artifact)
}

pub(crate) fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Monthly series for every model in the store: scraper-derived (spliced
/// when configured) plus history-only models as recorded.
pub fn monthly_from_store(
    store: &SnapshotStore,
    cfg: &PipelineConfig,
) -> Result<(Vec<MonthlySeries>, Vec<String>)> {
    let series = store.load_all_series()?;
    let history = store.load_all_history()?;
    let (models, warnings) = process_models(&series, &history, cfg)?;
    let mut out: BTreeMap<String, MonthlySeries> =
        models.into_iter().map(|(id, m)| (id, m.monthly)).collect();
    for (id, h) in history {
        out.entry(id).or_insert(h);
    }
    Ok((out.into_values().collect(), warnings))
}

fn group_downloads(spec: &ReportSpec, ctx: &ReportContext, by: GroupBy) -> Result<ReportArtifact> {
    let (monthly, warnings) = monthly_from_store(store(ctx)?, &ctx.pipeline)?;
    let group_map: HashMap<String, String> = monthly
        .iter()
        .map(|s| {
            let (org, region) = ctx.registry.attribute(&s.id);
            let key = match by {
                GroupBy::Organization => org,
                GroupBy::Region => region.to_string(),
            };
            (s.id.clone(), key)
        })
        .collect();
    let groups = aggregate_group(&monthly, &group_map);
    let mut a = ReportArtifact::new(spec.kind, vec!["month", "group", "cumulative_downloads"]);
    a.warnings = warnings;
    // Month-major order so each month's groups sit together.
    let mut rows: BTreeMap<(NaiveDate, String), f64> = BTreeMap::new();
    for (g, s) in &groups {
        for p in s.points().iter().filter(|p| spec.in_range(p.label)) {
            rows.insert((p.label, g.clone()), p.value);
        }
    }
    for ((month, g), v) in rows {
        a.rows.push(vec![text(month), text(&g), Cell::Int(v)]);
        a.plot(&g, month, v);
    }
    Ok(a)
}

fn size_distribution(spec: &ReportSpec, ctx: &ReportContext) -> Result<ReportArtifact> {
    let (monthly, warnings) = monthly_from_store(store(ctx)?, &ctx.pipeline)?;
    let mut a = ReportArtifact::new(spec.kind, vec!["bucket", "downloads", "share"]);
    a.warnings = warnings;
    let mut totals: BTreeMap<SizeBucket, f64> = SizeBucket::ALL.iter().map(|&b| (b, 0.0)).collect();
    for s in &monthly {
        let Some(rec) = ctx.registry.get(&s.id) else {
            a.warnings.push(format!("{}: not in registry, excluded from size distribution", s.id));
            continue;
        };
        let value = match spec.to {
            Some(to) => s.carried_value(first_of_month(to)),
            None => s.last().map_or(0.0, |p| p.value),
        };
        *totals.get_mut(&rec.bucket()).expect("all buckets") += value;
    }
    let total: f64 = totals.values().sum();
    for (b, v) in totals {
        let share = if total > 0.0 { v / total } else { 0.0 };
        a.rows.push(vec![text(b), Cell::Int(v), Cell::Fixed(share, 6)]);
        a.plot("share", b, share);
    }
    Ok(a)
}

fn derivative_report(spec: &ReportSpec, ctx: &ReportContext) -> Result<ReportArtifact> {
    let records = read_derivatives_csv(&read_input(spec)?)?;
    let filtered = filter_derivatives(&records, ctx.registry, &DerivativeRules::default());
    let by = spec.group_by.unwrap_or(GroupBy::Region);
    let mut a = ReportArtifact::new(spec.kind, vec!["month", "group", "share", "count"]);
    let r = &filtered.rejected;
    a.warnings.push(format!(
        "accepted {}, rejected {} (untracked base {}, too few downloads {}, excluded format {})",
        filtered.accepted.len(),
        r.total(),
        r.untracked_base,
        r.too_few_downloads,
        r.excluded_format
    ));
    for m in &spec.exclude_months {
        a.warnings.push(format!("month {} masked", first_of_month(*m).format("%Y-%m")));
    }
    let shares = monthly_shares(&filtered.accepted, by, ctx.registry, &spec.exclude_months);
    for (month, groups) in shares.into_iter().filter(|(m, _)| spec.in_range(*m)) {
        for (g, s) in groups {
            a.rows.push(vec![text(month), text(&g), Cell::Fixed(s.share, 6), Cell::Int(s.count as f64)]);
            a.plot(&g, month, s.share);
        }
    }
    Ok(a)
}

fn token_report(spec: &ReportSpec, ctx: &ReportContext) -> Result<ReportArtifact> {
    let records = read_tokens_csv(&read_input(spec)?, ctx.registry)?;
    let by = spec.group_by.unwrap_or(GroupBy::Region);
    let mut a = ReportArtifact::new(spec.kind, vec!["month", "group", "share", "tokens"]);
    a.warnings.push("token shares cover only the provider's monthly top 10 and may undercount".into());
    let months: std::collections::BTreeSet<NaiveDate> = records.iter().map(|r| r.month).collect();
    for month in months.into_iter().filter(|m| spec.in_range(*m)) {
        let shares = token_share(&records, by, month)?;
        for (g, s) in shares.shares {
            a.rows.push(vec![text(month), text(&g), Cell::Fixed(s.share, 6), Cell::Int(s.count as f64)]);
            a.plot(&g, month, s.share);
        }
    }
    Ok(a)
}

const REGIONS: [Region; 4] = [Region::Usa, Region::China, Region::Europe, Region::Other];

fn elo_report(spec: &ReportSpec, ctx: &ReportContext) -> Result<ReportArtifact> {
    let obs = read_elo_csv(&read_input(spec)?, ctx.registry)?;
    let adjusted = obs.iter().map(adjust_elo).collect::<std::result::Result<Vec<_>, _>>()?;
    let mut a = ReportArtifact::new(spec.kind, vec!["region", "date", "elo", "leader"]);
    for region in REGIONS {
        for p in elo_frontier(&adjusted, region).into_iter().filter(|p| spec.in_range(p.date)) {
            a.rows.push(vec![text(region), text(p.date), Cell::Num(p.elo), text(&p.leader)]);
            a.plot(region, p.date, p.elo);
        }
    }
    Ok(a)
}

fn index_report(spec: &ReportSpec, ctx: &ReportContext) -> Result<ReportArtifact> {
    let obs: Vec<_> = read_index_csv(&read_input(spec)?, ctx.registry)?
        .into_iter()
        .filter(|o| spec.in_range(o.observed_at))
        .collect();
    let mut a = ReportArtifact::new(
        spec.kind,
        vec!["region", "slope_per_day", "intercept", "residual_rms", "epoch", "n"],
    );
    for region in REGIONS {
        match fit_linear_trend(&obs, region) {
            Ok(f) => {
                a.rows.push(vec![
                    text(region),
                    Cell::Num(f.slope),
                    Cell::Num(f.intercept),
                    Cell::Num(f.residual_rms),
                    text(f.epoch),
                    Cell::Int(f.n as f64),
                ]);
                a.plot(region, "slope_per_day", f.slope);
                a.plot(region, "intercept", f.intercept);
                a.plot(region, "residual_rms", f.residual_rms);
            }
            Err(e) => a.warnings.push(format!("{region}: no trend: {e}")),
        }
    }
    Ok(a)
}

fn reference_date(ctx: &ReportContext) -> NaiveDate {
    ctx.pipeline.reference_date
}

fn filtered_series(ctx: &ReportContext) -> Result<(HashMap<String, crate::series::DownloadSeries>, Vec<String>)> {
    let store = store(ctx)?;
    let series = store.load_all_series()?;
    let (models, warnings) = process_models(&series, &BTreeMap::new(), &ctx.pipeline)?;
    Ok((models.into_iter().map(|(id, m)| (id, m.filtered)).collect(), warnings))
}

fn curve_rows(a: &mut ReportArtifact, curve: &ReferenceCurve) {
    for m in &curve.milestones {
        a.rows.push(vec![
            text(curve.bucket),
            text(curve.reference_date),
            Cell::Int(f64::from(m.t)),
            Cell::Int(m.median),
            Cell::Int(m.q1),
            Cell::Int(m.q3),
            Cell::Int(m.support as f64),
        ]);
        if m.reduced_support() {
            a.warnings.push(format!("{} t={}: reduced support {}", curve.bucket, m.t, m.support));
        }
        a.plot("median", m.t, m.median);
        a.plot("q1", m.t, m.q1);
        a.plot("q3", m.t, m.q3);
    }
}

fn ram_reference_report(spec: &ReportSpec, ctx: &ReportContext) -> Result<ReportArtifact> {
    let bucket = spec.bucket.expect("validated");
    let (series, warnings) = filtered_series(ctx)?;
    let curve = build_reference_curve(bucket, ctx.registry, &series, reference_date(ctx))?;
    let mut a = ReportArtifact::new(
        spec.kind,
        vec!["bucket", "reference_date", "t", "median", "q1", "q3", "support"],
    );
    a.warnings = warnings;
    a.warnings.push(format!(
        "members: {}",
        curve.members.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(";")
    ));
    curve_rows(&mut a, &curve);
    Ok(a)
}

fn ram_trajectory_report(spec: &ReportSpec, ctx: &ReportContext) -> Result<ReportArtifact> {
    let id = spec.model.as_deref().expect("validated");
    let (series, warnings) = filtered_series(ctx)?;
    let curve = match &spec.reference {
        Some(path) => ReferenceCurve::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?,
        None => {
            let members = ctx
                .registry
                .group_members(id)
                .ok_or_else(|| crate::ram::RamError::UnknownModel(id.to_string()))?;
            let bucket = ctx
                .registry
                .get(members[0].as_str())
                .map(|r| r.bucket())
                .ok_or_else(|| crate::ram::RamError::UnknownModel(id.to_string()))?;
            build_reference_curve(bucket, ctx.registry, &series, reference_date(ctx))?
        }
    };
    let scores = ram_trajectory(id, ctx.registry, &series, &curve)?;
    let mut a = ReportArtifact::new(
        spec.kind,
        vec!["model", "bucket", "t", "downloads", "score", "reference_date"],
    );
    a.warnings = warnings;
    for s in scores {
        if s.reduced_support {
            a.warnings.push(format!("t={}: reference has reduced support", s.t));
        }
        a.rows.push(vec![
            text(&s.model),
            text(s.bucket),
            Cell::Int(f64::from(s.t)),
            Cell::Int(s.downloads),
            Cell::Fixed(s.score, 2),
            text(s.reference_date),
        ]);
        a.plot(&s.model, s.t, s.score);
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_parse() {
        for k in ReportKind::ALL {
            assert_eq!(k.name().parse::<ReportKind>().unwrap(), k);
        }
        let err = "pie_chart".parse::<ReportKind>().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn spec_validation() {
        let mut s = ReportSpec::new(ReportKind::RamTrajectory, "out.csv");
        assert!(s.validate().is_err());
        s.model = Some("a/b".into());
        assert!(s.validate().is_ok());
        s.from = NaiveDate::from_ymd_opt(2026, 1, 1);
        s.to = NaiveDate::from_ymd_opt(2025, 1, 1);
        assert!(s.validate().is_err());
        assert!(ReportSpec::new(ReportKind::TokenShare, "x").validate().is_err());
        assert_eq!(ReportSpec::new(ReportKind::TokenShare, "a/x.csv").log_path(), PathBuf::from("a/x.csv.log"));
    }

    #[test]
    fn plot_data_cardinality() {
        let mut a = ReportArtifact::new(ReportKind::RegionDownloads, vec!["month", "group", "v"]);
        assert_eq!(emit_plot_data(&a), "series,x,y\n");
        for m in ["2025-01-01", "2025-02-01", "2025-03-01"] {
            for g in ["China", "USA", "Europe"] {
                a.plot(g, m, 1.0);
            }
        }
        assert_eq!(emit_plot_data(&a).lines().count(), 1 + 9);
    }

    #[test]
    fn cell_rendering() {
        assert_eq!(Cell::Fixed(20.4512, 2).render(), "20.45");
        assert_eq!(Cell::Int(429_000.4).render(), "429000");
        assert_eq!(Cell::Num(0.1).render(), "0.1");
        let mut a = ReportArtifact::new(ReportKind::RamTrajectory, vec!["model", "score"]);
        a.rows.push(vec![text("x/y"), Cell::Fixed(1.5, 2)]);
        assert_eq!(a.to_json(), "[\n  {\n    \"model\": \"x/y\",\n    \"score\": 1.5\n  }\n]\n");
    }
}
