//! Derivative (fine-tune, adapter, merge) lineage filtering and shares.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use thiserror::Error;

use crate::registry::{ModelId, Registry};
use crate::series::first_of_month;

#[derive(Debug, Error, PartialEq)]
pub enum DerivativeError {
    #[error("derivative file format error: {0}")]
    Format(String),
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeRecord {
    pub child_id: ModelId,
    /// Raw base-model tag(s), `;`-separated when the child declares several.
    pub base_tag: String,
    pub lifetime_downloads: u64,
    pub format_tags: BTreeSet<String>,
    pub created_at: NaiveDate,
}

impl DerivativeRecord {
    /// Distinct parsable base ids in tag order.
    pub fn bases(&self) -> Vec<ModelId> {
        let mut out: Vec<ModelId> = Vec::new();
        for tag in self.base_tag.split(';') {
            if let Some(id) = parse_base_model_tag(tag) {
                if !out.contains(&id) {
                    out.push(id);
                }
            }
        }
        out
    }
}

const RELATIONS: [&str; 4] = ["finetune", "adapter", "quantized", "merge"];

/// Parses `base_model:ORG/MODEL` (prefix optional). Relation qualifiers such
/// as `base_model:finetune:ORG/MODEL` are accepted too.
pub fn parse_base_model_tag(tag: &str) -> Option<ModelId> {
    let mut rest = tag.trim();
    if let Some(r) = rest.strip_prefix("base_model:") {
        rest = r;
        if let Some((rel, r)) = rest.split_once(':') {
            if RELATIONS.contains(&rel) {
                rest = r;
            }
        }
    }
    ModelId::parse(rest).ok()
}

/// Inclusion rules for derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeRules {
    /// Accepted only when lifetime downloads exceed this.
    pub min_downloads_exclusive: u64,
    /// Lowercase markers of local-inference re-uploads, matched against
    /// format tags and the child id.
    pub excluded_formats: Vec<String>,
}

impl Default for DerivativeRules {
    fn default() -> Self {
        DerivativeRules {
            min_downloads_exclusive: 5,
            excluded_formats: vec!["gguf".into(), "mlx".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RejectionCause {
    UntrackedBase,
    TooFewDownloads,
    ExcludedFormat,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RejectionReport {
    pub untracked_base: usize,
    pub too_few_downloads: usize,
    pub excluded_format: usize,
}

impl RejectionReport {
    pub fn total(&self) -> usize {
        self.untracked_base + self.too_few_downloads + self.excluded_format
    }

    fn add(&mut self, cause: RejectionCause) {
        match cause {
            RejectionCause::UntrackedBase => self.untracked_base += 1,
            RejectionCause::TooFewDownloads => self.too_few_downloads += 1,
            RejectionCause::ExcludedFormat => self.excluded_format += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedDerivative {
    pub record: DerivativeRecord,
    /// Distinct tracked bases; the record counts once per base.
    pub tracked_bases: Vec<ModelId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterResult {
    pub accepted: Vec<AcceptedDerivative>,
    pub rejected: RejectionReport,
}

pub fn classify(
    record: &DerivativeRecord,
    registry: &Registry,
    rules: &DerivativeRules,
) -> Result<Vec<ModelId>, RejectionCause> {
    let tracked: Vec<ModelId> =
        record.bases().into_iter().filter(|b| registry.contains(b.as_str())).collect();
    if tracked.is_empty() {
        return Err(RejectionCause::UntrackedBase);
    }
    if record.lifetime_downloads <= rules.min_downloads_exclusive {
        return Err(RejectionCause::TooFewDownloads);
    }
    let child = record.child_id.as_str().to_ascii_lowercase();
    let excluded = rules.excluded_formats.iter().any(|marker| {
        child.contains(marker.as_str())
            || record.format_tags.iter().any(|t| t.to_ascii_lowercase().contains(marker.as_str()))
    });
    if excluded {
        return Err(RejectionCause::ExcludedFormat);
    }
    Ok(tracked)
}

pub fn filter_derivatives(
    records: &[DerivativeRecord],
    registry: &Registry,
    rules: &DerivativeRules,
) -> FilterResult {
    let mut out = FilterResult::default();
    for r in records {
        match classify(r, registry, rules) {
            Ok(tracked_bases) => {
                out.accepted.push(AcceptedDerivative { record: r.clone(), tracked_bases })
            }
            Err(cause) => out.rejected.add(cause),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Organization,
    Region,
}

impl std::str::FromStr for GroupBy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "organization" | "org" => Ok(GroupBy::Organization),
            "region" => Ok(GroupBy::Region),
            other => Err(format!("unknown grouping {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Share {
    pub share: f64,
    pub count: u64,
}

/// Share of new derivatives per group among those created in the calendar
/// month of `month`. Empty months give an empty map.
pub fn derivative_share(
    accepted: &[AcceptedDerivative],
    group_by: GroupBy,
    month: NaiveDate,
    registry: &Registry,
) -> BTreeMap<String, Share> {
    let month = first_of_month(month);
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for a in accepted.iter().filter(|a| first_of_month(a.record.created_at) == month) {
        for base in &a.tracked_bases {
            let (org, region) = registry.attribute(base.as_str());
            let key = match group_by {
                GroupBy::Organization => org,
                GroupBy::Region => region.to_string(),
            };
            *counts.entry(key).or_default() += 1;
        }
    }
    let total: u64 = counts.values().sum();
    counts
        .into_iter()
        .map(|(k, count)| (k, Share { share: count as f64 / total as f64, count }))
        .collect()
}

/// Shares for every month with accepted records, skipping `excluded_months`.
pub fn monthly_shares(
    accepted: &[AcceptedDerivative],
    group_by: GroupBy,
    registry: &Registry,
    excluded_months: &[NaiveDate],
) -> BTreeMap<NaiveDate, BTreeMap<String, Share>> {
    let excluded: BTreeSet<NaiveDate> = excluded_months.iter().map(|&m| first_of_month(m)).collect();
    let months: BTreeSet<NaiveDate> =
        accepted.iter().map(|a| first_of_month(a.record.created_at)).collect();
    months
        .into_iter()
        .filter(|m| !excluded.contains(m))
        .map(|m| (m, derivative_share(accepted, group_by, m, registry)))
        .collect()
}

/// Reads `child_id,base_tag,lifetime_downloads,format_tags,created_at`.
pub fn read_derivatives_csv(text: &str) -> Result<Vec<DerivativeRecord>, DerivativeError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| DerivativeError::Format(e.to_string()))?.clone();
    let pos = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let cols = ["child_id", "base_tag", "lifetime_downloads", "format_tags", "created_at"]
        .map(|c| pos(c).ok_or_else(|| DerivativeError::Format(format!("missing column {c}"))));
    let [ci, cb, cd, cf, cc] = match cols {
        [Ok(a), Ok(b), Ok(c), Ok(d), Ok(e)] => [a, b, c, d, e],
        _ => {
            return Err(DerivativeError::Format(
                "expected header child_id,base_tag,lifetime_downloads,format_tags,created_at".into(),
            ))
        }
    };
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let err = |message: String| DerivativeError::Row { line, message };
        let row = row.map_err(|e| err(e.to_string()))?;
        let get = |c: usize| row.get(c).unwrap_or("");
        let child_id = ModelId::parse(get(ci)).map_err(|e| err(e.to_string()))?;
        let lifetime_downloads = get(cd)
            .parse::<u64>()
            .map_err(|_| err(format!("bad lifetime_downloads {:?}", get(cd))))?;
        let created_at = NaiveDate::parse_from_str(get(cc), "%Y-%m-%d")
            .map_err(|_| err(format!("bad created_at {:?}", get(cc))))?;
        let format_tags = get(cf)
            .split(';')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(String::from)
            .collect();
        out.push(DerivativeRecord {
            child_id,
            base_tag: get(cb).to_string(),
            lifetime_downloads,
            format_tags,
            created_at,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::OrgAliases;

    fn registry() -> Registry {
        Registry::from_csv(
            "model_id,organization,total_params,release_date\n\
             Qwen/Qwen2.5-7B-Instruct,Qwen,7.6B,2024-09-19\n\
             meta-llama/Llama-3.1-8B-Instruct,Meta,8B,2024-07-23\n\
             mistralai/Mistral-7B-v0.1,Mistral AI,7.2B,2023-09-27\n",
            OrgAliases::default(),
        )
        .unwrap()
        .0
    }

    fn rec(base: &str, downloads: u64, formats: &[&str]) -> DerivativeRecord {
        DerivativeRecord {
            child_id: ModelId::parse("someone/child").unwrap(),
            base_tag: base.into(),
            lifetime_downloads: downloads,
            format_tags: formats.iter().map(|s| s.to_string()).collect(),
            created_at: NaiveDate::from_ymd_opt(2025, 3, 10).unwrap(),
        }
    }

    #[test]
    fn tag_parsing() {
        let want = ModelId::parse("Qwen/Qwen2.5-7B-Instruct").ok();
        assert_eq!(parse_base_model_tag("base_model:Qwen/Qwen2.5-7B-Instruct"), want);
        assert_eq!(parse_base_model_tag("Qwen/Qwen2.5-7B-Instruct"), want);
        assert_eq!(parse_base_model_tag("base_model:finetune:Qwen/Qwen2.5-7B-Instruct"), want);
        assert_eq!(parse_base_model_tag("garbage"), None);
        assert_eq!(parse_base_model_tag(""), None);
    }

    #[test]
    fn download_threshold_is_strict() {
        let reg = registry();
        let rules = DerivativeRules::default();
        let base = "base_model:Qwen/Qwen2.5-7B-Instruct";
        assert!(classify(&rec(base, 6, &[]), &reg, &rules).is_ok());
        assert_eq!(
            classify(&rec(base, 5, &[]), &reg, &rules),
            Err(RejectionCause::TooFewDownloads)
        );
    }

    #[test]
    fn reuploads_and_untracked_rejected() {
        let reg = registry();
        let rules = DerivativeRules::default();
        let base = "base_model:Qwen/Qwen2.5-7B-Instruct";
        assert_eq!(
            classify(&rec(base, 100, &["GGUF"]), &reg, &rules),
            Err(RejectionCause::ExcludedFormat)
        );
        assert_eq!(
            classify(&rec(base, 100, &["mlx"]), &reg, &rules),
            Err(RejectionCause::ExcludedFormat)
        );
        let mut named = rec(base, 100, &[]);
        named.child_id = ModelId::parse("someone/Qwen2.5-7B-Instruct-GGUF").unwrap();
        assert_eq!(classify(&named, &reg, &rules), Err(RejectionCause::ExcludedFormat));
        assert_eq!(
            classify(&rec("base_model:other/thing", 100, &[]), &reg, &rules),
            Err(RejectionCause::UntrackedBase)
        );
    }

    #[test]
    fn report_counts_add_up() {
        let reg = registry();
        let base = "base_model:Qwen/Qwen2.5-7B-Instruct";
        let records = vec![
            rec(base, 100, &[]),
            rec(base, 1, &[]),
            rec(base, 100, &["gguf"]),
            rec("x/y", 100, &[]),
        ];
        let out = filter_derivatives(&records, &reg, &DerivativeRules::default());
        assert_eq!(out.accepted.len() + out.rejected.total(), records.len());
        assert_eq!(out.rejected.untracked_base, 1);
    }

    #[test]
    fn multi_base_counts_per_tracked_base() {
        let reg = registry();
        let merge = rec(
            "base_model:merge:Qwen/Qwen2.5-7B-Instruct;base_model:merge:meta-llama/Llama-3.1-8B-Instruct;x/untracked",
            50,
            &[],
        );
        let out = filter_derivatives(&[merge], &reg, &DerivativeRules::default());
        assert_eq!(out.accepted[0].tracked_bases.len(), 2);
        let shares = derivative_share(
            &out.accepted,
            GroupBy::Region,
            NaiveDate::from_ymd_opt(2025, 3, 1).unwrap(),
            &reg,
        );
        assert_eq!(shares["China"].share, 0.5);
        assert_eq!(shares["USA"].count, 1);
    }

    #[test]
    fn shares() {
        let reg = registry();
        let mut records = Vec::new();
        for _ in 0..7 {
            records.push(rec("Qwen/Qwen2.5-7B-Instruct", 10, &[]));
        }
        for _ in 0..3 {
            records.push(rec("meta-llama/Llama-3.1-8B-Instruct", 10, &[]));
        }
        let out = filter_derivatives(&records, &reg, &DerivativeRules::default());
        let m = NaiveDate::from_ymd_opt(2025, 3, 1).unwrap();
        let s = derivative_share(&out.accepted, GroupBy::Region, m, &reg);
        assert!((s["China"].share - 0.70).abs() < 1e-12);
        let total: f64 = s.values().map(|x| x.share).sum();
        assert!((total - 1.0).abs() < 1e-9);

        let org = derivative_share(&out.accepted[..7], GroupBy::Organization, m, &reg);
        assert_eq!(org["Alibaba"].share, 1.0);

        let april = NaiveDate::from_ymd_opt(2025, 4, 1).unwrap();
        assert!(derivative_share(&out.accepted, GroupBy::Region, april, &reg).is_empty());
    }

    #[test]
    fn meta_peak_month() {
        let reg = registry();
        let mut records = Vec::new();
        for (base, n) in [
            ("meta-llama/Llama-3.1-8B-Instruct", 44),
            ("Qwen/Qwen2.5-7B-Instruct", 36),
            ("mistralai/Mistral-7B-v0.1", 20),
        ] {
            for _ in 0..n {
                let mut r = rec(base, 10, &[]);
                r.created_at = NaiveDate::from_ymd_opt(2024, 8, 17).unwrap();
                records.push(r);
            }
        }
        let out = filter_derivatives(&records, &reg, &DerivativeRules::default());
        let aug = NaiveDate::from_ymd_opt(2024, 8, 1).unwrap();
        let s = derivative_share(&out.accepted, GroupBy::Organization, aug, &reg);
        assert!((s["Meta"].share - 0.44).abs() < 1e-12);
        let total: f64 = s.values().map(|x| x.share).sum();
        assert!((total - 1.0).abs() < 1e-9);

        let masked = monthly_shares(&out.accepted, GroupBy::Organization, &reg, &[aug]);
        assert!(masked.is_empty());
    }

    #[test]
    fn csv_roundtrip() {
        let text = "child_id,base_tag,lifetime_downloads,format_tags,created_at\n\
                    a/b,base_model:Qwen/Qwen2.5-7B-Instruct,12,gguf;q4,2025-03-02\n";
        let recs = read_derivatives_csv(text).unwrap();
        assert_eq!(recs[0].format_tags.len(), 2);
        assert!(read_derivatives_csv("x,y\n").is_err());
        assert!(matches!(
            read_derivatives_csv("child_id,base_tag,lifetime_downloads,format_tags,created_at\na/b,x,-1,,2025-01-01\n"),
            Err(DerivativeError::Row { line: 2, .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn more_downloads_never_rejects(downloads in 0u64..100, extra in 0u64..100, gguf: bool) {
                let reg = registry();
                let rules = DerivativeRules::default();
                let tags: &[&str] = if gguf { &["gguf"] } else { &[] };
                let base = "Qwen/Qwen2.5-7B-Instruct";
                let before = classify(&rec(base, downloads, tags), &reg, &rules).is_ok();
                let after = classify(&rec(base, downloads + extra, tags), &reg, &rules).is_ok();
                prop_assert!(!before || after);
            }
        }
    }
}
