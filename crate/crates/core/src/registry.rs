//! Tracked-model registry: loading, size buckets, regions and variant groups.

use std::borrow::Borrow;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("registry format error: {0}")]
    Format(String),
    #[error("invalid model id {0:?}")]
    InvalidModelId(String),
    #[error("parameter count must be positive, got {0}")]
    NonPositiveParams(i128),
    #[error("unparsable parameter count {0:?}")]
    BadParams(String),
    #[error("duplicate model id {0}")]
    DuplicateId(String),
    #[error("model {0} is not in the registry")]
    UnknownModel(String),
    #[error("variant group {group} mixes size buckets")]
    MixedVariantBuckets { group: String },
}

/// Hub identifier of the form `org/name`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelId(String);

impl ModelId {
    pub fn parse(raw: &str) -> Result<ModelId, RegistryError> {
        let raw = raw.trim();
        let mut parts = raw.split('/');
        let valid = matches!(
            (parts.next(), parts.next(), parts.next()),
            (Some(org), Some(name), None) if !org.is_empty() && !name.is_empty()
        ) && !raw.chars().any(char::is_whitespace);
        if valid {
            Ok(ModelId(raw.to_string()))
        } else {
            Err(RegistryError::InvalidModelId(raw.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The namespace part before the slash.
    pub fn namespace(&self) -> &str {
        self.0.split('/').next().unwrap_or_default()
    }

    pub fn name(&self) -> &str {
        self.0.split('/').nth(1).unwrap_or_default()
    }
}

impl TryFrom<String> for ModelId {
    type Error = RegistryError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        ModelId::parse(&s)
    }
}

impl From<ModelId> for String {
    fn from(id: ModelId) -> String {
        id.0
    }
}

impl FromStr for ModelId {
    type Err = RegistryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelId::parse(s)
    }
}

impl Borrow<str> for ModelId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "USA")]
    Usa,
    China,
    Europe,
    Other,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Usa, Region::China, Region::Europe, Region::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Usa => "USA",
            Region::China => "China",
            Region::Europe => "Europe",
            Region::Other => "Other",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "usa" | "us" | "united states" => Ok(Region::Usa),
            "china" | "cn" => Ok(Region::China),
            "europe" | "eu" => Ok(Region::Europe),
            "other" => Ok(Region::Other),
            other => Err(format!("unknown region {other:?}")),
        }
    }
}

/// Parameter-count category. MoE models are bucketed by total parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeBucket {
    #[serde(rename = "<1B")]
    Sub1B,
    #[serde(rename = "1-5B")]
    B1to5,
    #[serde(rename = "7-9B")]
    B7to9,
    #[serde(rename = "10-50B")]
    B10to50,
    #[serde(rename = "50-100B")]
    B50to100,
    #[serde(rename = "100-250B")]
    B100to250,
    #[serde(rename = "250B+")]
    B250plus,
}

/// Inclusive lower bound of each bucket, in parameters. Buckets are
/// half-open `[lower, next lower)`; the 5-7B and 9-10B gaps in the bucket
/// names are closed at 6.5B and 9.5B.
pub const BUCKET_LOWER_BOUNDS: [(SizeBucket, u64); 7] = [
    (SizeBucket::Sub1B, 0),
    (SizeBucket::B1to5, 1_000_000_000),
    (SizeBucket::B7to9, 6_500_000_000),
    (SizeBucket::B10to50, 9_500_000_000),
    (SizeBucket::B50to100, 50_000_000_000),
    (SizeBucket::B100to250, 100_000_000_000),
    (SizeBucket::B250plus, 250_000_000_000),
];

impl SizeBucket {
    pub const ALL: [SizeBucket; 7] = [
        SizeBucket::Sub1B,
        SizeBucket::B1to5,
        SizeBucket::B7to9,
        SizeBucket::B10to50,
        SizeBucket::B50to100,
        SizeBucket::B100to250,
        SizeBucket::B250plus,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SizeBucket::Sub1B => "<1B",
            SizeBucket::B1to5 => "1-5B",
            SizeBucket::B7to9 => "7-9B",
            SizeBucket::B10to50 => "10-50B",
            SizeBucket::B50to100 => "50-100B",
            SizeBucket::B100to250 => "100-250B",
            SizeBucket::B250plus => "250B+",
        }
    }
}

impl fmt::Display for SizeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SizeBucket {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['–', '—'], "-");
        SizeBucket::ALL
            .into_iter()
            .find(|b| {
                b.label().to_ascii_lowercase() == key
                    || format!("{b:?}").to_ascii_lowercase() == key
            })
            .ok_or_else(|| format!("unknown size bucket {s:?}"))
    }
}

pub fn classify_size_bucket(total_params: i128) -> Result<SizeBucket, RegistryError> {
    if total_params <= 0 {
        return Err(RegistryError::NonPositiveParams(total_params));
    }
    let p = u64::try_from(total_params).unwrap_or(u64::MAX);
    Ok(BUCKET_LOWER_BOUNDS
        .iter()
        .rev()
        .find(|(_, lower)| p >= *lower)
        .map(|(b, _)| *b)
        .expect("bucket table starts at zero"))
}

/// Parses `671000000000`, `671B`, `1.5T`, `135M` or `6.5e9` into an exact
/// parameter count. Suffixes are decimal SI multipliers.
pub fn parse_param_count(raw: &str) -> Result<u64, RegistryError> {
    let s = raw.trim().replace('_', "");
    let bad = || RegistryError::BadParams(raw.to_string());
    if s.is_empty() {
        return Err(bad());
    }
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    let (number, mult) = match s.chars().last().map(|c| c.to_ascii_uppercase()) {
        Some('K') => (&s[..s.len() - 1], 1e3),
        Some('M') => (&s[..s.len() - 1], 1e6),
        Some('B') | Some('G') => (&s[..s.len() - 1], 1e9),
        Some('T') => (&s[..s.len() - 1], 1e12),
        _ => (s.as_str(), 1.0),
    };
    let v: f64 = number.trim().parse().map_err(|_| bad())?;
    let total = (v * mult).round();
    if !total.is_finite() || total < 0.0 || total > u64::MAX as f64 {
        return Err(bad());
    }
    Ok(total as u64)
}

fn alias_key(s: &str) -> String {
    s.chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Case- and punctuation-insensitive organization lookup table.
#[derive(Debug, Clone)]
pub struct OrgAliases {
    by_key: HashMap<String, (String, Region)>,
}

const DEFAULT_ALIASES: &str = include_str!("../data/org_aliases.csv");

impl Default for OrgAliases {
    fn default() -> Self {
        OrgAliases::from_csv(DEFAULT_ALIASES).expect("bundled alias table is valid")
    }
}

impl OrgAliases {
    /// Parses an `alias,organization,region` table.
    pub fn from_csv(text: &str) -> Result<OrgAliases, RegistryError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut by_key = HashMap::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| RegistryError::Format(e.to_string()))?;
            if row.len() < 3 {
                return Err(RegistryError::Format(format!(
                    "alias table line {}: expected alias,organization,region",
                    i + 2
                )));
            }
            let region: Region = row[2]
                .parse()
                .map_err(|e| RegistryError::Format(format!("alias table line {}: {e}", i + 2)))?;
            let canonical = row[1].to_string();
            by_key.insert(alias_key(&row[0]), (canonical.clone(), region));
            by_key.entry(alias_key(&canonical)).or_insert((canonical, region));
        }
        Ok(OrgAliases { by_key })
    }

    pub fn lookup(&self, organization: &str) -> Option<(&str, Region)> {
        self.by_key
            .get(&alias_key(organization))
            .map(|(name, region)| (name.as_str(), *region))
    }

    /// Canonical organization name, or the input unchanged when unknown.
    pub fn canonical<'a>(&'a self, organization: &'a str) -> &'a str {
        self.lookup(organization).map_or(organization.trim(), |(n, _)| n)
    }

    pub fn classify_region(&self, organization: &str) -> Region {
        self.lookup(organization).map_or(Region::Other, |(_, r)| r)
    }
}

/// Region of an organization using the bundled alias table.
pub fn classify_region(organization: &str) -> Region {
    thread_local! {
        static DEFAULT: OrgAliases = OrgAliases::default();
    }
    DEFAULT.with(|a| a.classify_region(organization))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: ModelId,
    pub organization: String,
    pub region: Region,
    pub total_params: u64,
    pub active_params: Option<u64>,
    pub release_date: NaiveDate,
    /// Group key shared by published weight-format variants of one release.
    /// Defaults to the model id.
    pub variant_group: String,
}

impl ModelRecord {
    pub fn bucket(&self) -> SizeBucket {
        classify_size_bucket(self.total_params as i128).expect("validated at load")
    }
}

/// Earliest release date accepted into the registry.
pub fn earliest_release() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 11, 30).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based line number in the source, header being line 1.
    pub line: usize,
    pub model_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub errors: Vec<RowError>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RegistryLoad {
    pub records: Vec<ModelRecord>,
    pub report: ValidationReport,
}

const COLUMNS: [&str; 7] = [
    "model_id",
    "organization",
    "region_hint",
    "total_params",
    "active_params",
    "release_date",
    "variant_group",
];
const REQUIRED: [&str; 4] = ["model_id", "organization", "total_params", "release_date"];

/// Parses registry CSV text. Invalid rows are collected in the report;
/// a header missing a required column fails the whole load.
pub fn load_registry(source: &str, aliases: &OrgAliases) -> Result<RegistryLoad, RegistryError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| RegistryError::Format(e.to_string()))?
        .clone();
    let mut col: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim_start_matches('\u{feff}').to_ascii_lowercase();
        if let Some(name) = COLUMNS.iter().find(|c| **c == h) {
            col.insert(name, i);
        }
    }
    let missing: Vec<_> = REQUIRED.iter().filter(|c| !col.contains_key(*c)).collect();
    if !missing.is_empty() {
        return Err(RegistryError::Format(format!(
            "header is missing required columns {missing:?}"
        )));
    }

    let mut records = Vec::new();
    let mut report = ValidationReport::default();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.errors.push(RowError { line, model_id: None, message: e.to_string() });
                continue;
            }
        };
        let field = |name: &str| cell(&col, &row, name);
        match parse_row(&field, aliases) {
            Ok(rec) => records.push(rec),
            Err(message) => report.errors.push(RowError {
                line,
                model_id: Some(field("model_id").to_string()).filter(|s| !s.is_empty()),
                message,
            }),
        }
    }
    Ok(RegistryLoad { records, report })
}

fn cell<'r>(col: &HashMap<&str, usize>, row: &'r csv::StringRecord, name: &str) -> &'r str {
    col.get(name).and_then(|&i| row.get(i)).unwrap_or("")
}

fn parse_row<'r>(field: &dyn Fn(&str) -> &'r str, aliases: &OrgAliases) -> Result<ModelRecord, String> {
    let model_id = ModelId::parse(field("model_id")).map_err(|_| "invalid model id".to_string())?;
    let organization = field("organization").to_string();
    if organization.is_empty() {
        return Err("empty organization".into());
    }
    let total_params = parse_param_count(field("total_params"))
        .map_err(|_| format!("unparsable total_params {:?}", field("total_params")))?;
    if total_params == 0 {
        return Err("total_params must be positive".into());
    }
    let active_params = match field("active_params") {
        "" => None,
        raw => Some(parse_param_count(raw).map_err(|_| format!("unparsable active_params {raw:?}"))?),
    };
    if active_params.is_some_and(|a| a > total_params) {
        return Err("active_params exceeds total_params".into());
    }
    let release_date = NaiveDate::parse_from_str(field("release_date"), "%Y-%m-%d")
        .map_err(|_| format!("unparsable release_date {:?}", field("release_date")))?;
    if release_date < earliest_release() {
        return Err(format!("release_date {release_date} predates 2022-11-30"));
    }
    let region = match field("region_hint") {
        "" => aliases.classify_region(&organization),
        hint => hint.parse::<Region>()?,
    };
    let variant_group = match field("variant_group") {
        "" => model_id.to_string(),
        g => g.to_string(),
    };
    Ok(ModelRecord {
        model_id,
        organization,
        region,
        total_params,
        active_params,
        release_date,
        variant_group,
    })
}

/// Partitions records into variant groups keyed by group name.
pub fn resolve_variant_groups(
    records: &[ModelRecord],
) -> Result<BTreeMap<String, Vec<ModelId>>, RegistryError> {
    let mut seen = std::collections::HashSet::new();
    let mut groups: BTreeMap<String, Vec<ModelId>> = BTreeMap::new();
    for r in records {
        if !seen.insert(r.model_id.as_str()) {
            return Err(RegistryError::DuplicateId(r.model_id.to_string()));
        }
        groups.entry(r.variant_group.clone()).or_default().push(r.model_id.clone());
    }
    for members in groups.values_mut() {
        members.sort();
    }
    Ok(groups)
}

/// Validated, immutable registry with lookups by model id and variant group.
#[derive(Debug, Clone)]
pub struct Registry {
    records: Vec<ModelRecord>,
    index: HashMap<ModelId, usize>,
    groups: BTreeMap<String, Vec<ModelId>>,
    aliases: OrgAliases,
}

impl Registry {
    pub fn new(records: Vec<ModelRecord>, aliases: OrgAliases) -> Result<Registry, RegistryError> {
        let groups = resolve_variant_groups(&records)?;
        let index = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.model_id.clone(), i))
            .collect();
        Ok(Registry { records, index, groups, aliases })
    }

    /// Loads and validates in one step, returning row errors alongside.
    pub fn from_csv(
        source: &str,
        aliases: OrgAliases,
    ) -> Result<(Registry, ValidationReport), RegistryError> {
        let load = load_registry(source, &aliases)?;
        Ok((Registry::new(load.records, aliases)?, load.report))
    }

    pub fn records(&self) -> &[ModelRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ModelRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn aliases(&self) -> &OrgAliases {
        &self.aliases
    }

    pub fn variant_groups(&self) -> &BTreeMap<String, Vec<ModelId>> {
        &self.groups
    }

    /// Members of a variant group, or of the group containing `id` when
    /// `id` names a model.
    pub fn group_members(&self, id: &str) -> Option<&[ModelId]> {
        if let Some(m) = self.groups.get(id) {
            return Some(m);
        }
        self.get(id).and_then(|r| self.groups.get(&r.variant_group)).map(Vec::as_slice)
    }

    /// Canonical organization of a tracked model.
    pub fn organization_of(&self, id: &str) -> Option<&str> {
        self.get(id).map(|r| self.aliases.canonical(&r.organization))
    }

    /// Organization and region for any hub id: registry first, then the
    /// alias table applied to the id's namespace.
    pub fn attribute(&self, id: &str) -> (String, Region) {
        if let Some(r) = self.get(id) {
            return (self.aliases.canonical(&r.organization).to_string(), r.region);
        }
        let ns = id.split('/').next().unwrap_or(id);
        match self.aliases.lookup(ns) {
            Some((org, region)) => (org.to_string(), region),
            None => (ns.to_string(), Region::Other),
        }
    }
}
