//! Append-only, line-oriented snapshot store.
//!
//! Layout under the store directory:
//!
//! ```text
//! manifest.json            sha256 and line count of every data file
//! snapshots/YYYY-MM.tsv    daily scraper points, `date\tmodel_id\tcumulative`
//! history/YYYY-MM.tsv      monthly history, same line format, month label dates
//! LOCK                     advisory writer lock
//! ```
//!
//! Appends never rewrite existing lines. Points already present with the
//! same value are skipped, so re-importing a file leaves every byte as it
//! was; a different value for an existing `(date, model_id)` is reported as
//! a conflict and not written.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HistoricalMonthly, IngestError, SnapshotPoint};
use crate::registry::ModelId;
use crate::series::{DownloadSeries, MonthlySeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Snapshots,
    History,
}

impl Stream {
    fn dir(self) -> &'static str {
        match self {
            Stream::Snapshots => "snapshots",
            Stream::History => "history",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct FileEntry {
    sha256: String,
    lines: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    files: BTreeMap<String, FileEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AppendReport {
    pub written: usize,
    pub unchanged: usize,
    /// `(model_id, date, stored value, rejected value)`.
    pub conflicts: Vec<(String, NaiveDate, u64, u64)>,
}

type Key = (NaiveDate, String);

#[derive(Debug, Clone)]
pub struct SnapshotStore {
    root: PathBuf,
}

impl SnapshotStore {
    /// Opens (creating if needed) a store directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<SnapshotStore, IngestError> {
        let root = root.into();
        for sub in [Stream::Snapshots.dir(), Stream::History.dir()] {
            fs::create_dir_all(root.join(sub)).map_err(|e| IngestError::io(root.join(sub), e))?;
        }
        Ok(SnapshotStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    fn read_manifest(&self) -> Result<Manifest, IngestError> {
        let path = self.manifest_path();
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| IngestError::Integrity {
                file: "manifest.json".into(),
                line: e.line(),
                offset: 0,
                message: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Ok(Manifest { version: 1, files: BTreeMap::new() })
            }
            Err(e) => Err(IngestError::io(path, e)),
        }
    }

    fn write_manifest(&self, manifest: &Manifest) -> Result<(), IngestError> {
        let path = self.manifest_path();
        let tmp = self.root.join("manifest.json.tmp");
        let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&tmp, text).map_err(|e| IngestError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| IngestError::io(&path, e))
    }

    fn lock(&self) -> Result<File, IngestError> {
        let path = self.root.join("LOCK");
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| IngestError::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(file),
            Err(fs::TryLockError::WouldBlock) => {
                Err(IngestError::Locked(self.root.display().to_string()))
            }
            Err(fs::TryLockError::Error(e)) => Err(IngestError::io(&path, e)),
        }
    }

    pub fn append_snapshots(&self, points: &[SnapshotPoint]) -> Result<AppendReport, IngestError> {
        let rows = points
            .iter()
            .map(|p| ((p.observed_at, p.model_id.to_string()), p.cumulative_downloads));
        self.append(Stream::Snapshots, rows)
    }

    pub fn append_history(&self, rows: &[HistoricalMonthly]) -> Result<AppendReport, IngestError> {
        let rows = rows
            .iter()
            .map(|r| ((r.month, r.model_id.to_string()), r.cumulative_downloads));
        self.append(Stream::History, rows)
    }

    fn append(
        &self,
        stream: Stream,
        rows: impl Iterator<Item = (Key, u64)>,
    ) -> Result<AppendReport, IngestError> {
        let _lock = self.lock()?;
        let mut manifest = self.read_manifest()?;
        let mut by_file: BTreeMap<String, BTreeMap<Key, u64>> = BTreeMap::new();
        let mut report = AppendReport::default();
        for (key, value) in rows {
            let file = format!("{}/{}.tsv", stream.dir(), key.0.format("%Y-%m"));
            let entry = by_file.entry(file).or_default();
            match entry.get(&key) {
                Some(&v) if v != value => {
                    report.conflicts.push((key.1.clone(), key.0, v, value));
                }
                Some(_) => report.unchanged += 1,
                None => {
                    entry.insert(key, value);
                }
            }
        }

        for (rel, new_rows) in by_file {
            let path = self.root.join(&rel);
            let existing = self.read_file(&rel, manifest.files.get(&rel))?;
            let mut buf = String::new();
            let mut added = 0;
            for (key, value) in new_rows {
                match existing.get(&key) {
                    Some(&v) if v == value => report.unchanged += 1,
                    Some(&v) => report.conflicts.push((key.1.clone(), key.0, v, value)),
                    None => {
                        buf.push_str(&format!("{}\t{}\t{}\n", key.0, key.1, value));
                        added += 1;
                    }
                }
            }
            if added == 0 {
                continue;
            }
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| IngestError::io(&path, e))?;
            f.write_all(buf.as_bytes()).map_err(|e| IngestError::io(&path, e))?;
            f.sync_data().map_err(|e| IngestError::io(&path, e))?;
            let bytes = fs::read(&path).map_err(|e| IngestError::io(&path, e))?;
            manifest.files.insert(
                rel,
                FileEntry { sha256: hex_digest(&bytes), lines: existing.len() + added },
            );
            report.written += added;
        }
        if report.written > 0 {
            manifest.version = 1;
            self.write_manifest(&manifest)?;
        }
        Ok(report)
    }

    /// Parses one data file, checking it against its manifest entry.
    fn read_file(&self, rel: &str, entry: Option<&FileEntry>) -> Result<HashMap<Key, u64>, IngestError> {
        let path = self.root.join(rel);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return match entry {
                    None => Ok(HashMap::new()),
                    Some(_) => Err(integrity(rel, 0, 0, "file listed in manifest is missing")),
                };
            }
            Err(e) => return Err(IngestError::io(&path, e)),
        };
        match entry {
            Some(entry) if entry.sha256 != hex_digest(&bytes) => {
                return Err(integrity(rel, 0, 0, "checksum does not match manifest"));
            }
            None if !bytes.is_empty() => {
                return Err(integrity(rel, 0, 0, "file is not listed in manifest"));
            }
            _ => {}
        }
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| integrity(rel, 0, e.valid_up_to() as u64, "invalid UTF-8"))?;
        let mut out = HashMap::new();
        let mut offset = 0u64;
        for (i, line) in text.split_inclusive('\n').enumerate() {
            let lineno = i + 1;
            let Some(body) = line.strip_suffix('\n') else {
                return Err(integrity(rel, lineno, offset, "truncated record"));
            };
            let mut parts = body.split('\t');
            let (Some(date), Some(id), Some(value), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(integrity(rel, lineno, offset, "expected 3 tab-separated fields"));
            };
            let date = NaiveDate::parse_from_str(date, "%Y-%m-%d")
                .map_err(|_| integrity(rel, lineno, offset, "bad date"))?;
            ModelId::parse(id).map_err(|_| integrity(rel, lineno, offset, "bad model id"))?;
            let value: u64 =
                value.parse().map_err(|_| integrity(rel, lineno, offset, "bad download count"))?;
            if out.insert((date, id.to_string()), value).is_some() {
                return Err(integrity(
                    rel,
                    lineno,
                    offset,
                    &format!("duplicate record for {id} on {date}"),
                ));
            }
            offset += line.len() as u64;
        }
        Ok(out)
    }

    fn read_stream(&self, stream: Stream) -> Result<BTreeMap<String, Vec<(NaiveDate, u64)>>, IngestError> {
        let manifest = self.read_manifest()?;
        let dir = self.root.join(stream.dir());
        let mut names: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| IngestError::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.ends_with(".tsv"))
            .map(|n| format!("{}/{n}", stream.dir()))
            .collect();
        for listed in manifest.files.keys() {
            if listed.starts_with(stream.dir()) && !names.contains(listed) {
                names.push(listed.clone());
            }
        }
        names.sort();
        let mut by_id: BTreeMap<String, Vec<(NaiveDate, u64)>> = BTreeMap::new();
        for rel in names {
            for ((date, id), v) in self.read_file(&rel, manifest.files.get(&rel))? {
                by_id.entry(id).or_default().push((date, v));
            }
        }
        for pts in by_id.values_mut() {
            pts.sort();
        }
        Ok(by_id)
    }

    /// All snapshot points of one model, ascending by date.
    pub fn load_series(&self, model_id: &str) -> Result<DownloadSeries, IngestError> {
        let mut all = self.read_stream(Stream::Snapshots)?;
        Ok(to_series(model_id, all.remove(model_id).unwrap_or_default()))
    }

    pub fn load_all_series(&self) -> Result<BTreeMap<String, DownloadSeries>, IngestError> {
        Ok(self
            .read_stream(Stream::Snapshots)?
            .into_iter()
            .map(|(id, pts)| {
                let s = to_series(&id, pts);
                (id, s)
            })
            .collect())
    }

    pub fn load_all_history(&self) -> Result<BTreeMap<String, MonthlySeries>, IngestError> {
        let mut out = BTreeMap::new();
        for (id, pts) in self.read_stream(Stream::History)? {
            let mut running = 0u64;
            let mut values = Vec::with_capacity(pts.len());
            for (label, v) in pts {
                running = running.max(v);
                values.push((label, running as f64));
            }
            let series = MonthlySeries::from_values(id.clone(), values).map_err(|e| {
                integrity(Stream::History.dir(), 0, 0, &format!("history for {id}: {e}"))
            })?;
            out.insert(id, series);
        }
        Ok(out)
    }
}

fn to_series(id: &str, pts: Vec<(NaiveDate, u64)>) -> DownloadSeries {
    DownloadSeries::new(id, pts.into_iter().map(|(d, v)| (d, v as f64)).collect())
        .expect("store rows are unique per date and non-negative")
}

fn integrity(file: &str, line: usize, offset: u64, message: &str) -> IngestError {
    IngestError::Integrity { file: file.into(), line, offset, message: message.into() }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn pt(id: &str, date: &str, v: u64) -> SnapshotPoint {
        SnapshotPoint {
            model_id: ModelId::parse(id).unwrap(),
            observed_at: d(date),
            cumulative_downloads: v,
        }
    }

    fn snapshot_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
        walk(root)
            .into_iter()
            .filter(|p| !p.ends_with("LOCK"))
            .map(|p| (p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()))
            .collect()
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn load_sorts_points() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(tmp.path()).unwrap();
        store
            .append_snapshots(&[
                pt("a/b", "2025-08-03", 30),
                pt("a/b", "2025-07-01", 10),
                pt("a/c", "2025-07-02", 99),
                pt("a/b", "2025-07-15", 20),
            ])
            .unwrap();
        let s = store.load_series("a/b").unwrap();
        assert_eq!(
            s.points(),
            &[(d("2025-07-01"), 10.0), (d("2025-07-15"), 20.0), (d("2025-08-03"), 30.0)]
        );
        assert!(store.load_series("x/unknown").unwrap().is_empty());
    }

    #[test]
    fn reimport_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(tmp.path()).unwrap();
        let pts = vec![pt("a/b", "2025-07-01", 10), pt("a/b", "2025-07-02", 12)];
        let first = store.append_snapshots(&pts).unwrap();
        assert_eq!(first.written, 2);
        let before = snapshot_bytes(tmp.path());
        let again = store.append_snapshots(&pts).unwrap();
        assert_eq!(again.written, 0);
        assert_eq!(again.unchanged, 2);
        assert_eq!(snapshot_bytes(tmp.path()), before);
    }

    #[test]
    fn conflicting_value_is_not_written() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(tmp.path()).unwrap();
        store.append_snapshots(&[pt("a/b", "2025-07-01", 10)]).unwrap();
        let r = store.append_snapshots(&[pt("a/b", "2025-07-01", 11)]).unwrap();
        assert_eq!(r.written, 0);
        assert_eq!(r.conflicts, vec![("a/b".into(), d("2025-07-01"), 10, 11)]);
        assert_eq!(store.load_series("a/b").unwrap().points()[0].1, 10.0);
    }

    #[test]
    fn duplicate_lines_are_integrity_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(tmp.path()).unwrap();
        store.append_snapshots(&[pt("a/b", "2025-07-01", 10)]).unwrap();
        // simulate an out-of-band writer that also fixes up the manifest
        let rel = "snapshots/2025-07.tsv";
        let path = tmp.path().join(rel);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"2025-07-01\ta/b\t10\n").unwrap();
        drop(f);
        let mut manifest = store.read_manifest().unwrap();
        manifest.files.insert(
            rel.into(),
            FileEntry { sha256: hex_digest(&fs::read(&path).unwrap()), lines: 2 },
        );
        store.write_manifest(&manifest).unwrap();
        match store.load_series("a/b") {
            Err(IngestError::Integrity { line, offset, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(offset, "2025-07-01\ta/b\t10\n".len() as u64);
            }
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn tampering_detected_by_checksum() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(tmp.path()).unwrap();
        store.append_snapshots(&[pt("a/b", "2025-07-01", 10)]).unwrap();
        fs::write(tmp.path().join("snapshots/2025-07.tsv"), "2025-07-01\ta/b\t99\n").unwrap();
        assert!(matches!(store.load_series("a/b"), Err(IngestError::Integrity { .. })));
    }

    #[test]
    fn second_writer_is_locked_out() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(tmp.path()).unwrap();
        let _held = store.lock().unwrap();
        let other = SnapshotStore::open(tmp.path()).unwrap();
        assert!(matches!(
            other.append_snapshots(&[pt("a/b", "2025-07-01", 1)]),
            Err(IngestError::Locked(_))
        ));
    }

    #[test]
    fn history_stream_is_separate() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(tmp.path()).unwrap();
        let rows = vec![
            HistoricalMonthly {
                model_id: ModelId::parse("a/b").unwrap(),
                month: d("2024-01-01"),
                cumulative_downloads: 5,
            },
            HistoricalMonthly {
                model_id: ModelId::parse("a/b").unwrap(),
                month: d("2024-02-01"),
                cumulative_downloads: 9,
            },
        ];
        store.append_history(&rows).unwrap();
        assert!(store.load_series("a/b").unwrap().is_empty());
        let h = store.load_all_history().unwrap();
        assert_eq!(h["a/b"].values(), vec![5.0, 9.0]);
    }
}
