use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use openadopt::config::{env_overrides, parse_config_text, Config};
use openadopt::derivatives::GroupBy;
use openadopt::ingest::{
    fetch_snapshots, import_history, read_snapshots_csv, HubClient, SnapshotStore,
};
use openadopt::pipeline::PipelineConfig;
use openadopt::ram::{build_reference_curve, ReferenceCurve};
use openadopt::registry::{OrgAliases, Registry, SizeBucket};
use openadopt::report::{emit_plot_data, run_report, OutputFormat, ReportContext, ReportKind, ReportSpec};
use openadopt::series::{
    iqr_filter, monthly_rollup, splice, write_series_csv, Flags, MonthlySeries,
};
use openadopt::{Error, Result};

#[derive(Parser)]
#[command(name = "openadopt", version, about = "Open model adoption analytics")]
struct Cli {
    /// Snapshot store directory.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Model registry CSV.
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    /// Organization alias table CSV (defaults to the bundled table).
    #[arg(long, global = true)]
    aliases: Option<PathBuf>,
    /// key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output format for tables.
    #[arg(long, global = true, default_value = "csv")]
    format: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Acquire snapshots and vendor history.
    #[command(subcommand)]
    Ingest(IngestCmd),
    /// Clean, splice and roll up download series.
    #[command(subcommand)]
    Series(SeriesCmd),
    /// Derivative lineage shares.
    #[command(subcommand)]
    Derivatives(DerivativesCmd),
    /// Relative adoption scores.
    #[command(subcommand)]
    Ram(RamCmd),
    /// Benchmark and usage rollups.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Write a report table.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum IngestCmd {
    /// Fetch current download counts for every registry model.
    Fetch {
        #[arg(long)]
        base_url: Option<String>,
        /// Date stamped on the snapshots (default: today, UTC).
        #[arg(long)]
        date: Option<NaiveDate>,
        #[arg(long)]
        max_parallel: Option<usize>,
        #[arg(long)]
        min_request_interval_ms: Option<u64>,
        #[arg(long)]
        retry_limit: Option<u32>,
    },
    /// Import a vendor history CSV or a snapshot CSV into the store.
    Import {
        file: PathBuf,
        /// `history` (model_id,month,cumulative_downloads) or
        /// `snapshots` (model_id,date,cumulative_downloads).
        #[arg(long, default_value = "history")]
        kind: String,
    },
}

#[derive(Args)]
struct SeriesSel {
    /// Model id; all stored models when omitted.
    #[arg(long)]
    model: Option<String>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iqr_multiplier: Option<f64>,
}

#[derive(Subcommand)]
enum SeriesCmd {
    /// IQR spike filter over daily deltas.
    Filter(SeriesSel),
    /// Vendor history through the splice label, scraper deltas after.
    Splice {
        #[command(flatten)]
        sel: SeriesSel,
        #[arg(long)]
        splice_date: Option<NaiveDate>,
    },
    /// First-of-month rollup of the filtered series.
    Rollup(SeriesSel),
}

#[derive(Subcommand)]
enum DerivativesCmd {
    /// Monthly derivative share by base organization or region.
    Share {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "region")]
        group_by: GroupBy,
        /// Month to mask (YYYY-MM-DD, any day in the month); repeatable.
        #[arg(long)]
        exclude_month: Vec<NaiveDate>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RamCmd {
    /// Build a bucket's top-10 reference curve as JSON.
    Reference {
        #[arg(long)]
        bucket: SizeBucket,
        #[arg(long)]
        reference_date: Option<NaiveDate>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a model or variant group.
    Score {
        #[arg(long)]
        model: String,
        /// Reference curve JSON; built from the store when omitted.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        reference_date: Option<NaiveDate>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BenchIo {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Regional Elo frontier from `date,model_id,elo`.
    Frontier(BenchIo),
    /// Linear Intelligence Index trend from `date,model_id,score`.
    Trend(BenchIo),
    /// Token share from `month,model_id,tokens`.
    Tokens {
        #[command(flatten)]
        io: BenchIo,
        #[arg(long, default_value = "region")]
        group_by: GroupBy,
    },
}

#[derive(Args)]
struct ReportArgs {
    kind: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write long-form series,x,y plot data here.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
    #[arg(long)]
    group_by: Option<GroupBy>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    bucket: Option<SizeBucket>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    reference_date: Option<NaiveDate>,
    #[arg(long)]
    splice_date: Option<NaiveDate>,
    #[arg(long)]
    exclude_month: Vec<NaiveDate>,
}

struct Env {
    config: Config,
    format: OutputFormat,
}

impl Env {
    fn load(cli: &Cli, extra: &[(&str, Option<String>)]) -> Result<Env> {
        let file = match &cli.config {
            Some(path) => {
                parse_config_text(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)?
            }
            None => BTreeMap::new(),
        };
        let env = env_overrides(|k| std::env::var(k).ok());
        let mut flags = BTreeMap::new();
        let path_flags = [("store", &cli.store), ("registry", &cli.registry), ("aliases", &cli.aliases)];
        for (k, v) in path_flags {
            if let Some(p) = v {
                flags.insert(k.to_string(), p.display().to_string());
            }
        }
        for (k, v) in extra {
            if let Some(v) = v {
                flags.insert(k.to_string(), v.clone());
            }
        }
        Ok(Env { config: Config::resolve(&[&file, &env, &flags])?, format: cli.format.parse()? })
    }

    fn store(&self) -> Result<SnapshotStore> {
        Ok(SnapshotStore::open(&self.config.store)?)
    }

    fn registry(&self) -> Result<Registry> {
        let path = self
            .config
            .registry
            .as_ref()
            .ok_or_else(|| Error::Usage("a registry is required (--registry or OPENADOPT_REGISTRY)".into()))?;
        let aliases = match &self.config.aliases {
            Some(p) => OrgAliases::from_csv(&fs::read_to_string(p).map_err(|e| io_err(p, e))?)?,
            None => OrgAliases::default(),
        };
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let (registry, report) = Registry::from_csv(&text, aliases)?;
        for e in &report.errors {
            log::warn!("registry line {}: {}", e.line, e.message);
        }
        Ok(registry)
    }

    fn reference_date(&self, flag: Option<NaiveDate>) -> NaiveDate {
        flag.or(self.config.reference_date).unwrap_or_else(|| chrono::Utc::now().date_naive())
    }

    fn pipeline(&self, reference_date: Option<NaiveDate>) -> PipelineConfig {
        PipelineConfig {
            filter: self.config.filter,
            splice_date: self.config.splice_date,
            reference_date: self.reference_date(reference_date),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source: e }
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, content).map_err(|e| io_err(path, e)),
        None => std::io::stdout()
            .write_all(content.as_bytes())
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

fn opt_string<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(IngestCmd::Fetch {
            base_url,
            date,
            max_parallel,
            min_request_interval_ms,
            retry_limit,
        }) => {
            let env = Env::load(
                &cli,
                &[
                    ("base_url", base_url.clone()),
                    ("max_parallel", opt_string(max_parallel)),
                    ("min_request_interval_ms", opt_string(min_request_interval_ms)),
                    ("retry_limit", opt_string(retry_limit)),
                ],
            )?;
            let registry = env.registry()?;
            let store = env.store()?;
            let ids: Vec<_> = registry.records().iter().map(|r| r.model_id.clone()).collect();
            let client = HubClient::new(&env.config.base_url, env.config.fetch.timeout);
            let run_date = date.unwrap_or_else(|| chrono::Utc::now().date_naive());
            let (points, report) = fetch_snapshots(&client, &ids, &env.config.fetch, run_date);
            for f in &report.failures {
                eprintln!("warning: {}: {:?} after {} attempt(s)", f.model_id, f.cause, f.attempts);
            }
            let appended = store.append_snapshots(&points)?;
            for (id, d, old, new) in &appended.conflicts {
                eprintln!("warning: {id} {d}: stored {old}, fetched {new}; kept stored value");
            }
            eprintln!(
                "fetched {}/{}; wrote {}, unchanged {}",
                report.fetched.len(),
                ids.len(),
                appended.written,
                appended.unchanged
            );
            Ok(())
        }
        Command::Ingest(IngestCmd::Import { file, kind }) => {
            let env = Env::load(&cli, &[])?;
            let text = fs::read_to_string(file).map_err(|e| io_err(file, e))?;
            let store = env.store()?;
            let appended = match kind.as_str() {
                "history" => {
                    let registry = env.config.registry.as_ref().map(|_| env.registry()).transpose()?;
                    let import = import_history(&text, registry.as_ref())?;
                    for w in &import.warnings {
                        eprintln!("warning: line {}: {}: {}", w.line, w.model_id, w.message);
                    }
                    if !import.errors.is_empty() {
                        for e in &import.errors {
                            eprintln!("error: line {}: {}: {}", e.line, e.model_id, e.message);
                        }
                        return Err(Error::Ingest(openadopt::ingest::IngestError::Format(format!(
                            "{} invalid rows; nothing imported",
                            import.errors.len()
                        ))));
                    }
                    store.append_history(&import.rows)?
                }
                "snapshots" => store.append_snapshots(&read_snapshots_csv(&text)?)?,
                other => return Err(Error::Usage(format!("unknown import kind {other:?}"))),
            };
            for (id, d, old, new) in &appended.conflicts {
                eprintln!("warning: {id} {d}: stored {old}, file has {new}; kept stored value");
            }
            eprintln!("wrote {}, unchanged {}", appended.written, appended.unchanged);
            Ok(())
        }
        Command::Series(cmd) => {
            let (sel, splice_flag) = match cmd {
                SeriesCmd::Filter(s) | SeriesCmd::Rollup(s) => (s, None),
                SeriesCmd::Splice { sel, splice_date } => (sel, opt_string(splice_date)),
            };
            let env = Env::load(
                &cli,
                &[("iqr_multiplier", opt_string(&sel.iqr_multiplier)), ("splice_date", splice_flag)],
            )?;
            let store = env.store()?;
            let mut all = store.load_all_series()?;
            if let Some(m) = &sel.model {
                all.retain(|id, _| id == m);
                if all.is_empty() {
                    return Err(Error::Usage(format!("no stored series for {m}")));
                }
            }
            let mut rows = Vec::new();
            match cmd {
                SeriesCmd::Filter(_) => {
                    for (id, raw) in &all {
                        let out = iqr_filter(raw, &env.config.filter)?;
                        if out.too_short {
                            eprintln!("warning: {id}: too short to filter");
                        }
                        for &(d, v) in out.series.points() {
                            let mut flags = Flags::empty();
                            if out.flagged.iter().any(|f| f.date == d) {
                                flags.insert(Flags::OUTLIER);
                            }
                            if out.too_short {
                                flags.insert(Flags::TOO_SHORT);
                            }
                            rows.push((id.clone(), d, v, flags));
                        }
                    }
                }
                SeriesCmd::Rollup(_) => {
                    for raw in all.values() {
                        let monthly = monthly_rollup(&iqr_filter(raw, &env.config.filter)?.series);
                        push_monthly(&mut rows, &monthly);
                    }
                }
                SeriesCmd::Splice { .. } => {
                    let date = env
                        .config
                        .splice_date
                        .ok_or_else(|| Error::Usage("splice needs --splice-date".into()))?;
                    let history = store.load_all_history()?;
                    for (id, raw) in &all {
                        let Some(h) = history.get(id) else {
                            eprintln!("warning: {id}: no vendor history, skipped");
                            continue;
                        };
                        push_monthly(&mut rows, &splice(h, raw, date)?);
                    }
                }
            }
            let mut buf = Vec::new();
            write_series_csv(&mut buf, rows).map_err(|e| Error::Report(e.to_string()))?;
            emit(sel.out.as_deref(), &String::from_utf8_lossy(&buf))
        }
        Command::Derivatives(DerivativesCmd::Share { input, group_by, exclude_month, out }) => {
            let mut spec = ReportSpec::new(ReportKind::DerivativeShare, "-");
            spec.input = Some(input.clone());
            spec.group_by = Some(*group_by);
            spec.exclude_months = exclude_month.clone();
            table(&cli, spec, out.as_deref(), None)
        }
        Command::Ram(RamCmd::Reference { bucket, reference_date, out }) => {
            let env = Env::load(&cli, &[])?;
            let registry = env.registry()?;
            let store = env.store()?;
            let pipeline = env.pipeline(*reference_date);
            let (models, warnings) =
                openadopt::pipeline::process_models(&store.load_all_series()?, &BTreeMap::new(), &pipeline)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let series = models.into_iter().map(|(id, m)| (id, m.filtered)).collect();
            let curve = build_reference_curve(*bucket, &registry, &series, pipeline.reference_date)?;
            let mut json = curve.to_json();
            json.push('\n');
            emit(out.as_deref(), &json)
        }
        Command::Ram(RamCmd::Score { model, reference, reference_date, out }) => {
            if let Some(path) = reference {
                // Validate early so a bad curve is reported before any store work.
                ReferenceCurve::from_json(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)?;
            }
            let mut spec = ReportSpec::new(ReportKind::RamTrajectory, "-");
            spec.model = Some(model.clone());
            spec.reference = reference.clone();
            table(&cli, spec, out.as_deref(), *reference_date)
        }
        Command::Bench(cmd) => {
            let (kind, io, group_by) = match cmd {
                BenchCmd::Frontier(io) => (ReportKind::EloFrontier, io, None),
                BenchCmd::Trend(io) => (ReportKind::IndexTrend, io, None),
                BenchCmd::Tokens { io, group_by } => (ReportKind::TokenShare, io, Some(*group_by)),
            };
            let mut spec = ReportSpec::new(kind, "-");
            spec.input = Some(io.input.clone());
            spec.group_by = group_by;
            table(&cli, spec, io.out.as_deref(), None)
        }
        Command::Report(args) => {
            let kind: ReportKind = args.kind.parse()?;
            let env = Env::load(&cli, &[("splice_date", opt_string(&args.splice_date))])?;
            let registry = env.registry()?;
            let store = match kind {
                ReportKind::RegionDownloads
                | ReportKind::OrgDownloads
                | ReportKind::SizeDistribution
                | ReportKind::RamReference
                | ReportKind::RamTrajectory => Some(env.store()?),
                _ => None,
            };
            let spec = ReportSpec {
                kind,
                from: args.from,
                to: args.to,
                group_by: args.group_by,
                format: env.format,
                output: args.out.clone(),
                model: args.model.clone(),
                bucket: args.bucket,
                input: args.input.clone(),
                reference: args.reference.clone(),
                exclude_months: args.exclude_month.clone(),
            };
            let ctx = ReportContext {
                registry: &registry,
                store: store.as_ref(),
                pipeline: env.pipeline(args.reference_date),
            };
            let artifact = run_report(&spec, &ctx)?;
            if let Some(path) = &args.plot_data {
                fs::write(path, emit_plot_data(&artifact)).map_err(|e| io_err(path, e))?;
            }
            for w in &artifact.warnings {
                log::info!("{w}");
            }
            Ok(())
        }
    }
}

fn push_monthly(rows: &mut Vec<(String, NaiveDate, f64, Flags)>, m: &MonthlySeries) {
    for p in m.points() {
        rows.push((m.id.clone(), p.label, p.value, p.flags));
    }
}

/// Runs a report-backed subcommand and prints or writes its table.
fn table(cli: &Cli, spec: ReportSpec, out: Option<&Path>, reference_date: Option<NaiveDate>) -> Result<()> {
    let env = Env::load(cli, &[])?;
    let registry = env.registry()?;
    let store = match spec.kind {
        ReportKind::RamTrajectory => Some(env.store()?),
        _ => None,
    };
    let ctx = ReportContext {
        registry: &registry,
        store: store.as_ref(),
        pipeline: env.pipeline(reference_date),
    };
    let artifact = openadopt::report::build_report(&spec, &ctx)?;
    for w in &artifact.warnings {
        eprintln!("warning: {w}");
    }
    emit(out, &artifact.render(env.format))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.module());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
