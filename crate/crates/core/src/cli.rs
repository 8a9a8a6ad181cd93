//! The `recomp` command line over a workspace directory:
//!
//! ```text
//! <workspace>/
//!   datasets/<dataset_id>/<sequence>_<label>.tsv
//!   history.jsonl
//!   prov/<record_id>.prov.json
//!   cache/<aa>/<sha256>
//!   config            transparency and cache-mode defaults (TOML)
//! ```
//!
//! Data goes to stdout as TSV (aligned with `--human`), diagnostics to
//! stderr. One invocation at a time per workspace, enforced by a lock file.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::engine::{self, BatchReport, ChangeEvent, ReactOptions};
use crate::history::{CacheMode, HistoryDb};
use crate::pipeline::{self, RunRequest, Transparency};
use crate::store::{DiffResult, KeySet, Registry, CLINVAR, OMIM};
use crate::svi::{self, GrowthRates, Universe};

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

#[derive(Debug, Parser)]
#[command(name = "recomp", version, about = "Selective re-computation driven by provenance")]
pub struct Cli {
    /// Workspace directory.
    #[arg(long, global = true, default_value = "./recomp-ws")]
    pub workspace: PathBuf,
    /// Provenance granularity for new runs: white or black.
    #[arg(long, global = true)]
    pub transparency: Option<Transparency>,
    /// Cache policy for new runs: full or outputs-only.
    #[arg(long, global = true)]
    pub cache_mode: Option<CacheMode>,
    /// Aligned tables instead of TSV.
    #[arg(long, global = true)]
    pub human: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a snapshot file as the next version of a dataset.
    Register {
        dataset: String,
        label: String,
        file: PathBuf,
    },
    /// Run the variant interpretation pipeline for every patient in a cohort.
    Run {
        cohort: PathBuf,
        /// OMIM version (label, sequence or omim@label); defaults to the latest.
        #[arg(long)]
        omim: Option<String>,
        /// ClinVar version; defaults to the latest.
        #[arg(long)]
        clinvar: Option<String>,
    },
    /// Diff two versions of a dataset.
    Diff { dataset: String, from: String, to: String },
    /// Records affected by moving to new dataset versions.
    Scope {
        /// DATASET VERSION pairs.
        #[arg(num_args = 2.., required = true, value_names = ["DATASET", "VERSION"])]
        changes: Vec<String>,
    },
    /// Re-computation plans for the affected records.
    Plan {
        #[arg(num_args = 2.., required = true, value_names = ["DATASET", "VERSION"])]
        changes: Vec<String>,
    },
    /// Execute the plans and append the new records.
    Rerun {
        #[arg(num_args = 2.., required = true, value_names = ["DATASET", "VERSION"])]
        changes: Vec<String>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Trend of relevant genes, variants and conclusive patients over a
    /// synthetic evolution of OMIM and ClinVar.
    Report {
        cohort: PathBuf,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Variants outside the cohort added to the synthetic ClinVar.
        #[arg(long, default_value_t = 50)]
        extra_variants: usize,
        /// Per-epoch removal/revision rate; 0 keeps the evolution additive.
        #[arg(long, default_value_t = 0.0)]
        removal: f64,
    },
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
struct Config {
    transparency: Transparency,
    cache_mode: CacheMode,
}

struct Workspace {
    config: Config,
    registry: Registry,
    db: HistoryDb,
    _lock: Lock,
}

struct Lock(PathBuf);

impl Lock {
    fn acquire(root: &Path) -> CliResult<Lock> {
        let path = root.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Lock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(format!(
                "workspace {} is in use (remove {} if no other recomp is running)",
                root.display(),
                path.display()
            )
            .into()),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

impl Workspace {
    fn open(cli: &Cli) -> CliResult<Workspace> {
        let root = cli.workspace.clone();
        fs::create_dir_all(&root)?;
        let lock = Lock::acquire(&root)?;
        let config_path = root.join("config");
        let config = if config_path.exists() {
            toml::from_str(&fs::read_to_string(&config_path)?)
                .map_err(|e| format!("{}: {e}", config_path.display()))?
        } else {
            let config = Config::default();
            fs::write(&config_path, toml::to_string(&config)?)?;
            config
        };
        let registry = Registry::open(root.join("datasets"))?;
        let mut db = HistoryDb::open(&root)?;
        db.set_cache_mode(cli.cache_mode.unwrap_or(config.cache_mode));
        Ok(Workspace {
            config,
            registry,
            db,
            _lock: lock,
        })
    }

    fn transparency(&self, cli: &Cli) -> Transparency {
        cli.transparency.unwrap_or(self.config.transparency)
    }

    fn version(&self, dataset: &str, spec: Option<&str>) -> CliResult<crate::store::VersionTag> {
        match spec {
            Some(s) => Ok(self.registry.resolve(dataset, s)?),
            None => self
                .registry
                .latest(dataset)
                .ok_or_else(|| format!("no versions of {dataset} registered").into()),
        }
    }
}

/// Parses and runs one invocation, returning the exit status.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return e.exit_code();
        }
    };
    match dispatch(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<i32> {
    let mut table = Table::new(cli.human);
    let code = match &cli.command {
        Command::Register { dataset, label, file } => {
            let mut ws = Workspace::open(cli)?;
            let text = fs::read_to_string(file).map_err(|e| format!("{}: {e}", file.display()))?;
            let tag = ws.registry.register_tsv(dataset, Some(label), &text)?;
            writeln!(out, "{}", tag.describe())?;
            0
        }
        Command::Run { cohort, omim, clinvar } => {
            let mut ws = Workspace::open(cli)?;
            let cohort = read_cohort(cohort)?;
            let om = ws.version(OMIM, omim.as_deref())?;
            let cv = ws.version(CLINVAR, clinvar.as_deref())?;
            let spec = svi::svi_pipeline();
            let transparency = ws.transparency(cli);
            table.row(["record_id", "patient", "red", "amber", "green"]);
            for p in &cohort {
                let req = RunRequest {
                    inputs: p.inputs(),
                    deps: [(OMIM.to_string(), om.clone()), (CLINVAR.to_string(), cv.clone())].into(),
                    transparency,
                    subject: Some(p.id.clone()),
                    supersedes: None,
                };
                let outcome = pipeline::run(&spec, &req, &ws.registry, &mut ws.db)?;
                let (red, amber, green) = svi::class_counts(&svi::classes_of(&outcome.outputs));
                table.row([
                    outcome.record.record_id.clone(),
                    p.id.clone(),
                    red.to_string(),
                    amber.to_string(),
                    green.to_string(),
                ]);
            }
            table.write(out)?;
            0
        }
        Command::Diff { dataset, from, to } => {
            let ws = Workspace::open(cli)?;
            let a = ws.registry.resolve(dataset, from)?;
            let b = ws.registry.resolve(dataset, to)?;
            write_diff(out, &ws.registry.diff(&a, &b)?)?;
            0
        }
        Command::Scope { changes } => {
            let ws = Workspace::open(cli)?;
            let events = events(&ws, changes)?;
            let mut entries = engine::scope_union(&ws.db, &ws.registry, &events)?;
            entries.retain(|e| !superseded(&ws.db).contains(e.record.record_id.as_str()));
            table.row(["record_id", "subject", "start_step", "matched_keys"]);
            for e in entries {
                table.row([
                    e.record.record_id.clone(),
                    e.record.subject.clone().unwrap_or_else(|| "-".into()),
                    engine::find_starting_component(&e).map_or("-".into(), |s| s.to_string()),
                    join_keys(&e.matched_keys),
                ]);
            }
            table.write(out)?;
            0
        }
        Command::Plan { changes } => react(cli, changes, true, &mut table, out, err)?,
        Command::Rerun { changes, dry_run } => react(cli, changes, *dry_run, &mut table, out, err)?,
        Command::Report {
            cohort,
            epochs,
            seed,
            extra_variants,
            removal,
        } => {
            let cohort = read_cohort(cohort)?;
            let rates = GrowthRates {
                removal: *removal,
                ..GrowthRates::default()
            };
            let universe = Universe::from_cohort(*seed, &cohort, *extra_variants);
            let evolution = svi::synth_evolution(*seed, *epochs, &rates, &universe)?;
            let rows = svi::trend_report(&cohort, &evolution)?;
            for line in svi::trend_tsv(&rows).lines() {
                table.row(line.split('\t'));
            }
            table.write(out)?;
            0
        }
    };
    Ok(code)
}

fn read_cohort(path: &Path) -> CliResult<Vec<svi::Patient>> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(svi::parse_cohort(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn events(ws: &Workspace, changes: &[String]) -> CliResult<Vec<ChangeEvent>> {
    if !changes.len().is_multiple_of(2) {
        return Err("changes come in DATASET VERSION pairs".into());
    }
    changes
        .chunks(2)
        .map(|pair| Ok(ChangeEvent::dependency_to(&ws.registry.resolve(&pair[0], &pair[1])?)))
        .collect()
}

fn superseded(db: &HistoryDb) -> BTreeSet<&str> {
    db.records().iter().filter_map(|r| r.supersedes.as_deref()).collect()
}

fn react(
    cli: &Cli,
    changes: &[String],
    dry_run: bool,
    table: &mut Table,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CliResult<i32> {
    let mut ws = Workspace::open(cli)?;
    let events = events(&ws, changes)?;
    let options = ReactOptions {
        dry_run,
        skip_superseded: true,
    };
    let report: BatchReport = engine::react(&mut ws.db, &ws.registry, &svi::svi_pipeline(), &events, &options)?;
    table.row(
        BatchReport::HEADER
            .split('\t')
            .chain(["subject", "fallback", "blocking", "new_record", "classes"]),
    );
    for r in &report.rows {
        let classes = match &r.new_record_id {
            Some(id) => {
                let record = ws.db.record(id).expect("appended by react");
                let (red, amber, green) = svi::class_counts(&svi::classes_of(&pipeline::load_outputs(&ws.db, record)?));
                format!("{red}/{amber}/{green}")
            }
            None => "-".into(),
        };
        let blocking: Vec<&str> = r.blocking_inputs.iter().map(|h| h.as_str()).collect();
        table.row(r.tsv_prefix().split('\t').map(str::to_string).chain([
            r.subject.clone().unwrap_or_else(|| "-".into()),
            if r.degraded { "total".into() } else { "-".into() },
            if blocking.is_empty() { "-".into() } else { blocking.join(",") },
            r.new_record_id.clone().unwrap_or_else(|| "-".into()),
            classes,
        ]));
    }
    table.write(out)?;
    let mut failed = false;
    for r in report.failures() {
        failed = true;
        writeln!(err, "{}: {}", r.record_id, r.error.as_deref().unwrap_or_default())?;
    }
    Ok(i32::from(failed))
}

fn join_keys(keys: &KeySet) -> String {
    if keys.is_empty() {
        return "-".into();
    }
    keys.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(",")
}

fn write_diff(out: &mut dyn Write, d: &DiffResult) -> std::io::Result<()> {
    let tag = |t: &Option<crate::store::VersionTag>| t.as_ref().map_or("-".to_string(), |t| t.describe());
    writeln!(out, "dataset\t{}", d.dataset_id)?;
    writeln!(out, "from\t{}", tag(&d.from))?;
    writeln!(out, "to\t{}", tag(&d.to))?;
    for (name, keys) in [("added", &d.added), ("removed", &d.removed), ("changed", &d.changed)] {
        writeln!(out, "{name}\t{}\t{}", keys.len(), join_keys(keys))?;
    }
    Ok(())
}

/// Rows written as TSV, or as space-aligned columns for humans.
struct Table {
    human: bool,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(human: bool) -> Self {
        Table { human, rows: Vec::new() }
    }

    fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.rows.push(cells.into_iter().map(Into::into).collect());
    }

    fn write(&mut self, out: &mut dyn Write) -> std::io::Result<()> {
        let rows = std::mem::take(&mut self.rows);
        if !self.human {
            for r in rows {
                writeln!(out, "{}", r.join("\t"))?;
            }
            return Ok(());
        }
        let mut widths = Vec::new();
        for r in &rows {
            for (i, c) in r.iter().enumerate() {
                if widths.len() <= i {
                    widths.push(0);
                }
                widths[i] = widths[i].max(c.chars().count());
            }
        }
        for r in rows {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{c:<w$}", w = widths[i]))
                .collect();
            writeln!(out, "{}", line.join("  ").trim_end())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(ws: &Path, args: &[&str]) -> (i32, String, String) {
        let mut argv = vec!["recomp", "--workspace", ws.to_str().unwrap()];
        argv.extend_from_slice(args);
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_cli(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn register_twice_fails_and_releases_lock() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("cv.tsv");
        fs::write(&file, "1\tBRCA1\tbenign\n").unwrap();
        let ws = dir.path().join("ws");
        let (code, out, _) = cli(&ws, &["register", "clinvar", "2014", file.to_str().unwrap()]);
        assert_eq!((code, out.as_str()), (0, "clinvar@1 (2014)\n"));
        let (code, _, err) = cli(&ws, &["register", "clinvar", "2014", file.to_str().unwrap()]);
        assert_ne!(code, 0);
        assert!(err.contains("2014"), "{err}");
        assert!(!ws.join(".lock").exists());
        assert!(ws.join("config").exists());
    }

    #[test]
    fn held_lock_refuses() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(".lock"), "1").unwrap();
        let (code, _, err) = cli(dir.path(), &["diff", "clinvar", "1", "1"]);
        assert_eq!(code, 1);
        assert!(err.contains("in use"));
    }

    #[test]
    fn odd_change_list_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (code, _, err) = cli(dir.path(), &["scope", "clinvar", "2015", "omim"]);
        assert_ne!(code, 0);
        assert!(err.contains("pairs"));
    }

    #[test]
    fn human_table_aligns() {
        let mut t = Table::new(true);
        t.row(["a", "bbb"]);
        t.row(["cccc", "d"]);
        let mut out = Vec::new();
        t.write(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a     bbb\ncccc  d\n");
    }
}
