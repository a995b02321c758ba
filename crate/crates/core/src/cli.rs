//! The `daal` command-line tool: `gen`, `run`, `report`, `dump-features`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};
use serde::{Deserialize, Serialize};

use crate::data::{generate_rotated_gaussians, read_csv, write_csv, DomainDataset, RotatedGaussians};
use crate::error::{DaalError, Result};
use crate::experiment::{
    aggregate, read_jsonl, run_matrix, run_name, write_aggregate_csv, write_jsonl, Budget,
    DatasetSpec, ExperimentConfig, ModelSpec, RoundRecord, RoundSeeds,
};
use crate::forest::ForestConfig;
use crate::nn::{apply_mask, load_checkpoint, save_checkpoint, TrainConfig};
use crate::seed;
use crate::selection::Strategy;
use crate::weak::WeakFeaturePlan;

#[derive(Debug, Parser)]
#[command(name = "daal", version, about = "Domain adversarial active learning experiments")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-domain dataset.
    Gen(GenArgs),
    /// Run an active-learning experiment matrix.
    Run(RunArgs),
    /// Summarise round records into accuracy tables.
    Report(ReportArgs),
    /// Export penultimate features of a checkpoint.
    DumpFeatures(DumpArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    RotGauss,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Output CSV; metadata goes next to it as `<stem>.meta.json`.
    #[arg(long, default_value = "dataset.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Replace the configured strategy list (repeatable).
    #[arg(long)]
    pub strategy: Vec<Strategy>,
    #[arg(long, conflicts_with = "weak_loss")]
    pub no_weak_loss: bool,
    #[arg(long)]
    pub weak_loss: bool,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Replace the configured target domains (repeatable).
    #[arg(long)]
    pub target: Vec<usize>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub records: Vec<PathBuf>,
    /// Accuracy table as CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the table as markdown (percent).
    #[arg(long)]
    pub markdown: Option<PathBuf>,
    /// Per-round distance diagnostics as CSV.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset CSV.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated sample ids; all samples when omitted.
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<u64>,
    /// Keep only these feature coordinates (comma-separated).
    #[arg(long, value_delimiter = ',', conflicts_with = "plan")]
    pub mask: Vec<usize>,
    /// Weak-feature plan whose subset for `--domain` is used as the mask.
    #[arg(long, requires = "domain")]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub domain: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Experiment file. Unset sections take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub forest: ForestConfig,
    /// Written to the resolved-config echo; ignored on input.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub seeds: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSection {
    RotGauss {
        /// Derived from the root seed when unset.
        seed: Option<u64>,
        angles: Option<Vec<f64>>,
        classes: Option<usize>,
        per_class: Option<usize>,
        noise_sigma: Option<f64>,
        arc: Option<f64>,
        radius_step: Option<f64>,
    },
    Csv {
        path: PathBuf,
    },
    IdxRotated {
        images: PathBuf,
        labels: PathBuf,
        angles: Vec<f64>,
        width: usize,
        height: usize,
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    /// All domains when unset.
    pub targets: Option<Vec<usize>>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    pub rounds: usize,
    pub budget: Option<usize>,
    pub budget_fraction: Option<f64>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    /// On for the daal family and off for baselines when unset.
    pub weak_loss: Option<bool>,
}

fn default_val_fraction() -> f64 {
    0.2
}

fn default_reps() -> usize {
    3
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::Daal]
}

/// Seed used by the synthetic generator for root seed `root`.
pub fn dataset_seed(root: u64) -> u64 {
    seed::derive(root, "dataset", &[])
}

fn hex(s: u64) -> String {
    format!("{s:#018x}")
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DaalError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| DaalError::Config(format!("{}: {e}", path.display())))?;
        cfg.seeds.clear();
        let dir = path.parent().unwrap_or(Path::new(""));
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                let joined = dir.join(&*p);
                *p = std::path::absolute(&joined).unwrap_or(joined);
            }
        };
        match &mut cfg.dataset {
            DatasetSection::Csv { path } => anchor(path),
            DatasetSection::IdxRotated { images, labels, .. } => {
                anchor(images);
                anchor(labels);
            }
            DatasetSection::RotGauss { .. } => {}
        }
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, args: &RunArgs) {
        if let Some(s) = args.seed {
            self.seed = s;
        }
        if !args.strategy.is_empty() {
            self.protocol.strategies = args.strategy.clone();
        }
        if args.no_weak_loss {
            self.protocol.weak_loss = Some(false);
        }
        if args.weak_loss {
            self.protocol.weak_loss = Some(true);
        }
        if let Some(r) = args.reps {
            self.protocol.reps = r;
        }
        if let Some(r) = args.rounds {
            self.protocol.rounds = r;
        }
        if !args.target.is_empty() {
            self.protocol.targets = Some(args.target.clone());
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        match &self.dataset {
            DatasetSection::RotGauss { seed, angles, classes, per_class, noise_sigma, arc, radius_step } => {
                let d = RotatedGaussians::default();
                DatasetSpec::RotGauss(RotatedGaussians {
                    seed: seed.unwrap_or_else(|| dataset_seed(self.seed)),
                    angles: angles.clone().unwrap_or(d.angles),
                    classes: classes.unwrap_or(d.classes),
                    per_class: per_class.unwrap_or(d.per_class),
                    noise_sigma: noise_sigma.unwrap_or(d.noise_sigma),
                    arc: arc.unwrap_or(d.arc),
                    radius_step: radius_step.unwrap_or(d.radius_step),
                })
            }
            DatasetSection::Csv { path } => DatasetSpec::Csv { path: path.clone() },
            DatasetSection::IdxRotated { images, labels, angles, width, height, limit } => {
                DatasetSpec::IdxRotated {
                    images: images.clone(),
                    labels: labels.clone(),
                    angles: angles.clone(),
                    width: *width,
                    height: *height,
                    limit: *limit,
                }
            }
        }
    }

    fn budget(&self) -> Result<Budget> {
        match (self.protocol.budget, self.protocol.budget_fraction) {
            (Some(n), None) => Ok(Budget::Count(n)),
            (None, Some(f)) => Ok(Budget::Fraction(f)),
            _ => Err(DaalError::Config(
                "protocol needs exactly one of budget and budget_fraction".into(),
            )),
        }
    }

    /// One experiment config per (strategy, target).
    pub fn experiments(&self, num_domains: usize) -> Result<Vec<ExperimentConfig>> {
        let targets = self.protocol.targets.clone().unwrap_or_else(|| (0..num_domains).collect());
        if targets.is_empty() || self.protocol.strategies.is_empty() {
            return Err(DaalError::Config("no targets or strategies configured".into()));
        }
        let budget = self.budget()?;
        let mut out = Vec::new();
        for &strategy in &self.protocol.strategies {
            for &target in &targets {
                let cfg = ExperimentConfig {
                    name: None,
                    target_domain: target,
                    val_fraction: self.protocol.val_fraction,
                    strategy,
                    weak_loss: self.protocol.weak_loss.unwrap_or(strategy.is_daal()),
                    rounds: self.protocol.rounds,
                    budget,
                    train: self.train.clone(),
                    forest: self.forest.clone(),
                    model: self.model.clone(),
                    repetitions: self.protocol.reps,
                    seed: self.seed,
                };
                if target >= num_domains {
                    return Err(DaalError::Config(format!(
                        "target {target} out of range ({num_domains} domains)"
                    )));
                }
                cfg.validate()?;
                out.push(cfg);
            }
        }
        Ok(out)
    }

    /// Fully explicit copy with the derived sub-seeds listed.
    pub fn resolved(&self, num_domains: usize) -> Self {
        let mut r = self.clone();
        if let DatasetSpec::RotGauss(g) = self.dataset_spec() {
            r.dataset = DatasetSection::RotGauss {
                seed: None,
                angles: Some(g.angles),
                classes: Some(g.classes),
                per_class: Some(g.per_class),
                noise_sigma: Some(g.noise_sigma),
                arc: Some(g.arc),
                radius_step: Some(g.radius_step),
            };
            r.seeds.insert("dataset".into(), hex(g.seed));
        }
        r.protocol.targets = Some(self.protocol.targets.clone().unwrap_or_else(|| (0..num_domains).collect()));
        r.seeds.insert("split".into(), hex(seed::derive(self.seed, "split", &[])));
        for &t in r.protocol.targets.as_deref().unwrap_or_default() {
            for rep in 0..self.protocol.reps {
                let s = RoundSeeds::new(self.seed, t, rep, 1);
                r.seeds.insert(format!("init/t{t}/r{rep}"), hex(s.init));
                r.seeds.insert(format!("initial-batch/t{t}/r{rep}"), hex(seed::derive(self.seed, "initial", &[t as u64, rep as u64])));
            }
        }
        r
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| DaalError::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| DaalError::io(path, e))
}

fn count_summary(ds: &DomainDataset) -> String {
    let mut s = String::new();
    for (e, row) in ds.counts().iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        let name = ds.domain_names.get(e).map(String::as_str).unwrap_or("");
        let _ = writeln!(s, "domain {e} ({name}): {}", cells.join(" "));
    }
    let _ = writeln!(
        s,
        "{} domains, {} classes, {} samples, dim {}",
        ds.num_domains,
        ds.num_classes,
        ds.len(),
        ds.input_dim
    );
    s
}

#[derive(Serialize)]
struct GenMeta<'a> {
    preset: &'a str,
    root_seed: u64,
    generator: &'a RotatedGaussians,
    domain_names: &'a [String],
    num_classes: usize,
    input_dim: usize,
    counts: Vec<Vec<usize>>,
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let Preset::RotGauss = args.preset;
    let d = RotatedGaussians::default();
    let p = RotatedGaussians {
        seed: dataset_seed(args.seed),
        per_class: args.per_class.unwrap_or(d.per_class),
        classes: args.classes.unwrap_or(d.classes),
        noise_sigma: args.noise_sigma.unwrap_or(d.noise_sigma),
        ..d
    };
    let ds = generate_rotated_gaussians(&p)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| DaalError::io(dir, e))?;
        }
    }
    write_csv(&ds, &args.out)?;
    let meta = GenMeta {
        preset: "rot-gauss",
        root_seed: args.seed,
        generator: &p,
        domain_names: &ds.domain_names,
        num_classes: ds.num_classes,
        input_dim: ds.input_dim,
        counts: ds.counts(),
    };
    let meta_path = args.out.with_extension("meta.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| DaalError::Serde(e.to_string()))?;
    write_file(&meta_path, &(text + "\n"))?;
    print!("{}", count_summary(&ds));
    Ok(())
}

#[derive(Serialize)]
struct Timing<'a> {
    run: &'a str,
    round: usize,
    wall_time_secs: f64,
}

fn file_stem(cfg: &ExperimentConfig, rep: usize) -> String {
    format!("{}_t{}_r{}", cfg.label(), cfg.target_domain, rep)
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut fc = FileConfig::load(&args.config)?;
    fc.apply_overrides(args);
    let spec = fc.dataset_spec();
    let ds = spec.load()?;
    let cfgs = fc.experiments(ds.num_domains)?;
    let out = &args.out;
    std::fs::create_dir_all(out).map_err(|e| DaalError::io(out, e))?;
    let resolved = toml::to_string(&fc.resolved(ds.num_domains)).map_err(|e| DaalError::Serde(e.to_string()))?;
    write_file(&out.join("resolved_config.toml"), &resolved)?;
    if matches!(spec, DatasetSpec::RotGauss(_)) {
        write_csv(&ds, &out.join("dataset.csv"))?;
    }
    info!("{} runs over {} samples", cfgs.iter().map(|c| c.repetitions).sum::<usize>(), ds.len());

    let result = run_matrix(&cfgs, &ds)?;
    let records = result.records();
    write_jsonl(&records, &out.join("records.jsonl"))?;
    let traces: Vec<_> = result.runs.iter().flat_map(|r| r.traces.iter().cloned()).collect();
    write_jsonl(&traces, &out.join("traces.jsonl"))?;
    let timings: Vec<Timing> = records
        .iter()
        .map(|r| Timing { run: &r.run, round: r.round, wall_time_secs: r.wall_time_secs })
        .collect();
    write_jsonl(&timings, &out.join("timings.jsonl"))?;
    write_aggregate_csv(&result.table, &out.join("aggregate.csv"))?;

    let ckpt_dir = out.join("checkpoints");
    let plan_dir = out.join("plans");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| DaalError::io(&ckpt_dir, e))?;
    let mut runs = result.runs.iter();
    for cfg in &cfgs {
        for rep in 0..cfg.repetitions {
            let run = runs.next().expect("one result per run");
            debug_assert_eq!(run.run, run_name(cfg, rep));
            let stem = file_stem(cfg, rep);
            save_checkpoint(&run.final_model, &ckpt_dir.join(format!("{stem}.json")))?;
            if let Some(plan) = &run.final_plan {
                let text = serde_json::to_string(plan).map_err(|e| DaalError::Serde(e.to_string()))?;
                write_file(&plan_dir.join(format!("{stem}.json")), &text)?;
            }
        }
    }
    let report = render_table(&records, false);
    print!("{report}");
    Ok(())
}

/// Accuracy table: one row per (strategy, round), one column per target
/// plus the mean over targets.
pub fn render_table(records: &[RoundRecord], markdown: bool) -> String {
    let rows = aggregate(records);
    let targets: Vec<usize> = {
        let mut t: Vec<usize> = rows.iter().map(|r| r.target).collect();
        t.sort_unstable();
        t.dedup();
        t
    };
    let mut cells: BTreeMap<(String, usize), (f64, BTreeMap<usize, f64>)> = BTreeMap::new();
    for r in &rows {
        let e = cells.entry((r.strategy.clone(), r.round)).or_insert((r.labeled_frac, BTreeMap::new()));
        e.1.insert(r.target, r.acc_mean);
    }
    let fmt = |v: f64| if markdown { format!("{:.2}", 100.0 * v) } else { v.to_string() };
    let mut header = vec!["strategy".to_string(), "round".into(), "labeled_frac".into()];
    header.extend(targets.iter().map(|t| format!("t{t}")));
    header.push("Avg".into());
    let mut lines = vec![header.clone()];
    for ((strategy, round), (frac, accs)) in &cells {
        let mut line = vec![strategy.clone(), round.to_string(), if markdown { format!("{frac:.3}") } else { frac.to_string() }];
        for t in &targets {
            line.push(accs.get(t).map(|&a| fmt(a)).unwrap_or_default());
        }
        let avg = accs.values().sum::<f64>() / accs.len() as f64;
        line.push(fmt(avg));
        lines.push(line);
    }
    let mut s = String::new();
    if markdown {
        for (i, l) in lines.iter().enumerate() {
            let _ = writeln!(s, "| {} |", l.join(" | "));
            if i == 0 {
                let _ = writeln!(s, "|{}", "---|".repeat(l.len()));
            }
        }
    } else {
        for l in &lines {
            let _ = writeln!(s, "{}", l.join(","));
        }
    }
    s
}

/// Mean distance diagnostics per (strategy, round) over targets and reps.
pub fn render_diagnostics(records: &[RoundRecord]) -> String {
    let mut acc: BTreeMap<(String, usize), [(f64, usize); 4]> = BTreeMap::new();
    for r in records {
        let e = acc.entry((r.label.clone(), r.round)).or_insert([(0.0, 0); 4]);
        let d = &r.diagnostics;
        for (slot, v) in e.iter_mut().zip([d.d_intra_same, d.d_intra_cross, d.d_inter_same, d.d_inter_cross]) {
            if let Some(v) = v {
                slot.0 += v;
                slot.1 += 1;
            }
        }
    }
    let mut s = String::from("strategy,round,d_intra_same,d_intra_cross,d_inter_same,d_inter_cross\n");
    for ((strategy, round), v) in acc {
        let cols: Vec<String> = v
            .iter()
            .map(|(sum, n)| if *n > 0 { (sum / *n as f64).to_string() } else { String::new() })
            .collect();
        let _ = writeln!(s, "{strategy},{round},{}", cols.join(","));
    }
    s
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut records: Vec<RoundRecord> = Vec::new();
    for p in &args.records {
        records.extend(read_jsonl::<RoundRecord>(p)?);
    }
    if records.is_empty() {
        return Err(DaalError::Consistency("no round records in the given files".into()));
    }
    let csv = render_table(&records, false);
    write_file(&args.out, &csv)?;
    if let Some(md) = &args.markdown {
        write_file(md, &render_table(&records, true))?;
    }
    if let Some(diag) = &args.diagnostics {
        write_file(diag, &render_diagnostics(&records))?;
    }
    print!("{csv}");
    Ok(())
}

pub fn cmd_dump_features(args: &DumpArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let ds = read_csv(&args.dataset)?;
    if ds.input_dim != model.input_dim() {
        return Err(DaalError::Consistency(format!(
            "checkpoint expects {} inputs, dataset has {}",
            model.input_dim(),
            ds.input_dim
        )));
    }
    let d = model.feature_dim();
    let mask: Option<Vec<usize>> = match (&args.plan, args.domain) {
        (Some(p), Some(e)) => {
            let text = std::fs::read_to_string(p).map_err(|err| DaalError::io(p, err))?;
            let plan: WeakFeaturePlan =
                serde_json::from_str(&text).map_err(|err| DaalError::format(p, err.to_string()))?;
            Some(
                plan.subset(e)
                    .ok_or_else(|| DaalError::Consistency(format!("plan has no subset for domain {e}")))?
                    .to_vec(),
            )
        }
        _ if !args.mask.is_empty() => Some(args.mask.clone()),
        _ => None,
    };
    let ids: Vec<u64> = if args.ids.is_empty() { (0..ds.len() as u64).collect() } else { args.ids.clone() };
    let mut s = String::from("id,domain,label");
    for j in 0..d {
        let _ = write!(s, ",f{j}");
    }
    s.push('\n');
    for id in ids {
        let sample = ds.sample(id)?;
        let mut f = model.forward(&sample.x)?.features;
        if let Some(m) = &mask {
            f = apply_mask(&f, m)?;
        }
        let _ = write!(s, "{id},{},{}", sample.e, sample.y);
        for v in f {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    write_file(&args.out, &s)
}

pub fn exit_code(err: &DaalError) -> u8 {
    match err {
        DaalError::Config(_) => 2,
        _ => 3,
    }
}

/// Parse arguments, run the command and map the outcome to an exit code.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    let res = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Report(a) => cmd_report(a),
        Command::DumpFeatures(a) => cmd_dump_features(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
