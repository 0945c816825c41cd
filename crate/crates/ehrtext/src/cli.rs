//! Command-line entry points. One invocation runs one subcommand; every run
//! writes a resolved-config snapshot and a run manifest into its output
//! directory so results can be traced back to inputs, flags, and seeds.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::data::{
    generate_synthetic, ingest, make_split_plan, write_dataset, PairedDataset, SplitCfg,
    SplitPlan, SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::{run_comparison, take_fraction, ComparisonCfg, Report};
use crate::pipeline::{
    load_checkpoint, predict, run_contrastive_pretrain, run_finetune, run_masked_pretrain,
    save_checkpoint, RunConfig, RunLog, Stage, TextProfile,
};
use crate::tabular::{Cell, RawTable};

/// Initializes logging from the EHRTEXT_LOG environment variable
/// (`info` or `debug`; silent when unset).
pub fn init_logging() {
    let env = env_logger::Env::new().filter("EHRTEXT_LOG");
    env_logger::Builder::from_env(env).try_init().ok();
}

/// Parses and runs one invocation, returning the process exit code:
/// 0 on success, 1 on usage errors, 2 on runtime errors.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            e.print().ok();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            2
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ehrtext",
    version,
    about = "Contrastive tabular-text pretraining and transfer to binary prediction"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic paired dataset plus a leakage-safe split plan
    GenData(GenDataArgs),
    /// Pretrain the tabular encoder by masked-feature reconstruction
    PretrainMasked(StageArgs),
    /// Align the pretrained tabular encoder with notes contrastively
    PretrainCl(StageArgs),
    /// Fine-tune a classification head on one task
    Finetune(FinetuneArgs),
    /// Score rows of a CSV with a fine-tuned checkpoint
    Predict(PredictArgs),
    /// Run the full masked-init vs cl-init comparison and save a report
    Evaluate(EvaluateArgs),
    /// Render a saved evaluation report as a text table and CSV
    Report(ReportArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory, created if absent
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing output artifacts
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding records.csv, notes.jsonl, and split-plan.json
    #[arg(long)]
    data: PathBuf,
    /// Column joining records to notes
    #[arg(long, default_value = "id")]
    join_key: String,
    /// Comma-separated label columns
    #[arg(long, value_delimiter = ',', default_value = "task_a,task_b")]
    labels: Vec<String>,
}

#[derive(Args)]
struct KnobArgs {
    /// JSON file of run-config fields; CLI flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    mask_rate: Option<f64>,
    /// Held-out pairs for retrieval diagnostics during alignment
    #[arg(long)]
    holdout: Option<usize>,
    /// Text encoder size: standard or compact
    #[arg(long)]
    text_profile: Option<String>,
    #[arg(long)]
    deterministic: Option<bool>,
    /// Shard contrastive batches across N threads
    #[arg(long)]
    data_parallel: Option<usize>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Number of record-note pairs
    #[arg(long, default_value_t = 5000)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Subsets in the split plan (default: scaled layout)
    #[arg(long)]
    subsets: Option<usize>,
    /// Train+val rows per subset
    #[arg(long)]
    train_val: Option<usize>,
    /// Test rows per subset
    #[arg(long)]
    test: Option<usize>,
    /// Fraction of train+val held for validation
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    knobs: KnobArgs,
    /// Checkpoint to initialize from (required for pretrain-cl)
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    knobs: KnobArgs,
    /// Pretrained checkpoint to initialize from
    #[arg(long, required = true)]
    init: PathBuf,
    /// Label column to fine-tune on
    #[arg(long, required = true)]
    task: String,
    /// Which split-plan subset to train on
    #[arg(long, default_value_t = 0)]
    subset: usize,
    /// Fraction of the subset's training rows to use
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Fine-tuned checkpoint
    #[arg(long, required = true)]
    init: PathBuf,
    /// CSV of rows to score
    #[arg(long, required = true)]
    csv: PathBuf,
    /// Column holding row identifiers
    #[arg(long, default_value = "id")]
    join_key: String,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    data: DataArgs,
    /// JSON file with per-stage sections: masked, contrastive, finetune
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training fractions to sweep (repeatable)
    #[arg(long = "fraction")]
    fractions: Vec<f64>,
    #[arg(long)]
    text_profile: Option<String>,
    #[arg(long)]
    deterministic: Option<bool>,
    #[arg(long)]
    data_parallel: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding report.json from an evaluate run
    #[arg(long)]
    dir: PathBuf,
    /// Restrict the output to one task
    #[arg(long)]
    task: Option<String>,
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData(a) => cmd_gen_data(a),
        Cmd::PretrainMasked(a) => cmd_pretrain_masked(a),
        Cmd::PretrainCl(a) => cmd_pretrain_cl(a),
        Cmd::Finetune(a) => cmd_finetune(a),
        Cmd::Predict(a) => cmd_predict(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Report(a) => cmd_report(a),
    }
}

fn parse_text_profile(s: &str) -> Result<TextProfile> {
    match s {
        "standard" => Ok(TextProfile::Standard),
        "compact" => Ok(TextProfile::Compact),
        other => Err(Error::Config(format!(
            "unknown text profile {:?}; expected standard or compact",
            other
        ))),
    }
}

/// Overlays JSON config fields onto `cfg`, rejecting unknown keys.
fn apply_config_value(cfg: &mut RunConfig, value: &serde_json::Value) -> Result<()> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Config("config file must hold a JSON object".into()))?;
    let num = |v: &serde_json::Value, key: &str| -> Result<f64> {
        v.as_f64()
            .ok_or_else(|| Error::Config(format!("config key {:?} must be a number", key)))
    };
    for (key, v) in obj {
        match key.as_str() {
            "stage" => {
                let want: Stage = serde_json::from_value(v.clone())?;
                if want != cfg.stage {
                    return Err(Error::Config(format!(
                        "config is for stage {} but this subcommand runs {}",
                        want, cfg.stage
                    )));
                }
            }
            "lr" => cfg.lr = num(v, key)?,
            "weight_decay" => cfg.weight_decay = num(v, key)?,
            "batch_size" => cfg.batch_size = num(v, key)? as usize,
            "epochs" => cfg.epochs = num(v, key)? as usize,
            "tau" => cfg.tau = num(v, key)?,
            "mask_rate" => cfg.mask_rate = num(v, key)?,
            "holdout" => cfg.holdout = num(v, key)? as usize,
            "seed" => cfg.seed = num(v, key)? as u64,
            "data_parallel" => cfg.data_parallel = num(v, key)? as usize,
            "text_profile" => {
                let s = v.as_str().ok_or_else(|| {
                    Error::Config("config key \"text_profile\" must be a string".into())
                })?;
                cfg.text_profile = parse_text_profile(s)?;
            }
            "deterministic" => {
                cfg.deterministic = v.as_bool().ok_or_else(|| {
                    Error::Config("config key \"deterministic\" must be a boolean".into())
                })?;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown config key {:?}; valid keys: stage, lr, weight_decay, \
                     batch_size, epochs, tau, mask_rate, holdout, seed, text_profile, \
                     deterministic, data_parallel",
                    other
                )));
            }
        }
    }
    Ok(())
}

/// Built-in defaults, then the config file, then CLI flags.
fn resolve_config(stage: Stage, knobs: &KnobArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::for_stage(stage, 0);
    if let Some(path) = &knobs.config {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        apply_config_value(&mut cfg, &value)?;
    }
    if let Some(v) = knobs.seed {
        cfg.seed = v;
    }
    if let Some(v) = knobs.lr {
        cfg.lr = v;
    }
    if let Some(v) = knobs.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = knobs.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = knobs.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = knobs.tau {
        cfg.tau = v;
    }
    if let Some(v) = knobs.mask_rate {
        cfg.mask_rate = v;
    }
    if let Some(v) = knobs.holdout {
        cfg.holdout = v;
    }
    if let Some(s) = &knobs.text_profile {
        cfg.text_profile = parse_text_profile(s)?;
    }
    if let Some(v) = knobs.deterministic {
        cfg.deterministic = v;
    }
    if let Some(v) = knobs.data_parallel {
        cfg.data_parallel = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Refuses to clobber primary artifacts unless --force was given.
fn guard_outputs(paths: &[&Path], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            return Err(Error::Config(format!(
                "refusing to overwrite {}; pass --force",
                p.display()
            )));
        }
    }
    Ok(())
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    seed: u64,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let hash_all = |paths: &[&Path]| -> Result<BTreeMap<String, String>> {
        let mut map = BTreeMap::new();
        for p in paths {
            map.insert(p.display().to_string(), sha256_file(p)?);
        }
        Ok(map)
    };
    let manifest = serde_json::json!({
        "command": command,
        "package_version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "inputs": hash_all(inputs)?,
        "outputs": hash_all(outputs)?,
    });
    fs::write(out_dir.join("run-manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn write_resolved_config(out_dir: &Path, json: &str) -> Result<()> {
    fs::write(out_dir.join("resolved-config.json"), json)?;
    Ok(())
}

struct LoadedData {
    ds: PairedDataset,
    plan: SplitPlan,
    paths: Vec<PathBuf>,
}

fn load_data(args: &DataArgs, fallback_seed: u64) -> Result<LoadedData> {
    let csv = args.data.join("records.csv");
    let notes = args.data.join("notes.jsonl");
    let (ds, report) = ingest(&csv, &notes, &args.join_key, &args.labels)?;
    log::info!("loaded {} pairs ({})", ds.len(), report);
    let plan_path = args.data.join("split-plan.json");
    let mut paths = vec![csv, notes];
    let plan = if plan_path.exists() {
        let plan = SplitPlan::from_json(&fs::read_to_string(&plan_path)?)?;
        paths.push(plan_path);
        plan
    } else {
        log::info!("no split-plan.json; building the scaled default");
        make_split_plan(ds.len(), &SplitCfg::scaled(ds.len(), fallback_seed)?)?
    };
    plan.validate(ds.len())?;
    Ok(LoadedData { ds, plan, paths })
}

fn input_refs<'a>(loaded: &'a LoadedData, extra: &[Option<&'a Path>]) -> Vec<&'a Path> {
    let mut refs: Vec<&Path> = loaded.paths.iter().map(PathBuf::as_path).collect();
    for e in extra.iter().flatten() {
        refs.push(e);
    }
    refs
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    ensure_out_dir(&a.out.out)?;
    let csv = a.out.out.join("records.csv");
    let notes = a.out.out.join("notes.jsonl");
    let plan_path = a.out.out.join("split-plan.json");
    guard_outputs(&[&csv, &notes, &plan_path], a.out.force)?;

    let synth = SynthConfig::standard(a.pairs, a.seed);
    let ds = generate_synthetic(&synth)?;
    write_dataset(&ds, &csv, &notes, "id")?;

    let mut split = SplitCfg::scaled(a.pairs, a.seed)?;
    if let Some(v) = a.subsets {
        split.n_subsets = v;
    }
    if let Some(v) = a.train_val {
        split.train_val = v;
    }
    if let Some(v) = a.test {
        split.test = v;
    }
    if let Some(v) = a.val_fraction {
        split.val_fraction = v;
    }
    let plan = make_split_plan(a.pairs, &split)?;
    fs::write(&plan_path, plan.to_json()?)?;

    let resolved = serde_json::json!({ "pairs": a.pairs, "seed": a.seed, "synth": synth, "split": split });
    write_resolved_config(&a.out.out, &serde_json::to_string_pretty(&resolved)?)?;
    write_manifest(&a.out.out, "gen-data", a.seed, &[], &[&csv, &notes, &plan_path])?;
    println!(
        "wrote {} pairs to {} ({} subsets, pool {})",
        ds.len(),
        a.out.out.display(),
        plan.subsets.len(),
        plan.pretrain_pool.len()
    );
    Ok(())
}

fn cmd_pretrain_masked(a: StageArgs) -> Result<()> {
    let cfg = resolve_config(Stage::Masked, &a.knobs)?;
    ensure_out_dir(&a.out.out)?;
    let ckpt_path = a.out.out.join("checkpoint-masked.bin");
    guard_outputs(&[&ckpt_path], a.out.force)?;
    let loaded = load_data(&a.data, cfg.seed)?;

    let mut log = RunLog::to_file(&a.out.out.join("log.jsonl"))?;
    let ckpt = run_masked_pretrain(&cfg, &loaded.ds, &loaded.plan.pretrain_pool, &mut log)?;
    let digest = save_checkpoint(&ckpt, &ckpt_path)?;
    write_resolved_config(&a.out.out, &cfg.to_json()?)?;
    let config_ref = a.knobs.config.as_deref();
    write_manifest(
        &a.out.out,
        "pretrain-masked",
        cfg.seed,
        &input_refs(&loaded, &[config_ref]),
        &[&ckpt_path],
    )?;
    println!("masked checkpoint {} ({})", ckpt_path.display(), digest);
    Ok(())
}

fn cmd_pretrain_cl(a: StageArgs) -> Result<()> {
    let init_path = a.init.as_deref().ok_or_else(|| {
        Error::Config("pretrain-cl needs --init pointing at a masked checkpoint".into())
    })?;
    let cfg = resolve_config(Stage::Contrastive, &a.knobs)?;
    ensure_out_dir(&a.out.out)?;
    let ckpt_path = a.out.out.join("checkpoint-contrastive.bin");
    guard_outputs(&[&ckpt_path], a.out.force)?;
    let loaded = load_data(&a.data, cfg.seed)?;
    let init = load_checkpoint(init_path)?;

    let mut log = RunLog::to_file(&a.out.out.join("log.jsonl"))?;
    let ckpt =
        run_contrastive_pretrain(&cfg, &loaded.ds, &loaded.plan.pretrain_pool, &init, &mut log)?;
    let digest = save_checkpoint(&ckpt, &ckpt_path)?;
    write_resolved_config(&a.out.out, &cfg.to_json()?)?;
    let config_ref = a.knobs.config.as_deref();
    write_manifest(
        &a.out.out,
        "pretrain-cl",
        cfg.seed,
        &input_refs(&loaded, &[config_ref, Some(init_path)]),
        &[&ckpt_path],
    )?;
    println!("contrastive checkpoint {} ({})", ckpt_path.display(), digest);
    Ok(())
}

fn cmd_finetune(a: FinetuneArgs) -> Result<()> {
    if !(a.fraction > 0.0 && a.fraction <= 1.0) {
        return Err(Error::Config(format!(
            "--fraction must be in (0,1], got {}",
            a.fraction
        )));
    }
    let cfg = resolve_config(Stage::Finetune, &a.knobs)?;
    ensure_out_dir(&a.out.out)?;
    let ckpt_path = a.out.out.join("checkpoint-finetune.bin");
    guard_outputs(&[&ckpt_path], a.out.force)?;
    let loaded = load_data(&a.data, cfg.seed)?;
    let init = load_checkpoint(&a.init)?;
    let subset = loaded.plan.subsets.get(a.subset).ok_or_else(|| {
        Error::Config(format!(
            "--subset {} out of range; the split plan has {}",
            a.subset,
            loaded.plan.subsets.len()
        ))
    })?;
    let train = take_fraction(&subset.train, a.fraction);

    let mut log = RunLog::to_file(&a.out.out.join("log.jsonl"))?;
    let out = run_finetune(&cfg, &loaded.ds, &train, &subset.val, &init, &a.task, &mut log)?;
    let digest = save_checkpoint(&out.checkpoint, &ckpt_path)?;
    write_resolved_config(&a.out.out, &cfg.to_json()?)?;
    let config_ref = a.knobs.config.as_deref();
    write_manifest(
        &a.out.out,
        "finetune",
        cfg.seed,
        &input_refs(&loaded, &[config_ref, Some(a.init.as_path())]),
        &[&ckpt_path],
    )?;
    println!(
        "fine-tuned {} on {} rows; best epoch {} val AUROC {:.4}; {} ({})",
        a.task,
        train.len(),
        out.best_epoch,
        out.best_val_auc,
        ckpt_path.display(),
        digest
    );
    Ok(())
}

/// Reads a CSV into ids plus a feature table, keeping every non-key column.
fn read_table(path: &Path, join_key: &str) -> Result<(Vec<String>, RawTable)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {}", path.display(), e)))?;
    let headers = reader.headers().map_err(|e| Error::Data(e.to_string()))?.clone();
    let key_pos = headers
        .iter()
        .position(|h| h == join_key)
        .ok_or_else(|| {
            Error::Data(format!(
                "{} has no {:?} column (found: {})",
                path.display(),
                join_key,
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })?;
    let columns: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != key_pos)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(e.to_string()))?;
        ids.push(record.get(key_pos).unwrap_or("").to_string());
        rows.push(
            record
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != key_pos)
                .map(|(_, v)| {
                    if v.is_empty() {
                        Cell::Missing
                    } else {
                        Cell::Value(v.to_string())
                    }
                })
                .collect(),
        );
    }
    Ok((ids, RawTable { columns, rows }))
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    ensure_out_dir(&a.out.out)?;
    let out_path = a.out.out.join("predictions.csv");
    guard_outputs(&[&out_path], a.out.force)?;
    let ckpt = load_checkpoint(&a.init)?;
    let (ids, table) = read_table(&a.csv, &a.join_key)?;
    let probs = predict(&ckpt, &table)?;

    let mut w = csv::Writer::from_path(&out_path).map_err(|e| Error::Data(e.to_string()))?;
    w.write_record([a.join_key.as_str(), "probability"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for (id, p) in ids.iter().zip(&probs) {
        w.write_record([id.as_str(), &format!("{:.9}", p)])
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;

    let task = ckpt.task.clone().unwrap_or_default();
    let resolved = serde_json::json!({ "checkpoint": a.init.display().to_string(), "task": task });
    write_resolved_config(&a.out.out, &serde_json::to_string_pretty(&resolved)?)?;
    write_manifest(
        &a.out.out,
        "predict",
        ckpt.config.seed,
        &[a.init.as_path(), a.csv.as_path()],
        &[&out_path],
    )?;
    println!("scored {} rows into {}", probs.len(), out_path.display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    ensure_out_dir(&a.out.out)?;
    let report_json = a.out.out.join("report.json");
    let report_csv = a.out.out.join("report.csv");
    let report_txt = a.out.out.join("report.txt");
    guard_outputs(&[&report_json, &report_csv, &report_txt], a.out.force)?;

    let seed = a.seed.unwrap_or(0);
    let mut cfg = ComparisonCfg::standard(seed);
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config("config file must hold a JSON object".into()))?;
        for (key, v) in obj {
            match key.as_str() {
                "masked" => apply_config_value(&mut cfg.masked, v)?,
                "contrastive" => apply_config_value(&mut cfg.contrastive, v)?,
                "finetune" => apply_config_value(&mut cfg.finetune, v)?,
                "fractions" => cfg.fractions = serde_json::from_value(v.clone())?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown config key {:?}; valid keys: masked, contrastive, \
                         finetune, fractions",
                        other
                    )));
                }
            }
        }
    }
    if !a.fractions.is_empty() {
        cfg.fractions = a.fractions.clone();
    }
    for stage_cfg in [&mut cfg.masked, &mut cfg.contrastive, &mut cfg.finetune] {
        if let Some(v) = a.seed {
            stage_cfg.seed = v;
        }
        if let Some(s) = &a.text_profile {
            stage_cfg.text_profile = parse_text_profile(s)?;
        }
        if let Some(v) = a.deterministic {
            stage_cfg.deterministic = v;
        }
        if let Some(v) = a.data_parallel {
            stage_cfg.data_parallel = v;
        }
    }

    let loaded = load_data(&a.data, seed)?;
    let mut log = RunLog::to_file(&a.out.out.join("log.jsonl"))?;
    let report = run_comparison(&cfg, &loaded.ds, &loaded.plan, &mut log)?;

    fs::write(&report_json, serde_json::to_string_pretty(&report)?)?;
    fs::write(&report_csv, report.to_csv()?)?;
    fs::write(&report_txt, report.to_text())?;

    let resolved = serde_json::json!({
        "seed": seed,
        "fractions": cfg.fractions,
        "masked": serde_json::from_str::<serde_json::Value>(&cfg.masked.to_json()?)?,
        "contrastive": serde_json::from_str::<serde_json::Value>(&cfg.contrastive.to_json()?)?,
        "finetune": serde_json::from_str::<serde_json::Value>(&cfg.finetune.to_json()?)?,
    });
    write_resolved_config(&a.out.out, &serde_json::to_string_pretty(&resolved)?)?;
    let config_ref = a.config.as_deref();
    write_manifest(
        &a.out.out,
        "evaluate",
        seed,
        &input_refs(&loaded, &[config_ref]),
        &[&report_json, &report_csv, &report_txt],
    )?;
    println!("{}", report.to_text());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let path = a.dir.join("report.json");
    let mut report: Report = serde_json::from_str(&fs::read_to_string(&path)?)?;
    if let Some(task) = &a.task {
        report.rows.retain(|r| &r.task == task);
        report.tests.retain(|t| &t.task == task);
        if report.rows.is_empty() {
            return Err(Error::InvalidInput(format!(
                "report has no rows for task {:?}",
                task
            )));
        }
    }
    let view = a.dir.join("report-view.csv");
    fs::write(&view, report.to_csv()?)?;
    println!("{}", report.to_text());
    println!("csv written to {}", view.display());
    Ok(())
}
