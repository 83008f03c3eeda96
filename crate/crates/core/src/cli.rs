//! Command-line front end. Every command is deterministic given its seeds.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 data, 4 numeric.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::data::{generate_synthetic, load_dataset, save_dataset, Dataset, GeneratorConfig, Preset};
use crate::error::{Error, Result};
use crate::metrics::{mean_sd, EvalScores, DEFAULT_THRESHOLD};
use crate::models::{AttentionReport, ModelVariant};
use crate::pipeline::{fit_experiment, score, ExperimentConfig, ModelArtifact};
use crate::rnn_cells::CellKind;
use crate::time_embedding::TimeUnit;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "tarnn", version, about = "Time-aware attention RNNs for longitudinal patient records")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic cohort and its data card.
    Generate(GenerateArgs),
    /// Split a dataset into train and test files by patient.
    Split(SplitArgs),
    /// Train one model per seed.
    Train(TrainArgs),
    /// Score trained models on a dataset.
    Evaluate(EvaluateArgs),
    /// Compare model variants across scenarios on shared seeds.
    Ablate(AblateArgs),
    /// Export attention weights for each sample and the cohort.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub patients: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "years")]
    pub unit: TimeUnit,
    /// `separable` or `time-dependent`.
    #[arg(long, default_value = "separable")]
    pub preset: Preset,
    /// Overrides the preset's per-cell missing rate.
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the dataset path with a `.card.txt` suffix.
    #[arg(long)]
    pub card: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

/// Model and optimizer options. Unset flags fall back to the config file,
/// then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelOptions {
    /// `key=value` lines using the long flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input visits per window.
    #[arg(long)]
    pub m: Option<usize>,
    /// Visits ahead to predict; above 1 selects the decoder form.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub variant: Option<ModelVariant>,
    #[arg(long)]
    pub cell: Option<CellKind>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub et_max: Option<f64>,
    /// Comma-separated feature names to drop before training.
    #[arg(long)]
    pub exclude: Option<String>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// Comma-separated training seeds.
    #[arg(long)]
    pub seeds: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub options: ModelOptions,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model files, or directories holding `model_seed*.json`.
    #[arg(long, required = true, num_args = 1..)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out file; without it `data` is split by patient.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Comma-separated `m:n` pairs.
    #[arg(long, default_value = "3:1")]
    pub scenarios: String,
    #[arg(long, default_value = "ta-rnn,a-rnn,t-rnn")]
    pub variants: String,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub options: ModelOptions,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write PNG heatmaps.
    #[arg(long)]
    pub heatmap: bool,
    /// Explain at most this many samples.
    #[arg(long)]
    pub limit: Option<usize>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::UnsupportedVariant(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Data(_)
        | Error::Dimension { .. }
        | Error::Io { .. }
        | Error::Json { .. }
        | Error::UndefinedMetric(_) => EXIT_DATA,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::Explain(a) => explain(a),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = GeneratorConfig::preset(a.preset, a.patients, a.unit);
    if let Some(rate) = a.missing_rate {
        cfg.missing_rate = rate;
    }
    let (ds, card) = generate_synthetic(&cfg, a.seed)?;
    save_dataset(&ds, &a.out)?;
    let card_path = a.card.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".card.txt");
        PathBuf::from(p)
    });
    write(&card_path, card.to_text())?;
    println!(
        "wrote {} patients ({} converters) to {}",
        card.patients,
        card.converters,
        a.out.display()
    );
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let (train, test) = ds.split(a.test_fraction, a.seed)?;
    save_dataset(&train, &a.train_out)?;
    save_dataset(&test, &a.test_out)?;
    println!("train {} patients, test {} patients", train.len(), test.len());
    Ok(())
}

/// Effective settings after applying flags over the config file over
/// defaults, plus the seed list.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub experiment: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub entries: BTreeMap<String, String>,
}

/// Reads `key=value` lines; `#` starts a comment and `-`/`_` are
/// interchangeable in keys.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", i + 1)))?;
        map.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(map)
}

const OPTION_KEYS: &[&str] = &[
    "m", "n", "variant", "cell", "hidden", "d-model", "mlp-hidden", "dropout", "et-max", "exclude",
    "knn-k", "epochs", "batch-size", "lr", "delta", "l2", "seeds",
];

struct Resolver {
    file: BTreeMap<String, String>,
    entries: BTreeMap<String, String>,
}

impl Resolver {
    fn pick<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(text) => text
                    .parse()
                    .map_err(|e| Error::Config(format!("config key {key}: {e}")))?,
                None => default,
            },
        };
        self.entries.insert(key.to_string(), value.to_string());
        Ok(value)
    }
}

fn parse_list<T: FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| Error::Config(format!("{what} {s:?}: {e}"))))
        .collect()
}

pub fn resolve(opts: &ModelOptions) -> Result<Resolved> {
    let file = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_config_file(&text)?
        }
        None => BTreeMap::new(),
    };
    if let Some(unknown) = file.keys().find(|k| !OPTION_KEYS.contains(&k.as_str())) {
        return Err(Error::Config(format!("unknown config key {unknown:?}")));
    }
    let d = ExperimentConfig::default();
    let mut r = Resolver {
        file,
        entries: BTreeMap::new(),
    };
    let mut e = ExperimentConfig {
        m: r.pick("m", opts.m, d.m)?,
        n: r.pick("n", opts.n, d.n)?,
        variant: r.pick("variant", opts.variant, d.variant)?,
        cell: r.pick("cell", opts.cell, d.cell)?,
        hidden_size: r.pick("hidden", opts.hidden, d.hidden_size)?,
        d_model: r.pick("d-model", opts.d_model, d.d_model)?,
        mlp_hidden: r.pick("mlp-hidden", opts.mlp_hidden, d.mlp_hidden)?,
        dropout_rate: r.pick("dropout", opts.dropout, d.dropout_rate)?,
        et_max: None,
        exclude_features: Vec::new(),
        knn_k: r.pick("knn-k", opts.knn_k, d.knn_k)?,
        train: d.train.clone(),
    };
    // Zero stands for "largest training gap".
    let et_max = r.pick("et-max", opts.et_max, 0.0)?;
    e.et_max = (et_max > 0.0).then_some(et_max);
    let exclude = r.pick("exclude", opts.exclude.clone(), d.exclude_features.join(","))?;
    e.exclude_features = exclude
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    e.train.epochs = r.pick("epochs", opts.epochs, d.train.epochs)?;
    e.train.batch_size = r.pick("batch-size", opts.batch_size, d.train.batch_size)?;
    e.train.learning_rate = r.pick("lr", opts.lr, d.train.learning_rate)?;
    e.train.delta = r.pick("delta", opts.delta, d.train.delta)?;
    e.train.l2_lambda = r.pick("l2", opts.l2, d.train.l2_lambda)?;
    let seeds: Vec<u64> = parse_list(&r.pick("seeds", opts.seeds.clone(), "0".to_string())?, "seed")?;
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    if e.m < 2 || e.n < 1 {
        return Err(Error::Config(format!("need m >= 2 and n >= 1, got m={}, n={}", e.m, e.n)));
    }
    e.train.validate()?;
    Ok(Resolved {
        experiment: e,
        seeds,
        entries: r.entries,
    })
}

fn config_echo(entries: &BTreeMap<String, String>, extra: &[(&str, String)]) -> String {
    let mut all = entries.clone();
    for (k, v) in extra {
        all.insert(k.to_string(), v.clone());
    }
    all.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn train(a: TrainArgs) -> Result<()> {
    let resolved = resolve(&a.options)?;
    let ds = load_dataset(&a.data)?;
    create_dir(&a.out)?;
    write(
        &a.out.join("effective_config.txt"),
        config_echo(&resolved.entries, &[("data", a.data.display().to_string())]),
    )?;
    for &seed in &resolved.seeds {
        let mut cfg = resolved.experiment.clone();
        cfg.train.seed = seed;
        let run = fit_experiment(&ds, &cfg)?;
        run.artifact.save(a.out.join(format!("model_seed{seed}.json")))?;
        write(&a.out.join(format!("history_seed{seed}.csv")), run.history.to_csv())?;
        let last = run.history.epochs.last().map_or(f64::NAN, |e| e.loss);
        println!(
            "seed {seed}: {} on {} samples ({} patients skipped), final loss {last}",
            run.artifact.model.config.variant, run.samples, run.skipped
        );
    }
    Ok(())
}

/// Expands directories into their `model_seed*.json` files, ordered by seed.
fn model_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<(u64, PathBuf)> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter_map(|path| {
                    let name = path.file_name()?.to_str()?;
                    let seed = name.strip_prefix("model_seed")?.strip_suffix(".json")?.parse().ok()?;
                    Some((seed, path))
                })
                .collect();
            if found.is_empty() {
                return Err(Error::Data(format!("no model_seed*.json files in {}", p.display())));
            }
            found.sort();
            out.extend(found.into_iter().map(|(_, path)| path));
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn fmt_auc(auc: Option<f64>) -> String {
    auc.map_or_else(|| "undefined".to_string(), |a| a.to_string())
}

/// Per-seed rows followed by mean and standard deviation rows.
pub fn metrics_csv(rows: &[(u64, EvalScores)]) -> String {
    let mut out = String::from("seed,f2,sensitivity,auc,tp,fp,tn,fn\n");
    for (seed, s) in rows {
        let c = s.counts;
        out.push_str(&format!(
            "{seed},{},{},{},{},{},{},{}\n",
            s.f2,
            s.sensitivity,
            fmt_auc(s.auc),
            c.tp,
            c.fp,
            c.tn,
            c.fn_
        ));
    }
    let (f2, sens, auc) = summary(rows);
    out.push_str(&format!("mean,{},{},{},,,,\n", f2.0, sens.0, fmt_auc(auc.map(|a| a.0))));
    out.push_str(&format!("sd,{},{},{},,,,\n", f2.1, sens.1, fmt_auc(auc.map(|a| a.1))));
    out
}

type Summary = ((f64, f64), (f64, f64), Option<(f64, f64)>);

fn summary(rows: &[(u64, EvalScores)]) -> Summary {
    let f2: Vec<f64> = rows.iter().map(|r| r.1.f2).collect();
    let sens: Vec<f64> = rows.iter().map(|r| r.1.sensitivity).collect();
    let aucs: Option<Vec<f64>> = rows.iter().map(|r| r.1.auc).collect();
    (mean_sd(&f2), mean_sd(&sens), aucs.map(|a| mean_sd(&a)))
}

fn metrics_json(rows: &[(u64, EvalScores)], threshold: f64) -> Result<String> {
    let (f2, sens, auc) = summary(rows);
    let runs: Vec<serde_json::Value> = rows
        .iter()
        .map(|(seed, s)| serde_json::json!({ "seed": seed, "scores": s }))
        .collect();
    let doc = serde_json::json!({
        "threshold": threshold,
        "runs": runs,
        "mean": { "f2": f2.0, "sensitivity": sens.0, "auc": auc.map(|a| a.0) },
        "sd": { "f2": f2.1, "sensitivity": sens.1, "auc": auc.map(|a| a.1) },
    });
    serde_json::to_string_pretty(&doc).map_err(|source| Error::Json {
        context: "serializing metrics".into(),
        source,
    })
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let mut rows = Vec::new();
    for path in model_paths(&a.model)? {
        let art = ModelArtifact::load(&path)?;
        let scores = score(&art, &ds)?.scores(a.threshold)?;
        rows.push((art.train.seed, scores));
    }
    create_dir(&a.out)?;
    let csv = metrics_csv(&rows);
    write(&a.out.join("metrics.csv"), &csv)?;
    write(&a.out.join("metrics.json"), metrics_json(&rows, a.threshold)?)?;
    print!("{csv}");
    Ok(())
}

fn parse_scenarios(text: &str) -> Result<Vec<(usize, usize)>> {
    let list: Vec<(usize, usize)> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (m, n) = s
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("scenario {s:?} must look like m:n")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("scenario {s:?}: {e}")))
            };
            Ok((parse(m)?, parse(n)?))
        })
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(Error::Config("at least one scenario is required".into()));
    }
    Ok(list)
}

fn ablate(a: AblateArgs) -> Result<()> {
    let resolved = resolve(&a.options)?;
    let scenarios = parse_scenarios(&a.scenarios)?;
    let variants: Vec<ModelVariant> = parse_list(&a.variants, "variant")?;
    if variants.is_empty() {
        return Err(Error::Config("at least one variant is required".into()));
    }
    let ds = load_dataset(&a.data)?;
    let (train_ds, test_ds): (Dataset, Dataset) = match &a.test {
        Some(path) => (ds, load_dataset(path)?),
        None => ds.split(a.test_fraction, a.split_seed)?,
    };
    create_dir(&a.out)?;
    write(
        &a.out.join("effective_config.txt"),
        config_echo(
            &resolved.entries,
            &[
                ("data", a.data.display().to_string()),
                ("scenarios", a.scenarios.clone()),
                ("variants", a.variants.clone()),
                ("threshold", a.threshold.to_string()),
            ],
        ),
    )?;

    let mut detail = String::from("variant,scenario,seed,f2,sensitivity,auc\n");
    let mut table = String::from("variant");
    for (m, n) in &scenarios {
        table.push_str(&format!(",{m}->{n}"));
    }
    table.push('\n');
    let mut pretty = table.clone();
    for variant in &variants {
        table.push_str(variant.name());
        pretty.push_str(variant.name());
        for &(m, n) in &scenarios {
            let mut f2s = Vec::new();
            for &seed in &resolved.seeds {
                let mut cfg = resolved.experiment.clone();
                cfg.variant = *variant;
                cfg.m = m;
                cfg.n = n;
                cfg.train.seed = seed;
                let run = fit_experiment(&train_ds, &cfg)?;
                let s = score(&run.artifact, &test_ds)?.scores(a.threshold)?;
                detail.push_str(&format!(
                    "{},{m}->{n},{seed},{},{},{}\n",
                    variant.name(),
                    s.f2,
                    s.sensitivity,
                    fmt_auc(s.auc)
                ));
                f2s.push(s.f2);
            }
            let (mean, sd) = mean_sd(&f2s);
            table.push_str(&format!(",{mean}"));
            pretty.push_str(&format!(",{mean:.4} ± {sd:.4}"));
        }
        table.push('\n');
        pretty.push('\n');
    }
    write(&a.out.join("ablation.csv"), &table)?;
    write(&a.out.join("ablation_runs.csv"), &detail)?;
    print!("{pretty}");
    Ok(())
}

fn join_f64(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn explain(a: ExplainArgs) -> Result<()> {
    let art = ModelArtifact::load(&a.model)?;
    let ds = load_dataset(&a.data)?;
    let mut samples = art.prepare(&ds)?.samples;
    if let Some(limit) = a.limit {
        samples.truncate(limit);
    }
    if samples.is_empty() {
        return Err(Error::Data("no samples to explain".into()));
    }
    let reports: Vec<(String, AttentionReport)> = samples
        .iter()
        .map(|s| Ok((s.patient_id.clone(), art.model.explain(s.inputs())?)))
        .collect::<Result<_>>()?;
    create_dir(&a.out)?;

    let m = reports[0].1.alpha.len();
    let d = reports[0].1.feature_means.len();
    let dims: String = (1..=d).map(|k| format!(",dim_{k}")).collect();
    let visits: String = (1..=m).map(|k| format!(",visit_{k}")).collect();

    let mut alpha = format!("patient_id{visits}\n");
    let mut beta = format!("patient_id,visit{dims}\n");
    let mut combined = format!("patient_id,visit{dims}\n");
    let mut feature = format!("patient_id{dims}\n");
    for (id, r) in &reports {
        alpha.push_str(&format!("{id},{}\n", join_f64(&r.alpha)));
        for (j, (b, c)) in r.beta.iter().zip(&r.combined).enumerate() {
            beta.push_str(&format!("{id},{},{}\n", j + 1, join_f64(b)));
            combined.push_str(&format!("{id},{},{}\n", j + 1, join_f64(c)));
        }
        feature.push_str(&format!("{id},{}\n", join_f64(&r.feature_means)));
    }
    write(&a.out.join("alpha.csv"), alpha)?;
    write(&a.out.join("beta.csv"), beta)?;
    write(&a.out.join("combined.csv"), combined)?;
    write(&a.out.join("feature_means.csv"), feature)?;

    let count = reports.len() as f64;
    let alpha_mean: Vec<f64> = (0..m)
        .map(|j| reports.iter().map(|(_, r)| r.alpha[j]).sum::<f64>() / count)
        .collect();
    let feature_mean: Vec<f64> = (0..d)
        .map(|f| reports.iter().map(|(_, r)| r.feature_means[f]).sum::<f64>() / count)
        .collect();
    let combined_mean: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            (0..d)
                .map(|f| reports.iter().map(|(_, r)| r.combined[j][f]).sum::<f64>() / count)
                .collect()
        })
        .collect();

    let mut out = String::from("visit,alpha\n");
    for (j, v) in alpha_mean.iter().enumerate() {
        out.push_str(&format!("{},{v}\n", j + 1));
    }
    write(&a.out.join("cohort_alpha.csv"), out)?;
    let mut out = String::from("dim,beta\n");
    for (f, v) in feature_mean.iter().enumerate() {
        out.push_str(&format!("dim_{},{v}\n", f + 1));
    }
    write(&a.out.join("cohort_feature_means.csv"), out)?;
    let mut out = format!("visit{dims}\n");
    for (j, row) in combined_mean.iter().enumerate() {
        out.push_str(&format!("{},{}\n", j + 1, join_f64(row)));
    }
    write(&a.out.join("cohort_combined.csv"), out)?;

    if a.heatmap {
        write_heatmap(&a.out.join("cohort_combined.png"), &combined_mean)?;
        let alphas: Vec<Vec<f64>> = reports.iter().map(|(_, r)| r.alpha.clone()).collect();
        write_heatmap(&a.out.join("alpha.png"), &alphas)?;
    }
    println!("explained {} samples into {}", reports.len(), a.out.display());
    Ok(())
}

const CELL_PX: usize = 16;

/// Grayscale heatmap, one `CELL_PX` square per entry; the largest entry is
/// white.
pub fn write_heatmap(path: &Path, values: &[Vec<f64>]) -> Result<()> {
    let rows = values.len();
    let cols = values.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::Data("cannot draw an empty heatmap".into()));
    }
    let max = values.iter().flatten().copied().fold(0.0, f64::max);
    let (w, h) = (cols * CELL_PX, rows * CELL_PX);
    let mut pixels = vec![0u8; w * h];
    for (y, line) in pixels.chunks_mut(w).enumerate() {
        let row = &values[y / CELL_PX];
        for (x, px) in line.iter_mut().enumerate() {
            let v = if max > 0.0 { row[x / CELL_PX] / max } else { 0.0 };
            *px = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Data(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)
}
