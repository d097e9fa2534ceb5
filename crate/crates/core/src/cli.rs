//! The `cdt` command line: one subcommand per pipeline stage, each writing
//! its artifacts and a `manifest.json` into the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::coclustering::{run_coclustering, write_assignment_csv, write_matrix_csv};
use crate::config::{Config, CONFIG_ENV};
use crate::data::{load_bundle, split_target, synth_generate, write_bundle, DatasetBundle};
use crate::error::{Error, Result};
use crate::eval::{fit_model, run_experiment, MetricsReport, ModelKind, TrainedModel};
use crate::features::FeatureIndex;
use crate::model::{write_checkpoint, Checkpoint, DeepSection};

#[derive(Debug, Parser)]
#[command(name = "cdt", version, about = "Cross-domain translation-based recommender pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    /// Config file (TOML). Defaults to the file named by CDT_CONFIG.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    /// Override a config value, e.g. `--set train.q=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Bundle descriptor; replaces `[data] bundle`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Base seed; replaces `synth.seed` for `synth`, `experiment.seed` otherwise.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Cdt,
    DeepCdt,
    FmAblation,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Cdt => ModelKind::Cdt,
            ModelArg::DeepCdt => ModelKind::DeepCdt,
            ModelArg::FmAblation => ModelKind::FmAblation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum ReportFormat {
    #[default]
    Tsv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-cluster bundle.
    Synth(StageArgs),
    /// Cluster users and solve the cross-domain cluster similarity on the
    /// training split.
    Cluster(StageArgs),
    /// Train one model on the training split and write a checkpoint.
    Train {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
    },
    /// Run the repeated-split protocol and write JSON and TSV reports.
    Evaluate {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Summarize one or more JSON reports.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: ReportFormat,
        /// Also write the summary and a manifest here.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

/// Record of one stage invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_path: Option<PathBuf>,
    /// Effective configuration after overrides, as TOML.
    pub config: String,
    pub seeds: BTreeMap<String, u64>,
    /// Artifact name to path.
    pub artifacts: BTreeMap<String, PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

struct Stage {
    name: &'static str,
    config: Config,
    config_path: Option<PathBuf>,
    out: PathBuf,
    artifacts: BTreeMap<String, PathBuf>,
    started: u64,
}

impl Stage {
    fn open(name: &'static str, args: &StageArgs) -> Result<Self> {
        let (mut config, config_path) = Config::resolve(args.config.as_deref())?;
        config.apply_overrides(&args.overrides)?;
        if let Some(b) = &args.bundle {
            config.data.bundle = Some(b.clone());
        }
        if let Some(seed) = args.seed {
            if name == "synth" {
                config.synth.seed = seed;
            } else {
                config.experiment.seed = seed;
            }
        }
        config.validate()?;
        fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
        let out = std::path::absolute(&args.out).map_err(|e| Error::io(&args.out, e))?;
        Ok(Stage {
            name,
            config,
            config_path,
            out,
            artifacts: BTreeMap::new(),
            started: now(),
        })
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn write_text(&mut self, key: &str, file: &str, text: &str) -> Result<()> {
        let path = self.path(file);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.artifacts.insert(key.to_string(), path);
        Ok(())
    }

    fn record(&mut self, key: &str, path: PathBuf) {
        self.artifacts.insert(key.to_string(), path);
    }

    fn bundle(&self) -> Result<DatasetBundle> {
        match &self.config.data.bundle {
            Some(path) => load_bundle(path),
            None => Ok(synth_generate(&self.config.synth, self.config.synth.seed)?.bundle),
        }
    }

    fn finish(mut self) -> Result<PathBuf> {
        let c = &self.config;
        let seeds = BTreeMap::from([
            ("synth".to_string(), c.synth.seed),
            ("split".to_string(), c.split.seed),
            ("cocluster".to_string(), c.cocluster.seed),
            ("train".to_string(), c.train.seed),
            ("deep".to_string(), c.deep.seed),
            ("experiment".to_string(), c.experiment.seed),
        ]);
        let path = self.path("manifest.json");
        self.artifacts.insert("manifest".into(), path.clone());
        let manifest = RunManifest {
            command: self.name.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_path: self.config_path.clone(),
            config: c.to_toml_string()?,
            seeds,
            artifacts: self.artifacts.clone(),
            started_unix: self.started,
            finished_unix: now(),
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn synth(args: &StageArgs) -> Result<PathBuf> {
    let mut stage = Stage::open("synth", args)?;
    let generated = synth_generate(&stage.config.synth, stage.config.synth.seed)?;
    let descriptor = write_bundle(&generated.bundle, &stage.out)?;
    stage.record("bundle", descriptor);
    let truth = serde_json::to_string(&generated.truth)? + "\n";
    stage.write_text("truth", "truth.json", &truth)?;
    stage.finish()
}

/// Training split of the first run and, for models that use sources, the
/// co-clustering outputs on it.
fn first_run(stage: &Stage) -> Result<(DatasetBundle, crate::data::TargetSplit)> {
    let bundle = stage.config.experiment.select_domains(&stage.bundle()?)?;
    let settings = stage.config.settings().reseeded(stage.config.experiment.seed);
    let split = split_target(&bundle.target, &settings.split)?;
    Ok((bundle.with_target(split.train.clone())?, split))
}

fn cluster(args: &StageArgs) -> Result<PathBuf> {
    let mut stage = Stage::open("cluster", args)?;
    let (working, _) = first_run(&stage)?;
    let settings = stage.config.settings().reseeded(stage.config.experiment.seed);
    let outputs = run_coclustering(&working, &settings.cocluster)?;
    let path = stage.path("clusters_target.csv");
    write_assignment_csv(&path, &outputs.target)?;
    stage.record("clusters_target", path);
    let mut summary = Vec::new();
    for (p, s) in outputs.sources.iter().enumerate() {
        for (key, file) in [("clusters", "clusters"), ("y", "y"), ("q", "q")] {
            let name = format!("{file}_source_{p}.csv");
            let path = stage.path(&name);
            match key {
                "clusters" => write_assignment_csv(&path, &s.assignment)?,
                "y" => write_matrix_csv(&path, &s.similarity.y)?,
                _ => write_matrix_csv(&path, &s.weights.to_dense())?,
            }
            stage.record(&format!("{key}_source_{p}"), path);
        }
        summary.push(serde_json::json!({
            "source": working.sources[p].domain_id(),
            "iterations": s.similarity.iterations,
            "final_objective": s.similarity.objective_trace.last(),
            "nonneg_violation": s.similarity.residuals.nonneg_violation,
            "orthogonality_residual": s.similarity.residuals.orthogonality_residual,
        }));
    }
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    stage.write_text("cocluster_summary", "cocluster.json", &text)?;
    stage.finish()
}

fn train_stage(args: &StageArgs, model: Option<ModelArg>) -> Result<PathBuf> {
    let mut stage = Stage::open("train", args)?;
    if let Some(m) = model {
        stage.config.experiment.model = m.into();
    }
    let kind = stage.config.experiment.model;
    let (working, split) = first_run(&stage)?;
    let settings = stage.config.settings().reseeded(stage.config.experiment.seed);
    let weights = if kind == ModelKind::FmAblation || working.sources.is_empty() {
        Vec::new()
    } else {
        run_coclustering(&working, &settings.cocluster)?.weights()
    };
    let (trained, stats) = fit_model(kind, &working, &weights, &split.train, &settings)?;
    let ckpt = match trained {
        TrainedModel::Cdt(m) => {
            let layout = if kind == ModelKind::FmAblation {
                working.target_only()
            } else {
                working
            };
            Checkpoint {
                index: FeatureIndex::build(&layout),
                interaction: m.interaction,
                params: m.params,
                deep: None,
            }
        }
        TrainedModel::Deep(m) => Checkpoint {
            index: m.index,
            interaction: m.interaction,
            params: m.params,
            deep: Some(DeepSection {
                mlp: m.mlp,
                add_interaction: m.add_interaction,
            }),
        },
    };
    let path = stage.path("model.ckpt");
    write_checkpoint(&path, &ckpt)?;
    stage.record("checkpoint", path);
    let text = serde_json::to_string_pretty(&stats)? + "\n";
    stage.write_text("train_stats", "train_stats.json", &text)?;
    stage.finish()
}

fn evaluate(args: &StageArgs, model: Option<ModelArg>, runs: Option<usize>) -> Result<PathBuf> {
    let mut stage = Stage::open("evaluate", args)?;
    if let Some(m) = model {
        stage.config.experiment.model = m.into();
    }
    if let Some(r) = runs {
        stage.config.experiment.runs = r;
    }
    let report = run_experiment(&stage.bundle()?, &stage.config.experiment, &stage.config.settings())?;
    stage.write_text("report_json", "report.json", &report.to_json()?)?;
    stage.write_text("report_tsv", "report.tsv", &report.to_tsv())?;
    stage.finish()
}

fn summarize(reports: &[PathBuf], format: ReportFormat, out: Option<&Path>) -> Result<String> {
    let mut loaded = Vec::new();
    for path in reports {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        loaded.push((path, MetricsReport::from_json(&text)?));
    }
    let text = match format {
        ReportFormat::Tsv => {
            let mut s = String::from("report\tmodel\tn\truns\trecall\tndcg\n");
            for (path, r) in &loaded {
                s += &format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\n",
                    path.display(),
                    r.model,
                    r.n,
                    r.runs.len(),
                    r.avg_recall,
                    r.avg_ndcg
                );
            }
            s
        }
        ReportFormat::Json => {
            let rows: Vec<_> = loaded
                .iter()
                .map(|(path, r)| {
                    serde_json::json!({
                        "report": path, "model": r.model, "n": r.n, "runs": r.runs.len(),
                        "recall": r.avg_recall, "ndcg": r.avg_ndcg,
                    })
                })
                .collect();
            serde_json::to_string_pretty(&rows)? + "\n"
        }
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let file = dir.join(match format {
            ReportFormat::Tsv => "summary.tsv",
            ReportFormat::Json => "summary.json",
        });
        fs::write(&file, &text).map_err(|e| Error::io(&file, e))?;
        let now = now();
        let manifest = RunManifest {
            command: "report".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_path: None,
            config: String::new(),
            seeds: BTreeMap::new(),
            artifacts: BTreeMap::from([
                ("summary".to_string(), file),
                ("manifest".to_string(), dir.join("manifest.json")),
            ]),
            started_unix: now,
            finished_unix: now,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(text)
}

/// Runs a parsed command. Returns what should go to standard output.
pub fn run(cli: Cli) -> Result<String> {
    let manifest = match &cli.command {
        Command::Synth(a) => synth(a)?,
        Command::Cluster(a) => cluster(a)?,
        Command::Train { stage, model } => train_stage(stage, *model)?,
        Command::Evaluate { stage, model, runs } => evaluate(stage, *model, *runs)?,
        Command::Report { reports, format, out } => return summarize(reports, *format, out.as_deref()),
    };
    Ok(format!("wrote {}\n", manifest.display()))
}

/// Help text footer naming the config environment variable.
pub fn env_hint() -> String {
    format!("The config file defaults to ${CONFIG_ENV} when --config is not given.")
}
