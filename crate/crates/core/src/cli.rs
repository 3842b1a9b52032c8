//! Command-line interface. Exit status 0 on success, 1 for invalid input
//! (bad flags, configs or data, leakage, failed gradient checks) and 2 for
//! runtime failures such as unreadable files.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::{
    build_augmented, build_graphs, export_pool_assignments, generate_synthetic, gradient_suite,
    metrics, run_cv, stratified_folds, PipelineConfig, SyntheticSpec,
};
use crate::io;
use crate::train::predict;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "brainhg",
    version,
    about = "Heterogeneous brain-graph fusion of fMRI and DTI connectivity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    augment_ratio: Option<f64>,
    #[arg(long)]
    window_width: Option<usize>,
    #[arg(long)]
    window_stride: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(p) => io::load_config(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(r) = self.augment_ratio {
            config.augment.augmentation_ratio = r;
        }
        if let Some(w) = self.window_width {
            config.augment.window_width = w;
        }
        if let Some(s) = self.window_stride {
            config.augment.window_stride = s;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build heterogeneous graphs from a dataset manifest.
    Build {
        #[arg(long)]
        manifest: PathBuf,
        /// Output graphs file (JSON).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Build dynamic-FC augmented copies of prebuilt graphs.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validate the model and write checkpoints and a fold report.
    Train {
        /// Prebuilt graphs; built from --manifest when omitted.
        #[arg(long)]
        graphs: Option<PathBuf>,
        /// Raw dataset, used to build graphs and augmented copies.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Prebuilt augmented copies.
        #[arg(long)]
        augmented: Option<PathBuf>,
        /// Number of folds, or a JSON file listing train/val subject ids.
        #[arg(long)]
        folds: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score graphs with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graphs: PathBuf,
        /// Metrics file (JSON); printed only when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic cohort as a manifest plus CSV tables.
    Synth {
        /// Synthetic cohort settings (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export first-stage pooling assignments.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse `argv` (program name first), run the command and return the exit
/// status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Build {
            manifest,
            out,
            common,
        } => {
            let config = common.resolve()?;
            let subjects = io::load_dataset(&manifest)?;
            let graphs = build_graphs(&subjects, &config.graph)?;
            io::save_graphs(&out, &graphs)?;
            println!("built {} graphs -> {}", graphs.len(), out.display());
        }
        Command::Augment {
            manifest,
            graphs,
            out,
            common,
        } => {
            let config = common.resolve()?;
            let subjects = io::load_dataset(&manifest)?;
            let graphs = io::load_graphs(&graphs)?;
            let ordered = align(&subjects, &graphs)?;
            let aug = build_augmented(&subjects, &ordered, &config.graph, &config.augment)?;
            io::save_graphs(&out, &aug)?;
            println!("augmented {} graphs -> {}", aug.len(), out.display());
        }
        Command::Train {
            graphs,
            manifest,
            augmented,
            folds,
            out,
            common,
        } => train(graphs, manifest, augmented, folds, &out, &common)?,
        Command::Eval {
            checkpoint,
            graphs,
            out,
        } => {
            let model = io::load_checkpoint(&checkpoint)?.to_model()?;
            let graphs = io::load_graphs(&graphs)?;
            let preds = predict(&model, &graphs)?;
            let m = metrics(&preds.scores, &preds.labels)?;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
            println!(
                "acc {:.4} sen {} spe {} auc {} (n = {})",
                m.acc,
                fmt(m.sen),
                fmt(m.spe),
                fmt(m.auc),
                graphs.len()
            );
            if let Some(out) = out {
                io::save_json(
                    &out,
                    &serde_json::json!({ "metrics": m, "predictions": preds }),
                )?;
            }
        }
        Command::Synth { config, seed, out } => {
            let mut spec = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)?;
                    toml::from_str::<SyntheticSpec>(&text).map_err(|e| Error::Parse {
                        path: p.clone(),
                        detail: e.to_string(),
                    })?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let data = generate_synthetic(&spec)?;
            let manifest = io::write_dataset(&out, &data.subjects)?;
            io::save_json(&out.join("communities.json"), &data.communities)?;
            println!(
                "wrote {} subjects -> {}",
                data.subjects.len(),
                manifest.display()
            );
        }
        Command::Gradcheck { seed } => {
            let start = Instant::now();
            let suite = gradient_suite(seed)?;
            for p in &suite.primitives {
                println!(
                    "{:<6} {:<24} max rel {:.2e} over {} entries",
                    if p.report.passed { "ok" } else { "FAIL" },
                    p.name,
                    p.report.max_rel_error,
                    p.report.checked
                );
            }
            println!(
                "{:<6} {:<24} max rel {:.2e} over {} entries ({}+{} nodes)",
                if suite.model.passed { "ok" } else { "FAIL" },
                "full model",
                suite.model.max_rel_error,
                suite.model.checked,
                suite.graph_nodes.0,
                suite.graph_nodes.1
            );
            println!("finished in {:.1?}", start.elapsed());
            if !suite.passed() {
                return Err(Error::InvalidArgument("gradient check failed".into()));
            }
        }
        Command::Explain {
            checkpoint,
            graphs,
            out,
        } => {
            let model = io::load_checkpoint(&checkpoint)?.to_model()?;
            let graphs = io::load_graphs(&graphs)?;
            let records = export_pool_assignments(&model, &graphs)?;
            io::save_json(&out, &records)?;
            println!(
                "exported assignments of {} subjects -> {}",
                records.len(),
                out.display()
            );
        }
    }
    Ok(())
}

/// Graphs reordered to follow `subjects`.
fn align(
    subjects: &[crate::graphbuild::SubjectRaw],
    graphs: &[crate::graphbuild::HeteroGraph],
) -> Result<Vec<crate::graphbuild::HeteroGraph>> {
    subjects
        .iter()
        .map(|s| {
            graphs
                .iter()
                .find(|g| g.subject_id == s.id)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("no graph for subject {}", s.id)))
        })
        .collect()
}

fn train(
    graphs: Option<PathBuf>,
    manifest: Option<PathBuf>,
    augmented: Option<PathBuf>,
    folds: Option<String>,
    out: &Path,
    common: &Common,
) -> Result<()> {
    let mut config = common.resolve()?;
    let subjects = manifest.as_deref().map(io::load_dataset).transpose()?;
    let graphs = match (&graphs, &subjects) {
        (Some(p), _) => io::load_graphs(p)?,
        (None, Some(s)) => build_graphs(s, &config.graph)?,
        (None, None) => {
            return Err(Error::InvalidArgument(
                "train needs --graphs or --manifest".into(),
            ))
        }
    };
    let aug = match (&augmented, &subjects) {
        (Some(p), _) => io::load_graphs(p)?,
        (None, Some(s)) if config.augment_minority => {
            build_augmented(s, &align(s, &graphs)?, &config.graph, &config.augment)?
        }
        _ => Vec::new(),
    };

    let ids: Vec<String> = graphs.iter().map(|g| g.subject_id.clone()).collect();
    let labels: Vec<usize> = graphs.iter().map(|g| g.label).collect();
    let splits = match folds {
        None => stratified_folds(&labels, config.folds, config.seed)?,
        Some(f) => match f.parse::<usize>() {
            Ok(k) => {
                config.folds = k;
                config.validate()?;
                stratified_folds(&labels, k, config.seed)?
            }
            Err(_) => io::load_json::<io::FoldsFile>(Path::new(&f))?.to_splits(&ids)?,
        },
    };

    let start = Instant::now();
    let (report, trained) = run_cv(&graphs, &aug, &splits, &config)?;
    std::fs::create_dir_all(out)?;
    for (i, t) in trained.iter().enumerate() {
        let ck = io::Checkpoint::from_model(&t.model, Some(&t.optimizer), Some(&config.train));
        io::save_checkpoint(&out.join(format!("fold{i}.checkpoint.json")), &ck)?;
    }
    io::save_report(&out.join("report.json"), &report)?;
    std::fs::write(out.join("curves.csv"), io::curves_to_csv(&report)?)?;
    io::save_config(&out.join("config.toml"), &config)?;

    let show = |s: Option<crate::harness::Summary>| {
        s.map_or("n/a".to_string(), |s| {
            format!("{:.4} ± {:.4}", s.mean, s.std)
        })
    };
    println!(
        "{}-fold CV in {:.1?}: acc {} sen {} spe {} auc {}",
        report.k,
        start.elapsed(),
        show(report.acc),
        show(report.sen),
        show(report.spe),
        show(report.auc)
    );
    println!("report -> {}", out.join("report.json").display());
    Ok(())
}
