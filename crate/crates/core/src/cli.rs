//! Command-line front end. `main.rs` only calls [`main`].

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentConfig, FeatureKind, FeatureSet, SyntheticConfig};
use crate::labels::{self, AggregatedLabel, Session, UtteranceMeta, DEFAULT_QUORUM};
use crate::neural::{self, Checkpoint, RegressionTarget, TrainConfig};
use crate::service::{self, ServiceConfig};
use crate::svr::{self, FittedSvr, GridTarget, Standardizer, SvrBundle, SvrGrid};

#[derive(Debug, Parser)]
#[command(name = "emocolor", version, about = "Speech emotion as HSV color: labels, models and experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate per-annotator colors into one label per utterance
    Aggregate {
        /// Annotation JSON Lines file
        #[arg(long)]
        annotations: PathBuf,
        /// Output CSV of aggregated labels
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_QUORUM)]
        quorum: usize,
    },
    /// Inter-annotator agreement and per-emotion label distributions
    Stats {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Write stats.json here instead of only printing
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-search and train SVRs for hue, saturation and value
    TrainSvr {
        #[command(flatten)]
        data: DataArgs,
        /// Output model bundle (JSON)
        #[arg(long)]
        out: PathBuf,
        /// JSON file with an SVR grid
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the multitask network
    TrainDnn {
        #[command(flatten)]
        data: DataArgs,
        /// Output checkpoint (JSON)
        #[arg(long)]
        out: PathBuf,
        /// JSON file with training settings
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Weight of the classification loss
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// SVR vs DNN, individual vs joint, leave-one-speaker-out
    Exp1 {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Multitask weight sweep, leave-one-speaker-out
    Exp2 {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated classification weights
        #[arg(long, value_delimiter = ',', default_value = "0.6,0.7,0.8,0.9,1.0")]
        alphas: Vec<f64>,
    },
    /// Generate the seeded synthetic benchmark corpus
    Synth {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON file with generator settings
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the annotation web service
    Serve {
        #[arg(long, env = "EMOCOLOR_MANIFEST")]
        manifest: PathBuf,
        #[arg(long, env = "EMOCOLOR_AUDIO_ROOT", default_value = ".")]
        audio_root: PathBuf,
        #[arg(long, env = "EMOCOLOR_STORE", default_value = "annotations.jsonl")]
        store: PathBuf,
        #[arg(long, env = "EMOCOLOR_QUORUM", default_value_t = DEFAULT_QUORUM)]
        quorum: usize,
        #[arg(long, env = "EMOCOLOR_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = "EMOCOLOR_SEED", default_value_t = 0)]
        seed: u64,
        /// Built annotation UI to serve at /
        #[arg(long, env = "EMOCOLOR_UI_DIR")]
        ui_dir: Option<PathBuf>,
    },
    /// Dump a service store as canonical annotation JSON Lines
    Export {
        #[arg(long)]
        store: PathBuf,
        /// Output file; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Aggregated labels CSV
    #[arg(long)]
    pub labels: PathBuf,
    /// Features are per-frame rows with a frame_index column
    #[arg(long)]
    pub frame_level: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Output directory for reports
    #[arg(long)]
    pub out: PathBuf,
    /// JSON experiment config
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read(path)?)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

struct Data {
    metas: Vec<UtteranceMeta>,
    features: FeatureSet,
    labels: Vec<AggregatedLabel>,
}

fn load_data(args: &DataArgs) -> Result<Data> {
    let kind = if args.frame_level {
        FeatureKind::FrameLevel
    } else {
        FeatureKind::UtteranceLevel
    };
    Ok(Data {
        metas: labels::parse_manifest(&read(&args.manifest)?)?,
        features: experiment::load_features(&args.features, kind)?,
        labels: labels::parse_aggregated(&read(&args.labels)?)?,
    })
}

/// Training rows come from the regular session, model selection from the
/// phrase-free session.
fn session_split(data: &Data) -> Result<(Vec<String>, Vec<String>)> {
    let pick = |s: Session| -> Vec<String> {
        let mut v: Vec<String> = data
            .metas
            .iter()
            .filter(|m| m.session == s)
            .map(|m| m.utterance_id.clone())
            .collect();
        v.sort();
        v
    };
    let (train, val) = (pick(Session::Regular), pick(Session::PhraseFree));
    if train.len() < 2 || val.len() < 2 {
        return Err(Error::validation(
            "training needs at least two regular-session and two phrase-free utterances",
        ));
    }
    Ok((train, val))
}

struct Prepared {
    standardizer: Standardizer,
    train_x: ndarray::Array2<f64>,
    val_x: ndarray::Array2<f64>,
    train_colors: Vec<labels::ColorLabel>,
    val_colors: Vec<labels::ColorLabel>,
    train_emotions: Vec<labels::Emotion>,
    val_emotions: Vec<labels::Emotion>,
}

fn prepare(data: &Data) -> Result<Prepared> {
    let corpus = experiment::Corpus::join(&data.features, &data.labels, &data.metas)?;
    let (train, val) = session_split(data)?;
    let raw_train = data.features.matrix(&train)?;
    let standardizer = Standardizer::fit(raw_train.view())?;
    let colors = |ids: &[String]| ids.iter().map(|id| corpus.labels[id.as_str()].label).collect();
    let emotions = |ids: &[String]| ids.iter().map(|id| corpus.metas[id.as_str()].emotion).collect();
    Ok(Prepared {
        train_x: standardizer.transform(raw_train.view())?,
        val_x: standardizer.transform(data.features.matrix(&val)?.view())?,
        train_colors: colors(&train),
        val_colors: colors(&val),
        train_emotions: emotions(&train),
        val_emotions: emotions(&val),
        standardizer,
    })
}

fn train_svr(data: &DataArgs, out: &Path, config: Option<&Path>) -> Result<()> {
    let grid: SvrGrid = match config {
        Some(p) => read_json(p)?,
        None => SvrGrid::default(),
    };
    let d = load_data(data)?;
    let p = prepare(&d)?;
    let points = grid.points(d.features.dimension)?;
    let attr = |f: fn(&labels::ColorLabel) -> f64, cs: &[labels::ColorLabel]| -> Vec<f64> { cs.iter().map(f).collect() };
    let (th, vh) = (attr(|c| c.hue_deg, &p.train_colors), attr(|c| c.hue_deg, &p.val_colors));
    let (ts, vs) = (attr(|c| c.saturation, &p.train_colors), attr(|c| c.saturation, &p.val_colors));
    let (tv, vv) = (attr(|c| c.value, &p.train_colors), attr(|c| c.value, &p.val_colors));
    let hue = svr::grid_search(p.train_x.view(), p.val_x.view(), GridTarget::Hue { train: &th, val: &vh }, &points)?;
    let sat = svr::grid_search(p.train_x.view(), p.val_x.view(), GridTarget::Scalar { train: &ts, val: &vs }, &points)?;
    let val = svr::grid_search(p.train_x.view(), p.val_x.view(), GridTarget::Scalar { train: &tv, val: &vv }, &points)?;
    println!("hue        AE  {:>9}  {:?}", experiment::format_sig6(Some(hue.best_score)), hue.best_config);
    println!("saturation CCC {:>9}  {:?}", experiment::format_sig6(Some(sat.best_score)), sat.best_config);
    println!("value      CCC {:>9}  {:?}", experiment::format_sig6(Some(val.best_score)), val.best_config);
    let (FittedSvr::Hue(h), FittedSvr::Scalar(s), FittedSvr::Scalar(v)) = (hue.model, sat.model, val.model) else {
        unreachable!("grid_search returns the variant matching its target");
    };
    write_text(out, &SvrBundle::new(p.standardizer, h, s, v).to_json()?)
}

fn train_dnn(data: &DataArgs, out: &Path, config: Option<&Path>, seed: Option<u64>, alpha: Option<f64>) -> Result<()> {
    let mut cfg: TrainConfig = match config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(a) = alpha {
        cfg.alpha = a;
    }
    cfg.validate()?;
    let d = load_data(data)?;
    let p = prepare(&d)?;
    let targets = |cs: &[labels::ColorLabel]| -> Result<Vec<RegressionTarget>> {
        cs.iter().map(RegressionTarget::from_color).collect()
    };
    let train = neural::Dataset::new(p.train_x, &targets(&p.train_colors)?, p.train_emotions)?;
    let val = neural::Dataset::new(p.val_x, &targets(&p.val_colors)?, p.val_emotions)?;
    let outcome = neural::train(&train, Some(&val), &cfg)?;
    for r in &outcome.history {
        println!(
            "epoch {:>3}  loss {:>9}  hue AE {:>9}  sat CCC {:>9}  val CCC {:>9}  acc {:>9}",
            r.epoch,
            experiment::format_sig6(Some(r.train_loss)),
            experiment::format_sig6(r.hue_ae),
            experiment::format_sig6(r.sat_ccc),
            experiment::format_sig6(r.val_ccc),
            experiment::format_sig6(r.accuracy)
        );
    }
    println!("kept epoch {}", outcome.best_epoch);
    write_text(out, &Checkpoint::new(outcome.params, cfg, Some(p.standardizer)).to_json()?)
}

fn run_experiment(data: &DataArgs, run: &RunArgs, alphas: Option<Vec<f64>>) -> Result<()> {
    let mut cfg: ExperimentConfig = match &run.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = run.seed {
        cfg.dnn.seed = s;
    }
    let d = load_data(data)?;
    let report = match alphas {
        Some(a) => {
            cfg.alphas = a;
            experiment::run_experiment2(&d.features, &d.labels, &d.metas, &cfg)?
        }
        None => experiment::run_experiment1(&d.features, &d.labels, &d.metas, &cfg)?,
    };
    print!("{}", experiment::render_table(&report));
    let files = experiment::emit_reports(&report, &d.labels, &d.metas, &run.out)?;
    tracing::info!(files = files.len(), dir = %run.out.display(), "reports written");
    Ok(())
}

fn synth(out: &Path, seed: Option<u64>, config: Option<&Path>) -> Result<()> {
    let mut cfg: SyntheticConfig = match config {
        Some(p) => read_json(p)?,
        None => SyntheticConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let b = experiment::make_synthetic_benchmark(&cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = |name: &str| out.join(name);
    labels::write_manifest(&b.metas, create(&path("manifest.csv"))?)?;
    labels::write_annotations(&b.annotations, create(&path("annotations.jsonl"))?)?;
    labels::write_aggregated(&b.labels, create(&path("labels.csv"))?)?;
    b.features.write_csv(create(&path("features.csv"))?)?;
    println!(
        "{} utterances, {} annotations, dimension {} -> {}",
        b.metas.len(),
        b.annotations.len(),
        b.features.dimension,
        out.display()
    );
    Ok(())
}

fn stats(labels_path: &Path, manifest: &Path, out: Option<&Path>) -> Result<()> {
    let aggs = labels::parse_aggregated(&read(labels_path)?)?;
    let metas = labels::parse_manifest(&read(manifest)?)?;
    let agreement = labels::corpus_agreement(&aggs)?;
    let per_emotion = labels::per_emotion_stats(&aggs, &metas)?;
    println!(
        "agreement: hue circular std {} deg, saturation std {}, value std {}",
        experiment::format_sig6(Some(agreement.mean_hue_circ_std_deg)),
        experiment::format_sig6(Some(agreement.mean_sat_std)),
        experiment::format_sig6(Some(agreement.mean_val_std))
    );
    for s in per_emotion.values() {
        println!(
            "{}  n {:>4}  mean hue {:>9}  median S {:>9}  median V {:>9}",
            s.emotion,
            s.n,
            experiment::format_sig6(s.mean_hue_deg),
            experiment::format_sig6(s.saturation.map(|q| q.median)),
            experiment::format_sig6(s.value.map(|q| q.median))
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let body = serde_json::json!({ "agreement": agreement, "per_emotion": per_emotion });
        write_text(&dir.join("stats.json"), &serde_json::to_string_pretty(&body)?)?;
    }
    Ok(())
}

fn export(store: &Path, out: Option<&Path>) -> Result<()> {
    let text = read(store)?;
    // an interrupted append can leave a partial last line; it is not a record
    let complete = text.rfind('\n').map_or("", |p| &text[..=p]);
    let records = labels::parse_annotations(complete)?;
    match out {
        Some(p) => labels::write_annotations(&records, create(p)?),
        None => labels::write_annotations(&records, io::stdout().lock()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Aggregate { annotations, out, quorum } => {
            let records = labels::parse_annotations(&read(&annotations)?)?;
            let aggs = labels::aggregate_all(&records, quorum)?;
            labels::write_aggregated(&aggs, create(&out)?)?;
            println!("{} utterances aggregated from {} annotations", aggs.len(), records.len());
            Ok(())
        }
        Command::Stats { labels, manifest, out } => stats(&labels, &manifest, out.as_deref()),
        Command::TrainSvr { data, out, config } => train_svr(&data, &out, config.as_deref()),
        Command::TrainDnn {
            data,
            out,
            config,
            seed,
            alpha,
        } => train_dnn(&data, &out, config.as_deref(), seed, alpha),
        Command::Exp1 { data, run } => run_experiment(&data, &run, None),
        Command::Exp2 { data, run, alphas } => run_experiment(&data, &run, Some(alphas)),
        Command::Synth { out, seed, config } => synth(&out, seed, config.as_deref()),
        Command::Serve {
            manifest,
            audio_root,
            store,
            quorum,
            bind,
            seed,
            ui_dir,
        } => {
            let config = ServiceConfig {
                manifest,
                audio_root,
                store,
                quorum,
                bind,
                seed,
                ui_dir,
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("<tokio runtime>", e))?;
            rt.block_on(service::serve(config))
        }
        Command::Export { store, out } => export(&store, out.as_deref()),
    }
}

/// Parses arguments, runs, and returns the process exit code:
/// 0 success, 1 validation, 2 I/O, 3 non-convergence.
pub fn main() -> i32 {
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(Error::Io { source, .. }) if source.kind() == io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
