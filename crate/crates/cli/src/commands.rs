use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use gazehoi::data::{generate_scenario, load_annotations, write_annotations, Video, Vocabulary};
use gazehoi::evaluation::{
    default_thresholds, evaluate, ground_truth, predict_triplets, sweep_csv, threshold_sweep, write_predictions,
    EvalFrame, MetricsReport,
};
use gazehoi::features::FeatureSource;
use gazehoi::model::{load_checkpoint, save_checkpoint, Model};
use gazehoi::training::{log_to_jsonl, train, EpochHook, EpochRecord, TrainData};
use serde::Serialize;

use crate::config::{axis_label, with_axis, AxisSpec, RunConfig, Split};
use crate::error::CliError;

pub const FEATURES_FILE: &str = "features.bin";
pub const VOCAB_FILE: &str = "vocab.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

type Result<T> = std::result::Result<T, CliError>;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
    text.push('\n');
    write_file(path, text)
}

fn file_len(path: &Path) -> Result<u64> {
    Ok(std::fs::metadata(path).map_err(|e| CliError::io(path, e))?.len())
}

#[derive(Serialize)]
struct ManifestFile {
    name: String,
    bytes: u64,
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    train_videos: usize,
    val_videos: usize,
    train_frames: usize,
    val_frames: usize,
    /// Scripted predicate occurrences per split.
    predicate_tallies: [Vec<usize>; 2],
    files: Vec<ManifestFile>,
    config: serde_json::Value,
}

/// Generate a synthetic dataset into `out`.
pub fn gen_data(cfg: &RunConfig, vocab_path: Option<&Path>, out: &Path) -> Result<()> {
    let vocab = match vocab_path {
        Some(p) => Vocabulary::load(p)?,
        None => Vocabulary::default(),
    };
    let scenario = generate_scenario(&cfg.scenario, &vocab, cfg.seed)?;
    create_dir(out)?;
    write_annotations(out.join(Split::Train.file_name()), &scenario.train)?;
    write_annotations(out.join(Split::Val.file_name()), &scenario.val)?;
    vocab.save(out.join(VOCAB_FILE))?;
    let all: Vec<Video> = scenario.train.iter().chain(&scenario.val).cloned().collect();
    FeatureSource::synthetic(&cfg.features, vocab.n_objects())
        .export(&all)?
        .write(out.join(FEATURES_FILE))?;
    write_file(&out.join(CONFIG_FILE), cfg.to_toml())?;

    let names = [Split::Train.file_name(), Split::Val.file_name(), VOCAB_FILE, FEATURES_FILE, CONFIG_FILE];
    let files = names
        .iter()
        .map(|n| {
            Ok(ManifestFile {
                name: n.to_string(),
                bytes: file_len(&out.join(n))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = |v: &[Video]| v.iter().map(Video::len).sum();
    let manifest = Manifest {
        seed: cfg.seed,
        train_videos: scenario.train.len(),
        val_videos: scenario.val.len(),
        train_frames: frames(&scenario.train),
        val_frames: frames(&scenario.val),
        predicate_tallies: scenario.predicate_tallies.clone(),
        files,
        config: cfg.to_json(),
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    println!(
        "wrote {} train and {} val videos to {}",
        manifest.train_videos,
        manifest.val_videos,
        out.display()
    );
    Ok(())
}

/// A dataset directory loaded into memory.
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<Video>,
    pub val: Vec<Video>,
    pub features: FeatureSource,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.data_dir()?;
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("dataset directory {} does not exist", dir.display())));
        }
        let vocab = Vocabulary::load(dir.join(VOCAB_FILE))?;
        let train = load_annotations(dir.join(Split::Train.file_name()))?;
        let val = load_annotations(dir.join(Split::Val.file_name()))?;
        vocab.check(&train)?;
        vocab.check(&val)?;
        let features = FeatureSource::open_store(dir.join(FEATURES_FILE), vocab.n_objects(), &cfg.features)?;
        Ok(Self {
            vocab,
            train,
            val,
            features,
        })
    }

    pub fn split(&self, split: Split) -> &[Video] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    /// Reject models whose input or output widths disagree with the data.
    pub fn check_model(&self, model: &gazehoi::model::ModelConfig) -> Result<()> {
        let mut problems = Vec::new();
        if model.visual_dim != self.features.visual_dim() {
            problems.push(format!(
                "model.visual_dim = {} but the features hold {}",
                model.visual_dim,
                self.features.visual_dim()
            ));
        }
        if model.semantic_dim != self.features.semantic_dim() {
            problems.push(format!(
                "model.semantic_dim = {} but the features hold {}",
                model.semantic_dim,
                self.features.semantic_dim()
            ));
        }
        if model.n_outputs() != self.vocab.n_predicates() {
            problems.push(format!(
                "the model predicts {} classes but the vocabulary has {} predicates",
                model.n_outputs(),
                self.vocab.n_predicates()
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(gazehoi::Error::Dimension(problems.join("; ")).into())
        }
    }
}

/// Model predictions and scoring frames of one split.
pub fn score_split(cfg: &RunConfig, model: &Model, videos: &[Video], features: &FeatureSource) -> Result<MetricsReport> {
    let (preds, frames) = predictions(cfg, model, videos, features)?;
    let mut report = evaluate(&preds, &frames, &cfg.eval_config());
    report.config = Some(cfg.to_json());
    Ok(report)
}

fn predictions(
    cfg: &RunConfig,
    model: &Model,
    videos: &[Video],
    features: &FeatureSource,
) -> Result<(Vec<gazehoi::evaluation::PredictedTriplet>, Vec<EvalFrame>)> {
    let preds = predict_triplets(model, videos, features, &cfg.windows(), cfg.eval.batch_windows)?;
    Ok((preds, ground_truth(videos, cfg.task.tau_a)))
}

struct TrainHook<'a> {
    cfg: &'a RunConfig,
    data: &'a Dataset,
    out: Option<&'a Path>,
    log: Option<File>,
}

impl EpochHook for TrainHook<'_> {
    fn validate(&mut self, model: &Model, _epoch: usize) -> gazehoi::Result<Option<serde_json::Value>> {
        if !self.cfg.output.validate || self.data.val.is_empty() {
            return Ok(None);
        }
        let preds = predict_triplets(model, &self.data.val, &self.data.features, &self.cfg.windows(), self.cfg.eval.batch_windows)?;
        let report = evaluate(&preds, &ground_truth(&self.data.val, self.cfg.task.tau_a), &self.cfg.eval_config());
        Ok(Some(serde_json::json!({
            "map_full": report.map_full,
            "map_nonrare": report.map_nonrare,
            "map_rare": report.map_rare,
            "personwise": report.personwise,
        })))
    }

    fn end_epoch(&mut self, model: &Model, record: &EpochRecord) -> gazehoi::Result<()> {
        if let Some(log) = &mut self.log {
            log.write_all(log_to_jsonl(std::slice::from_ref(record)).as_bytes())?;
            log.flush()?;
        }
        let every = self.cfg.output.checkpoint_every;
        if let Some(out) = self.out {
            if every > 0 && (record.epoch + 1) % every == 0 {
                save_checkpoint(model, out.join(format!("checkpoint_epoch{:03}.ckpt", record.epoch + 1)))?;
            }
        }
        eprintln!("epoch {:>3}  loss {:.6}  lr {:.3e}", record.epoch, record.mean_loss, record.lr);
        Ok(())
    }
}

fn fit(cfg: &RunConfig, data: &Dataset, out: Option<&Path>) -> Result<(Model, Vec<EpochRecord>)> {
    data.check_model(&cfg.model)?;
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let log = match out {
        Some(dir) => {
            let path = dir.join("train_log.jsonl");
            Some(File::create(&path).map_err(|e| CliError::io(&path, e))?)
        }
        None => None,
    };
    let mut hook = TrainHook { cfg, data, out, log };
    let train_data = TrainData {
        videos: &data.train,
        features: &data.features,
        windows: cfg.windows(),
    };
    let records = train(&mut model, &train_data, &cfg.train, cfg.seed, &mut hook)?;
    Ok((model, records))
}

pub fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = Dataset::load(cfg)?;
    create_dir(out)?;
    write_file(&out.join(CONFIG_FILE), cfg.to_toml())?;
    let (model, records) = fit(cfg, &data, Some(out))?;
    let path = out.join("model.ckpt");
    save_checkpoint(&model, &path)?;
    let last = records.last().expect("at least one epoch");
    println!("trained {} epochs, final loss {:.6}; checkpoint {}", records.len(), last.mean_loss, path.display());
    Ok(())
}

/// Load a checkpoint and fold its model config into the run config.
fn load_model(cfg: &mut RunConfig, checkpoint: &Path, model_pinned: bool) -> Result<Model> {
    if !checkpoint.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    let model = load_checkpoint(checkpoint, model_pinned.then_some(&cfg.model))?;
    cfg.model = model.config().clone();
    Ok(model)
}

pub fn eval_cmd(cfg: &mut RunConfig, checkpoint: &Path, model_pinned: bool, out: &Path) -> Result<()> {
    let data = Dataset::load(cfg)?;
    let model = load_model(cfg, checkpoint, model_pinned)?;
    data.check_model(model.config())?;
    let videos = data.split(cfg.data.split);
    let (preds, frames) = predictions(cfg, &model, videos, &data.features)?;
    let mut report = evaluate(&preds, &frames, &cfg.eval_config());
    report.config = Some(cfg.to_json());
    create_dir(out)?;
    write_file(&out.join(CONFIG_FILE), cfg.to_toml())?;
    write_predictions(out.join("predictions.jsonl"), &preds)?;
    write_json(&out.join("report.json"), &report)?;
    println!(
        "mAP full {:.4}  rare {:.4}  non-rare {:.4}  person-wise top-{} rec {:.4} prec {:.4} acc {:.4} f1 {:.4}",
        report.map_full,
        report.map_rare,
        report.map_nonrare,
        report.k,
        report.personwise.recall,
        report.personwise.precision,
        report.personwise.accuracy,
        report.personwise.f1
    );
    Ok(())
}

pub fn sweep_cmd(cfg: &mut RunConfig, checkpoint: &Path, model_pinned: bool, out: &Path) -> Result<()> {
    let data = Dataset::load(cfg)?;
    let model = load_model(cfg, checkpoint, model_pinned)?;
    data.check_model(model.config())?;
    if cfg.eval.thresholds.is_empty() {
        cfg.eval.thresholds = default_thresholds();
    }
    let videos = data.split(cfg.data.split);
    let (preds, frames) = predictions(cfg, &model, videos, &data.features)?;
    let rows = threshold_sweep(&preds, &frames, &cfg.eval_config(), &cfg.eval.thresholds);
    create_dir(out)?;
    write_file(&out.join(CONFIG_FILE), cfg.to_toml())?;
    write_file(&out.join("sweep.csv"), sweep_csv(&rows)?)?;
    println!("wrote {} thresholds to {}", rows.len(), out.join("sweep.csv").display());
    Ok(())
}

/// Every combination of the axis values, first axis varying slowest.
pub fn grid(axes: &[AxisSpec]) -> Vec<Vec<&toml::Value>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut row = prefix.clone();
                    row.push(v);
                    row
                })
            })
            .collect()
    })
}

pub fn ablate_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let axes = &cfg.ablate.axes;
    if axes.is_empty() {
        return Err(CliError::Usage("no ablation axes: pass --axis name=v1,v2 or set [[ablate.axes]]".into()));
    }
    let combos = grid(axes);
    // resolve every grid point before the first run
    let runs = combos
        .iter()
        .map(|combo| {
            let mut run = cfg.clone();
            for (axis, value) in axes.iter().zip(combo) {
                run = with_axis(&run, &axis.name, value)?;
            }
            run.normalize();
            run.ablate = Default::default();
            run.train.validate()?;
            run.model.validate()?;
            Ok(run)
        })
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset::load(cfg)?;
    create_dir(out)?;
    write_file(&out.join(CONFIG_FILE), cfg.to_toml())?;
    let mut table = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec!["run".into()];
    header.extend(axes.iter().map(|a| a.name.clone()));
    header.extend(
        ["final_loss", "map_full", "map_nonrare", "map_rare", "recall", "precision", "accuracy", "f1"].map(String::from),
    );
    table.write_record(&header).map_err(csv_error)?;
    for (i, (run, combo)) in runs.iter().zip(&combos).enumerate() {
        let dir: PathBuf = out.join(format!("run_{i:03}"));
        create_dir(&dir)?;
        let mut quiet = run.clone();
        quiet.output.validate = false;
        quiet.output.checkpoint_every = 0;
        let (model, records) = fit(&quiet, &data, None)?;
        let report = score_split(run, &model, data.split(run.data.split), &data.features)?;
        write_json(&dir.join("report.json"), &report)?;
        let mut row = vec![i.to_string()];
        row.extend(combo.iter().map(|v| axis_label(v)));
        let loss = records.last().map_or(f64::NAN, |r| r.mean_loss);
        let pw = report.personwise;
        row.extend(
            [loss, report.map_full, report.map_nonrare, report.map_rare, pw.recall, pw.precision, pw.accuracy, pw.f1]
                .map(|x| x.to_string()),
        );
        table.write_record(&row).map_err(csv_error)?;
        println!("run {i}: {}  mAP full {:.4}  f1 {:.4}", row[1..=axes.len()].join(" "), report.map_full, pw.f1);
    }
    let bytes = table.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    write_file(&out.join("ablation.csv"), bytes)?;
    Ok(())
}

fn csv_error(e: csv::Error) -> CliError {
    gazehoi::Error::Schema(e.to_string()).into()
}
