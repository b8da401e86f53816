//! Command-line pipeline: dataset generation, training, conformal
//! calibration, prediction, surface projection, settings emission, and
//! evaluation. Exit codes: 0 success, 1 user error, 2 internal error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::conformal::{calibrate, CalibrationRecord, ConformalCalibrator, PredictionSet};
use crate::datagen::{base_params, generate_aircraft, sample_variations};
use crate::geometry::{
    face_centroids, load_mesh, load_surface_grids, save_labels, save_mesh, save_surface_grids,
    LabeledMesh, PartLabel, NUM_CLASSES,
};
use crate::nn::checkpoint::{Checkpoint, CheckpointFormat};
use crate::nn::model::SegmentationModel;
use crate::nn::train::{train, TrainSample};
use crate::projection::{
    assign_faces, classify_surfaces, evaluate_surfaces, save_classifications, DecisionMode,
    SurfaceClassification,
};
use crate::rules::emit_settings;

/// User-facing failure (bad arguments, missing or malformed inputs)
/// versus an internal one (numerics, invariant violations).
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }
}

type CliResult = Result<(), CliError>;

fn user_err(e: impl std::fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

fn internal_err(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "aeromesh",
    about = "Aircraft mesh segmentation with conformal surface voting and expert mesh settings"
)]
struct Cli {
    /// TOML run configuration; omitted keys use built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Conformal risk level override.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Transform-regularization weight override.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled procedural aircraft dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        bases: usize,
        #[arg(long, default_value_t = 20)]
        variations: usize,
        #[arg(long, default_value_t = 5)]
        densities: usize,
    },
    /// Train the segmentation model on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Number of base shapes held out for validation.
        #[arg(long, default_value_t = 2)]
        val_bases: usize,
        #[arg(long, default_value = "json")]
        format: String,
    },
    /// Fit the conformal score threshold on held-out faces.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        val_bases: usize,
    },
    /// Per-face probabilities and prediction sets for one mesh.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        calibrator: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vote per-face prediction sets onto CAD surfaces.
    Project {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        surfaces: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit expert mesh settings for classified surfaces.
    Emit {
        #[arg(long)]
        classifications: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Face-level and surface-level evaluation report.
    Eval {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        classifications: Option<PathBuf>,
        #[arg(long)]
        surfaces: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub base: usize,
    pub variation: usize,
    pub density: u8,
    pub mesh: String,
    pub labels: String,
    pub surfaces: String,
    pub face_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub bases: usize,
    pub variations: usize,
    pub densities: usize,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::user(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::user(format!("malformed manifest {}: {e}", path.display())))
    }
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            2
        }
    }
}

fn load_run_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(user_err)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(alpha) = cli.alpha {
        config.alpha = alpha;
    }
    if let Some(gamma) = cli.gamma {
        config.train.gamma = gamma;
    }
    if let Some(epochs) = cli.epochs {
        config.train.epochs = epochs;
    }
    config.validate().map_err(user_err)?;
    Ok(config)
}

fn dispatch(cli: Cli) -> CliResult {
    let config = load_run_config(&cli)?;
    match &cli.command {
        Command::Gen {
            out,
            bases,
            variations,
            densities,
        } => cmd_gen(&config, out, *bases, *variations, *densities),
        Command::Train {
            data,
            out,
            metrics,
            val_bases,
            format,
        } => cmd_train(&config, data, out, metrics.as_deref(), *val_bases, format),
        Command::Calibrate {
            data,
            checkpoint,
            out,
            val_bases,
        } => cmd_calibrate(&config, data, checkpoint, out, *val_bases),
        Command::Predict {
            checkpoint,
            calibrator,
            mesh,
            out,
        } => cmd_predict(checkpoint, calibrator, mesh, out),
        Command::Project {
            pred,
            mesh,
            surfaces,
            out,
        } => cmd_project(&config, pred, mesh, surfaces, out),
        Command::Emit {
            classifications,
            out,
        } => cmd_emit(&config, classifications, out),
        Command::Eval {
            pred,
            labels,
            classifications,
            surfaces,
            out,
        } => cmd_eval(
            &config,
            pred.as_deref(),
            labels.as_deref(),
            classifications.as_deref(),
            surfaces.as_deref(),
            out.as_deref(),
        ),
    }
}

pub fn cmd_gen(
    config: &RunConfig,
    out: &Path,
    bases: usize,
    variations: usize,
    densities: usize,
) -> CliResult {
    if bases == 0 || variations == 0 || densities == 0 || densities > 5 {
        return Err(CliError::user(
            "bases and variations must be positive; densities in 1..=5",
        ));
    }
    fs::create_dir_all(out)
        .map_err(|e| CliError::user(format!("cannot create {}: {e}", out.display())))?;
    let mut samples = Vec::new();
    for base in 0..bases {
        let params = base_params(base);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(base as u64));
        let varied = sample_variations(&params, variations, &mut rng);
        for (variation, vparams) in varied.iter().enumerate() {
            for density in 0..densities {
                let mut p = vparams.clone();
                p.density = density as u8;
                let (mesh, grids) = generate_aircraft(&p).map_err(user_err)?;
                let id = format!("b{base:02}_v{variation:02}_d{density}");
                let mesh_file = format!("{id}.mesh");
                let labels_file = format!("{id}.labels");
                let surfaces_file = format!("{id}.surfaces");
                save_mesh(out.join(&mesh_file), &mesh).map_err(internal_err)?;
                save_labels(
                    out.join(&labels_file),
                    mesh.face_labels.as_ref().expect("generated meshes are labeled"),
                )
                .map_err(internal_err)?;
                save_surface_grids(out.join(&surfaces_file), &grids).map_err(internal_err)?;
                samples.push(ManifestEntry {
                    id,
                    base,
                    variation,
                    density: density as u8,
                    mesh: mesh_file,
                    labels: labels_file,
                    surfaces: surfaces_file,
                    face_count: mesh.face_count(),
                });
            }
        }
    }
    let manifest = Manifest {
        seed: config.seed,
        bases,
        variations,
        densities,
        samples,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(internal_err)?;
    write_atomic(&out.join("manifest.json"), json.as_bytes())?;
    println!("generated {} samples into {}", manifest.samples.len(), out.display());
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult {
    let tmp = path.with_extension("tmp");
    let io_err = |e: std::io::Error| CliError::user(format!("{}: {e}", path.display()));
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<LabeledMesh, CliError> {
    load_mesh(dir.join(&entry.mesh), Some(&dir.join(&entry.labels))).map_err(user_err)
}

/// Splits a manifest into training and validation by base shape: the
/// highest `val_bases` base indices are held out entirely.
fn split_manifest<'m>(
    manifest: &'m Manifest,
    val_bases: usize,
) -> Result<(Vec<&'m ManifestEntry>, Vec<&'m ManifestEntry>), CliError> {
    if val_bases >= manifest.bases {
        return Err(CliError::user(format!(
            "val_bases {val_bases} must be below the {} bases in the dataset",
            manifest.bases
        )));
    }
    let cutoff = manifest.bases - val_bases;
    let (val, tr): (Vec<_>, Vec<_>) = manifest.samples.iter().partition(|s| s.base >= cutoff);
    Ok((tr, val))
}

fn prepare_samples(dir: &Path, entries: &[&ManifestEntry]) -> Result<Vec<TrainSample>, CliError> {
    entries
        .iter()
        .map(|e| {
            let mesh = load_sample(dir, e)?;
            TrainSample::prepare(&mesh).map_err(internal_err)
        })
        .collect()
}

pub fn cmd_train(
    config: &RunConfig,
    data: &Path,
    out: &Path,
    metrics: Option<&Path>,
    val_bases: usize,
    format: &str,
) -> CliResult {
    let format = CheckpointFormat::from_name(format)
        .ok_or_else(|| CliError::user(format!("unknown checkpoint format `{format}`")))?;
    let manifest = Manifest::load(data)?;
    let (train_entries, val_entries) = split_manifest(&manifest, val_bases)?;
    if train_entries.is_empty() {
        return Err(CliError::user("no training samples in the dataset"));
    }
    let train_set = prepare_samples(data, &train_entries)?;
    let val_set = prepare_samples(data, &val_entries)?;

    let train_config = config.train_config();
    let aug = config.augmentation_params(0, train_config.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = SegmentationModel::new(config.model.clone(), &mut rng);

    let metrics_path = metrics
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("metrics.csv"));
    let mut metrics_file = open_metrics(&metrics_path)?;

    let result = train(model, &train_set, &val_set, &train_config, &aug, |m| {
        let row = format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            m.epoch,
            m.train_loss,
            m.cls_loss,
            m.treg_loss,
            m.val_accuracy_pooled,
            m.xi[0],
            m.xi[1],
            m.xi[2],
            m.xi[3],
            m.xi[4],
            m.learning_rate,
            m.val_accuracy_mean,
        );
        let _ = metrics_file.write_all(row.as_bytes());
        println!(
            "epoch {} loss {:.4} val {:.4} lr {:.2e}",
            m.epoch, m.train_loss, m.val_accuracy_pooled, m.learning_rate
        );
    })
    .map_err(internal_err)?;

    Checkpoint::from_model(&result.best_model)
        .save(out, format)
        .map_err(internal_err)?;
    println!(
        "best epoch {} with pooled validation accuracy {:.4}; checkpoint at {}",
        result.best_epoch,
        result.best_accuracy,
        out.display()
    );
    Ok(())
}

fn open_metrics(path: &Path) -> Result<fs::File, CliError> {
    let fresh = !path.exists();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::user(format!("cannot open {}: {e}", path.display())))?;
    if fresh {
        file.write_all(
            b"epoch,train_loss,cls_loss,treg_loss,val_accuracy,xi1,xi2,xi3,xi4,xi5,learning_rate,val_accuracy_mean\n",
        )
        .map_err(internal_err)?;
    }
    Ok(file)
}

fn load_model(path: &Path) -> Result<SegmentationModel, CliError> {
    if !path.exists() {
        return Err(CliError::user(format!(
            "checkpoint not found: {}",
            path.display()
        )));
    }
    Checkpoint::load(path)
        .and_then(Checkpoint::into_model)
        .map_err(user_err)
}

/// All (probability row, true label) pairs for the given meshes.
fn face_records(
    model: &SegmentationModel,
    meshes: &[LabeledMesh],
) -> Result<Vec<CalibrationRecord>, CliError> {
    let mut records = Vec::new();
    for mesh in meshes {
        let labels = mesh
            .face_labels
            .as_ref()
            .ok_or_else(|| CliError::user("mesh is missing face labels"))?;
        let (probs, _) = model.predict(mesh).map_err(internal_err)?;
        for (i, &label) in labels.iter().enumerate() {
            let row = probs.row(i).to_vec();
            records.push(CalibrationRecord::new(row, label).map_err(internal_err)?);
        }
    }
    Ok(records)
}

pub fn cmd_calibrate(
    config: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    out: &Path,
    val_bases: usize,
) -> CliResult {
    let model = load_model(checkpoint)?;
    let manifest = Manifest::load(data)?;
    let (_, val_entries) = split_manifest(&manifest, val_bases)?;
    if val_entries.is_empty() {
        return Err(CliError::user("no validation samples to calibrate on"));
    }
    let meshes: Vec<LabeledMesh> = val_entries
        .iter()
        .map(|e| load_sample(data, e))
        .collect::<Result<_, _>>()?;
    let mut records = face_records(&model, &meshes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xca11b);
    records.shuffle(&mut rng);
    let take = ((records.len() as f64) * config.calibration_fraction).ceil() as usize;
    let take = take.clamp(1, records.len());
    let calibrator = calibrate(&records[..take], config.alpha).map_err(user_err)?;
    calibrator.save(out).map_err(internal_err)?;
    println!(
        "calibrated on {} faces: qhat {:.6} at alpha {}",
        calibrator.n_cal, calibrator.qhat, calibrator.alpha
    );
    Ok(())
}

pub fn cmd_predict(
    checkpoint: &Path,
    calibrator: &Path,
    mesh_path: &Path,
    out: &Path,
) -> CliResult {
    let model = load_model(checkpoint)?;
    let calibrator = ConformalCalibrator::load(calibrator).map_err(user_err)?;
    let mesh = load_mesh(mesh_path, None).map_err(user_err)?;
    let (probs, _) = model.predict(&mesh).map_err(internal_err)?;
    let mut text = String::from(
        "face,p_fuselage,p_wing,p_stabilizer,p_engine,top1,set\n",
    );
    for i in 0..probs.rows {
        let row = probs.row(i);
        let top1 = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap();
        let set = calibrator.predict_set(row);
        let set_names: Vec<&str> = set.labels.iter().map(|l| l.name()).collect();
        writeln!(
            text,
            "{},{},{},{},{},{},{}",
            i,
            row[0],
            row[1],
            row[2],
            row[3],
            PartLabel::from_id(top1 as u8).expect("class in label space").name(),
            set_names.join("|"),
        )
        .unwrap();
    }
    write_atomic(out, text.as_bytes())?;
    println!("wrote {} face predictions to {}", probs.rows, out.display());
    Ok(())
}

/// Parses the CSV written by `cmd_predict` back into per-face sets and
/// top-1 labels.
pub fn load_predictions(
    path: &Path,
) -> Result<(Vec<PartLabel>, BTreeMap<u32, PredictionSet>), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::user(format!("cannot read {}: {e}", path.display())))?;
    let mut top1 = Vec::new();
    let mut sets = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(CliError::user(format!(
                "{}:{}: expected 7 fields",
                path.display(),
                idx + 1
            )));
        }
        let face: u32 = fields[0]
            .parse()
            .map_err(|_| CliError::user(format!("{}:{}: bad face id", path.display(), idx + 1)))?;
        let label = PartLabel::from_name(fields[5]).ok_or_else(|| {
            CliError::user(format!("{}:{}: unknown label {}", path.display(), idx + 1, fields[5]))
        })?;
        let mut labels = std::collections::BTreeSet::new();
        for name in fields[6].split('|').filter(|s| !s.is_empty()) {
            let l = PartLabel::from_name(name).ok_or_else(|| {
                CliError::user(format!("{}:{}: unknown set label {name}", path.display(), idx + 1))
            })?;
            labels.insert(l);
        }
        if labels.is_empty() {
            return Err(CliError::user(format!(
                "{}:{}: empty prediction set",
                path.display(),
                idx + 1
            )));
        }
        top1.push(label);
        sets.insert(face, PredictionSet { labels });
    }
    Ok((top1, sets))
}

pub fn cmd_project(
    config: &RunConfig,
    pred: &Path,
    mesh_path: &Path,
    surfaces: &Path,
    out: &Path,
) -> CliResult {
    let (_, sets) = load_predictions(pred)?;
    let mesh = load_mesh(mesh_path, None).map_err(user_err)?;
    if sets.len() != mesh.face_count() {
        return Err(CliError::user(format!(
            "predictions cover {} faces but the mesh has {}",
            sets.len(),
            mesh.face_count()
        )));
    }
    let grids = load_surface_grids(surfaces).map_err(user_err)?;
    let priority = config.refinement_priority().map_err(user_err)?;
    let centroids = face_centroids(&mesh);
    let assignments = assign_faces(&centroids, &grids).map_err(user_err)?;
    let classifications =
        classify_surfaces(&assignments, &sets, &priority).map_err(internal_err)?;
    save_classifications(&classifications, out).map_err(internal_err)?;
    println!(
        "classified {} surfaces into {}",
        classifications.len(),
        out.display()
    );
    Ok(())
}

/// Reads the classifications CSV written by `cmd_project`.
pub fn load_classifications(path: &Path) -> Result<Vec<SurfaceClassification>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::user(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + NUM_CLASSES {
            return Err(CliError::user(format!(
                "{}:{}: expected {} fields",
                path.display(),
                idx + 1,
                3 + NUM_CLASSES
            )));
        }
        let bad = |what: &str| {
            CliError::user(format!("{}:{}: bad {what}", path.display(), idx + 1))
        };
        let surface: u32 = fields[0].parse().map_err(|_| bad("surface id"))?;
        let label = PartLabel::from_name(fields[1]).ok_or_else(|| bad("label"))?;
        let mode = match fields[2] {
            "majority" => DecisionMode::Majority,
            "conservative-tiebreak" => DecisionMode::ConservativeTiebreak,
            _ => return Err(bad("mode")),
        };
        let mut votes = [0u32; NUM_CLASSES];
        for (v, f) in votes.iter_mut().zip(&fields[3..]) {
            *v = f.parse().map_err(|_| bad("vote count"))?;
        }
        out.push(SurfaceClassification {
            surface,
            label,
            votes,
            mode,
        });
    }
    Ok(out)
}

pub fn cmd_emit(config: &RunConfig, classifications: &Path, out: &Path) -> CliResult {
    let classifications = load_classifications(classifications)?;
    let rules = config.rule_database().map_err(user_err)?;
    emit_settings(&classifications, &rules, out).map_err(internal_err)?;
    println!(
        "emitted settings for {} surfaces to {}",
        classifications.len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    face_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    faces: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    surface_total: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    surface_incorrect: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    surface_under_refined: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    surface_over_refined: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    surface_accuracy: Option<f64>,
}

pub fn cmd_eval(
    config: &RunConfig,
    pred: Option<&Path>,
    labels: Option<&Path>,
    classifications: Option<&Path>,
    surfaces: Option<&Path>,
    out: Option<&Path>,
) -> CliResult {
    let mut report = EvalReport {
        face_accuracy: None,
        faces: None,
        surface_total: None,
        surface_incorrect: None,
        surface_under_refined: None,
        surface_over_refined: None,
        surface_accuracy: None,
    };
    match (pred, labels) {
        (Some(pred), Some(labels)) => {
            let (top1, _) = load_predictions(pred)?;
            let truth = crate::geometry::load_labels(labels).map_err(user_err)?;
            if truth.len() != top1.len() {
                return Err(CliError::user(format!(
                    "{} predictions vs {} labels",
                    top1.len(),
                    truth.len()
                )));
            }
            let correct = top1.iter().zip(&truth).filter(|(a, b)| a == b).count();
            report.faces = Some(truth.len());
            report.face_accuracy = Some(correct as f64 / truth.len().max(1) as f64);
        }
        (None, None) => {}
        _ => {
            return Err(CliError::user(
                "face evaluation needs both --pred and --labels",
            ))
        }
    }
    match (classifications, surfaces) {
        (Some(cls_path), Some(surfaces)) => {
            let cls = load_classifications(cls_path)?;
            let grids = load_surface_grids(surfaces).map_err(user_err)?;
            let truths: BTreeMap<u32, PartLabel> = grids
                .iter()
                .enumerate()
                .filter_map(|(i, g)| g.true_label.map(|l| (i as u32, l)))
                .collect();
            if truths.is_empty() {
                return Err(CliError::user(
                    "surface file has no true labels to evaluate against",
                ));
            }
            let priority = config.refinement_priority().map_err(user_err)?;
            let r = evaluate_surfaces(&cls, &truths, &priority);
            report.surface_total = Some(r.total);
            report.surface_incorrect = Some(r.incorrect);
            report.surface_under_refined = Some(r.under_refined);
            report.surface_over_refined = Some(r.over_refined);
            report.surface_accuracy = Some(r.accuracy);
        }
        (None, None) => {}
        _ => {
            return Err(CliError::user(
                "surface evaluation needs both --classifications and --surfaces",
            ))
        }
    }
    let json = serde_json::to_string_pretty(&report).map_err(internal_err)?;
    println!("{json}");
    if let Some(out) = out {
        write_atomic(out, json.as_bytes())?;
    }
    Ok(())
}
