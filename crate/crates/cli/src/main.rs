use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use rfsplat::config::RunConfig;
use rfsplat::eval::{export_reconstruction, SphereRecord};
use rfsplat::features::{EntryObservation, FeatureMap, Standardizer};
use rfsplat::io::{load_weights, read_dataset, save_weights, DatasetWriter};
use rfsplat::model::tape::Mat;
use rfsplat::model::{grad_check, Model, ModelConfig, TrainSample};
use rfsplat::oracle::lens_oracle_check;
use rfsplat::pipeline::{evaluate_records, train_model, truth_set, Pipeline};
use rfsplat::scene::SceneRecord;
use rfsplat::{par, Error, FormatError};

#[derive(Parser)]
#[command(name = "rfsplat", version, about = "RIS-assisted RF reconstruction with material-aware spheres")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration (JSON); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set model.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default().resolved()?,
        };
        let mut sets = self.overrides.clone();
        if let Some(s) = self.seed {
            sets.push(format!("master_seed={s}"));
        }
        Ok(base.with_overrides(&sets)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw scene records.
    GenScenes {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        count: Option<usize>,
        /// First scene id.
        #[arg(long, default_value_t = 0)]
        start: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trace and synthesize wavefronts for every codebook entry.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn simulation output into feature maps.
    ExtractFeatures {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate scenes, simulate and write train/val/test datasets.
    BuildDataset {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = rfsplat::config::DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Export the detections of one scene as a PLY sphere cloud.
    Reconstruct {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Record position within the dataset.
        #[arg(long, default_value_t = 0)]
        scene: usize,
        #[arg(long, default_value_t = rfsplat::config::DEFAULT_TAU)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of a tiny model's gradients.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
    },
    /// Lens volume versus Monte Carlo on random sphere pairs.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Serialize, Deserialize)]
struct SceneEntry {
    id: u64,
    scene: SceneRecord,
}

#[derive(Serialize, Deserialize)]
struct SimEntry {
    id: u64,
    observations: Vec<EntryObservation>,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer(f, v)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f)).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?)
}

fn out_dir(path: &Path) -> PathBuf {
    path.parent().filter(|d| !d.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn run(cli: Cli) -> Result<()> {
    let workers = par::init_from_env();
    let t0 = Instant::now();
    match cli.command {
        Command::GenScenes { cfg, count, start, out } => {
            let mut c = cfg.load()?;
            if let Some(n) = count {
                c.dataset.n_scenes = n;
            }
            let p = Pipeline::new(c.clone())?;
            let ids: Vec<u64> = (start..start + c.dataset.n_scenes as u64).collect();
            let scenes = par::map_slice(&ids, |&id| p.scene(id).map(|scene| SceneEntry { id, scene }))
                .into_iter()
                .collect::<rfsplat::Result<Vec<_>>>()?;
            write_json(&out, &scenes)?;
            c.echo_to(&out_dir(&out))?;
            println!("summary command=gen-scenes scenes={} seed={} out={}", scenes.len(), c.master_seed, out.display());
        }
        Command::Simulate { cfg, scenes, out } => {
            let c = cfg.load()?;
            let p = Pipeline::new(c.clone())?;
            let input: Vec<SceneEntry> = read_json(&scenes)?;
            let sims = par::map_slice(&input, |e| p.observe(e.id, &e.scene).map(|observations| SimEntry { id: e.id, observations }))
                .into_iter()
                .collect::<rfsplat::Result<Vec<_>>>()?;
            let paths: usize = sims.iter().flat_map(|s| &s.observations).flat_map(|o| &o.paths).map(Vec::len).sum();
            write_json(&out, &sims)?;
            c.echo_to(&out_dir(&out))?;
            println!("summary command=simulate scenes={} paths={} out={}", sims.len(), paths, out.display());
        }
        Command::ExtractFeatures { cfg, sim, out } => {
            let c = cfg.load()?;
            let p = Pipeline::new(c.clone())?;
            let sims: Vec<SimEntry> = read_json(&sim)?;
            let maps = sims
                .iter()
                .map(|s| p.features(s.id, &s.observations))
                .collect::<rfsplat::Result<Vec<FeatureMap>>>()?;
            let degenerate: usize = maps.iter().map(|m| m.degenerate_antennas).sum();
            write_json(&out, &maps)?;
            c.echo_to(&out_dir(&out))?;
            println!("summary command=extract-features maps={} degenerate_antennas={} out={}", maps.len(), degenerate, out.display());
        }
        Command::BuildDataset { cfg, count, out } => {
            let mut c = cfg.load()?;
            if let Some(n) = count {
                c.dataset.n_scenes = n;
            }
            let p = Pipeline::new(c.clone())?;
            std::fs::create_dir_all(&out)?;
            let mut sizes = Vec::new();
            for (name, range) in ["train", "val", "test"].into_iter().zip(c.dataset.split()) {
                let path = out.join(format!("{name}.ds"));
                let f = std::io::BufWriter::new(std::fs::File::create(&path)?);
                let mut w = DatasetWriter::new(f, p.dataset_header())?;
                // bounded batches keep memory flat; records stay in id order
                let ids: Vec<u64> = range.collect();
                for chunk in ids.chunks(64) {
                    let recs = p.records(chunk[0]..chunk[chunk.len() - 1] + 1)?;
                    for r in &recs {
                        w.write(r)?;
                    }
                }
                sizes.push(w.written());
                w.finish()?;
            }
            c.echo_to(&out)?;
            println!(
                "summary command=build-dataset train={} val={} test={} workers={} seconds={:.1} out={}",
                sizes[0],
                sizes[1],
                sizes[2],
                workers,
                t0.elapsed().as_secs_f64(),
                out.display()
            );
        }
        Command::Train { cfg, dataset, val, out } => {
            let c = cfg.load()?;
            let (header, train) = read_dataset(&dataset)?;
            let val = match &val {
                Some(v) => read_dataset(v)?.1,
                None => Vec::new(),
            };
            let names: Vec<String> = header.materials.iter().map(|m| m.name.clone()).collect();
            if names != c.scene.materials || header.n_configs != c.codebook.n_entries {
                bail!(Error::Config("dataset materials or configuration count differ from the run configuration".into()));
            }
            let dir = out_dir(&out);
            std::fs::create_dir_all(&dir)?;
            let mut curve = String::from("epoch,train_loss,val_loss,l1,giou,nll\n");
            let (model, log) = train_model(&c.model, c.scene.geometry_norm(), &train, &val, |e| {
                eprintln!("epoch {} train {:.5} val {}", e.epoch, e.train_loss, e.val_loss.map_or("-".into(), |v| format!("{v:.5}")));
                curve.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    e.epoch,
                    e.train_loss,
                    e.val_loss.map_or(String::new(), |v| v.to_string()),
                    e.train_breakdown.l1,
                    e.train_breakdown.giou,
                    e.train_breakdown.nll
                ));
            })?;
            save_weights(&out, &model)?;
            std::fs::write(dir.join("loss_curve.csv"), curve)?;
            c.echo_to(&dir)?;
            let last = log.last().map_or(f64::NAN, |e| e.train_loss);
            println!(
                "summary command=train samples={} epochs={} final_train_loss={last:.6} seconds={:.1} out={}",
                train.len(),
                log.len(),
                t0.elapsed().as_secs_f64(),
                out.display()
            );
        }
        Command::Eval { dataset, weights, tau, out } => {
            let model = load_weights(&weights)?;
            let (header, records) = read_dataset(&dataset)?;
            let names: Vec<String> = header.materials.iter().map(|m| m.name.clone()).collect();
            let (report, _) = evaluate_records(&model, &records, tau, &names)?;
            report.write_to(&out)?;
            println!(
                "summary command=eval scenes={} matched={} missed={} spurious={} accuracy={:.4} mae_x={:.4} mae_y={:.4} mae_z={:.4} mae_r={:.4} out={}",
                report.n_scenes,
                report.matched,
                report.missed,
                report.spurious,
                report.accuracy,
                report.mae[0],
                report.mae[1],
                report.mae[2],
                report.mae[3],
                out.display()
            );
        }
        Command::Reconstruct { dataset, weights, scene, tau, out } => {
            let model = load_weights(&weights)?;
            let (header, records) = read_dataset(&dataset)?;
            let rec = records
                .get(scene)
                .ok_or_else(|| Error::IncompleteInput(format!("dataset has {} records, no index {scene}", records.len())))?;
            let det = model.predict_and_filter(&rec.features, tau)?;
            let spheres: Vec<SphereRecord> = (&det).into();
            let names: Vec<String> = header.materials.iter().map(|m| m.name.clone()).collect();
            export_reconstruction(&out, &spheres, &names)?;
            println!(
                "summary command=reconstruct scene_id={} spheres={} truth={} out={}",
                rec.features.scene_id,
                spheres.len(),
                rec.scene.spheres.len(),
                out.display()
            );
        }
        Command::GradCheck { seed, step } => {
            let cfg = ModelConfig {
                input_channels: 10,
                grid: (4, 4),
                hidden_dim: 16,
                heads: 2,
                encoder_layers: 1,
                decoder_layers: 1,
                ff_dim: 16,
                n_queries: 4,
                n_classes: 4,
                seed,
                ..Default::default()
            };
            let c = RunConfig::default();
            let model = Model::init(cfg.clone(), Standardizer::identity(10), c.scene.geometry_norm())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = Normal::new(0.0, 1.0).expect("unit normal");
            let input = Mat::from_vec(16, 10, (0..160).map(|_| n.sample(&mut rng)).collect());
            let p = Pipeline::new(c.with_overrides(&["scene.spheres_per_scene=2".into(), "scene.materials=[\"metal\",\"glass\",\"wood\"]".into()])?)?;
            let truth = truth_set(&p.scene(seed)?, &model.norm);
            let r = grad_check(&model, &TrainSample { input, truth }, &cfg.loss_weights, step)?;
            println!(
                "summary command=grad-check parameters={} max_rel_error={:.3e} worst={}[{}] analytic={:.6e} numeric={:.6e}",
                r.checked, r.max_rel_error, r.worst_parameter, r.worst_index, r.analytic, r.numeric
            );
        }
        Command::OracleCheck { pairs, samples, seed } => {
            let s = lens_oracle_check(pairs, samples, seed);
            println!(
                "summary command=oracle-check pairs={} samples={} max_abs_deviation={:.6e} max_sigma_ratio={:.3} beyond_3_sigma={}",
                s.pairs, s.samples, s.max_abs_deviation, s.max_sigma_ratio, s.beyond_3_sigma
            );
        }
    }
    Ok(())
}

/// Exit codes: 2 usage, 3 configuration, 4 missing input / I/O, 5 file
/// format, 6 invalid or incomplete input, 7 training divergence, 1 other.
fn exit_code(e: &anyhow::Error) -> (u8, &'static str) {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => (3, "config"),
        Some(Error::Io(_)) => (4, "io"),
        Some(Error::Format(FormatError::VersionMismatch { .. })) => (5, "version"),
        Some(Error::Format(_)) => (5, "format"),
        Some(Error::InvalidInput(_)) | Some(Error::PlacementInfeasible { .. }) => (6, "invalid-input"),
        Some(Error::IncompleteInput(_)) => (6, "incomplete-input"),
        Some(Error::Divergence { .. }) => (7, "divergence"),
        None if e.downcast_ref::<std::io::Error>().is_some() => (4, "io"),
        None => (1, "error"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = exit_code(&e);
            eprintln!("error[{kind}]: {e:#}");
            println!("summary status=error kind={kind}");
            ExitCode::from(code)
        }
    }
}
