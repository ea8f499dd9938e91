//! End-to-end stages wired to one [`RunConfig`]: scenes, propagation,
//! features, datasets, training and evaluation.

use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, STREAM_CODEBOOK, STREAM_NOISE, STREAM_SCENES};
use crate::error::Result;
use crate::eval::{evaluate, EvalReport, SceneEval};
use crate::features::{assemble_feature_map, EntryObservation, FeatureMap, Standardizer};
use crate::io::{DatasetHeader, DatasetRecord};
use crate::matching::{GeometryNorm, TruthSet};
use crate::model::tape::Mat;
use crate::model::{train, DetectionSet, EpochLog, Model, ModelConfig, TrainSample};
use crate::par;
use crate::propagation::{build_codebook, synthesize_wavefront, Tracer};
use crate::scene::{derive_seed, generate_scene, MaterialSpec, SceneParams, SceneRecord};

pub struct Pipeline {
    pub config: RunConfig,
    pub scene_params: SceneParams,
    pub tracer: Tracer,
    entries: Vec<usize>,
    noise_variance: f64,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        let config = config.resolved()?;
        let scene_params = config.scene.params()?;
        let cb = &config.codebook;
        let book = build_codebook(
            &config.simulation,
            config.stream_seed(STREAM_CODEBOOK),
            cb.n_entries,
            cb.realizations_per_panel,
        )?;
        let tracer = Tracer::new(&config.simulation, &book)?;
        let noise_variance = config.simulation.resolved_noise_variance();
        Ok(Self { entries: (0..cb.n_entries).collect(), noise_variance, config, scene_params, tracer })
    }

    pub fn materials(&self) -> &[MaterialSpec] {
        &self.scene_params.materials
    }

    pub fn class_names(&self) -> Vec<String> {
        self.scene_params.materials.iter().map(|m| m.name.clone()).collect()
    }

    pub fn geometry_norm(&self) -> GeometryNorm {
        self.config.scene.geometry_norm()
    }

    pub fn scene(&self, index: u64) -> Result<SceneRecord> {
        generate_scene(derive_seed(self.config.stream_seed(STREAM_SCENES), index), &self.scene_params)
    }

    /// Trace once, then apply every codebook entry and synthesize its
    /// wavefront with a noise seed tied to (scene, entry).
    pub fn observe(&self, scene_id: u64, scene: &SceneRecord) -> Result<Vec<EntryObservation>> {
        let geo = self.tracer.trace_geometry(scene);
        let noise_stream = self.config.stream_seed(STREAM_NOISE);
        let c = self.entries.len() as u64;
        self.entries
            .iter()
            .map(|&e| {
                let paths = self.tracer.components(&geo, Some(e))?;
                let seed = derive_seed(noise_stream, scene_id * c + e as u64);
                let wavefront = synthesize_wavefront(&paths, &self.config.simulation, self.noise_variance, seed);
                Ok(EntryObservation { entry: e, paths, wavefront })
            })
            .collect()
    }

    pub fn features(&self, scene_id: u64, observations: &[EntryObservation]) -> Result<FeatureMap> {
        assemble_feature_map(scene_id, self.config.simulation.rx_grid, &self.entries, observations)
    }

    pub fn record(&self, scene_id: u64) -> Result<DatasetRecord> {
        let scene = self.scene(scene_id)?;
        let obs = self.observe(scene_id, &scene)?;
        let features = self.features(scene_id, &obs)?;
        let paths = self.config.dataset.include_paths.then(|| obs.into_iter().map(|o| o.paths).collect());
        Ok(DatasetRecord { scene, features, paths })
    }

    /// Records for a range of scene ids, in id order.
    pub fn records(&self, ids: Range<u64>) -> Result<Vec<DatasetRecord>> {
        let ids: Vec<u64> = ids.collect();
        par::map_slice(&ids, |&i| self.record(i)).into_iter().collect()
    }

    pub fn dataset_header(&self) -> DatasetHeader {
        DatasetHeader::new(
            self.config.simulation.rx_grid,
            self.entries.clone(),
            self.scene_params.materials.clone(),
            self.config.dataset.include_paths,
        )
    }
}

pub fn truth_set(scene: &SceneRecord, norm: &GeometryNorm) -> TruthSet {
    TruthSet {
        geometry: scene.spheres.iter().map(|s| norm.normalize(&s.sphere)).collect(),
        labels: scene.spheres.iter().map(|s| s.material.class_index).collect(),
    }
}

pub fn training_samples(model: &Model, records: &[DatasetRecord]) -> Result<Vec<TrainSample>> {
    par::map_slice(records, |r| -> Result<TrainSample> {
        let input: Mat = model.prepare_input(&r.features)?;
        Ok(TrainSample { input, truth: truth_set(&r.scene, &model.norm) })
    })
    .into_iter()
    .collect()
}

/// Fit the standardizer on the training features, initialize and train.
pub fn train_model(
    config: &ModelConfig,
    norm: GeometryNorm,
    train_records: &[DatasetRecord],
    val_records: &[DatasetRecord],
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(Model, Vec<EpochLog>)> {
    let st = Standardizer::fit(train_records.iter().map(|r| &r.features))?;
    let mut model = Model::init(config.clone(), st, norm)?;
    let train_set = training_samples(&model, train_records)?;
    let val_set = training_samples(&model, val_records)?;
    let log = train(&mut model, &train_set, &val_set, on_epoch)?;
    Ok((model, log))
}

pub fn detect(model: &Model, records: &[DatasetRecord], tau: f64) -> Result<Vec<DetectionSet>> {
    par::map_slice(records, |r| model.predict_and_filter(&r.features, tau)).into_iter().collect()
}

pub fn evaluate_records(
    model: &Model,
    records: &[DatasetRecord],
    tau: f64,
    class_names: &[String],
) -> Result<(EvalReport, Vec<DetectionSet>)> {
    let dets = detect(model, records, tau)?;
    let scenes: Vec<SceneEval> = records
        .iter()
        .zip(&dets)
        .map(|(r, d)| SceneEval { scene_id: r.features.scene_id, detections: d, truth: &r.scene })
        .collect();
    let report = evaluate(&scenes, class_names, &model.norm, &model.config.loss_weights)?;
    Ok((report, dets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub simulate_s: f64,
    pub train_s: f64,
    pub eval_s: f64,
}

pub struct RunOutcome {
    pub report: EvalReport,
    pub log: Vec<EpochLog>,
    pub model: Model,
    pub train_records: Vec<DatasetRecord>,
    pub test_records: Vec<DatasetRecord>,
    pub detections: Vec<DetectionSet>,
    pub timings: StageTimings,
}

/// Generate, train and evaluate on the configured split.
pub fn run_end_to_end(config: &RunConfig, on_epoch: impl FnMut(&EpochLog)) -> Result<RunOutcome> {
    let p = Pipeline::new(config.clone())?;
    let t0 = Instant::now();
    let [tr, va, te] = p.config.dataset.split();
    let train_records = p.records(tr)?;
    let val_records = p.records(va)?;
    let test_records = p.records(te)?;
    let simulate_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (model, log) = train_model(&p.config.model, p.geometry_norm(), &train_records, &val_records, on_epoch)?;
    let train_s = t1.elapsed().as_secs_f64();
    let t2 = Instant::now();
    let (report, detections) = evaluate_records(&model, &test_records, p.config.tau, &p.class_names())?;
    let eval_s = t2.elapsed().as_secs_f64();
    Ok(RunOutcome {
        report,
        log,
        model,
        train_records,
        test_records,
        detections,
        timings: StageTimings { simulate_s, train_s, eval_s },
    })
}
