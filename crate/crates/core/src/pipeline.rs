//! Experiment configs, presets and the commands behind the `bisimlab` binary.
//!
//! Every command writes its artifacts into one output directory together with
//! a `manifest.json` holding the resolved config, the seed and the SHA-256 of
//! each artifact. Nothing written depends on wall-clock time, so reruns with
//! the same inputs produce identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{self, EmbeddingSet};
use crate::bisim::{self, AuxTolerance};
use crate::dataset::{collect_dataset, CollectedData, TransitionDataset};
use crate::empirical::empirical_lfp;
use crate::env::CountingEnvConfig;
use crate::error::{Error, Result};
use crate::mdp::{counting_abstract_mdp, DeterministicMdp};
use crate::model::{ConvSpec, ModelParams};
use crate::relation::{PairRelation, Partition};
use crate::train::{self, AuxMode, TrainConfig, TrainingData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    RewardAux,
    RandomAux,
    RewardOnly,
    DynOnly,
    TabularCounting,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::RewardAux,
        Preset::RandomAux,
        Preset::RewardOnly,
        Preset::DynOnly,
        Preset::TabularCounting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::RewardAux => "reward_aux",
            Preset::RandomAux => "random_aux",
            Preset::RewardOnly => "reward_only",
            Preset::DynOnly => "dyn_only",
            Preset::TabularCounting => "tabular_counting",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observations {
    /// One-hot ids of the abstract counting MDP, every transition once.
    Tabular,
    /// Rendered frames collected with a random policy.
    Images,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub observations: Observations,
    pub collect_steps: usize,
    pub action_repeat: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            observations: Observations::Images,
            collect_steps: 10_000,
            action_repeat: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Held-out observations embedded for evaluation.
    pub sample_size: usize,
    /// Absolute collapse threshold; when unset, `eps_relative` times the
    /// median pairwise distance is used, floored at [`EPS_COLLAPSE_FLOOR`].
    pub eps_collapse: Option<f64>,
    pub eps_relative: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            sample_size: 256,
            eps_collapse: None,
            eps_relative: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub env: CountingEnvConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::RewardAux)
    }
}

/// Threshold used when the embeddings have no spread at all.
pub const EPS_COLLAPSE_FLOOR: f64 = 1e-6;

impl AnalysisConfig {
    /// `eps_relative · median`, but never below [`EPS_COLLAPSE_FLOOR`]; a
    /// fully collapsed encoder has median 0 and would otherwise pass.
    pub fn relative_eps(&self, median_distance: f64) -> f64 {
        (self.eps_relative * median_distance).max(EPS_COLLAPSE_FLOOR)
    }
}

impl ExperimentConfig {
    /// The fully specified config a preset stands for.
    pub fn preset(preset: Preset) -> Self {
        let image_train = TrainConfig {
            conv: Some(ConvSpec {
                kernel: 4,
                stride: 2,
                filters: 16,
                pointwise: vec![16],
            }),
            encoder_hidden: vec![64],
            dynamics_hidden: 64,
            aux_hidden: 64,
            decoder_hidden: 16,
            base_lr: 1e-3,
            encoder_lr_scale: 1.0,
            steps: 8_000,
            ..TrainConfig::default()
        };
        let (data, train) = match preset {
            Preset::RewardAux => (DataConfig::default(), image_train),
            Preset::RandomAux => (
                DataConfig::default(),
                TrainConfig {
                    aux_mode: AuxMode::RandomLinear(64),
                    ..image_train
                },
            ),
            Preset::RewardOnly => (
                DataConfig::default(),
                TrainConfig {
                    dyn_loss_enabled: false,
                    base_lr: 1e-5,
                    ..image_train
                },
            ),
            Preset::DynOnly => (
                DataConfig::default(),
                TrainConfig {
                    aux_mode: AuxMode::None,
                    ..image_train
                },
            ),
            Preset::TabularCounting => (
                DataConfig {
                    observations: Observations::Tabular,
                    ..DataConfig::default()
                },
                TrainConfig {
                    encoder_hidden: vec![64],
                    dynamics_hidden: 64,
                    aux_hidden: 64,
                    decoder_hidden: 32,
                    base_lr: 1e-3,
                    batch_size: 18,
                    steps: 20_000,
                    ..TrainConfig::default()
                },
            ),
        };
        Self {
            preset: Some(preset),
            seed: 0,
            out_dir: PathBuf::from("out"),
            env: CountingEnvConfig::default(),
            data,
            train,
            analysis: AnalysisConfig::default(),
        }
    }

    /// Preset expansion, then the fields present in `overrides` on top.
    pub fn resolve(preset: Option<Preset>, overrides: Option<&Value>) -> Result<Self> {
        let mut base = serde_json::to_value(Self::preset(preset.unwrap_or(Preset::RewardAux)))?;
        if let Some(o) = overrides {
            merge(&mut base, o);
        }
        let mut cfg: Self = serde_json::from_value(base)
            .map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        if preset.is_some() {
            cfg.preset = preset;
        }
        Ok(cfg)
    }

    /// Copies the top-level seed into every seeded component.
    pub fn propagate_seed(&mut self) {
        self.env.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        if self.data.collect_steps == 0 {
            return Err(Error::InvalidConfig("collect_steps must be positive".into()));
        }
        if self.analysis.sample_size < 2 {
            return Err(Error::InvalidConfig("analysis sample_size must be at least 2".into()));
        }
        Ok(())
    }

    /// The abstract counting MDP behind the environment.
    pub fn abstract_mdp(&self) -> Result<DeterministicMdp> {
        counting_abstract_mdp(self.env.max_count, self.env.target_n)
    }

    pub fn collect(&self) -> Result<CollectedData> {
        collect_dataset(&self.env, self.data.collect_steps, self.data.action_repeat)
    }

    pub fn training_data(&self) -> Result<TrainingData> {
        match self.data.observations {
            Observations::Tabular => {
                let dataset = TransitionDataset::full_coverage(&self.abstract_mdp()?);
                TrainingData::tabular(&dataset, self.analysis.sample_size)
            }
            Observations::Images => {
                TrainingData::frames(&self.collect()?, &self.env, self.analysis.sample_size)
            }
        }
    }
}

/// Recursively overlays `patch` onto `base`; objects merge, everything else
/// replaces.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files into an output directory and remembers their hashes.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl ArtifactWriter {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            hashes: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.hashes.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Hashes of everything written so far, by file name.
    pub fn hashes(&self) -> &BTreeMap<String, String> {
        &self.hashes
    }

    /// Writes `manifest.json` (not itself hashed) and returns it.
    pub fn finish(self, command: &str, seed: Option<u64>, config: Value) -> Result<Manifest> {
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            artifacts: self.hashes,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Iterate the distinguishability operator from the empty relation.
    Naive,
    /// Moore-style partition refinement (exact aux comparison only).
    Refine,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Engine::Naive),
            "refine" => Ok(Engine::Refine),
            _ => Err(Error::InvalidConfig(format!("unknown engine {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisimSummary {
    pub engine: Engine,
    pub num_observations: usize,
    pub num_blocks: usize,
    pub pairs_in_r: usize,
    pub iterations: usize,
    pub fixed_point_verified: bool,
}

/// `R*` and its quotient for one MDP.
pub fn run_bisim(mdp: &DeterministicMdp, engine: Engine, tol: AuxTolerance) -> Result<(PairRelation, Partition, BisimSummary)> {
    mdp.ensure_valid()?;
    let (relation, partition, iterations) = match engine {
        Engine::Naive => {
            let fp = bisim::least_fixed_point(mdp, tol)?;
            let partition = bisim::complement_partition(&fp.relation)?;
            (fp.relation, partition, fp.iterations)
        }
        Engine::Refine => {
            if tol != AuxTolerance::EXACT {
                return Err(Error::InvalidConfig(
                    "the refine engine compares aux values exactly".into(),
                ));
            }
            let out = bisim::partition_refine(mdp)?;
            (out.partition.separated_pairs(), out.partition, out.rounds)
        }
    };
    let fixed_point_verified = bisim::is_fixed_point(mdp, &relation, tol)?;
    let summary = BisimSummary {
        engine,
        num_observations: mdp.num_observations,
        num_blocks: partition.num_blocks,
        pairs_in_r: relation.len() / 2,
        iterations,
        fixed_point_verified,
    };
    Ok((relation, partition, summary))
}

pub fn cmd_bisim(mdp: &DeterministicMdp, engine: Engine, tol: AuxTolerance, out_dir: &Path) -> Result<(BisimSummary, Manifest)> {
    let (relation, partition, summary) = run_bisim(mdp, engine, tol)?;
    let mut w = ArtifactWriter::new(out_dir)?;
    w.write("relation.csv", relation.to_csv().as_bytes())?;
    w.write("partition.csv", partition.to_csv().as_bytes())?;
    w.write_json("summary.json", &summary)?;
    w.write_json("mdp.json", mdp)?;
    let config = json!({ "engine": engine, "aux_tolerance": tol.0 });
    let manifest = w.finish("bisim", None, config)?;
    Ok((summary, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSummary {
    pub num_observations: usize,
    pub num_records: usize,
    pub num_sources: usize,
    pub pairs_in_r: usize,
    pub iterations: usize,
    pub transitive_complement: bool,
    /// Blocks of the complement, when it is an equivalence.
    pub num_blocks: Option<usize>,
}

pub fn cmd_empirical_bisim(dataset: &TransitionDataset, tol: AuxTolerance, out_dir: &Path) -> Result<(EmpiricalSummary, Manifest)> {
    let result = empirical_lfp(dataset, tol)?;
    let partition = result
        .transitive_complement
        .then(|| bisim::complement_partition(&result.relation.restricted_to(&result.sources)).ok())
        .flatten();
    let summary = EmpiricalSummary {
        num_observations: dataset.num_observations,
        num_records: dataset.len(),
        num_sources: result.sources.iter().filter(|&&s| s).count(),
        pairs_in_r: result.relation.len() / 2,
        iterations: result.iterations,
        transitive_complement: result.transitive_complement,
        num_blocks: partition.as_ref().map(|p| p.num_blocks),
    };
    let mut w = ArtifactWriter::new(out_dir)?;
    w.write("relation.csv", result.relation.to_csv().as_bytes())?;
    if let Some(p) = &partition {
        w.write("partition.csv", p.to_csv().as_bytes())?;
    }
    w.write_json("summary.json", &summary)?;
    let manifest = w.finish("empirical-bisim", None, json!({ "aux_tolerance": tol.0 }))?;
    Ok((summary, manifest))
}

pub fn cmd_collect(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let mut w = ArtifactWriter::new(&cfg.out_dir)?;
    match cfg.data.observations {
        Observations::Tabular => {
            let mdp = cfg.abstract_mdp()?;
            let mut bytes = Vec::new();
            TransitionDataset::full_coverage(&mdp).write_to(&mut bytes)?;
            w.write("dataset.bslb", &bytes)?;
            w.write_json("mdp.json", &mdp)?;
        }
        Observations::Images => {
            let data = cfg.collect()?;
            let mut bytes = Vec::new();
            data.dataset.write_to(&mut bytes)?;
            w.write("dataset.bslb", &bytes)?;
            let (ppm, index) = (w.dir().join("frames.ppm"), w.dir().join("frames_index.csv"));
            data.save_frames(&ppm, &index)?;
            for (name, path) in [("frames.ppm", ppm), ("frames_index.csv", index)] {
                let bytes = std::fs::read(&path)?;
                w.write(name, &bytes)?;
            }
        }
    }
    w.finish("collect", Some(cfg.seed), serde_json::to_value(cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_loss: train::LossReport,
    pub best_step: Option<usize>,
    pub best_centroid_acc: Option<f64>,
    pub num_parameters: usize,
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<(train::TrainOutcome, Manifest)> {
    cfg.validate()?;
    let data = cfg.training_data()?;
    let outcome = train::train(&cfg.train, &data)?;
    let config_json = serde_json::to_string(cfg)?;
    let mut w = ArtifactWriter::new(&cfg.out_dir)?;
    w.write("metrics.jsonl", train::metrics_jsonl(&outcome.metrics).as_bytes())?;
    let mut bytes = Vec::new();
    outcome.params.write_checkpoint(&mut bytes, &config_json)?;
    w.write("final.ckpt", &bytes)?;
    if let Some(best) = &outcome.best {
        let mut bytes = Vec::new();
        best.params.write_checkpoint(&mut bytes, &config_json)?;
        w.write("best.ckpt", &bytes)?;
    }
    w.write_json(
        "train_summary.json",
        &TrainSummary {
            steps: cfg.train.steps,
            final_loss: outcome.last_report,
            best_step: outcome.best.as_ref().map(|b| b.step),
            best_centroid_acc: outcome.best.as_ref().map(|b| b.centroid_acc),
            num_parameters: outcome.params.num_parameters(),
        },
    )?;
    let manifest = w.finish("train", Some(cfg.seed), serde_json::to_value(cfg)?)?;
    Ok((outcome, manifest))
}

/// Parameters and the experiment config stored in a checkpoint.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, ExperimentConfig)> {
    let (params, config) = ModelParams::load(path)?;
    let cfg = serde_json::from_value(config)
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    Ok((params, cfg))
}

/// Held-out embeddings of a trained model, labelled by count (or id).
pub fn holdout_embeddings(params: &ModelParams, cfg: &ExperimentConfig) -> Result<EmbeddingSet> {
    cfg.training_data()?.holdout_embeddings(params)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisSummary {
    pub num_embeddings: usize,
    pub centroid_acc: f64,
    pub collapse_ratio: f64,
    pub median_within_label: f64,
    pub median_across_labels: f64,
    pub pca_explained_variance: [f64; 2],
}

pub fn analyze(embs: &EmbeddingSet) -> Result<(AnalysisSummary, analysis::Pca, analysis::DistanceMatrix)> {
    let pca = analysis::pca_2d(embs)?;
    let distances = analysis::pairwise_distances(embs);
    let s = analysis::distance_summary(embs);
    let summary = AnalysisSummary {
        num_embeddings: embs.len(),
        centroid_acc: analysis::nearest_centroid_accuracy(embs)?,
        collapse_ratio: analysis::collapse_ratio(embs)?,
        median_within_label: s.median_within_label,
        median_across_labels: s.median_across_labels,
        pca_explained_variance: pca.explained_variance,
    };
    Ok((summary, pca, distances))
}

pub fn cmd_analyze(checkpoint: &Path, out_dir: &Path) -> Result<(AnalysisSummary, Manifest)> {
    let (params, cfg) = load_checkpoint(checkpoint)?;
    let embs = holdout_embeddings(&params, &cfg)?;
    let (summary, pca, distances) = analyze(&embs)?;
    let mut w = ArtifactWriter::new(out_dir)?;
    w.write("pca.csv", pca.to_csv(&embs.labels).as_bytes())?;
    w.write("distances.csv", distances.to_csv().as_bytes())?;
    w.write("heatmap.ppm", &distances.to_ppm())?;
    w.write_json("analysis.json", &summary)?;
    let config = json!({ "checkpoint_sha256": sha256_hex(&std::fs::read(checkpoint)?), "experiment": cfg });
    let manifest = w.finish("analyze", Some(cfg.seed), config)?;
    Ok((summary, manifest))
}

/// Runs the collapse check and writes `collapse_report.json`. The caller
/// decides what a failing verdict means.
pub fn cmd_verify(checkpoint: &Path, eps_collapse: Option<f64>, out_dir: &Path) -> Result<(analysis::CollapseReport, Manifest)> {
    let (params, cfg) = load_checkpoint(checkpoint)?;
    let embs = holdout_embeddings(&params, &cfg)?;
    let eps = eps_collapse
        .or(cfg.analysis.eps_collapse)
        .unwrap_or_else(|| cfg.analysis.relative_eps(analysis::median_pairwise_distance(&embs)));
    let r_star = bisim::least_fixed_point(&cfg.abstract_mdp()?, AuxTolerance::EXACT)?.relation;
    let report = analysis::verify_no_collapse(&embs, &r_star, eps)?;
    let mut w = ArtifactWriter::new(out_dir)?;
    w.write_json("collapse_report.json", &report.to_json())?;
    let config = json!({
        "checkpoint_sha256": sha256_hex(&std::fs::read(checkpoint)?),
        "eps_collapse": eps,
        "experiment": cfg,
    });
    let manifest = w.finish("verify", Some(cfg.seed), config)?;
    Ok((report, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_expand_and_validate() {
        for p in Preset::ALL {
            let cfg = ExperimentConfig::preset(p);
            cfg.validate().unwrap();
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            let json = serde_json::to_value(&cfg).unwrap();
            assert_eq!(json["preset"], p.name());
            assert_eq!(ExperimentConfig::resolve(Some(p), None).unwrap(), cfg);
        }
        assert_eq!(ExperimentConfig::preset(Preset::RewardOnly).train.base_lr, 1e-5);
        assert!(!ExperimentConfig::preset(Preset::RewardOnly).train.dyn_loss_enabled);
        assert_eq!(ExperimentConfig::preset(Preset::DynOnly).train.aux_mode, AuxMode::None);
    }

    #[test]
    fn overrides_win_over_preset() {
        let patch = json!({ "train": { "c_p": 0.5, "steps": 7 }, "seed": 3 });
        let cfg = ExperimentConfig::resolve(Some(Preset::DynOnly), Some(&patch)).unwrap();
        assert_eq!(cfg.train.c_p, 0.5);
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.seed, 3);
        // Untouched nested fields keep the preset value.
        assert_eq!(cfg.train.aux_mode, AuxMode::None);
        let bad = json!({ "train": { "aux_mode": "sometimes" } });
        assert!(ExperimentConfig::resolve(None, Some(&bad)).is_err());
    }

    #[test]
    fn engines_agree_on_counting() {
        let mdp = counting_abstract_mdp(8, 4).unwrap();
        let (ra, pa, sa) = run_bisim(&mdp, Engine::Naive, AuxTolerance::EXACT).unwrap();
        let (rb, pb, sb) = run_bisim(&mdp, Engine::Refine, AuxTolerance::EXACT).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(pa.canonical(), pb.canonical());
        assert_eq!((sa.num_blocks, sb.num_blocks), (9, 9));
        assert!(sa.fixed_point_verified && sb.fixed_point_verified);
        assert_eq!(sa.pairs_in_r, 36);
    }

    #[test]
    fn sha256_reference() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
