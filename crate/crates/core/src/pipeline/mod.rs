//! Batch pipeline: parse → fit → refine → facemap → quantize → features →
//! metrics over a dataset manifest, writing every stage's outputs and a
//! `manifest.json` of content hashes under a run directory.

mod config;
mod report;

pub use config::{RunConfig, KEYS};
pub use report::{AggregateMetrics, MetricReport, SequenceMetrics, REPORT_FORMAT, REPORT_VERSION};

use crate::audio::{content_features, fuse, read_word_timings, AudioTrack, EmbeddingTable, FusionWeights, RhythmFeatures};
use crate::body_model::{BodyModel, MarkerLayout};
use crate::bvh::{parse_bvh, skeleton_from_bvh, to_motion_clip_scaled, JointMap};
use crate::container::Container;
use crate::dataset::{split_dataset, DatasetManifest, Split};
use crate::face_map::{
    default_training_rows, map_weights, param_names, read_weight_csv, solve_transform, write_weight_csv, FaceMapError, LinearFace,
    EXPRESSION_PARAMS, NUM_BLENDSHAPES,
};
use crate::metrics::{
    beat_constancy, extract_motion_beats, fgd, foot_slide, l1_diversity_clips, lvd, onset_beats, vertex_mse, BeatSet, EmbeddingSet,
};
use crate::mosh::{fit_sequence, FitConfig, FitWeights, FrameSelection, MarkerSequence, MoshError, PosePrior};
use crate::motion::{label_contacts, MotionClip, Skeleton, JAW, NUM_JOINTS};
use crate::refine::{parse_rules, refine, FingerSpec, HeadProportions, RefineConfig};
use crate::rotation::{rot6d_from_matrix, rotation_vector_to_matrix};
use crate::vq::{CompositeQuantizer, LearnConfig, SegmentSpec};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Parse,
    Fit,
    Refine,
    FaceMap,
    Quantize,
    Features,
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 7] = [Stage::Parse, Stage::Fit, Stage::Refine, Stage::FaceMap, Stage::Quantize, Stage::Features, Stage::Metrics];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Parse => "parse",
            Stage::Fit => "fit",
            Stage::Refine => "refine",
            Stage::FaceMap => "facemap",
            Stage::Quantize => "quantize",
            Stage::Features => "features",
            Stage::Metrics => "metrics",
        }
    }

    pub fn from_name(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage}: {message}")]
    Data { stage: Stage, message: String },
    #[error("stage {stage}: numeric failure: {message}")]
    Numeric { stage: Stage, message: String },
}

impl PipelineError {
    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data { .. } => 3,
            PipelineError::Numeric { .. } => 4,
        }
    }
}

fn data(stage: Stage) -> impl Fn(&dyn fmt::Display) -> PipelineError {
    move |e| PipelineError::Data { stage, message: e.to_string() }
}

fn numeric(stage: Stage, message: impl Into<String>) -> PipelineError {
    PipelineError::Numeric { stage, message: message.into() }
}

struct Sequence {
    id: String,
    split: Option<Split>,
    clip: MotionClip,
    recon: Option<MotionClip>,
    fit_rms: Option<f64>,
    head_scale: Option<f64>,
    finger_frames: Option<usize>,
    truncated_frames: Option<usize>,
    vq_mse: BTreeMap<String, f64>,
    audio_beats: Option<BeatSet>,
    mean_alpha: Option<f64>,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    dataset_dir: PathBuf,
    manifest: DatasetManifest,
    skeleton: Option<Skeleton>,
    seqs: Vec<Sequence>,
    notes: Vec<String>,
    seed: u64,
}

/// Hex SHA-256 of a file.
pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn stage_files(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            stage_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            out.push((rel, sha256_file(&p)?));
        }
    }
    Ok(())
}

/// Relative path and SHA-256 of every file under `dir`, sorted by path.
pub fn output_hashes(dir: &Path) -> std::io::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    stage_files(dir, dir, &mut out)?;
    Ok(out)
}

/// Executes the configured stage chain under `out_dir` and returns the report
/// (written to `metrics/report.json` when the metrics stage runs).
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<MetricReport, PipelineError> {
    let stages = cfg.stages()?;
    let seed = cfg.u64("seed")?;
    let dataset_path = cfg.path("dataset")?;
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::Config(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut run = Run {
        cfg,
        out: out_dir.to_path_buf(),
        dataset_dir: dataset_path.parent().map(Path::to_path_buf).unwrap_or_default(),
        manifest: DatasetManifest::default(),
        skeleton: None,
        seqs: Vec::new(),
        notes: Vec::new(),
        seed,
    };
    let mut records = Vec::new();
    let mut report = None;
    for &stage in &stages {
        let dir = out_dir.join(stage.name());
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| data(stage)(&e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| data(stage)(&e))?;
        log::info!("stage {stage}");
        let result = match stage {
            Stage::Parse => run.parse(&dataset_path),
            Stage::Fit => run.fit(),
            Stage::Refine => run.refine(),
            Stage::FaceMap => run.facemap(),
            Stage::Quantize => run.quantize(),
            Stage::Features => run.features(),
            Stage::Metrics => run.metrics(&stages).map(|r| report = Some(r)),
        };
        let mut files = Vec::new();
        stage_files(out_dir, &dir, &mut files).map_err(|e| data(stage)(&e))?;
        let outputs: Vec<_> = files.iter().map(|(p, h)| json!({ "path": p, "sha256": h })).collect();
        match &result {
            Ok(()) => records.push(json!({ "stage": stage.name(), "status": "ok", "outputs": outputs })),
            Err(e) => records.push(json!({ "stage": stage.name(), "status": "failed", "error": e.to_string(), "outputs": outputs })),
        }
        write_run_manifest(&run, &stages, &records).map_err(|e| data(stage)(&e))?;
        result?;
    }
    Ok(report.unwrap_or_else(|| run.build_report(&stages, AggregateMetrics::default(), Vec::new())))
}

fn write_run_manifest(run: &Run, stages: &[Stage], records: &[serde_json::Value]) -> std::io::Result<()> {
    let doc = json!({
        "format": "gesturekit-run",
        "version": 1,
        "seed": run.seed,
        "stages": stages.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "config": run.cfg.effective(),
        "records": records,
    });
    std::fs::write(run.out.join("manifest.json"), serde_json::to_string_pretty(&doc).expect("json") + "\n")
}

fn write_container(c: &Container, path: &Path, stage: Stage) -> Result<(), PipelineError> {
    c.write(path).map_err(|e| data(stage)(&e))
}

impl Run<'_> {
    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    fn skeleton(&self) -> &Skeleton {
        self.skeleton.as_ref().expect("parse stage ran")
    }

    fn parse(&mut self, dataset_path: &Path) -> Result<(), PipelineError> {
        let st = Stage::Parse;
        let err = data(st);
        self.manifest = DatasetManifest::read(dataset_path).map_err(|e| err(&e))?;
        self.manifest.validate(&self.dataset_dir).map_err(|e| err(&e))?;
        if self.manifest.sequences.is_empty() {
            return Err(err(&"dataset has no sequences"));
        }
        let scale = self.cfg.f64("bvh.unit_scale")?;
        let height = self.cfg.f64("contacts.height")?;
        let up = self.cfg.usize("contacts.up_axis")?;
        if up > 2 {
            return Err(PipelineError::Config("contacts.up_axis must be 0, 1 or 2".into()));
        }
        let map = JointMap::reference_rig();
        let dir = self.stage_dir(st);
        for entry in &self.manifest.sequences {
            let path = self.dataset_dir.join(&entry.motion);
            let text = std::fs::read_to_string(&path).map_err(|e| err(&format!("{}: {e}", path.display())))?;
            let doc = parse_bvh(&text).map_err(|e| err(&format!("{}: {e}", path.display())))?;
            if self.skeleton.is_none() {
                let sk = skeleton_from_bvh(&doc, &map, scale).map_err(|e| err(&e))?;
                sk.write_json(&dir.join("skeleton.json")).map_err(|e| err(&e))?;
                self.skeleton = Some(sk);
            }
            let mut clip = to_motion_clip_scaled(&doc, &map, scale).map_err(|e| err(&format!("{}: {e}", entry.sequence_id)))?;
            label_contacts(&mut clip, self.skeleton(), up, height).map_err(|e| err(&e))?;
            write_container(&clip.to_container(), &dir.join(format!("{}.motion.json", entry.sequence_id)), st)?;
            self.seqs.push(Sequence {
                id: entry.sequence_id.clone(),
                split: entry.split,
                clip,
                recon: None,
                fit_rms: None,
                head_scale: None,
                finger_frames: None,
                truncated_frames: None,
                vq_mse: BTreeMap::new(),
                audio_beats: None,
                mean_alpha: None,
            });
        }
        Ok(())
    }

    fn fit(&mut self) -> Result<(), PipelineError> {
        let st = Stage::Fit;
        let err = data(st);
        let model = BodyModel::load(&self.cfg.path("fit.model")?).map_err(|e| err(&e))?;
        let layout = MarkerLayout::read_csv(&self.cfg.path("fit.layout")?).map_err(|e| err(&e))?;
        let weights = FitWeights {
            data: self.cfg.f64("fit.weight.data")?,
            surface: self.cfg.f64("fit.weight.surface")?,
            init: self.cfg.f64("fit.weight.init")?,
            beta: self.cfg.f64("fit.weight.beta")?,
            theta: self.cfg.f64("fit.weight.theta")?,
            velocity: self.cfg.f64("fit.weight.velocity")?,
        };
        weights.validate_for_fit().map_err(|e| PipelineError::Config(e.to_string()))?;
        let prior = PosePrior::isotropic(model.num_joints(), model.num_betas, self.cfg.f64("fit.prior.theta")?, self.cfg.f64("fit.prior.beta")?);
        let mut config = FitConfig::new(prior);
        config.weights = weights;
        config.stage1_frames = self.cfg.usize("fit.stage1_frames")?;
        config.solver.max_iters = self.cfg.usize("fit.max_iters")?;
        config.selection = match self.cfg.get("fit.selection")? {
            "uniform" => FrameSelection::Uniform,
            "pose_spread" => FrameSelection::PoseSpread,
            other => return Err(PipelineError::Config(format!("fit.selection: unknown value '{other}'"))),
        };
        let dir = self.stage_dir(st);
        for (entry, seq) in self.manifest.sequences.iter().zip(&mut self.seqs) {
            let Some(markers) = &entry.markers else {
                self.notes.push(format!("{}: no marker file, fit skipped", seq.id));
                continue;
            };
            let obs = MarkerSequence::read_csv(&self.dataset_dir.join(markers), &layout).map_err(|e| err(&e))?;
            let result = fit_sequence(&model, &layout, &obs, &config).map_err(|e| match e {
                MoshError::NonFinite { .. } => numeric(st, format!("{}: {e}", seq.id)),
                MoshError::Config(_) => PipelineError::Config(e.to_string()),
                _ => err(&format!("{}: {e}", seq.id)),
            })?;
            if !result.marker_rms.is_finite() {
                return Err(numeric(st, format!("{}: non-finite marker RMS", seq.id)));
            }
            result.save(&dir, &seq.id).map_err(|e| err(&e))?;
            seq.fit_rms = Some(result.marker_rms);
        }
        Ok(())
    }

    fn refine(&mut self) -> Result<(), PipelineError> {
        let st = Stage::Refine;
        let err = data(st);
        let rules = parse_rules(self.cfg.get("refine.rules")?).map_err(|e| PipelineError::Config(e.to_string()))?;
        let top = self.cfg.f64_list("refine.head_top")?;
        if top.len() != 3 {
            return Err(PipelineError::Config("refine.head_top needs three numbers".into()));
        }
        let ks_gate = match self.cfg.get("refine.ks_gate")? {
            "none" => None,
            _ => Some(self.cfg.f64("refine.ks_gate")?),
        };
        let config = RefineConfig {
            rules,
            fingers: FingerSpec::default_hands(),
            head: Some(HeadProportions::new(12, 15, [top[0], top[1], top[2]])),
            window: self.cfg.usize("refine.window")?,
            ks_gate,
        };
        let dir = self.stage_dir(st);
        let base = self.skeleton().clone();
        let mut refined = None;
        for seq in &mut self.seqs {
            let (clip, sk, rep) = refine(&seq.clip, &base, &config).map_err(|e| err(&format!("{}: {e}", seq.id)))?;
            let text = serde_json::to_string_pretty(&rep).expect("json") + "\n";
            std::fs::write(dir.join(format!("{}.report.json", seq.id)), text).map_err(|e| err(&e))?;
            write_container(&clip.to_container(), &dir.join(format!("{}.motion.json", seq.id)), st)?;
            seq.clip = clip;
            seq.head_scale = Some(rep.head_scale);
            seq.finger_frames = Some(rep.fingers.frames_modified);
            seq.truncated_frames = Some(rep.truncation.frames_modified);
            refined.get_or_insert(sk);
        }
        let sk = refined.expect("at least one sequence");
        sk.write_json(&dir.join("skeleton.json")).map_err(|e| err(&e))?;
        self.skeleton = Some(sk);
        Ok(())
    }

    fn facemap(&mut self) -> Result<(), PipelineError> {
        let st = Stage::FaceMap;
        let err = data(st);
        let load = |key: &str, kind: &str| -> Result<LinearFace, PipelineError> {
            let c = Container::read(&self.cfg.path(key)?).map_err(|e| err(&e))?;
            LinearFace::from_container(&c, kind).map_err(|e| err(&e))
        };
        let templates = load("facemap.templates", "blendshape_templates")?;
        let basis = load("facemap.basis", "expression_basis")?;
        if templates.num_modes() != NUM_BLENDSHAPES || basis.num_modes() != EXPRESSION_PARAMS + 3 {
            return Err(err(&format!(
                "expected {NUM_BLENDSHAPES} templates and {} basis modes, found {} and {}",
                EXPRESSION_PARAMS + 3,
                templates.num_modes(),
                basis.num_modes()
            )));
        }
        let training = default_training_rows(NUM_BLENDSHAPES, self.cfg.usize("facemap.training_extra")?, self.seed);
        let (w, info) = solve_transform(&templates, &basis, &training, self.cfg.f64("facemap.regularization")?).map_err(|e| match e {
            FaceMapError::NonFinite(_) => numeric(st, e.to_string()),
            _ => err(&e),
        })?;
        if info.rank_deficient {
            self.notes.push("face transform: rank-deficient system, regularized".into());
        }
        let dir = self.stage_dir(st);
        write_container(&w.to_container(), &dir.join("transform.json"), st)?;
        let names = param_names(w.cols);
        for (entry, seq) in self.manifest.sequences.iter().zip(&mut self.seqs) {
            let Some(path) = &entry.face_weights else {
                self.notes.push(format!("{}: no face weights, facemap skipped", seq.id));
                continue;
            };
            let (_, rows) = read_weight_csv(&self.dataset_dir.join(path)).map_err(|e| err(&e))?;
            if rows.len() != seq.clip.len() {
                return Err(err(&format!("{}: {} face frames for {} motion frames", seq.id, rows.len(), seq.clip.len())));
            }
            let params = map_weights(&w, &rows).map_err(|e| err(&format!("{}: {e}", seq.id)))?;
            write_weight_csv(&dir.join(format!("{}.flame.csv", seq.id)), &names, &params).map_err(|e| err(&e))?;
            for (frame, p) in seq.clip.frames.iter_mut().zip(&params) {
                frame.expression.copy_from_slice(&p[..EXPRESSION_PARAMS]);
                let jaw = rotation_vector_to_matrix([p[EXPRESSION_PARAMS], p[EXPRESSION_PARAMS + 1], p[EXPRESSION_PARAMS + 2]]);
                frame.rotations[JAW] = rot6d_from_matrix(&jaw).map_err(|e| numeric(st, e.to_string()))?;
            }
            write_container(&seq.clip.to_container(), &dir.join(format!("{}.motion.json", seq.id)), st)?;
        }
        Ok(())
    }

    fn quantize(&mut self) -> Result<(), PipelineError> {
        let st = Stage::Quantize;
        let err = data(st);
        let ratios = self.cfg.f64_list("split.ratios")?;
        let ratios: [f64; 3] = ratios.try_into().map_err(|_| PipelineError::Config("split.ratios needs three numbers".into()))?;
        let (split, warnings) = split_dataset(&self.manifest, ratios, self.seed).map_err(|e| PipelineError::Config(e.to_string()))?;
        self.notes.extend(warnings);
        let dir = self.stage_dir(st);
        std::fs::write(dir.join("split.json"), split.to_json()).map_err(|e| err(&e))?;
        for (seq, entry) in self.seqs.iter_mut().zip(&split.sequences) {
            seq.split = entry.split;
        }
        let segments = self
            .cfg
            .list("quantize.segments")?
            .iter()
            .map(|s| SegmentSpec::by_name(s).map_err(|e| PipelineError::Config(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let latent_dim = match self.cfg.get("quantize.latent_dim")? {
            "auto" => None,
            _ => Some(self.cfg.usize("quantize.latent_dim")?),
        };
        let learn = LearnConfig {
            codebook_size: self.cfg.usize("quantize.codebook_size")?,
            latent_dim,
            seed: self.seed,
            max_iters: self.cfg.usize("quantize.max_iters")?,
            ..Default::default()
        };
        let train: Vec<MotionClip> = self.seqs.iter().filter(|s| s.split == Some(Split::Train)).map(|s| s.clip.clone()).collect();
        if train.is_empty() {
            return Err(err(&"no training sequences after splitting"));
        }
        let q = CompositeQuantizer::learn(&train, &segments, &learn).map_err(|e| err(&e))?;
        for cb in &q.codebooks {
            write_container(&cb.to_container(), &dir.join(format!("{}.codebook.json", cb.segment.name)), st)?;
        }
        for seq in &mut self.seqs {
            let codes = q.encode(&seq.clip).map_err(|e| err(&e))?;
            let text = serde_json::to_string(&codes).expect("json") + "\n";
            std::fs::write(dir.join(format!("{}.codes.json", seq.id)), text).map_err(|e| err(&e))?;
            let recon = q.decode(&codes, &seq.clip).map_err(|e| err(&e))?;
            for cb in &q.codebooks {
                let mse = cb.reconstruction_mse(&cb.segment.extract_clip(&seq.clip)).map_err(|e| err(&e))?;
                if !mse.is_finite() {
                    return Err(numeric(st, format!("{}: non-finite reconstruction error", seq.id)));
                }
                seq.vq_mse.insert(cb.segment.name.clone(), mse);
            }
            write_container(&recon.to_container(), &dir.join(format!("{}.recon.motion.json", seq.id)), st)?;
            seq.recon = Some(recon);
        }
        Ok(())
    }

    fn features(&mut self) -> Result<(), PipelineError> {
        let st = Stage::Features;
        let err = data(st);
        let table = EmbeddingTable::from_container(&Container::read(&self.cfg.path("features.embeddings")?).map_err(|e| err(&e))?)
            .map_err(|e| err(&e))?;
        let fusion = FusionWeights::from_container(&Container::read(&self.cfg.path("features.fusion")?).map_err(|e| err(&e))?)
            .map_err(|e| err(&e))?;
        fusion.validate(2).map_err(|e| err(&e))?;
        if table.dim() != 2 {
            return Err(err(&format!("embedding rows have width {}; the rhythm features have width 2", table.dim())));
        }
        let onset_min = self.cfg.f64("metrics.onset_min")?;
        let dir = self.stage_dir(st);
        for (entry, seq) in self.manifest.sequences.iter().zip(&mut self.seqs) {
            let Some(audio) = &entry.audio else {
                self.notes.push(format!("{}: no audio, features skipped", seq.id));
                continue;
            };
            let track = AudioTrack::read_wav(&self.dataset_dir.join(audio)).map_err(|e| err(&e))?;
            let fps = seq.clip.fps;
            let rhythm = RhythmFeatures::extract(&track, fps).map_err(|e| err(&e))?;
            let t = rhythm.len();
            let content = match &entry.transcript {
                Some(p) => {
                    let words = read_word_timings(&self.dataset_dir.join(p)).map_err(|e| err(&e))?;
                    content_features(&words, &table, t, fps).map_err(|e| err(&e))?
                }
                None => {
                    self.notes.push(format!("{}: no transcript, content features are zero", seq.id));
                    vec![vec![0.0; 2]; t]
                }
            };
            let (fused, alpha) = fuse(&rhythm.rows(), &content, &fusion).map_err(|e| err(&e))?;
            if fused.iter().flatten().chain(&alpha).any(|v| !v.is_finite()) {
                return Err(numeric(st, format!("{}: non-finite fused features", seq.id)));
            }
            let mut c = Container::new("audio_features").with_meta(json!({ "fps": fps, "frames": t, "sample_rate": track.sample_rate }));
            let push = |c: &mut Container, name: &str, rows: Vec<f64>, w: usize| c.push(name, &[t, w], rows).map_err(|e| err(&e));
            push(&mut c, "onset", rhythm.onset.clone(), 1)?;
            push(&mut c, "amplitude", rhythm.amplitude.clone(), 1)?;
            push(&mut c, "content", content.concat(), 2)?;
            push(&mut c, "fused", fused.concat(), 2)?;
            push(&mut c, "alpha", alpha.clone(), 1)?;
            write_container(&c, &dir.join(format!("{}.features.json", seq.id)), st)?;
            rhythm.write_csv(&dir.join(format!("{}.rhythm.csv", seq.id))).map_err(|e| err(&e))?;
            seq.audio_beats = Some(onset_beats(&rhythm.onset, fps, onset_min));
            seq.mean_alpha = (t > 0).then(|| alpha.iter().sum::<f64>() / t as f64);
        }
        Ok(())
    }

    fn metrics(&mut self, stages: &[Stage]) -> Result<MetricReport, PipelineError> {
        let st = Stage::Metrics;
        let err = data(st);
        let sigma = self.cfg.f64("metrics.bc_sigma")?;
        let threshold = self.cfg.f64("metrics.beat_threshold")?;
        let up = self.cfg.usize("contacts.up_axis")?;
        let beat_joints: Vec<usize> = self
            .cfg
            .list("metrics.beat_joints")?
            .iter()
            .map(|s| s.parse().ok().filter(|&j: &usize| j < NUM_JOINTS).ok_or_else(|| PipelineError::Config(format!("metrics.beat_joints: bad joint '{s}'"))))
            .collect::<Result<_, _>>()?;
        let skel = self.skeleton().clone();
        if self.seqs.iter().all(|s| s.recon.is_none()) {
            self.notes.push("quantize stage not run: metrics use the input motion as generated motion".into());
        }
        let mut per_seq = Vec::new();
        let (mut real_rows, mut gen_rows) = (Vec::new(), Vec::new());
        for seq in &self.seqs {
            let gen = seq.recon.as_ref().unwrap_or(&seq.clip);
            let (mut vmse, mut lvd_v) = (None, None);
            if let Some(recon) = &seq.recon {
                let a = skel.clip_positions(&seq.clip, true).map_err(|e| err(&e))?;
                let b = skel.clip_positions(recon, true).map_err(|e| err(&e))?;
                vmse = Some(vertex_mse(&a, &b).map_err(|e| err(&e))?);
                lvd_v = lvd(&a, &b).ok();
                let flat = |p: Vec<Vec<[f64; 3]>>| p.into_iter().map(|f| f.into_iter().flatten().collect::<Vec<f64>>());
                real_rows.extend(flat(skel.clip_positions(&seq.clip, false).map_err(|e| err(&e))?));
                gen_rows.extend(flat(skel.clip_positions(recon, false).map_err(|e| err(&e))?));
            }
            let beats = extract_motion_beats(gen, &skel, &beat_joints, threshold).ok();
            let bc = match (&beats, &seq.audio_beats) {
                (Some(g), Some(a)) => match beat_constancy(g, a, sigma) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        self.notes.push(format!("{}: beat constancy undefined: {e}", seq.id));
                        None
                    }
                },
                _ => None,
            };
            let slide = foot_slide(gen, &skel, up, None).map_err(|e| err(&e))?;
            per_seq.push(SequenceMetrics {
                sequence_id: seq.id.clone(),
                split: seq.split.map(|s| serde_json::to_value(s).expect("json").as_str().expect("string").to_string()),
                frames: seq.clip.len(),
                fit_marker_rms: seq.fit_rms,
                head_scale: seq.head_scale,
                finger_frames_clamped: seq.finger_frames,
                truncated_frames: seq.truncated_frames,
                vq_mse: seq.vq_mse.clone(),
                vertex_mse: vmse,
                lvd: lvd_v,
                gesture_beats: beats.as_ref().map(BeatSet::len),
                audio_beats: seq.audio_beats.as_ref().map(BeatSet::len),
                beat_constancy: bc,
                mean_fusion_alpha: seq.mean_alpha,
                foot_slide: Some(slide),
            });
        }
        let dir = self.stage_dir(st);
        let mut agg = AggregateMetrics::default();
        if real_rows.len() >= 2 {
            let real = EmbeddingSet::new(real_rows).map_err(|e| err(&e))?;
            let gen = EmbeddingSet::new(gen_rows).map_err(|e| err(&e))?;
            write_container(&real.to_container(), &dir.join("real_embeddings.json"), st)?;
            write_container(&gen.to_container(), &dir.join("generated_embeddings.json"), st)?;
            let v = fgd(&real, &gen).map_err(|e| err(&e))?;
            if !v.is_finite() {
                return Err(numeric(st, "non-finite FGD"));
            }
            // clamp rounding below zero
            agg.fgd = Some(v.max(0.0));
        }
        if self.seqs.len() >= 2 {
            let min_len = self.seqs.iter().map(|s| s.clip.len()).min().unwrap_or(0);
            let clips: Vec<MotionClip> = self
                .seqs
                .iter()
                .map(|s| {
                    let c = s.recon.as_ref().unwrap_or(&s.clip);
                    MotionClip { fps: c.fps, frames: c.frames[..min_len].to_vec() }
                })
                .collect();
            agg.l1_diversity = Some(l1_diversity_clips(&clips, &skel).map_err(|e| err(&e))?);
        } else {
            self.notes.push("diversity needs at least two sequences".into());
        }
        let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        agg.beat_constancy = mean(per_seq.iter().filter_map(|s| s.beat_constancy).collect());
        agg.vertex_mse = mean(per_seq.iter().filter_map(|s| s.vertex_mse).collect());
        agg.lvd = mean(per_seq.iter().filter_map(|s| s.lvd).collect());
        agg.foot_slide = mean(per_seq.iter().filter_map(|s| s.foot_slide).filter(|f| !f.no_contact).map(|f| f.mean).collect());
        let report = self.build_report(stages, agg, per_seq);
        report.validate().map_err(|e| numeric(st, e))?;
        std::fs::write(dir.join("report.json"), report.to_json()).map_err(|e| err(&e))?;
        Ok(report)
    }

    fn build_report(&self, stages: &[Stage], aggregate: AggregateMetrics, sequences: Vec<SequenceMetrics>) -> MetricReport {
        MetricReport {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            seed: self.seed,
            stages: stages.iter().map(|s| s.name().to_string()).collect(),
            config: self.cfg.effective(),
            sequences,
            aggregate,
            notes: self.notes.clone(),
        }
    }
}
