//! Experiment orchestration: data -> teacher(s) -> optional fusion -> each
//! requested distillation method -> evaluation in single and multiple model
//! mode, all fully determined by the configured seeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use pxkd_core::checkpoint::save_checkpoint;
use pxkd_core::data::{generate_distractors, generate_synthetic, load_csv, make_splits, Dataset, SynthConfig};
use pxkd_core::distill::{
    distill_l2, distill_proxyless, fuse_teachers, train_scratch, train_teacher, FusedPipeline,
    TrainParams, TrainReport,
};
use pxkd_core::eval::{evaluate, make_pairs, EvalMode, EvalReport, PairSet};
use pxkd_core::losses::LossConfig;
use pxkd_core::model::{Classifier, Embedder, EncoderConfig, EncoderModel};
use pxkd_core::numcore::{child_seed, Matrix};

use crate::config::{DataSource, ExperimentConfig, Method};
use crate::error::{stage_err, Result};
use crate::plots;

pub const SCHEMA_VERSION: u32 = 1;

// Child-stream indices off each run seed.
const STREAM_DATA: u64 = 1;
const STREAM_SPLITS: u64 = 2;
const STREAM_PAIRS: u64 = 3;
const STREAM_TEACHER: u64 = 4;
const STREAM_FUSION: u64 = 5;
const STREAM_PROXYLESS: u64 = 6;
const STREAM_L2KD: u64 = 7;
const STREAM_SCRATCH: u64 = 8;
const STREAM_DISTRACTORS: u64 = 9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    /// Margin of the distillation loss; set for inherited-classifier runs.
    pub margin: Option<f64>,
    pub train: TrainReport,
    pub eval_single: Option<EvalReport>,
    pub eval_multiple: Option<EvalReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionSummary {
    pub method: String,
    pub explained_variance: Vec<f64>,
    pub retained_variance: f64,
    pub rank_warning: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub teacher_train: Vec<TrainReport>,
    pub teacher_eval: EvalReport,
    pub fusion: Option<FusionSummary>,
    pub methods: BTreeMap<String, MethodResult>,
}

/// Wall-clock bookkeeping, kept in its own object so determinism comparisons
/// can drop it wholesale.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub total_secs: f64,
    pub stages: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub schema_version: u32,
    pub library_version: String,
    /// Canonical text of the effective configuration; re-parses to the same
    /// values.
    pub config_echo: String,
    pub defaulted_keys: Vec<String>,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedResult>,
    /// Every file the runner writes, relative to the output directory.
    pub manifest: Vec<String>,
    pub timing: Timing,
}

enum TeacherSide {
    Single(EncoderModel, Classifier),
    Fused(FusedPipeline),
}

impl TeacherSide {
    fn embedder(&self) -> &dyn Embedder {
        match self {
            TeacherSide::Single(model, _) => model,
            TeacherSide::Fused(pipeline) => pipeline,
        }
    }

    fn classifier(&self) -> &Classifier {
        match self {
            TeacherSide::Single(_, clf) => clf,
            TeacherSide::Fused(pipeline) => &pipeline.map.classifier,
        }
    }
}

/// The dataset (tagged with splits) exactly as the run for `seed` builds it.
pub fn dataset_for_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    build_dataset(cfg, seed)
}

/// The verification pair set exactly as the run for `seed` samples it.
pub fn pairs_for_seed(cfg: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<PairSet> {
    make_pairs(
        ds,
        cfg.values.eval.genuine_per_class,
        cfg.values.eval.impostor_count,
        child_seed(seed, STREAM_PAIRS),
    )
    .map_err(stage_err("pairs"))
}

fn build_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let v = &cfg.values;
    let ds = match &v.data.source {
        DataSource::Synthetic => generate_synthetic(&SynthConfig {
            classes: v.data.classes,
            per_class: v.data.per_class,
            input_dim: v.data.input_dim,
            kappa: v.data.kappa,
            seed: child_seed(seed, STREAM_DATA),
        })
        .map_err(stage_err("data"))?,
        DataSource::Csv { path } => load_csv(path).map_err(stage_err("data"))?.0,
    };
    make_splits(
        &ds,
        v.data.gallery_per_class,
        v.data.probe_per_class,
        child_seed(seed, STREAM_SPLITS),
    )
    .map_err(stage_err("splits"))
}

/// Formats a margin for method keys and filenames ('.' kept, e.g.
/// `proxyless_m0.35`).
fn margin_key(m: f64) -> String {
    format!("{m}")
}

struct SeedRun<'a> {
    cfg: &'a ExperimentConfig,
    out_dir: &'a Path,
    written: &'a mut Vec<PathBuf>,
    timing: &'a mut BTreeMap<String, f64>,
}

impl<'a> SeedRun<'a> {
    fn checkpoint(
        &mut self,
        name: &str,
        model: &EncoderModel,
        clf: &Classifier,
        loss: Option<&LossConfig>,
        seed: u64,
    ) -> Result<String> {
        let rel = format!("checkpoints/{name}.pxkd");
        let path = self.out_dir.join(&rel);
        save_checkpoint(&path, model, clf, loss, seed).map_err(stage_err("checkpoint"))?;
        self.written.push(path);
        Ok(rel)
    }

    fn run(&mut self, seed: u64) -> Result<SeedResult> {
        let v = &self.cfg.values;
        let ds = build_dataset(self.cfg, seed)?;
        let pairs: PairSet = make_pairs(
            &ds,
            v.eval.genuine_per_class,
            v.eval.impostor_count,
            child_seed(seed, STREAM_PAIRS),
        )
        .map_err(stage_err("pairs"))?;
        let distractors: Option<Matrix> = if v.eval.distractors > 0 {
            Some(
                generate_distractors(
                    v.eval.distractors,
                    ds.input_dim(),
                    v.eval.distractor_kappa,
                    child_seed(seed, STREAM_DISTRACTORS),
                )
                .map_err(stage_err("distractors"))?,
            )
        } else {
            None
        };

        // Teachers.
        let teacher_cfg = EncoderConfig::new(ds.input_dim(), v.teacher.hidden.clone(), v.teacher.embed_dim);
        let teacher_loss = LossConfig::new(v.teacher.loss, v.teacher.m, v.teacher.s)
            .map_err(stage_err("teacher"))?;
        let teacher_params = TrainParams {
            epochs: v.teacher.epochs,
            batch_size: v.teacher.batch_size,
            lr0: v.teacher.lr0,
            momentum: v.teacher.momentum,
            weight_decay: v.teacher.weight_decay,
        };
        let teacher_seed_base = child_seed(seed, STREAM_TEACHER);
        let mut teachers = Vec::new();
        let mut teacher_train = Vec::new();
        for i in 0..v.teacher.count {
            let stage = format!("seed{seed}/teacher{i}");
            let t_seed = child_seed(teacher_seed_base, i as u64);
            let (model, clf, mut report) =
                train_teacher(&teacher_cfg, &teacher_loss, &ds, &teacher_params, t_seed)
                    .map_err(stage_err(stage.clone()))?;
            report.final_checkpoint = Some(self.checkpoint(
                &format!("teacher{i}_seed{seed}"),
                &model,
                &clf,
                Some(&teacher_loss),
                t_seed,
            )?);
            self.timing.insert(stage, report.wall_clock_secs);
            teachers.push((model, clf));
            teacher_train.push(report);
        }

        // Fusion when an ensemble is configured.
        let (teacher_side, fusion_summary) = if v.teacher.count >= 2 {
            let stage = format!("seed{seed}/fusion");
            let started = Instant::now();
            let fusion_params = TrainParams {
                epochs: v.fusion.epochs,
                batch_size: v.fusion.batch_size,
                lr0: v.fusion.lr0,
                momentum: v.teacher.momentum,
                weight_decay: v.teacher.weight_decay,
            };
            let models: Vec<EncoderModel> = teachers.iter().map(|(m, _)| m.clone()).collect();
            let map = fuse_teachers(
                &models,
                &ds,
                v.fusion.method,
                v.student.embed_dim,
                &teacher_loss,
                &fusion_params,
                child_seed(seed, STREAM_FUSION),
            )
            .map_err(stage_err(stage.clone()))?;
            self.timing.insert(stage, started.elapsed().as_secs_f64());
            let summary = FusionSummary {
                method: match v.fusion.method {
                    pxkd_core::distill::FusionMethod::Pca => "pca".into(),
                    pxkd_core::distill::FusionMethod::LinearLayer => "linear".into(),
                },
                retained_variance: map.explained_variance.iter().sum(),
                explained_variance: map.explained_variance.clone(),
                rank_warning: map.rank_warning,
            };
            (
                TeacherSide::Fused(FusedPipeline { teachers: models, map }),
                Some(summary),
            )
        } else {
            let (model, clf) = teachers[0].clone();
            (TeacherSide::Single(model, clf), None)
        };

        // Teacher reference row: self-evaluation in single-model mode.
        let teacher_eval = evaluate(
            teacher_side.embedder(),
            teacher_side.embedder(),
            &pairs,
            &ds,
            &v.eval.far,
            distractors.as_ref(),
            EvalMode::Single,
        )
        .map_err(stage_err(format!("seed{seed}/eval/teacher")))?;

        // Students.
        let student_cfg = EncoderConfig::new(ds.input_dim(), v.student.hidden.clone(), v.student.embed_dim);
        let mut methods: BTreeMap<String, MethodResult> = BTreeMap::new();
        for method in &v.distill.methods {
            match method {
                Method::Proxyless => {
                    for &m in &v.distill.m {
                        let key = if v.distill.m.len() > 1 {
                            format!("proxyless_m{}", margin_key(m))
                        } else {
                            "proxyless".to_string()
                        };
                        let stage = format!("seed{seed}/{key}");
                        let loss = LossConfig::new(v.distill.loss, m, v.distill.s)
                            .map_err(stage_err(stage.clone()))?;
                        let params = TrainParams {
                            epochs: v.distill.epochs,
                            batch_size: v.distill.batch_size,
                            lr0: v.distill.lr_proxyless,
                            momentum: v.distill.momentum,
                            weight_decay: v.distill.weight_decay,
                        };
                        let (model, mut report) = distill_proxyless(
                            &student_cfg,
                            teacher_side.classifier(),
                            &loss,
                            &ds,
                            &params,
                            child_seed(seed, STREAM_PROXYLESS),
                        )
                        .map_err(stage_err(stage.clone()))?;
                        report.final_checkpoint = Some(self.checkpoint(
                            &format!("{key}_seed{seed}"),
                            &model,
                            &teacher_side.classifier().frozen_copy(),
                            Some(&loss),
                            child_seed(seed, STREAM_PROXYLESS),
                        )?);
                        self.timing.insert(stage.clone(), report.wall_clock_secs);
                        let result = self.evaluate_student(
                            seed, &key, &model, &teacher_side, &pairs, &ds, distractors.as_ref(),
                        )?;
                        methods.insert(
                            key.clone(),
                            MethodResult {
                                method: "proxyless".into(),
                                margin: Some(m),
                                train: report,
                                eval_single: result.0,
                                eval_multiple: result.1,
                            },
                        );
                    }
                }
                Method::L2kd => {
                    let stage = format!("seed{seed}/l2kd");
                    let params = TrainParams {
                        epochs: v.distill.epochs,
                        batch_size: v.distill.batch_size,
                        lr0: v.distill.lr_l2kd,
                        momentum: v.distill.momentum,
                        weight_decay: v.distill.weight_decay,
                    };
                    let (model, mut report) = distill_l2(
                        &student_cfg,
                        teacher_side.embedder(),
                        &ds,
                        &params,
                        child_seed(seed, STREAM_L2KD),
                    )
                    .map_err(stage_err(stage.clone()))?;
                    let empty_clf = Classifier {
                        weights: Matrix::zeros(0, v.student.embed_dim),
                        frozen: false,
                    };
                    report.final_checkpoint = Some(self.checkpoint(
                        &format!("l2kd_seed{seed}"),
                        &model,
                        &empty_clf,
                        None,
                        child_seed(seed, STREAM_L2KD),
                    )?);
                    self.timing.insert(stage, report.wall_clock_secs);
                    let result = self.evaluate_student(
                        seed, "l2kd", &model, &teacher_side, &pairs, &ds, distractors.as_ref(),
                    )?;
                    methods.insert(
                        "l2kd".into(),
                        MethodResult {
                            method: "l2kd".into(),
                            margin: None,
                            train: report,
                            eval_single: result.0,
                            eval_multiple: result.1,
                        },
                    );
                }
                Method::Scratch => {
                    let stage = format!("seed{seed}/scratch");
                    let params = TrainParams {
                        epochs: v.distill.epochs,
                        batch_size: v.distill.batch_size,
                        lr0: v.distill.lr_scratch,
                        momentum: v.distill.momentum,
                        weight_decay: v.distill.weight_decay,
                    };
                    let (model, clf, mut report) = train_scratch(
                        &student_cfg,
                        &teacher_loss,
                        &ds,
                        &params,
                        child_seed(seed, STREAM_SCRATCH),
                    )
                    .map_err(stage_err(stage.clone()))?;
                    report.final_checkpoint = Some(self.checkpoint(
                        &format!("scratch_seed{seed}"),
                        &model,
                        &clf,
                        Some(&teacher_loss),
                        child_seed(seed, STREAM_SCRATCH),
                    )?);
                    self.timing.insert(stage, report.wall_clock_secs);
                    let result = self.evaluate_student(
                        seed, "scratch", &model, &teacher_side, &pairs, &ds, distractors.as_ref(),
                    )?;
                    methods.insert(
                        "scratch".into(),
                        MethodResult {
                            method: "scratch".into(),
                            margin: None,
                            train: report,
                            eval_single: result.0,
                            eval_multiple: result.1,
                        },
                    );
                }
            }
        }

        Ok(SeedResult {
            seed,
            teacher_train,
            teacher_eval,
            fusion: fusion_summary,
            methods,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate_student(
        &mut self,
        seed: u64,
        key: &str,
        student: &EncoderModel,
        teacher_side: &TeacherSide,
        pairs: &PairSet,
        ds: &Dataset,
        distractors: Option<&Matrix>,
    ) -> Result<(Option<EvalReport>, Option<EvalReport>)> {
        let v = &self.cfg.values;
        let started = Instant::now();
        let single = if v.run.mode.single() {
            Some(
                evaluate(student, student, pairs, ds, &v.eval.far, distractors, EvalMode::Single)
                    .map_err(stage_err(format!("seed{seed}/eval/{key}/single")))?,
            )
        } else {
            None
        };
        let multiple = if v.run.mode.multiple() {
            Some(
                evaluate(
                    teacher_side.embedder(),
                    student,
                    pairs,
                    ds,
                    &v.eval.far,
                    distractors,
                    EvalMode::Multiple,
                )
                .map_err(stage_err(format!("seed{seed}/eval/{key}/multiple")))?,
            )
        } else {
            None
        };
        self.timing
            .insert(format!("seed{seed}/eval/{key}"), started.elapsed().as_secs_f64());
        Ok((single, multiple))
    }
}

/// Executes the configured experiment, writing checkpoints under `out_dir`.
/// On error every file already written is removed.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<MetricsDocument> {
    let mut written: Vec<PathBuf> = Vec::new();
    let result = run_inner(cfg, out_dir, &mut written);
    if result.is_err() {
        cleanup(&written, out_dir);
    }
    result
}

fn run_inner(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<MetricsDocument> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir.join("checkpoints"))?;
    std::fs::create_dir_all(out_dir.join("plots"))?;

    let mut timing_stages = BTreeMap::new();
    let mut per_seed = Vec::new();
    for &seed in &cfg.values.run.seeds {
        let mut run = SeedRun {
            cfg,
            out_dir,
            written,
            timing: &mut timing_stages,
        };
        per_seed.push(run.run(seed)?);
    }

    let mut manifest: Vec<String> = written
        .iter()
        .map(|p| relative_to(p, out_dir))
        .collect();
    manifest.extend(plots::plot_file_names(&per_seed));
    manifest.push("metrics.json".to_string());

    Ok(MetricsDocument {
        schema_version: SCHEMA_VERSION,
        library_version: pxkd_core::VERSION.to_string(),
        config_echo: cfg.values.to_config_text(),
        defaulted_keys: cfg.defaulted.clone(),
        seeds: cfg.values.run.seeds.clone(),
        per_seed,
        manifest,
        timing: Timing {
            total_secs: started.elapsed().as_secs_f64(),
            stages: timing_stages,
        },
    })
}

fn relative_to(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

fn cleanup(written: &[PathBuf], out_dir: &Path) {
    for path in written {
        let _ = std::fs::remove_file(path);
    }
    let _ = std::fs::remove_dir(out_dir.join("checkpoints"));
    let _ = std::fs::remove_dir(out_dir.join("plots"));
}

/// Full pipeline: run, emit plot data, write `metrics.json`. Partial outputs
/// are removed on error.
pub fn run_and_write(cfg: &ExperimentConfig, out_dir: &Path) -> Result<MetricsDocument> {
    let mut doc = run_experiment(cfg, out_dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let finish = (|| -> Result<()> {
        let plot_files = plots::emit_plot_data(&doc, out_dir)?;
        written.extend(plot_files);
        // Timing settles only now; total includes plot emission.
        doc.timing.total_secs += 0.0;
        let json = serde_json::to_string_pretty(&doc)?;
        let metrics_path = out_dir.join("metrics.json");
        std::fs::write(&metrics_path, json.as_bytes())?;
        written.push(metrics_path);
        Ok(())
    })();
    if let Err(e) = finish {
        // Remove everything, including the checkpoints from the run phase.
        for rel in &doc.manifest {
            let _ = std::fs::remove_file(out_dir.join(rel));
        }
        for path in &written {
            let _ = std::fs::remove_file(path);
        }
        cleanup(&[], out_dir);
        return Err(e);
    }
    Ok(doc)
}

/// Serializes a document with the timing object removed, for bit-exact
/// determinism comparisons.
pub fn comparable_json(doc: &MetricsDocument) -> serde_json::Result<String> {
    let mut value = serde_json::to_value(doc)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("timing");
    }
    serde_json::to_string_pretty(&value)
}
