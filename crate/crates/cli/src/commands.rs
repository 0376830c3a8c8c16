//! The six pipeline commands. Each writes its outputs, the effective config
//! (`config.json`) and a `summary.json` into its output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mmr_core::eval::{self, MetricKind, ProbeReport, TaskKind};
use mmr_core::io::{read_segments, write_segments, Checkpoint};
use mmr_core::model::{encode_batch, param_count, ModelState, PosTables};
use mmr_core::pipeline::prepare;
use mmr_core::preprocess::{preprocess_segment, Preprocessed};
use mmr_core::rng;
use mmr_core::synth::{generate_cohort, Segment};
use mmr_core::train::{self, LossPoint, PretrainOutput, PretrainSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AblationGrid, GridPoint, RunConfig, TaskSpec};

pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.mmrc";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

/// Segments encoded per forward pass in `embed`.
const EMBED_CHUNK: usize = 8;

fn start(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    fs::write(out.join(CONFIG_FILE), cfg.to_json() + "\n")?;
    Ok(())
}

fn finish<T: Serialize>(out: &Path, summary: &T) -> Result<()> {
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(summary)? + "\n")?;
    Ok(())
}

/// snake_case name of a unit enum variant.
fn tag<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

fn load_segments(path: &Path) -> Result<Vec<Segment>> {
    let segs = read_segments(path).context("io")?;
    if segs.is_empty() {
        bail!("io: {} holds no segments", path.display());
    }
    Ok(segs)
}

fn log(quiet: bool, msg: impl FnOnce() -> String) {
    if !quiet {
        eprintln!("{}", msg());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub n_users: usize,
    pub n_segments: usize,
    pub samples_per_segment: usize,
    pub fs_hz: f64,
    pub segments: String,
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<SynthSummary> {
    start(out, cfg)?;
    let d = &cfg.data;
    let segs = generate_cohort(d.n_users, d.segments_per_user, &d.cohort, cfg.seed).context("synth")?;
    write_segments(out.join(SEGMENTS_FILE), &segs).context("io")?;
    let summary = SynthSummary {
        n_users: d.n_users,
        n_segments: segs.len(),
        samples_per_segment: segs[0].samples.len(),
        fs_hz: d.cohort.fs_hz,
        segments: SEGMENTS_FILE.into(),
    };
    finish(out, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub n_input: usize,
    pub n_accepted: usize,
    pub n_rejected: usize,
    pub rejected_by_reason: BTreeMap<String, usize>,
    pub segments: String,
}

pub fn preprocess(cfg: &RunConfig, data: &Path, out: &Path) -> Result<PreprocessSummary> {
    let segs = load_segments(data)?;
    start(out, cfg)?;
    let results: Vec<Preprocessed> = segs
        .par_iter()
        .map(|s| preprocess_segment(s, &cfg.preprocess).with_context(|| format!("preprocess: segment {}", s.segment_id)))
        .collect::<Result<_>>()?;
    let mut accepted = Vec::new();
    let mut by_reason = BTreeMap::new();
    let mut w = csv::Writer::from_path(out.join("rejections.csv"))?;
    w.write_record(["segment_id", "user_id", "reason", "detail"])?;
    for (seg, r) in segs.iter().zip(results) {
        match r {
            Preprocessed::Accepted(s) => accepted.push(s),
            Preprocessed::Rejected(why) => {
                *by_reason.entry(why.reason().to_string()).or_insert(0) += 1;
                w.write_record([
                    seg.segment_id.as_str(),
                    seg.user_id.as_str(),
                    why.reason(),
                    &serde_json::to_string(&why)?,
                ])?;
            }
        }
    }
    w.flush()?;
    if let Some(first) = accepted.first() {
        let n = first.samples.len();
        if let Some(s) = accepted.iter().find(|s| s.samples.len() != n) {
            bail!(
                "preprocess: segment {} has {} samples after resampling, {} expected",
                s.segment_id,
                s.samples.len(),
                n
            );
        }
    }
    write_segments(out.join(SEGMENTS_FILE), &accepted).context("io")?;
    let summary = PreprocessSummary {
        n_input: segs.len(),
        n_accepted: accepted.len(),
        n_rejected: segs.len() - accepted.len(),
        rejected_by_reason: by_reason,
        segments: SEGMENTS_FILE.into(),
    };
    finish(out, &summary)?;
    Ok(summary)
}

pub fn pretrain_spec(cfg: &RunConfig) -> Result<PretrainSpec> {
    Ok(PretrainSpec {
        arch: cfg.arch_config()?,
        map: cfg.map_config(),
        tok: cfg.tokenizer,
        train: cfg.train,
        seed: cfg.seed,
    })
}

pub fn train_model(cfg: &RunConfig, segs: &[Segment], quiet: bool) -> Result<PretrainOutput> {
    let spec = pretrain_spec(cfg)?;
    train::pretrain(segs, &spec, |p| {
        log(quiet, || format!("step {:>6}  lr {:.3e}  loss {:.6}", p.step, p.lr, p.loss))
    })
    .context("pretrain")
}

/// Held-out style reconstruction score: masked-patch MSE with evaluation
/// masks.
pub fn eval_masked_mse(cfg: &RunConfig, state: &ModelState, segs: &[Segment]) -> Result<f64> {
    let seed = rng::derive(cfg.seed, rng::stream::EVAL_MASK);
    train::masked_mse(state, segs, &cfg.map_config(), &cfg.tokenizer, seed).context("pretrain")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub n_segments: usize,
    pub n_params: usize,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub masked_mse_init: f64,
    pub masked_mse_final: f64,
    pub skipped_segments: usize,
    pub attempted_segments: usize,
    pub checkpoint: String,
}

pub fn pretrain(cfg: &RunConfig, data: &Path, out: &Path, quiet: bool) -> Result<PretrainSummary> {
    let segs = load_segments(data)?;
    start(out, cfg)?;
    let arch = cfg.arch_config()?;
    let init = ModelState::init(arch, rng::derive(cfg.seed, rng::stream::INIT)).context("model")?;
    let mse0 = eval_masked_mse(cfg, &init, &segs)?;
    let run = train_model(cfg, &segs, quiet)?;
    let mse1 = eval_masked_mse(cfg, &run.state, &segs)?;

    Checkpoint::new(&run.state, Some(&run.opt))
        .and_then(|c| c.save(out.join(CHECKPOINT_FILE)))
        .context("io")?;
    write_curve(&out.join("loss_curve.csv"), &run.curve)?;

    let summary = PretrainSummary {
        n_segments: segs.len(),
        n_params: param_count(&arch),
        steps: run.curve.len(),
        initial_loss: run.curve.first().map_or(f64::NAN, |p| p.loss),
        final_loss: tail_mean(&run.curve),
        masked_mse_init: mse0,
        masked_mse_final: mse1,
        skipped_segments: run.skipped,
        attempted_segments: run.attempted,
        checkpoint: CHECKPOINT_FILE.into(),
    };
    finish(out, &summary)?;
    Ok(summary)
}

/// Mean loss over the last tenth of the curve (at least one step).
fn tail_mean(curve: &[LossPoint]) -> f64 {
    let n = (curve.len() / 10).max(1).min(curve.len());
    if n == 0 {
        return f64::NAN;
    }
    curve[curve.len() - n..].iter().map(|p| p.loss).sum::<f64>() / n as f64
}

fn write_curve(path: &Path, curve: &[LossPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "lr", "loss"])?;
    for p in curve {
        w.write_record([p.step.to_string(), p.lr.to_string(), p.loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Embedding of one segment plus its identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub user_id: String,
    pub segment_id: String,
    pub values: Vec<f64>,
}

/// Frozen-encoder embeddings of clean, unmasked segments. Degenerate segments
/// are returned by id in the second vector.
pub fn embed_segments(
    cfg: &RunConfig,
    state: &ModelState,
    segs: &[Segment],
) -> Result<(Vec<EmbeddingRow>, Vec<String>)> {
    let map = cfg.map_config();
    let prepared: Vec<Option<_>> = segs
        .par_iter()
        .map(|s| match prepare(&s.samples, s.fs_hz, state.cfg.mode, &map, &cfg.tokenizer) {
            Ok(p) => Ok(Some(p)),
            Err(mmr_core::Error::DegenerateSegment(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<mmr_core::Result<_>>()
        .context("embed")?;
    let kept: Vec<(usize, _)> = prepared
        .into_iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|p| (i, p)))
        .collect();
    let skipped = segs
        .iter()
        .enumerate()
        .filter(|(i, _)| !kept.iter().any(|(k, _)| k == i))
        .map(|(_, s)| s.segment_id.clone())
        .collect();
    let Some((_, first)) = kept.first() else {
        return Ok((Vec::new(), skipped));
    };
    if let Some((i, _)) = kept.iter().find(|(_, p)| p.grid != first.grid) {
        bail!("embed: segment {} tiles a different patch grid", segs[*i].segment_id);
    }
    let pos = PosTables::new(&first.grid, &state.cfg).context("embed")?;
    let chunks: Vec<Vec<Vec<f64>>> = kept
        .par_chunks(EMBED_CHUNK)
        .map(|c| {
            let batch: Vec<_> = c.iter().map(|(_, p)| &p.patches).collect();
            encode_batch(state, &batch, &pos.enc)
        })
        .collect::<mmr_core::Result<_>>()
        .context("embed")?;
    let rows = kept
        .iter()
        .zip(chunks.into_iter().flatten())
        .map(|((i, _), values)| EmbeddingRow {
            user_id: segs[*i].user_id.clone(),
            segment_id: segs[*i].segment_id.clone(),
            values,
        })
        .collect();
    Ok((rows, skipped))
}

pub fn write_embeddings(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.values.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["user_id".to_string(), "segment_id".to_string()];
    header.extend((0..d).map(|j| format!("e{j}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.user_id.clone(), r.segment_id.clone()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("io: cannot open {}", path.display()))?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "user_id" || &header[1] != "segment_id" {
        bail!("io: {} is not an embeddings table", path.display());
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("io: {} row {}", path.display(), line + 2))?;
        rows.push(EmbeddingRow {
            user_id: rec[0].to_string(),
            segment_id: rec[1].to_string(),
            values,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSummary {
    pub n_segments: usize,
    pub n_embedded: usize,
    pub skipped_segments: Vec<String>,
    pub dim: usize,
    pub embeddings: String,
}

/// `config.json` beside a checkpoint, as written by `pretrain`.
pub fn sibling_config(checkpoint: &Path) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE)
}

pub fn embed(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<EmbedSummary> {
    let state = Checkpoint::load(checkpoint)
        .and_then(|c| c.model())
        .with_context(|| format!("io: checkpoint {}", checkpoint.display()))?;
    let segs = load_segments(data)?;
    start(out, cfg)?;
    let (rows, skipped) = embed_segments(cfg, &state, &segs)?;
    write_embeddings(&out.join(EMBEDDINGS_FILE), &rows)?;
    let summary = EmbedSummary {
        n_segments: segs.len(),
        n_embedded: rows.len(),
        skipped_segments: skipped,
        dim: state.cfg.enc_dim,
        embeddings: EMBEDDINGS_FILE.into(),
    };
    finish(out, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub label: String,
    pub kind: TaskKind,
    pub n_segments: usize,
    pub reports: Vec<ProbeReport>,
    pub fold_warnings: Vec<String>,
}

impl TaskResult {
    pub fn report(&self, metric: MetricKind) -> Option<&ProbeReport> {
        self.reports.iter().find(|r| r.metric == metric)
    }
}

/// Grouped k-fold probe for one task. Segments without the label are left
/// out. Regression targets are stratified on above/below the median.
pub fn probe_task(
    cfg: &RunConfig,
    task: &TaskSpec,
    embeddings: &[Vec<f64>],
    segs: &[&Segment],
) -> Result<TaskResult> {
    let ctx = || format!("eval: task `{}`", task.label);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut users = Vec::new();
    for (e, s) in embeddings.iter().zip(segs) {
        if let Some(v) = s.label(&task.label) {
            x.push(e.clone());
            y.push(v);
            users.push(s.user_id.clone());
        }
    }
    if y.is_empty() {
        bail!("{}: no segment carries this label", ctx());
    }
    let strata: Vec<bool> = match task.kind {
        TaskKind::Classification => y.iter().map(|&v| v >= 0.5).collect(),
        TaskKind::Regression => {
            let mut s = y.clone();
            s.sort_by(f64::total_cmp);
            let med = eval::percentile_sorted(&s, 50.0);
            y.iter().map(|&v| v > med).collect()
        }
    };
    let plan = eval::make_folds(&users, &strata, cfg.eval.k_folds).with_context(ctx)?;
    let reports = eval::probe(&x, &y, &users, task.kind, &plan, &cfg.eval.probe).with_context(ctx)?;
    Ok(TaskResult {
        label: task.label.clone(),
        kind: task.kind,
        n_segments: y.len(),
        reports,
        fold_warnings: plan.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteSummary {
    pub embedding: Option<f64>,
    pub stat_features: Option<f64>,
    pub n_points: usize,
    pub warnings: Vec<String>,
}

/// Silhouette of the normal and elevated heart-rate groups, for the
/// embeddings and for raw-statistics features of the same segments.
pub fn hr_silhouettes(embeddings: &[Vec<f64>], segs: &[&Segment]) -> Result<SilhouetteSummary> {
    let mut emb = Vec::new();
    let mut stats = Vec::new();
    let mut groups = Vec::new();
    for (e, s) in embeddings.iter().zip(segs) {
        if let Some(g) = s.label("hr_bpm").and_then(eval::hr_group) {
            emb.push(e.clone());
            stats.push(eval::stat_features(&s.samples).context("eval")?);
            groups.push(g);
        }
    }
    let mut warnings = Vec::new();
    let mut score = |points: &[Vec<f64>], what: &str| match eval::silhouette(points, &groups) {
        Ok(s) => {
            warnings.extend(s.warnings.iter().map(|w| format!("{what}: {w}")));
            Some(s.score)
        }
        Err(e) => {
            warnings.push(format!("{what}: {e}"));
            None
        }
    };
    let embedding = score(&emb, "embedding");
    let stat_features = score(&stats, "stat features");
    Ok(SilhouetteSummary {
        embedding,
        stat_features,
        n_points: groups.len(),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub n_segments: usize,
    pub tasks: Vec<TaskResult>,
    pub silhouette: SilhouetteSummary,
    pub user_distances: Option<eval::Summary>,
    pub pca_explained_variance: Option<[f64; 2]>,
    pub warnings: Vec<String>,
}

/// Match embedding rows to labelled segments by `segment_id`.
fn join_labels<'a>(rows: &[EmbeddingRow], segs: &'a [Segment]) -> Result<Vec<&'a Segment>> {
    let by_id: BTreeMap<&str, &Segment> = segs.iter().map(|s| (s.segment_id.as_str(), s)).collect();
    rows.iter()
        .map(|r| {
            let s = by_id
                .get(r.segment_id.as_str())
                .copied()
                .ok_or_else(|| anyhow!("eval: no labels for segment {}", r.segment_id))?;
            if s.user_id != r.user_id {
                bail!("eval: segment {} belongs to {} in the labels file", r.segment_id, s.user_id);
            }
            Ok(s)
        })
        .collect()
}

pub fn probe(cfg: &RunConfig, embeddings: &Path, labels: &Path, out: &Path) -> Result<ProbeSummary> {
    let rows = read_embeddings(embeddings)?;
    if rows.is_empty() {
        bail!("eval: {} holds no embeddings", embeddings.display());
    }
    let segs = load_segments(labels)?;
    let joined = join_labels(&rows, &segs)?;
    start(out, cfg)?;
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
    let users: Vec<String> = rows.iter().map(|r| r.user_id.clone()).collect();

    let tasks = cfg
        .eval
        .tasks
        .iter()
        .map(|t| probe_task(cfg, t, &x, &joined))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(out.join("probe_folds.csv"))?;
    w.write_record(["task", "metric", "fold", "value"])?;
    for t in &tasks {
        for r in &t.reports {
            for (k, v) in r.per_fold.iter().enumerate() {
                w.write_record([t.label.clone(), tag(&r.metric), k.to_string(), v.map_or(String::new(), |v| v.to_string())])?;
            }
        }
    }
    w.flush()?;

    let silhouette = hr_silhouettes(&x, &joined)?;
    let mut warnings = Vec::new();

    let user_distances = match eval::pairwise_user_distances(&x, &users) {
        Ok(d) => {
            let mut w = csv::Writer::from_path(out.join("user_distances.csv"))?;
            w.write_record(["user_a", "user_b", "distance"])?;
            for &(i, j, v) in &d.pairs {
                w.write_record([d.users[i].as_str(), d.users[j].as_str(), &v.to_string()])?;
            }
            w.flush()?;
            let mut w = csv::Writer::from_path(out.join("distance_histogram.csv"))?;
            w.write_record(["lo", "hi", "count"])?;
            for (lo, hi, c) in d.histogram(cfg.eval.histogram_bins) {
                w.write_record([lo.to_string(), hi.to_string(), c.to_string()])?;
            }
            w.flush()?;
            Some(d.summary)
        }
        Err(e) => {
            warnings.push(format!("user distances: {e}"));
            None
        }
    };

    let pca_explained_variance = match eval::pca2(&x) {
        Ok(p) => {
            let mut w = csv::Writer::from_path(out.join("pca.csv"))?;
            w.write_record(["user_id", "segment_id", "pc1", "pc2"])?;
            for (r, c) in rows.iter().zip(&p.coords) {
                w.write_record([r.user_id.as_str(), r.segment_id.as_str(), &c[0].to_string(), &c[1].to_string()])?;
            }
            w.flush()?;
            Some(p.explained_variance)
        }
        Err(e) => {
            warnings.push(format!("pca: {e}"));
            None
        }
    };

    let summary = ProbeSummary {
        n_segments: rows.len(),
        tasks,
        silhouette,
        user_distances,
        pca_explained_variance,
        warnings,
    };
    finish(out, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub point: GridPoint,
    /// Metric name to `(mean, min, max)`.
    pub metrics: BTreeMap<String, (f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateSummary {
    pub n_points: usize,
    pub runs: Vec<AblationRun>,
    /// Grid points that do not fit the data, with the reason. They appear in
    /// the tables with status `invalid` and empty values.
    pub invalid: Vec<(GridPoint, String)>,
    pub tables: Vec<String>,
}

/// Whether a grid point yields a usable config and patch grid for `segs`.
fn check_point(cfg: &RunConfig, segs: &[Segment]) -> std::result::Result<(), String> {
    cfg.validate().map_err(|e| e.to_string())?;
    let arch = cfg.arch_config().map_err(|e| e.to_string())?;
    let s = &segs[0];
    prepare(&s.samples, s.fs_hz, arch.mode, &cfg.map_config(), &cfg.tokenizer)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

pub fn run_point(cfg: &RunConfig, segs: &[Segment], quiet: bool) -> Result<BTreeMap<String, (f64, f64, f64)>> {
    let run = train_model(cfg, segs, quiet)?;
    let mut metrics = BTreeMap::new();
    let loss = tail_mean(&run.curve);
    metrics.insert("final_loss".to_string(), (loss, loss, loss));
    let mse = eval_masked_mse(cfg, &run.state, segs)?;
    metrics.insert("masked_mse".to_string(), (mse, mse, mse));
    let (rows, _) = embed_segments(cfg, &run.state, segs)?;
    let joined = join_labels(&rows, segs)?;
    let x: Vec<Vec<f64>> = rows.into_iter().map(|r| r.values).collect();
    for task in &cfg.eval.tasks {
        let t = probe_task(cfg, task, &x, &joined)?;
        for r in &t.reports {
            metrics.insert(format!("{}_{}", t.label, tag(&r.metric)), (r.mean, r.min, r.max));
        }
    }
    Ok(metrics)
}

pub fn ablate(cfg: &RunConfig, grid: &AblationGrid, data: &Path, out: &Path, quiet: bool) -> Result<AblateSummary> {
    let segs = load_segments(data)?;
    start(out, cfg)?;
    fs::write(out.join("grid.json"), serde_json::to_string_pretty(grid)? + "\n")?;
    let points = grid.points(cfg);
    let mut runs = Vec::new();
    let mut invalid = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let run_cfg = p.apply(cfg);
        if let Err(why) = check_point(&run_cfg, &segs) {
            log(quiet, || format!("[{}/{}] skipped {p:?}: {why}", i + 1, points.len()));
            invalid.push((*p, why));
            continue;
        }
        log(quiet, || format!("[{}/{}] {p:?}", i + 1, points.len()));
        let metrics = run_point(&run_cfg, &segs, true).with_context(|| format!("ablate: grid point {p:?}"))?;
        runs.push(AblationRun { point: *p, metrics });
    }

    let names: Vec<String> = runs
        .iter()
        .flat_map(|r| r.metrics.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut tables = Vec::new();
    for name in &names {
        let file = format!("ablate_{name}.csv");
        let mut w = csv::Writer::from_path(out.join(&file))?;
        w.write_record([
            "family", "level", "patch_rows", "patch_cols", "mask", "interp", "status", "mean", "min", "max",
        ])?;
        for p in &points {
            let run = runs.iter().find(|r| r.point == *p);
            let (status, vals) = match run.and_then(|r| r.metrics.get(name)) {
                Some(&(mean, min, max)) => ("ok", [mean.to_string(), min.to_string(), max.to_string()]),
                None => ("invalid", Default::default()),
            };
            let mut rec = vec![
                tag(&p.family),
                p.level.to_string(),
                p.patch_rows.to_string(),
                p.patch_cols.to_string(),
                tag(&p.mask),
                tag(&p.interp),
                status.to_string(),
            ];
            rec.extend(vals);
            w.write_record(&rec)?;
        }
        w.flush()?;
        tables.push(file);
    }
    let summary = AblateSummary {
        n_points: points.len(),
        runs,
        invalid,
        tables,
    };
    finish(out, &summary)?;
    Ok(summary)
}
