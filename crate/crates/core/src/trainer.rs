//! End-to-end optimization: the aggregated parameter set, the full forward
//! pipeline, an Adam loop with per-epoch learning-rate decay and
//! augmentation, JSON checkpoints, and checkpoint-driven inference.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::backbone::{self, BackboneParams, BackboneVars};
use crate::config::{Config, TrainConfig};
use crate::datagen::synthetic::SyntheticPair;
use crate::datagen::ImagePairRecord;
use crate::descriptor::{self, DustbinParam};
use crate::error::{Error, Result};
use crate::eval::transforms::{rotated_pair, scaled_pair};
use crate::eval::{aggregate, precision_recall_f, EvalPair, MatchMetrics};
use crate::graphnet::{self, GraphParams, GraphVars};
use crate::imgio;
use crate::losses;
use crate::transport::extract_matches;
use crate::types::{GroundTruth, LineSegment, MatchSet};

/// Every learnable tensor of the pipeline: backbone stages, the shared
/// dustbin descriptor, the graph blocks, and the final affinity weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    pub backbone: BackboneParams,
    pub dustbin: DustbinParam,
    pub graph: GraphParams,
    /// `(width, width)` bilinear form between the two embedding sets.
    pub affinity: ArrayD<f64>,
}

impl ModelParams {
    /// Random initialization sized from the config. The affinity starts
    /// near the identity so early transport plans already reward cosine
    /// similarity between embeddings.
    pub fn init(cfg: &Config, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let backbone = BackboneParams::init(&cfg.backbone, rng);
        let input_dim = joint_descriptor_dim(cfg);
        let dustbin = DustbinParam::init(input_dim, rng);
        let graph = GraphParams::init(input_dim, &cfg.graph, rng);
        let w = cfg.graph.width;
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut affinity = ArrayD::zeros(IxDyn(&[w, w]));
        for i in 0..w {
            for j in 0..w {
                affinity[[i, j]] = noise.sample(rng) + if i == j { 1.0 } else { 0.0 };
            }
        }
        Ok(ModelParams { backbone, dustbin, graph, affinity })
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for_each_tensor(self, &mut |s| n += s.len());
        n
    }
}

/// Width of the joint (shallow + deep) descriptor under a config.
pub fn joint_descriptor_dim(cfg: &Config) -> usize {
    let c3 = cfg.backbone.channels[cfg.backbone.shallow_tap - 1];
    let c5 = cfg.backbone.channels[cfg.backbone.deep_tap - 1];
    c3 + c5
}

/// Visit every parameter tensor as a flat slice, in the canonical order
/// shared by gradients, Adam state, and checkpoints.
fn for_each_tensor(p: &ModelParams, f: &mut impl FnMut(&[f64])) {
    for s in &p.backbone.stages {
        f(s.kernel.as_slice().expect("standard layout"));
        f(s.bias.as_slice().expect("standard layout"));
    }
    f(p.dustbin.u.as_slice().expect("standard layout"));
    for l in &p.graph.layers {
        f(l.omega.as_slice().expect("standard layout"));
        f(l.a1.as_slice().expect("standard layout"));
        f(l.a2.as_slice().expect("standard layout"));
        f(l.theta_nbr.as_slice().expect("standard layout"));
        f(l.theta_self.as_slice().expect("standard layout"));
        f(l.cross_w.as_slice().expect("standard layout"));
    }
    f(p.affinity.as_slice().expect("standard layout"));
}

fn for_each_tensor_mut(p: &mut ModelParams, f: &mut impl FnMut(&mut [f64])) {
    for s in &mut p.backbone.stages {
        f(s.kernel.as_slice_mut().expect("standard layout"));
        f(s.bias.as_slice_mut().expect("standard layout"));
    }
    f(p.dustbin.u.as_slice_mut().expect("standard layout"));
    for l in &mut p.graph.layers {
        f(l.omega.as_slice_mut().expect("standard layout"));
        f(l.a1.as_slice_mut().expect("standard layout"));
        f(l.a2.as_slice_mut().expect("standard layout"));
        f(l.theta_nbr.as_slice_mut().expect("standard layout"));
        f(l.theta_self.as_slice_mut().expect("standard layout"));
        f(l.cross_w.as_slice_mut().expect("standard layout"));
    }
    f(p.affinity.as_slice_mut().expect("standard layout"));
}

/// Tape handles for all parameters, in the same canonical order.
pub struct ModelVars {
    pub backbone: BackboneVars,
    pub dustbin: Var,
    pub graph: GraphVars,
    pub affinity: Var,
}

pub fn leaf_model(tape: &Tape, params: &ModelParams, trainable: bool) -> ModelVars {
    ModelVars {
        backbone: backbone::leaf_params(tape, &params.backbone, trainable),
        dustbin: tape.leaf(params.dustbin.u.clone(), trainable),
        graph: graphnet::leaf_graph_params(tape, &params.graph, trainable),
        affinity: tape.leaf(params.affinity.clone(), trainable),
    }
}

impl ModelVars {
    /// All parameter handles in canonical order.
    pub fn var_list(&self) -> Vec<Var> {
        let mut vars = Vec::new();
        for &(k, b) in &self.backbone.stages {
            vars.push(k);
            vars.push(b);
        }
        vars.push(self.dustbin);
        for l in &self.graph.layers {
            vars.extend([l.omega, l.a1, l.a2, l.theta_nbr, l.theta_self, l.cross_w]);
        }
        vars.push(self.affinity);
        vars
    }
}

/// Concatenate the gradients of all parameters into one flat vector in
/// canonical order; parameters the loss never touched contribute zeros.
pub fn flatten_grads(tape: &Tape, vars: &ModelVars, grads: &Gradients) -> Vec<f64> {
    let mut flat = Vec::new();
    for v in vars.var_list() {
        let shape = tape.value(v).shape().to_vec();
        let g = grads.get_or_zeros(v, &shape);
        flat.extend(g.as_slice().expect("standard layout"));
    }
    flat
}

/// First and second moment accumulators for the adaptive-moment optimizer,
/// flat over the canonical parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState { step: 0, m: vec![0.0; param_count], v: vec![0.0; param_count] }
    }
}

/// One bias-corrected adaptive-moment update over all parameters.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != state.m.len() {
        return Err(Error::shape(format!(
            "gradient length {} does not match optimizer state {}",
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut offset = 0;
    for_each_tensor_mut(params, &mut |slice| {
        for (i, p) in slice.iter_mut().enumerate() {
            let g = grads[offset + i];
            let m = &mut state.m[offset + i];
            let v = &mut state.v[offset + i];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
        offset += slice.len();
    });
    Ok(())
}

/// Learning rate for a 0-based epoch: divide by the decay factor each epoch,
/// never below the floor.
pub fn lr_for_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    (cfg.lr / cfg.lr_decay.powi(epoch as i32)).max(cfg.lr_floor)
}

/// One training example with pixels in memory.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub image_a: Array2<f64>,
    pub image_b: Array2<f64>,
    pub lines_a: Vec<LineSegment>,
    pub lines_b: Vec<LineSegment>,
    pub gt: GroundTruth,
}

impl TrainRecord {
    /// Load a manifest record's images, resolving relative paths against
    /// `base` (normally the manifest's directory).
    pub fn from_manifest_record(record: &ImagePairRecord, base: &Path) -> Result<Self> {
        record.validate()?;
        let resolve = |p: &str| {
            let path = Path::new(p);
            if path.is_absolute() { path.to_path_buf() } else { base.join(path) }
        };
        Ok(TrainRecord {
            image_a: imgio::load_gray_png(&resolve(&record.image_a))?,
            image_b: imgio::load_gray_png(&resolve(&record.image_b))?,
            lines_a: record.lines_a.clone(),
            lines_b: record.lines_b.clone(),
            gt: record.gt.clone(),
        })
    }

    pub fn from_synthetic(pair: &SyntheticPair) -> Self {
        TrainRecord {
            image_a: pair.image_a.clone(),
            image_b: pair.image_b.clone(),
            lines_a: pair.lines_a.clone(),
            lines_b: pair.lines_b.clone(),
            gt: pair.gt.clone(),
        }
    }

    pub fn as_eval(&self) -> EvalPair<'_> {
        EvalPair {
            image_a: &self.image_a,
            image_b: &self.image_b,
            lines_a: &self.lines_a,
            lines_b: &self.lines_b,
            gt: &self.gt,
        }
    }
}

/// Taped outputs of the matching pipeline before any loss is attached.
pub struct EmbeddedPair {
    /// Final log transport plan over kept lines plus dustbins.
    pub log_p: Var,
    /// Source indices of the lines that survived exclusion.
    pub keep_a: Vec<usize>,
    pub keep_b: Vec<usize>,
    /// Kept per-tap descriptors (unit rows) for the descriptor loss.
    pub a_shallow: Var,
    pub a_deep: Var,
    pub b_shallow: Var,
    pub b_deep: Var,
    pub converged: bool,
}

/// Run backbone, pooled descriptors, exclusion, graph convolution, and
/// transport. Returns None when one side has no lines left to match (the
/// record should be skipped or reported all-unmatched).
pub fn forward_embed(
    tape: &Tape,
    vars: &ModelVars,
    image_a: &Array2<f64>,
    image_b: &Array2<f64>,
    lines_a: &[LineSegment],
    lines_b: &[LineSegment],
    cfg: &Config,
) -> Result<Option<EmbeddedPair>> {
    if lines_a.is_empty() || lines_b.is_empty() {
        return Ok(None);
    }
    let channels = cfg.backbone.input_channels;
    let run_side = |gray: &Array2<f64>, lines: &[LineSegment]| -> Result<descriptor::LineDescriptors> {
        let tensor: Array3<f64> = imgio::to_input_tensor(gray, channels);
        let image = tape.constant(tensor.into_dyn());
        let taps = backbone::forward(tape, &vars.backbone, image, &cfg.backbone)?;
        descriptor::describe_lines(tape, &taps, lines, &cfg.descriptor)
    };
    let desc_a = run_side(image_a, lines_a)?;
    let desc_b = run_side(image_b, lines_b)?;

    let all_a: Vec<usize> = (0..lines_a.len()).collect();
    let all_b: Vec<usize> = (0..lines_b.len()).collect();
    let (keep_a, keep_b) = if cfg.descriptor.exclusion_enabled {
        let ja = to2(tape.value_owned(desc_a.joint));
        let jb = to2(tape.value_owned(desc_b.joint));
        descriptor::exclusion_keep(&ja, &jb, cfg.descriptor.exclusion_threshold)
    } else {
        (all_a.clone(), all_b.clone())
    };
    if keep_a.is_empty() || keep_b.is_empty() {
        return Ok(None);
    }
    let select = |full: Var, keep: &[usize], n: usize| {
        if keep.len() == n { full } else { tape.gather_rows(full, keep) }
    };
    let a_joint = select(desc_a.joint, &keep_a, lines_a.len());
    let b_joint = select(desc_b.joint, &keep_b, lines_b.len());
    let a_shallow = select(desc_a.shallow, &keep_a, lines_a.len());
    let a_deep = select(desc_a.deep, &keep_a, lines_a.len());
    let b_shallow = select(desc_b.shallow, &keep_b, lines_b.len());
    let b_deep = select(desc_b.deep, &keep_b, lines_b.len());

    let fa0 = descriptor::append_dustbin(tape, a_joint, vars.dustbin);
    let fb0 = descriptor::append_dustbin(tape, b_joint, vars.dustbin);
    let out = graphnet::graph_forward(
        tape,
        fa0,
        fb0,
        &vars.graph,
        vars.affinity,
        &cfg.graph,
        &cfg.transport,
    )?;
    Ok(Some(EmbeddedPair {
        log_p: out.log_p,
        keep_a,
        keep_b,
        a_shallow,
        a_deep,
        b_shallow,
        b_deep,
        converged: out.converged,
    }))
}

fn to2(a: ArrayD<f64>) -> Array2<f64> {
    a.into_dimensionality::<ndarray::Ix2>().expect("2-d array")
}

/// Pipeline outputs with the training losses attached.
pub struct PipelineOut {
    pub embed: EmbeddedPair,
    /// Ground truth relabeled into the kept-line index space.
    pub gt_kept: GroundTruth,
    pub feature: Var,
    pub graph_loss: Var,
    pub total: Var,
    pub warned: bool,
}

/// Full training forward pass: embed both images, relabel the ground truth
/// after exclusion, and build the combined loss. Returns None when the
/// record has nothing left to train on.
#[allow(clippy::too_many_arguments)]
pub fn forward_pipeline(
    tape: &Tape,
    vars: &ModelVars,
    image_a: &Array2<f64>,
    image_b: &Array2<f64>,
    lines_a: &[LineSegment],
    lines_b: &[LineSegment],
    gt: &GroundTruth,
    cfg: &Config,
) -> Result<Option<PipelineOut>> {
    let embed = match forward_embed(tape, vars, image_a, image_b, lines_a, lines_b, cfg)? {
        Some(e) => e,
        None => return Ok(None),
    };
    let gt_kept = descriptor::relabel_after_exclusion(
        gt,
        &embed.keep_a,
        &embed.keep_b,
        lines_a.len(),
        lines_b.len(),
    )?;
    let feature = losses::feature_learning_loss(
        tape,
        embed.a_shallow,
        embed.a_deep,
        embed.b_shallow,
        embed.b_deep,
        &gt_kept.pairs,
        &cfg.loss,
    )?;
    let graph = losses::matching_loss(tape, embed.log_p, &gt_kept)?;
    let total = losses::total_loss(tape, feature.value, graph.value, cfg.loss.balance);
    Ok(Some(PipelineOut {
        embed,
        gt_kept,
        feature: feature.value,
        graph_loss: graph.value,
        total,
        warned: feature.warned || graph.warned,
    }))
}

/// Serialized training state: parameters, optimizer state, progress, and
/// the hash of the config that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    pub params: ModelParams,
    pub adam: AdamState,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        if !path.exists() {
            return Err(Error::MissingArtifact(format!("checkpoint {}", path.display())));
        }
        let data = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&data)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

/// One optimizer step's log row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub feature: f64,
    pub graph: f64,
    pub total: f64,
    /// Records in this batch skipped by exclusion.
    pub skipped: usize,
}

/// Final checkpoint plus the full step log.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepLog>,
    pub skipped_records: usize,
}

/// CSV rendering of a training run: a config-hash comment line, a header,
/// and one row per optimizer step.
pub fn train_log_csv(config_hash: &str, steps: &[StepLog]) -> String {
    let mut out = format!("# config {config_hash}\nepoch,step,lr,feature,graph,total,skipped\n");
    for s in steps {
        out.push_str(&format!(
            "{},{},{:e},{:.6},{:.6},{:.6},{}\n",
            s.epoch, s.step, s.lr, s.feature, s.graph, s.total, s.skipped
        ));
    }
    out
}

/// Random resize and rotation with exact endpoint remapping; falls back to
/// the untouched record when the transform leaves nothing to train on.
fn augment_record(rec: &TrainRecord, cfg: &TrainConfig, rng: &mut impl Rng) -> TrainRecord {
    let s_range = cfg.augment_scale_range;
    let s = rng.random_range(s_range.0..=s_range.1);
    let max_rot = cfg.augment_max_rotation_deg;
    let theta = if max_rot > 0.0 { rng.random_range(-max_rot..=max_rot) } else { 0.0 };
    let scaled = match scaled_pair(&rec.as_eval(), s) {
        Ok(p) => p,
        Err(_) => return rec.clone(),
    };
    let rotated = match rotated_pair(&scaled.as_eval(), theta) {
        Ok(p) => p,
        Err(_) => return rec.clone(),
    };
    if rotated.gt.pairs.is_empty() || rotated.lines_a.is_empty() || rotated.lines_b.is_empty() {
        return rec.clone();
    }
    TrainRecord {
        image_a: rotated.image_a,
        image_b: rotated.image_b,
        lines_a: rotated.lines_a,
        lines_b: rotated.lines_b,
        gt: rotated.gt,
    }
}

/// Run the optimization loop. Checkpoints are written into `out_dir`
/// after every epoch when given; a non-finite loss aborts immediately,
/// leaving the last epoch's checkpoint as the most recent good state.
pub fn train(records: &[TrainRecord], cfg: &Config, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let hash = cfg.hash();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut params = ModelParams::init(cfg, &mut init_rng)?;
    let mut adam = AdamState::new(params.param_count());
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x9E37_79B9_7F4A_7C15);

    let mut steps = Vec::new();
    let mut skipped_records = 0usize;
    for epoch in 0..cfg.train.epochs {
        let lr = lr_for_epoch(&cfg.train, epoch);
        let mut order: Vec<usize> = (0..records.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut data_rng);
        for (step_idx, batch) in order.chunks(cfg.train.batch_size).enumerate() {
            let mut grad_acc: Vec<f64> = vec![0.0; adam.m.len()];
            let mut contributing = 0usize;
            let mut batch_skipped = 0usize;
            let (mut feat_sum, mut graph_sum, mut total_sum) = (0.0, 0.0, 0.0);
            for &ri in batch {
                let rec = if cfg.train.augment {
                    augment_record(&records[ri], &cfg.train, &mut data_rng)
                } else {
                    records[ri].clone()
                };
                let tape = Tape::new();
                let vars = leaf_model(&tape, &params, true);
                let out = forward_pipeline(
                    &tape,
                    &vars,
                    &rec.image_a,
                    &rec.image_b,
                    &rec.lines_a,
                    &rec.lines_b,
                    &rec.gt,
                    cfg,
                )?;
                let out = match out {
                    Some(o) => o,
                    None => {
                        batch_skipped += 1;
                        skipped_records += 1;
                        continue;
                    }
                };
                let total = tape.scalar(out.total);
                if !total.is_finite() {
                    return Err(Error::NonFinite("training loss"));
                }
                feat_sum += tape.scalar(out.feature);
                graph_sum += tape.scalar(out.graph_loss);
                total_sum += total;
                let grads = tape.backward(out.total);
                let flat = flatten_grads(&tape, &vars, &grads);
                for (a, g) in grad_acc.iter_mut().zip(flat) {
                    *a += g;
                }
                contributing += 1;
            }
            if contributing == 0 {
                continue;
            }
            let inv = 1.0 / contributing as f64;
            for g in &mut grad_acc {
                *g *= inv;
            }
            if grad_acc.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("parameter gradient"));
            }
            adam_step(&mut params, &grad_acc, &mut adam, lr, &cfg.train)?;
            steps.push(StepLog {
                epoch,
                step: step_idx,
                lr,
                feature: feat_sum * inv,
                graph: graph_sum * inv,
                total: total_sum * inv,
                skipped: batch_skipped,
            });
        }
        if let Some(dir) = out_dir {
            let ckpt = Checkpoint {
                version: CHECKPOINT_VERSION,
                config_hash: hash.clone(),
                epoch: epoch + 1,
                params: params.clone(),
                adam: adam.clone(),
            };
            ckpt.save(&dir.join(format!("checkpoint_epoch{:02}.json", epoch + 1)))?;
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: hash,
            epoch: cfg.train.epochs,
            params,
            adam,
        },
        steps,
        skipped_records,
    })
}

/// Inference: run the pipeline and extract a hard matching, mapping kept
/// indices back to the caller's original line indices. Lines dropped by
/// exclusion (or an empty opposite side) report as unmatched.
pub fn match_images(
    params: &ModelParams,
    image_a: &Array2<f64>,
    image_b: &Array2<f64>,
    lines_a: &[LineSegment],
    lines_b: &[LineSegment],
    cfg: &Config,
) -> Result<MatchSet> {
    let tape = Tape::new();
    let vars = leaf_model(&tape, params, false);
    let embed = forward_embed(&tape, &vars, image_a, image_b, lines_a, lines_b, cfg)?;
    let embed = match embed {
        Some(e) => e,
        None => {
            return Ok(MatchSet {
                matches: vec![],
                unmatched_a: (0..lines_a.len()).collect(),
                unmatched_b: (0..lines_b.len()).collect(),
            })
        }
    };
    let log_p = to2(tape.value_owned(embed.log_p));
    let kept = extract_matches(&log_p, cfg.transport.score_floor);
    let mut matches: Vec<(usize, usize, f64)> = kept
        .matches
        .iter()
        .map(|&(i, j, p)| (embed.keep_a[i], embed.keep_b[j], p))
        .collect();
    matches.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let matched_a: std::collections::HashSet<usize> = matches.iter().map(|m| m.0).collect();
    let matched_b: std::collections::HashSet<usize> = matches.iter().map(|m| m.1).collect();
    let unmatched_a = (0..lines_a.len()).filter(|i| !matched_a.contains(i)).collect();
    let unmatched_b = (0..lines_b.len()).filter(|j| !matched_b.contains(j)).collect();
    Ok(MatchSet { matches, unmatched_a, unmatched_b })
}

/// Match every record and pool the metrics (micro-average), also returning
/// the per-record metrics.
pub fn evaluate_records(
    params: &ModelParams,
    records: &[TrainRecord],
    cfg: &Config,
) -> Result<(MatchMetrics, Vec<MatchMetrics>)> {
    let mut per_record = Vec::with_capacity(records.len());
    for rec in records {
        let predicted = match_images(
            params,
            &rec.image_a,
            &rec.image_b,
            &rec.lines_a,
            &rec.lines_b,
            cfg,
        )?;
        per_record.push(precision_recall_f(&predicted, &rec.gt));
    }
    Ok((aggregate(&per_record), per_record))
}

/// Robustness sweep pooled over a dataset: each record is swept with the
/// model as matcher, then metrics are micro-averaged per axis value.
/// A value where no record kept any ground truth stays undefined.
pub fn sweep_records(
    params: &ModelParams,
    records: &[TrainRecord],
    axis: crate::eval::SweepAxis,
    values: &[f64],
    cfg: &Config,
) -> Result<crate::eval::SweepResult> {
    use crate::eval::{robustness_sweep, SweepPoint, SweepResult};
    let mut per_value: Vec<Vec<MatchMetrics>> = vec![Vec::new(); values.len()];
    for rec in records {
        let sweep = robustness_sweep(&rec.as_eval(), axis, values, |pair: &EvalPair| {
            match_images(params, pair.image_a, pair.image_b, pair.lines_a, pair.lines_b, cfg)
        })?;
        for (slot, point) in per_value.iter_mut().zip(&sweep.points) {
            if let Some(m) = point.metrics {
                slot.push(m);
            }
        }
    }
    let points = values
        .iter()
        .zip(per_value)
        .map(|(&value, ms)| SweepPoint {
            value,
            metrics: if ms.is_empty() { None } else { Some(aggregate(&ms)) },
        })
        .collect();
    Ok(SweepResult { axis, points })
}
