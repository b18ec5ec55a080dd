//! Minibatch SGD with momentum over the cross-entropy objective, group-wise
//! validation splitting, best-validation model selection, temperature
//! calibration, and the finite-difference gradient oracle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matops;
use super::{softmax_scaled, AuxHead, MlpModel, TrainMode};
use crate::error::{Error, Result};
use crate::uncertainty::{u_var, GradeScale, UncertaintyKind};
use crate::util::stream_rng;
use crate::worlds::LabeledInstance;

/// Log-probability clip inside cross-entropy.
const LOG_CLIP: f64 = 1e-12;
/// Weight of the experimental auxiliary variance-regression loss.
pub const DEFAULT_AUX_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Which binarized target drives DUP training.
    pub uncertainty: UncertaintyKind,
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub calibrate: bool,
    /// Enables the experimental variance-regression head (DUP mode).
    #[serde(default)]
    pub aux_variance_weight: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Dup,
            uncertainty: UncertaintyKind::Disagree,
            hidden_dims: vec![300, 300],
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            validation_fraction: 0.1,
            calibrate: false,
            aux_variance_weight: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid("learning rate must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation fraction must be in [0, 0.5)"));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("hidden dims must be positive"));
        }
        Ok(())
    }
}

/// A trained model plus the bookkeeping the experiment driver reports.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: MlpModel,
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
    pub best_epoch: usize,
    pub val_losses: Vec<f64>,
    /// Fitted temperature when calibration ran.
    pub temperature: Option<f64>,
}

/// Flat training tensors extracted from instances.
struct TrainingData {
    feats: Vec<f64>,
    soft: Vec<f64>,
    aux: Vec<f64>,
    n: usize,
    d_in: usize,
    d_out: usize,
}

impl TrainingData {
    fn build(
        instances: &[LabeledInstance],
        mode: TrainMode,
        kind: UncertaintyKind,
        with_aux: bool,
    ) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let d_in = instances[0].feature_dim();
        let k = instances[0].histogram.k();
        let d_out = match mode {
            TrainMode::Dup => 2,
            TrainMode::Uvc => k,
        };
        let aux_scale = if with_aux { Some(GradeScale::uniform(k)?) } else { None };
        let mut feats = Vec::with_capacity(instances.len() * d_in);
        let mut soft = Vec::with_capacity(instances.len() * d_out);
        let mut aux = Vec::with_capacity(if with_aux { instances.len() } else { 0 });
        for inst in instances {
            if inst.feature_dim() != d_in {
                return Err(Error::invalid("instances disagree on feature dimension"));
            }
            if inst.histogram.k() != k {
                return Err(Error::invalid("instances disagree on grade count"));
            }
            feats.extend_from_slice(&inst.features);
            match mode {
                TrainMode::Dup => {
                    let t = inst.target(kind).map_err(|_| {
                        Error::invalid(format!(
                            "mode/target mismatch: instance lacks a {kind} target"
                        ))
                    })?;
                    soft.push(if t { 0.0 } else { 1.0 });
                    soft.push(if t { 1.0 } else { 0.0 });
                }
                TrainMode::Uvc => soft.extend_from_slice(inst.histogram.mass()),
            }
            if let Some(scale) = &aux_scale {
                aux.push(u_var(&inst.histogram, scale)?);
            }
        }
        Ok(Self { feats, soft, aux, n: instances.len(), d_in, d_out })
    }

    fn features_of(&self, idx: usize) -> &[f64] {
        &self.feats[idx * self.d_in..(idx + 1) * self.d_in]
    }

    fn soft_of(&self, idx: usize) -> &[f64] {
        &self.soft[idx * self.d_out..(idx + 1) * self.d_out]
    }
}

/// Per-layer scratch for batched passes.
struct Workspace {
    /// acts[0] is the input batch; acts[l+1] the post-activation of layer l.
    acts: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    zs: Vec<Vec<f64>>,
    probs: Vec<f64>,
    deltas: Vec<Vec<f64>>,
    aux_pred: Vec<f64>,
    capacity: usize,
}

impl Workspace {
    fn new(dims: &[usize], capacity: usize) -> Self {
        let acts = dims.iter().map(|&d| vec![0.0; capacity * d]).collect();
        let zs = dims[1..].iter().map(|&d| vec![0.0; capacity * d]).collect();
        let deltas = dims[1..].iter().map(|&d| vec![0.0; capacity * d]).collect();
        let probs = vec![0.0; capacity * dims[dims.len() - 1]];
        Self { acts, zs, probs, deltas, aux_pred: vec![0.0; capacity], capacity }
    }
}

struct Gradients {
    dw: Vec<Vec<f64>>,
    db: Vec<Vec<f64>>,
    d_aux_w: Vec<f64>,
    d_aux_b: f64,
}

impl Gradients {
    fn new(dims: &[usize]) -> Self {
        let dw = (0..dims.len() - 1).map(|l| vec![0.0; dims[l] * dims[l + 1]]).collect();
        let db = (0..dims.len() - 1).map(|l| vec![0.0; dims[l + 1]]).collect();
        let d_aux_w = vec![0.0; dims[dims.len() - 2]];
        Self { dw, db, d_aux_w, d_aux_b: 0.0 }
    }
}

/// Runs the batch named by `idxs` through the model; activations, logits and
/// temperature-scaled probabilities land in the workspace.
fn forward_batch(model: &MlpModel, data: &TrainingData, idxs: &[usize], ws: &mut Workspace) {
    let b = idxs.len();
    debug_assert!(b <= ws.capacity);
    let dims = model.layer_dims();
    let layers = dims.len() - 1;
    for (s, &idx) in idxs.iter().enumerate() {
        ws.acts[0][s * data.d_in..(s + 1) * data.d_in].copy_from_slice(data.features_of(idx));
    }
    let (weights, biases) = model.params();
    for l in 0..layers {
        let (din, dout) = (dims[l], dims[l + 1]);
        let (before, after) = ws.acts.split_at_mut(l + 1);
        matops::linear_forward(
            &before[l][..b * din],
            &weights[l],
            &biases[l],
            b,
            din,
            dout,
            &mut ws.zs[l][..b * dout],
        );
        let act = &mut after[0][..b * dout];
        if l + 1 < layers {
            for (a, &z) in act.iter_mut().zip(&ws.zs[l][..b * dout]) {
                *a = z.max(0.0);
            }
        } else {
            act.copy_from_slice(&ws.zs[l][..b * dout]);
        }
    }
    let d_out = dims[layers];
    for s in 0..b {
        let logits = &ws.acts[layers][s * d_out..(s + 1) * d_out];
        let p = softmax_scaled(logits, model.temperature());
        ws.probs[s * d_out..(s + 1) * d_out].copy_from_slice(&p);
    }
}

/// Mean cross-entropy of the probabilities already in the workspace.
fn batch_ce(ws: &Workspace, data: &TrainingData, idxs: &[usize]) -> f64 {
    let b = idxs.len();
    let d_out = data.d_out;
    let mut total = 0.0;
    for (s, &idx) in idxs.iter().enumerate() {
        let t = data.soft_of(idx);
        let p = &ws.probs[s * d_out..(s + 1) * d_out];
        for l in 0..d_out {
            if t[l] > 0.0 {
                total -= t[l] * p[l].max(LOG_CLIP).ln();
            }
        }
    }
    total / b as f64
}

fn batch_aux_loss(ws: &Workspace, data: &TrainingData, idxs: &[usize], weight: f64) -> f64 {
    let mut total = 0.0;
    for (s, &idx) in idxs.iter().enumerate() {
        let d = ws.aux_pred[s] - data.aux[idx];
        total += d * d;
    }
    weight * total / idxs.len() as f64
}

/// Full training objective (cross-entropy plus the auxiliary term when the
/// model has an aux head) on the given instances.
fn objective(model: &MlpModel, data: &TrainingData, idxs: &[usize], aux_weight: f64) -> f64 {
    let dims = model.layer_dims().to_vec();
    let mut total = 0.0;
    let chunk_cap = idxs.len().min(256).max(1);
    let mut ws = Workspace::new(&dims, chunk_cap);
    let hidden = dims[dims.len() - 2];
    for chunk in idxs.chunks(chunk_cap) {
        forward_batch(model, data, chunk, &mut ws);
        let mut part = batch_ce(&ws, data, chunk);
        if let Some(head) = model.aux_head() {
            let b = chunk.len();
            let acts = &ws.acts[dims.len() - 2][..b * hidden];
            eval_aux_into(acts, head, b, hidden, &mut ws.aux_pred);
            part += batch_aux_loss(&ws, data, chunk, aux_weight);
        }
        total += part * chunk.len() as f64;
    }
    total / idxs.len() as f64
}

/// aux_pred[s] = dot(head.weights, hidden activation of sample s) + bias.
fn eval_aux_into(hidden_act: &[f64], head: &AuxHead, b: usize, hidden: usize, pred: &mut [f64]) {
    for s in 0..b {
        pred[s] = matops::dot(&hidden_act[s * hidden..(s + 1) * hidden], &head.weights) + head.bias;
    }
}

/// Backward pass over the batch currently in the workspace; gradients of the
/// mean objective land in `grads`.
fn backward_batch(
    model: &MlpModel,
    data: &TrainingData,
    idxs: &[usize],
    aux_weight: f64,
    ws: &mut Workspace,
    grads: &mut Gradients,
) {
    let b = idxs.len();
    let dims = model.layer_dims().to_vec();
    let layers = dims.len() - 1;
    let d_out = dims[layers];
    let t_scale = 1.0 / (b as f64 * model.temperature());
    for (s, &idx) in idxs.iter().enumerate() {
        let t = data.soft_of(idx);
        for l in 0..d_out {
            ws.deltas[layers - 1][s * d_out + l] =
                (ws.probs[s * d_out + l] - t[l]) * t_scale;
        }
    }
    let (weights, _) = model.params();
    for l in (0..layers).rev() {
        let (din, dout) = (dims[l], dims[l + 1]);
        // split deltas so we can read layer l while writing layer l-1
        let (lower, upper) = ws.deltas.split_at_mut(l);
        let delta = &upper[0][..b * dout];
        matops::grad_params(
            delta,
            &ws.acts[l][..b * din],
            b,
            dout,
            din,
            &mut grads.dw[l],
            &mut grads.db[l],
        );
        if l > 0 {
            let prev = &mut lower[l - 1][..b * din];
            matops::grad_inputs(delta, &weights[l], b, dout, din, prev);
            if l == layers - 1 {
                if let Some(head) = model.aux_head() {
                    // aux head hangs off the last hidden activation
                    let h = &ws.acts[l][..b * din];
                    eval_aux_into(h, head, b, din, &mut ws.aux_pred);
                    grads.d_aux_w.fill(0.0);
                    grads.d_aux_b = 0.0;
                    for (s, &idx) in idxs.iter().enumerate() {
                        let g = 2.0 * aux_weight * (ws.aux_pred[s] - data.aux[idx]) / b as f64;
                        grads.d_aux_b += g;
                        for j in 0..din {
                            grads.d_aux_w[j] += g * h[s * din + j];
                            prev[s * din + j] += g * head.weights[j];
                        }
                    }
                }
            }
            // rectifier mask
            for (d, &z) in prev.iter_mut().zip(&ws.zs[l - 1][..b * din]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
    }
}

/// Indices split train/validation with no group on both sides.
fn split_indices_by_group(
    instances: &[LabeledInstance],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut groups: Vec<&str> = Vec::new();
    for inst in instances {
        if !groups.contains(&inst.group_id.as_str()) {
            groups.push(&inst.group_id);
        }
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut rng = stream_rng(seed, 0x5B17);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_val = (fraction * groups.len() as f64).round() as usize;
    let val_groups: std::collections::BTreeSet<&str> =
        order[..n_val].iter().map(|&gi| groups[gi]).collect();
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        if val_groups.contains(inst.group_id.as_str()) {
            val_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    (train_idx, val_idx)
}

/// Trains a model on the dataset: group-wise train/validation split,
/// minibatch SGD with momentum, per-epoch validation tracking, and selection
/// of the epoch with the best validation loss. Bit-deterministic in
/// (dataset, config).
pub fn train(dataset: &[LabeledInstance], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let with_aux = config.mode == TrainMode::Dup && config.aux_variance_weight.is_some();
    let aux_weight = config.aux_variance_weight.unwrap_or(DEFAULT_AUX_WEIGHT);
    let data = TrainingData::build(dataset, config.mode, config.uncertainty, with_aux)?;

    if config.mode == TrainMode::Dup {
        let first = data.soft_of(0)[1];
        if (1..data.n).all(|i| data.soft_of(i)[1] == first) {
            log::warn!(
                "all instances share one {} class; training anyway",
                config.uncertainty
            );
        }
    }

    let (train_idx, val_idx) = split_indices_by_group(dataset, config.validation_fraction, config.seed);
    if train_idx.is_empty() {
        return Err(Error::invalid("validation split consumed the whole dataset"));
    }

    let mut dims = vec![data.d_in];
    dims.extend_from_slice(&config.hidden_dims);
    dims.push(data.d_out);
    let mut model = MlpModel::init(config.mode, &dims, config.seed)?;
    if with_aux {
        model.set_aux_head(Some(AuxHead {
            weights: vec![0.0; dims[dims.len() - 2]],
            bias: 0.0,
        }));
    }

    let mut ws = Workspace::new(&dims, config.batch_size.min(train_idx.len()));
    let mut grads = Gradients::new(&dims);
    let mut vel_w: Vec<Vec<f64>> = grads.dw.iter().map(|g| vec![0.0; g.len()]).collect();
    let mut vel_b: Vec<Vec<f64>> = grads.db.iter().map(|g| vec![0.0; g.len()]).collect();
    let mut vel_aux_w = vec![0.0; grads.d_aux_w.len()];
    let mut vel_aux_b = 0.0;

    let mut shuffled = train_idx.clone();
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut val_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut rng = stream_rng(config.seed, 0xE0_0000 + epoch as u64);
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        for batch in shuffled.chunks(config.batch_size) {
            forward_batch(&model, &data, batch, &mut ws);
            backward_batch(&model, &data, batch, aux_weight, &mut ws, &mut grads);
            let (weights, biases, aux) = model.params_mut();
            for l in 0..weights.len() {
                sgd_step(&mut weights[l], &grads.dw[l], &mut vel_w[l], config);
                sgd_step(&mut biases[l], &grads.db[l], &mut vel_b[l], config);
            }
            if let Some(head) = aux {
                sgd_step(&mut head.weights, &grads.d_aux_w, &mut vel_aux_w, config);
                vel_aux_b = config.momentum * vel_aux_b - config.learning_rate * grads.d_aux_b;
                head.bias += vel_aux_b;
            }
        }
        if !val_idx.is_empty() {
            let val_loss = objective(&model, &data, &val_idx, 0.0) - 0.0;
            let val_ce = {
                // selection uses plain cross-entropy; the aux term is a
                // training-only regularizer
                let mut ws_val = Workspace::new(&dims, val_idx.len().min(256).max(1));
                let mut total = 0.0;
                for chunk in val_idx.chunks(ws_val.capacity) {
                    forward_batch(&model, &data, chunk, &mut ws_val);
                    total += batch_ce(&ws_val, &data, chunk) * chunk.len() as f64;
                }
                total / val_idx.len() as f64
            };
            let _ = val_loss;
            val_losses.push(val_ce);
            let improved = match &best {
                Some((b, _, _)) => val_ce < *b,
                None => true,
            };
            if improved {
                best = Some((val_ce, epoch, model.clone()));
            }
        }
    }

    let (best_epoch, mut model) = match best {
        Some((_, e, m)) => (e, m),
        None => (config.epochs.saturating_sub(1), model),
    };

    let mut fitted_temperature = None;
    if config.calibrate {
        let val_set: Vec<LabeledInstance> =
            val_idx.iter().map(|&i| dataset[i].clone()).collect();
        model = calibrate_temperature(&model, &val_set, config.uncertainty)?;
        fitted_temperature = Some(model.temperature());
    }

    let final_train_loss = ce_on(&model, &data, &train_idx);
    let final_val_loss = if val_idx.is_empty() {
        None
    } else {
        Some(ce_on(&model, &data, &val_idx))
    };

    Ok(TrainReport {
        model,
        final_train_loss,
        final_val_loss,
        best_epoch,
        val_losses,
        temperature: fitted_temperature,
    })
}

fn sgd_step(params: &mut [f64], grad: &[f64], vel: &mut [f64], config: &TrainConfig) {
    for ((p, &g), v) in params.iter_mut().zip(grad).zip(vel.iter_mut()) {
        *v = config.momentum * *v - config.learning_rate * g;
        *p += *v;
    }
}

fn ce_on(model: &MlpModel, data: &TrainingData, idxs: &[usize]) -> f64 {
    if idxs.is_empty() {
        return f64::NAN;
    }
    let dims = model.layer_dims().to_vec();
    let mut ws = Workspace::new(&dims, idxs.len().min(256).max(1));
    let mut total = 0.0;
    for chunk in idxs.chunks(ws.capacity) {
        forward_batch(model, data, chunk, &mut ws);
        total += batch_ce(&ws, data, chunk) * chunk.len() as f64;
    }
    total / idxs.len() as f64
}

/// Mean cross-entropy of the model on a batch. The mode argument must match
/// the model; for DUP it selects which binarized target column is scored.
pub fn loss(
    model: &MlpModel,
    batch: &[LabeledInstance],
    mode: TrainMode,
    kind: UncertaintyKind,
) -> Result<f64> {
    if model.mode() != mode {
        return Err(Error::invalid(format!(
            "mode/target mismatch: model is {}, loss requested for {}",
            model.mode(),
            mode
        )));
    }
    let data = TrainingData::build(batch, mode, kind, false)?;
    if data.d_out != model.output_dim() {
        return Err(Error::invalid(format!(
            "mode/target mismatch: targets have {} classes, model outputs {}",
            data.d_out,
            model.output_dim()
        )));
    }
    if data.d_in != model.input_dim() {
        return Err(Error::invalid("feature dimension mismatch"));
    }
    let idxs: Vec<usize> = (0..data.n).collect();
    Ok(ce_on(model, &data, &idxs))
}

/// Fits the softmax temperature on a validation set by golden-section search
/// on ln T in [-3, 3], leaving every other parameter untouched. Never returns
/// a model whose validation loss exceeds the T=1 loss.
pub fn calibrate_temperature(
    model: &MlpModel,
    validation: &[LabeledInstance],
    kind: UncertaintyKind,
) -> Result<MlpModel> {
    if validation.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let data = TrainingData::build(validation, model.mode(), kind, false)?;
    if data.d_out != model.output_dim() || data.d_in != model.input_dim() {
        return Err(Error::invalid("validation set does not match the model"));
    }
    let logits: Vec<Vec<f64>> = validation
        .iter()
        .map(|inst| model.logits(&inst.features))
        .collect::<Result<_>>()?;

    let ce_at = |ln_t: f64| -> f64 {
        let t = ln_t.exp();
        let mut total = 0.0;
        for (i, z) in logits.iter().enumerate() {
            let p = softmax_scaled(z, t);
            let target = data.soft_of(i);
            for l in 0..data.d_out {
                if target[l] > 0.0 {
                    total -= target[l] * p[l].max(LOG_CLIP).ln();
                }
            }
        }
        total / logits.len() as f64
    };

    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (-3.0f64, 3.0f64);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (ce_at(c), ce_at(d));
    while b - a > 1e-4 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = ce_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = ce_at(d);
        }
    }
    let candidate = ((a + b) / 2.0).exp();
    let fitted = if ce_at(candidate.ln()) <= ce_at(0.0) { candidate } else { 1.0 };
    let mut out = model.clone();
    out.set_temperature(fitted)?;
    Ok(out)
}

/// Compares analytic gradients against central finite differences
/// (step 1e-6) on every parameter. Returns the worst relative error, where
/// gradients smaller than 1e-2 in magnitude are compared absolutely.
pub fn gradient_check(
    model: &MlpModel,
    batch: &[LabeledInstance],
    mode: TrainMode,
    kind: UncertaintyKind,
) -> Result<f64> {
    if model.mode() != mode {
        return Err(Error::invalid("mode/target mismatch"));
    }
    let with_aux = model.aux_head().is_some();
    let data = TrainingData::build(batch, mode, kind, with_aux)?;
    if data.d_out != model.output_dim() || data.d_in != model.input_dim() {
        return Err(Error::invalid("batch does not match the model"));
    }
    let idxs: Vec<usize> = (0..data.n).collect();
    let dims = model.layer_dims().to_vec();

    let mut ws = Workspace::new(&dims, data.n);
    let mut grads = Gradients::new(&dims);
    forward_batch(model, &data, &idxs, &mut ws);
    backward_batch(model, &data, &idxs, DEFAULT_AUX_WEIGHT, &mut ws, &mut grads);

    let step = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    let layer_count = dims.len() - 1;
    for l in 0..layer_count {
        for (which, analytic_all) in [(0usize, &grads.dw[l]), (1usize, &grads.db[l])] {
            for idx in 0..analytic_all.len() {
                let analytic = analytic_all[idx];
                let numeric = {
                    let read = |m: &MlpModel| objective(m, &data, &idxs, DEFAULT_AUX_WEIGHT);
                    let bump = |m: &mut MlpModel, delta: f64| {
                        let (w, bias, _) = m.params_mut();
                        if which == 0 {
                            w[l][idx] += delta;
                        } else {
                            bias[l][idx] += delta;
                        }
                    };
                    bump(&mut probe, step);
                    let up = read(&probe);
                    bump(&mut probe, -2.0 * step);
                    let down = read(&probe);
                    bump(&mut probe, step);
                    (up - down) / (2.0 * step)
                };
                worst = worst.max(grad_error(analytic, numeric));
            }
        }
    }
    if with_aux {
        let n_aux = grads.d_aux_w.len();
        for idx in 0..=n_aux {
            let analytic = if idx < n_aux { grads.d_aux_w[idx] } else { grads.d_aux_b };
            let bump = |m: &mut MlpModel, delta: f64| {
                let (_, _, aux) = m.params_mut();
                let head = aux.as_mut().unwrap();
                if idx < n_aux {
                    head.weights[idx] += delta;
                } else {
                    head.bias += delta;
                }
            };
            bump(&mut probe, step);
            let up = objective(&probe, &data, &idxs, DEFAULT_AUX_WEIGHT);
            bump(&mut probe, -2.0 * step);
            let down = objective(&probe, &data, &idxs, DEFAULT_AUX_WEIGHT);
            bump(&mut probe, step);
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(grad_error(analytic, numeric));
        }
    }
    Ok(worst)
}

fn grad_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale > 1e-2 {
        diff / scale
    } else {
        diff
    }
}
