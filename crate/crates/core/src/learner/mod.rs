//! The small feed-forward network behind both predictors: rectifier hidden
//! layers, softmax output with a temperature, from-scratch backpropagation.
//! A model trained in DUP mode has a two-way output (low/high uncertainty);
//! in UVC mode the output runs over the k grades and an uncertainty function
//! post-processes it.

mod matops;
mod train;

pub use train::{
    calibrate_temperature, gradient_check, loss, train, TrainConfig, TrainReport,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::{u_score, GradeHistogram, GradeScale, UncertaintyKind};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Dup,
    Uvc,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Dup => "dup",
            TrainMode::Uvc => "uvc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dup" => Ok(TrainMode::Dup),
            "uvc" => Ok(TrainMode::Uvc),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Optional linear head off the last hidden layer regressing the raw
/// variance score; adds `weight * (pred - target)^2` to the training loss.
/// Experimental.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    mode: TrainMode,
    layer_dims: Vec<usize>,
    /// Per layer, row-major `[dout x din]`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    temperature: f64,
    aux_head: Option<AuxHead>,
}

impl MlpModel {
    /// Fresh model with uniform(+-sqrt(6/(fan_in+fan_out))) weights and zero
    /// biases, drawn from a stream derived from `seed`.
    pub fn init(mode: TrainMode, layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::invalid("need at least input and output dims"));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("layer dims must be positive"));
        }
        let d_out = *layer_dims.last().unwrap();
        if mode == TrainMode::Dup && d_out != 2 {
            return Err(Error::invalid("DUP models need a 2-way output"));
        }
        if mode == TrainMode::Uvc && d_out < 2 {
            return Err(Error::invalid("UVC models need at least 2 output grades"));
        }
        let mut rng = crate::util::stream_rng(seed, 0xF17);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            let (din, dout) = (layer_dims[l], layer_dims[l + 1]);
            let bound = (6.0 / (din + dout) as f64).sqrt();
            weights.push(
                (0..din * dout)
                    .map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound)
                    .collect(),
            );
            biases.push(vec![0.0; dout]);
        }
        Ok(Self {
            mode,
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            temperature: 1.0,
            aux_head: None,
        })
    }

    pub fn mode(&self) -> TrainMode {
        self.mode
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, t: f64) -> Result<()> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::invalid("temperature must be positive"));
        }
        self.temperature = t;
        Ok(())
    }

    pub fn aux_head(&self) -> Option<&AuxHead> {
        self.aux_head.as_ref()
    }

    pub(crate) fn set_aux_head(&mut self, head: Option<AuxHead>) {
        self.aux_head = head;
    }

    pub(crate) fn params(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.weights, &self.biases)
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [Vec<f64>], &mut [Vec<f64>], &mut Option<AuxHead>) {
        (&mut self.weights, &mut self.biases, &mut self.aux_head)
    }

    /// Pre-temperature logits.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "expected {} features, got {}",
                self.input_dim(),
                features.len()
            )));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::invalid("features must be finite"));
        }
        let mut act = features.to_vec();
        for l in 0..self.weights.len() {
            let (din, dout) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let mut next = vec![0.0; dout];
            matops::linear_forward(&act, &self.weights[l], &self.biases[l], 1, din, dout, &mut next);
            if l + 1 < self.weights.len() {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            act = next;
        }
        Ok(act)
    }

    /// Temperature-scaled class probabilities `softmax(z / T)`.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        let logits = self.logits(features)?;
        Ok(softmax_scaled(&logits, self.temperature))
    }

    /// Predicted probability of the high-uncertainty class. DUP models only.
    pub fn dup_score(&self, features: &[f64]) -> Result<f64> {
        if self.mode != TrainMode::Dup {
            return Err(Error::invalid("dup_score called on a UVC-mode model"));
        }
        Ok(self.forward(features)?[1])
    }

    /// Uncertainty score of the predicted grade distribution. UVC models only.
    pub fn uvc_score(
        &self,
        features: &[f64],
        kind: UncertaintyKind,
        scale: &GradeScale,
    ) -> Result<f64> {
        if self.mode != TrainMode::Uvc {
            return Err(Error::invalid("uvc_score called on a DUP-mode model"));
        }
        if scale.k() != self.output_dim() {
            return Err(Error::invalid(format!(
                "scale has {} grades but the model outputs {}",
                scale.k(),
                self.output_dim()
            )));
        }
        let probs = self.forward(features)?;
        u_score(kind, &GradeHistogram::new(probs)?, scale)
    }

    pub fn to_file(&self, seed: u64, config: &TrainConfig) -> ModelFile {
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            mode: self.mode,
            layer_dims: self.layer_dims.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            temperature: self.temperature,
            seed,
            config: config.clone(),
            aux_head: self.aux_head.clone(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::data(format!(
                "unsupported model format version {}",
                file.version
            )));
        }
        if file.layer_dims.len() < 2 || file.weights.len() != file.layer_dims.len() - 1 {
            return Err(Error::data("model layer shape is inconsistent".into()));
        }
        for l in 0..file.weights.len() {
            let (din, dout) = (file.layer_dims[l], file.layer_dims[l + 1]);
            if file.weights[l].len() != din * dout || file.biases[l].len() != dout {
                return Err(Error::data(format!("layer {l} has wrong parameter count")));
            }
        }
        if !(file.temperature > 0.0) {
            return Err(Error::data("temperature must be positive".into()));
        }
        Ok(Self {
            mode: file.mode,
            layer_dims: file.layer_dims,
            weights: file.weights,
            biases: file.biases,
            temperature: file.temperature,
            aux_head: file.aux_head,
        })
    }
}

pub(crate) fn softmax_scaled(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Versioned on-disk model: everything needed to reload and to replay the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub mode: TrainMode,
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub temperature: f64,
    pub seed: u64,
    pub config: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aux_head: Option<AuxHead>,
}

impl ModelFile {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("model serialization failed: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("bad model file: {e}")))
    }
}
