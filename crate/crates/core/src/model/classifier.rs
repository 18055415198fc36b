//! Toy differentiable text classifier, split into an encoding stage that maps a
//! token sequence to a fixed-size sentence embedding and an output stage that
//! maps the sentence embedding to class probabilities or a scalar score.
//!
//! Architecture: embedding lookup (`d_in`) → attention pooling with a learned
//! query (or plain mean pooling) → affine map to `d` → tanh → optional layer
//! normalization. Dropout sits between the encoder and the output head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{argmax, dot, softmax, Matrix};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Classification { classes: usize },
    Regression,
}

impl Head {
    pub fn outputs(&self) -> usize {
        match self {
            Head::Classification { classes } => *classes,
            Head::Regression => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Attention,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub head: Head,
    pub pooling: Pooling,
    pub dropout: f64,
    /// Layer-normalize the sentence embedding. Off by default.
    pub layer_norm: bool,
    /// Half-width of the uniform embedding initialization.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: 32,
            head: Head::Classification { classes: 2 },
            pooling: Pooling::Attention,
            dropout: 0.1,
            layer_norm: false,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

/// Trainable tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    /// |V| × d_in
    pub embeddings: Matrix,
    /// Attention query, d_in.
    pub query: Vec<f64>,
    /// d × d_in
    pub enc_weight: Matrix,
    pub enc_bias: Vec<f64>,
    /// outputs × d
    pub head_weight: Matrix,
    pub head_bias: Vec<f64>,
}

impl Parameters {
    fn zeros_like(&self) -> Parameters {
        Parameters {
            embeddings: Matrix::zeros(self.embeddings.rows(), self.embeddings.cols()),
            query: vec![0.0; self.query.len()],
            enc_weight: Matrix::zeros(self.enc_weight.rows(), self.enc_weight.cols()),
            enc_bias: vec![0.0; self.enc_bias.len()],
            head_weight: Matrix::zeros(self.head_weight.rows(), self.head_weight.cols()),
            head_bias: vec![0.0; self.head_bias.len()],
        }
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.embeddings.as_mut_slice(),
            &mut self.query,
            self.enc_weight.as_mut_slice(),
            &mut self.enc_bias,
            self.head_weight.as_mut_slice(),
            &mut self.head_bias,
        ]
    }

    fn tensors(&self) -> [&[f64]; 6] {
        [
            self.embeddings.as_slice(),
            &self.query,
            self.enc_weight.as_slice(),
            &self.enc_bias,
            self.head_weight.as_slice(),
            &self.head_bias,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Continuous word embeddings h_1..h_L, with a mask marking padded positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSequence {
    vectors: Matrix,
    mask: Vec<bool>,
}

impl EmbeddingSequence {
    pub fn new(vectors: Matrix, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != vectors.rows() {
            return Err(Error::DimensionMismatch {
                expected: vectors.rows(),
                actual: mask.len(),
            });
        }
        Ok(Self { vectors, mask })
    }

    /// All positions active.
    pub fn from_matrix(vectors: Matrix) -> Self {
        let mask = vec![true; vectors.rows()];
        Self { vectors, mask }
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut Matrix {
        &mut self.vectors
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn active(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Class(usize),
    Score(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Probabilities(Vec<f64>),
    Score(f64),
}

impl Output {
    pub fn probabilities(&self) -> Option<&[f64]> {
        match self {
            Output::Probabilities(p) => Some(p),
            Output::Score(_) => None,
        }
    }

    pub fn score(&self) -> Option<f64> {
        match self {
            Output::Score(s) => Some(*s),
            Output::Probabilities(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch (with dropout active).
    pub epoch_losses: Vec<f64>,
}

/// F_cl ∘ F_en over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    config: ModelConfig,
    vocab: Vocabulary,
    params: Parameters,
}

// Intermediate values of one forward pass, kept for backprop.
struct Trace {
    alpha: Vec<f64>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    ln_inv_std: f64,
    embedding: Vec<f64>,
    keep: Option<Vec<f64>>,
    head_in: Vec<f64>,
    output: Vec<f64>,
}

impl ClassifierModel {
    /// Randomly initialized model; deterministic in `config.seed`.
    pub fn new(vocab: Vocabulary, config: ModelConfig) -> Result<Self> {
        validate_config(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (v, din, d, k) = (
            vocab.len(),
            config.embed_dim,
            config.hidden_dim,
            config.head.outputs(),
        );
        let mut uniform = |n: usize, a: f64| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-a..a)).collect::<Vec<_>>()
        };
        let embeddings = Matrix::from_vec(v, din, uniform(v * din, config.init_scale))?;
        let query = uniform(din, 0.5);
        let enc_a = (6.0 / (din + d) as f64).sqrt();
        let enc_weight = Matrix::from_vec(d, din, uniform(d * din, enc_a))?;
        let head_a = (6.0 / (d + k) as f64).sqrt();
        let head_weight = Matrix::from_vec(k, d, uniform(k * d, head_a))?;
        let params = Parameters {
            embeddings,
            query,
            enc_weight,
            enc_bias: vec![0.0; d],
            head_weight,
            head_bias: vec![0.0; k],
        };
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    /// Model with explicit parameters (shapes are checked).
    pub fn from_parameters(
        vocab: Vocabulary,
        config: ModelConfig,
        params: Parameters,
    ) -> Result<Self> {
        validate_config(&config)?;
        let (din, d, k) = (config.embed_dim, config.hidden_dim, config.head.outputs());
        let checks = [
            (params.embeddings.rows(), vocab.len()),
            (params.embeddings.cols(), din),
            (params.query.len(), din),
            (params.enc_weight.rows(), d),
            (params.enc_weight.cols(), din),
            (params.enc_bias.len(), d),
            (params.head_weight.rows(), k),
            (params.head_weight.cols(), d),
            (params.head_bias.len(), k),
        ];
        for (actual, expected) in checks {
            if actual != expected {
                return Err(Error::DimensionMismatch { expected, actual });
            }
        }
        if !params.all_finite() {
            return Err(Error::Numeric("parameters must be finite".into()));
        }
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn head(&self) -> Head {
        self.config.head
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn model_id(&self) -> String {
        match self.config.head {
            Head::Classification { classes } => format!("classifier-{classes}"),
            Head::Regression => "regressor".to_string(),
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match self.config.head {
            Head::Classification { classes } => Some(classes),
            Head::Regression => None,
        }
    }

    /// Copy of this model with a different dropout rate.
    pub fn with_dropout(&self, rate: f64) -> Result<Self> {
        let mut m = self.clone();
        m.config.dropout = rate;
        validate_config(&m.config)?;
        Ok(m)
    }

    /// Looks up h_i for every token.
    pub fn embed(&self, x: &TokenSequence) -> Result<EmbeddingSequence> {
        self.vocab.validate(x)?;
        let din = self.config.embed_dim;
        let mut data = Vec::with_capacity(x.len() * din);
        for &id in x.ids() {
            data.extend_from_slice(self.params.embeddings.row(id as usize));
        }
        EmbeddingSequence::new(Matrix::from_vec(x.len(), din, data)?, x.mask())
    }

    /// Sentence embedding F_en(x); dropout is never applied here.
    pub fn encode(&self, h: &EmbeddingSequence) -> Result<Vec<f64>> {
        Ok(self.trace(h, None)?.embedding)
    }

    pub fn encode_tokens(&self, x: &TokenSequence) -> Result<Vec<f64>> {
        self.encode(&self.embed(x)?)
    }

    /// Output stage F_cl, inference mode.
    pub fn classify(&self, e: &[f64]) -> Result<Output> {
        if e.len() != self.config.hidden_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.hidden_dim,
                actual: e.len(),
            });
        }
        let raw = self.head_forward(e);
        Ok(self.finish(raw))
    }

    pub fn forward_embedded(&self, h: &EmbeddingSequence) -> Result<Output> {
        self.classify(&self.encode(h)?)
    }

    pub fn forward(&self, x: &TokenSequence) -> Result<Output> {
        self.forward_embedded(&self.embed(x)?)
    }

    pub fn probabilities(&self, x: &TokenSequence) -> Result<Vec<f64>> {
        match self.forward(x)? {
            Output::Probabilities(p) => Ok(p),
            Output::Score(_) => Err(self.needs_classifier()),
        }
    }

    pub fn predict(&self, x: &TokenSequence) -> Result<usize> {
        Ok(argmax(&self.probabilities(x)?))
    }

    pub fn predict_embedded(&self, h: &EmbeddingSequence) -> Result<usize> {
        match self.forward_embedded(h)? {
            Output::Probabilities(p) => Ok(argmax(&p)),
            Output::Score(_) => Err(self.needs_classifier()),
        }
    }

    pub fn score(&self, x: &TokenSequence) -> Result<f64> {
        match self.forward(x)? {
            Output::Score(s) => Ok(s),
            Output::Probabilities(_) => Err(Error::Unsupported(
                "scalar score requested from a classification head".into(),
            )),
        }
    }

    pub fn loss(&self, x: &TokenSequence, target: Target) -> Result<f64> {
        let h = self.embed(x)?;
        let t = self.trace(&h, None)?;
        self.loss_and_grad_out(&t.output, target).map(|(l, _)| l)
    }

    /// Training loss and its gradient with respect to each h_i.
    pub fn loss_grad_wrt_embeddings(
        &self,
        x: &TokenSequence,
        target: Target,
    ) -> Result<(f64, Matrix)> {
        self.loss_grad_embedded(&self.embed(x)?, target)
    }

    pub fn loss_grad_embedded(
        &self,
        h: &EmbeddingSequence,
        target: Target,
    ) -> Result<(f64, Matrix)> {
        let trace = self.trace(h, None)?;
        let (loss, dout) = self.loss_and_grad_out(&trace.output, target)?;
        let mut dh = Matrix::zeros(h.len(), h.dim());
        self.backward(h, &trace, &dout, None, Some(&mut dh));
        Ok((loss, dh))
    }

    /// `m` stochastic forward passes with dropout active. Randomness comes
    /// from a stream seeded by `seed` alone.
    pub fn mc_samples(&self, x: &TokenSequence, m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.mc_samples_embedded(&self.embed(x)?, m, seed)
    }

    pub fn mc_samples_embedded(
        &self,
        h: &EmbeddingSequence,
        m: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        if self.classes().is_none() {
            return Err(Error::Unsupported(
                "MC-dropout sampling needs a classification head".into(),
            ));
        }
        if m == 0 {
            return Err(Error::Empty("MC sample count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = self.trace(h, None)?;
        (0..m)
            .map(|_| {
                let keep = self.dropout_mask(&mut rng);
                let e: Vec<f64> = match &keep {
                    Some(k) => base.embedding.iter().zip(k).map(|(a, b)| a * b).collect(),
                    None => base.embedding.clone(),
                };
                match self.finish(self.head_forward(&e)) {
                    Output::Probabilities(p) => Ok(p),
                    Output::Score(_) => unreachable!(),
                }
            })
            .collect()
    }

    /// SGD on a private copy. Deterministic in `cfg.seed`.
    pub fn train(
        &self,
        data: &[(TokenSequence, Target)],
        cfg: &TrainConfig,
    ) -> Result<(ClassifierModel, TrainReport)> {
        if data.is_empty() {
            return Err(Error::Empty("training data".into()));
        }
        if cfg.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        for (x, t) in data {
            self.check_target(*t)?;
            self.vocab.validate(x)?;
        }
        let mut model = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        let mut grads = model.params.zeros_like();

        for _ in 0..cfg.epochs {
            shuffle(&mut order, &mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                for g in grads.tensors_mut() {
                    g.iter_mut().for_each(|v| *v = 0.0);
                }
                for &i in batch {
                    let (x, target) = &data[i];
                    let h = model.embed(x)?;
                    let keep = model.dropout_mask(&mut rng);
                    let trace = model.trace(&h, keep)?;
                    let (loss, dout) = model.loss_and_grad_out(&trace.output, *target)?;
                    total += loss;
                    let mut dh = Matrix::zeros(h.len(), h.dim());
                    model.backward(&h, &trace, &dout, Some(&mut grads), Some(&mut dh));
                    for (pos, &id) in x.ids().iter().enumerate() {
                        let src = dh.row(pos);
                        let dst = grads.embeddings.row_mut(id as usize);
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                let scale = cfg.lr / batch.len() as f64;
                for (p, g) in model.params.tensors_mut().into_iter().zip(grads.tensors()) {
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv -= scale * gv;
                    }
                }
            }
            let mean_loss = total / data.len() as f64;
            if !mean_loss.is_finite() {
                return Err(Error::Numeric("training loss diverged".into()));
            }
            epoch_losses.push(mean_loss);
        }
        Ok((model, TrainReport { epoch_losses }))
    }

    pub fn accuracy(&self, data: &[(TokenSequence, Target)]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty("evaluation data".into()));
        }
        let mut correct = 0usize;
        for (x, t) in data {
            if let Target::Class(c) = t {
                if self.predict(x)? == *c {
                    correct += 1;
                }
            } else {
                return Err(Error::InvalidLabel("accuracy needs class labels".into()));
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn check_target(&self, target: Target) -> Result<()> {
        match (self.config.head, target) {
            (Head::Classification { classes }, Target::Class(c)) if c < classes => Ok(()),
            (Head::Classification { classes }, Target::Class(c)) => Err(Error::InvalidLabel(
                format!("class {c} out of range for {classes} classes"),
            )),
            (Head::Regression, Target::Score(s)) if s.is_finite() => Ok(()),
            (head, t) => Err(Error::InvalidLabel(format!(
                "target {t:?} does not fit head {head:?}"
            ))),
        }
    }

    fn needs_classifier(&self) -> Error {
        Error::Unsupported("class probabilities requested from a regression head".into())
    }

    fn dropout_mask(&self, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        let rate = self.config.dropout;
        if rate <= 0.0 {
            return None;
        }
        let scale = 1.0 / (1.0 - rate);
        Some(
            (0..self.config.hidden_dim)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
                .collect(),
        )
    }

    fn head_forward(&self, e: &[f64]) -> Vec<f64> {
        let w = &self.params.head_weight;
        (0..w.rows())
            .map(|k| dot(w.row(k), e) + self.params.head_bias[k])
            .collect()
    }

    fn finish(&self, raw: Vec<f64>) -> Output {
        match self.config.head {
            Head::Classification { .. } => Output::Probabilities(softmax(&raw)),
            Head::Regression => Output::Score(raw[0]),
        }
    }

    fn trace(&self, h: &EmbeddingSequence, keep: Option<Vec<f64>>) -> Result<Trace> {
        let din = self.config.embed_dim;
        if h.dim() != din {
            return Err(Error::DimensionMismatch {
                expected: din,
                actual: h.dim(),
            });
        }
        let active = h.active();
        if active == 0 {
            return Err(Error::Empty("no unmasked positions to encode".into()));
        }
        let len = h.len();
        let mut alpha = vec![0.0; len];
        match self.config.pooling {
            Pooling::Mean => {
                for (a, &m) in alpha.iter_mut().zip(h.mask()) {
                    if m {
                        *a = 1.0 / active as f64;
                    }
                }
            }
            Pooling::Attention => {
                let inv = 1.0 / (din as f64).sqrt();
                let mut max = f64::NEG_INFINITY;
                let scores: Vec<f64> = (0..len)
                    .map(|i| {
                        if h.mask()[i] {
                            let s = dot(&self.params.query, h.vectors().row(i)) * inv;
                            max = max.max(s);
                            s
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let mut sum = 0.0;
                for (a, s) in alpha.iter_mut().zip(&scores) {
                    if s.is_finite() {
                        *a = (s - max).exp();
                        sum += *a;
                    }
                }
                alpha.iter_mut().for_each(|a| *a /= sum);
            }
        }
        let mut pooled = vec![0.0; din];
        for (i, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                for (p, v) in pooled.iter_mut().zip(h.vectors().row(i)) {
                    *p += a * v;
                }
            }
        }
        let w = &self.params.enc_weight;
        let hidden: Vec<f64> = (0..w.rows())
            .map(|j| (dot(w.row(j), &pooled) + self.params.enc_bias[j]).tanh())
            .collect();
        let (embedding, ln_inv_std) = if self.config.layer_norm {
            let mu = hidden.iter().sum::<f64>() / hidden.len() as f64;
            let var = hidden.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / hidden.len() as f64;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            (hidden.iter().map(|v| (v - mu) * inv_std).collect(), inv_std)
        } else {
            (hidden.clone(), 1.0)
        };
        let head_in = match &keep {
            Some(k) => embedding.iter().zip(k).map(|(a, b)| a * b).collect(),
            None => embedding.clone(),
        };
        let output = self.head_forward(&head_in);
        Ok(Trace {
            alpha,
            pooled,
            hidden,
            ln_inv_std,
            embedding,
            keep,
            head_in,
            output,
        })
    }

    fn loss_and_grad_out(&self, raw: &[f64], target: Target) -> Result<(f64, Vec<f64>)> {
        self.check_target(target)?;
        match target {
            Target::Class(c) => {
                let p = softmax(raw);
                let loss = -p[c].max(f64::MIN_POSITIVE).ln();
                let mut g = p;
                g[c] -= 1.0;
                Ok((loss, g))
            }
            Target::Score(s) => {
                let diff = raw[0] - s;
                Ok((diff * diff, vec![2.0 * diff]))
            }
        }
    }

    fn backward(
        &self,
        h: &EmbeddingSequence,
        t: &Trace,
        dout: &[f64],
        mut grads: Option<&mut Parameters>,
        dh: Option<&mut Matrix>,
    ) {
        let p = &self.params;
        let d = self.config.hidden_dim;
        let din = self.config.embed_dim;

        let mut de = vec![0.0; d];
        for (k, &g) in dout.iter().enumerate() {
            let row = p.head_weight.row(k);
            for j in 0..d {
                de[j] += g * row[j];
            }
        }
        if let Some(gr) = grads.as_deref_mut() {
            for (k, &g) in dout.iter().enumerate() {
                let row = gr.head_weight.row_mut(k);
                for j in 0..d {
                    row[j] += g * t.head_in[j];
                }
                gr.head_bias[k] += g;
            }
        }
        if let Some(k) = &t.keep {
            de.iter_mut().zip(k).for_each(|(a, b)| *a *= b);
        }
        let dhidden = if self.config.layer_norm {
            let n = d as f64;
            let mean_de = de.iter().sum::<f64>() / n;
            let mean_dee = de.iter().zip(&t.embedding).map(|(a, b)| a * b).sum::<f64>() / n;
            de.iter()
                .zip(&t.embedding)
                .map(|(g, e)| t.ln_inv_std * (g - mean_de - e * mean_dee))
                .collect()
        } else {
            de
        };
        let dz: Vec<f64> = dhidden
            .iter()
            .zip(&t.hidden)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        let mut dp = vec![0.0; din];
        for (j, &g) in dz.iter().enumerate() {
            let row = p.enc_weight.row(j);
            for i in 0..din {
                dp[i] += g * row[i];
            }
        }
        if let Some(gr) = grads.as_deref_mut() {
            for (j, &g) in dz.iter().enumerate() {
                let row = gr.enc_weight.row_mut(j);
                for i in 0..din {
                    row[i] += g * t.pooled[i];
                }
                gr.enc_bias[j] += g;
            }
        }

        let Some(dh) = dh else { return };
        match self.config.pooling {
            Pooling::Mean => {
                for (i, &a) in t.alpha.iter().enumerate() {
                    if a != 0.0 {
                        for (o, g) in dh.row_mut(i).iter_mut().zip(&dp) {
                            *o += a * g;
                        }
                    }
                }
            }
            Pooling::Attention => {
                let inv = 1.0 / (din as f64).sqrt();
                let pbar = dot(&t.pooled, &dp);
                let mut dq = vec![0.0; din];
                for (i, &a) in t.alpha.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let hi = h.vectors().row(i);
                    let ds = a * (dot(hi, &dp) - pbar) * inv;
                    let out = dh.row_mut(i);
                    for k in 0..din {
                        out[k] += a * dp[k] + ds * p.query[k];
                        dq[k] += ds * hi[k];
                    }
                }
                if let Some(gr) = grads {
                    gr.query.iter_mut().zip(&dq).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
}

fn validate_config(c: &ModelConfig) -> Result<()> {
    if c.embed_dim == 0 || c.hidden_dim == 0 {
        return Err(Error::config("embed_dim", "dimensions must be positive"));
    }
    if !(0.0..1.0).contains(&c.dropout) {
        return Err(Error::config("dropout", "rate must lie in [0, 1)"));
    }
    if let Head::Classification { classes } = c.head {
        if classes < 2 {
            return Err(Error::config("classes", "need at least 2 classes"));
        }
    }
    Ok(())
}

/// Fisher–Yates with the crate's seeded stream.
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
