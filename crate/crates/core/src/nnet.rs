//! Stacked tanh recurrent network with hand-written backpropagation through
//! time, trained per utterance with plain SGD on the lattice gradient.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{frame_argmax, greedy_decode, speech_spans, viterbi_log, Segment};
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::lattice::{lattice_loss, log_softmax, LogitMatrix};
use crate::synthgen::{stack_frames, TrueSegment, Utterance};
use crate::topology::{expand, Alphabet, LabelSequence, Role, TcsEnds, Topology, TopologyKind};

pub const MODEL_VERSION: u32 = 1;

/// Boundaries within this many frames of the truth count as hits.
pub const BOUNDARY_TOLERANCE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentLayer {
    /// `H x D_in`
    pub w_input: Array2<f64>,
    /// `H x H`
    pub w_recurrent: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Every trainable array of the network. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<RecurrentLayer>,
    /// `K x H`
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl Params {
    pub fn zeros_like(other: &Params) -> Params {
        Params {
            layers: other
                .layers
                .iter()
                .map(|l| RecurrentLayer {
                    w_input: Array2::zeros(l.w_input.dim()),
                    w_recurrent: Array2::zeros(l.w_recurrent.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
            w_out: Array2::zeros(other.w_out.dim()),
            b_out: Array1::zeros(other.b_out.len()),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.w_input.iter().chain(l.w_recurrent.iter()).chain(l.bias.iter()))
            .chain(self.w_out.iter())
            .chain(self.b_out.iter())
            .copied()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                l.w_input
                    .iter_mut()
                    .chain(l.w_recurrent.iter_mut())
                    .chain(l.bias.iter_mut())
            })
            .chain(self.w_out.iter_mut())
            .chain(self.b_out.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    /// `self -= rate * grads`
    pub fn sgd_step(&mut self, grads: &Params, rate: f64) {
        for (w, g) in self.values_mut().zip(grads.values()) {
            *w -= rate * g;
        }
    }
}

/// Frame-stacking front end applied to raw features before the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stacking {
    pub window: usize,
    pub stride: usize,
}

impl Default for Stacking {
    fn default() -> Self {
        Stacking { window: 8, stride: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    layer_sizes: Vec<usize>,
    params: Params,
    alphabet: Alphabet,
    stacking: Option<Stacking>,
}

/// Activations kept from a forward pass for BPTT.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    hidden: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn frames(&self) -> usize {
        self.input.nrows()
    }
}

impl RnnModel {
    /// Network `layer_sizes[0] -> hidden... -> alphabet.len()` with weights
    /// uniform in `+-1/sqrt(fan_in)` and zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], alphabet: Alphabet, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config(
                "model needs a positive input dim and at least one non-empty hidden layer".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
        };
        let mut layer_sizes = vec![input_dim];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(alphabet.len());
        let layers = layer_sizes
            .windows(2)
            .take(hidden.len())
            .map(|w| RecurrentLayer {
                w_input: uniform(w[1], w[0]),
                w_recurrent: uniform(w[1], w[1]),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        let top = *hidden.last().unwrap();
        let params = Params {
            layers,
            w_out: uniform(alphabet.len(), top),
            b_out: Array1::zeros(alphabet.len()),
        };
        Ok(RnnModel {
            layer_sizes,
            params,
            alphabet,
            stacking: None,
        })
    }

    pub fn with_stacking(mut self, stacking: Stacking) -> Self {
        self.stacking = Some(stacking);
        self
    }

    pub fn from_params(params: Params, alphabet: Alphabet, stacking: Option<Stacking>) -> Result<Self> {
        let mut layer_sizes = Vec::new();
        let first = params
            .layers
            .first()
            .ok_or_else(|| Error::Shape("model has no recurrent layers".into()))?;
        layer_sizes.push(first.w_input.ncols());
        for l in &params.layers {
            let h = l.w_input.nrows();
            if l.w_input.ncols() != *layer_sizes.last().unwrap() || l.w_recurrent.dim() != (h, h) || l.bias.len() != h {
                return Err(Error::Shape("recurrent layer dimensions do not chain".into()));
            }
            layer_sizes.push(h);
        }
        if params.w_out.dim() != (alphabet.len(), *layer_sizes.last().unwrap()) || params.b_out.len() != alphabet.len()
        {
            return Err(Error::Shape(
                "output layer does not match hidden size and alphabet".into(),
            ));
        }
        if params.values().any(|v| !v.is_finite()) {
            return Err(Error::Config("model weights must be finite".into()));
        }
        layer_sizes.push(alphabet.len());
        Ok(RnnModel {
            layer_sizes,
            params,
            alphabet,
            stacking,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn stacking(&self) -> Option<Stacking> {
        self.stacking
    }

    /// Applies the stacking front end when `raw` is not already network-width.
    pub fn prepare_input(&self, raw: &Array2<f64>) -> Result<Array2<f64>> {
        if raw.ncols() == self.input_dim() {
            return Ok(raw.clone());
        }
        match self.stacking {
            Some(st) if raw.ncols() * st.window == self.input_dim() => stack_frames(raw, st.window, st.stride),
            _ => Err(Error::Shape(format!(
                "input has {} columns, model expects {}",
                raw.ncols(),
                self.input_dim()
            ))),
        }
    }

    /// Per-frame class posteriors.
    pub fn posteriors(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        let (logits, _) = rnn_forward(self, features)?;
        Ok(log_softmax(logits.view()).mapv(f64::exp))
    }

    /// Sequence NLL of `labels` under this model.
    pub fn nll(&self, features: &Array2<f64>, labels: &LabelSequence, topology: impl Into<Topology>) -> Result<f64> {
        let (logits, _) = rnn_forward(self, features)?;
        let trellis = expand(labels, &self.alphabet, topology)?;
        Ok(lattice_loss(&logits, &trellis)?.nll())
    }
}

/// Stacked tanh recurrence from a zero state, then an affine output per frame.
pub fn rnn_forward(model: &RnnModel, features: &Array2<f64>) -> Result<(LogitMatrix, ForwardCache)> {
    if features.ncols() != model.input_dim() {
        return Err(Error::Shape(format!(
            "features have {} columns, model expects {}",
            features.ncols(),
            model.input_dim()
        )));
    }
    let frames = features.nrows();
    let mut hidden = Vec::with_capacity(model.params.layers.len());
    for layer in &model.params.layers {
        let below = hidden.last().unwrap_or(features);
        let pre = below.dot(&layer.w_input.t()) + &layer.bias;
        let width = layer.bias.len();
        let mut h = Array2::zeros((frames, width));
        let mut prev = Array1::zeros(width);
        for t in 0..frames {
            let z = &pre.row(t) + &layer.w_recurrent.dot(&prev);
            prev = z.mapv(f64::tanh);
            h.row_mut(t).assign(&prev);
        }
        hidden.push(h);
    }
    let top = hidden.last().expect("at least one layer");
    let logits = top.dot(&model.params.w_out.t()) + &model.params.b_out;
    let logits = LogitMatrix::new(logits)?;
    Ok((
        logits,
        ForwardCache {
            input: features.clone(),
            hidden,
        },
    ))
}

/// Full BPTT gradient given `dLoss/dlogits`.
pub fn rnn_backward(model: &RnnModel, cache: &ForwardCache, output_grad: &Array2<f64>) -> Result<Params> {
    let p = &model.params;
    let frames = cache.frames();
    if cache.hidden.len() != p.layers.len()
        || output_grad.dim() != (frames, p.w_out.nrows())
        || cache.input.ncols() != model.input_dim()
    {
        return Err(Error::Shape("cache or output gradient does not match the model".into()));
    }
    let mut grads = Params::zeros_like(p);
    let top = cache.hidden.last().unwrap();
    grads.w_out = output_grad.t().dot(top);
    grads.b_out = output_grad.sum_axis(Axis(0));
    let mut d_hidden = output_grad.dot(&p.w_out);

    for l in (0..p.layers.len()).rev() {
        let layer = &p.layers[l];
        let h = &cache.hidden[l];
        let below = if l == 0 { &cache.input } else { &cache.hidden[l - 1] };
        let width = layer.bias.len();
        let mut dz = Array2::zeros((frames, width));
        let mut carry = Array1::<f64>::zeros(width);
        for t in (0..frames).rev() {
            let g = &d_hidden.row(t) + &carry;
            let dzt = g * h.row(t).mapv(|v| 1.0 - v * v);
            carry = layer.w_recurrent.t().dot(&dzt);
            dz.row_mut(t).assign(&dzt);
        }
        let gl = &mut grads.layers[l];
        if frames > 1 {
            gl.w_recurrent = dz.slice(s![1.., ..]).t().dot(&h.slice(s![..frames - 1, ..]));
        }
        gl.w_input = dz.t().dot(below);
        gl.bias = dz.sum_axis(Axis(0));
        d_hidden = dz.dot(&layer.w_input);
    }
    Ok(grads)
}

/// Rescales `grads` to `clip_norm` when their global L2 norm exceeds it.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Params, clip_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Visit utterances shortest-first in the first epoch.
    pub sortagrad: bool,
    pub kind: TopologyKind,
    /// Outer-background rule for TCS trellises.
    #[serde(default)]
    pub tcs_ends: TcsEnds,
    pub seed: u64,
    /// How held-out evaluation is scheduled. SGD itself is always sequential.
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 0.01,
            clip_norm: 5.0,
            sortagrad: false,
            kind: TopologyKind::Tcs,
            tcs_ends: TcsEnds::Optional,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn topology(&self) -> Topology {
        Topology::new(self.kind, self.tcs_ends)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Held-out evaluation summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub utterances: usize,
    /// Fraction of utterances whose greedy decode matches the labels exactly.
    pub sequence_accuracy: f64,
    /// Character-segment boundaries within tolerance of the truth.
    pub boundary_accuracy: f64,
    /// As above with foreground frames folded into the following character.
    pub span_boundary_accuracy: f64,
    /// Fraction of frames whose argmax is the blank (CTC) or background (TCS).
    pub filler_occupancy: f64,
    pub silence_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_nll: f64,
    pub mean_cross_entropy: f64,
    pub heldout: Option<Metrics>,
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    correct: usize,
    filler_frames: usize,
    silent_frames: f64,
    frames: usize,
    hits: usize,
    span_hits: usize,
    boundaries: usize,
}

/// Counts start and end boundaries of `predicted` within tolerance of the
/// character truth, pairing segments in order. Missing segments are misses.
pub fn boundary_hits(predicted: &[Segment], truth: &[TrueSegment], tolerance: usize) -> (usize, usize) {
    let near = |a: usize, b: usize| a.abs_diff(b) <= tolerance;
    let chars: Vec<&Segment> = predicted.iter().filter(|s| s.role == Role::Character).collect();
    let true_chars: Vec<&TrueSegment> = truth.iter().filter(|s| !s.is_silence()).collect();
    let hits = true_chars
        .iter()
        .zip(&chars)
        .map(|(t, p)| usize::from(near(t.start, p.start_frame)) + usize::from(near(t.end, p.end_frame)))
        .sum();
    (hits, 2 * true_chars.len())
}

fn evaluate_one(model: &RnnModel, utt: &Utterance, topology: Topology) -> Result<Tally> {
    let kind = topology.kind;
    let (logits, _) = rnn_forward(model, &utt.features)?;
    let log_probs = log_softmax(logits.view());
    let probs = log_probs.mapv(f64::exp);
    let alphabet = model.alphabet();
    let filler = alphabet.filler(kind)?;
    let decoded = greedy_decode(&probs, alphabet, kind)?;
    let frames = utt.frames();
    let filler_frames = frame_argmax(probs.view()).into_iter().filter(|&c| c == filler).count();
    let trellis = expand(&utt.labels, alphabet, topology)?;
    let (hits, span_hits, boundaries) = match viterbi_log(log_probs.view(), &trellis) {
        Ok(al) => {
            let (h, n) = boundary_hits(&al.segments, &utt.truth, BOUNDARY_TOLERANCE);
            let (sh, _) = boundary_hits(&speech_spans(&al.segments), &utt.truth, BOUNDARY_TOLERANCE);
            (h, sh, n)
        }
        Err(e) if e.is_infeasible() => (0, 0, 2 * utt.labels.len()),
        Err(e) => return Err(e),
    };
    Ok(Tally {
        correct: usize::from(decoded == utt.labels),
        filler_frames,
        silent_frames: utt.silence_fraction() * frames as f64,
        frames,
        hits,
        span_hits,
        boundaries,
    })
}

/// Greedy sequence accuracy, Viterbi boundary accuracy and filler occupancy
/// over `dataset`. Utterances are scored independently under `mode`; the
/// reduction is sequential so the result does not depend on the mode.
pub fn evaluate(model: &RnnModel, dataset: &[Utterance], topology: impl Into<Topology>, mode: Exec) -> Result<Metrics> {
    let topology = topology.into();
    let tallies = exec::map(mode, dataset, |u| evaluate_one(model, u, topology));
    let mut total = Tally::default();
    for t in tallies {
        let t = t?;
        total.correct += t.correct;
        total.filler_frames += t.filler_frames;
        total.silent_frames += t.silent_frames;
        total.frames += t.frames;
        total.hits += t.hits;
        total.span_hits += t.span_hits;
        total.boundaries += t.boundaries;
    }
    let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
    Ok(Metrics {
        utterances: dataset.len(),
        sequence_accuracy: ratio(total.correct as f64, dataset.len()),
        boundary_accuracy: ratio(total.hits as f64, total.boundaries),
        span_boundary_accuracy: ratio(total.span_hits as f64, total.boundaries),
        filler_occupancy: ratio(total.filler_frames as f64, total.frames),
        silence_fraction: ratio(total.silent_frames, total.frames),
    })
}

/// One SGD step on one utterance. Returns `(nll, cross_entropy)`.
pub fn train_step(model: &mut RnnModel, utt: &Utterance, config: &TrainConfig) -> Result<(f64, f64)> {
    let (logits, cache) = rnn_forward(model, &utt.features)?;
    let trellis = expand(&utt.labels, model.alphabet(), config.topology())?;
    let result = lattice_loss(&logits, &trellis).map_err(|e| Error::InfeasibleSample {
        id: utt.id.clone(),
        source: Box::new(e),
    })?;
    let mut grads = rnn_backward(model, &cache, &result.gradient)?;
    clip_gradients(&mut grads, config.clip_norm);
    model.params.sgd_step(&grads, config.learning_rate);
    Ok((result.nll(), result.cross_entropy))
}

/// Per-utterance SGD over `train_set`, evaluating on `heldout` after every
/// epoch.
pub fn train(
    mut model: RnnModel,
    train_set: &[Utterance],
    heldout: &[Utterance],
    config: &TrainConfig,
) -> Result<(RnnModel, Vec<EpochMetrics>)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    model.alphabet().check_kind(config.kind)?;
    for utt in train_set {
        utt.labels.validate(model.alphabet())?;
        let min = expand(&utt.labels, model.alphabet(), config.topology())?.min_frames();
        if utt.frames() < min {
            return Err(Error::InfeasibleSample {
                id: utt.id.clone(),
                source: Box::new(Error::Infeasible {
                    frames: utt.frames(),
                    min_frames: min,
                }),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if epoch == 0 && config.sortagrad {
            order.sort_by_key(|&i| (train_set[i].frames(), i));
        } else {
            order.shuffle(&mut rng);
        }
        let (mut nll, mut ce) = (0.0, 0.0);
        for &i in &order {
            let (n, c) = train_step(&mut model, &train_set[i], config)?;
            nll += n;
            ce += c;
        }
        let heldout_metrics = if heldout.is_empty() {
            None
        } else {
            Some(evaluate(&model, heldout, config.topology(), config.exec)?)
        };
        history.push(EpochMetrics {
            epoch: epoch + 1,
            mean_nll: nll / train_set.len() as f64,
            mean_cross_entropy: ce / train_set.len() as f64,
            heldout: heldout_metrics,
        });
    }
    Ok((model, history))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum WeightArray {
    Matrix(Vec<Vec<f64>>),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    layer_sizes: Vec<usize>,
    weights: BTreeMap<String, WeightArray>,
    alphabet: Alphabet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stacking: Option<Stacking>,
}

fn matrix_rows(m: &Array2<f64>) -> WeightArray {
    WeightArray::Matrix(m.outer_iter().map(|r| r.to_vec()).collect())
}

impl RnnModel {
    pub fn to_json(&self) -> Result<String> {
        let mut weights = BTreeMap::new();
        for (i, l) in self.params.layers.iter().enumerate() {
            weights.insert(format!("layer{i}.input"), matrix_rows(&l.w_input));
            weights.insert(format!("layer{i}.recurrent"), matrix_rows(&l.w_recurrent));
            weights.insert(format!("layer{i}.bias"), WeightArray::Vector(l.bias.to_vec()));
        }
        weights.insert("output.weight".into(), matrix_rows(&self.params.w_out));
        weights.insert("output.bias".into(), WeightArray::Vector(self.params.b_out.to_vec()));
        let file = ModelFile {
            version: MODEL_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            weights,
            alphabet: self.alphabet.clone(),
            stacking: self.stacking,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_VERSION {
            return Err(Error::Parse(format!("unsupported model version {}", file.version)));
        }
        let mut take_matrix = |name: String| -> Result<Array2<f64>> {
            match file.weights.remove(&name) {
                Some(WeightArray::Matrix(rows)) => {
                    let r = rows.len();
                    let c = rows.first().map_or(0, Vec::len);
                    if rows.iter().any(|row| row.len() != c) {
                        return Err(Error::Shape(format!("{name} is ragged")));
                    }
                    Array2::from_shape_vec((r, c), rows.concat()).map_err(|e| Error::Shape(e.to_string()))
                }
                Some(WeightArray::Vector(_)) => Err(Error::Shape(format!("{name} should be a matrix"))),
                None => Err(Error::Parse(format!("missing weight {name}"))),
            }
        };
        let n_layers = file.layer_sizes.len().saturating_sub(2);
        let mut mats = Vec::new();
        for i in 0..n_layers {
            mats.push((
                take_matrix(format!("layer{i}.input"))?,
                take_matrix(format!("layer{i}.recurrent"))?,
            ));
        }
        let w_out = take_matrix("output.weight".into())?;
        let mut take_vector = |name: String| -> Result<Array1<f64>> {
            match file.weights.remove(&name) {
                Some(WeightArray::Vector(v)) => Ok(Array1::from(v)),
                Some(WeightArray::Matrix(_)) => Err(Error::Shape(format!("{name} should be a vector"))),
                None => Err(Error::Parse(format!("missing weight {name}"))),
            }
        };
        let mut layers = Vec::with_capacity(n_layers);
        for (i, (w_input, w_recurrent)) in mats.into_iter().enumerate() {
            layers.push(RecurrentLayer {
                w_input,
                w_recurrent,
                bias: take_vector(format!("layer{i}.bias"))?,
            });
        }
        let b_out = take_vector("output.bias".into())?;
        let model = RnnModel::from_params(Params { layers, w_out, b_out }, file.alphabet, file.stacking)?;
        if model.layer_sizes != file.layer_sizes {
            return Err(Error::Shape("layer_sizes disagree with weight shapes".into()));
        }
        Ok(model)
    }
}
