//! Log-domain forward-backward over a [`StateTrellis`].
//!
//! `alpha[t][s]` includes the emission of state `s` at frame `t`; `beta[t][s]`
//! excludes it. Their sum is therefore the log mass of every complete path
//! occupying `s` at `t`, and `logsumexp_s(alpha[t][s] + beta[t][s])` equals the
//! sequence log-likelihood at every frame.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::topology::{expand, Alphabet, LabelSequence, StateTrellis, Topology};

/// Raw per-frame scores, `T` frames by `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix(Array2<f64>);

impl LogitMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (t, k) = values.dim();
        if t < 1 {
            return Err(Error::Shape("logit matrix needs at least one frame".into()));
        }
        if k < 2 {
            return Err(Error::Shape(format!("logit matrix needs at least 2 classes, got {k}")));
        }
        if let Some(((frame, class), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { frame, class });
        }
        Ok(LogitMatrix(values))
    }

    pub fn frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Everything one forward-backward evaluation produces.
#[derive(Debug, Clone)]
pub struct LatticeResult {
    pub log_likelihood: f64,
    /// Sum over frames of `-target . ln softmax`, targets held constant.
    pub cross_entropy: f64,
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    pub frame_targets: Array2<f64>,
    pub softmax: Array2<f64>,
    /// Gradient of the sequence NLL with respect to the raw scores.
    pub gradient: Array2<f64>,
}

impl LatticeResult {
    pub fn nll(&self) -> f64 {
        -self.log_likelihood
    }

    /// JSON dump with row-major `frame_targets` and `gradient`.
    pub fn to_dump(&self) -> LatticeDump {
        LatticeDump {
            log_likelihood: self.log_likelihood,
            frame_targets: rows(&self.frame_targets),
            gradient: rows(&self.gradient),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatticeDump {
    pub log_likelihood: f64,
    pub frame_targets: Vec<Vec<f64>>,
    pub gradient: Vec<Vec<f64>>,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

/// Stable `ln(sum(exp(values)))`; an empty or all `-inf` input yields `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    logsumexp_iter(values.iter().copied())
}

pub(crate) fn logsumexp_iter<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64> + Clone,
{
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

fn log_softmax_row(row: ArrayView1<'_, f64>) -> Vec<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - lse).collect()
}

/// Row-wise softmax with max subtraction.
pub fn softmax_frames(logits: &LogitMatrix) -> Array2<f64> {
    log_softmax(logits.view()).mapv(f64::exp)
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.dim());
    for (t, row) in logits.outer_iter().enumerate() {
        for (k, v) in log_softmax_row(row).into_iter().enumerate() {
            out[[t, k]] = v;
        }
    }
    out
}

fn check_feasible(frames: usize, classes: usize, trellis: &StateTrellis) -> Result<()> {
    let min = trellis.min_frames();
    if frames < min {
        return Err(Error::Infeasible {
            frames,
            min_frames: min,
        });
    }
    if let Some(s) = trellis.states().iter().find(|s| s.class_id >= classes) {
        return Err(Error::ClassOutOfRange {
            index: s.class_id,
            classes,
        });
    }
    Ok(())
}

/// Forward pass on log emissions.
pub fn forward_log(log_probs: ArrayView2<'_, f64>, trellis: &StateTrellis) -> Result<Array2<f64>> {
    let (t_len, k) = log_probs.dim();
    check_feasible(t_len, k, trellis)?;
    let s_len = trellis.len();
    let mut alpha = Array2::from_elem((t_len, s_len), f64::NEG_INFINITY);
    for &s in trellis.start_states() {
        alpha[[0, s]] = log_probs[[0, trellis.class_of(s)]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let acc = logsumexp_iter(trellis.predecessors(s).iter().map(|&p| alpha[[t - 1, p]]));
            alpha[[t, s]] = acc + log_probs[[t, trellis.class_of(s)]];
        }
    }
    Ok(alpha)
}

/// Backward pass on log emissions.
pub fn backward_log(log_probs: ArrayView2<'_, f64>, trellis: &StateTrellis) -> Result<Array2<f64>> {
    let (t_len, k) = log_probs.dim();
    check_feasible(t_len, k, trellis)?;
    let s_len = trellis.len();
    let mut beta = Array2::from_elem((t_len, s_len), f64::NEG_INFINITY);
    for &s in trellis.end_states() {
        beta[[t_len - 1, s]] = 0.0;
    }
    for t in (0..t_len.saturating_sub(1)).rev() {
        for s in 0..s_len {
            beta[[t, s]] = logsumexp_iter(
                trellis
                    .successors(s)
                    .iter()
                    .map(|&q| beta[[t + 1, q]] + log_probs[[t + 1, trellis.class_of(q)]]),
            );
        }
    }
    Ok(beta)
}

/// Forward pass over a `T x K` probability matrix.
pub fn log_forward(probs: &Array2<f64>, trellis: &StateTrellis) -> Result<Array2<f64>> {
    forward_log(probs.mapv(f64::ln).view(), trellis)
}

/// Backward pass over a `T x K` probability matrix.
pub fn log_backward(probs: &Array2<f64>, trellis: &StateTrellis) -> Result<Array2<f64>> {
    backward_log(probs.mapv(f64::ln).view(), trellis)
}

/// Sequence log-likelihood read off the last alpha row.
pub fn sequence_log_likelihood(alpha: &Array2<f64>, trellis: &StateTrellis) -> f64 {
    let last = alpha.nrows() - 1;
    logsumexp_iter(trellis.end_states().iter().map(|&s| alpha[[last, s]]))
}

/// Per-frame class posteriors from a forward-backward run.
pub fn frame_targets(
    alpha: &Array2<f64>,
    beta: &Array2<f64>,
    trellis: &StateTrellis,
    log_likelihood: f64,
    classes: usize,
) -> Result<Array2<f64>> {
    if !log_likelihood.is_finite() {
        return Err(Error::Infeasible {
            frames: alpha.nrows(),
            min_frames: trellis.min_frames(),
        });
    }
    if alpha.dim() != beta.dim() || alpha.ncols() != trellis.len() {
        return Err(Error::Shape("alpha, beta and trellis disagree".into()));
    }
    let mut targets = Array2::zeros((alpha.nrows(), classes));
    for t in 0..alpha.nrows() {
        for s in 0..trellis.len() {
            let occ = alpha[[t, s]] + beta[[t, s]] - log_likelihood;
            if occ > f64::NEG_INFINITY {
                targets[[t, trellis.class_of(s)]] += occ.exp();
            }
        }
    }
    Ok(targets)
}

/// Runs forward-backward on a prebuilt trellis.
pub fn lattice_loss(logits: &LogitMatrix, trellis: &StateTrellis) -> Result<LatticeResult> {
    let log_probs = log_softmax(logits.view());
    let alpha = forward_log(log_probs.view(), trellis)?;
    let beta = backward_log(log_probs.view(), trellis)?;
    let log_likelihood = sequence_log_likelihood(&alpha, trellis);
    let targets = frame_targets(&alpha, &beta, trellis, log_likelihood, logits.classes())?;
    let softmax = log_probs.mapv(f64::exp);
    let cross_entropy = targets
        .iter()
        .zip(log_probs.iter())
        .filter(|(&g, _)| g > 0.0)
        .map(|(&g, &lp)| -g * lp)
        .sum();
    let gradient = &softmax - &targets;
    Ok(LatticeResult {
        log_likelihood,
        cross_entropy,
        alpha,
        beta,
        frame_targets: targets,
        softmax,
        gradient,
    })
}

/// Sequence NLL, frame targets and the gradient w.r.t. raw scores.
pub fn loss_and_gradient(
    logits: &LogitMatrix,
    labels: &LabelSequence,
    alphabet: &Alphabet,
    topology: impl Into<Topology>,
) -> Result<LatticeResult> {
    if logits.classes() != alphabet.len() {
        return Err(Error::Shape(format!(
            "logits have {} classes, alphabet has {}",
            logits.classes(),
            alphabet.len()
        )));
    }
    let trellis = expand(labels, alphabet, topology)?;
    lattice_loss(logits, &trellis)
}

/// Sequence NLL of each `(logits, labels)` pair, in input order.
pub fn batch_nll(
    batch: &[(LogitMatrix, LabelSequence)],
    alphabet: &Alphabet,
    topology: impl Into<Topology>,
    mode: Exec,
) -> Result<Vec<f64>> {
    let topology = topology.into();
    exec::map(mode, batch, |(logits, labels)| {
        loss_and_gradient(logits, labels, alphabet, topology).map(|r| r.nll())
    })
    .into_iter()
    .collect()
}

/// Row sums, handy for checking target and gradient identities.
pub fn row_sums(m: &Array2<f64>) -> Vec<f64> {
    m.sum_axis(Axis(1)).to_vec()
}
