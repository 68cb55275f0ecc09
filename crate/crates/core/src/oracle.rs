//! Brute-force references for the lattice: exhaustive path enumeration and
//! finite-difference gradients. Exponential by nature; guarded.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::lattice::{loss_and_gradient, LogitMatrix};
use crate::topology::{Alphabet, LabelSequence, StateTrellis, Topology};

/// Enumeration stops with [`Error::OracleGuard`] beyond this many paths.
pub const PATH_LIMIT: usize = 1_000_000;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Every valid start-to-end state path of a fixed length.
#[derive(Debug, Clone, Default)]
pub struct PathSet {
    pub paths: Vec<Vec<usize>>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

pub fn enumerate_paths(trellis: &StateTrellis, frames: usize) -> Result<PathSet> {
    enumerate_paths_limited(trellis, frames, PATH_LIMIT)
}

/// Number of valid paths of length `frames`, saturating at `u128::MAX`.
pub fn count_paths(trellis: &StateTrellis, frames: usize) -> u128 {
    if frames == 0 {
        return 0;
    }
    let mut counts: Vec<u128> = (0..trellis.len()).map(|s| u128::from(trellis.is_start(s))).collect();
    for _ in 1..frames {
        counts = (0..trellis.len())
            .map(|s| {
                trellis
                    .predecessors(s)
                    .iter()
                    .fold(0u128, |acc, &p| acc.saturating_add(counts[p]))
            })
            .collect();
    }
    trellis
        .end_states()
        .iter()
        .fold(0u128, |acc, &s| acc.saturating_add(counts[s]))
}

/// Enumerates paths after checking their count against `limit`.
pub fn enumerate_paths_limited(trellis: &StateTrellis, frames: usize, limit: usize) -> Result<PathSet> {
    let mut set = PathSet::default();
    if frames == 0 {
        return Ok(set);
    }
    if count_paths(trellis, frames) > limit as u128 {
        return Err(Error::OracleGuard { limit });
    }
    let mut stack = Vec::with_capacity(frames);
    for &s in trellis.start_states() {
        stack.push(s);
        extend(trellis, frames, &mut stack, &mut set.paths);
        stack.pop();
    }
    Ok(set)
}

fn extend(trellis: &StateTrellis, frames: usize, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let cur = *stack.last().expect("non-empty prefix");
    if stack.len() == frames {
        if trellis.is_end(cur) {
            out.push(stack.clone());
        }
        return;
    }
    for &next in trellis.successors(cur) {
        stack.push(next);
        extend(trellis, frames, stack, out);
        stack.pop();
    }
}

/// `ln` of the summed path probability over all enumerated paths.
pub fn brute_force_log_likelihood(probs: &Array2<f64>, trellis: &StateTrellis, frames: usize) -> Result<f64> {
    if probs.nrows() != frames {
        return Err(Error::Shape(format!(
            "{} probability rows for {frames} frames",
            probs.nrows()
        )));
    }
    let set = enumerate_paths(trellis, frames)?;
    if set.is_empty() {
        return Err(Error::Infeasible {
            frames,
            min_frames: trellis.min_frames(),
        });
    }
    // Straight sum of products; the magnitudes at oracle scale stay well
    // inside double range.
    let total: f64 = set
        .paths
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(t, &s)| probs[[t, trellis.class_of(s)]])
                .product::<f64>()
        })
        .sum();
    Ok(total.ln())
}

/// Central-difference gradient of the sequence NLL w.r.t. every logit.
pub fn finite_difference_gradient(
    logits: &LogitMatrix,
    labels: &LabelSequence,
    alphabet: &Alphabet,
    topology: impl Into<Topology>,
    step: f64,
) -> Result<Array2<f64>> {
    if !(1e-6..=1e-4).contains(&step) {
        return Err(Error::Config(format!(
            "finite-difference step {step} outside [1e-6, 1e-4]"
        )));
    }
    let topology = topology.into();
    let base = logits.view().to_owned();
    let nll = |m: Array2<f64>| -> Result<f64> {
        Ok(loss_and_gradient(&LogitMatrix::new(m)?, labels, alphabet, topology)?.nll())
    };
    nll(base.clone())?;
    let mut grad = Array2::zeros(base.dim());
    for ((t, k), g) in grad.indexed_iter_mut() {
        let mut plus = base.clone();
        plus[[t, k]] += step;
        let mut minus = base.clone();
        minus[[t, k]] -= step;
        *g = (nll(plus)? - nll(minus)?) / (2.0 * step);
    }
    Ok(grad)
}
