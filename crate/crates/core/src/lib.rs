//! CTC and TCS (temporal classification + segmentation) sequence losses.
//!
//! The crate builds state trellises for both topologies, runs log-domain
//! forward-backward to get sequence likelihoods, per-frame targets and
//! gradients, decodes and force-aligns frame posteriors into labeled
//! segments, and trains a small recurrent network end to end on synthetic
//! data with known segment boundaries.

pub mod cli;
pub mod decoder;
pub mod error;
pub mod exec;
pub mod io;
pub mod lattice;
pub mod nnet;
pub mod oracle;
pub mod synthgen;
pub mod topology;

pub use decoder::{extract_segments, greedy_decode, speech_spans, viterbi_align, Alignment, Segment};
pub use error::{Error, Result};
pub use exec::Exec;
pub use lattice::{logsumexp, loss_and_gradient, softmax_frames, LatticeResult, LogitMatrix};
pub use nnet::{evaluate, train, Metrics, RnnModel, TrainConfig};
pub use synthgen::{SynthConfig, SynthSample, Synthesizer, Utterance};
pub use topology::{
    collapse, expand, expand_ctc, expand_tcs, expand_tcs_with, min_frames, Alphabet, LabelSequence, Role, StateTrellis,
    TcsEnds, Topology, TopologyKind,
};
