//! Synthetic labeled sequences with exact segment boundaries.
//!
//! Each class gets a random template vector. A sample is a run of
//! silence / character / silence / ... / silence frames where silence is
//! zero-mean Gaussian noise and character frames are template plus noise.
//! Everything is driven by ChaCha streams derived from the config seed:
//! stream 0 draws the templates, stream `i + 1` draws sample `i`, so samples
//! can be generated in any order or in parallel.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::io;
use crate::topology::{Alphabet, LabelSequence, TopologyKind};

const TEMPLATE_MIN_DISTANCE: f64 = 1.0;
const TEMPLATE_TRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Inclusive frame range of one character.
    pub char_dur: [usize; 2],
    /// Inclusive frame range of one silence.
    pub gap_dur: [usize; 2],
    /// Inclusive range of labels per sample.
    pub seq_len: [usize; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 10,
            feature_dim: 32,
            noise_sigma: 0.1,
            char_dur: [8, 20],
            gap_dur: [2, 12],
            seq_len: [3, 6],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_classes == 0 {
            return bad("n_classes must be positive");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative");
        }
        for (name, [lo, hi]) in [
            ("char_dur", self.char_dur),
            ("gap_dur", self.gap_dur),
            ("seq_len", self.seq_len),
        ] {
            if lo > hi {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        if self.char_dur[0] == 0 || self.gap_dur[0] == 0 {
            return bad("durations must be at least one frame");
        }
        Ok(())
    }

    /// Class names `"0"`, `"1"`, ... for the character classes.
    pub fn class_names(&self) -> Vec<String> {
        (0..self.n_classes).map(|c| c.to_string()).collect()
    }

    pub fn alphabet(&self, kind: TopologyKind) -> Result<Alphabet> {
        Alphabet::for_kind(kind, self.class_names())
    }
}

/// Ground-truth span; `class` is `None` for silence. Frames inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueSegment {
    pub class: Option<usize>,
    pub start: usize,
    pub end: usize,
}

impl TrueSegment {
    pub fn is_silence(&self) -> bool {
        self.class.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub features: Array2<f64>,
    pub labels: LabelSequence,
    pub true_segments: Vec<TrueSegment>,
}

impl SynthSample {
    pub fn frames(&self) -> usize {
        self.features.nrows()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn min_pairwise_distance(t: &Array2<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..t.nrows() {
        for j in i + 1..t.nrows() {
            let d = (&t.row(i) - &t.row(j)).mapv(|v| v * v).sum().sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Standard-normal class templates, redrawn until every pair is at least
/// distance 1 apart.
pub fn make_templates(config: &SynthConfig) -> Result<Array2<f64>> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, 0);
    for _ in 0..TEMPLATE_TRIES {
        let t = Array2::from_shape_simple_fn((config.n_classes, config.feature_dim), || {
            StandardNormal.sample(&mut rng)
        });
        if min_pairwise_distance(&t) >= TEMPLATE_MIN_DISTANCE {
            return Ok(t);
        }
    }
    Err(Error::Config(format!(
        "no templates with pairwise distance >= {TEMPLATE_MIN_DISTANCE} after {TEMPLATE_TRIES} tries"
    )))
}

/// Template set plus config: the generator proper.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    config: SynthConfig,
    templates: Array2<f64>,
}

impl Synthesizer {
    pub fn new(config: SynthConfig) -> Result<Self> {
        let templates = make_templates(&config)?;
        Ok(Synthesizer { config, templates })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn templates(&self) -> &Array2<f64> {
        &self.templates
    }

    pub fn generate_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SynthSample {
        let c = &self.config;
        let n_labels = rng.random_range(c.seq_len[0]..=c.seq_len[1]);
        let labels: Vec<usize> = (0..n_labels).map(|_| rng.random_range(0..c.n_classes)).collect();

        let mut true_segments = Vec::with_capacity(2 * n_labels + 1);
        let mut cursor = 0;
        let mut push = |class: Option<usize>, len: usize| {
            true_segments.push(TrueSegment {
                class,
                start: cursor,
                end: cursor + len - 1,
            });
            cursor += len;
        };
        push(None, rng.random_range(c.gap_dur[0]..=c.gap_dur[1]));
        for &label in &labels {
            push(Some(label), rng.random_range(c.char_dur[0]..=c.char_dur[1]));
            push(None, rng.random_range(c.gap_dur[0]..=c.gap_dur[1]));
        }

        let frames = true_segments.last().map_or(0, |s| s.end + 1);
        let mut features = Array2::zeros((frames, c.feature_dim));
        let noise = Normal::new(0.0, c.noise_sigma).expect("sigma validated");
        for seg in &true_segments {
            for t in seg.start..=seg.end {
                let mut row = features.row_mut(t);
                if let Some(class) = seg.class {
                    row.assign(&self.templates.row(class));
                }
                if c.noise_sigma > 0.0 {
                    row.mapv_inplace(|v| v + noise.sample(rng));
                }
            }
        }
        SynthSample {
            features,
            labels: LabelSequence::new(labels),
            true_segments,
        }
    }

    /// Sample `index` of the seed's sample stream.
    pub fn sample_at(&self, index: usize) -> SynthSample {
        let mut rng = stream_rng(self.config.seed, index as u64 + 1);
        self.generate_sample(&mut rng)
    }

    pub fn generate_dataset(&self, n_samples: usize, mode: Exec) -> Vec<SynthSample> {
        exec::map_range(mode, n_samples, |i| self.sample_at(i))
    }
}

pub fn generate_dataset(config: &SynthConfig, n_samples: usize) -> Result<Vec<SynthSample>> {
    Ok(Synthesizer::new(config.clone())?.generate_dataset(n_samples, Exec::default()))
}

/// Concatenates `window` consecutive frames every `stride` frames. Tail
/// frames that do not fill a window are dropped.
pub fn stack_frames(features: &Array2<f64>, window: usize, stride: usize) -> Result<Array2<f64>> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    let (t, d) = features.dim();
    if t < window {
        return Err(Error::TooShort { frames: t, window });
    }
    let out_t = (t - window) / stride + 1;
    let mut out = Array2::zeros((out_t, window * d));
    for i in 0..out_t {
        let src = features.slice(s![i * stride..i * stride + window, ..]);
        let flat = src.iter().copied();
        for (dst, v) in out.row_mut(i).iter_mut().zip(flat) {
            *dst = v;
        }
    }
    Ok(out)
}

/// Maps frame boundaries onto super-frames: `floor(b / stride)` clamped to
/// the last super-frame.
pub fn rescale_segments(segments: &[TrueSegment], stride: usize, stacked_frames: usize) -> Vec<TrueSegment> {
    let last = stacked_frames.saturating_sub(1);
    segments
        .iter()
        .map(|s| TrueSegment {
            class: s.class,
            start: (s.start / stride).min(last),
            end: (s.end / stride).min(last),
        })
        .collect()
}

/// A training-ready sequence: stacked features with rescaled truth.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub features: Array2<f64>,
    pub labels: LabelSequence,
    pub truth: Vec<TrueSegment>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.nrows()
    }

    /// Fraction of frames covered by silence, later segments taking
    /// precedence where rescaling made neighbours overlap.
    pub fn silence_fraction(&self) -> f64 {
        let t = self.frames();
        let mut silent = vec![false; t];
        for seg in &self.truth {
            for flag in silent.iter_mut().take(seg.end.min(t - 1) + 1).skip(seg.start) {
                *flag = seg.is_silence();
            }
        }
        silent.iter().filter(|&&s| s).count() as f64 / t as f64
    }

    /// Character segments in label order.
    pub fn character_truth(&self) -> impl Iterator<Item = &TrueSegment> {
        self.truth.iter().filter(|s| !s.is_silence())
    }
}

pub fn stack_sample(id: impl Into<String>, sample: &SynthSample, window: usize, stride: usize) -> Result<Utterance> {
    let features = stack_frames(&sample.features, window, stride)?;
    let truth = rescale_segments(&sample.true_segments, stride, features.nrows());
    Ok(Utterance {
        id: id.into(),
        features,
        labels: sample.labels.clone(),
        truth,
    })
}

/// Manifest row of a dataset on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Space-separated class names.
    pub label: String,
    pub true_segments: Vec<TrueSegment>,
}

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sample_id(index: usize) -> String {
    format!("utt{index:05}")
}

/// Writes `config.json`, `manifest.json` and one `<id>.csv` per sample.
pub fn save_dataset(dir: &Path, config: &SynthConfig, samples: &[SynthSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::write_json(&dir.join(CONFIG_FILE), config)?;
    let names = config.class_names();
    let mut manifest = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let id = sample_id(i);
        io::save_matrix_csv(&dir.join(format!("{id}.csv")), &sample.features)?;
        let label: Vec<&str> = sample.labels.iter().map(|c| names[c].as_str()).collect();
        manifest.push(ManifestEntry {
            id,
            label: label.join(" "),
            true_segments: sample.true_segments.clone(),
        });
    }
    io::write_json(&dir.join(MANIFEST_FILE), &manifest)
}

/// Reads a dataset written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(SynthConfig, Vec<(String, SynthSample)>)> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a dataset directory", dir.display())));
    }
    let config: SynthConfig = io::read_json(&dir.join(CONFIG_FILE))?;
    config.validate()?;
    let manifest: Vec<ManifestEntry> = io::read_json(&dir.join(MANIFEST_FILE))?;
    let names = config.class_names();
    let mut out = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let ids = entry
            .label
            .split_whitespace()
            .map(|tok| {
                names
                    .iter()
                    .position(|n| n == tok)
                    .ok_or_else(|| Error::UnknownLabel(tok.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let features = io::read_matrix_csv(&dir.join(format!("{}.csv", entry.id)))?;
        if features.ncols() != config.feature_dim {
            return Err(Error::Shape(format!(
                "{}: {} columns, config says {}",
                entry.id,
                features.ncols(),
                config.feature_dim
            )));
        }
        out.push((
            entry.id,
            SynthSample {
                features,
                labels: LabelSequence::new(ids),
                true_segments: entry.true_segments,
            },
        ));
    }
    Ok((config, out))
}
