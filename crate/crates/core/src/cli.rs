//! The `tcs` command line. Every subcommand writes exactly one JSON document
//! or CSV matrix to stdout; diagnostics go to stderr.
//!
//! Exit codes: 0 success, 2 bad input, 3 infeasible label, 4 oracle guard.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::decoder::{greedy_decode, segment_records, speech_spans, viterbi_log};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::io::{read_json, read_matrix_csv, save_matrix_csv, write_json, write_matrix_csv};
use crate::lattice::{lattice_loss, log_softmax, softmax_frames, LogitMatrix};
use crate::nnet::{train, RnnModel, Stacking, TrainConfig};
use crate::oracle::brute_force_log_likelihood;
use crate::synthgen::{load_dataset, save_dataset, stack_sample, SynthConfig, Synthesizer};
use crate::topology::{expand, Alphabet, TcsEnds, Topology, TopologyKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_GUARD: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "tcs", version, about = "CTC / TCS sequence losses, alignment and training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sequence NLL and frame cross-entropy for a logit matrix.
    Loss(LossArgs),
    /// Viterbi forced alignment into labeled segments.
    Align(AlignArgs),
    /// Best-path decoding.
    Decode(DecodeArgs),
    /// Write a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train a recurrent model on a dataset directory.
    Train(TrainArgs),
    /// Per-frame class posteriors of a trained model.
    Posteriors(PosteriorArgs),
}

#[derive(Debug, Args)]
pub struct LatticeInput {
    /// Headerless CSV, one row of K scores per frame.
    #[arg(long)]
    pub logits: PathBuf,
    /// Alphabet JSON file.
    #[arg(long)]
    pub alphabet: PathBuf,
    #[arg(long, value_enum)]
    pub topology: TopologyKind,
    /// Whether TCS paths must start and end in background.
    #[arg(long, value_enum, default_value_t = TcsEnds::Optional)]
    pub tcs_ends: TcsEnds,
}

impl LatticeInput {
    fn topology(&self) -> Topology {
        Topology::new(self.topology, self.tcs_ends)
    }
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[command(flatten)]
    pub input: LatticeInput,
    /// Comma-separated label names or indices.
    #[arg(long, allow_hyphen_values = true)]
    pub labels: String,
    /// Write the gradient w.r.t. the logits as CSV.
    #[arg(long)]
    pub grad: Option<PathBuf>,
    /// Write log-likelihood, frame targets and gradient as JSON.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Cross-check against exhaustive path enumeration.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub input: LatticeInput,
    #[arg(long, allow_hyphen_values = true)]
    pub labels: String,
    /// Fold foreground frames into the following character segment.
    #[arg(long)]
    pub speech_span: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub input: LatticeInput,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// Generator config JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub topology: TopologyKind,
    #[arg(long)]
    pub epochs: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub sortagrad: bool,
    #[arg(long)]
    pub model_out: PathBuf,
    #[arg(long, value_enum, default_value_t = TcsEnds::Optional)]
    pub tcs_ends: TcsEnds,
    /// Hidden layer sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    /// Trailing fraction of the dataset held out for evaluation.
    #[arg(long, default_value_t = 0.2)]
    pub heldout: f64,
    #[arg(long, default_value_t = 8)]
    pub window: usize,
    #[arg(long, default_value_t = 2)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct PosteriorArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Feature CSV, raw or already stacked.
    #[arg(long)]
    pub input: PathBuf,
}

/// Maps a library error onto the exit-code contract.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        e if e.is_infeasible() => EXIT_INFEASIBLE,
        Error::OracleGuard { .. } => EXIT_GUARD,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = write!(stderr, "{rendered}");
            }
            return code;
        }
    };
    match run(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Loss(a) => cmd_loss(&a, out),
        Command::Align(a) => cmd_align(&a, out),
        Command::Decode(a) => cmd_decode(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Posteriors(a) => cmd_posteriors(&a, out),
    }
}

fn load_input(input: &LatticeInput) -> Result<(LogitMatrix, Alphabet)> {
    let alphabet: Alphabet = read_json(&input.alphabet)?;
    alphabet.check_kind(input.topology)?;
    let logits = LogitMatrix::new(read_matrix_csv(&input.logits)?)?;
    if logits.classes() != alphabet.len() {
        return Err(Error::Shape(format!(
            "logits have {} columns, alphabet has {} classes",
            logits.classes(),
            alphabet.len()
        )));
    }
    Ok((logits, alphabet))
}

fn emit_json(out: &mut dyn Write, value: &serde_json::Value) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

pub fn cmd_loss(args: &LossArgs, out: &mut dyn Write) -> Result<()> {
    let (logits, alphabet) = load_input(&args.input)?;
    let labels = alphabet.parse_labels(&args.labels)?;
    let trellis = expand(&labels, &alphabet, args.input.topology())?;
    let result = lattice_loss(&logits, &trellis)?;
    if let Some(path) = &args.grad {
        save_matrix_csv(path, &result.gradient)?;
    }
    if let Some(path) = &args.dump {
        write_json(path, &result.to_dump())?;
    }
    let mut report = json!({ "nll": result.nll(), "cross_entropy": result.cross_entropy });
    if args.verify {
        let probs = softmax_frames(&logits);
        let oracle_nll = -brute_force_log_likelihood(&probs, &trellis, logits.frames())?;
        report["oracle_nll"] = json!(oracle_nll);
        report["abs_diff"] = json!((oracle_nll - result.nll()).abs());
    }
    emit_json(out, &report)
}

pub fn cmd_align(args: &AlignArgs, out: &mut dyn Write) -> Result<()> {
    let (logits, alphabet) = load_input(&args.input)?;
    let labels = alphabet.parse_labels(&args.labels)?;
    let trellis = expand(&labels, &alphabet, args.input.topology())?;
    let alignment = viterbi_log(log_softmax(logits.view()).view(), &trellis)?;
    let segments = if args.speech_span {
        speech_spans(&alignment.segments)
    } else {
        alignment.segments
    };
    emit_json(out, &serde_json::to_value(segment_records(&segments, &alphabet))?)
}

pub fn cmd_decode(args: &DecodeArgs, out: &mut dyn Write) -> Result<()> {
    let (logits, alphabet) = load_input(&args.input)?;
    let decoded = greedy_decode(&softmax_frames(&logits), &alphabet, args.input.topology)?;
    emit_json(out, &json!({ "labels": alphabet.label_names(&decoded) }))
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut config: SynthConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SynthConfig::default(),
    };
    config.seed = args.seed;
    config.validate()?;
    let samples = Synthesizer::new(config.clone())?.generate_dataset(args.n, Exec::default());
    save_dataset(&args.out, &config, &samples)?;
    let frames: usize = samples.iter().map(|s| s.frames()).sum();
    emit_json(
        out,
        &json!({ "out": args.out.display().to_string(), "samples": samples.len(), "frames": frames }),
    )
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    if !(0.0..1.0).contains(&args.heldout) {
        return Err(Error::Config("--heldout must be in [0, 1)".into()));
    }
    let (synth, samples) = load_dataset(&args.data)?;
    let utterances = samples
        .iter()
        .map(|(id, s)| stack_sample(id.clone(), s, args.window, args.stride))
        .collect::<Result<Vec<_>>>()?;
    let n_heldout = (utterances.len() as f64 * args.heldout).round() as usize;
    let (train_set, heldout) = utterances.split_at(utterances.len() - n_heldout);
    let alphabet = synth.alphabet(args.topology)?;
    let input_dim = synth.feature_dim * args.window;
    let model = RnnModel::new(input_dim, &args.hidden, alphabet, args.seed)?.with_stacking(Stacking {
        window: args.window,
        stride: args.stride,
    });
    let config = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        clip_norm: args.clip_norm,
        sortagrad: args.sortagrad,
        kind: args.topology,
        tcs_ends: args.tcs_ends,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let (model, history) = train(model, train_set, heldout, &config)?;
    fs::write(&args.model_out, model.to_json()?)?;
    emit_json(out, &serde_json::to_value(history)?)
}

pub fn cmd_posteriors(args: &PosteriorArgs, out: &mut dyn Write) -> Result<()> {
    let model = RnnModel::from_json(&fs::read_to_string(&args.model)?)?;
    let raw = read_matrix_csv(&args.input)?;
    let features = model.prepare_input(&raw)?;
    let posteriors = model.posteriors(&features)?;
    write_matrix_csv(out, &posteriors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(
            exit_code(&Error::Infeasible {
                frames: 1,
                min_frames: 2
            }),
            EXIT_INFEASIBLE
        );
        assert_eq!(exit_code(&Error::OracleGuard { limit: 1 }), EXIT_GUARD);
        assert_eq!(exit_code(&Error::Parse("x".into())), EXIT_INPUT);
    }

    #[test]
    fn usage_errors_exit_two() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(main_with(["tcs", "loss"], &mut o, &mut e), EXIT_INPUT);
        assert!(o.is_empty());
        assert_eq!(main_with(["tcs", "--help"], &mut o, &mut e), EXIT_OK);
    }
}
