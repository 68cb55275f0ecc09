//! Prints ground truth next to Viterbi segments for a few held-out utterances.
//!
//! cargo run --release --example inspect -- [seed] [epochs] [learning_rate] [optional|required]

use tcs_core::decoder::viterbi_log;
use tcs_core::lattice::log_softmax;
use tcs_core::nnet::{rnn_forward, Stacking};
use tcs_core::synthgen::stack_sample;
use tcs_core::{expand, train, RnnModel, SynthConfig, Synthesizer, TcsEnds, TopologyKind, TrainConfig};

fn main() -> tcs_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.first().map_or(0, |a| a.parse().unwrap());
    let epochs = args.get(1).map_or(30, |a| a.parse().unwrap());
    let tcs_ends = match args.get(3).map(String::as_str) {
        Some("optional") => TcsEnds::Optional,
        _ => TcsEnds::Required,
    };
    let lr = args.get(2).map_or(0.01, |a| a.parse().unwrap());
    let config = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let stacking = Stacking::default();
    let utts = Synthesizer::new(config.clone())?
        .generate_dataset(250, Default::default())
        .iter()
        .enumerate()
        .map(|(i, s)| stack_sample(format!("utt{i}"), s, stacking.window, stacking.stride))
        .collect::<tcs_core::Result<Vec<_>>>()?;
    let (train_set, test_set) = utts.split_at(200);
    let kind = TopologyKind::Tcs;
    let alphabet = config.alphabet(kind)?;
    let model = RnnModel::new(config.feature_dim * stacking.window, &[32], alphabet.clone(), seed)?;
    let cfg = TrainConfig {
        epochs,
        learning_rate: lr,
        kind,
        tcs_ends,
        seed,
        ..TrainConfig::default()
    };
    let (model, _) = train(model, train_set, test_set, &cfg)?;
    for utt in &test_set[..4] {
        let truth: Vec<String> = utt
            .truth
            .iter()
            .map(|s| {
                format!(
                    "{}:{}-{}",
                    s.class.map_or("_".to_string(), |c| c.to_string()),
                    s.start,
                    s.end
                )
            })
            .collect();
        println!("truth {}", truth.join(" "));
        let (logits, _) = rnn_forward(&model, &utt.features)?;
        let trellis = expand(&utt.labels, &alphabet, cfg.topology())?;
        let al = viterbi_log(log_softmax(logits.view()).view(), &trellis)?;
        let segs: Vec<String> = al
            .segments
            .iter()
            .map(|s| format!("{}:{}-{}", alphabet.name(s.class_id), s.start_frame, s.end_frame))
            .collect();
        println!("align {}\n", segs.join(" "));
    }
    Ok(())
}
