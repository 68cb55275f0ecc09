//! Trains matched TCS and CTC models on synthetic data and prints per-epoch
//! held-out metrics.
//!
//! cargo run --release --example train_demo -- [epochs] [learning_rate] [seed] [optional|required]

use std::time::Instant;

use tcs_core::nnet::Stacking;
use tcs_core::synthgen::stack_sample;
use tcs_core::{train, RnnModel, SynthConfig, Synthesizer, TcsEnds, TopologyKind, TrainConfig};

fn main() -> tcs_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(30, |a| a.parse().unwrap());
    let tcs_ends = match args.get(3).map(String::as_str) {
        Some("optional") => TcsEnds::Optional,
        _ => TcsEnds::Required,
    };
    let lr = args.get(1).map_or(0.01, |a| a.parse().unwrap());
    let seed = args.get(2).map_or(0, |a| a.parse().unwrap());

    let config = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let synth = Synthesizer::new(config.clone())?;
    let stacking = Stacking::default();
    let utts = synth
        .generate_dataset(250, Default::default())
        .iter()
        .enumerate()
        .map(|(i, s)| stack_sample(format!("utt{i}"), s, stacking.window, stacking.stride))
        .collect::<tcs_core::Result<Vec<_>>>()?;
    let (train_set, test_set) = utts.split_at(200);

    for kind in [TopologyKind::Tcs, TopologyKind::Ctc] {
        let start = Instant::now();
        let model = RnnModel::new(
            config.feature_dim * stacking.window,
            &[32],
            config.alphabet(kind)?,
            seed,
        )?
        .with_stacking(stacking);
        let cfg = TrainConfig {
            epochs,
            learning_rate: lr,
            kind,
            tcs_ends,
            seed,
            ..TrainConfig::default()
        };
        let (_, history) = train(model, train_set, test_set, &cfg)?;
        for m in &history {
            let h = m.heldout.unwrap();
            println!(
                "{kind} epoch {:2} nll {:8.3} seq {:.3} bnd {:.3} span {:.3} occ {:.3} sil {:.3}",
                m.epoch,
                m.mean_nll,
                h.sequence_accuracy,
                h.boundary_accuracy,
                h.span_boundary_accuracy,
                h.filler_occupancy,
                h.silence_fraction
            );
        }
        println!("{kind} took {:.1}s", start.elapsed().as_secs_f64());
    }
    Ok(())
}
