//! Seed sweep of TCS/CTC filler occupancy at the acceptance configuration.
//!
//! cargo run --release --example sweep -- [seeds] [epochs] [learning_rate] [optional|required]

use tcs_core::nnet::Stacking;
use tcs_core::synthgen::stack_sample;
use tcs_core::{train, RnnModel, SynthConfig, Synthesizer, TcsEnds, TopologyKind, TrainConfig};

fn main() -> tcs_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().map_or(10, |a| a.parse().unwrap());
    let epochs = args.get(1).map_or(30, |a| a.parse().unwrap());
    let tcs_ends = match args.get(3).map(String::as_str) {
        Some("optional") => TcsEnds::Optional,
        _ => TcsEnds::Required,
    };
    let lr = args.get(2).map_or(0.01, |a| a.parse().unwrap());
    let stacking = Stacking::default();
    for seed in 0..seeds {
        let config = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let synth = Synthesizer::new(config.clone())?;
        let utts = synth
            .generate_dataset(250, Default::default())
            .iter()
            .enumerate()
            .map(|(i, s)| stack_sample(format!("utt{i}"), s, stacking.window, stacking.stride))
            .collect::<tcs_core::Result<Vec<_>>>()?;
        let (train_set, test_set) = utts.split_at(200);
        for kind in [TopologyKind::Tcs, TopologyKind::Ctc] {
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
            let m = history.last().unwrap().heldout.unwrap();
            println!(
                "seed {seed} {kind}: seq {:.3} bnd {:.3} span {:.3} occ {:.3} sil {:.3}",
                m.sequence_accuracy,
                m.boundary_accuracy,
                m.span_boundary_accuracy,
                m.filler_occupancy,
                m.silence_fraction
            );
        }
    }
    Ok(())
}
