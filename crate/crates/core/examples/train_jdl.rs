//! Trains the joint model on synthetic scenes, reports test Dice for both
//! tasks and saves the checkpoint.
//!
//! cargo run --release --example train_jdl -- [epochs] [seed]

use std::fs::File;
use std::io::BufWriter;

use jointseg::pipelines::{evaluate, train, PipelineKind, TrainConfig};
use jointseg::synthdata::{generate_dataset, SceneSpec};

fn main() -> jointseg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(Ok(10), |s| s.parse()).expect("epochs");
    let seed = args.get(1).map_or(Ok(0), |s| s.parse()).expect("seed");

    let spec = SceneSpec::default();
    let train_set = generate_dataset(&spec, 1001, 120, 1)?;
    let test_set = generate_dataset(&spec, 2002, 30, 1)?;

    let mut cfg = TrainConfig::desk(PipelineKind::Jdl);
    cfg.arch.base_channels = 4;
    cfg.epochs = epochs;
    cfg.seed = seed;
    let model = train(&train_set, &cfg)?;
    for r in &model.history {
        println!(
            "epoch {:>3}  total {:.4}  L_m {:.4}  L_s {:.4}  reg {:.3}",
            r.epoch, r.total, r.myo, r.scar, r.reg
        );
    }

    let report = evaluate(&model.params, &test_set, cfg.tau)?;
    let mean = |s: &Option<jointseg::metrics::Stats>| s.as_ref().map_or(f64::NAN, |s| s.mean);
    println!(
        "test scar dice {:.3} recall {:.3}",
        mean(&report.scar_summary.dice),
        mean(&report.scar_summary.recall)
    );
    if let Some(m) = &report.myo_summary {
        println!("test myocardium dice {:.3}", mean(&m.dice));
    }

    model.params.write_checkpoint(BufWriter::new(File::create("jdl.jseg")?))?;
    println!("saved jdl.jseg");
    Ok(())
}
