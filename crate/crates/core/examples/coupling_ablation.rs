//! Shows the scar loss reaching the myocardium network through the
//! message-passing mask, and what cutting that path does to training.
//!
//! cargo run --release --example coupling_ablation -- [epochs]

use jointseg::nets::{init_params, Part};
use jointseg::pipelines::{coupling_gradient_norm, evaluate, train, PipelineKind, TrainConfig};
use jointseg::synthdata::{generate_dataset, SceneSpec};

fn main() -> jointseg::Result<()> {
    let epochs = std::env::args().nth(1).map_or(Ok(6), |s| s.parse()).expect("epochs");
    let spec = SceneSpec::default();
    let train_set = generate_dataset(&spec, 1001, 80, 1)?;
    let test_set = generate_dataset(&spec, 2002, 30, 1)?;

    let mut cfg = TrainConfig::desk(PipelineKind::Jdl);
    cfg.arch.base_channels = 4;
    cfg.epochs = epochs;

    let myo = init_params::<f64>(&cfg.arch, Part::Full, 0)?;
    let scar = init_params::<f64>(&cfg.arch, Part::Full, 1)?;
    let batch = &train_set[..cfg.batch_size];
    for detach in [false, true] {
        let norm = coupling_gradient_norm(&myo, &scar, batch, &cfg.loss, detach)?;
        println!("detach_mask={detach}: |dL_s/dtheta_M| = {norm:.3e}");
    }

    for detach in [false, true] {
        cfg.detach_mask = detach;
        let model = train(&train_set, &cfg)?;
        let r = evaluate(&model.params, &test_set, cfg.tau)?;
        let mean = |s: &Option<jointseg::metrics::Stats>| s.as_ref().map_or(f64::NAN, |s| s.mean);
        println!(
            "detach_mask={detach}: scar dice {:.3}, myocardium dice {:.3}",
            mean(&r.scar_summary.dice),
            r.myo_summary.as_ref().map_or(f64::NAN, |m| mean(&m.dice))
        );
    }
    Ok(())
}
