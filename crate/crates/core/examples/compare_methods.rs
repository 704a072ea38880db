//! Trains all four pipelines on the same data through the file-based
//! workflow and writes the comparison table, boxplots and panel.
//!
//! cargo run --release --example compare_methods -- [epochs] [out_dir]

use std::path::PathBuf;

use jointseg::cli::{cmd_compare, cmd_eval, cmd_gen_data, run_training, table_text, RunConfig, CHECKPOINT_FILE};
use jointseg::pipelines::{PipelineKind, TrainConfig};

fn main() -> jointseg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(Ok(8), |s| s.parse()).expect("epochs");
    let out = PathBuf::from(args.get(1).map_or("comparison", String::as_str));

    let train = out.join("train.jsd");
    let test = out.join("test.jsd");
    std::fs::create_dir_all(&out)?;
    cmd_gen_data(None, 100, 1001, &train)?;
    cmd_gen_data(None, 30, 2002, &test)?;

    let mut runs = Vec::new();
    for kind in PipelineKind::ALL {
        let mut t = TrainConfig::desk(kind);
        t.arch.base_channels = 4;
        t.epochs = epochs;
        let dir = out.join(kind.as_str());
        let model = run_training(&RunConfig::from_train_config(&t, train.clone(), dir.clone()))?;
        let last = model.history.last().map_or(f64::NAN, |r| r.total);
        println!("{kind}: final epoch loss {last:.4}");
        cmd_eval(&dir.join(CHECKPOINT_FILE), &test, t.tau, &dir)?;
        runs.push(dir);
    }

    let rows = cmd_compare(&runs, &out, 4)?;
    print!("{}", table_text(&rows));
    println!("figures in {}", out.display());
    Ok(())
}
