//! Overlap metrics on hand-made masks, including the empty-set conventions.
//!
//! cargo run --example metrics

use jointseg::metrics::{summarize, PairScore};
use jointseg::Mask;

fn disc(cy: f64, cx: f64, r: f64) -> Mask {
    Mask::from_fn(32, 32, |y, x| (y as f64 - cy).hypot(x as f64 - cx) <= r)
}

fn main() -> jointseg::Result<()> {
    let truth = disc(16.0, 16.0, 8.0);
    let cases = [
        ("exact", truth.clone(), truth.clone()),
        ("shifted", truth.clone(), disc(16.0, 19.0, 8.0)),
        ("too small", truth.clone(), disc(16.0, 16.0, 5.0)),
        ("missed", truth.clone(), Mask::zeros(32, 32)),
        ("false alarm", Mask::zeros(32, 32), disc(5.0, 5.0, 2.0)),
        ("both empty", Mask::zeros(32, 32), Mask::zeros(32, 32)),
    ];

    let mut scores = Vec::new();
    for (name, t, p) in &cases {
        let s = PairScore::score(*name, t, p)?;
        println!(
            "{name:<12} dice {:.3}  precision {:.3}  recall {:.3}  undefined [{}]",
            s.dice,
            s.precision,
            s.recall,
            s.flags()
        );
        scores.push(s);
    }

    let summary = summarize(&scores)?;
    for (metric, stats) in [("dice", &summary.dice), ("precision", &summary.precision), ("recall", &summary.recall)] {
        if let Some(s) = stats {
            println!(
                "{metric:<9} mean {:.3} median {:.3} over {} ({} excluded)",
                s.mean, s.median, s.count, s.excluded
            );
        }
    }
    Ok(())
}
