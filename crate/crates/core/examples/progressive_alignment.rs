//! Window plan for a long sequence, then a merged alignment against a
//! predictor that knows the true poses.

use splatwild::align::{self, SyntheticPredictor};

fn main() -> splatwild::Result<()> {
    let (total, batch) = (50, 16);
    let windows = align::plan_windows(total, batch)?;
    print!("{}", align::windows_tsv(&windows));

    let mut oracle = SyntheticPredictor::random(total, 8, 11);
    let res = align::run_alignment(total, batch, &mut oracle)?;
    let exact = res.poses.iter().zip(&oracle.poses).all(|(a, b)| a.bitwise_eq(b));
    println!(
        "{} windows, {} poses ({}), {} points",
        res.windows.len(),
        res.poses.len(),
        if exact { "all exact" } else { "MISMATCH" },
        res.points.len()
    );
    Ok(())
}
