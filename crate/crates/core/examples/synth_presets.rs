//! Generate both shipped presets and describe who ends up in which cell.
//!
//!     cargo run --example synth_presets

use multifair::synth::PRESETS;
use multifair::{generate, group_view, preset};

fn main() -> multifair::Result<()> {
    for name in PRESETS {
        let cfg = preset(name)?;
        let data = generate(&cfg)?;
        let n = data.n_rows() as f64;
        let positives = data.labels().iter().filter(|&&y| y == 1).count();
        println!(
            "{name}: {} rows, {} features, positive rate {:.3}",
            data.n_rows(),
            data.n_features(),
            positives as f64 / n
        );
        for attr in ["race", "sex"] {
            let mut cells = Vec::new();
            for g in 0..2u8 {
                for y in 0..2u8 {
                    let k = group_view(&data, attr, g, y)?.len();
                    cells.push(format!("z={g},y={y}: {k}"));
                }
            }
            println!("  {attr}: {}", cells.join("  "));
        }
    }
    Ok(())
}
