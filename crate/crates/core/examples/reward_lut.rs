//! Builds the default 40x40 reward table, prints a coarse view of it and
//! writes the full table as CSV.
//!
//! cargo run --release --example reward_lut [-- OUT.csv]

use cforge::reward::{build_lut, LutConfig};

fn main() -> cforge::Result<()> {
    let lut = build_lut(&LutConfig::default())?;
    let (rows, cols) = lut.shape();
    println!("{rows}x{cols} cells, max {:.3} at {:?}, min {:.3}", lut.max_cell(), lut.argmax(), lut.min_cell());
    print!("loss\\gain");
    for g in (0..cols).step_by(5) {
        print!("{:>7.1}", g as f64 * 2.5);
    }
    println!();
    for l in (0..rows).step_by(4) {
        print!("{:>9.1}", l as f64 * 0.5);
        for g in (0..cols).step_by(5) {
            print!("{:>7.3}", lut.cell(l, g));
        }
        println!();
    }
    for (loss, gain) in [(0.0, 0.0), (1.0, 30.0), (4.0, 45.0), (12.0, 60.0)] {
        println!("lookup(loss {loss}%, gain {gain}%) = {:.4}", lut.lookup(loss, gain)?);
    }
    if let Some(out) = std::env::args().nth(1) {
        lut.save_csv(&out)?;
        println!("written to {out}");
    }
    Ok(())
}
