//! Per-layer parameter table and totals over a depth/width grid.
//!
//! cargo run --example param_count -- [depth] [scale] [base_width]

use unetsr::model::{layer_table, param_count, Model, NetConfig};

fn main() -> unetsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let depth: usize = args.next().map_or(5, |a| a.parse().expect("depth"));
    let scale: usize = args.next().map_or(2, |a| a.parse().expect("scale"));
    let base: usize = args.next().map_or(64, |a| a.parse().expect("base_width"));
    let cfg = NetConfig::new(depth, scale, base);
    cfg.validate()?;

    println!("{:<18} {:>5} {:>5} {:>11}", "layer", "in", "out", "params");
    for l in layer_table(&cfg) {
        println!(
            "{:<18} {:>5} {:>5} {:>11}",
            l.name, l.in_channels, l.out_channels, l.params
        );
    }
    let built = Model::build(cfg.clone())?.param_count();
    println!(
        "{:<18} {:>5} {:>5} {:>11}  (built model: {built})",
        "total",
        "",
        "",
        param_count(&cfg)
    );

    println!("\ntotals by depth (x{scale}):");
    print!("{:>6}", "D");
    let widths = [16, 32, 64];
    for b in widths {
        print!(" {:>12}", format!("base {b}"));
    }
    println!();
    for d in 1..=8 {
        print!("{d:>6}");
        for b in widths {
            print!(" {:>12}", param_count(&NetConfig::new(d, scale, b)));
        }
        println!();
    }
    Ok(())
}
