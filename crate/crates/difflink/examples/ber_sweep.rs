//! Run the ber_sweep preset through the library and summarize what the
//! bit errors did to the second user's images.
//!
//! Run with: cargo run --example ber_sweep

use difflink::config::load_preset;
use difflink::harness::run_scenario;

fn main() -> difflink::Result<()> {
    let cfg = load_preset("ber_sweep")?;
    let out = std::path::PathBuf::from("out-ber-sweep");
    let artifacts = run_scenario(&cfg, &out, 0)?;
    println!(
        "{} rows -> {}",
        artifacts.rows.len(),
        artifacts.csv.display()
    );

    println!(
        "\n{:<12} {:>14} {:>14} {:>12}",
        "cell", "user2 fidelity", "psnr_ref (dB)", "flips/rep"
    );
    for cell in cfg.cells() {
        let rows: Vec<_> = artifacts
            .rows
            .iter()
            .filter(|r| r.cell_label == cell.label() && r.user == "user2")
            .collect();
        let n = rows.len();
        let fid = rows.iter().filter(|r| r.fidelity_ok).count();
        let psnr = rows.iter().map(|r| r.psnr_ref).sum::<f64>() / n as f64;
        let flips = rows.iter().map(|r| r.flipped_bits).sum::<u64>() / n as u64;
        println!(
            "{:<12} {:>10}/{:<3} {:>14.2} {:>12}",
            cell.label(),
            fid,
            n,
            psnr,
            flips
        );
    }
    println!("\nPGM snapshots of repetition 0 are next to the CSV.");
    Ok(())
}
