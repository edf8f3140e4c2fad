//! Split sampling over a lossy link: a shared phase under one user's prompt,
//! a noisy handoff, then another user's local phase.
//!
//! Run with: cargo run --example split_handoff

use difflink::assets::{builtin_mixture, write_pgm};
use difflink::channel::{ChannelModel, Link, QuantizationSpec};
use difflink::diffusion::{split_sample, Dims, NoiseSchedule, StreamIndices};
use difflink::metrics::{classify, psnr, ssim, SsimParams};
use difflink::rng::RngStreams;
use difflink::semantic::{default_graph, parse_prompt};

fn main() -> difflink::Result<()> {
    let dims = Dims::new(16, 16);
    let schedule = NoiseSchedule::linear(11, 0.1, 0.6)?;
    let mixture = builtin_mixture(dims, 0.7)?;
    let graph = default_graph();

    let shared_cond = parse_prompt("user1", "Apple on Table", &graph)?.condition(0.02)?;
    let local_cond = parse_prompt("user2", "Lemon on Table", &graph)?.condition(0.02)?;

    let shared_steps = 5;
    println!(
        "T = 11, shared steps = {shared_steps}, local steps = {}",
        11 - shared_steps
    );
    println!(
        "{:<10} {:>10} {:>10} {:>12} {:>10}",
        "ber", "flips", "psnr(dB)", "ssim", "verdict"
    );

    for p in [0.0, 0.01, 0.02, 0.1] {
        let link = Link::new(QuantizationSpec::default(), ChannelModel::FixedBer { p })?;
        let streams = RngStreams::new(7);
        let out = split_sample(
            &schedule,
            &mixture,
            &shared_cond,
            &local_cond,
            shared_steps,
            Some(&link),
            dims,
            &streams,
            StreamIndices::default(),
        )?;
        // reference: same streams, no link
        let clean = split_sample(
            &schedule,
            &mixture,
            &shared_cond,
            &local_cond,
            shared_steps,
            None,
            dims,
            &streams,
            StreamIndices::default(),
        )?;
        let verdict = classify(&out.final_latent, &mixture)?;
        println!(
            "{:<10} {:>10} {:>10.2} {:>12.4} {:>10}",
            p,
            out.flipped_bits,
            psnr(&out.final_latent, &clean.final_latent, 1.0)?,
            ssim(
                &out.final_latent,
                &clean.final_latent,
                &SsimParams::default()
            )?,
            verdict.concept,
        );
        if p == 0.02 {
            write_pgm(std::path::Path::new("handoff.pgm"), &out.handoff)?;
            write_pgm(std::path::Path::new("received.pgm"), &out.received)?;
            write_pgm(std::path::Path::new("final.pgm"), &out.final_latent)?;
        }
    }
    println!("wrote handoff.pgm, received.pgm, final.pgm for ber = 0.02");
    Ok(())
}
