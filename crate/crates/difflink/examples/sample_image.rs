//! Monolithic sampling: run the full reverse chain for one prompt and save
//! the result as a PGM image.
//!
//! Run with: cargo run --example sample_image

use difflink::assets::{builtin_mixture, write_pgm};
use difflink::diffusion::{sample, Dims, NoiseSchedule, StreamIndices};
use difflink::metrics::classify;
use difflink::rng::RngStreams;
use difflink::semantic::{default_graph, parse_prompt};

fn main() -> difflink::Result<()> {
    let dims = Dims::new(16, 16);
    let schedule = NoiseSchedule::linear(11, 0.1, 0.6)?;
    let mixture = builtin_mixture(dims, 0.7)?;
    let graph = default_graph();

    let prompt = parse_prompt("user1", "Apple on Table", &graph)?;
    println!("prompt {:?} -> concepts {:?}", prompt.text, prompt.concepts);
    let condition = prompt.condition(0.02)?;

    for seed in [1u64, 2, 3, 4] {
        let streams = RngStreams::new(seed);
        let image = sample(
            &schedule,
            &mixture,
            &condition,
            dims,
            &streams,
            StreamIndices::default(),
            0,
        )?;
        let verdict = classify(&image, &mixture)?;
        let path = std::path::PathBuf::from(format!("sample_seed{seed}.pgm"));
        write_pgm(&path, &image)?;
        println!(
            "seed {seed}: nearest prototype {:?} (distance {:.2}, margin {:.2}) -> {}",
            verdict.concept,
            verdict.distance,
            verdict.margin,
            path.display()
        );
    }
    Ok(())
}
