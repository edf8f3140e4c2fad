//! Bit-error models: closed-form BER vs empirical flip rates, and the
//! quantizer's reconstruction bound.
//!
//! Run with: cargo run --example channel_models

use difflink::channel::{ber, dequantize, quantize, transmit, ChannelModel, QuantizationSpec};
use difflink::diffusion::{Dims, Latent};
use difflink::rng::RngStreams;

fn main() -> difflink::Result<()> {
    let streams = RngStreams::new(99);

    // one million bits of payload
    let q = QuantizationSpec::new(8, -4.0, 4.0)?;
    let latent = Latent::new(vec![0.0; 125_000], Dims::new(125_000, 1), 0)?;
    let bits = quantize(&latent, &q);
    println!("payload: {} bits", bits.bit_len());

    println!(
        "\n{:<28} {:>12} {:>12}",
        "model", "closed form", "empirical"
    );
    let models = [
        ChannelModel::FixedBer { p: 0.02 },
        ChannelModel::AwgnBpsk { snr: 0.5 },
        ChannelModel::AwgnBpsk { snr: 1.0 },
        ChannelModel::AwgnBpsk { snr: 4.0 },
        ChannelModel::RayleighBpsk { snr: 1.0 },
        ChannelModel::RayleighBpsk { snr: 10.0 },
    ];
    for (i, model) in models.iter().enumerate() {
        let (_, flips) = transmit(&bits, model, &mut streams.stream("channel", i as u64));
        println!(
            "{:<28} {:>12.6} {:>12.6}",
            format!("{model:?}"),
            ber(model),
            flips as f64 / bits.bit_len() as f64
        );
    }

    // quantization roundtrip stays within half a step
    let mut gen = streams.stream("values", 0);
    let data: Vec<f64> = (0..4096).map(|_| 8.0 * gen.uniform() - 4.0).collect();
    let latent = Latent::new(data.clone(), Dims::new(64, 64), 3)?;
    let back = dequantize(&quantize(&latent, &q), latent.dims)?;
    let worst = data
        .iter()
        .zip(&back.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!(
        "\n8-bit roundtrip on [-4, 4]: worst error {:.6} (bound {:.6})",
        worst,
        q.half_step()
    );
    Ok(())
}
