//! Bit-level lossy handoff of intermediate latents.
//!
//! A latent crosses the air as a packed bit stream: linear quantization over
//! a clamp range, independent per-bit flips at the model's bit-error rate,
//! then dequantization on the receiving device. BER comes from one of three
//! models: a fixed probability, BPSK over AWGN, or BPSK over Rayleigh
//! fading.

use crate::diffusion::{Dims, HandoffLink, Latent};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Linear scalar quantizer description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationSpec {
    pub bits: u8,
    pub lo: f64,
    pub hi: f64,
}

impl Default for QuantizationSpec {
    fn default() -> Self {
        QuantizationSpec {
            bits: 8,
            lo: -4.0,
            hi: 4.0,
        }
    }
}

impl QuantizationSpec {
    pub fn new(bits: u8, lo: f64, hi: f64) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::domain(format!("bits {bits} outside 1..=16")));
        }
        if !(lo < hi) {
            return Err(Error::domain(format!("clamp range [{lo}, {hi}] is empty")));
        }
        Ok(QuantizationSpec { bits, lo, hi })
    }

    pub fn levels(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// Worst-case reconstruction error for in-range values: half a step.
    pub fn half_step(&self) -> f64 {
        (self.hi - self.lo) / (2.0 * self.levels() as f64)
    }
}

/// Bit-error model of the wireless link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelModel {
    /// Every bit flips independently with probability `p`.
    FixedBer { p: f64 },
    /// Coherent BPSK over AWGN at linear SNR; BER = Q(sqrt(2 snr)).
    AwgnBpsk { snr: f64 },
    /// BPSK over flat Rayleigh fading at mean linear SNR;
    /// BER = (1 - sqrt(snr / (1 + snr))) / 2.
    RayleighBpsk { snr: f64 },
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ChannelModel::FixedBer { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::domain(format!("BER {p} outside [0, 1]")));
                }
            }
            ChannelModel::AwgnBpsk { snr } | ChannelModel::RayleighBpsk { snr } => {
                if !(snr > 0.0) {
                    return Err(Error::domain(format!("SNR {snr} must be positive")));
                }
            }
        }
        Ok(())
    }

    pub fn snr(&self) -> Option<f64> {
        match *self {
            ChannelModel::FixedBer { .. } => None,
            ChannelModel::AwgnBpsk { snr } | ChannelModel::RayleighBpsk { snr } => Some(snr),
        }
    }
}

/// Bit-error probability of a channel model.
pub fn ber(model: &ChannelModel) -> f64 {
    match *model {
        ChannelModel::FixedBer { p } => p,
        // Q(x) = erfc(x / sqrt(2)) / 2, so Q(sqrt(2 snr)) = erfc(sqrt(snr)) / 2
        ChannelModel::AwgnBpsk { snr } => 0.5 * libm::erfc(snr.sqrt()),
        ChannelModel::RayleighBpsk { snr } => 0.5 * (1.0 - (snr / (1.0 + snr)).sqrt()),
    }
}

/// A quantized latent packed most-significant-bit first, together with the
/// metadata needed to decode it.
#[derive(Debug, Clone, PartialEq)]
pub struct BitStream {
    element_count: u32,
    quant: QuantizationSpec,
    payload: Vec<u8>,
    /// Chain position of the encoded latent; carried alongside the payload
    /// (not part of the wire format).
    pub step: usize,
}

impl BitStream {
    pub fn bit_len(&self) -> usize {
        self.element_count as usize * self.quant.bits as usize
    }

    pub fn element_count(&self) -> usize {
        self.element_count as usize
    }

    pub fn quant(&self) -> QuantizationSpec {
        self.quant
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    fn get_bit(&self, i: usize) -> bool {
        self.payload[i / 8] >> (7 - i % 8) & 1 == 1
    }

    fn flip_bit(&mut self, i: usize) {
        self.payload[i / 8] ^= 1 << (7 - i % 8);
    }

    /// Hamming distance over the payload bits.
    pub fn hamming(&self, other: &BitStream) -> u64 {
        self.payload
            .iter()
            .zip(&other.payload)
            .map(|(a, b)| (a ^ b).count_ones() as u64)
            .sum()
    }

    /// Wire format: u32 element count, u8 bits per element, two little-endian
    /// f64 clamp bounds, packed payload. All integers little-endian.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + self.payload.len());
        out.extend_from_slice(&self.element_count.to_le_bytes());
        out.push(self.quant.bits);
        out.extend_from_slice(&self.quant.lo.to_le_bytes());
        out.extend_from_slice(&self.quant.hi.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<BitStream> {
        if bytes.len() < 21 {
            return Err(Error::domain("bit stream shorter than its header"));
        }
        let element_count = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let bits = bytes[4];
        let lo = f64::from_le_bytes(bytes[5..13].try_into().unwrap());
        let hi = f64::from_le_bytes(bytes[13..21].try_into().unwrap());
        let quant = QuantizationSpec::new(bits, lo, hi)?;
        let payload = bytes[21..].to_vec();
        let expect = (element_count as usize * bits as usize).div_ceil(8);
        if payload.len() != expect {
            return Err(Error::dimension(format!(
                "payload has {} bytes, expected {expect}",
                payload.len()
            )));
        }
        Ok(BitStream {
            element_count,
            quant,
            payload,
            step: 0,
        })
    }

    /// Serialized size in bits (header + payload) for latency accounting.
    pub fn wire_bits(&self) -> u64 {
        (21 + self.payload.len() as u64) * 8
    }
}

/// Size in bits of a serialized handoff for `n` elements, without encoding.
pub fn wire_bits_for(n: usize, quant: &QuantizationSpec) -> u64 {
    let payload_bytes = (n * quant.bits as usize).div_ceil(8) as u64;
    (21 + payload_bytes) * 8
}

/// Clamp each element to the quantizer range and map it to an unsigned code,
/// round half up; codes are packed MSB first.
pub fn quantize(latent: &Latent, quant: &QuantizationSpec) -> BitStream {
    let levels = quant.levels() as f64;
    let scale = levels / (quant.hi - quant.lo);
    let total_bits = latent.len() * quant.bits as usize;
    let mut payload = vec![0u8; total_bits.div_ceil(8)];
    let mut bit = 0usize;
    for v in &latent.data {
        let clamped = v.clamp(quant.lo, quant.hi);
        // non-negative argument, so round() is round-half-up here
        let code = ((clamped - quant.lo) * scale).round() as u32;
        for k in (0..quant.bits).rev() {
            if code >> k & 1 == 1 {
                payload[bit / 8] |= 1 << (7 - bit % 8);
            }
            bit += 1;
        }
    }
    BitStream {
        element_count: latent.len() as u32,
        quant: *quant,
        payload,
        step: latent.step,
    }
}

/// Decode codes back to latent values: code c maps to
/// lo + c / (2^bits - 1) * (hi - lo).
pub fn dequantize(bits: &BitStream, dims: Dims) -> Result<Latent> {
    if bits.element_count() != dims.len() {
        return Err(Error::dimension(format!(
            "bit stream holds {} elements for {}x{} pixels",
            bits.element_count(),
            dims.width,
            dims.height
        )));
    }
    let quant = bits.quant;
    let step_size = (quant.hi - quant.lo) / quant.levels() as f64;
    let mut data = Vec::with_capacity(dims.len());
    let mut bit = 0usize;
    for _ in 0..bits.element_count() {
        let mut code: u32 = 0;
        for _ in 0..quant.bits {
            code = code << 1 | bits.get_bit(bit) as u32;
            bit += 1;
        }
        data.push(quant.lo + code as f64 * step_size);
    }
    Latent::new(data, dims, bits.step)
}

/// Flip each payload bit independently with probability `ber(model)`,
/// drawing from the provided stream. Returns the corrupted stream and the
/// number of flipped bits.
pub fn transmit(bits: &BitStream, model: &ChannelModel, stream: &mut Stream) -> (BitStream, u64) {
    let p = ber(model);
    let mut out = bits.clone();
    let mut flips = 0u64;
    for i in 0..bits.bit_len() {
        if stream.uniform() < p {
            out.flip_bit(i);
            flips += 1;
        }
    }
    (out, flips)
}

/// A complete handoff pipeline: quantize, transmit, dequantize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub quant: QuantizationSpec,
    pub model: ChannelModel,
}

impl Link {
    pub fn new(quant: QuantizationSpec, model: ChannelModel) -> Result<Self> {
        model.validate()?;
        Ok(Link { quant, model })
    }
}

impl HandoffLink for Link {
    fn relay(&self, handoff: &Latent, stream: &mut Stream) -> Result<(Latent, u64)> {
        let encoded = quantize(handoff, &self.quant);
        let (received, flips) = transmit(&encoded, &self.model, stream);
        Ok((dequantize(&received, handoff.dims)?, flips))
    }
}
