//! QPSK-over-chirp modem, vector serialization and link timing.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{add_noise, apply_comm, DelayKernel, NoiseSpec, QdCommChannel};
use crate::error::{Error, Result};
use crate::waveform::{nearest_symbol, qpsk_map, reference_chirp, symbol_bits, synth_frame, IsacConfig};

/// Framing prefix carried by every element in 34-bit mode.
pub const FRAMING_BITS: [bool; 2] = [true, false];

/// Serialization of real vectors: IEEE-754 single precision, most significant
/// bit first, optionally wrapped with two framing bits per element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VectorCodec {
    pub bits_per_element: u32,
}

impl VectorCodec {
    pub const PAYLOAD: VectorCodec = VectorCodec { bits_per_element: 32 };
    pub const FRAMED: VectorCodec = VectorCodec { bits_per_element: 34 };

    pub fn new(bits_per_element: u32) -> Result<Self> {
        match bits_per_element {
            32 | 34 => Ok(VectorCodec { bits_per_element }),
            b => Err(Error::invalid(format!("unsupported bits per element {b} (32 or 34)"))),
        }
    }

    pub fn bits_for(&self, elements: usize) -> u64 {
        elements as u64 * self.bits_per_element as u64
    }
}

pub fn encode_vector(v: &[f32], codec: VectorCodec) -> Result<Vec<bool>> {
    let mut bits = Vec::with_capacity(codec.bits_for(v.len()) as usize);
    for &x in v {
        if !x.is_finite() {
            return Err(Error::invalid("cannot encode a non-finite element"));
        }
        if codec.bits_per_element == 34 {
            bits.extend_from_slice(&FRAMING_BITS);
        }
        let word = x.to_bits();
        bits.extend((0..32).rev().map(|i| (word >> i) & 1 == 1));
    }
    Ok(bits)
}

pub fn decode_vector(bits: &[bool], codec: VectorCodec) -> Result<Vec<f32>> {
    let width = codec.bits_per_element as usize;
    if bits.len() % width != 0 {
        return Err(Error::invalid(format!(
            "{} bits is not a multiple of {width}",
            bits.len()
        )));
    }
    Ok(bits
        .chunks_exact(width)
        .map(|chunk| {
            let payload = &chunk[width - 32..];
            let word = payload.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
            f32::from_bits(word)
        })
        .collect())
}

/// Seconds needed to send `n_bits` at `2 / T_chirp` bit/s.
pub fn transfer_time(n_bits: u64, cfg: &IsacConfig) -> f64 {
    n_bits as f64 / cfg.data_rate()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub rate_bps: f64,
    pub bits: u64,
    pub seconds: f64,
}

impl LinkBudget {
    pub fn new(cfg: &IsacConfig, bits: u64) -> Self {
        LinkBudget {
            rate_bps: cfg.data_rate(),
            bits,
            seconds: transfer_time(bits, cfg),
        }
    }
}

/// Reference chirp passed through the (known) link channel.
pub fn channel_reference(ch: &QdCommChannel, cfg: &IsacConfig) -> Result<Vec<Complex64>> {
    let reference = reference_chirp(cfg)?;
    Ok(DelayKernel::new(cfg).apply(&reference, &ch.taps()))
}

/// Matched-filter demodulation, two bits per chirp slot.
pub fn demodulate(rx: &[Complex64], ch: &QdCommChannel, cfg: &IsacConfig) -> Result<Vec<bool>> {
    let n = cfg.samples_per_chirp();
    if rx.len() % n != 0 {
        return Err(Error::invalid(format!(
            "{} samples is not a multiple of the chirp length {n}",
            rx.len()
        )));
    }
    let matched = channel_reference(ch, cfg)?;
    Ok(demodulate_with(rx, &matched))
}

pub fn demodulate_with(rx: &[Complex64], matched: &[Complex64]) -> Vec<bool> {
    let mut bits = Vec::with_capacity(rx.len() / matched.len() * 2);
    for chirp in rx.chunks_exact(matched.len()) {
        let corr: Complex64 = chirp.iter().zip(matched).map(|(y, c)| y * c.conj()).sum();
        bits.extend_from_slice(&symbol_bits(nearest_symbol(corr)));
    }
    bits
}

/// Noise power giving the requested SNR after matched filtering.
pub fn post_correlation_noise(ch: &QdCommChannel, cfg: &IsacConfig, snr_db: f64) -> Result<NoiseSpec> {
    let matched = channel_reference(ch, cfg)?;
    let energy: f64 = matched.iter().map(|z| z.norm_sqr()).sum();
    Ok(NoiseSpec::Snr {
        snr_db,
        reference_power: cfg.transmit_power_w * energy,
    })
}

/// One directed ISAC link: modulation, channel, noise and demodulation.
#[derive(Debug, Clone)]
pub struct IsacLink {
    pub cfg: IsacConfig,
    pub channel: QdCommChannel,
    pub noise: NoiseSpec,
}

impl IsacLink {
    pub fn noiseless(cfg: IsacConfig, channel: QdCommChannel) -> Self {
        IsacLink {
            cfg,
            channel,
            noise: NoiseSpec::Power(0.0),
        }
    }

    /// Sends `bits` frame by frame and returns the decisions, trimmed to the
    /// payload length.
    pub fn transmit<R: Rng + ?Sized>(&self, bits: &[bool], rng: &mut R) -> Result<Vec<bool>> {
        let mut padded = bits.to_vec();
        let per_frame = 2 * self.cfg.chirps_per_frame;
        let rem = padded.len() % per_frame;
        if rem != 0 || padded.is_empty() {
            padded.resize(padded.len() + per_frame - rem, false);
        }
        let phases = qpsk_map(&padded)?;
        let matched = channel_reference(&self.channel, &self.cfg)?;
        let mut out = Vec::with_capacity(padded.len());
        for frame_phases in phases.frames(self.cfg.chirps_per_frame) {
            let frame = synth_frame(&self.cfg, &frame_phases)?;
            let mut rx = apply_comm(&frame, &self.channel)?;
            add_noise(&mut rx, &self.noise, rng);
            out.extend(demodulate_with(&rx, &matched));
        }
        out.truncate(bits.len());
        Ok(out)
    }

    pub fn send_vector<R: Rng + ?Sized>(&self, v: &[f32], codec: VectorCodec, rng: &mut R) -> Result<Vec<f32>> {
        let bits = encode_vector(v, codec)?;
        let rx = self.transmit(&bits, rng)?;
        let out = decode_vector(&rx, codec)?;
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::Protocol("link delivered a non-finite element".into()));
        }
        Ok(out)
    }
}
