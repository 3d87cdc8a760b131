//! Modulated-FMCW frame synthesis at complex baseband.
//!
//! Every chirp is a linear up-ramp `exp(j(pi*mu*t^2 + phi_m))` sampled at `F_s`,
//! with `phi_m` a QPSK phase (or 0 for an unmodulated chirp). The carrier only
//! enters through the wavelength used by the channel models.

use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// The four QPSK phases, Gray mapped: 00, 01, 11, 10.
pub const QPSK_PHASES: [f64; 4] = [FRAC_PI_4, 3.0 * FRAC_PI_4, 5.0 * FRAC_PI_4, 7.0 * FRAC_PI_4];

/// Waveform and sampling parameters of one ISAC transceiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsacConfig {
    pub bandwidth_hz: f64,
    pub carrier_hz: f64,
    pub chirp_duration_s: f64,
    pub chirps_per_frame: usize,
    pub sampling_rate_hz: f64,
    pub transmit_power_w: f64,
}

impl IsacConfig {
    pub fn new(
        bandwidth_hz: f64,
        carrier_hz: f64,
        chirp_duration_s: f64,
        chirps_per_frame: usize,
        sampling_rate_hz: f64,
        transmit_power_w: f64,
    ) -> Result<Self> {
        let cfg = IsacConfig {
            bandwidth_hz,
            carrier_hz,
            chirp_duration_s,
            chirps_per_frame,
            sampling_rate_hz,
            transmit_power_w,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Table I parameters for device `k` (0-based): 10 MHz, 10 us chirps,
    /// 25 chirps per frame, 10 MHz sampling, 1 W, carrier 60 GHz + k * 10 MHz.
    pub fn table_i(k: usize) -> Self {
        IsacConfig {
            bandwidth_hz: 10e6,
            carrier_hz: 60e9 + 10e6 * k as f64,
            chirp_duration_s: 10e-6,
            chirps_per_frame: 25,
            sampling_rate_hz: 10e6,
            transmit_power_w: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.bandwidth_hz,
            self.carrier_hz,
            self.chirp_duration_s,
            self.sampling_rate_hz,
            self.transmit_power_w,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("isac config contains non-finite values"));
        }
        if self.bandwidth_hz <= 0.0 {
            return Err(Error::invalid("bandwidth must be positive"));
        }
        if self.chirp_duration_s <= 0.0 {
            return Err(Error::invalid("chirp duration must be positive"));
        }
        if self.chirps_per_frame == 0 {
            return Err(Error::invalid("at least one chirp per frame is required"));
        }
        if self.sampling_rate_hz < self.bandwidth_hz {
            return Err(Error::invalid("sampling rate must be at least the bandwidth"));
        }
        if self.transmit_power_w < 0.0 {
            return Err(Error::invalid("transmit power must be non-negative"));
        }
        if self.carrier_hz < 100.0 * self.bandwidth_hz {
            return Err(Error::invalid("carrier must be at least 100x the bandwidth"));
        }
        let n = self.chirp_duration_s * self.sampling_rate_hz;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) || n.round() < 1.0 {
            return Err(Error::invalid(format!(
                "chirp duration x sampling rate = {n} is not a positive integer"
            )));
        }
        Ok(())
    }

    /// Chirp slope `mu = B / T_chirp` in Hz/s, evaluated as `B F_s / N_c`
    /// so that decimal Table I values stay exact.
    pub fn slope(&self) -> f64 {
        self.bandwidth_hz * self.sampling_rate_hz / self.samples_per_chirp() as f64
    }

    pub fn frame_duration(&self) -> f64 {
        self.chirps_per_frame as f64 * self.chirp_duration_s
    }

    /// Samples per chirp, `N_c`.
    pub fn samples_per_chirp(&self) -> usize {
        (self.chirp_duration_s * self.sampling_rate_hz).round() as usize
    }

    pub fn samples_per_frame(&self) -> usize {
        self.samples_per_chirp() * self.chirps_per_frame
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// QPSK-over-chirp data rate: two bits per chirp, `2 F_s / N_c`.
    pub fn data_rate(&self) -> f64 {
        2.0 * self.sampling_rate_hz / self.samples_per_chirp() as f64
    }
}

/// Per-chirp phases of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSequence(Vec<f64>);

impl PhaseSequence {
    /// Validates that every phase is 0 or one of the QPSK phases.
    pub fn new(phases: Vec<f64>) -> Result<Self> {
        for &p in &phases {
            let ok = p == 0.0 || QPSK_PHASES.iter().any(|q| (p - q).abs() < 1e-12);
            if !ok {
                return Err(Error::invalid(format!("phase {p} is not a QPSK phase")));
            }
        }
        Ok(PhaseSequence(phases))
    }

    pub fn unmodulated(len: usize) -> Self {
        PhaseSequence(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Splits into frames of `m` chirps; the last frame is padded with the
    /// `00` symbol.
    pub fn frames(&self, m: usize) -> Vec<PhaseSequence> {
        self.0
            .chunks(m)
            .map(|c| {
                let mut v = c.to_vec();
                v.resize(m, FRAC_PI_4);
                PhaseSequence(v)
            })
            .collect()
    }
}

/// Gray mapping of bit pairs onto QPSK phases.
pub fn qpsk_map(bits: &[bool]) -> Result<PhaseSequence> {
    if bits.len() % 2 != 0 {
        return Err(Error::invalid(format!("odd bit count {}", bits.len())));
    }
    Ok(PhaseSequence(
        bits.chunks_exact(2)
            .map(|pair| QPSK_PHASES[symbol_index(pair[0], pair[1])])
            .collect(),
    ))
}

fn symbol_index(b0: bool, b1: bool) -> usize {
    match (b0, b1) {
        (false, false) => 0,
        (false, true) => 1,
        (true, true) => 2,
        (true, false) => 3,
    }
}

/// Inverse Gray map for a symbol index in `0..4`.
pub fn symbol_bits(index: usize) -> [bool; 2] {
    match index {
        0 => [false, false],
        1 => [false, true],
        2 => [true, true],
        _ => [true, false],
    }
}

/// Nearest QPSK point to `z`; ties resolve counterclockwise from pi/4, so
/// zero decides pi/4.
pub fn nearest_symbol(z: Complex64) -> usize {
    match (z.re >= 0.0, z.im >= 0.0) {
        (true, true) => 0,
        (false, true) => 1,
        (false, false) => 2,
        (true, false) => {
            if z.re > 0.0 {
                3
            } else {
                2
            }
        }
    }
}

/// Complex-baseband samples of a transmitted frame.
#[derive(Debug, Clone)]
pub struct BasebandFrame {
    pub samples: Vec<Complex64>,
    pub cfg: IsacConfig,
}

impl BasebandFrame {
    pub fn chirp(&self, m: usize) -> &[Complex64] {
        let n = self.cfg.samples_per_chirp();
        &self.samples[m * n..(m + 1) * n]
    }

    pub fn chirps(&self) -> std::slice::ChunksExact<'_, Complex64> {
        self.samples.chunks_exact(self.cfg.samples_per_chirp())
    }
}

/// Unit-power unmodulated chirp, `N_c` samples.
pub fn reference_chirp(cfg: &IsacConfig) -> Result<Vec<Complex64>> {
    cfg.validate()?;
    let mu = cfg.slope();
    let fs = cfg.sampling_rate_hz;
    Ok((0..cfg.samples_per_chirp())
        .map(|n| {
            let t = n as f64 / fs;
            Complex64::from_polar(1.0, PI * mu * t * t)
        })
        .collect())
}

pub fn synth_frame(cfg: &IsacConfig, phases: &PhaseSequence) -> Result<BasebandFrame> {
    if phases.len() != cfg.chirps_per_frame {
        return Err(Error::invalid(format!(
            "{} phases for a frame of {} chirps",
            phases.len(),
            cfg.chirps_per_frame
        )));
    }
    let reference = reference_chirp(cfg)?;
    let amp = cfg.transmit_power_w.sqrt();
    let mut samples = Vec::with_capacity(cfg.samples_per_frame());
    for &phi in phases.as_slice() {
        let rot = Complex64::from_polar(amp, phi);
        samples.extend(reference.iter().map(|&r| r * rot));
    }
    Ok(BasebandFrame { samples, cfg: *cfg })
}
