//! Propagation: point-scatterer echoes, quasi-deterministic multipath links
//! and additive noise.
//!
//! Delays are applied per chirp as frequency-domain phase ramps over the
//! chirp's `N_c`-point DFT, with every bin mapped onto `[0, F_s)` (the band of
//! the up-ramp). Targets follow the stop-and-hop approximation: positions are
//! frozen within a chirp.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::waveform::{BasebandFrame, IsacConfig, SPEED_OF_LIGHT};

pub type Vec3 = Vector3<f64>;

/// Position of a scatterer as a function of absolute time.
#[derive(Clone)]
pub enum Trajectory {
    Static(Vec3),
    Linear { start: Vec3, velocity: Vec3 },
    Custom(Arc<dyn Fn(f64) -> Vec3 + Send + Sync>),
}

impl Trajectory {
    pub fn position(&self, t: f64) -> Vec3 {
        match self {
            Trajectory::Static(p) => *p,
            Trajectory::Linear { start, velocity } => start + velocity * t,
            Trajectory::Custom(f) => f(t),
        }
    }
}

impl std::fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Trajectory::Static(p) => write!(f, "Static({p:?})"),
            Trajectory::Linear { start, velocity } => {
                write!(f, "Linear {{ start: {start:?}, velocity: {velocity:?} }}")
            }
            Trajectory::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scatterer {
    pub trajectory: Trajectory,
    pub reflectivity: f64,
    pub is_static: bool,
}

impl Scatterer {
    pub fn fixed(position: Vec3, reflectivity: f64) -> Self {
        Scatterer {
            trajectory: Trajectory::Static(position),
            reflectivity,
            is_static: true,
        }
    }

    pub fn moving(trajectory: Trajectory, reflectivity: f64) -> Self {
        Scatterer {
            trajectory,
            reflectivity,
            is_static: false,
        }
    }
}

/// Complex gain and delay of one propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub gain: Complex64,
    pub delay_s: f64,
}

/// Two-way point-scatterer path: amplitude `rho / R^2`, phase `-4 pi R / lambda`.
pub fn echo_tap(position: &Vec3, reflectivity: f64, device: &Vec3, wavelength: f64) -> Result<Tap> {
    let range = (position - device).norm();
    if !(range > 1e-9) {
        return Err(Error::invalid("scatterer at zero range from the device"));
    }
    if reflectivity < 0.0 {
        return Err(Error::invalid("negative reflectivity"));
    }
    Ok(Tap {
        gain: Complex64::from_polar(reflectivity / (range * range), -4.0 * PI * range / wavelength),
        delay_s: 2.0 * range / SPEED_OF_LIGHT,
    })
}

/// Per-chirp multi-tap fractional delay line.
pub struct DelayKernel {
    n: usize,
    bin_hz: f64,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl DelayKernel {
    pub fn new(cfg: &IsacConfig) -> Self {
        let n = cfg.samples_per_chirp();
        let mut planner = FftPlanner::new();
        DelayKernel {
            n,
            bin_hz: cfg.sampling_rate_hz / n as f64,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// DFT of one chirp, to be reused across [`DelayKernel::render`] calls.
    pub fn spectrum(&self, chirp: &[Complex64]) -> Vec<Complex64> {
        let mut buf = chirp.to_vec();
        self.fft.process(&mut buf);
        buf
    }

    /// Writes `sum_taps gain * x(t - delay)` into `out`, given the DFT of `x`.
    pub fn render(&self, spectrum: &[Complex64], taps: &[Tap], out: &mut [Complex64]) {
        debug_assert_eq!(spectrum.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        out.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for tap in taps {
            let step = Complex64::from_polar(1.0, -2.0 * PI * self.bin_hz * tap.delay_s);
            let mut w = tap.gain;
            for (o, &x) in out.iter_mut().zip(spectrum) {
                *o += x * w;
                w *= step;
            }
        }
        self.ifft.process(out);
        let scale = 1.0 / self.n as f64;
        out.iter_mut().for_each(|z| *z *= scale);
    }

    /// Convenience wrapper: delay and sum a single chirp in the time domain.
    pub fn apply(&self, chirp: &[Complex64], taps: &[Tap]) -> Vec<Complex64> {
        let spec = self.spectrum(chirp);
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        self.render(&spec, taps, &mut out);
        out
    }
}

/// Noise-free echo of `frame` from `scatterers` seen by a device at `device`,
/// the frame starting at absolute time `t0`.
pub fn apply_echo(
    frame: &BasebandFrame,
    scatterers: &[Scatterer],
    device: &Vec3,
    t0: f64,
) -> Result<Vec<Complex64>> {
    let cfg = &frame.cfg;
    let n = cfg.samples_per_chirp();
    if frame.samples.len() != cfg.samples_per_frame() {
        return Err(Error::shape("frame length does not match its config"));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); frame.samples.len()];
    if scatterers.is_empty() {
        return Ok(out);
    }
    let kernel = DelayKernel::new(cfg);
    let lambda = cfg.wavelength();
    let mut taps = Vec::with_capacity(scatterers.len());
    for (m, chirp) in frame.chirps().enumerate() {
        let t = t0 + m as f64 * cfg.chirp_duration_s;
        taps.clear();
        for s in scatterers {
            taps.push(echo_tap(&s.trajectory.position(t), s.reflectivity, device, lambda)?);
        }
        let spec = kernel.spectrum(chirp);
        kernel.render(&spec, &taps, &mut out[m * n..(m + 1) * n]);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QdRay {
    pub amplitude: f64,
    pub phase: f64,
    /// Absolute ray delay in seconds; never earlier than its cluster.
    pub delay_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QdCluster {
    /// Reflection loss as a power ratio.
    pub power_loss: f64,
    pub delay_s: f64,
    pub rays: Vec<QdRay>,
}

/// Quasi-deterministic cluster/ray link channel.
#[derive(Debug, Clone, PartialEq)]
pub struct QdCommChannel {
    pub clusters: Vec<QdCluster>,
    pub distance_m: f64,
    pub wavelength_m: f64,
}

impl QdCommChannel {
    /// Line-of-sight only channel with gain `lambda / (4 pi D)`.
    pub fn line_of_sight(distance_m: f64, wavelength_m: f64) -> Result<Self> {
        let ch = QdCommChannel {
            clusters: vec![QdCluster {
                power_loss: 1.0,
                delay_s: 0.0,
                rays: vec![QdRay {
                    amplitude: 1.0,
                    phase: 0.0,
                    delay_s: 0.0,
                }],
            }],
            distance_m,
            wavelength_m,
        };
        ch.validate()?;
        Ok(ch)
    }

    /// Single zero-delay ray with unit gain.
    pub fn unit_gain(wavelength_m: f64) -> Self {
        QdCommChannel::line_of_sight(wavelength_m / (4.0 * PI), wavelength_m)
            .expect("positive distance")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance_m > 0.0) || !(self.wavelength_m > 0.0) {
            return Err(Error::invalid("link distance and wavelength must be positive"));
        }
        if self.clusters.is_empty() {
            return Err(Error::invalid("channel needs at least one cluster"));
        }
        for c in &self.clusters {
            if c.power_loss < 0.0 || c.delay_s < 0.0 || c.rays.is_empty() {
                return Err(Error::invalid("invalid cluster"));
            }
            if c.rays.iter().any(|r| r.delay_s < c.delay_s) {
                return Err(Error::invalid("ray delay earlier than its cluster"));
            }
        }
        Ok(())
    }

    pub fn taps(&self) -> Vec<Tap> {
        let mut taps = Vec::new();
        for c in &self.clusters {
            let path = c.power_loss.sqrt() * self.wavelength_m
                / (4.0 * PI * (self.distance_m + c.delay_s * SPEED_OF_LIGHT));
            for r in &c.rays {
                taps.push(Tap {
                    gain: Complex64::from_polar(path * r.amplitude, r.phase),
                    delay_s: r.delay_s,
                });
            }
        }
        taps
    }
}

/// Statistics for [`sample_qd_channel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QdParams {
    pub clusters: usize,
    pub rays_per_cluster: usize,
    /// Mean of the exponential cluster-delay distribution.
    pub cluster_delay_mean_s: f64,
    /// Mean of the exponential intra-cluster ray excess delay.
    pub ray_delay_mean_s: f64,
    /// Ray amplitudes decay as `exp(-excess / ray_decay_s)`.
    pub ray_decay_s: f64,
    /// Reflection loss of the non-line-of-sight clusters.
    pub nlos_loss_db: f64,
}

impl Default for QdParams {
    fn default() -> Self {
        QdParams {
            clusters: 3,
            rays_per_cluster: 5,
            cluster_delay_mean_s: 10e-9,
            ray_delay_mean_s: 2e-9,
            ray_decay_s: 2e-9,
            nlos_loss_db: -10.0,
        }
    }
}

pub fn sample_qd_channel<R: Rng + ?Sized>(
    rng: &mut R,
    distance_m: f64,
    wavelength_m: f64,
    params: &QdParams,
) -> Result<QdCommChannel> {
    if !(distance_m > 0.0) {
        return Err(Error::invalid("link distance must be positive"));
    }
    if params.clusters == 0 || params.rays_per_cluster == 0 {
        return Err(Error::invalid("cluster and ray counts must be at least 1"));
    }
    let mut clusters = vec![QdCluster {
        power_loss: 1.0,
        delay_s: 0.0,
        rays: vec![QdRay {
            amplitude: 1.0,
            phase: 0.0,
            delay_s: 0.0,
        }],
    }];
    let cluster_delay = Exp::new(1.0 / params.cluster_delay_mean_s)
        .map_err(|e| Error::invalid(format!("cluster delay mean: {e}")))?;
    let ray_delay = Exp::new(1.0 / params.ray_delay_mean_s)
        .map_err(|e| Error::invalid(format!("ray delay mean: {e}")))?;
    let loss = 10f64.powf(params.nlos_loss_db / 10.0);
    for _ in 1..params.clusters {
        let tau: f64 = cluster_delay.sample(rng);
        let rays = (0..params.rays_per_cluster)
            .map(|_| {
                let excess: f64 = ray_delay.sample(rng);
                QdRay {
                    amplitude: (-excess / params.ray_decay_s).exp(),
                    phase: rng.gen_range(0.0..2.0 * PI),
                    delay_s: tau + excess,
                }
            })
            .collect();
        clusters.push(QdCluster {
            power_loss: loss,
            delay_s: tau,
            rays,
        });
    }
    Ok(QdCommChannel {
        clusters,
        distance_m,
        wavelength_m,
    })
}

/// Passes a frame through a link channel, chirp by chirp.
pub fn apply_comm(frame: &BasebandFrame, ch: &QdCommChannel) -> Result<Vec<Complex64>> {
    ch.validate()?;
    let cfg = &frame.cfg;
    let n = cfg.samples_per_chirp();
    let kernel = DelayKernel::new(cfg);
    let taps = ch.taps();
    let mut out = vec![Complex64::new(0.0, 0.0); frame.samples.len()];
    for (m, chirp) in frame.samples.chunks(n).enumerate() {
        let spec = kernel.spectrum(chirp);
        kernel.render(&spec, &taps, &mut out[m * n..(m + 1) * n]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    /// Absolute noise power per complex sample.
    Power(f64),
    /// Noise power set relative to a reference signal power.
    Snr { snr_db: f64, reference_power: f64 },
}

impl NoiseSpec {
    pub fn power(&self) -> f64 {
        match *self {
            NoiseSpec::Power(p) => p.max(0.0),
            NoiseSpec::Snr {
                snr_db,
                reference_power,
            } => reference_power / 10f64.powf(snr_db / 10.0),
        }
    }
}

/// Adds circularly-symmetric complex Gaussian noise in place.
pub fn add_noise<R: Rng + ?Sized>(signal: &mut [Complex64], spec: &NoiseSpec, rng: &mut R) {
    let p = spec.power();
    if p <= 0.0 {
        return;
    }
    let sigma = (p / 2.0).sqrt();
    for z in signal.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *z += Complex64::new(sigma * re, sigma * im);
    }
}

pub fn mean_power(signal: &[Complex64]) -> f64 {
    if signal.is_empty() {
        return 0.0;
    }
    signal.iter().map(|z| z.norm_sqr()).sum::<f64>() / signal.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{synth_frame, PhaseSequence};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame() -> BasebandFrame {
        synth_frame(&IsacConfig::table_i(0), &PhaseSequence::unmodulated(25)).unwrap()
    }

    #[test]
    fn no_scatterers_no_echo() {
        let out = apply_echo(&frame(), &[], &Vec3::zeros(), 0.0).unwrap();
        assert!(out.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn zero_range_is_an_error() {
        let s = [Scatterer::fixed(Vec3::new(1.0, 0.0, 1.0), 1.0)];
        let r = apply_echo(&frame(), &s, &Vec3::new(1.0, 0.0, 1.0), 0.0);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn integer_delay_is_a_circular_shift() {
        let cfg = IsacConfig::table_i(0);
        let k = DelayKernel::new(&cfg);
        let x: Vec<Complex64> = (0..100).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        let y = k.apply(&x, &[Tap { gain: Complex64::new(1.0, 0.0), delay_s: 3e-7 }]);
        for n in 0..100 {
            assert!((y[n] - x[(n + 97) % 100]).norm() < 1e-9);
        }
    }

    #[test]
    fn echo_is_linear_in_scatterers() {
        let a = vec![
            Scatterer::fixed(Vec3::new(3.0, 1.0, 1.2), 1.0),
            Scatterer::moving(
                Trajectory::Linear { start: Vec3::new(2.0, -0.5, 1.0), velocity: Vec3::new(0.7, 0.2, 0.0) },
                0.5,
            ),
        ];
        let b = vec![Scatterer::fixed(Vec3::new(4.0, -1.0, 0.5), 2.0)];
        let dev = Vec3::new(0.0, 0.0, 1.0);
        let f = frame();
        let ya = apply_echo(&f, &a, &dev, 0.01).unwrap();
        let yb = apply_echo(&f, &b, &dev, 0.01).unwrap();
        let all: Vec<_> = a.iter().chain(&b).cloned().collect();
        let yab = apply_echo(&f, &all, &dev, 0.01).unwrap();
        let scale = mean_power(&yab).sqrt();
        for i in 0..yab.len() {
            assert!((yab[i] - ya[i] - yb[i]).norm() <= 1e-12 * scale * 100.0);
        }
    }

    #[test]
    fn single_ray_channel_gain() {
        let lambda = SPEED_OF_LIGHT / 60e9;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = QdParams { clusters: 1, rays_per_cluster: 1, ..QdParams::default() };
        let ch = sample_qd_channel(&mut rng, 3.0, lambda, &p).unwrap();
        let taps = ch.taps();
        assert_eq!(taps.len(), 1);
        assert_eq!(taps[0].delay_s, 0.0);
        let expected = lambda / (4.0 * PI * 3.0);
        assert!((taps[0].gain.re - expected).abs() < 1e-15);
        assert!(((expected - 1.326e-4) / 1.326e-4).abs() < 2e-3);
        assert!(sample_qd_channel(&mut rng, 0.0, lambda, &p).is_err());
    }

    #[test]
    fn qd_sampling_is_deterministic_and_valid() {
        let lambda = 5e-3;
        let a = sample_qd_channel(&mut ChaCha8Rng::seed_from_u64(9), 4.0, lambda, &QdParams::default()).unwrap();
        let b = sample_qd_channel(&mut ChaCha8Rng::seed_from_u64(9), 4.0, lambda, &QdParams::default()).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.clusters.len(), 3);
        assert_eq!(a.clusters[0].rays.len(), 1);
        assert!(a.clusters[1..].iter().all(|c| c.rays.len() == 5));
    }

    #[test]
    fn comm_identity_and_cancellation() {
        let f = frame();
        let unit = QdCommChannel::unit_gain(f.cfg.wavelength());
        let out = apply_comm(&f, &unit).unwrap();
        for (a, b) in out.iter().zip(&f.samples) {
            assert!((a - b).norm() < 1e-12);
        }
        let mut cancel = unit.clone();
        cancel.clusters[0].rays.push(QdRay { amplitude: 1.0, phase: PI, delay_s: 0.0 });
        let out = apply_comm(&f, &cancel).unwrap();
        assert!(out.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn line_of_sight_scaling() {
        let f = frame();
        let lambda = 5e-3;
        let near = apply_comm(&f, &QdCommChannel::line_of_sight(3.0, lambda).unwrap()).unwrap();
        let far = apply_comm(&f, &QdCommChannel::line_of_sight(6.0, lambda).unwrap()).unwrap();
        let g = lambda / (4.0 * PI * 3.0);
        assert!((near[17] - f.samples[17] * g).norm() < 1e-15);
        let ratio = mean_power(&near) / mean_power(&far);
        assert!((ratio - 4.0).abs() < 4e-6);
    }

    #[test]
    fn noise_power_and_determinism() {
        let mut x = vec![Complex64::new(1.0, 0.0); 200_000];
        let orig = x.clone();
        add_noise(&mut x, &NoiseSpec::Power(0.0), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(x, orig);
        let spec = NoiseSpec::Snr { snr_db: 0.0, reference_power: 1.0 };
        add_noise(&mut x, &spec, &mut ChaCha8Rng::seed_from_u64(1));
        let var = x.iter().map(|z| (z - 1.0).norm_sqr()).sum::<f64>() / x.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
        let mut y = orig.clone();
        add_noise(&mut y, &spec, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(x, y);
    }
}
