#![allow(dead_code)]

pub mod fd;
pub mod monolithic;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfeel_core::motion::{Dataset, Sample};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random labelled multi-view dataset with a weak class signal.
pub fn synthetic_dataset(n: usize, views: usize, h: usize, w: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let samples = (0..n)
        .map(|i| {
            let label = (i % 5) as u8;
            Sample {
                label,
                views: (0..views)
                    .map(|v| {
                        (0..h * w)
                            .map(|p| {
                                let signal = if (p + v) % 5 == label as usize { 1.5 } else { 0.0 };
                                signal + r.gen_range(-1.0f32..1.0)
                            })
                            .collect()
                    })
                    .collect(),
            }
        })
        .collect();
    Dataset {
        views,
        height: h,
        width: w,
        classes: 5,
        samples,
    }
}

/// `max |a - b| / max |b|`.
pub fn normwise_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

use num_complex::Complex64;
use vfeel_core::channel::{apply_echo, Scatterer, Vec3};
use vfeel_core::sensing::{concat_frames, dechirp, SensingCube};
use vfeel_core::waveform::{qpsk_map, synth_frame, IsacConfig};

/// Naive O(n^2) DFT, `X[k] = sum x[n] exp(-j 2 pi k n / N)`.
pub fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, v)| v * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64))
                .sum()
        })
        .collect()
}

/// Transmits `frames` random-QPSK frames, echoes them off `scatterers` at a
/// device in the origin and dechirps every frame.
pub fn echo_cube(cfg: &IsacConfig, scatterers: &[Scatterer], frames: usize, seed: u64) -> SensingCube {
    let mut r = rng(seed);
    let device = Vec3::zeros();
    let per_frame = 2 * cfg.chirps_per_frame;
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let bits: Vec<bool> = (0..per_frame).map(|_| r.gen()).collect();
        let phases = qpsk_map(&bits).unwrap();
        let frame = synth_frame(cfg, &phases).unwrap();
        let t0 = f as f64 * cfg.frame_duration();
        let rx = apply_echo(&frame, scatterers, &device, t0).unwrap();
        out.push(dechirp(&rx, &phases, cfg).unwrap());
    }
    concat_frames(&out, cfg).unwrap()
}

/// Frequency of a complex tone from its mean sample-to-sample rotation.
pub fn phase_progression_hz(series: &[Complex64], rate_hz: f64) -> f64 {
    let acc: Complex64 = series.windows(2).map(|w| w[1] * w[0].conj()).sum();
    acc.arg() * rate_hz / (2.0 * std::f64::consts::PI)
}

use vfeel_core::motion::{sample_subject, sense_device, MotionClass, Scenario, SensingPipeline, Subject};
use vfeel_core::sensing::{slow_time_series as series_of, stft_power, svd_clutter_filter};

/// Filtered STFT power of `subject` seen by `device`, as `(|f|, power)` pairs
/// inside the configured Doppler band.
pub fn doppler_power(scenario: &Scenario, subject: &Subject, device: usize, pipeline: &SensingPipeline, seed: u64) -> Vec<(f64, f64)> {
    let cfg = IsacConfig::table_i(device);
    let cap = sense_device(scenario, subject, device, &cfg, pipeline, &mut rng(seed)).unwrap();
    let filtered = svd_clutter_filter(&cap.cube, pipeline.clutter_rank).unwrap();
    let p = &pipeline.stft;
    let stft = stft_power(&series_of(&filtered), p.window, p.hop, p.fft_size, filtered.slow_time_rate_hz).unwrap();
    let band = stft.band_bins(p.doppler_band_hz);
    (0..stft.frames)
        .flat_map(|t| band.clone().map(move |k| (t, k)))
        .map(|(t, k)| (stft.frequency(k).abs(), stft.frame(t)[k]))
        .collect()
}

pub fn centroid_hz(power: &[(f64, f64)]) -> f64 {
    let total: f64 = power.iter().map(|p| p.1).sum();
    power.iter().map(|(f, p)| f * p).sum::<f64>() / total
}

/// Adult walking from (3, -0.2) towards device index 1 at (3, 1.5): along
/// that device's line of sight and across the line of sight of device 0.
pub fn aspect_subject(scenario: &Scenario) -> Subject {
    let mut s = sample_subject(&mut rng(80), MotionClass::AdultWalking, scenario);
    s.start = Vec3::new(3.0, -0.2, 0.0);
    s.heading = std::f64::consts::FRAC_PI_2;
    s
}

/// Mean absolute ridge frequency of a spectrogram: per time column, the
/// centre frequency of the strongest row.
pub fn ridge_centroid_hz(s: &vfeel_core::sensing::Spectrogram) -> f64 {
    let band = s.params.doppler_band_hz;
    let row_hz = 2.0 * band / s.height as f64;
    let total: f64 = (0..s.width)
        .map(|c| {
            let r = (0..s.height).max_by(|&a, &b| s.get(a, c).total_cmp(&s.get(b, c))).unwrap();
            (-band + (r as f64 + 0.5) * row_hz).abs()
        })
        .sum();
    total / s.width as f64
}

/// Ridge centroids of the aspect subject's spectrograms at devices 0 and 1
/// in the default scene.
pub fn aspect_centroids(pipeline: &SensingPipeline) -> (f64, f64) {
    let scenario = Scenario::default();
    let subject = aspect_subject(&scenario);
    let at = |k: usize| {
        let cap = sense_device(&scenario, &subject, k, &IsacConfig::table_i(k), pipeline, &mut rng(k as u64)).unwrap();
        ridge_centroid_hz(&cap.spectrogram)
    };
    (at(0), at(1))
}
