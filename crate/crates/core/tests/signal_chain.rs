//! Radar and modem behaviour of the ISAC waveform, checked against
//! closed-form physics and naive reference computations.

mod common;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use vfeel_core::channel::*;
use vfeel_core::comm::*;
use vfeel_core::sensing::*;
use vfeel_core::waveform::*;

use common::{echo_cube, naive_dft, phase_progression_hz, rng};

const C: f64 = 299_792_458.0;

fn cfg() -> IsacConfig {
    IsacConfig::table_i(0)
}

#[test]
fn static_target_beats_at_two_range_bins() {
    let cfg = cfg();
    let target = Scatterer::fixed(Vec3::new(30.0, 0.0, 0.0), 1.0);
    let cube = echo_cube(&cfg, &[target], 1, 1);
    // Beat frequency 2 R mu / c against a bin spacing of F_s / N_c.
    let expected = 2.0 * 30.0 * cfg.slope() / C / (cfg.sampling_rate_hz / cfg.samples_per_chirp() as f64);
    assert_eq!(expected.round(), 2.0);
    for m in 0..cube.matrix.cols {
        let col = cube.matrix.column(m);
        assert_eq!(argmax(&range_profile(col)), 2);
        // Independent check: all naive-DFT energy sits in one bin of |f| = 2.
        let spec: Vec<f64> = naive_dft(col).iter().map(|z| z.norm_sqr()).collect();
        let total: f64 = spec.iter().sum();
        let tone = spec[2].max(spec[98]);
        assert!(tone / total > 0.99, "column {m}: {}", tone / total);
    }
}

#[test]
fn radial_motion_produces_the_doppler_tone() {
    let cfg = cfg();
    let mover = Scatterer::moving(
        Trajectory::Linear {
            start: Vec3::new(5.0, 0.0, 0.0),
            velocity: Vec3::new(1.0, 0.0, 0.0),
        },
        1.0,
    );
    let cube = echo_cube(&cfg, &[mover], 40, 2);
    let series = slow_time_series(&cube);
    let f_d = 2.0 * 1.0 * cfg.carrier_hz / C;
    assert!((f_d - 400.0).abs() < 1.0);
    let measured = phase_progression_hz(&series, cube.slow_time_rate_hz);
    assert!((measured.abs() - f_d).abs() < 0.01 * f_d, "{measured}");
    let stft = stft_power(&series, 256, 128, 256, cube.slow_time_rate_hz).unwrap();
    for t in 0..stft.frames {
        let k = argmax(stft.frame(t));
        assert!((stft.frequency(k).abs() - f_d).abs() <= stft.bin_hz, "frame {t}: {}", stft.frequency(k));
    }
}

#[test]
fn rank_one_filter_suppresses_static_scene() {
    let cfg = cfg();
    let clutter = [
        Scatterer::fixed(Vec3::new(3.0, 1.0, 0.5), 1.0),
        Scatterer::fixed(Vec3::new(-2.0, 4.0, 1.0), 0.5),
        Scatterer::fixed(Vec3::new(1.0, -6.0, 2.0), 0.8),
    ];
    let cube = echo_cube(&cfg, &clutter, 8, 3);
    let filtered = svd_clutter_filter(&cube, 1).unwrap();
    let ratio_db = 10.0 * (filtered.matrix.frobenius_sq() / cube.matrix.frobenius_sq()).log10();
    assert!(ratio_db <= -20.0, "{ratio_db} dB");
}

#[test]
fn rank_one_filter_keeps_a_mover_against_clutter() {
    let cfg = cfg();
    let scene = [
        Scatterer::fixed(Vec3::new(3.0, 1.0, 0.5), 1.0),
        Scatterer::moving(
            Trajectory::Linear {
                start: Vec3::new(40.0, 0.0, 0.0),
                velocity: Vec3::new(1.0, 0.0, 0.0),
            },
            1.0,
        ),
    ];
    let cube = echo_cube(&cfg, &scene, 40, 4);
    let filtered = svd_clutter_filter(&cube, 1).unwrap();
    let series = slow_time_series(&filtered);
    let f = phase_progression_hz(&series, filtered.slow_time_rate_hz);
    assert!((f.abs() - 400.0).abs() < 10.0, "{f}");
}

/// Upper-tail normal probability, Q(1), from standard tables.
const Q_OF_ONE: f64 = 0.158_655_253_9;

#[test]
fn bit_error_rate_follows_qpsk_theory_at_zero_db() {
    let cfg = cfg();
    let ch = QdCommChannel::line_of_sight(5.0, cfg.wavelength()).unwrap();
    let link = IsacLink {
        noise: post_correlation_noise(&ch, &cfg, 0.0).unwrap(),
        ..IsacLink::noiseless(cfg, ch)
    };
    let mut r = rng(5);
    let bits: Vec<bool> = (0..200_000).map(|_| r.gen()).collect();
    let rx = link.transmit(&bits, &mut r).unwrap();
    let ber = bits.iter().zip(&rx).filter(|(a, b)| a != b).count() as f64 / bits.len() as f64;
    // Gray-mapped QPSK: BER = Q(sqrt(Es/N0)) with the symbol SNR after correlation.
    assert!((ber - Q_OF_ONE).abs() < 0.05 * Q_OF_ONE, "{ber}");
}

#[test]
fn fifteen_db_link_is_nearly_error_free() {
    let cfg = cfg();
    let mut r = rng(6);
    let ch = sample_qd_channel(&mut r, 5.0, cfg.wavelength(), &QdParams::default()).unwrap();
    let link = IsacLink {
        noise: post_correlation_noise(&ch, &cfg, 15.0).unwrap(),
        ..IsacLink::noiseless(cfg, ch)
    };
    let bits: Vec<bool> = (0..1_000_000).map(|_| r.gen()).collect();
    let rx = link.transmit(&bits, &mut r).unwrap();
    let errors = bits.iter().zip(&rx).filter(|(a, b)| a != b).count();
    assert!((errors as f64) < 1e-4 * bits.len() as f64, "{errors} errors");
}

#[test]
fn one_frame_carries_bits_and_range() {
    let cfg = cfg();
    let mut r = rng(7);
    let bits: Vec<bool> = (0..2 * cfg.chirps_per_frame).map(|_| r.gen()).collect();
    let phases = qpsk_map(&bits).unwrap();
    let frame = synth_frame(&cfg, &phases).unwrap();
    let ch = QdCommChannel::line_of_sight(4.0, cfg.wavelength()).unwrap();
    let comm_rx = apply_comm(&frame, &ch).unwrap();
    assert_eq!(demodulate(&comm_rx, &ch, &cfg).unwrap(), bits);
    let target = Scatterer::fixed(Vec3::new(0.0, 30.0, 0.0), 1.0);
    let echo = apply_echo(&frame, &[target], &Vec3::zeros(), 0.0).unwrap();
    let m = dechirp(&echo, &phases, &cfg).unwrap();
    for c in 0..m.0.cols {
        assert_eq!(argmax(&range_profile(m.0.column(c))), 2);
    }
}

#[test]
fn echo_amplitude_follows_two_way_path_loss() {
    let cfg = cfg();
    let near = echo_cube(&cfg, &[Scatterer::fixed(Vec3::new(2.0, 0.0, 0.0), 1.0)], 1, 8);
    let far = echo_cube(&cfg, &[Scatterer::fixed(Vec3::new(4.0, 0.0, 0.0), 1.0)], 1, 8);
    // Radar range equation: received power falls with R^4.
    let ratio = near.matrix.frobenius_sq() / far.matrix.frobenius_sq();
    assert!((ratio - 16.0).abs() < 1e-6 * 16.0, "{ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn noiseless_link_is_bit_exact(bits in prop::collection::vec(any::<bool>(), 0..600), seed in any::<u64>(), dist in 1.0f64..20.0) {
        let cfg = cfg();
        let mut r = rng(seed);
        let ch = sample_qd_channel(&mut r, dist, cfg.wavelength(), &QdParams::default()).unwrap();
        let link = IsacLink::noiseless(cfg, ch);
        prop_assert_eq!(link.transmit(&bits, &mut r).unwrap(), bits);
    }

    #[test]
    fn codec_is_lossless(v in prop::collection::vec(any::<f32>(), 0..64), framed in any::<bool>()) {
        let codec = VectorCodec::new(if framed { 34 } else { 32 }).unwrap();
        let bits = encode_vector(&v, codec).unwrap();
        prop_assert_eq!(bits.len() as u64, codec.bits_for(v.len()));
        let back = decode_vector(&bits, codec).unwrap();
        prop_assert_eq!(back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), v.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn qpsk_decisions_invert_the_map(pairs in prop::collection::vec(any::<(bool, bool)>(), 0..50), rot in -0.7f64..0.7) {
        let bits: Vec<bool> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        let phases = qpsk_map(&bits).unwrap();
        // Rotations below pi/4 never cross a decision boundary.
        let decided: Vec<bool> = phases
            .as_slice()
            .iter()
            .flat_map(|&p| symbol_bits(nearest_symbol(Complex64::from_polar(2.0, p + rot))))
            .collect();
        prop_assert_eq!(decided, bits);
    }

    #[test]
    fn svd_filter_removes_any_rank_one_cube(
        u in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8),
        v in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 12),
    ) {
        let u: Vec<Complex64> = u.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
        let v: Vec<Complex64> = v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
        let data: Vec<Complex64> = v.iter().flat_map(|vc| u.iter().map(move |ur| ur * vc.conj())).collect();
        let cube = SensingCube {
            matrix: ComplexMatrix::from_columns(8, data).unwrap(),
            frames: 1,
            slow_time_rate_hz: 1.0,
        };
        let before = cube.matrix.frobenius_sq();
        let after = svd_clutter_filter(&cube, 1).unwrap().matrix.frobenius_sq();
        prop_assert!(after <= 1e-18 * before.max(1e-300) || before < 1e-12);
    }

    #[test]
    fn noise_is_seeded(seed in any::<u64>(), power in 0.0f64..4.0) {
        let base = vec![Complex64::new(1.0, -1.0); 64];
        let (mut a, mut b) = (base.clone(), base.clone());
        add_noise(&mut a, &NoiseSpec::Power(power), &mut rng(seed));
        add_noise(&mut b, &NoiseSpec::Power(power), &mut rng(seed));
        prop_assert_eq!(a, b);
    }
}
