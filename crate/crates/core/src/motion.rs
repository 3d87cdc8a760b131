//! Multi-view human-motion scenes.
//!
//! A subject is five point scatterers (torso, two legs, two arms) moving under
//! a simple kinematic gait model. Every device in the scenario senses the same
//! subject over the same interval through the full sensing receiver, giving
//! one spectrogram per device.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{add_noise, echo_tap, DelayKernel, NoiseSpec, Tap, Vec3};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::seeding::{self, Purpose};
use crate::sensing::{
    dechirp_into, slow_time_series, stft_spectrogram, svd_clutter_filter, ComplexMatrix, SensingCube, Spectrogram,
    StftParams,
};
use crate::waveform::{reference_chirp, IsacConfig, QPSK_PHASES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionClass {
    ChildWalking,
    ChildPacing,
    AdultWalking,
    AdultPacing,
    Standing,
}

impl MotionClass {
    pub const ALL: [MotionClass; 5] = [
        MotionClass::ChildWalking,
        MotionClass::ChildPacing,
        MotionClass::AdultWalking,
        MotionClass::AdultPacing,
        MotionClass::Standing,
    ];

    pub fn label(self) -> u8 {
        MotionClass::ALL.iter().position(|&c| c == self).unwrap() as u8
    }

    pub fn from_label(label: u8) -> Option<Self> {
        MotionClass::ALL.get(label as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionClass::ChildWalking => "child-walking",
            MotionClass::ChildPacing => "child-pacing",
            MotionClass::AdultWalking => "adult-walking",
            MotionClass::AdultPacing => "adult-pacing",
            MotionClass::Standing => "standing",
        }
    }

    /// Height interval in metres.
    pub fn height_range(self) -> (f64, f64) {
        match self {
            MotionClass::ChildWalking | MotionClass::ChildPacing => (0.9, 1.2),
            _ => (1.6, 1.9),
        }
    }

    /// Base speed for a subject of height `h`.
    pub fn speed(self, h: f64) -> f64 {
        match self {
            MotionClass::Standing => 0.0,
            MotionClass::ChildWalking | MotionClass::AdultWalking => 0.5 * h,
            MotionClass::ChildPacing | MotionClass::AdultPacing => 0.25 * h,
        }
    }

    pub fn is_pacing(self) -> bool {
        matches!(self, MotionClass::ChildPacing | MotionClass::AdultPacing)
    }
}

/// Constants of the kinematic body model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyModel {
    pub leg_amplitude: f64,
    pub arm_amplitude: f64,
    pub turn_period_s: f64,
    pub sway_amplitude_m: f64,
    pub sway_hz: f64,
    pub torso_z: f64,
    pub leg_z: f64,
    pub arm_z: f64,
    pub leg_spacing_m: f64,
    pub arm_spacing_m: f64,
    pub torso_reflectivity: f64,
    pub leg_reflectivity: f64,
    pub arm_reflectivity: f64,
}

impl Default for BodyModel {
    fn default() -> Self {
        BodyModel {
            leg_amplitude: 1.5,
            arm_amplitude: 0.8,
            turn_period_s: 2.0,
            sway_amplitude_m: 0.01,
            sway_hz: 0.3,
            torso_z: 0.55,
            leg_z: 0.25,
            arm_z: 0.45,
            leg_spacing_m: 0.1,
            arm_spacing_m: 0.2,
            torso_reflectivity: 1.0,
            leg_reflectivity: 0.5,
            arm_reflectivity: 0.3,
        }
    }
}

/// Room, device placement and spawn area. The room spans
/// `x in [0, L]`, `y in [-W/2, W/2]`, `z in [0, H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub room: [f64; 3],
    pub devices: Vec<Vec3>,
    pub spawn_size: [f64; 2],
    /// Static clutter: position and reflectivity.
    pub clutter: Vec<(Vec3, f64)>,
    pub body: BodyModel,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            room: [4.5, 3.0, 3.0],
            devices: vec![
                Vec3::new(0.0, 0.0, 1.0),
                Vec3::new(3.0, 1.5, 1.0),
                Vec3::new(4.5, -1.0, 1.0),
            ],
            spawn_size: [3.0, 2.0],
            clutter: vec![
                (Vec3::new(4.3, 1.3, 0.4), 0.2),
                (Vec3::new(0.3, -1.3, 0.8), 0.2),
                (Vec3::new(2.2, 1.4, 2.6), 0.2),
            ],
            body: BodyModel::default(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::invalid("scenario needs at least one device"));
        }
        for (i, a) in self.devices.iter().enumerate() {
            for b in &self.devices[i + 1..] {
                if (a - b).norm() < 1e-9 {
                    return Err(Error::invalid("device positions must be distinct"));
                }
            }
        }
        if self.spawn_size[0] > self.room[0] || self.spawn_size[1] > self.room[1] {
            return Err(Error::invalid("spawn rectangle exceeds the room footprint"));
        }
        Ok(())
    }

    pub fn spawn_center(&self) -> Vec3 {
        Vec3::new(self.room[0] / 2.0, 0.0, 0.0)
    }

    pub fn contains_xy(&self, p: &Vec3) -> bool {
        p.x >= 0.0 && p.x <= self.room[0] && p.y.abs() <= self.room[1] / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub class: MotionClass,
    pub height: f64,
    pub speed: f64,
    /// Heading in radians, measured from +x.
    pub heading: f64,
    /// Floor position of the torso at `t = 0`.
    pub start: Vec3,
    /// Offset into the pacing turn cycle at `t = 0`.
    pub turn_offset_s: f64,
    pub gait_phase: f64,
    pub sway_phase: f64,
    pub body: BodyModel,
}

pub fn sample_subject<R: Rng + ?Sized>(rng: &mut R, class: MotionClass, scenario: &Scenario) -> Subject {
    let (lo, hi) = class.height_range();
    let height = rng.gen_range(lo..=hi);
    let mut subject = Subject {
        class,
        height,
        speed: class.speed(height),
        heading: rng.gen_range(-PI..=PI),
        start: Vec3::zeros(),
        turn_offset_s: rng.gen_range(0.0..scenario.body.turn_period_s),
        gait_phase: rng.gen_range(0.0..2.0 * PI),
        sway_phase: rng.gen_range(0.0..2.0 * PI),
        body: scenario.body,
    };
    subject.start = sample_start(rng, scenario);
    subject
}

fn sample_start<R: Rng + ?Sized>(rng: &mut R, scenario: &Scenario) -> Vec3 {
    let c = scenario.spawn_center();
    let [w, d] = scenario.spawn_size;
    Vec3::new(
        c.x + rng.gen_range(-w / 2.0..=w / 2.0),
        c.y + rng.gen_range(-d / 2.0..=d / 2.0),
        0.0,
    )
}

impl Subject {
    pub fn gait_hz(&self) -> f64 {
        if self.speed > 0.0 {
            self.speed / (0.5 * self.height)
        } else {
            0.0
        }
    }

    fn heading_unit(&self) -> Vec3 {
        Vec3::new(self.heading.cos(), self.heading.sin(), 0.0)
    }

    /// Walking direction sign at time `t`: pacing reverses every turn period.
    pub fn direction(&self, t: f64) -> f64 {
        if !self.class.is_pacing() {
            return 1.0;
        }
        let cycle = ((self.turn_offset_s + t) / self.body.turn_period_s).floor() as i64;
        if cycle % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Signed path length along the heading covered by time `t`.
    pub fn path_length(&self, t: f64) -> f64 {
        if !self.class.is_pacing() {
            return self.speed * t;
        }
        let period = self.body.turn_period_s;
        let tri = |x: f64| {
            let r = x.rem_euclid(2.0 * period);
            if r < period {
                r
            } else {
                2.0 * period - r
            }
        };
        self.speed * (tri(self.turn_offset_s + t) - tri(self.turn_offset_s))
    }

    /// Floor position of the torso.
    pub fn torso_floor(&self, t: f64) -> Vec3 {
        let u = self.heading_unit();
        let mut p = self.start + u * self.path_length(t);
        if self.class == MotionClass::Standing {
            let b = &self.body;
            p += u * (b.sway_amplitude_m * (2.0 * PI * b.sway_hz * t + self.sway_phase).sin());
        }
        p
    }

    /// Scatterer positions and reflectivities at time `t`: torso, legs, arms.
    pub fn scatterers(&self, t: f64) -> [(Vec3, f64); 5] {
        let b = &self.body;
        let u = self.heading_unit();
        let side = Vec3::new(-u.y, u.x, 0.0);
        let torso = self.torso_floor(t);
        let f = self.gait_hz();
        // Limb swing displacement whose derivative is amp * sin(2 pi f t + phase).
        let swing = |amp_factor: f64, phase: f64| -> f64 {
            if f <= 0.0 {
                return 0.0;
            }
            let w = 2.0 * PI * f;
            let amp = amp_factor * self.speed;
            amp / w * ((self.gait_phase + phase).cos() - (w * t + self.gait_phase + phase).cos())
        };
        let h = self.height;
        let at = |floor: Vec3, z: f64| Vec3::new(floor.x, floor.y, z);
        [
            (at(torso, b.torso_z * h), b.torso_reflectivity),
            (at(torso + u * swing(b.leg_amplitude, 0.0) + side * b.leg_spacing_m, b.leg_z * h), b.leg_reflectivity),
            (at(torso + u * swing(b.leg_amplitude, PI) - side * b.leg_spacing_m, b.leg_z * h), b.leg_reflectivity),
            (at(torso + u * swing(b.arm_amplitude, PI) + side * b.arm_spacing_m, b.arm_z * h), b.arm_reflectivity),
            (at(torso + u * swing(b.arm_amplitude, 0.0) - side * b.arm_spacing_m, b.arm_z * h), b.arm_reflectivity),
        ]
    }

    fn stays_inside(&self, scenario: &Scenario, duration: f64) -> bool {
        let steps = 100;
        (0..=steps).all(|i| scenario.contains_xy(&self.torso_floor(duration * i as f64 / steps as f64)))
    }
}

/// Sensing receiver settings used for dataset generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingPipeline {
    pub spec_time_s: f64,
    /// Keep one chirp out of this many along slow time.
    pub slow_time_decimation: usize,
    pub snr_db: f64,
    pub clutter_rank: usize,
    pub stft: StftParams,
}

impl SensingPipeline {
    pub fn full() -> Self {
        SensingPipeline {
            spec_time_s: 0.5,
            slow_time_decimation: 1,
            snr_db: 20.0,
            clutter_rank: 1,
            stft: StftParams::full(),
        }
    }

    pub fn reduced() -> Self {
        SensingPipeline {
            slow_time_decimation: 10,
            stft: StftParams::reduced(),
            ..SensingPipeline::full()
        }
    }

    /// `N_f = T_spec / T_frame`, which must be an integer.
    pub fn frames(&self, cfg: &IsacConfig) -> Result<usize> {
        let nf = self.spec_time_s / cfg.frame_duration();
        if (nf - nf.round()).abs() > 1e-6 * nf.max(1.0) || nf.round() < 1.0 {
            return Err(Error::invalid(format!(
                "sensing time {} s is not an integer number of {} s frames",
                self.spec_time_s,
                cfg.frame_duration()
            )));
        }
        Ok(nf.round() as usize)
    }

    pub fn validate(&self, cfg: &IsacConfig) -> Result<()> {
        self.frames(cfg)?;
        if self.slow_time_decimation == 0 {
            return Err(Error::invalid("slow-time decimation must be at least 1"));
        }
        Ok(())
    }
}

/// Echo cube of one device before and after the receiver chain.
pub struct DeviceCapture {
    pub cube: SensingCube,
    pub spectrogram: Spectrogram,
}

/// Simulates one device observing `subject` and runs the sensing receiver.
pub fn sense_device<R: Rng + ?Sized>(
    scenario: &Scenario,
    subject: &Subject,
    device: usize,
    cfg: &IsacConfig,
    pipeline: &SensingPipeline,
    rng: &mut R,
) -> Result<DeviceCapture> {
    let dev = scenario
        .devices
        .get(device)
        .ok_or_else(|| Error::invalid(format!("no device {device}")))?;
    let n_frames = pipeline.frames(cfg)?;
    let n = cfg.samples_per_chirp();
    let total = n_frames * cfg.chirps_per_frame;
    let stride = pipeline.slow_time_decimation.max(1);
    let kept: Vec<usize> = (0..total).step_by(stride).collect();
    let lambda = cfg.wavelength();
    let kernel = DelayKernel::new(cfg);
    let reference = reference_chirp(cfg)?;
    let unit_spectrum = kernel.spectrum(&reference);
    let amp = cfg.transmit_power_w.sqrt();

    let clutter_taps = scenario
        .clutter
        .iter()
        .map(|(p, rho)| echo_tap(p, *rho, dev, lambda))
        .collect::<Result<Vec<_>>>()?;
    let mut clutter = vec![Complex64::new(0.0, 0.0); n];
    kernel.render(&unit_spectrum, &clutter_taps, &mut clutter);

    let phases: Vec<f64> = kept.iter().map(|_| QPSK_PHASES[rng.gen_range(0..4)]).collect();
    let mut rx = vec![Complex64::new(0.0, 0.0); kept.len() * n];
    let mut body = vec![Complex64::new(0.0, 0.0); n];
    let mut taps: Vec<Tap> = Vec::with_capacity(5);
    let mut subject_energy = 0.0;
    for (j, &c) in kept.iter().enumerate() {
        let t = c as f64 * cfg.chirp_duration_s;
        let tx = Complex64::from_polar(amp, phases[j]);
        taps.clear();
        for (p, rho) in subject.scatterers(t) {
            let mut tap = echo_tap(&p, rho, dev, lambda)?;
            tap.gain *= tx;
            taps.push(tap);
        }
        kernel.render(&unit_spectrum, &taps, &mut body);
        subject_energy += body.iter().map(|z| z.norm_sqr()).sum::<f64>();
        for ((o, b), k) in rx[j * n..(j + 1) * n].iter_mut().zip(&body).zip(&clutter) {
            *o = b + k * tx;
        }
    }
    let subject_power = subject_energy / rx.len() as f64;
    add_noise(
        &mut rx,
        &NoiseSpec::Snr {
            snr_db: pipeline.snr_db,
            reference_power: subject_power,
        },
        rng,
    );

    let mut data = Vec::with_capacity(rx.len());
    for (chirp, &phi) in rx.chunks_exact(n).zip(&phases) {
        dechirp_into(chirp, &reference, phi, &mut data);
    }
    let cube = SensingCube {
        matrix: ComplexMatrix {
            rows: n,
            cols: kept.len(),
            data,
        },
        frames: n_frames,
        slow_time_rate_hz: 1.0 / (stride as f64 * cfg.chirp_duration_s),
    };
    let filtered = svd_clutter_filter(&cube, pipeline.clutter_rank)?;
    let series = slow_time_series(&filtered);
    let spectrogram = stft_spectrogram(&series, cube.slow_time_rate_hz, &pipeline.stft)?;
    Ok(DeviceCapture { cube, spectrogram })
}

/// One labelled multi-view sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: u8,
    /// One standardized spectrogram per device, row-major.
    pub views: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for s in &self.samples {
            h[s.label as usize] += 1;
        }
        h
    }

    /// The same samples restricted to one device's view.
    pub fn single_view(&self, k: usize) -> Dataset {
        Dataset {
            views: 1,
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    label: s.label,
                    views: vec![s.views[k].clone()],
                })
                .collect(),
            ..self.clone()
        }
    }
}

/// Generates a sample for `class`; the subject is re-spawned if it would
/// leave the room during the sensing interval.
pub fn generate_sample(
    scenario: &Scenario,
    class: MotionClass,
    cfgs: &[IsacConfig],
    pipeline: &SensingPipeline,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let subject = sample_subject(rng, class, scenario);
    let views = generate_views(scenario, subject, cfgs, pipeline, rng)?;
    Ok(Sample {
        label: class.label(),
        views: views.into_iter().map(|s| s.data).collect(),
    })
}

/// All device spectrograms for a given subject.
pub fn generate_views(
    scenario: &Scenario,
    mut subject: Subject,
    cfgs: &[IsacConfig],
    pipeline: &SensingPipeline,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Spectrogram>> {
    if cfgs.len() != scenario.devices.len() {
        return Err(Error::invalid(format!(
            "{} device configs for {} devices",
            cfgs.len(),
            scenario.devices.len()
        )));
    }
    const RETRIES: usize = 100;
    let mut tries = 0;
    while !subject.stays_inside(scenario, pipeline.spec_time_s) {
        tries += 1;
        if tries > RETRIES {
            return Err(Error::invalid("subject keeps leaving the room"));
        }
        subject.start = sample_start(rng, scenario);
    }
    let seeds: Vec<u64> = cfgs.iter().map(|_| rng.gen()).collect();
    cfgs.iter()
        .enumerate()
        .map(|(k, cfg)| {
            let mut dev_rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seeds[k]);
            sense_device(scenario, &subject, k, cfg, pipeline, &mut dev_rng).map(|c| c.spectrogram)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

/// Balanced dataset with a seeded per-class train/test split. Sample `i`
/// (class-major order) draws from stream `(seed, Sample, i)`.
pub fn generate_dataset(
    scenario: &Scenario,
    per_class: usize,
    train_fraction: f64,
    cfgs: &[IsacConfig],
    pipeline: &SensingPipeline,
    seed: u64,
    exec: Execution,
) -> Result<SplitDataset> {
    if per_class == 0 {
        return Err(Error::invalid("per-class count must be at least 1"));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::invalid("train fraction must lie in [0, 1]"));
    }
    scenario.validate()?;
    for cfg in cfgs {
        cfg.validate()?;
        pipeline.validate(cfg)?;
    }
    let classes = MotionClass::ALL.len();
    let total = classes * per_class;
    let samples = par::try_map_indexed(exec, total, |i| {
        let class = MotionClass::ALL[i / per_class];
        let mut rng = seeding::stream(seed, Purpose::Sample, i as u64);
        generate_sample(scenario, class, cfgs, pipeline, &mut rng)
    })?;
    let n_train = (per_class as f64 * train_fraction).round() as usize;
    let mut split_rng = seeding::stream(seed, Purpose::Split, 0);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for chunk in samples.chunks(per_class) {
        let mut idx: Vec<usize> = (0..per_class).collect();
        idx.shuffle(&mut split_rng);
        for (j, &i) in idx.iter().enumerate() {
            if j < n_train {
                train.push(chunk[i].clone());
            } else {
                test.push(chunk[i].clone());
            }
        }
    }
    train.shuffle(&mut split_rng);
    test.shuffle(&mut split_rng);
    let shape = |samples| Dataset {
        views: cfgs.len(),
        height: pipeline.stft.height,
        width: pipeline.stft.width,
        classes,
        samples,
    };
    Ok(SplitDataset {
        train: shape(train),
        test: shape(test),
    })
}
