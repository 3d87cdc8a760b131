//! Experiment configuration: a strict TOML document merged onto profile
//! defaults. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::channel::Vec3;
use crate::error::{Error, Result};
use crate::motion::{Scenario, SensingPipeline};
use crate::neural::Architecture;
use crate::vfeel::{AccountingMode, Scheme, TrainConfig};
use crate::waveform::IsacConfig;
use crate::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Full,
    Reduced,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "reduced" => Ok(Profile::Reduced),
            _ => Err(Error::Config(format!("unknown profile '{s}' (valid: full, reduced)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Reduced => "reduced",
        }
    }
}

/// Transport used for intermediate vectors during V-FEEL training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkSetting {
    Ideal,
    /// Simulated ISAC links; `None` is noiseless.
    Isac { snr_db: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSettings {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub batch: usize,
    pub lr_server: f64,
    pub lr_local: f64,
    pub iterations: usize,
    pub eval_every: usize,
    pub accounting: AccountingMode,
    pub link: LinkSetting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// One waveform configuration per device.
    pub isac: Vec<IsacConfig>,
    pub scenario: Scenario,
    pub pipeline: SensingPipeline,
    pub dataset: DatasetSettings,
    pub train: TrainSettings,
    pub schemes: Vec<Scheme>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub exec: Execution,
}

impl ExperimentConfig {
    pub fn defaults(profile: Profile) -> Self {
        let scenario = Scenario::default();
        let (pipeline, dataset, iterations) = match profile {
            Profile::Full => (
                SensingPipeline::full(),
                DatasetSettings {
                    train_per_class: 200,
                    test_per_class: 50,
                    seed: 2024,
                },
                2000,
            ),
            Profile::Reduced => (
                SensingPipeline::reduced(),
                DatasetSettings {
                    train_per_class: 60,
                    test_per_class: 20,
                    seed: 2024,
                },
                500,
            ),
        };
        ExperimentConfig {
            profile,
            isac: (0..scenario.devices.len()).map(IsacConfig::table_i).collect(),
            scenario,
            pipeline,
            dataset,
            train: TrainSettings {
                batch: 32,
                lr_server: 0.01,
                lr_local: 0.01,
                iterations,
                eval_every: 50,
                accounting: AccountingMode::TwoWay,
                link: LinkSetting::Ideal,
            },
            schemes: crate::vfeel::SCHEME_NAMES.iter().map(|n| Scheme::parse(n).unwrap()).collect(),
            seeds: (1..=12).collect(),
            out_dir: PathBuf::from("out"),
            exec: Execution::default(),
        }
    }

    pub fn devices(&self) -> usize {
        self.scenario.devices.len()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            height: self.pipeline.stft.height,
            width: self.pipeline.stft.width,
            ..Architecture::default()
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch: self.train.batch,
            lr_server: self.train.lr_server,
            lr_local: self.train.lr_local,
            iterations: self.train.iterations,
            eval_every: self.train.eval_every,
            seed,
            accounting: self.train.accounting,
            isac: self.isac[0],
            exec: self.exec,
        }
    }

    /// Cross-field checks: integer `N_c` and `N_f`, geometry, counts.
    pub fn validate(&self) -> Result<()> {
        let named = |what: &str, e: Error| Error::Config(format!("{what}: {e}"));
        if self.isac.len() != self.devices() {
            return Err(Error::Config("one carrier per device is required".into()));
        }
        for cfg in &self.isac {
            cfg.validate().map_err(|e| named("isac", e))?;
            self.pipeline.validate(cfg).map_err(|e| named("sensing", e))?;
        }
        self.scenario.validate().map_err(|e| named("scenario", e))?;
        self.architecture().validate().map_err(|e| named("sensing", e))?;
        if self.dataset.train_per_class == 0 {
            return Err(Error::Config("dataset.train_per_class must be at least 1".into()));
        }
        self.train_config(0).validate().map_err(|e| named("train", e))?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        for s in &self.schemes {
            if let Scheme::OnDevice(k) = s {
                if *k >= self.devices() {
                    return Err(Error::Config(format!("scheme {} needs device {}", s.name(), k + 1)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    profile: Option<String>,
    seed: Option<u64>,
    seeds: Option<Vec<u64>>,
    schemes: Option<Vec<String>>,
    out_dir: Option<PathBuf>,
    sequential: Option<bool>,
    #[serde(default)]
    isac: RawIsac,
    #[serde(default)]
    scenario: RawScenario,
    #[serde(default)]
    sensing: RawSensing,
    #[serde(default)]
    dataset: RawDataset,
    #[serde(default)]
    train: RawTrain,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIsac {
    bandwidth_hz: Option<f64>,
    carriers_hz: Option<Vec<f64>>,
    chirp_duration_s: Option<f64>,
    chirps_per_frame: Option<usize>,
    sampling_rate_hz: Option<f64>,
    transmit_power_w: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    room_m: Option<[f64; 3]>,
    devices: Option<Vec<[f64; 3]>>,
    spawn_size_m: Option<[f64; 2]>,
    /// `[x, y, z, reflectivity]` per static scatterer.
    clutter: Option<Vec<[f64; 4]>>,
    turn_period_s: Option<f64>,
    leg_amplitude: Option<f64>,
    arm_amplitude: Option<f64>,
    torso_reflectivity: Option<f64>,
    leg_reflectivity: Option<f64>,
    arm_reflectivity: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSensing {
    spec_time_s: Option<f64>,
    slow_time_decimation: Option<usize>,
    snr_db: Option<f64>,
    clutter_rank: Option<usize>,
    stft_window: Option<usize>,
    stft_hop: Option<usize>,
    stft_fft: Option<usize>,
    doppler_band_hz: Option<f64>,
    floor_db: Option<f64>,
    height: Option<usize>,
    width: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    train_per_class: Option<usize>,
    test_per_class: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    batch: Option<usize>,
    lr_server: Option<f64>,
    lr_local: Option<f64>,
    iterations: Option<usize>,
    eval_every: Option<usize>,
    accounting: Option<String>,
    link: Option<String>,
    link_snr_db: Option<f64>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Parses configuration text. `profile_override` wins over the document's
/// `profile` key.
pub fn parse_config(text: &str, profile_override: Option<Profile>) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    let profile = match (profile_override, &raw.profile) {
        (Some(p), _) => p,
        (None, Some(name)) => Profile::parse(name)?,
        (None, None) => Profile::Full,
    };
    let mut c = ExperimentConfig::defaults(profile);

    let i = raw.isac;
    let carriers = match i.carriers_hz {
        Some(list) => list,
        None => c.isac.iter().map(|cfg| cfg.carrier_hz).collect(),
    };
    let base = c.isac[0];
    c.isac = carriers
        .into_iter()
        .map(|carrier_hz| IsacConfig {
            bandwidth_hz: i.bandwidth_hz.unwrap_or(base.bandwidth_hz),
            carrier_hz,
            chirp_duration_s: i.chirp_duration_s.unwrap_or(base.chirp_duration_s),
            chirps_per_frame: i.chirps_per_frame.unwrap_or(base.chirps_per_frame),
            sampling_rate_hz: i.sampling_rate_hz.unwrap_or(base.sampling_rate_hz),
            transmit_power_w: i.transmit_power_w.unwrap_or(base.transmit_power_w),
        })
        .collect();

    let s = raw.scenario;
    set(&mut c.scenario.room, s.room_m);
    set(&mut c.scenario.spawn_size, s.spawn_size_m);
    if let Some(devs) = s.devices {
        c.scenario.devices = devs.iter().map(|d| Vec3::new(d[0], d[1], d[2])).collect();
    }
    if let Some(cl) = s.clutter {
        c.scenario.clutter = cl.iter().map(|v| (Vec3::new(v[0], v[1], v[2]), v[3])).collect();
    }
    let b = &mut c.scenario.body;
    set(&mut b.turn_period_s, s.turn_period_s);
    set(&mut b.leg_amplitude, s.leg_amplitude);
    set(&mut b.arm_amplitude, s.arm_amplitude);
    set(&mut b.torso_reflectivity, s.torso_reflectivity);
    set(&mut b.leg_reflectivity, s.leg_reflectivity);
    set(&mut b.arm_reflectivity, s.arm_reflectivity);

    let z = raw.sensing;
    let p = &mut c.pipeline;
    set(&mut p.spec_time_s, z.spec_time_s);
    set(&mut p.slow_time_decimation, z.slow_time_decimation);
    set(&mut p.snr_db, z.snr_db);
    set(&mut p.clutter_rank, z.clutter_rank);
    set(&mut p.stft.window, z.stft_window);
    set(&mut p.stft.hop, z.stft_hop);
    set(&mut p.stft.fft_size, z.stft_fft);
    set(&mut p.stft.doppler_band_hz, z.doppler_band_hz);
    set(&mut p.stft.floor_db, z.floor_db);
    set(&mut p.stft.height, z.height);
    set(&mut p.stft.width, z.width);

    let d = raw.dataset;
    set(&mut c.dataset.train_per_class, d.train_per_class);
    set(&mut c.dataset.test_per_class, d.test_per_class);
    set(&mut c.dataset.seed, d.seed);

    let t = raw.train;
    set(&mut c.train.batch, t.batch);
    set(&mut c.train.lr_server, t.lr_server);
    set(&mut c.train.lr_local, t.lr_local);
    set(&mut c.train.iterations, t.iterations);
    set(&mut c.train.eval_every, t.eval_every);
    if let Some(a) = t.accounting {
        c.train.accounting = match a.as_str() {
            "two-way" => AccountingMode::TwoWay,
            "one-way" => AccountingMode::OneWay,
            _ => return Err(Error::Config(format!("train.accounting '{a}' (valid: two-way, one-way)"))),
        };
    }
    c.train.link = match t.link.as_deref() {
        None | Some("ideal") => {
            if t.link_snr_db.is_some() {
                return Err(Error::Config("train.link_snr_db requires link = \"isac\"".into()));
            }
            LinkSetting::Ideal
        }
        Some("isac") => LinkSetting::Isac { snr_db: t.link_snr_db },
        Some(other) => return Err(Error::Config(format!("train.link '{other}' (valid: ideal, isac)"))),
    };

    match (raw.seed, raw.seeds) {
        (Some(_), Some(_)) => return Err(Error::Config("set either 'seed' or 'seeds', not both".into())),
        (Some(s), None) => c.seeds = vec![s],
        (None, Some(list)) => c.seeds = list,
        (None, None) => {}
    }
    match raw.schemes {
        Some(names) => {
            c.schemes = names.iter().map(|n| Scheme::parse(n)).collect::<Result<_>>().map_err(|e| Error::Config(e.to_string()))?;
        }
        // The default list has one on-device baseline per configured device.
        None => {
            let k = c.devices();
            c.schemes.retain(|s| !matches!(s, Scheme::OnDevice(i) if *i >= k));
        }
    }
    set(&mut c.out_dir, raw.out_dir);
    if raw.sequential == Some(true) {
        c.exec = Execution::Sequential;
    }
    c.validate()?;
    Ok(c)
}

pub fn load_config(path: &Path, profile_override: Option<Profile>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, profile_override).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
