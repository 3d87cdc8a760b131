//! The experiment commands behind the CLI. Every command is a pure function
//! of its configuration: outputs carry no timestamps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, LinkSetting};
use super::dataset_file::{digest, read_dataset, write_dataset};
use super::summary::{encode_metrics, final_accuracies, summary_row, BoxStats, SUMMARY_HEADER};
use crate::channel::{add_noise, apply_comm, apply_echo, QdCommChannel, Scatterer, Vec3};
use crate::comm::{channel_reference, post_correlation_noise};
use crate::error::{Error, Result};
use crate::motion::{generate_dataset, sample_subject, sense_device, MotionClass, SplitDataset};
use crate::neural::{read_checkpoint, write_checkpoint, Network, SplitPoint};
use crate::par;
use crate::seeding::{stream, Purpose};
use crate::sensing::{argmax, dechirp, range_profile};
use crate::vfeel::{
    build_isac_links, evaluate_model, hfeel_iteration_cost, train_scheme, vfeel_iteration_cost, AccountingMode,
    LinkMode, MetricRecord, Scheme, SplitNetwork, TrainedModel,
};
use crate::waveform::{nearest_symbol, qpsk_map, symbol_bits, synth_frame, PhaseSequence};

/// Human-readable outcome of a command.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Report {
    fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    pub fn text(&self) -> String {
        self.lines.join("\n")
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Hash of every setting that shapes the generated data.
fn dataset_fingerprint(cfg: &ExperimentConfig) -> String {
    let key = format!("{:?}|{:?}|{:?}|{:?}", cfg.isac, cfg.scenario, cfg.pipeline, cfg.dataset);
    hex::encode(Sha256::digest(key.as_bytes()))
}

fn dataset_paths(cfg: &ExperimentConfig) -> (PathBuf, PathBuf, PathBuf) {
    (
        cfg.out_dir.join("train.vfsd"),
        cfg.out_dir.join("test.vfsd"),
        cfg.out_dir.join("dataset.fingerprint"),
    )
}

pub fn generate(cfg: &ExperimentConfig) -> Result<SplitDataset> {
    let d = &cfg.dataset;
    let per_class = d.train_per_class + d.test_per_class;
    generate_dataset(
        &cfg.scenario,
        per_class,
        d.train_per_class as f64 / per_class as f64,
        &cfg.isac,
        &cfg.pipeline,
        d.seed,
        cfg.exec,
    )
}

/// Generates the dataset and writes `train.vfsd` / `test.vfsd`.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<(SplitDataset, Report)> {
    ensure_dir(&cfg.out_dir)?;
    let data = generate(cfg)?;
    let mut report = Report::default();
    let (train_path, test_path, fp_path) = dataset_paths(cfg);
    let mut hasher = Sha256::new();
    for (name, ds, path) in [("train", &data.train, &train_path), ("test", &data.test, &test_path)] {
        let bytes = write_dataset(path, ds)?;
        hasher.update(&bytes);
        report.files.push(path.clone());
        let counts: Vec<String> = MotionClass::ALL
            .iter()
            .zip(ds.label_histogram())
            .map(|(c, n)| format!("{}={n}", c.name()))
            .collect();
        report.line(format!("{name}: {} samples ({}) sha256 {}", ds.len(), counts.join(" "), digest(&bytes)));
    }
    report.write(fp_path, dataset_fingerprint(cfg).as_bytes())?;
    report.line(format!(
        "dataset: K={} {}x{} digest {}",
        data.train.views,
        data.train.height,
        data.train.width,
        hex::encode(hasher.finalize())
    ));
    Ok((data, report))
}

/// Reads the dataset from the output directory when it was generated from the
/// same settings, otherwise generates it.
pub fn load_or_generate(cfg: &ExperimentConfig) -> Result<(SplitDataset, Report)> {
    let (train_path, test_path, fp_path) = dataset_paths(cfg);
    if let Ok(fp) = fs::read_to_string(&fp_path) {
        if fp == dataset_fingerprint(cfg) && train_path.exists() && test_path.exists() {
            let data = SplitDataset {
                train: read_dataset(&train_path)?,
                test: read_dataset(&test_path)?,
            };
            let mut report = Report::default();
            report.line(format!("dataset: reusing {}", train_path.display()));
            return Ok((data, report));
        }
    }
    cmd_gen_data(cfg)
}

fn link_mode(cfg: &ExperimentConfig, seed: u64) -> Result<LinkMode> {
    Ok(match cfg.train.link {
        LinkSetting::Ideal => LinkMode::Ideal,
        LinkSetting::Isac { snr_db } => LinkMode::Isac(build_isac_links(&cfg.scenario.devices, &cfg.isac, snr_db, seed)?),
    })
}

fn checkpoint_path(cfg: &ExperimentConfig, scheme: &Scheme, seed: u64) -> PathBuf {
    cfg.out_dir.join("models").join(format!("{}-seed{seed}.vfck", scheme.name()))
}

fn metrics_path(cfg: &ExperimentConfig, scheme: &Scheme, seed: u64) -> PathBuf {
    cfg.out_dir
        .join("metrics")
        .join(scheme.name())
        .join(format!("seed{seed}.jsonl"))
}

fn save_model(path: &Path, scheme: &Scheme, model: &TrainedModel<f32>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let nets: Vec<&Network<f32>> = match model {
        TrainedModel::Split(s) => s.locals.iter().chain(std::iter::once(&s.server)).collect(),
        TrainedModel::Full(n) => vec![n],
    };
    write_checkpoint(&mut buf, &scheme.name(), &nets).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn load_model(path: &Path) -> Result<(Scheme, TrainedModel<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (tag, mut nets) = read_checkpoint(bytes.as_slice())?;
    let scheme = Scheme::parse(&tag)?;
    let model = match scheme {
        Scheme::Vfl { split, aggregator } => {
            let server = nets.pop().ok_or_else(|| Error::Format("empty checkpoint".into()))?;
            TrainedModel::Split(SplitNetwork::from_parts(nets, server, aggregator, split)?)
        }
        _ if nets.len() == 1 => TrainedModel::Full(nets.pop().unwrap()),
        _ => return Err(Error::Format(format!("checkpoint for {tag} holds {} networks", nets.len()))),
    };
    Ok((scheme, model))
}

/// Per-scheme results of a training run.
#[derive(Debug, Clone)]
pub struct SchemeResult {
    pub scheme: Scheme,
    pub histories: Vec<Vec<MetricRecord>>,
    pub stats: BoxStats,
}

/// Trains one scheme for every configured seed (seeds run as parallel jobs).
pub fn run_scheme(cfg: &ExperimentConfig, data: &SplitDataset, scheme: Scheme, report: &mut Report) -> Result<SchemeResult> {
    let arch = cfg.architecture();
    let outcomes = par::try_map_indexed(cfg.exec, cfg.seeds.len(), |i| {
        let seed = cfg.seeds[i];
        let tc = cfg.train_config(seed);
        train_scheme::<f32>(scheme, arch, &data.train, &data.test, &tc, link_mode(cfg, seed)?)
    })?;
    let mut histories = Vec::with_capacity(outcomes.len());
    for (seed, o) in cfg.seeds.iter().zip(outcomes) {
        report.write(metrics_path(cfg, &scheme, *seed), encode_metrics(&o.history)?.as_bytes())?;
        let path = checkpoint_path(cfg, &scheme, *seed);
        let bytes = save_model(&path, &scheme, &o.model)?;
        report.write(path, &bytes)?;
        histories.push(o.history);
    }
    let stats = BoxStats::of(&final_accuracies(&histories));
    let row = summary_row(&scheme.name(), &stats);
    report.write(
        cfg.out_dir.join("summary").join(format!("{}.csv", scheme.name())),
        format!("{SUMMARY_HEADER}\n{row}\n").as_bytes(),
    )?;
    report.line(row);
    Ok(SchemeResult {
        scheme,
        histories,
        stats,
    })
}

/// Trains the given schemes for every configured seed.
pub fn cmd_train(cfg: &ExperimentConfig, schemes: &[Scheme]) -> Result<(Vec<SchemeResult>, Report)> {
    let (data, mut report) = load_or_generate(cfg)?;
    report.line(SUMMARY_HEADER);
    let results = schemes
        .iter()
        .map(|&s| run_scheme(cfg, &data, s, &mut report))
        .collect::<Result<Vec<_>>>()?;
    Ok((results, report))
}

/// Dataset generation plus every configured scheme; also writes the combined
/// `summary.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<(Vec<SchemeResult>, Report)> {
    let (results, mut report) = cmd_train(cfg, &cfg.schemes)?;
    let mut table = format!("{SUMMARY_HEADER}\n");
    for r in &results {
        writeln!(table, "{}", summary_row(&r.scheme.name(), &r.stats)).unwrap();
    }
    report.write(cfg.out_dir.join("summary.csv"), table.as_bytes())?;
    Ok((results, report))
}

/// Re-evaluates a stored checkpoint on the dataset in the output directory.
pub fn cmd_eval(cfg: &ExperimentConfig, scheme: Scheme, seed: u64) -> Result<((f64, f64), Report)> {
    let (data, mut report) = load_or_generate(cfg)?;
    let path = checkpoint_path(cfg, &scheme, seed);
    let (stored, model) = load_model(&path)?;
    if stored != scheme {
        return Err(Error::Format(format!("{} holds scheme {}", path.display(), stored.name())));
    }
    let (loss, acc) = evaluate_model(scheme, &model, &data.train, &data.test, cfg.exec)?;
    report.line(format!(
        "{} seed {seed}: train_loss {loss:.6} test_accuracy {acc:.6}",
        scheme.name()
    ));
    Ok(((loss, acc), report))
}

/// One row of the overhead table.
#[derive(Debug, Clone, PartialEq)]
pub struct OverheadRow {
    pub scheme: String,
    pub l_params: usize,
    pub s_params: usize,
    pub flops_per_iteration: u64,
    pub seconds_two_way: f64,
    pub seconds_one_way: f64,
}

/// Parameter count charged to the ledger in the reproduction rows.
pub const REFERENCE_FULL_PARAMS: usize = 104_637;

/// Batch size of the reproduction rows.
pub const REFERENCE_BATCH: usize = 32;

pub fn overhead_rows(cfg: &ExperimentConfig) -> Result<Vec<OverheadRow>> {
    let arch = cfg.architecture();
    let k = cfg.devices();
    let batch = cfg.train.batch;
    let isac = &cfg.isac[0];
    let mut rows = Vec::new();
    for (split, label) in [(SplitPoint::A, "a"), (SplitPoint::B, "b")] {
        for (agg, agg_label) in [(crate::vfeel::Aggregator::Ewa, "ewa"), (crate::vfeel::Aggregator::Cat, "cat")] {
            let net = SplitNetwork::<f32>::new(arch, split, agg, k, 0)?;
            let d = net.dim;
            let flops = net.flops_per_sample();
            let cost = |mode| vfeel_iteration_cost(d, batch, k, mode, flops, isac);
            rows.push(OverheadRow {
                scheme: format!("vfl-{label}-{agg_label}"),
                l_params: net.locals[0].param_count(),
                s_params: net.server.param_count(),
                flops_per_iteration: cost(AccountingMode::TwoWay).flops,
                seconds_two_way: cost(AccountingMode::TwoWay).seconds,
                seconds_one_way: cost(AccountingMode::OneWay).seconds,
            });
        }
    }
    let full = crate::neural::full_network::<f32, _>(arch, 1, &mut stream(0, Purpose::Init, 0))?;
    let h = hfeel_iteration_cost(full.param_count(), batch, k, full.flops_per_sample(), isac);
    rows.push(OverheadRow {
        scheme: "hfeel".into(),
        l_params: full.param_count(),
        s_params: 0,
        flops_per_iteration: h.flops,
        seconds_two_way: h.seconds,
        seconds_one_way: h.seconds,
    });
    // Reproduction rows: reference dimensions and parameter count.
    for (name, d) in [("reference-vfl-a", 784), ("reference-vfl-b", 60)] {
        let cost = |mode| vfeel_iteration_cost(d, REFERENCE_BATCH, k, mode, 0, isac);
        rows.push(OverheadRow {
            scheme: name.into(),
            l_params: 0,
            s_params: 0,
            flops_per_iteration: 0,
            seconds_two_way: cost(AccountingMode::TwoWay).seconds,
            seconds_one_way: cost(AccountingMode::OneWay).seconds,
        });
    }
    let h = hfeel_iteration_cost(REFERENCE_FULL_PARAMS, REFERENCE_BATCH, k, 0, isac);
    rows.push(OverheadRow {
        scheme: "reference-hfeel".into(),
        l_params: REFERENCE_FULL_PARAMS,
        s_params: 0,
        flops_per_iteration: 0,
        seconds_two_way: h.seconds,
        seconds_one_way: h.seconds,
    });
    Ok(rows)
}

pub fn cmd_overhead(cfg: &ExperimentConfig) -> Result<(Vec<OverheadRow>, Report)> {
    let rows = overhead_rows(cfg)?;
    let mut csv = String::from("scheme,l_model_params,s_model_params,flops_per_iteration,seconds_two_way_32bit,seconds_one_way_34bit\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{:.6},{:.6}",
            r.scheme, r.l_params, r.s_params, r.flops_per_iteration, r.seconds_two_way, r.seconds_one_way
        )
        .unwrap();
    }
    let mut report = Report::default();
    ensure_dir(&cfg.out_dir)?;
    report.write(cfg.out_dir.join("overhead.csv"), csv.as_bytes())?;
    report.lines.extend(csv.lines().map(String::from));
    Ok((rows, report))
}

/// Results of the signal demo.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalDemo {
    pub peak_bin: usize,
    pub spectrogram_shape: (usize, usize),
    pub bit_errors: usize,
    pub bits: usize,
    pub snr_db: f64,
}

impl SignalDemo {
    pub fn ber(&self) -> f64 {
        self.bit_errors as f64 / self.bits as f64
    }
}

/// Writes plot data: a static 30 m target's fast-time spectrum, an adult
/// walking spectrogram, and QPSK matched-filter outputs at `snr_db`.
pub fn cmd_signal_demo(cfg: &ExperimentConfig, seed: u64, snr_db: f64, bits: usize) -> Result<(SignalDemo, Report)> {
    let mut report = Report::default();
    let dir = cfg.out_dir.join("signal-demo");
    let isac = cfg.isac[0];
    let mut rng = stream(seed, Purpose::Demo, 0);

    let device = Vec3::new(0.0, 0.0, 0.0);
    let target = Scatterer::fixed(Vec3::new(30.0, 0.0, 0.0), 1.0);
    let phases = PhaseSequence::unmodulated(isac.chirps_per_frame);
    let frame = synth_frame(&isac, &phases)?;
    let rx = apply_echo(&frame, &[target], &device, 0.0)?;
    let y = dechirp(&rx, &phases, &isac)?;
    let profile = range_profile(y.0.column(0));
    let peak_bin = argmax(&profile);
    let mut csv = String::from("bin,power\n");
    for (i, p) in profile.iter().enumerate() {
        writeln!(csv, "{i},{p:.9e}").unwrap();
    }
    report.write(dir.join("fast_time_spectrum.csv"), csv.as_bytes())?;
    report.line(format!("static 30 m target: fast-time peak at bin {peak_bin}"));

    let subject = sample_subject(&mut rng, MotionClass::AdultWalking, &cfg.scenario);
    let capture = sense_device(&cfg.scenario, &subject, 0, &isac, &cfg.pipeline, &mut rng)?;
    let s = &capture.spectrogram;
    let mut csv = String::new();
    for row in s.data.chunks(s.width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(csv, "{}", cells.join(",")).unwrap();
    }
    report.write(dir.join("spectrogram.csv"), csv.as_bytes())?;
    report.line(format!("adult walking spectrogram: {}x{}", s.height, s.width));

    let channel = QdCommChannel::line_of_sight(5.0, isac.wavelength())?;
    let noise = post_correlation_noise(&channel, &isac, snr_db)?;
    let matched = channel_reference(&channel, &isac)?;
    let per_frame = 2 * isac.chirps_per_frame;
    let n_bits = bits.div_ceil(per_frame).max(1) * per_frame;
    let payload: Vec<bool> = (0..n_bits).map(|_| rng.gen()).collect();
    let symbols = qpsk_map(&payload)?;
    let mut csv = String::from("re,im,symbol\n");
    let mut errors = 0;
    for (f, frame_phases) in symbols.frames(isac.chirps_per_frame).into_iter().enumerate() {
        let frame = synth_frame(&isac, &frame_phases)?;
        let mut rx = apply_comm(&frame, &channel)?;
        add_noise(&mut rx, &noise, &mut rng);
        for (m, chirp) in rx.chunks_exact(matched.len()).enumerate() {
            let corr: Complex64 = chirp.iter().zip(&matched).map(|(y, c)| y * c.conj()).sum();
            let sym = nearest_symbol(corr);
            let decided = symbol_bits(sym);
            let at = (f * isac.chirps_per_frame + m) * 2;
            errors += (decided[0] != payload[at]) as usize + (decided[1] != payload[at + 1]) as usize;
            if f < 40 {
                writeln!(csv, "{:.6e},{:.6e},{sym}", corr.re, corr.im).unwrap();
            }
        }
    }
    report.write(dir.join("constellation.csv"), csv.as_bytes())?;
    let demo = SignalDemo {
        peak_bin,
        spectrogram_shape: (s.height, s.width),
        bit_errors: errors,
        bits: n_bits,
        snr_db,
    };
    report.line(format!(
        "QPSK at {snr_db} dB: {errors} errors in {n_bits} bits (BER {:.3e})",
        demo.ber()
    ));
    Ok((demo, report))
}
