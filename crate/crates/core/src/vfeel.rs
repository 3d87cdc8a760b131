//! Vertical federated edge learning over the simulated ISAC links, plus the
//! on-device, horizontal-federated and centralized baselines.
//!
//! Device `K - 1` is the coordinator: it holds the labels, the aggregator and
//! the S-model. All gradients are gradients of the batch-mean loss.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_qd_channel, QdParams, Vec3};
use crate::comm::{post_correlation_noise, transfer_time, IsacLink, VectorCodec};
use crate::error::{Error, Result};
use crate::motion::Dataset;
use crate::neural::{
    argmax_rows, cross_entropy, full_network, l_model, s_model, Architecture, Cache, Network, ParamVector,
    Scalar, SplitPoint, Tensor,
};
use crate::par::{self, Execution};
use crate::seeding::{stream, Purpose};
use crate::waveform::IsacConfig;

/// How the coordinator combines the K intermediate vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aggregator {
    /// Element-wise average.
    Ewa,
    /// Concatenation in device order.
    Cat,
}

/// Training schemes compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Vfl { split: SplitPoint, aggregator: Aggregator },
    /// Full network trained on view `k` (0-based) only.
    OnDevice(usize),
    HFeel,
    Centralized,
}

pub const SCHEME_NAMES: [&str; 9] = [
    "vfl-a-ewa",
    "vfl-a-cat",
    "vfl-b-ewa",
    "vfl-b-cat",
    "ed-1",
    "ed-2",
    "ed-3",
    "hfeel",
    "cl",
];

impl Scheme {
    pub fn parse(name: &str) -> Result<Self> {
        let vfl = |split, aggregator| Scheme::Vfl { split, aggregator };
        Ok(match name {
            "vfl-a-ewa" => vfl(SplitPoint::A, Aggregator::Ewa),
            "vfl-a-cat" => vfl(SplitPoint::A, Aggregator::Cat),
            "vfl-b-ewa" => vfl(SplitPoint::B, Aggregator::Ewa),
            "vfl-b-cat" => vfl(SplitPoint::B, Aggregator::Cat),
            "hfeel" => Scheme::HFeel,
            "cl" => Scheme::Centralized,
            _ => match name.strip_prefix("ed-").and_then(|k| k.parse::<usize>().ok()) {
                Some(k) if k >= 1 => Scheme::OnDevice(k - 1),
                _ => {
                    return Err(Error::invalid(format!(
                        "unknown scheme '{name}' (valid: {})",
                        SCHEME_NAMES.join(", ")
                    )))
                }
            },
        })
    }

    pub fn name(&self) -> String {
        match *self {
            Scheme::Vfl { split, aggregator } => format!(
                "vfl-{}-{}",
                split.name().to_lowercase(),
                match aggregator {
                    Aggregator::Ewa => "ewa",
                    Aggregator::Cat => "cat",
                }
            ),
            Scheme::OnDevice(k) => format!("ed-{}", k + 1),
            Scheme::HFeel => "hfeel".into(),
            Scheme::Centralized => "cl".into(),
        }
    }
}

/// Ledger accounting convention for V-FEEL exchanges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccountingMode {
    /// 32-bit payloads, uplink vectors plus downlink gradients.
    TwoWay,
    /// 34-bit framed payloads, uplink vectors only.
    OneWay,
}

impl AccountingMode {
    pub fn codec(self) -> VectorCodec {
        match self {
            AccountingMode::TwoWay => VectorCodec::PAYLOAD,
            AccountingMode::OneWay => VectorCodec::FRAMED,
        }
    }
}

/// How intermediate vectors and gradients travel between devices.
#[derive(Debug, Clone)]
pub enum LinkMode {
    /// Direct copy.
    Ideal,
    /// Bit-level transfer through one simulated link per device; the
    /// coordinator's entry is never used.
    Isac(Vec<IsacLink>),
}

/// Builds one link per device towards the coordinator, with QD channels
/// drawn from the `Link` seed stream. `snr_db = None` gives noiseless links.
pub fn build_isac_links(
    devices: &[Vec3],
    cfgs: &[IsacConfig],
    snr_db: Option<f64>,
    seed: u64,
) -> Result<Vec<IsacLink>> {
    if devices.is_empty() || devices.len() != cfgs.len() {
        return Err(Error::invalid("need one ISAC config per device"));
    }
    let coord = devices[devices.len() - 1];
    let mut links = Vec::with_capacity(devices.len());
    for (k, (pos, cfg)) in devices.iter().zip(cfgs).enumerate() {
        let distance = (pos - coord).norm().max(1.0);
        let mut rng = stream(seed, Purpose::Link, k as u64);
        let channel = sample_qd_channel(&mut rng, distance, cfg.wavelength(), &QdParams::default())?;
        let mut link = IsacLink::noiseless(*cfg, channel);
        if let Some(snr) = snr_db {
            link.noise = post_correlation_noise(&link.channel, cfg, snr)?;
        }
        links.push(link);
    }
    Ok(links)
}

/// Mutable transport state for one training run.
#[derive(Debug, Clone)]
pub struct Transport {
    mode: LinkMode,
    rng: ChaCha8Rng,
}

impl Transport {
    pub fn new(mode: LinkMode, seed: u64) -> Self {
        Transport {
            mode,
            rng: stream(seed, Purpose::Link, u64::MAX >> 24),
        }
    }

    pub fn ideal() -> Self {
        Self::new(LinkMode::Ideal, 0)
    }

    /// Carries `data` over device `k`'s link. Simulated links transport f32
    /// words, so f64 values are rounded to single precision on the way.
    pub fn carry<T: Scalar>(&mut self, k: usize, data: Vec<T>) -> Result<Vec<T>> {
        match &self.mode {
            LinkMode::Ideal => Ok(data),
            LinkMode::Isac(links) => {
                let link = links
                    .get(k)
                    .ok_or_else(|| Error::invalid(format!("no link for device {k}")))?;
                let words: Vec<f32> = data.iter().map(|v| v.to_f32()).collect();
                let rx = link.send_vector(&words, VectorCodec::PAYLOAD, &mut self.rng)?;
                Ok(rx.into_iter().map(T::from_f32).collect())
            }
        }
    }
}

/// K L-models, an aggregator and the coordinator's S-model.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitNetwork<T> {
    pub locals: Vec<Network<T>>,
    pub server: Network<T>,
    pub aggregator: Aggregator,
    pub split: SplitPoint,
    pub dim: usize,
}

impl<T: Scalar> SplitNetwork<T> {
    /// Independently He-initialized L-models (init streams `0..K`) and an
    /// S-model (init stream `K`).
    pub fn new(arch: Architecture, split: SplitPoint, aggregator: Aggregator, k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("a split network needs at least one device"));
        }
        let locals = (0..k)
            .map(|i| l_model(arch, split, &mut stream(seed, Purpose::Init, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let width = match aggregator {
            Aggregator::Ewa => 1,
            Aggregator::Cat => k,
        };
        let server = s_model(arch, split, width, &mut stream(seed, Purpose::Init, k as u64))?;
        Self::from_parts(locals, server, aggregator, split)
    }

    pub fn from_parts(
        locals: Vec<Network<T>>,
        server: Network<T>,
        aggregator: Aggregator,
        split: SplitPoint,
    ) -> Result<Self> {
        let dim = locals.first().map(|l| l.output_len()).unwrap_or(0);
        if locals.is_empty() || locals.iter().any(|l| l.output_len() != dim) {
            return Err(Error::shape("all L-models must emit vectors of one dimension"));
        }
        let expected = match aggregator {
            Aggregator::Ewa => dim,
            Aggregator::Cat => dim * locals.len(),
        };
        if server.input_shape() != [expected] || !server.ends_with_softmax() {
            return Err(Error::shape(format!(
                "S-model must take a {expected}-vector and end with softmax"
            )));
        }
        Ok(SplitNetwork {
            locals,
            server,
            aggregator,
            split,
            dim,
        })
    }

    pub fn devices(&self) -> usize {
        self.locals.len()
    }

    pub fn coordinator(&self) -> usize {
        self.locals.len() - 1
    }

    pub fn classes(&self) -> usize {
        self.server.output_len()
    }

    /// `(C_L * K + C_S)` forward FLOPs per sample.
    pub fn flops_per_sample(&self) -> u64 {
        self.locals.iter().map(|l| l.flops_per_sample()).sum::<u64>() + self.server.flops_per_sample()
    }
}

/// Everything the backward pass needs from [`vfeel_forward`].
#[derive(Debug, Clone)]
pub struct SplitCaches<T> {
    locals: Vec<Cache<T>>,
    server: Cache<T>,
    pub batch: usize,
}

#[derive(Debug, Clone)]
pub struct SplitForward<T> {
    /// Mean cross-entropy; NaN when no labels were supplied.
    pub loss: T,
    /// Class probabilities, batch x classes.
    pub probs: Vec<T>,
    pub predictions: Vec<usize>,
    pub caches: SplitCaches<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitGradients<T> {
    pub locals: Vec<ParamVector<T>>,
    pub server: ParamVector<T>,
    /// Intermediate-vector gradients delivered to each device, batch x d.
    pub intermediate: Vec<Vec<T>>,
}

fn aggregate<T: Scalar>(agg: Aggregator, vectors: &[Vec<T>], batch: usize, d: usize) -> Vec<T> {
    let k = vectors.len();
    match agg {
        Aggregator::Ewa => {
            let inv = T::ONE / T::from_f64(k as f64);
            let mut a = vectors[0].clone();
            for v in &vectors[1..] {
                for (x, &y) in a.iter_mut().zip(v) {
                    *x += y;
                }
            }
            for x in &mut a {
                *x *= inv;
            }
            a
        }
        Aggregator::Cat => {
            let mut a = Vec::with_capacity(batch * d * k);
            for b in 0..batch {
                for v in vectors {
                    a.extend_from_slice(&v[b * d..(b + 1) * d]);
                }
            }
            a
        }
    }
}

fn disaggregate<T: Scalar>(agg: Aggregator, grad: &[T], k: usize, batch: usize, d: usize) -> Vec<Vec<T>> {
    match agg {
        Aggregator::Ewa => {
            let inv = T::ONE / T::from_f64(k as f64);
            let g: Vec<T> = grad.iter().map(|&x| x * inv).collect();
            vec![g; k]
        }
        Aggregator::Cat => (0..k)
            .map(|dev| {
                let mut g = Vec::with_capacity(batch * d);
                for b in 0..batch {
                    let row = &grad[b * d * k..(b + 1) * d * k];
                    g.extend_from_slice(&row[dev * d..(dev + 1) * d]);
                }
                g
            })
            .collect(),
    }
}

/// Split forward pass. `views[k]` is device k's input batch (`B x 1 x H x W`).
pub fn vfeel_forward<T: Scalar>(
    net: &SplitNetwork<T>,
    views: &[Tensor<T>],
    labels: Option<&[u8]>,
    transport: &mut Transport,
    exec: Execution,
) -> Result<SplitForward<T>> {
    let k = net.devices();
    if views.len() != k {
        return Err(Error::invalid(format!("expected {k} views, got {}", views.len())));
    }
    let batch = views[0].batch();
    if views.iter().any(|v| v.batch() != batch) {
        return Err(Error::shape("views disagree on batch size"));
    }
    let outs = par::try_map_indexed(exec, k, |i| net.locals[i].forward(&views[i]))?;
    let coord = net.coordinator();
    let mut vectors = Vec::with_capacity(k);
    let mut local_caches = Vec::with_capacity(k);
    for (i, (v, cache)) in outs.into_iter().enumerate() {
        let v = if i == coord { v.data } else { transport.carry(i, v.data)? };
        vectors.push(v);
        local_caches.push(cache);
    }
    let a = aggregate(net.aggregator, &vectors, batch, net.dim);
    let width = net.server.input_shape()[0];
    let (probs, server_cache) = net.server.forward(&Tensor::new(vec![batch, width], a)?)?;
    let classes = net.classes();
    let loss = match labels {
        Some(l) => cross_entropy(&probs.data, l, classes)?,
        None => T::from_f64(f64::NAN),
    };
    Ok(SplitForward {
        loss,
        predictions: argmax_rows(&probs.data, classes),
        probs: probs.data,
        caches: SplitCaches {
            locals: local_caches,
            server: server_cache,
            batch,
        },
    })
}

/// Split backward pass: the coordinator backpropagates the S-model and the
/// aggregator, sends each device its intermediate gradient, and every device
/// backpropagates its L-model.
pub fn vfeel_backward<T: Scalar>(
    net: &SplitNetwork<T>,
    caches: &SplitCaches<T>,
    labels: &[u8],
    transport: &mut Transport,
    exec: Execution,
) -> Result<SplitGradients<T>> {
    let (_, sg) = net.server.backward_with_labels(&caches.server, labels, true)?;
    let grad_a = sg.input.expect("input gradient requested");
    let k = net.devices();
    let coord = net.coordinator();
    let mut intermediate = disaggregate(net.aggregator, &grad_a.data, k, caches.batch, net.dim);
    for (i, g) in intermediate.iter_mut().enumerate() {
        if i != coord {
            *g = transport.carry(i, std::mem::take(g))?;
        }
    }
    let locals = par::try_map_indexed(exec, k, |i| {
        let mut shape = vec![caches.batch];
        shape.extend_from_slice(net.locals[i].output_shape());
        let up = Tensor::new(shape, intermediate[i].clone())?;
        net.locals[i].backward(&caches.locals[i], &up, false).map(|g| g.params)
    })?;
    Ok(SplitGradients {
        locals,
        server: sg.params,
        intermediate,
    })
}

/// Applies one SGD step to every sub-model.
pub fn apply_split_step<T: Scalar>(net: &mut SplitNetwork<T>, grads: &SplitGradients<T>, lr_s: T, lr_l: T) -> Result<()> {
    net.server.apply_sgd(&grads.server, lr_s)?;
    for (l, g) in net.locals.iter_mut().zip(&grads.locals) {
        l.apply_sgd(g, lr_l)?;
    }
    Ok(())
}

/// Predicted class per sample.
pub fn infer<T: Scalar>(
    net: &SplitNetwork<T>,
    views: &[Tensor<T>],
    transport: &mut Transport,
    exec: Execution,
) -> Result<Vec<usize>> {
    Ok(vfeel_forward(net, views, None, transport, exec)?.predictions)
}

/// Per-iteration ledger entry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    /// Critical-path transfer time over one device link.
    pub seconds: f64,
    pub flops: u64,
}

impl LedgerEntry {
    pub fn bits(&self) -> u64 {
        self.uplink_bits + self.downlink_bits
    }
}

/// Communication and computation totals of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    pub entries: Vec<LedgerEntry>,
    pub total: LedgerEntry,
}

impl CommLedger {
    pub fn record(&mut self, e: LedgerEntry) {
        self.total.uplink_bits += e.uplink_bits;
        self.total.downlink_bits += e.downlink_bits;
        self.total.seconds += e.seconds;
        self.total.flops += e.flops;
        self.entries.push(e);
    }
}

/// V-FEEL cost of one iteration: every non-coordinator device exchanges a
/// `batch x d` block; devices transmit in parallel on dedicated channels.
pub fn vfeel_iteration_cost(
    d: usize,
    batch: usize,
    devices: usize,
    mode: AccountingMode,
    flops_per_sample: u64,
    cfg: &IsacConfig,
) -> LedgerEntry {
    let per_link = mode.codec().bits_for(d * batch);
    let senders = devices.saturating_sub(1) as u64;
    let (up, down) = match mode {
        AccountingMode::TwoWay => (per_link, per_link),
        AccountingMode::OneWay => (per_link, 0),
    };
    LedgerEntry {
        uplink_bits: up * senders,
        downlink_bits: down * senders,
        seconds: if senders == 0 { 0.0 } else { transfer_time(up + down, cfg) },
        flops: 3 * batch as u64 * flops_per_sample,
    }
}

/// H-FEEL cost of one iteration: every device uploads and downloads a
/// 32-bit copy of all parameters.
pub fn hfeel_iteration_cost(
    params: usize,
    batch: usize,
    devices: usize,
    flops_per_sample: u64,
    cfg: &IsacConfig,
) -> LedgerEntry {
    let per_link = 32 * params as u64;
    LedgerEntry {
        uplink_bits: per_link * devices as u64,
        downlink_bits: per_link * devices as u64,
        seconds: transfer_time(2 * per_link, cfg),
        flops: 3 * batch as u64 * flops_per_sample * devices as u64,
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr_server: f64,
    pub lr_local: f64,
    pub iterations: usize,
    /// Evaluate every this many iterations (0: only at the start and end).
    pub eval_every: usize,
    pub seed: u64,
    pub accounting: AccountingMode,
    /// Rate reference for the ledger.
    pub isac: IsacConfig,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 32,
            lr_server: 0.01,
            lr_local: 0.01,
            iterations: 500,
            eval_every: 50,
            seed: 0,
            accounting: AccountingMode::TwoWay,
            isac: IsacConfig::table_i(0),
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("batch must be >= 1"));
        }
        if !(self.lr_server > 0.0 && self.lr_local > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        self.isac.validate()
    }

    fn is_eval_point(&self, it: usize) -> bool {
        it == 0 || it == self.iterations || (self.eval_every > 0 && it % self.eval_every == 0)
    }
}

/// One row of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub scheme: String,
    pub seed: u64,
    pub iteration: usize,
    /// Mean cross-entropy over the whole training set.
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub cumulative_bits: u64,
    pub cumulative_seconds: f64,
    pub cumulative_flops: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub history: Vec<MetricRecord>,
    pub ledger: CommLedger,
}

impl<M> TrainOutcome<M> {
    pub fn final_accuracy(&self) -> f64 {
        self.history.last().map(|r| r.test_accuracy).unwrap_or(f64::NAN)
    }
}

/// Epoch-wise shuffled mini-batches; a trailing partial batch is dropped.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("empty training set"));
        }
        let mut s = BatchSampler {
            order: (0..n).collect(),
            pos: n,
            batch: batch.min(n),
            rng: stream(seed, Purpose::Batches, 0),
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.reshuffle();
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

/// `B x C x H x W` tensor holding the listed views of the indexed samples.
pub fn gather<T: Scalar>(ds: &Dataset, views: &[usize], idx: &[usize]) -> Result<Tensor<T>> {
    let hw = ds.height * ds.width;
    let mut data = Vec::with_capacity(idx.len() * views.len() * hw);
    for &i in idx {
        let s = ds
            .samples
            .get(i)
            .ok_or_else(|| Error::invalid(format!("sample {i} out of range")))?;
        for &v in views {
            let view = s
                .views
                .get(v)
                .ok_or_else(|| Error::invalid(format!("sample {i} is missing view {v}")))?;
            if view.len() != hw {
                return Err(Error::shape(format!("view {v} of sample {i} has {} values", view.len())));
            }
            data.extend(view.iter().map(|&x| T::from_f32(x)));
        }
    }
    Tensor::new(vec![idx.len(), views.len(), ds.height, ds.width], data)
}

fn labels_of(ds: &Dataset, idx: &[usize]) -> Vec<u8> {
    idx.iter().map(|&i| ds.samples[i].label).collect()
}

const EVAL_CHUNK: usize = 64;

fn chunks(n: usize) -> Vec<Vec<usize>> {
    (0..n).step_by(EVAL_CHUNK).map(|s| (s..(s + EVAL_CHUNK).min(n)).collect()).collect()
}

/// Mean loss and accuracy of `predict` over a dataset, processed in chunks.
fn evaluate<T: Scalar, F>(ds: &Dataset, exec: Execution, predict: F) -> Result<(f64, f64)>
where
    F: Fn(&[usize]) -> Result<Vec<T>> + Sync,
{
    if ds.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let parts = chunks(ds.len());
    let classes = ds.classes;
    let results = par::try_map_indexed(exec, parts.len(), |c| {
        let idx = &parts[c];
        let probs = predict(idx)?;
        let labels = labels_of(ds, idx);
        let loss = cross_entropy(&probs, &labels, classes)?.to_f64() * idx.len() as f64;
        let correct = argmax_rows(&probs, classes)
            .iter()
            .zip(&labels)
            .filter(|(p, &l)| **p == l as usize)
            .count();
        Ok::<_, Error>((loss, correct))
    })?;
    let n = ds.len() as f64;
    let loss: f64 = results.iter().map(|r| r.0).sum::<f64>() / n;
    let acc = results.iter().map(|r| r.1).sum::<usize>() as f64 / n;
    Ok((loss, acc))
}

fn check_dataset(ds: &Dataset, arch: &Architecture) -> Result<()> {
    if ds.height != arch.height || ds.width != arch.width || ds.classes != arch.classes {
        return Err(Error::shape(format!(
            "dataset is {}x{} with {} classes, network expects {}x{} with {}",
            ds.height, ds.width, ds.classes, arch.height, arch.width, arch.classes
        )));
    }
    Ok(())
}

fn device_views<T: Scalar>(ds: &Dataset, k: usize, idx: &[usize]) -> Result<Vec<Tensor<T>>> {
    (0..k).map(|v| gather(ds, &[v], idx)).collect()
}

struct Recorder<'a> {
    scheme: String,
    cfg: &'a TrainConfig,
    history: Vec<MetricRecord>,
    ledger: CommLedger,
}

impl<'a> Recorder<'a> {
    fn new(scheme: &Scheme, cfg: &'a TrainConfig) -> Self {
        Recorder {
            scheme: scheme.name(),
            cfg,
            history: Vec::new(),
            ledger: CommLedger::default(),
        }
    }

    fn point(&mut self, it: usize, (train_loss, test_accuracy): (f64, f64)) {
        let t = &self.ledger.total;
        self.history.push(MetricRecord {
            scheme: self.scheme.clone(),
            seed: self.cfg.seed,
            iteration: it,
            train_loss,
            test_accuracy,
            cumulative_bits: t.bits(),
            cumulative_seconds: t.seconds,
            cumulative_flops: t.flops,
        });
    }

    fn finish<M>(self, model: M) -> TrainOutcome<M> {
        TrainOutcome {
            model,
            history: self.history,
            ledger: self.ledger,
        }
    }
}

/// Split-network evaluation over ideal links: (train loss, test accuracy).
pub fn evaluate_split<T: Scalar>(net: &SplitNetwork<T>, train: &Dataset, test: &Dataset, exec: Execution) -> Result<(f64, f64)> {
    let run = |ds: &Dataset| {
        evaluate(ds, exec, |idx| {
            let views = device_views(ds, net.devices(), idx)?;
            Ok(vfeel_forward(net, &views, None, &mut Transport::ideal(), Execution::Sequential)?.probs)
        })
    };
    Ok((run(train)?.0, run(test)?.1))
}

/// Trains a split network with seeded mini-batch SGD.
pub fn train_vfeel<T: Scalar>(
    mut net: SplitNetwork<T>,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    link: LinkMode,
) -> Result<TrainOutcome<SplitNetwork<T>>> {
    cfg.validate()?;
    if train.views < net.devices() {
        return Err(Error::invalid(format!(
            "dataset has {} views, network has {} devices",
            train.views,
            net.devices()
        )));
    }
    let scheme = Scheme::Vfl {
        split: net.split,
        aggregator: net.aggregator,
    };
    let mut rec = Recorder::new(&scheme, cfg);
    let mut sampler = BatchSampler::new(train.len(), cfg.batch, cfg.seed)?;
    let mut transport = Transport::new(link, cfg.seed);
    let (lr_s, lr_l) = (T::from_f64(cfg.lr_server), T::from_f64(cfg.lr_local));
    rec.point(0, evaluate_split(&net, train, test, cfg.exec)?);
    for it in 1..=cfg.iterations {
        let idx = sampler.next_batch();
        let labels = labels_of(train, &idx);
        let views = device_views(train, net.devices(), &idx)?;
        let fwd = vfeel_forward(&net, &views, Some(&labels), &mut transport, cfg.exec)?;
        let grads = vfeel_backward(&net, &fwd.caches, &labels, &mut transport, cfg.exec)?;
        apply_split_step(&mut net, &grads, lr_s, lr_l)?;
        rec.ledger.record(vfeel_iteration_cost(
            net.dim,
            idx.len(),
            net.devices(),
            cfg.accounting,
            net.flops_per_sample(),
            &cfg.isac,
        ));
        if cfg.is_eval_point(it) {
            rec.point(it, evaluate_split(&net, train, test, cfg.exec)?);
        }
    }
    Ok(rec.finish(net))
}

/// Full-network evaluation on the given stacked views: (mean loss, accuracy).
pub fn evaluate_full<T: Scalar>(net: &Network<T>, ds: &Dataset, views: &[usize], exec: Execution) -> Result<(f64, f64)> {
    evaluate(ds, exec, |idx| Ok(net.forward(&gather(ds, views, idx)?)?.0.data))
}

/// Plain SGD of one full network on the stacked `views`; shared by the
/// on-device and centralized baselines.
fn train_full<T: Scalar>(
    scheme: Scheme,
    arch: Architecture,
    views: &[usize],
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<Network<T>>> {
    cfg.validate()?;
    check_dataset(train, &arch)?;
    let mut net: Network<T> = full_network(arch, views.len(), &mut stream(cfg.seed, Purpose::Init, 0))?;
    let mut rec = Recorder::new(&scheme, cfg);
    let mut sampler = BatchSampler::new(train.len(), cfg.batch, cfg.seed)?;
    let lr = T::from_f64(cfg.lr_local);
    let eval = |net: &Network<T>| -> Result<(f64, f64)> {
        Ok((
            evaluate_full(net, train, views, cfg.exec)?.0,
            evaluate_full(net, test, views, cfg.exec)?.1,
        ))
    };
    rec.point(0, eval(&net)?);
    for it in 1..=cfg.iterations {
        let idx = sampler.next_batch();
        let (_, cache) = net.forward(&gather(train, views, &idx)?)?;
        let (_, g) = net.backward_with_labels(&cache, &labels_of(train, &idx), false)?;
        net.apply_sgd(&g.params, lr)?;
        rec.ledger.record(LedgerEntry {
            flops: 3 * idx.len() as u64 * net.flops_per_sample(),
            ..LedgerEntry::default()
        });
        if cfg.is_eval_point(it) {
            rec.point(it, eval(&net)?);
        }
    }
    Ok(rec.finish(net))
}

/// ED-k baseline: the full network trained on view `k` alone.
pub fn train_on_device<T: Scalar>(
    k: usize,
    arch: Architecture,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<Network<T>>> {
    if k >= train.views {
        return Err(Error::invalid(format!("device {} does not exist", k + 1)));
    }
    train_full(Scheme::OnDevice(k), arch, &[k], train, test, cfg)
}

/// CL baseline: all K views stacked as input channels.
pub fn train_centralized<T: Scalar>(
    arch: Architecture,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<Network<T>>> {
    let views: Vec<usize> = (0..train.views).collect();
    train_full(Scheme::Centralized, arch, &views, train, test, cfg)
}

/// Mean over views of a full single-channel network's metrics.
pub fn evaluate_hfeel<T: Scalar>(net: &Network<T>, train: &Dataset, test: &Dataset, exec: Execution) -> Result<(f64, f64)> {
    let k = train.views;
    let (mut loss, mut acc) = (0.0, 0.0);
    for v in 0..k {
        loss += evaluate_full(net, train, &[v], exec)?.0;
        acc += evaluate_full(net, test, &[v], exec)?.1;
    }
    Ok((loss / k as f64, acc / k as f64))
}

/// H-FEEL baseline: K replicas of the full network, one per view, trained on
/// the same batch indices and averaged with equal weights after every step.
/// `ledger_params` overrides the parameter count charged to the ledger.
pub fn train_hfeel<T: Scalar>(
    arch: Architecture,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    ledger_params: Option<usize>,
) -> Result<TrainOutcome<Network<T>>> {
    cfg.validate()?;
    check_dataset(train, &arch)?;
    let k = train.views;
    let mut global: Network<T> = full_network(arch, 1, &mut stream(cfg.seed, Purpose::Init, 0))?;
    let mut rec = Recorder::new(&Scheme::HFeel, cfg);
    let mut sampler = BatchSampler::new(train.len(), cfg.batch, cfg.seed)?;
    let lr = T::from_f64(cfg.lr_local);
    let inv = T::ONE / T::from_f64(k as f64);
    rec.point(0, evaluate_hfeel(&global, train, test, cfg.exec)?);
    for it in 1..=cfg.iterations {
        let idx = sampler.next_batch();
        let labels = labels_of(train, &idx);
        let replicas = par::try_map_indexed(cfg.exec, k, |v| {
            let (_, cache) = global.forward(&gather(train, &[v], &idx)?)?;
            let (_, g) = global.backward_with_labels(&cache, &labels, false)?;
            crate::neural::sgd_step(global.params(), &g.params, lr)
        })?;
        let mut avg = replicas[0].clone();
        for r in &replicas[1..] {
            avg.add_assign(r);
        }
        avg.scale(inv);
        global.set_params(avg)?;
        rec.ledger.record(hfeel_iteration_cost(
            ledger_params.unwrap_or(global.param_count()),
            idx.len(),
            k,
            global.flops_per_sample(),
            &cfg.isac,
        ));
        if cfg.is_eval_point(it) {
            rec.point(it, evaluate_hfeel(&global, train, test, cfg.exec)?);
        }
    }
    Ok(rec.finish(global))
}

/// A trained model of any scheme.
#[derive(Debug, Clone)]
pub enum TrainedModel<T> {
    Split(SplitNetwork<T>),
    Full(Network<T>),
}

/// Dispatches a scheme with ideal links.
pub fn train_scheme<T: Scalar>(
    scheme: Scheme,
    arch: Architecture,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    link: LinkMode,
) -> Result<TrainOutcome<TrainedModel<T>>> {
    fn wrap<M, T>(o: TrainOutcome<M>, f: fn(M) -> TrainedModel<T>) -> TrainOutcome<TrainedModel<T>> {
        TrainOutcome {
            model: f(o.model),
            history: o.history,
            ledger: o.ledger,
        }
    }
    Ok(match scheme {
        Scheme::Vfl { split, aggregator } => {
            check_dataset(train, &arch)?;
            let net = SplitNetwork::new(arch, split, aggregator, train.views, cfg.seed)?;
            wrap(train_vfeel(net, train, test, cfg, link)?, TrainedModel::Split)
        }
        Scheme::OnDevice(k) => wrap(train_on_device(k, arch, train, test, cfg)?, TrainedModel::Full),
        Scheme::HFeel => wrap(train_hfeel(arch, train, test, cfg, None)?, TrainedModel::Full),
        Scheme::Centralized => wrap(train_centralized(arch, train, test, cfg)?, TrainedModel::Full),
    })
}

/// Test accuracy of a trained model under its scheme's evaluation rule.
pub fn evaluate_model<T: Scalar>(
    scheme: Scheme,
    model: &TrainedModel<T>,
    train: &Dataset,
    test: &Dataset,
    exec: Execution,
) -> Result<(f64, f64)> {
    match (scheme, model) {
        (Scheme::Vfl { .. }, TrainedModel::Split(net)) => evaluate_split(net, train, test, exec),
        (Scheme::OnDevice(k), TrainedModel::Full(net)) => Ok((
            evaluate_full(net, train, &[k], exec)?.0,
            evaluate_full(net, test, &[k], exec)?.1,
        )),
        (Scheme::HFeel, TrainedModel::Full(net)) => evaluate_hfeel(net, train, test, exec),
        (Scheme::Centralized, TrainedModel::Full(net)) => {
            let views: Vec<usize> = (0..train.views).collect();
            Ok((
                evaluate_full(net, train, &views, exec)?.0,
                evaluate_full(net, test, &views, exec)?.1,
            ))
        }
        _ => Err(Error::invalid(format!("model does not match scheme {}", scheme.name()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_names_round_trip() {
        for name in SCHEME_NAMES {
            assert_eq!(Scheme::parse(name).unwrap().name(), name);
        }
        let err = Scheme::parse("vfl-c").unwrap_err().to_string();
        assert!(err.contains("vfl-a-ewa") && err.contains("cl"));
    }

    #[test]
    fn aggregation_rules() {
        let v = vec![vec![1.0f64, 2.0, 3.0, 4.0]; 3];
        assert_eq!(aggregate(Aggregator::Ewa, &v, 2, 2), v[0]);
        let parts = vec![vec![1.0f64, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        assert_eq!(aggregate(Aggregator::Cat, &parts, 1, 2), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g = vec![3.0f64, 6.0];
        assert_eq!(disaggregate(Aggregator::Ewa, &g, 3, 1, 2), vec![vec![1.0, 2.0]; 3]);
        let g = vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(disaggregate(Aggregator::Cat, &g, 3, 1, 2)[1], vec![3.0, 4.0]);
    }

    #[test]
    fn table_iii_costs() {
        let cfg = IsacConfig::table_i(0);
        let a = vfeel_iteration_cost(784, 32, 3, AccountingMode::OneWay, 0, &cfg);
        assert!((a.seconds - 4.26496).abs() < 1e-9);
        let b = vfeel_iteration_cost(60, 32, 3, AccountingMode::OneWay, 0, &cfg);
        assert!((b.seconds - 0.3264).abs() < 1e-9);
        let h = hfeel_iteration_cost(104_637, 32, 3, 0, &cfg);
        assert!((h.seconds - 33.48384).abs() < 1e-9);
    }

    #[test]
    fn sampler_is_seeded() {
        let mut a = BatchSampler::new(10, 4, 5).unwrap();
        let mut b = BatchSampler::new(10, 4, 5).unwrap();
        for _ in 0..5 {
            let x = a.next_batch();
            assert_eq!(x, b.next_batch());
            assert_eq!(x.len(), 4);
        }
    }
}
