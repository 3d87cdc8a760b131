//! Naive monolithic reference for split training.
//!
//! Every layer is re-implemented with plain nested loops in f64; the K device
//! branches are wired through the aggregator into the server layers as one
//! network and backpropagated sample by sample.

use vfeel_core::neural::{LayerSpec, Network, SplitPoint, Tensor};
use vfeel_core::vfeel::*;
use vfeel_core::Execution;

enum Saved {
    Input(Vec<f64>),
    None,
}

struct NaiveNet<'a> {
    input: Vec<usize>,
    layers: &'a [LayerSpec],
    params: &'a [f64],
}

fn shapes(input: &[usize], layers: &[LayerSpec]) -> Vec<Vec<usize>> {
    let mut s = vec![input.to_vec()];
    for l in layers {
        let cur = s.last().unwrap().clone();
        let next = match *l {
            LayerSpec::Conv2d { out_ch, kernel, stride, padding, .. } => vec![
                out_ch,
                (cur[1] + 2 * padding - kernel) / stride + 1,
                (cur[2] + 2 * padding - kernel) / stride + 1,
            ],
            LayerSpec::MaxPool { size } => vec![cur[0], cur[1] / size, cur[2] / size],
            LayerSpec::Flatten => vec![cur.iter().product()],
            LayerSpec::Dense { outputs, .. } => vec![outputs],
            LayerSpec::Relu | LayerSpec::SoftmaxCrossEntropy { .. } => cur,
        };
        s.push(next);
    }
    s
}

fn n_params(l: &LayerSpec) -> usize {
    match *l {
        LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => out_ch * in_ch * kernel * kernel + out_ch,
        LayerSpec::Dense { inputs, outputs } => outputs * inputs + outputs,
        _ => 0,
    }
}

impl<'a> NaiveNet<'a> {
    fn forward(&self, mut x: Vec<f64>) -> (Vec<f64>, Vec<Saved>) {
        let sh = shapes(&self.input, self.layers);
        let mut off = 0;
        let mut saved = Vec::new();
        for (li, l) in self.layers.iter().enumerate() {
            let p = &self.params[off..off + n_params(l)];
            off += n_params(l);
            let (si, so) = (&sh[li], &sh[li + 1]);
            let y = match *l {
                LayerSpec::Conv2d { in_ch, out_ch, kernel: k, stride, padding } => {
                    let (h, w, ho, wo) = (si[1], si[2], so[1], so[2]);
                    let mut y = vec![0.0; out_ch * ho * wo];
                    for o in 0..out_ch {
                        for i in 0..ho {
                            for j in 0..wo {
                                let mut acc = p[out_ch * in_ch * k * k + o];
                                for c in 0..in_ch {
                                    for ki in 0..k {
                                        for kj in 0..k {
                                            let yy = (i * stride + ki) as isize - padding as isize;
                                            let xx = (j * stride + kj) as isize - padding as isize;
                                            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                                                acc += p[((o * in_ch + c) * k + ki) * k + kj]
                                                    * x[(c * h + yy as usize) * w + xx as usize];
                                            }
                                        }
                                    }
                                }
                                y[(o * ho + i) * wo + j] = acc;
                            }
                        }
                    }
                    y
                }
                LayerSpec::MaxPool { size } => {
                    let (c, h, w, ho, wo) = (si[0], si[1], si[2], so[1], so[2]);
                    let mut y = vec![0.0; c * ho * wo];
                    for ch in 0..c {
                        for i in 0..ho {
                            for j in 0..wo {
                                let mut m = f64::NEG_INFINITY;
                                for di in 0..size {
                                    for dj in 0..size {
                                        m = m.max(x[(ch * h + i * size + di) * w + j * size + dj]);
                                    }
                                }
                                y[(ch * ho + i) * wo + j] = m;
                            }
                        }
                    }
                    y
                }
                LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::Flatten => x.clone(),
                LayerSpec::Dense { inputs, outputs } => (0..outputs)
                    .map(|o| p[outputs * inputs + o] + (0..inputs).map(|i| p[o * inputs + i] * x[i]).sum::<f64>())
                    .collect(),
                LayerSpec::SoftmaxCrossEntropy { .. } => {
                    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    let probs: Vec<f64> = e.iter().map(|v| v / s).collect();
                    saved.push(Saved::None);
                    x = probs;
                    continue;
                }
            };
            saved.push(match l {
                LayerSpec::Flatten => Saved::None,
                _ => Saved::Input(x),
            });
            x = y;
        }
        (x, saved)
    }

    /// Accumulates parameter gradients for `dy` at the output of layer
    /// `top - 1` and returns the input gradient.
    fn backward(&self, saved: &[Saved], top: usize, mut dy: Vec<f64>, grads: &mut [f64]) -> Vec<f64> {
        let sh = shapes(&self.input, self.layers);
        let offs: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += n_params(l);
                Some(o)
            })
            .collect();
        for li in (0..top).rev() {
            let l = &self.layers[li];
            let (off, np) = (offs[li], n_params(l));
            let p = &self.params[off..off + np];
            let g = &mut grads[off..off + np];
            let (si, so) = (&sh[li], &sh[li + 1]);
            dy = match (*l, &saved[li]) {
                (LayerSpec::Conv2d { in_ch, out_ch, kernel: k, stride, padding }, Saved::Input(x)) => {
                    let (h, w, ho, wo) = (si[1], si[2], so[1], so[2]);
                    let mut dx = vec![0.0; x.len()];
                    for o in 0..out_ch {
                        for i in 0..ho {
                            for j in 0..wo {
                                let d = dy[(o * ho + i) * wo + j];
                                g[out_ch * in_ch * k * k + o] += d;
                                for c in 0..in_ch {
                                    for ki in 0..k {
                                        for kj in 0..k {
                                            let yy = (i * stride + ki) as isize - padding as isize;
                                            let xx = (j * stride + kj) as isize - padding as isize;
                                            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                                                let xi = (c * h + yy as usize) * w + xx as usize;
                                                let wi = ((o * in_ch + c) * k + ki) * k + kj;
                                                g[wi] += d * x[xi];
                                                dx[xi] += d * p[wi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    dx
                }
                (LayerSpec::MaxPool { size }, Saved::Input(x)) => {
                    let (c, h, w, ho, wo) = (si[0], si[1], si[2], so[1], so[2]);
                    let mut dx = vec![0.0; x.len()];
                    for ch in 0..c {
                        for i in 0..ho {
                            for j in 0..wo {
                                let mut best = (ch * h + i * size) * w + j * size;
                                for di in 0..size {
                                    for dj in 0..size {
                                        let idx = (ch * h + i * size + di) * w + j * size + dj;
                                        if x[idx] > x[best] {
                                            best = idx;
                                        }
                                    }
                                }
                                dx[best] += dy[(ch * ho + i) * wo + j];
                            }
                        }
                    }
                    dx
                }
                (LayerSpec::Relu, Saved::Input(x)) => {
                    dy.iter().zip(x).map(|(d, &v)| if v > 0.0 { *d } else { 0.0 }).collect()
                }
                (LayerSpec::Flatten, _) => dy,
                (LayerSpec::Dense { inputs, outputs }, Saved::Input(x)) => {
                    let mut dx = vec![0.0; inputs];
                    for o in 0..outputs {
                        g[outputs * inputs + o] += dy[o];
                        for i in 0..inputs {
                            g[o * inputs + i] += dy[o] * x[i];
                            dx[i] += dy[o] * p[o * inputs + i];
                        }
                    }
                    dx
                }
                _ => unreachable!(),
            };
        }
        dy
    }
}

pub struct OracleGrads {
    pub loss: f64,
    pub locals: Vec<Vec<f64>>,
    pub server: Vec<f64>,
}

/// Monolithic K-branch network: branches -> aggregator -> server -> mean CE.
pub fn oracle(net: &SplitNetwork<f64>, views: &[Tensor<f64>], labels: &[u8]) -> OracleGrads {
    let k = net.locals.len();
    let batch = labels.len();
    let d = net.dim;
    let branches: Vec<NaiveNet> = net
        .locals
        .iter()
        .map(|l| NaiveNet {
            input: l.input_shape().to_vec(),
            layers: l.layers(),
            params: l.params().as_slice(),
        })
        .collect();
    let server = NaiveNet {
        input: net.server.input_shape().to_vec(),
        layers: net.server.layers(),
        params: net.server.params().as_slice(),
    };
    let mut g_locals: Vec<Vec<f64>> = net.locals.iter().map(|l| vec![0.0; l.param_count()]).collect();
    let mut g_server = vec![0.0; net.server.param_count()];
    let mut loss = 0.0;
    for b in 0..batch {
        let outs: Vec<(Vec<f64>, Vec<Saved>)> = (0..k)
            .map(|i| branches[i].forward(views[i].sample(b).to_vec()))
            .collect();
        let a: Vec<f64> = match net.aggregator {
            Aggregator::Ewa => (0..d).map(|j| outs.iter().map(|o| o.0[j]).sum::<f64>() / k as f64).collect(),
            Aggregator::Cat => outs.iter().flat_map(|o| o.0.clone()).collect(),
        };
        let (probs, saved) = server.forward(a);
        let y = labels[b] as usize;
        loss -= probs[y].ln() / batch as f64;
        let dz: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(c, p)| (p - if c == y { 1.0 } else { 0.0 }) / batch as f64)
            .collect();
        let top = server.layers.len() - 1;
        let da = server.backward(&saved, top, dz, &mut g_server);
        for i in 0..k {
            let dv: Vec<f64> = match net.aggregator {
                Aggregator::Ewa => da.iter().map(|v| v / k as f64).collect(),
                Aggregator::Cat => da[i * d..(i + 1) * d].to_vec(),
            };
            branches[i].backward(&outs[i].1, branches[i].layers.len(), dv, &mut g_locals[i]);
        }
    }
    OracleGrads {
        loss,
        locals: g_locals,
        server: g_server,
    }
}


/// Worst normwise relative difference between the split protocol's gradients
/// and SGD increments and the oracle's, for one scheme variant.
pub fn split_vs_oracle(split: SplitPoint, agg: Aggregator, views: &[Tensor<f64>], y: &[u8], seed: u64) -> f64 {
    let lr = 0.01;
    let mut net = SplitNetwork::<f64>::new(vfeel_core::neural::Architecture::default(), split, agg, views.len(), seed).unwrap();
    let before = net.clone();
    let reference = oracle(&net, views, y);
    let fwd = vfeel_forward(&net, views, Some(y), &mut Transport::ideal(), Execution::Sequential).unwrap();
    let mut worst = (fwd.loss - reference.loss).abs() / reference.loss.abs();
    let grads = vfeel_backward(&net, &fwd.caches, y, &mut Transport::ideal(), Execution::Sequential).unwrap();
    worst = worst.max(super::normwise_rel(&grads.server.0, &reference.server));
    for (g, r) in grads.locals.iter().zip(&reference.locals) {
        worst = worst.max(super::normwise_rel(&g.0, r));
    }
    apply_split_step(&mut net, &grads, lr, lr).unwrap();
    // Updates compared as increments against -lr * oracle gradient.
    let inc = |a: &Network<f64>, b: &Network<f64>| -> Vec<f64> {
        a.params().0.iter().zip(&b.params().0).map(|(x, y)| x - y).collect()
    };
    let scaled = |g: &[f64]| -> Vec<f64> { g.iter().map(|v| -lr * v).collect() };
    worst = worst.max(super::normwise_rel(&inc(&net.server, &before.server), &scaled(&reference.server)));
    for i in 0..net.locals.len() {
        worst = worst.max(super::normwise_rel(&inc(&net.locals[i], &before.locals[i]), &scaled(&reference.locals[i])));
    }
    worst
}
