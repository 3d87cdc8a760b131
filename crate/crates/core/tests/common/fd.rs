//! Finite-difference certification of backward passes.
//!
//! The reference derivative is a central difference with step 1e-4 evaluated
//! in double precision on the same parameters. Errors are measured per entry
//! as `|analytic - numeric| / max(|analytic|, |numeric|, 1e-2 * max|numeric|)`.

use rand::Rng;
use vfeel_core::neural::{LayerSpec, Network, ParamVector, Scalar, Tensor};

pub const EPS: f64 = 1e-4;

pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let floor = 1e-2 * numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor).max(1e-300))
        .fold(0.0, f64::max)
}

/// Scalar objective: cross-entropy when the net ends in softmax, otherwise a
/// fixed random linear functional of the outputs.
pub struct Objective {
    labels: Vec<u8>,
    weights: Vec<f64>,
}

fn objective(net: &Network<f64>, x: &Tensor<f64>, obj: &Objective) -> f64 {
    let (out, _) = net.forward(x).unwrap();
    if net.ends_with_softmax() {
        let c = net.output_len();
        let b = x.batch();
        -(0..b).map(|i| out.data[i * c + obj.labels[i] as usize].ln()).sum::<f64>() / b as f64
    } else {
        out.data.iter().zip(&obj.weights).map(|(o, w)| o * w).sum()
    }
}

fn analytic<T: Scalar>(net: &Network<T>, x: &Tensor<T>, obj: &Objective) -> (Vec<f64>, Vec<f64>) {
    let (out, cache) = net.forward(x).unwrap();
    let g = if net.ends_with_softmax() {
        net.backward_with_labels(&cache, &obj.labels, true).unwrap().1
    } else {
        let up = Tensor::new(out.shape.clone(), obj.weights.iter().map(|&w| T::from_f64(w)).collect()).unwrap();
        net.backward(&cache, &up, true).unwrap()
    };
    (
        g.params.0.iter().map(|v| v.to_f64()).collect(),
        g.input.unwrap().data.iter().map(|v| v.to_f64()).collect(),
    )
}

fn numeric(net: &Network<f64>, x: &Tensor<f64>, obj: &Objective) -> (Vec<f64>, Vec<f64>) {
    let mut probe = net.clone();
    let base = net.params().clone();
    let mut dp = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut p = base.clone();
        p.0[i] = base.0[i] + EPS;
        probe.set_params(p.clone()).unwrap();
        let up = objective(&probe, x, obj);
        p.0[i] = base.0[i] - EPS;
        probe.set_params(p).unwrap();
        let down = objective(&probe, x, obj);
        dp.push((up - down) / (2.0 * EPS));
    }
    probe.set_params(base).unwrap();
    let mut dx = Vec::with_capacity(x.data.len());
    for i in 0..x.data.len() {
        let mut xp = x.clone();
        xp.data[i] += EPS;
        let up = objective(&probe, &xp, obj);
        xp.data[i] -= 2.0 * EPS;
        dx.push((up - objective(&probe, &xp, obj)) / (2.0 * EPS));
    }
    (dp, dx)
}

/// Builds the net, draws f32-representable parameters and inputs, and checks
/// both precisions. Returns (single, double) worst relative errors.
pub fn certify(input: Vec<usize>, layers: Vec<LayerSpec>, batch: usize, seed: u64) -> (f64, f64) {
    let mut r = super::rng(seed);
    let mut n64 = Network::<f64>::new(input.clone(), layers.clone()).unwrap();
    let mut n32 = Network::<f32>::new(input.clone(), layers).unwrap();
    let params: Vec<f32> = (0..n64.param_count()).map(|_| r.gen_range(-0.8f32..0.8)).collect();
    n32.set_params(ParamVector(params.clone())).unwrap();
    n64.set_params(ParamVector(params.iter().map(|&v| v as f64).collect())).unwrap();
    let mut shape = vec![batch];
    shape.extend_from_slice(&input);
    let xs: Vec<f32> = (0..shape.iter().product::<usize>()).map(|_| r.gen_range(-1.0f32..1.0)).collect();
    let x32 = Tensor::new(shape.clone(), xs.clone()).unwrap();
    let x64 = Tensor::new(shape, xs.iter().map(|&v| v as f64).collect()).unwrap();
    let obj = Objective {
        labels: (0..batch).map(|_| r.gen_range(0..n64.output_len()) as u8).collect(),
        weights: (0..batch * n64.output_len()).map(|_| r.gen_range(-1.0..1.0)).collect(),
    };
    let (np, nx) = numeric(&n64, &x64, &obj);
    let (ap64, ax64) = analytic(&n64, &x64, &obj);
    let (ap32, ax32) = analytic(&n32, &x32, &obj);
    let double = rel_err(&ap64, &np).max(rel_err(&ax64, &nx));
    let single = rel_err(&ap32, &np).max(rel_err(&ax32, &nx));
    (single, double)
}


/// Layer chains covering every layer kind, stride, padding and pool size:
/// `(name, per-sample input shape, layers, batch, seed)`.
pub fn layer_suite() -> Vec<(&'static str, Vec<usize>, Vec<LayerSpec>, usize, u64)> {
    vec![
        (
            "conv/relu/dense/softmax",
            vec![2, 5, 5],
            vec![
                LayerSpec::Conv2d { in_ch: 2, out_ch: 3, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 3 * 5 * 5, outputs: 4 },
                LayerSpec::SoftmaxCrossEntropy { classes: 4 },
            ],
            3,
            1,
        ),
        (
            "strided conv/pool/dense",
            vec![1, 9, 9],
            vec![
                LayerSpec::Conv2d { in_ch: 1, out_ch: 2, kernel: 3, stride: 2, padding: 0 },
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 2 * 2 * 2, outputs: 3 },
            ],
            2,
            2,
        ),
        (
            "padded conv/odd pool",
            vec![3, 7, 7],
            vec![
                LayerSpec::Conv2d { in_ch: 3, out_ch: 2, kernel: 2, stride: 2, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 3 },
                LayerSpec::Flatten,
            ],
            2,
            3,
        ),
        (
            "dense/relu/dense/softmax",
            vec![7],
            vec![
                LayerSpec::Dense { inputs: 7, outputs: 6 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 6, outputs: 5 },
                LayerSpec::SoftmaxCrossEntropy { classes: 5 },
            ],
            4,
            4,
        ),
        (
            // The reference CNN at reduced width, every layer kind in one chain.
            "six-layer chain",
            vec![1, 8, 8],
            vec![
                LayerSpec::Conv2d { in_ch: 1, out_ch: 2, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv2d { in_ch: 2, out_ch: 3, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 12, outputs: 6 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 6, outputs: 5 },
                LayerSpec::SoftmaxCrossEntropy { classes: 5 },
            ],
            2,
            6,
        ),
    ]
}
