//! Double-double finite-difference oracle for network gradients.
//!
//! An f64 central difference with step 1e-6 carries about `eps * loss / step`
//! of round-off, which swamps components near 1e-8. Evaluating the perturbed
//! losses in double-double arithmetic pushes that floor below 1e-20.
#![allow(dead_code)]

use fedtwin::nn::{Activation, Network};
use ndarray::Array2;
use twofloat::TwoFloat as Dd;

fn dd(x: f64) -> Dd {
    Dd::from(x)
}

/// `exp` accurate to double-double precision on the range an activation sees.
pub fn dd_exp(x: Dd) -> Dd {
    if f64::from(x) < -700.0 {
        return dd(0.0);
    }
    // Halve until small, sum the series, then square back up.
    let mut halvings = 0;
    let mut y = x;
    while f64::from(y).abs() > 1.0 / 256.0 {
        y = y / dd(2.0);
        halvings += 1;
    }
    let mut term = dd(1.0);
    let mut sum = dd(1.0);
    for k in 1..=14 {
        term = term * y / dd(k as f64);
        sum += term;
    }
    for _ in 0..halvings {
        sum = sum * sum;
    }
    sum
}

fn activate(act: Activation, z: Dd) -> Dd {
    match act {
        Activation::Relu => {
            if f64::from(z) > 0.0 {
                z
            } else {
                dd(0.0)
            }
        }
        Activation::Elu => {
            if f64::from(z) >= 0.0 {
                z
            } else {
                dd_exp(z) - dd(1.0)
            }
        }
        Activation::Linear => z,
    }
}

/// Side of the kink a pre-activation sits on, for activations that have one.
fn side(act: Activation, z: Dd) -> Option<bool> {
    match act {
        Activation::Relu => Some(f64::from(z) > 0.0),
        Activation::Elu => Some(f64::from(z) >= 0.0),
        Activation::Linear => None,
    }
}

/// Where a flat parameter index lives: layer, row, and column (`None` for the bias).
fn locate(net: &Network, index: usize) -> (usize, usize, Option<usize>) {
    let mut offset = 0;
    for (l, layer) in net.layers().iter().enumerate() {
        let (rows, cols) = layer.weights().dim();
        if index < offset + rows * cols {
            let k = index - offset;
            return (l, k / cols, Some(k % cols));
        }
        offset += rows * cols;
        if index < offset + rows {
            return (l, index - offset, None);
        }
        offset += rows;
    }
    panic!("parameter index {index} out of range");
}

fn dense(layer: &fedtwin::nn::Dense, input: &[Dd]) -> Vec<Dd> {
    let w = layer.weights();
    let b = layer.bias();
    (0..w.nrows())
        .map(|i| {
            let mut z = dd(b[i]);
            for (j, aj) in input.iter().enumerate() {
                z += dd(w[[i, j]]) * *aj;
            }
            z
        })
        .collect()
}

/// Double-double forward state of one batch, reused across probes.
pub struct Oracle<'a> {
    net: &'a Network,
    targets: Vec<Vec<f64>>,
    /// Per sample: layer inputs `a[0..L]` and pre-activations `z[0..L]`.
    inputs: Vec<Vec<Vec<Dd>>>,
    pre: Vec<Vec<Vec<Dd>>>,
}

/// Finite-difference estimate at one component. `None` when the probe moves
/// a pre-activation across a kink, where the loss has no derivative to check.
pub type Probe = Option<f64>;

impl<'a> Oracle<'a> {
    pub fn new(net: &'a Network, x: &Array2<f64>, y: &Array2<f64>) -> Self {
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        for row in x.outer_iter() {
            let mut a: Vec<Dd> = row.iter().map(|&v| dd(v)).collect();
            let mut sample_inputs = Vec::new();
            let mut sample_pre = Vec::new();
            for layer in net.layers() {
                let z = dense(layer, &a);
                let act = layer.spec().activation;
                sample_inputs.push(a);
                a = z.iter().map(|&v| activate(act, v)).collect();
                sample_pre.push(z);
            }
            inputs.push(sample_inputs);
            pre.push(sample_pre);
        }
        let targets = y.outer_iter().map(|r| r.to_vec()).collect();
        Self { net, targets, inputs, pre }
    }

    /// Loss with parameter `index` shifted by `delta`, and whether every kinked
    /// activation stayed on its original side.
    fn shifted_loss(&self, index: usize, delta: f64) -> (Dd, bool) {
        let (tl, tr, tc) = locate(self.net, index);
        let layers = self.net.layers();
        let mut sum = dd(0.0);
        let mut smooth = true;
        let mut count = 0usize;
        for (s, want) in self.targets.iter().enumerate() {
            let mut z = self.pre[s][tl].clone();
            z[tr] += match tc {
                Some(c) => dd(delta) * self.inputs[s][tl][c],
                None => dd(delta),
            };
            let act = layers[tl].spec().activation;
            smooth &= side(act, z[tr]) == side(act, self.pre[s][tl][tr]);
            let mut a: Vec<Dd> = z.iter().map(|&v| activate(act, v)).collect();
            for (l, layer) in layers.iter().enumerate().skip(tl + 1) {
                let z = dense(layer, &a);
                let act = layer.spec().activation;
                smooth &= z
                    .iter()
                    .zip(&self.pre[s][l])
                    .all(|(&new, &old)| side(act, new) == side(act, old));
                a = z.iter().map(|&v| activate(act, v)).collect();
            }
            for (p, &t) in a.iter().zip(want) {
                let d = *p - dd(t);
                sum += d * d;
                count += 1;
            }
        }
        (sum / dd(count as f64), smooth)
    }

    pub fn probe(&self, index: usize, step: f64) -> Probe {
        let (up, smooth_up) = self.shifted_loss(index, step);
        let (down, smooth_down) = self.shifted_loss(index, -step);
        (smooth_up && smooth_down).then(|| f64::from((up - down) / dd(2.0 * step)))
    }
}

/// Outcome of comparing the analytic gradient against the oracle.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Largest relative error over compared components.
    pub worst: f64,
    pub compared: usize,
    /// Components skipped because their probe crossed a kink.
    pub kinked: usize,
}

/// Per-component relative error of `net.backward` against central differences,
/// over the listed components whose magnitude exceeds `floor`.
pub fn check_gradient(net: &Network, x: &Array2<f64>, y: &Array2<f64>, step: f64, indices: &[usize], floor: f64) -> GradCheck {
    let grad = net.backward(x.view(), y.view()).expect("valid batch");
    let oracle = Oracle::new(net, x, y);
    let mut out = GradCheck { worst: 0.0, compared: 0, kinked: 0 };
    for &i in indices {
        let Some(f) = oracle.probe(i, step) else {
            out.kinked += 1;
            continue;
        };
        let a = grad.as_slice()[i];
        let scale = a.abs().max(f.abs());
        if scale > floor {
            out.compared += 1;
            out.worst = out.worst.max((a - f).abs() / scale);
        }
    }
    out
}
