use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{param_count, validate_specs, LayerSpec, ParamVector};
use crate::error::{check_dim, Error, Result};

/// One dense layer: `activation(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    spec: LayerSpec,
    /// Shape `(output_width, input_width)`.
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl Dense {
    pub fn new(spec: LayerSpec, weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        check_dim("layer weight rows", spec.output_width, weights.nrows())?;
        check_dim("layer weight columns", spec.input_width, weights.ncols())?;
        check_dim("layer bias", spec.output_width, bias.len())?;
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite layer parameter".into()));
        }
        Ok(Self {
            spec,
            weights,
            bias,
        })
    }

    pub fn zeros(spec: LayerSpec) -> Self {
        Self {
            spec,
            weights: Array2::zeros((spec.output_width, spec.input_width)),
            bias: Array1::zeros(spec.output_width),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.bias
    }

    fn pre_activation(&self, input: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = input.dot(&self.weights.t());
        z += &self.bias;
        z
    }
}

/// Per-layer gradient blocks, in layer order.
type LayerGrads = Vec<(Array2<f64>, Array1<f64>)>;

/// A feed-forward stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Dense>,
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
///
/// Weights are drawn layer by layer, row-major, from a ChaCha8 stream seeded by `seed`.
pub fn build_network(specs: &[LayerSpec], seed: u64) -> Result<Network> {
    validate_specs(specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .iter()
        .map(|&spec| {
            let limit = (6.0 / (spec.input_width + spec.output_width) as f64).sqrt();
            let weights = Array2::from_shape_simple_fn((spec.output_width, spec.input_width), || {
                rng.random_range(-limit..=limit)
            });
            Dense {
                spec,
                weights,
                bias: Array1::zeros(spec.output_width),
            }
        })
        .collect();
    Ok(Network { layers })
}

/// Rebuilds a network from flat parameters in layout order.
pub fn unflatten(values: &ParamVector, specs: &[LayerSpec]) -> Result<Network> {
    validate_specs(specs)?;
    let mut net = Network::zeros(specs)?;
    net.load_params(values)?;
    Ok(net)
}

/// Mean over components of the squared difference.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_dim("mse_loss", pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::Empty("mse_loss input"));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

impl Network {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(Dense::spec).collect();
        validate_specs(&specs)?;
        Ok(Self { layers })
    }

    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        validate_specs(specs)?;
        Ok(Self {
            layers: specs.iter().map(|&s| Dense::zeros(s)).collect(),
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Dense::spec).collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.input_width
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_width
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.specs())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Evaluates one input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let input = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward_batch(input)?.into_raw_vec_and_offset().0)
    }

    /// Evaluates a batch with one sample per row.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("network input", self.input_width(), inputs.ncols())?;
        let mut layers = self.layers.iter();
        let first = layers.next().expect("validated non-empty");
        let mut a = first.pre_activation(&inputs);
        let act = first.spec.activation;
        a.mapv_inplace(|z| act.apply(z));
        for layer in layers {
            let mut z = layer.pre_activation(&a.view());
            let act = layer.spec.activation;
            z.mapv_inplace(|v| act.apply(v));
            a = z;
        }
        Ok(a)
    }

    /// Mean squared error of the network over a batch.
    pub fn loss(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
        check_dim("batch targets", inputs.nrows(), targets.nrows())?;
        check_dim("network output", self.output_width(), targets.ncols())?;
        if inputs.nrows() == 0 {
            return Err(Error::Empty("batch"));
        }
        let pred = self.forward_batch(inputs)?;
        let mut sum = 0.0;
        Zip::from(&pred).and(&targets).for_each(|p, t| {
            let d = p - t;
            sum += d * d;
        });
        Ok(sum / pred.len() as f64)
    }

    fn layer_gradients(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, LayerGrads)> {
        check_dim("network input", self.input_width(), inputs.ncols())?;
        check_dim("network output", self.output_width(), targets.ncols())?;
        check_dim("batch targets", inputs.nrows(), targets.nrows())?;
        if inputs.nrows() == 0 {
            return Err(Error::Empty("batch"));
        }

        // Forward pass keeping pre-activations and activations.
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { inputs } else { acts[i - 1].view() };
            let z = layer.pre_activation(&input);
            let act = layer.spec.activation;
            acts.push(z.mapv(|v| act.apply(v)));
            pre.push(z);
        }

        let output = acts.last().expect("non-empty");
        let scale = 2.0 / output.len() as f64;
        let mut loss = 0.0;
        let mut delta = Array2::zeros(output.raw_dim());
        let out_act = self.layers[self.layers.len() - 1].spec.activation;
        Zip::from(&mut delta)
            .and(output)
            .and(&targets)
            .and(&pre[pre.len() - 1])
            .for_each(|d, &p, &t, &z| {
                let diff = p - t;
                loss += diff * diff;
                *d = scale * diff * out_act.derivative(z);
            });
        loss /= output.len() as f64;

        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 { inputs } else { acts[i - 1].view() };
            let gw = delta.t().dot(&input);
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut next = delta.dot(&self.layers[i].weights);
                let act = self.layers[i - 1].spec.activation;
                Zip::from(&mut next)
                    .and(&pre[i - 1])
                    .for_each(|d, &z| *d *= act.derivative(z));
                delta = next;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        Ok((loss, grads))
    }

    /// Gradient of the mean batch MSE, in parameter layout order.
    pub fn backward(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<ParamVector> {
        Ok(self.loss_and_gradient(inputs, targets)?.1)
    }

    /// Batch loss (before any update) together with its gradient.
    pub fn loss_and_gradient(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, ParamVector)> {
        let (loss, grads) = self.layer_gradients(inputs, targets)?;
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in &grads {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        Ok((loss, ParamVector::new(flat)))
    }

    /// `w <- w - lr * grad` for every parameter.
    pub fn sgd_step(&mut self, grad: &ParamVector, lr: f64) -> Result<()> {
        let expected = self.param_count();
        if grad.len() != expected {
            return Err(Error::Layout {
                expected,
                actual: grad.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w -= lr * grad.as_slice()[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    /// One minibatch SGD step; returns the batch loss before the update.
    ///
    /// Numerically identical to `backward` followed by `sgd_step`.
    pub fn train_step(
        &mut self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        lr: f64,
    ) -> Result<f64> {
        let (loss, grads) = self.layer_gradients(inputs, targets)?;
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads) {
            Zip::from(&mut layer.weights)
                .and(&gw)
                .for_each(|w, &g| *w -= lr * g);
            Zip::from(&mut layer.bias).and(&gb).for_each(|b, &g| *b -= lr * g);
        }
        Ok(loss)
    }

    pub fn flatten(&self) -> ParamVector {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend(layer.weights.iter());
            flat.extend(layer.bias.iter());
        }
        ParamVector::new(flat)
    }

    /// Overwrites every parameter from a flat vector in layout order.
    pub fn load_params(&mut self, values: &ParamVector) -> Result<()> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(Error::Layout {
                expected,
                actual: values.len(),
            });
        }
        let mut src = values.as_slice().iter();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = *src.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Splits into the first `at` layers and the rest.
    pub fn split_at(&self, at: usize) -> Result<(Network, Network)> {
        if at == 0 || at >= self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot split a {}-layer network at {at}",
                self.layers.len()
            )));
        }
        Ok((
            Network {
                layers: self.layers[..at].to_vec(),
            },
            Network {
                layers: self.layers[at..].to_vec(),
            },
        ))
    }

    /// Stacks `self` followed by `next` into one network.
    pub fn concat(&self, next: &Network) -> Result<Network> {
        let layers: Vec<Dense> = self.layers.iter().chain(&next.layers).cloned().collect();
        Network::from_layers(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mlp_specs, Activation};
    use ndarray::array;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn scalar_net(w: f64, b: f64) -> Network {
        let spec = LayerSpec::new(1, 1, Activation::Linear);
        Network::from_layers(vec![Dense::new(spec, array![[w]], array![b]).unwrap()]).unwrap()
    }

    #[test]
    fn build_counts_and_determinism() {
        let specs = [LayerSpec::new(1, 1, Activation::Linear)];
        let a = build_network(&specs, 9).unwrap();
        assert_eq!(a.param_count(), 2);
        assert_eq!(a, build_network(&specs, 9).unwrap());
        assert_ne!(a, build_network(&specs, 10).unwrap());
        assert_eq!(a.layers()[0].bias()[0], 0.0);

        let specs = mlp_specs(&[64, 100, 8], Activation::Elu, Activation::Linear);
        let net = build_network(&specs, 1).unwrap();
        let limit = (6.0f64 / 164.0).sqrt();
        assert!(net.layers()[0].weights().iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn build_rejects_broken_chain() {
        let specs = [
            LayerSpec::new(2, 3, Activation::Relu),
            LayerSpec::new(2, 1, Activation::Linear),
        ];
        assert!(matches!(build_network(&specs, 0), Err(Error::Config(_))));
    }

    #[test]
    fn forward_examples() {
        let specs = mlp_specs(&[3, 5, 2], Activation::Relu, Activation::Linear);
        let zero = Network::zeros(&specs).unwrap();
        assert_eq!(zero.forward(&[1.0, -2.0, 7.0]).unwrap(), vec![0.0, 0.0]);

        let ident = Network::from_layers(vec![Dense::new(
            LayerSpec::new(2, 2, Activation::Linear),
            array![[1.0, 0.0], [0.0, 1.0]],
            array![0.0, 0.0],
        )
        .unwrap()])
        .unwrap();
        assert_eq!(ident.forward(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);

        let relu = Network::from_layers(vec![Dense::new(
            LayerSpec::new(1, 1, Activation::Relu),
            array![[1.0]],
            array![-2.0],
        )
        .unwrap()])
        .unwrap();
        assert_eq!(relu.forward(&[1.0]).unwrap(), vec![0.0]);

        assert!(matches!(
            ident.forward(&[1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 4.0]).unwrap(), 2.0);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<f64> = (0..37).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t: Vec<f64> = (0..37).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut acc = 0.0;
        for i in 0..p.len() {
            let d = p[i] - t[i];
            acc += d * d;
        }
        let oracle = acc / p.len() as f64;
        assert!((mse_loss(&p, &t).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn scalar_gradient() {
        let net = scalar_net(0.0, 0.0);
        let g = net.backward(array![[1.0]].view(), array![[1.0]].view()).unwrap();
        assert_eq!(g.as_slice(), &[-2.0, -2.0]);
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let specs = mlp_specs(&[2, 6, 3], Activation::Elu, Activation::Linear);
        let net = build_network(&specs, 5).unwrap();
        let x = array![[0.1, -0.3], [0.7, 0.2]];
        let y = array![[1.0, 0.0, -1.0], [0.5, 0.5, 0.5]];
        let g1 = net.backward(x.view(), y.view()).unwrap();
        let x3 = ndarray::concatenate(Axis(0), &[x.view(), x.view(), x.view()]).unwrap();
        let y3 = ndarray::concatenate(Axis(0), &[y.view(), y.view(), y.view()]).unwrap();
        let g3 = net.backward(x3.view(), y3.view()).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g3.as_slice()) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let net = scalar_net(1.0, 0.0);
        let x = Array2::<f64>::zeros((0, 1));
        assert!(matches!(
            net.backward(x.view(), x.view()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn sgd_examples() {
        let mut net = scalar_net(0.0, 0.0);
        let before = net.clone();
        net.sgd_step(&ParamVector::zeros(2), 0.1).unwrap();
        assert_eq!(net, before);
        net.sgd_step(&ParamVector::new(vec![-2.0, 0.0]), 0.5).unwrap();
        assert_eq!(net.layers()[0].weights()[[0, 0]], 1.0);
        assert!(matches!(
            net.sgd_step(&ParamVector::zeros(3), 0.1),
            Err(Error::Layout { .. })
        ));
    }

    #[test]
    fn train_step_matches_backward_then_step() {
        let specs = mlp_specs(&[3, 7, 7, 2], Activation::Relu, Activation::Linear);
        let net = build_network(&specs, 11).unwrap();
        let x = array![[0.1, 0.2, 0.3], [-0.4, 0.9, 0.0], [0.3, 0.3, -0.8]];
        let y = array![[1.0, -1.0], [0.2, 0.4], [0.0, 0.0]];
        let mut a = net.clone();
        let loss = a.train_step(x.view(), y.view(), 0.05).unwrap();
        let mut b = net.clone();
        let g = b.backward(x.view(), y.view()).unwrap();
        b.sgd_step(&g, 0.05).unwrap();
        assert_eq!(a, b);
        assert_eq!(loss, net.loss(x.view(), y.view()).unwrap());
    }

    #[test]
    fn flatten_layout() {
        let specs = mlp_specs(&[2, 3, 1], Activation::Relu, Activation::Linear);
        assert_eq!(Network::zeros(&specs).unwrap().flatten(), ParamVector::zeros(13));
        let net = build_network(&specs, 2).unwrap();
        let flat = net.flatten();
        assert_eq!(flat.len(), 13);
        assert_eq!(flat.as_slice()[1], net.layers()[0].weights()[[0, 1]]);
        assert_eq!(flat.as_slice()[2], net.layers()[0].weights()[[1, 0]]);
        assert_eq!(flat.as_slice()[6], 0.0);
        assert_eq!(flat.as_slice()[9], net.layers()[1].weights()[[0, 0]]);
        assert!(unflatten(&ParamVector::zeros(12), &specs).is_err());
    }

    #[test]
    fn split_and_concat() {
        let specs = mlp_specs(&[4, 5, 2, 5, 4], Activation::Elu, Activation::Linear);
        let net = build_network(&specs, 8).unwrap();
        let (enc, dec) = net.split_at(2).unwrap();
        assert_eq!(enc.output_width(), 2);
        assert_eq!(enc.concat(&dec).unwrap(), net);
        assert!(net.split_at(0).is_err());
        assert!(dec.concat(&dec).is_err());
    }

    proptest! {
        #[test]
        fn flatten_roundtrip_is_bit_exact(seed in any::<u64>(), hidden in 1usize..9, scale in -1e3f64..1e3) {
            let specs = mlp_specs(&[3, hidden, hidden, 2], Activation::Elu, Activation::Linear);
            let mut net = build_network(&specs, seed).unwrap();
            let shifted: Vec<f64> = net.flatten().as_slice().iter().map(|v| v * scale + 1e-300).collect();
            net.load_params(&ParamVector::new(shifted)).unwrap();
            let back = unflatten(&net.flatten(), &specs).unwrap();
            prop_assert_eq!(back.flatten().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            net.flatten().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn loss_is_nonnegative_and_zero_only_on_match(
            pred in proptest::collection::vec(-10.0f64..10.0, 1..20),
            bump in 1e-3f64..1.0,
        ) {
            prop_assert_eq!(mse_loss(&pred, &pred).unwrap(), 0.0);
            let mut other = pred.clone();
            other[0] += bump;
            prop_assert!(mse_loss(&pred, &other).unwrap() > 0.0);
        }
    }
}
