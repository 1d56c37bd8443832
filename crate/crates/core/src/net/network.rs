use crate::error::{shape_err, Error, Result};
use crate::net::layers::{
    conv_backward, conv_forward, dropout_backward, dropout_forward, inner_product_backward,
    inner_product_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward, softmax,
    softmax_backward,
};
use crate::net::spec::{at_layer, LayerSpec, NetworkSpec};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Learnable parameters, one slot per layer (`None` for parameter-free
/// layers). Gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub layers: Vec<Option<LayerParams>>,
}

pub type Gradients = NetworkState;

impl NetworkState {
    /// Uniform Xavier weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(spec: &NetworkSpec, rng: &mut SeededRng) -> NetworkState {
        let mut layers: Vec<Option<LayerParams>> = vec![None; spec.layers().len()];
        for (i, wdims, bdims) in spec.param_layout() {
            let (fan_in, fan_out) = match spec.layers()[i] {
                LayerSpec::Convolution { filters, kernel, .. } => {
                    (wdims[1] * kernel * kernel, filters * kernel * kernel)
                }
                _ => (wdims[0], wdims[1]),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = wdims.iter().product();
            let data = (0..n).map(|_| (2.0 * rng.next_f64() - 1.0) * limit).collect();
            layers[i] = Some(LayerParams {
                weight: Tensor::from_vec(&wdims, data).expect("inferred dims are valid"),
                bias: Tensor::zeros(&bdims).expect("inferred dims are valid"),
            });
        }
        NetworkState { layers }
    }

    /// All-zero tensors with the parameter layout of `spec`.
    pub fn zeros(spec: &NetworkSpec) -> NetworkState {
        let mut layers: Vec<Option<LayerParams>> = vec![None; spec.layers().len()];
        for (i, wdims, bdims) in spec.param_layout() {
            layers[i] = Some(LayerParams {
                weight: Tensor::zeros(&wdims).expect("inferred dims are valid"),
                bias: Tensor::zeros(&bdims).expect("inferred dims are valid"),
            });
        }
        NetworkState { layers }
    }

    /// `(name, tensor)` pairs in layer order, weight before bias:
    /// `layer{i}.weight`, `layer{i}.bias`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, p) in self.layers.iter().enumerate() {
            if let Some(p) = p {
                out.push((format!("layer{i}.weight"), &p.weight));
                out.push((format!("layer{i}.bias"), &p.bias));
            }
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| [&p.weight, &p.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flatten()
            .flat_map(|p| [&mut p.weight, &mut p.bias])
            .collect()
    }

    /// Checks that every tensor has the dims `spec` infers.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let expected = NetworkState::zeros(spec);
        if expected.layers.len() != self.layers.len() {
            return Err(shape_err!(
                "state has {} layers, spec has {}",
                self.layers.len(),
                expected.layers.len()
            ));
        }
        for (i, (a, b)) in self.layers.iter().zip(&expected.layers).enumerate() {
            let same = match (a, b) {
                (None, None) => true,
                (Some(a), Some(b)) => a.weight.dims() == b.weight.dims() && a.bias.dims() == b.bias.dims(),
                _ => false,
            };
            if !same {
                return Err(shape_err!("layer {i}: parameter dims do not match the spec"));
            }
        }
        Ok(())
    }
}

pub enum Mode<'a> {
    Inference,
    /// Dropout masks are drawn from the generator.
    Training(&'a mut SeededRng),
    /// Dropout layers reuse masks recorded by an earlier pass, indexed by layer.
    Replay(&'a [Option<Vec<f64>>]),
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input batch, `activations[i + 1]` the output of layer `i`.
    pub activations: Vec<Tensor>,
    pub pool_argmax: Vec<Option<Vec<usize>>>,
    pub dropout_masks: Vec<Option<Vec<f64>>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().unwrap()
    }

    pub fn into_output(mut self) -> Tensor {
        self.activations.pop().unwrap()
    }
}

fn params(state: &NetworkState, i: usize) -> Result<&LayerParams> {
    state
        .layers
        .get(i)
        .and_then(|p| p.as_ref())
        .ok_or_else(|| shape_err!("layer {i}: missing parameters"))
}

/// Runs `batch` (`N x C x H x W`) through every layer in order.
pub fn net_forward(spec: &NetworkSpec, state: &NetworkState, batch: &Tensor, mode: Mode<'_>) -> Result<ForwardTrace> {
    let [c, h, w] = spec.input();
    match batch.dims() {
        [_, bc, bh, bw] if [*bc, *bh, *bw] == [c, h, w] => {}
        d => return Err(shape_err!("batch dims {d:?} do not match network input {c}x{h}x{w}")),
    }
    net_forward_from(spec, state, 0, batch, mode)
}

/// Runs layers `start..` on `input`, the activation entering layer `start`.
/// In the returned trace `activations[0]` is `input` and the per-layer
/// vectors are still indexed by absolute layer.
pub fn net_forward_from(
    spec: &NetworkSpec,
    state: &NetworkState,
    start: usize,
    input: &Tensor,
    mut mode: Mode<'_>,
) -> Result<ForwardTrace> {
    if state.layers.len() != spec.layers().len() {
        return Err(shape_err!("state has {} layers, spec has {}", state.layers.len(), spec.layers().len()));
    }
    let n_layers = spec.layers().len();
    if start > n_layers {
        return Err(shape_err!("start layer {start} beyond {n_layers} layers"));
    }
    let mut trace = ForwardTrace {
        activations: Vec::with_capacity(n_layers - start + 1),
        pool_argmax: vec![None; n_layers],
        dropout_masks: vec![None; n_layers],
    };
    trace.activations.push(input.clone());
    for (i, layer) in spec.layers().iter().enumerate().skip(start) {
        let x = trace.activations.last().unwrap();
        let y = match *layer {
            LayerSpec::Convolution { stride, pad, .. } => {
                let p = params(state, i)?;
                conv_forward(x, &p.weight, &p.bias, stride, pad)
            }
            LayerSpec::MaxPool { kernel, stride } => maxpool_forward(x, kernel, stride).map(|(y, arg)| {
                trace.pool_argmax[i] = Some(arg);
                y
            }),
            LayerSpec::Relu => Ok(relu_forward(x)),
            LayerSpec::InnerProduct { .. } => {
                let p = params(state, i)?;
                inner_product_forward(x, &p.weight, &p.bias)
            }
            LayerSpec::Dropout { rate } => match &mut mode {
                Mode::Inference => dropout_forward(x, rate, None).map(|(y, _)| y),
                Mode::Training(rng) => dropout_forward(x, rate, Some(&mut **rng)).map(|(y, mask)| {
                    trace.dropout_masks[i] = mask;
                    y
                }),
                Mode::Replay(masks) => {
                    let mask = masks.get(i).and_then(|m| m.as_deref());
                    trace.dropout_masks[i] = mask.map(<[f64]>::to_vec);
                    dropout_backward(mask, x)
                }
            },
            LayerSpec::Softmax => x
                .reshape(&[x.dims()[0], x.len() / x.dims()[0]])
                .and_then(|z| softmax(&z)),
        }
        .map_err(|e| at_layer(i, layer, e))?;
        trace.activations.push(y);
    }
    Ok(trace)
}

/// Backpropagates `output_grad` (gradient with respect to the network
/// output) and returns gradients for every parameter tensor.
pub fn net_backward(
    spec: &NetworkSpec,
    state: &NetworkState,
    trace: &ForwardTrace,
    output_grad: &Tensor,
) -> Result<Gradients> {
    backward_from(spec, state, trace, spec.layers().len(), output_grad).map(|(g, _)| g)
}

/// Backpropagates a gradient taken with respect to the softmax inputs, as
/// produced by the combined softmax and cross-entropy loss. The final layer
/// must be a softmax; it is skipped.
pub fn net_backward_from_logits(
    spec: &NetworkSpec,
    state: &NetworkState,
    trace: &ForwardTrace,
    logit_grad: &Tensor,
) -> Result<Gradients> {
    if !spec.ends_with_softmax() {
        return Err(shape_err!("network does not end with a softmax layer"));
    }
    backward_from(spec, state, trace, spec.layers().len() - 1, logit_grad).map(|(g, _)| g)
}

/// Like [`net_backward`] but also returns the gradient with respect to the input batch.
pub fn net_backward_with_input(
    spec: &NetworkSpec,
    state: &NetworkState,
    trace: &ForwardTrace,
    output_grad: &Tensor,
) -> Result<(Gradients, Tensor)> {
    backward_from(spec, state, trace, spec.layers().len(), output_grad)
}

pub(crate) fn backward_from(
    spec: &NetworkSpec,
    state: &NetworkState,
    trace: &ForwardTrace,
    end: usize,
    grad: &Tensor,
) -> Result<(Gradients, Tensor)> {
    if trace.activations.len() != spec.layers().len() + 1 {
        return Err(shape_err!("trace does not belong to this network"));
    }
    if grad.dims() != trace.activations[end].dims() {
        return Err(shape_err!(
            "gradient dims {:?} do not match activation {:?}",
            grad.dims(),
            trace.activations[end].dims()
        ));
    }
    let mut grads = NetworkState::zeros(spec);
    let mut g = grad.clone();
    for i in (0..end).rev() {
        let layer = &spec.layers()[i];
        let x = &trace.activations[i];
        let y = &trace.activations[i + 1];
        g = (|| -> Result<Tensor> {
            match *layer {
                LayerSpec::Convolution { stride, pad, .. } => {
                    let p = params(state, i)?;
                    let cg = conv_backward(x, &p.weight, &g, stride, pad)?;
                    grads.layers[i] = Some(LayerParams {
                        weight: cg.weights,
                        bias: cg.bias,
                    });
                    Ok(cg.input)
                }
                LayerSpec::MaxPool { .. } => {
                    let arg = trace.pool_argmax[i]
                        .as_ref()
                        .ok_or_else(|| shape_err!("missing pooling indices"))?;
                    maxpool_backward(x.dims(), arg, &g)
                }
                LayerSpec::Relu => relu_backward(x, &g),
                LayerSpec::InnerProduct { .. } => {
                    let p = params(state, i)?;
                    let ig = inner_product_backward(x, &p.weight, &g)?;
                    grads.layers[i] = Some(LayerParams {
                        weight: ig.weights,
                        bias: ig.bias,
                    });
                    Ok(ig.input)
                }
                LayerSpec::Dropout { .. } => dropout_backward(trace.dropout_masks[i].as_deref(), &g),
                LayerSpec::Softmax => softmax_backward(y, &g)?.reshape(x.dims()),
            }
        })()
        .map_err(|e| at_layer(i, layer, e))?;
    }
    Ok((grads, g))
}

/// Class probabilities for a batch in inference mode.
pub fn predict(spec: &NetworkSpec, state: &NetworkState, batch: &Tensor) -> Result<Tensor> {
    let out = net_forward(spec, state, batch, Mode::Inference)?.into_output();
    if spec.ends_with_softmax() {
        Ok(out)
    } else {
        let n = out.dims()[0];
        let k = out.len() / n;
        softmax(&out.reshape(&[n, k])?).map_err(|e| match e {
            Error::Shape(m) => Error::Shape(format!("network output: {m}")),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::spec::build_emex;

    #[test]
    fn empty_network_is_identity() {
        let spec = NetworkSpec::new([1, 2, 3], vec![], 2).unwrap();
        let state = NetworkState::init(&spec, &mut SeededRng::new(1));
        let x = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        let trace = net_forward(&spec, &state, &x, Mode::Inference).unwrap();
        assert_eq!(trace.output(), &x);
    }

    #[test]
    fn single_relu() {
        let spec = NetworkSpec::new([1, 1, 2], vec![LayerSpec::Relu], 2).unwrap();
        let state = NetworkState::zeros(&spec);
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![-1.0, 2.0]).unwrap();
        let trace = net_forward(&spec, &state, &x, Mode::Inference).unwrap();
        assert_eq!(trace.output().data(), &[0.0, 2.0]);
    }

    #[test]
    fn batch_mismatch_is_shape_error() {
        let spec = build_emex([1, 16, 16], 2).unwrap();
        let state = NetworkState::init(&spec, &mut SeededRng::new(1));
        let x = Tensor::zeros(&[1, 1, 17, 16]).unwrap();
        assert!(matches!(
            net_forward(&spec, &state, &x, Mode::Inference),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn wrong_params_name_layer() {
        let spec = build_emex([1, 16, 16], 2).unwrap();
        let mut state = NetworkState::init(&spec, &mut SeededRng::new(1));
        state.layers[2].as_mut().unwrap().bias = Tensor::zeros(&[3]).unwrap();
        let x = Tensor::zeros(&[1, 1, 16, 16]).unwrap();
        let e = net_forward(&spec, &state, &x, Mode::Inference).unwrap_err().to_string();
        assert!(e.contains("layer 2"), "{e}");
    }

    #[test]
    fn xavier_bounds_and_zero_bias() {
        let spec = build_emex([1, 16, 16], 2).unwrap();
        let state = NetworkState::init(&spec, &mut SeededRng::new(9));
        let p = state.layers[0].as_ref().unwrap();
        let limit = (6.0f64 / (25.0 + 500.0)).sqrt();
        assert!(p.weight.data().iter().all(|w| w.abs() <= limit));
        assert!(p.bias.data().iter().all(|&b| b == 0.0));
        state.check_against(&spec).unwrap();
        assert_eq!(state.named_tensors()[0].0, "layer0.weight");
        assert_eq!(state.named_tensors().len(), 8);
    }

    #[test]
    fn inference_dropout_is_bitwise_identity() {
        let spec = NetworkSpec::new([2, 3, 3], vec![LayerSpec::Dropout { rate: 0.5 }], 2).unwrap();
        let state = NetworkState::zeros(&spec);
        let mut rng = SeededRng::new(4);
        let x = Tensor::from_vec(&[2, 2, 3, 3], rng.normal(36)).unwrap();
        let trace = net_forward(&spec, &state, &x, Mode::Inference).unwrap();
        assert_eq!(trace.output().data(), x.data());
    }
}
