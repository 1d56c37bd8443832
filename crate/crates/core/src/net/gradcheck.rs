//! Central finite-difference checks of the analytic gradients.

use crate::error::{shape_err, Error, Result};
use crate::net::layers::cross_entropy_loss;
use crate::net::network::{backward_from, net_forward, net_forward_from, ForwardTrace, Mode, NetworkState};
use crate::net::spec::{LayerSpec, NetworkSpec};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Scalar function of the network output whose gradient is checked.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `sum(weights * output)`; the output gradient is `weights`.
    Projection(Tensor),
    /// Mean cross-entropy of a softmax-terminated network. Backpropagation
    /// starts from the combined softmax and loss gradient.
    CrossEntropy(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries checked per tensor, drawn without replacement; `None` checks all.
    pub max_per_tensor: Option<usize>,
    pub check_input: bool,
    /// Seeds dropout masks (fixed for the whole check) and entry sampling.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_per_tensor: None,
            check_input: true,
            seed: 1234,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor and flat index of the worst entry.
    pub worst: String,
    pub checked: usize,
    /// Entries whose perturbation flipped a relu or pooling decision; the
    /// loss is not differentiable there.
    pub skipped_kinks: usize,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

struct Checker<'a> {
    spec: &'a NetworkSpec,
    objective: &'a Objective,
    base: ForwardTrace,
    masks: Vec<Option<Vec<f64>>>,
    report: GradCheckReport,
}

impl Checker<'_> {
    /// `objective(plus) - objective(minus)`, formed from per-element
    /// differences so that the rounding of two nearly equal totals does not
    /// swamp small gradients.
    fn difference(&self, plus: &ForwardTrace, minus: &ForwardTrace) -> Result<f64> {
        match self.objective {
            Objective::Projection(r) => Ok(r
                .data()
                .iter()
                .zip(plus.output().data().iter().zip(minus.output().data()))
                .map(|(r, (a, b))| r * (a - b))
                .sum()),
            Objective::CrossEntropy(labels) => {
                // Cross-entropy from the logits entering the softmax:
                // -log p_y = lse(z) - z_y, and lse(z+) - lse(z-) is
                // log1p(sum_k p-_k * expm1(z+_k - z-_k)).
                let n_act = plus.activations.len();
                let zp = &plus.activations[n_act - 2];
                let zm = &minus.activations[n_act - 2];
                let pm = minus.output();
                let k = pm.dims()[1];
                let n = labels.len();
                let mut total = 0.0;
                for (i, &y) in labels.iter().enumerate() {
                    let row = i * k..(i + 1) * k;
                    let (zp, zm, pm) = (&zp.data()[row.clone()], &zm.data()[row.clone()], &pm.data()[row]);
                    let lse_delta = zp
                        .iter()
                        .zip(zm)
                        .zip(pm)
                        .map(|((a, b), p)| p * (a - b).exp_m1())
                        .sum::<f64>()
                        .ln_1p();
                    total += lse_delta - (zp[y] - zm[y]);
                }
                Ok(total / n as f64)
            }
        }
    }

    /// True when the piecewise-linear decisions from layer `start` on match the base pass.
    fn same_branches(&self, start: usize, trace: &ForwardTrace) -> bool {
        for (i, layer) in self.spec.layers().iter().enumerate().skip(start) {
            match layer {
                LayerSpec::Relu => {
                    let a = &self.base.activations[i];
                    let b = &trace.activations[i - start];
                    if a.data().iter().zip(b.data()).any(|(x, y)| (*x > 0.0) != (*y > 0.0)) {
                        return false;
                    }
                }
                LayerSpec::MaxPool { .. } if self.base.pool_argmax[i] != trace.pool_argmax[i] => {
                    return false;
                }
                _ => {}
            }
        }
        true
    }

    fn trace(&self, state: &NetworkState, start: usize, input: &Tensor) -> Result<(ForwardTrace, bool)> {
        let trace = net_forward_from(self.spec, state, start, input, Mode::Replay(&self.masks))?;
        let smooth = self.same_branches(start, &trace);
        Ok((trace, smooth))
    }

    fn record(&mut self, name: &str, idx: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.report.checked += 1;
        if e > self.report.max_rel_error || self.report.worst.is_empty() {
            self.report.max_rel_error = self.report.max_rel_error.max(e);
            self.report.worst = format!("{name}[{idx}] analytic {analytic:e} numeric {numeric:e}");
        }
    }
}

fn param_mut(state: &mut NetworkState, layer: usize, which: usize) -> &mut Tensor {
    let p = state.layers[layer].as_mut().expect("parameterized layer");
    if which == 0 {
        &mut p.weight
    } else {
        &mut p.bias
    }
}

fn pick(len: usize, limit: Option<usize>, rng: &mut SeededRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if let Some(m) = limit.filter(|&m| m < len) {
        rng.shuffle(&mut idx);
        idx.truncate(m);
        idx.sort_unstable();
    }
    idx
}

/// Compares every (or a sample of every) parameter gradient, and optionally
/// the input gradient, against central differences of `objective`.
pub fn check_gradients(
    spec: &NetworkSpec,
    state: &NetworkState,
    batch: &Tensor,
    objective: &Objective,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if opts.step.is_nan() || opts.step <= 0.0 {
        return Err(Error::Parameter(format!("finite-difference step {} must be positive", opts.step)));
    }
    let mut rng = SeededRng::new(opts.seed);
    let base = net_forward(spec, state, batch, Mode::Training(&mut rng))?;
    let masks = base.dropout_masks.clone();

    let (grads, input_grad) = match objective {
        Objective::Projection(r) => backward_from(spec, state, &base, spec.layers().len(), r)?,
        Objective::CrossEntropy(labels) => {
            if !spec.ends_with_softmax() {
                return Err(shape_err!("cross-entropy check needs a softmax-terminated network"));
            }
            let (_, g) = cross_entropy_loss(base.output(), labels)?;
            backward_from(spec, state, &base, spec.layers().len() - 1, &g)?
        }
    };

    let mut checker = Checker {
        spec,
        objective,
        base,
        masks,
        report: GradCheckReport::default(),
    };
    let h = opts.step;
    let mut work = state.clone();

    for i in 0..spec.layers().len() {
        if state.layers[i].is_none() {
            continue;
        }
        let input = checker.base.activations[i].clone();
        for which in 0..2 {
            let name = format!("layer{i}.{}", if which == 0 { "weight" } else { "bias" });
            let g = grads.layers[i].as_ref().expect("gradient layout mirrors state");
            let analytic = if which == 0 { &g.weight } else { &g.bias };
            for idx in pick(analytic.len(), opts.max_per_tensor, &mut rng) {
                let orig = param_mut(&mut work, i, which).data()[idx];
                param_mut(&mut work, i, which).data_mut()[idx] = orig + h;
                let (plus, ok_plus) = checker.trace(&work, i, &input)?;
                param_mut(&mut work, i, which).data_mut()[idx] = orig - h;
                let (minus, ok_minus) = checker.trace(&work, i, &input)?;
                param_mut(&mut work, i, which).data_mut()[idx] = orig;
                if !(ok_plus && ok_minus) {
                    checker.report.skipped_kinks += 1;
                    continue;
                }
                checker.record(&name, idx, analytic.data()[idx], checker.difference(&plus, &minus)? / (2.0 * h));
            }
        }
    }

    if opts.check_input {
        let mut x = batch.clone();
        for idx in pick(x.len(), opts.max_per_tensor, &mut rng) {
            let orig = x.data()[idx];
            x.data_mut()[idx] = orig + h;
            let (plus, ok_plus) = checker.trace(state, 0, &x)?;
            x.data_mut()[idx] = orig - h;
            let (minus, ok_minus) = checker.trace(state, 0, &x)?;
            x.data_mut()[idx] = orig;
            if !(ok_plus && ok_minus) {
                checker.report.skipped_kinks += 1;
                continue;
            }
            checker.record("input", idx, input_grad.data()[idx], checker.difference(&plus, &minus)? / (2.0 * h));
        }
    }
    Ok(checker.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::spec::{build_alexnet_mini, build_emex};

    const TOL: f64 = 1e-4;

    fn random(dims: &[usize], rng: &mut SeededRng) -> Tensor {
        let n = dims.iter().product();
        Tensor::from_vec(dims, rng.normal(n)).unwrap()
    }

    fn check_single(input: [usize; 3], layer: LayerSpec) -> GradCheckReport {
        let k = match layer {
            LayerSpec::InnerProduct { units } => units,
            _ => 2,
        };
        check_stack(input, vec![layer], k)
    }

    fn check_stack(input: [usize; 3], layers: Vec<LayerSpec>, k: usize) -> GradCheckReport {
        let mut rng = SeededRng::new(77);
        let spec = NetworkSpec::new(input, layers, k).unwrap();
        let mut state = NetworkState::init(&spec, &mut rng);
        // Nonzero biases so their gradients are exercised away from the init value.
        for t in state.layers.iter_mut().flatten() {
            t.bias = random(t.bias.dims(), &mut rng);
        }
        let batch = random(&[2, input[0], input[1], input[2]], &mut rng);
        let trace = net_forward(&spec, &state, &batch, Mode::Inference).unwrap();
        let r = random(trace.output().dims(), &mut rng);
        check_gradients(&spec, &state, &batch, &Objective::Projection(r), &GradCheckOptions::default()).unwrap()
    }

    fn assert_ok(what: &str, rep: &GradCheckReport) {
        assert!(rep.checked > 0, "{what}: nothing checked");
        assert!(rep.max_rel_error < TOL, "{what}: {rep:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn convolution() {
        assert_ok("conv", &check_single([2, 7, 7], LayerSpec::conv(3, 3, 1, 0)));
        assert_ok("conv pad", &check_single([2, 6, 6], LayerSpec::conv(3, 3, 1, 1)));
        assert_ok("conv stride", &check_single([1, 7, 7], LayerSpec::conv(2, 3, 2, 1)));
    }

    #[test]
    fn maxpool() {
        assert_ok("pool", &check_single([2, 6, 6], LayerSpec::pool(2, 2)));
        assert_ok("pool overlap", &check_single([1, 7, 7], LayerSpec::pool(3, 2)));
    }

    #[test]
    fn relu() {
        assert_ok("relu", &check_single([2, 4, 4], LayerSpec::Relu));
    }

    #[test]
    fn inner_product() {
        assert_ok("ip", &check_single([2, 3, 3], LayerSpec::InnerProduct { units: 5 }));
    }

    #[test]
    fn dropout() {
        let rep = check_single([2, 4, 4], LayerSpec::Dropout { rate: 0.5 });
        assert_ok("dropout", &rep);
    }

    #[test]
    fn softmax() {
        // Softmax takes a score vector, so it sits behind an inner product.
        let layers = vec![LayerSpec::InnerProduct { units: 4 }, LayerSpec::Softmax];
        assert_ok("softmax", &check_stack([3, 1, 1], layers, 4));
    }

    #[test]
    fn cross_entropy_head() {
        let mut rng = SeededRng::new(3);
        let spec = NetworkSpec::new([4, 1, 1], vec![LayerSpec::InnerProduct { units: 3 }, LayerSpec::Softmax], 3).unwrap();
        let state = NetworkState::init(&spec, &mut rng);
        let batch = random(&[4, 4, 1, 1], &mut rng);
        let rep = check_gradients(
            &spec,
            &state,
            &batch,
            &Objective::CrossEntropy(vec![0, 2, 1, 2]),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_ok("ce head", &rep);
    }

    #[test]
    fn emex_every_parameter() {
        let mut rng = SeededRng::new(1234);
        let spec = build_emex([1, 16, 16], 2).unwrap();
        let state = NetworkState::init(&spec, &mut rng);
        let batch = Tensor::from_vec(&[2, 1, 16, 16], rng.uniform(512)).unwrap();
        let rep = check_gradients(
            &spec,
            &state,
            &batch,
            &Objective::CrossEntropy(vec![0, 1]),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(rep.checked + rep.skipped_kinks, spec.param_count() + 512);
        assert_ok("emex", &rep);
    }

    #[test]
    fn alexnet_mini_sampled() {
        let mut rng = SeededRng::new(1234);
        let spec = build_alexnet_mini([1, 32, 32], 2, 1.0 / 16.0).unwrap();
        let state = NetworkState::init(&spec, &mut rng);
        let batch = Tensor::from_vec(&[2, 1, 32, 32], rng.uniform(2048)).unwrap();
        let opts = GradCheckOptions {
            max_per_tensor: Some(48),
            ..GradCheckOptions::default()
        };
        let rep = check_gradients(&spec, &state, &batch, &Objective::CrossEntropy(vec![1, 0]), &opts).unwrap();
        assert_ok("alexnet-mini", &rep);
    }
}
