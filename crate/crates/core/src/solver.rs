//! ADAM optimization, the training schedule and evaluation.

use std::path::{Path, PathBuf};

use crate::checkpoint::save_checkpoint;
use crate::datapipe::{stack_batch, Sample};
use crate::error::{shape_err, Error, Result};
use crate::metrics::{accuracy_of, f1_of_class, fmt4, micro_f1, ConfusionMatrix};
use crate::net::layers::{argmax_rows, cross_entropy_loss};
use crate::net::network::{net_backward_from_logits, net_forward, predict, Mode, NetworkState};
use crate::net::spec::NetworkSpec;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub train_batch_size: usize,
    pub test_batch_size: usize,
    pub test_iterations: usize,
    pub test_interval: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            train_batch_size: 10,
            test_batch_size: 16,
            test_iterations: 7,
            test_interval: 50,
            max_iterations: 1000,
            seed: 1234,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("train_batch_size", self.train_batch_size),
            ("test_batch_size", self.test_batch_size),
            ("test_iterations", self.test_iterations),
            ("test_interval", self.test_interval),
            ("max_iterations", self.max_iterations),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Parameter(format!("{name} {b} outside [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter(format!("epsilon {} must be > 0", self.epsilon)));
        }
        Ok(())
    }

    /// Steps at which validation runs and a checkpoint is written.
    pub fn log_steps(&self) -> Vec<usize> {
        (1..=self.max_iterations / self.test_interval)
            .map(|k| k * self.test_interval)
            .collect()
    }

    /// Validation samples drawn per interval.
    pub fn validation_draws(&self) -> usize {
        self.test_iterations * self.test_batch_size
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn for_params(params: &[&Tensor]) -> AdamState {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros_like(p)).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One ADAM update of every tensor in `params`.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], st: &mut AdamState, cfg: &SolverConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != st.m.len() || params.len() != st.v.len() {
        return Err(shape_err!(
            "adam: {} params, {} grads, {} moment pairs",
            params.len(),
            grads.len(),
            st.m.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dims() != g.dims() || p.dims() != st.m[i].dims() || p.dims() != st.v[i].dims() {
            return Err(shape_err!(
                "adam: tensor {i} has dims {:?} but gradient {:?}",
                p.dims(),
                g.dims()
            ));
        }
    }
    st.t += 1;
    let t = st.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (st.m[i].data_mut(), st.v[i].data_mut());
        for (((p, g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Mean training loss over the steps since the previous row.
    pub train_loss: f64,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,accuracy,f1\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.step, fmt4(r.accuracy), fmt4(r.f1)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub micro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub positive_f1: Option<f64>,
}

impl EvalReport {
    /// F1 of the positive class when one was given, otherwise micro-F1.
    pub fn f1(&self) -> f64 {
        self.positive_f1.unwrap_or(self.micro_f1)
    }

    fn from_confusion(confusion: ConfusionMatrix, positive: Option<usize>) -> Result<EvalReport> {
        let per_class_f1 = (0..confusion.num_classes())
            .map(|c| f1_of_class(&confusion, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport {
            accuracy: accuracy_of(&confusion)?,
            micro_f1: micro_f1(&confusion)?,
            positive_f1: positive.map(|c| f1_of_class(&confusion, c)).transpose()?,
            per_class_f1,
            confusion,
        })
    }
}

const EVAL_CHUNK: usize = 64;

fn check_samples(spec: &NetworkSpec, samples: &[Sample], what: &str) -> Result<()> {
    let [c, h, w] = spec.input();
    for s in samples {
        if c != 1 || s.image.dims() != [h, w] {
            return Err(shape_err!(
                "{what} sample {} has dims {:?}, network expects {c}x{h}x{w}",
                s.source_id,
                s.image.dims()
            ));
        }
        if s.label >= spec.num_classes() {
            return Err(Error::Label(format!(
                "{what} sample {} has label {} for {} classes",
                s.source_id,
                s.label,
                spec.num_classes()
            )));
        }
    }
    Ok(())
}

fn confusion_over(spec: &NetworkSpec, state: &NetworkState, samples: &[&Sample]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(spec.num_classes());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let images: Vec<&Tensor> = chunk.iter().map(|s| &s.image).collect();
        let batch = stack_batch(&images)?;
        let preds = argmax_rows(&predict(spec, state, &batch)?)?;
        for (s, p) in chunk.iter().zip(preds) {
            cm.add(s.label, p)?;
        }
    }
    Ok(cm)
}

/// Inference-mode metrics over every sample.
pub fn evaluate(
    spec: &NetworkSpec,
    state: &NetworkState,
    samples: &[Sample],
    positive: Option<usize>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    check_samples(spec, samples, "evaluation")?;
    let refs: Vec<&Sample> = samples.iter().collect();
    EvalReport::from_confusion(confusion_over(spec, state, &refs)?, positive)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: NetworkState,
    pub adam: AdamState,
    pub log: TrainLog,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_name(step: usize) -> String {
    format!("checkpoint_{step:06}.emrc")
}

/// Runs the full schedule. Training order is reshuffled at every epoch
/// boundary; validation batches walk the validation set cyclically. When
/// `checkpoint_dir` is given a checkpoint is written at every logged step.
#[allow(clippy::too_many_arguments)]
pub fn train(
    spec: &NetworkSpec,
    state: NetworkState,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &SolverConfig,
    positive: Option<usize>,
    rng: &mut SeededRng,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    state.check_against(spec)?;
    if !spec.ends_with_softmax() {
        return Err(shape_err!("training needs a softmax-terminated network"));
    }
    if train_set.len() < cfg.train_batch_size {
        return Err(Error::Data(format!(
            "training set has {} samples, fewer than one batch of {}",
            train_set.len(),
            cfg.train_batch_size
        )));
    }
    if val_set.len() < cfg.test_batch_size {
        return Err(Error::Data(format!(
            "validation set has {} samples, fewer than one batch of {}",
            val_set.len(),
            cfg.test_batch_size
        )));
    }
    check_samples(spec, train_set, "training")?;
    check_samples(spec, val_set, "validation")?;

    let mut state = state;
    let mut adam = AdamState::for_params(&state.tensors());
    let mut log = TrainLog::default();
    let mut checkpoints = Vec::new();

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    rng.shuffle(&mut order);
    let mut cursor = 0;
    let mut val_cursor = 0;
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);

    for step in 1..=cfg.max_iterations {
        let mut images = Vec::with_capacity(cfg.train_batch_size);
        let mut labels = Vec::with_capacity(cfg.train_batch_size);
        for _ in 0..cfg.train_batch_size {
            if cursor == order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let s = &train_set[order[cursor]];
            cursor += 1;
            images.push(&s.image);
            labels.push(s.label);
        }
        let batch = stack_batch(&images)?;
        let trace = net_forward(spec, &state, &batch, Mode::Training(rng))?;
        let (loss, logit_grad) = cross_entropy_loss(trace.output(), &labels)?;
        let grads = net_backward_from_logits(spec, &state, &trace, &logit_grad)?;
        adam_step(&mut state.tensors_mut(), &grads.tensors(), &mut adam, cfg)?;
        loss_sum += loss;
        loss_count += 1;

        if step % cfg.test_interval == 0 {
            let mut drawn = Vec::with_capacity(cfg.validation_draws());
            for _ in 0..cfg.validation_draws() {
                drawn.push(&val_set[val_cursor]);
                val_cursor = (val_cursor + 1) % val_set.len();
            }
            let report = EvalReport::from_confusion(confusion_over(spec, &state, &drawn)?, positive)?;
            log.rows.push(LogRow {
                step,
                train_loss: loss_sum / loss_count as f64,
                accuracy: report.accuracy,
                f1: report.f1(),
            });
            log::info!(
                "step {step}: loss {:.4} accuracy {} f1 {}",
                loss_sum / loss_count as f64,
                fmt4(report.accuracy),
                fmt4(report.f1())
            );
            loss_sum = 0.0;
            loss_count = 0;
            if let Some(dir) = checkpoint_dir {
                let path = dir.join(checkpoint_name(step));
                save_checkpoint(&path, &state, Some(&adam), step as u64)?;
                checkpoints.push(path);
            }
        }
    }
    Ok(TrainOutcome {
        state,
        adam,
        log,
        checkpoints,
    })
}
