//! Random initialization, first-order optimizers and the training loop.

use rayon::prelude::*;

use crate::cells::{CellKind, CellParams, CellWeights};
use crate::data::{batches, SequenceDataset};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng};
use crate::network::{backward_prepared, cross_entropy, forward_prepared, ClassifierNet, Gradients};

/// Scale of the hidden-to-hidden weights and the seed of every draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitSpec {
    pub sigma_w: f64,
    pub seed: u64,
}

fn fill(buf: &mut [f64], std: f64, rng: &mut SeededRng) {
    for v in buf {
        *v = rng.normal(0.0, std);
    }
}

fn input_std(m: usize) -> f64 {
    if m == 0 {
        0.0
    } else {
        (1.0 / m as f64).sqrt()
    }
}

/// Random classifier.
///
/// Input matrices get `N(0, 1/m)`, hidden-to-hidden entries `N(0, σ_w²/n)`
/// (the stored strict-upper entries for antisymmetric cells, the `h`
/// columns of each LSTM block), the readout `N(0, 1/n)`. Biases are zero
/// except the LSTM forget bias, which is one.
pub fn init_params(
    kind: CellKind,
    n: usize,
    m: usize,
    classes: usize,
    epsilon: f64,
    gamma: f64,
    spec: &InitSpec,
) -> Result<ClassifierNet> {
    if !(spec.sigma_w >= 0.0) || !spec.sigma_w.is_finite() {
        return Err(Error::invalid(format!("sigma_w must be >= 0, got {}", spec.sigma_w)));
    }
    let cell = CellParams::zeros(kind, n, m, epsilon, gamma)?;
    let mut net = ClassifierNet::new(cell, classes)?;
    let mut rng = SeededRng::new(spec.seed);
    let hidden = spec.sigma_w / (n as f64).sqrt();
    let input = input_std(m);
    match &mut net.cell.weights {
        CellWeights::Vanilla { w, v_h, .. } => {
            fill(w.as_mut_slice(), hidden, &mut rng);
            fill(v_h.as_mut_slice(), input, &mut rng);
        }
        CellWeights::Antisym { w, v_h, gate, .. } => {
            fill(w.upper_mut(), hidden, &mut rng);
            fill(v_h.as_mut_slice(), input, &mut rng);
            if let Some(g) = gate {
                fill(g.v_z.as_mut_slice(), input, &mut rng);
            }
        }
        CellWeights::Ablation { w, v_h, gate, .. } => {
            fill(w.as_mut_slice(), hidden, &mut rng);
            fill(v_h.as_mut_slice(), input, &mut rng);
            fill(gate.v_z.as_mut_slice(), input, &mut rng);
        }
        CellWeights::Lstm(l) => {
            for blk in [&mut l.w_f, &mut l.w_i, &mut l.w_o, &mut l.w_c] {
                for r in 0..n {
                    let row = blk.row_mut(r);
                    fill(&mut row[..n], hidden, &mut rng);
                    fill(&mut row[n..], input, &mut rng);
                }
            }
            l.b_f.fill(1.0);
        }
    }
    fill(net.readout_w.as_mut_slice(), (1.0 / n as f64).sqrt(), &mut rng);
    Ok(net)
}

fn check_lengths(op: &'static str, lens: &[usize]) -> Result<()> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::shape(op, format!("buffer lengths {lens:?}")));
    }
    Ok(())
}

/// Classical momentum: `v ← μv + g`, `θ ← θ − lr·v`.
pub fn sgd_momentum_update(theta: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, mu: f64) -> Result<()> {
    check_lengths("sgd_momentum_update", &[theta.len(), grad.len(), velocity.len()])?;
    for ((t, &g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mu * *v + g;
        *t -= lr * *v;
    }
    Ok(())
}

/// `G ← G + g²`, `θ ← θ − lr·g/(√G + δ₀)`.
pub fn adagrad_update(theta: &mut [f64], grad: &[f64], accumulator: &mut [f64], lr: f64, delta0: f64) -> Result<()> {
    check_lengths("adagrad_update", &[theta.len(), grad.len(), accumulator.len()])?;
    for ((t, &g), a) in theta.iter_mut().zip(grad).zip(accumulator.iter_mut()) {
        *a += g * g;
        *t -= lr * g / (a.sqrt() + delta0);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    SgdMomentum { mu: f64 },
    Adagrad { delta0: f64 },
}

impl OptimizerKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::SgdMomentum { mu } if !(0.0..1.0).contains(&mu) => {
                Err(Error::invalid(format!("momentum must be in [0, 1), got {mu}")))
            }
            OptimizerKind::Adagrad { delta0 } if !(delta0 > 0.0) => {
                Err(Error::invalid(format!("delta0 must be positive, got {delta0}")))
            }
            _ => Ok(()),
        }
    }
}

/// Optimizer with one slot per parameter (velocity or squared-gradient sum).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub slots: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, net: &ClassifierNet) -> Result<Self> {
        kind.validate()?;
        Ok(OptimizerState {
            kind,
            slots: net.buffers().iter().map(|b| vec![0.0; b.len()]).collect(),
        })
    }

    pub fn step(&mut self, net: &mut ClassifierNet, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        let params = net.buffers_mut();
        let g = grads.buffers();
        if params.len() != g.len() || params.len() != self.slots.len() {
            return Err(Error::shape("optimizer step", "buffer count"));
        }
        for ((theta, grad), slot) in params.into_iter().zip(g).zip(&mut self.slots) {
            match self.kind {
                OptimizerKind::SgdMomentum { mu } => sgd_momentum_update(theta, grad, slot, lr, mu)?,
                OptimizerKind::Adagrad { delta0 } => adagrad_update(theta, grad, slot, lr, delta0)?,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub kind: CellKind,
    pub n: usize,
    pub m: usize,
    pub classes: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub sigma_w: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Evaluate every this many iterations; 0 evaluates only at the end.
    pub eval_every: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        self.optimizer.validate()
    }

    pub fn init_net(&self) -> Result<ClassifierNet> {
        init_params(
            self.kind,
            self.n,
            self.m,
            self.classes,
            self.epsilon,
            self.gamma,
            &InitSpec {
                sigma_w: self.sigma_w,
                seed: self.seed,
            },
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub iteration: usize,
    /// Mean minibatch loss since the previous record.
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EvalRecord>,
    pub final_accuracy: f64,
}

impl TrainHistory {
    pub fn to_csv_string(&self) -> String {
        use crate::linalg::fmt_f64;
        let mut s = String::from("iteration,train_loss,test_accuracy\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{}\n",
                r.iteration,
                fmt_f64(r.train_loss),
                fmt_f64(r.test_accuracy)
            ));
        }
        s
    }
}

fn check_dataset(cfg: &RunConfig, ds: &SequenceDataset, which: &str) -> Result<()> {
    if ds.width != cfg.m || ds.classes > cfg.classes {
        return Err(Error::shape(
            "train",
            format!(
                "{which} set has width {} and {} classes; config has m={} classes={}",
                ds.width, ds.classes, cfg.m, cfg.classes
            ),
        ));
    }
    Ok(())
}

/// Batch stream used by [`train`]: substream 0 of the run seed.
pub fn batch_rng(seed: u64) -> SeededRng {
    SeededRng::substream(seed, 0)
}

/// Mean loss and mean gradient over `idx`. Samples run in parallel; the
/// reduction runs in batch order.
pub fn batch_gradient(net: &ClassifierNet, ds: &SequenceDataset, idx: &[usize]) -> Result<(f64, Gradients)> {
    let cell = net.cell.prepare();
    let per_sample: Vec<Result<(f64, Gradients)>> = idx
        .par_iter()
        .map(|&i| {
            let (logits, tape) = forward_prepared(net, &cell, &ds.sequences[i])?;
            let loss = cross_entropy(&logits, ds.labels[i])?;
            let (g, _) = backward_prepared(net, &cell, &tape, ds.labels[i])?;
            Ok((loss, g))
        })
        .collect();
    let mut total = Gradients::zeros_like(net);
    let mut loss = 0.0;
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        total.accumulate(&g);
    }
    let inv = 1.0 / idx.len() as f64;
    total.scale(inv);
    Ok((loss * inv, total))
}

/// Index of the largest logit (first on ties).
pub fn predict(net: &ClassifierNet, seq: &Matrix) -> Result<usize> {
    let (logits, _) = net.forward(seq)?;
    Ok(argmax(&logits))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `ds` classified correctly. A diverging sequence counts as wrong.
pub fn accuracy(net: &ClassifierNet, ds: &SequenceDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let cell = net.cell.prepare();
    let hits: Vec<Result<bool>> = ds
        .sequences
        .par_iter()
        .zip(&ds.labels)
        .map(|(s, &l)| match forward_prepared(net, &cell, s) {
            Ok((logits, _)) => Ok(argmax(&logits) == l),
            Err(Error::Divergence { .. }) => Ok(false),
            Err(e) => Err(e),
        })
        .collect();
    let mut correct = 0usize;
    for h in hits {
        correct += h? as usize;
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Minibatch training from [`RunConfig::init_net`]. No gradient clipping.
pub fn train(cfg: &RunConfig, train_set: &SequenceDataset, test_set: &SequenceDataset) -> Result<(ClassifierNet, TrainHistory)> {
    cfg.validate()?;
    check_dataset(cfg, train_set, "train")?;
    check_dataset(cfg, test_set, "test")?;
    let mut net = cfg.init_net()?;
    let mut opt = OptimizerState::new(cfg.optimizer, &net)?;
    let mut stream = batches(train_set, cfg.batch_size, batch_rng(cfg.seed))?;
    let mut records = Vec::new();
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    for it in 1..=cfg.iterations {
        let idx = stream.next().expect("endless stream");
        let (loss, grads) = match batch_gradient(&net, train_set, &idx) {
            Ok(v) => v,
            Err(Error::Divergence { .. }) | Err(Error::NonFinite(_)) => {
                return Err(Error::TrainingDiverged { iteration: it })
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iteration: it });
        }
        opt.step(&mut net, &grads, cfg.learning_rate)?;
        loss_sum += loss;
        loss_count += 1;
        let due = cfg.eval_every > 0 && it % cfg.eval_every == 0;
        if due || it == cfg.iterations {
            records.push(EvalRecord {
                iteration: it,
                train_loss: loss_sum / loss_count as f64,
                test_accuracy: accuracy(&net, test_set)?,
            });
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    let final_accuracy = match records.last() {
        Some(r) => r.test_accuracy,
        None => accuracy(&net, test_set)?,
    };
    Ok((net, TrainHistory { records, final_accuracy }))
}
