//! Sequence classifier: unroll a cell from the zero state, read the last
//! hidden state through a linear layer, score with softmax cross-entropy.
//! Gradients come from reverse-mode backpropagation through time.

use crate::cells::{CellKind, CellParams, CellWeights, GradAccumulator, PreparedCell, StepCache};
use crate::error::{Error, Result};
use crate::linalg::{fmt_f64, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierNet {
    pub cell: CellParams,
    /// `classes × n`
    pub readout_w: Matrix,
    pub readout_b: Vec<f64>,
    pub classes: usize,
}

impl ClassifierNet {
    /// Zero readout on top of `cell`.
    pub fn new(cell: CellParams, classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("need at least one class"));
        }
        cell.validate()?;
        let n = cell.n;
        Ok(ClassifierNet {
            cell,
            readout_w: Matrix::zeros(classes, n),
            readout_b: vec![0.0; classes],
            classes,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        if self.readout_w.rows() != self.classes
            || self.readout_w.cols() != self.cell.n
            || self.readout_b.len() != self.classes
        {
            return Err(Error::shape(
                "ClassifierNet",
                format!(
                    "readout {}x{} / bias {} for n={} classes={}",
                    self.readout_w.rows(),
                    self.readout_w.cols(),
                    self.readout_b.len(),
                    self.cell.n,
                    self.classes
                ),
            ));
        }
        Ok(())
    }

    /// All trainable tensors: cell buffers, then readout weights and bias.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out = self.cell.weights.buffers();
        out.push(self.readout_w.as_slice());
        out.push(&self.readout_b);
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.cell.weights.buffers_mut();
        out.push(self.readout_w.as_mut_slice());
        out.push(&mut self.readout_b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    pub fn forward(&self, seq: &Matrix) -> Result<(Vec<f64>, ForwardTape)> {
        forward(self, seq)
    }

    /// Plain-text checkpoint: a `key=value` header, then one line of
    /// comma-separated values per buffer in [`ClassifierNet::buffers`] order.
    pub fn to_checkpoint_string(&self) -> String {
        let c = &self.cell;
        let mut s = format!(
            "{CHECKPOINT_MAGIC}\nkind={}\nn={}\nm={}\nclasses={}\nepsilon={}\ngamma={}\n",
            c.kind,
            c.n,
            c.m,
            self.classes,
            fmt_f64(c.epsilon),
            fmt_f64(c.gamma)
        );
        for buf in self.buffers() {
            let vals: Vec<String> = buf.iter().map(|&v| fmt_f64(v)).collect();
            s.push_str(&vals.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut field = |key: &str| -> Result<String> {
            lines
                .next()
                .and_then(|l| l.strip_prefix(key)?.strip_prefix('=').map(str::to_string))
                .ok_or_else(|| Error::Format(format!("checkpoint: expected {key}=")))
        };
        let bad = |key: &str| Error::Format(format!("checkpoint: malformed {key}"));
        let kind: CellKind = field("kind")?.parse()?;
        let n: usize = field("n")?.parse().map_err(|_| bad("n"))?;
        let m: usize = field("m")?.parse().map_err(|_| bad("m"))?;
        let classes: usize = field("classes")?.parse().map_err(|_| bad("classes"))?;
        let epsilon: f64 = field("epsilon")?.parse().map_err(|_| bad("epsilon"))?;
        let gamma: f64 = field("gamma")?.parse().map_err(|_| bad("gamma"))?;
        let mut net = ClassifierNet::new(CellParams::zeros(kind, n, m, epsilon, gamma)?, classes)?;
        for (i, buf) in net.buffers_mut().into_iter().enumerate() {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("checkpoint: missing buffer {i}")))?;
            let vals = line
                .split(',')
                .filter(|v| !v.is_empty())
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad("value")))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != buf.len() || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!(
                    "checkpoint: buffer {i} needs {} finite values, found {}",
                    buf.len(),
                    vals.len()
                )));
            }
            buf.copy_from_slice(&vals);
        }
        Ok(net)
    }
}

const CHECKPOINT_MAGIC: &str = "antisym-rnn checkpoint v1";

/// Per-step caches of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTape {
    pub caches: Vec<StepCache>,
    pub h_final: Vec<f64>,
    pub c_final: Option<Vec<f64>>,
    pub logits: Vec<f64>,
}

/// Gradient buffers laid out like [`ClassifierNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub cell: CellWeights,
    pub readout_w: Matrix,
    pub readout_b: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &ClassifierNet) -> Self {
        Gradients {
            cell: CellWeights::zeros(net.cell.kind, net.cell.n, net.cell.m),
            readout_w: Matrix::zeros(net.classes, net.cell.n),
            readout_b: vec![0.0; net.classes],
        }
    }

    /// Same order as [`ClassifierNet::buffers`].
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out = self.cell.buffers();
        out.push(self.readout_w.as_slice());
        out.push(&self.readout_b);
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.cell.buffers_mut();
        out.push(self.readout_w.as_mut_slice());
        out.push(&mut self.readout_b);
        out
    }

    /// `self += other`, elementwise.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.buffers_mut().into_iter().zip(other.buffers()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for buf in self.buffers_mut() {
            for v in buf.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// Runs the cell over `seq` (rows are time steps) from `state0`, which is
/// `h_0` or `[h_0; c_0]` for the LSTM. `None` starts from zero.
pub fn unroll(
    cell: &PreparedCell<'_>,
    seq: &Matrix,
    state0: Option<&[f64]>,
) -> Result<(Vec<f64>, Option<Vec<f64>>, Vec<StepCache>)> {
    let p = cell.params();
    if seq.cols() != p.m {
        return Err(Error::shape(
            "forward",
            format!("sequence has {} columns, cell expects m={}", seq.cols(), p.m),
        ));
    }
    let lstm = p.kind == CellKind::Lstm;
    let (mut h, mut c) = match state0 {
        Some(s) => {
            if s.len() != p.state_dim() {
                return Err(Error::shape("forward", "initial state width"));
            }
            let (h, c) = s.split_at(p.n);
            (h.to_vec(), lstm.then(|| c.to_vec()))
        }
        None => (vec![0.0; p.n], lstm.then(|| vec![0.0; p.n])),
    };
    let mut caches = Vec::with_capacity(seq.rows());
    for t in 0..seq.rows() {
        let out = cell.step(&h, c.as_deref(), seq.row(t))?;
        let finite = out.h.iter().all(|v| v.is_finite())
            && out.c.as_ref().is_none_or(|c| c.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Divergence { step: t + 1 });
        }
        h = out.h;
        c = out.c;
        caches.push(out.cache);
    }
    Ok((h, c, caches))
}

/// Logits for `seq`, with the tape needed by [`backward`].
pub fn forward(net: &ClassifierNet, seq: &Matrix) -> Result<(Vec<f64>, ForwardTape)> {
    forward_prepared(net, &net.cell.prepare(), seq)
}

pub(crate) fn forward_prepared(
    net: &ClassifierNet,
    cell: &PreparedCell<'_>,
    seq: &Matrix,
) -> Result<(Vec<f64>, ForwardTape)> {
    let (h, c, caches) = unroll(cell, seq, None)?;
    let mut logits = net.readout_w.matvec(&h);
    for (l, b) in logits.iter_mut().zip(&net.readout_b) {
        *l += b;
    }
    Ok((
        logits.clone(),
        ForwardTape {
            caches,
            h_final: h,
            c_final: c,
            logits,
        },
    ))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−log softmax(logits)[label]`, computed after subtracting the max logit.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    Ok(sum.ln() - (logits[label] - max))
}

/// `∂loss/∂logits = softmax − onehot`.
pub fn logits_grad(logits: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let mut g = softmax(logits);
    g[label] -= 1.0;
    Ok(g)
}

/// Exact gradient of the cross-entropy loss with respect to every parameter.
pub fn backward(net: &ClassifierNet, tape: &ForwardTape, label: usize) -> Result<Gradients> {
    backward_prepared(net, &net.cell.prepare(), tape, label).map(|(g, _)| g)
}

/// Like [`backward`], also returning `∂loss/∂state_0` (`[h_0; c_0]` for LSTM).
pub fn backward_with_initial_state(
    net: &ClassifierNet,
    tape: &ForwardTape,
    label: usize,
) -> Result<(Gradients, Vec<f64>)> {
    backward_prepared(net, &net.cell.prepare(), tape, label)
}

pub(crate) fn backward_prepared(
    net: &ClassifierNet,
    cell: &PreparedCell<'_>,
    tape: &ForwardTape,
    label: usize,
) -> Result<(Gradients, Vec<f64>)> {
    let p = &net.cell;
    let tape_ok = tape.logits.len() == net.classes
        && tape.h_final.len() == p.n
        && tape.c_final.is_some() == (p.kind == CellKind::Lstm)
        && tape.caches.iter().all(|c| c.h_prev.len() == p.n && c.x.len() == p.m);
    if !tape_ok {
        return Err(Error::shape("backward", "tape was not produced by this network"));
    }
    let dlogits = logits_grad(&tape.logits, label)?;

    let mut readout_w = Matrix::zeros(net.classes, p.n);
    readout_w.add_outer(1.0, &dlogits, &tape.h_final);
    let readout_b = dlogits.clone();

    let mut dh = vec![0.0; p.n];
    net.readout_w.matvec_t_add(&dlogits, &mut dh);
    let mut dc = tape.c_final.as_ref().map(|_| vec![0.0; p.n]);

    let mut acc = GradAccumulator::new(p);
    for cache in tape.caches.iter().rev() {
        let (dh_prev, dc_prev) = cell.backward(cache, &dh, dc.as_deref(), &mut acc);
        dh = dh_prev;
        dc = dc_prev;
    }
    let mut d_state0 = dh;
    if let Some(dc) = dc {
        d_state0.extend(dc);
    }
    Ok((
        Gradients {
            cell: acc.finish(),
            readout_w,
            readout_b,
        },
        d_state0,
    ))
}

/// Largest relative disagreement between central differences and
/// [`backward`] over every parameter scalar:
/// `|g_fd − g_bp| / max(1e-8, |g_fd| + |g_bp|)`.
pub fn finite_diff_check(net: &ClassifierNet, seq: &Matrix, label: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let (_, tape) = forward(net, seq)?;
    let grads = backward(net, &tape, label)?;
    let analytic: Vec<f64> = grads.buffers().concat();

    let loss_at = |probe: &ClassifierNet| -> Result<f64> {
        let (logits, _) = forward(probe, seq)?;
        cross_entropy(&logits, label)
    };
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    let sizes: Vec<usize> = net.buffers().iter().map(|b| b.len()).collect();
    for (b, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let orig = probe.buffers()[b][k];
            probe.buffers_mut()[b][k] = orig + delta;
            let lp = loss_at(&probe)?;
            probe.buffers_mut()[b][k] = orig - delta;
            let lm = loss_at(&probe)?;
            probe.buffers_mut()[b][k] = orig;
            let fd = (lp - lm) / (2.0 * delta);
            let bp = analytic[flat];
            let rel = (fd - bp).abs() / (1e-8f64).max(fd.abs() + bp.abs());
            worst = worst.max(rel);
            flat += 1;
        }
    }
    Ok(worst)
}
