//! Recurrent cells: single-step transitions, analytic step Jacobians and
//! the matching vector-Jacobian products used by backpropagation.
//!
//! The antisymmetric family shares one transition matrix
//! `M = W − Wᵀ − γI` between the update path and (when gated) the input
//! gate:
//!
//! ```text
//! a = M h + V_h x + b_h
//! s = M h + V_z x + b_z          (gated kinds)
//! h' = h + ε · [σ(s) ∘] tanh(a)
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::spectral::AntisymmetricParam;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    /// `h' = tanh(W h + V x + b)`, no residual path.
    Vanilla,
    /// Standard LSTM without peepholes.
    Lstm,
    /// Euler step on `tanh((W − Wᵀ) h + V x + b)`.
    Antisym,
    /// As `Antisym` with diffusion `−γI`.
    AntisymDiffusion,
    /// Diffusive antisymmetric cell with an input gate sharing `M`.
    AntisymGated,
    /// Gated cell with an unstructured dense `W` in place of `W − Wᵀ − γI`.
    AblationGated,
}

impl CellKind {
    pub const ALL: [CellKind; 6] = [
        CellKind::Vanilla,
        CellKind::Lstm,
        CellKind::Antisym,
        CellKind::AntisymDiffusion,
        CellKind::AntisymGated,
        CellKind::AblationGated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Vanilla => "vanilla",
            CellKind::Lstm => "lstm",
            CellKind::Antisym => "antisym",
            CellKind::AntisymDiffusion => "antisym_diffusion",
            CellKind::AntisymGated => "antisym_gated",
            CellKind::AblationGated => "ablation_gated",
        }
    }

    pub fn is_antisymmetric(self) -> bool {
        matches!(
            self,
            CellKind::Antisym | CellKind::AntisymDiffusion | CellKind::AntisymGated
        )
    }

    pub fn is_gated(self) -> bool {
        matches!(self, CellKind::AntisymGated | CellKind::AblationGated)
    }

    /// Whether the kind subtracts `γI` from its transition matrix.
    pub fn uses_diffusion(self) -> bool {
        matches!(self, CellKind::AntisymDiffusion | CellKind::AntisymGated)
    }

    /// Width of the recurrent state (`2n` for the LSTM's `(h, c)`).
    pub fn state_dim(self, n: usize) -> usize {
        if self == CellKind::Lstm {
            2 * n
        } else {
            n
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CellKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown cell kind {s:?}")))
    }
}

/// Input gate weights of the gated kinds.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub v_z: Matrix,
    pub b_z: Vec<f64>,
}

/// LSTM blocks; each `W_k` is `n × (n + m)` acting on `[h; x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_o: Matrix,
    pub w_c: Matrix,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_c: Vec<f64>,
}

/// Trainable tensors of a cell. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub enum CellWeights {
    Vanilla {
        w: Matrix,
        v_h: Matrix,
        b_h: Vec<f64>,
    },
    Antisym {
        w: AntisymmetricParam,
        v_h: Matrix,
        b_h: Vec<f64>,
        gate: Option<Gate>,
    },
    Ablation {
        w: Matrix,
        v_h: Matrix,
        b_h: Vec<f64>,
        gate: Gate,
    },
    Lstm(LstmWeights),
}

impl CellWeights {
    pub fn zeros(kind: CellKind, n: usize, m: usize) -> Self {
        let gate = || Gate {
            v_z: Matrix::zeros(n, m),
            b_z: vec![0.0; n],
        };
        match kind {
            CellKind::Vanilla => CellWeights::Vanilla {
                w: Matrix::zeros(n, n),
                v_h: Matrix::zeros(n, m),
                b_h: vec![0.0; n],
            },
            CellKind::Antisym | CellKind::AntisymDiffusion | CellKind::AntisymGated => {
                CellWeights::Antisym {
                    w: AntisymmetricParam::zeros(n),
                    v_h: Matrix::zeros(n, m),
                    b_h: vec![0.0; n],
                    gate: kind.is_gated().then(gate),
                }
            }
            CellKind::AblationGated => CellWeights::Ablation {
                w: Matrix::zeros(n, n),
                v_h: Matrix::zeros(n, m),
                b_h: vec![0.0; n],
                gate: gate(),
            },
            CellKind::Lstm => {
                let blk = || Matrix::zeros(n, n + m);
                CellWeights::Lstm(LstmWeights {
                    w_f: blk(),
                    w_i: blk(),
                    w_o: blk(),
                    w_c: blk(),
                    b_f: vec![0.0; n],
                    b_i: vec![0.0; n],
                    b_o: vec![0.0; n],
                    b_c: vec![0.0; n],
                })
            }
        }
    }

    /// Every tensor as a flat slice, in a fixed order.
    pub fn buffers(&self) -> Vec<&[f64]> {
        match self {
            CellWeights::Vanilla { w, v_h, b_h } => vec![w.as_slice(), v_h.as_slice(), b_h],
            CellWeights::Antisym { w, v_h, b_h, gate } => {
                let mut out = vec![w.upper(), v_h.as_slice(), b_h.as_slice()];
                if let Some(g) = gate {
                    out.extend([g.v_z.as_slice(), g.b_z.as_slice()]);
                }
                out
            }
            CellWeights::Ablation { w, v_h, b_h, gate } => vec![
                w.as_slice(),
                v_h.as_slice(),
                b_h,
                gate.v_z.as_slice(),
                &gate.b_z,
            ],
            CellWeights::Lstm(l) => vec![
                l.w_f.as_slice(),
                l.w_i.as_slice(),
                l.w_o.as_slice(),
                l.w_c.as_slice(),
                &l.b_f,
                &l.b_i,
                &l.b_o,
                &l.b_c,
            ],
        }
    }

    /// Mutable counterpart of [`CellWeights::buffers`], same order.
    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            CellWeights::Vanilla { w, v_h, b_h } => {
                vec![w.as_mut_slice(), v_h.as_mut_slice(), b_h.as_mut_slice()]
            }
            CellWeights::Antisym { w, v_h, b_h, gate } => {
                let mut out = vec![w.upper_mut(), v_h.as_mut_slice(), b_h.as_mut_slice()];
                if let Some(g) = gate {
                    out.extend([g.v_z.as_mut_slice(), g.b_z.as_mut_slice()]);
                }
                out
            }
            CellWeights::Ablation { w, v_h, b_h, gate } => vec![
                w.as_mut_slice(),
                v_h.as_mut_slice(),
                b_h.as_mut_slice(),
                gate.v_z.as_mut_slice(),
                gate.b_z.as_mut_slice(),
            ],
            CellWeights::Lstm(l) => vec![
                l.w_f.as_mut_slice(),
                l.w_i.as_mut_slice(),
                l.w_o.as_mut_slice(),
                l.w_c.as_mut_slice(),
                l.b_f.as_mut_slice(),
                l.b_i.as_mut_slice(),
                l.b_o.as_mut_slice(),
                l.b_c.as_mut_slice(),
            ],
        }
    }

    fn matches(&self, kind: CellKind) -> bool {
        matches!(
            (self, kind),
            (CellWeights::Vanilla { .. }, CellKind::Vanilla)
                | (CellWeights::Lstm(_), CellKind::Lstm)
                | (CellWeights::Ablation { .. }, CellKind::AblationGated)
                | (CellWeights::Antisym { gate: None, .. }, CellKind::Antisym)
                | (CellWeights::Antisym { gate: None, .. }, CellKind::AntisymDiffusion)
                | (CellWeights::Antisym { gate: Some(_), .. }, CellKind::AntisymGated)
        )
    }
}

/// A cell: kind, sizes, weights and the fixed step size / diffusion.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub n: usize,
    pub m: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub weights: CellWeights,
}

impl CellParams {
    /// All-zero weights. `epsilon` is ignored by the vanilla and LSTM cells
    /// and `gamma` must be zero for kinds without diffusion.
    pub fn zeros(kind: CellKind, n: usize, m: usize, epsilon: f64, gamma: f64) -> Result<Self> {
        let p = CellParams {
            kind,
            n,
            m,
            epsilon,
            gamma,
            weights: CellWeights::zeros(kind, n, m),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("hidden width must be at least 1"));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!("invalid step size {}", self.epsilon)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!("invalid diffusion {}", self.gamma)));
        }
        if !self.kind.uses_diffusion() && self.gamma != 0.0 {
            return Err(Error::invalid(format!(
                "cell {} has no diffusion term; gamma must be 0",
                self.kind
            )));
        }
        if !self.weights.matches(self.kind) {
            return Err(Error::shape("CellParams", format!("weights do not match kind {}", self.kind)));
        }
        let (n, m) = (self.n, self.m);
        let mat_ok = |a: &Matrix, r: usize, c: usize| a.rows() == r && a.cols() == c;
        let ok = match &self.weights {
            CellWeights::Vanilla { w, v_h, b_h } => {
                mat_ok(w, n, n) && mat_ok(v_h, n, m) && b_h.len() == n
            }
            CellWeights::Antisym { w, v_h, b_h, gate } => {
                w.n() == n
                    && mat_ok(v_h, n, m)
                    && b_h.len() == n
                    && gate.as_ref().is_none_or(|g| mat_ok(&g.v_z, n, m) && g.b_z.len() == n)
            }
            CellWeights::Ablation { w, v_h, b_h, gate } => {
                mat_ok(w, n, n)
                    && mat_ok(v_h, n, m)
                    && b_h.len() == n
                    && mat_ok(&gate.v_z, n, m)
                    && gate.b_z.len() == n
            }
            CellWeights::Lstm(l) => {
                [&l.w_f, &l.w_i, &l.w_o, &l.w_c]
                    .iter()
                    .all(|w| mat_ok(w, n, n + m))
                    && [&l.b_f, &l.b_i, &l.b_o, &l.b_c].iter().all(|b| b.len() == n)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::shape("CellParams", format!("inconsistent shapes for n={n}, m={m}")))
        }
    }

    /// Width of the recurrent state.
    pub fn state_dim(&self) -> usize {
        self.kind.state_dim(self.n)
    }

    /// Dense transition matrix acting on `h`: `W − Wᵀ (− γI)` for the
    /// antisymmetric kinds, `W` for vanilla/ablation, `None` for LSTM.
    pub fn transition(&self) -> Option<Matrix> {
        match &self.weights {
            CellWeights::Antisym { w, .. } => {
                let mut m = w.expand();
                if self.kind.uses_diffusion() {
                    for i in 0..self.n {
                        m[(i, i)] -= self.gamma;
                    }
                }
                Some(m)
            }
            CellWeights::Vanilla { w, .. } | CellWeights::Ablation { w, .. } => Some(w.clone()),
            CellWeights::Lstm(_) => None,
        }
    }

    /// Caches the dense transition matrix for repeated stepping.
    pub fn prepare(&self) -> PreparedCell<'_> {
        PreparedCell {
            params: self,
            transition: self.transition(),
        }
    }
}

/// Intermediate values of one step, enough for the Jacobian and the VJP.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    pub h_prev: Vec<f64>,
    pub x: Vec<f64>,
    /// Update pre-activation (vanilla / antisymmetric / ablation).
    pub a: Vec<f64>,
    /// Gate pre-activation (gated kinds).
    pub s: Option<Vec<f64>>,
    /// Gate value `σ(s)` (gated kinds).
    pub z: Option<Vec<f64>>,
    pub lstm: Option<LstmCache>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmCache {
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub h: Vec<f64>,
    pub c: Option<Vec<f64>>,
    pub cache: StepCache,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn affine(w: &Matrix, v: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = w.matvec(v);
    for (o, bi) in out.iter_mut().zip(b) {
        *o += bi;
    }
    out
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// A cell with its dense transition matrix precomputed.
#[derive(Clone, Debug)]
pub struct PreparedCell<'a> {
    params: &'a CellParams,
    transition: Option<Matrix>,
}

impl<'a> PreparedCell<'a> {
    pub fn params(&self) -> &'a CellParams {
        self.params
    }

    pub fn step(&self, h_prev: &[f64], c_prev: Option<&[f64]>, x: &[f64]) -> Result<StepOutput> {
        let p = self.params;
        if h_prev.len() != p.n || x.len() != p.m {
            return Err(Error::shape(
                "cell_step",
                format!("h has {}, x has {}; expected {} and {}", h_prev.len(), x.len(), p.n, p.m),
            ));
        }
        match (p.kind, c_prev) {
            (CellKind::Lstm, None) => {
                return Err(Error::invalid("LSTM step requires a cell state"))
            }
            (CellKind::Lstm, Some(c)) if c.len() != p.n => {
                return Err(Error::shape("cell_step", "cell state width"))
            }
            (k, Some(_)) if k != CellKind::Lstm => {
                return Err(Error::invalid(format!("cell {k} takes no cell state")))
            }
            _ => {}
        }
        match &p.weights {
            CellWeights::Vanilla { v_h, b_h, .. } => {
                let w = self.transition.as_ref().expect("vanilla transition");
                let mut a = w.matvec(h_prev);
                add_assign(&mut a, &affine(v_h, x, b_h));
                let h = a.iter().map(|v| v.tanh()).collect();
                Ok(StepOutput {
                    h,
                    c: None,
                    cache: StepCache {
                        h_prev: h_prev.to_vec(),
                        x: x.to_vec(),
                        a,
                        s: None,
                        z: None,
                        lstm: None,
                    },
                })
            }
            CellWeights::Antisym { v_h, b_h, gate, .. } => {
                self.residual_step(h_prev, x, v_h, b_h, gate.as_ref())
            }
            CellWeights::Ablation { v_h, b_h, gate, .. } => {
                self.residual_step(h_prev, x, v_h, b_h, Some(gate))
            }
            CellWeights::Lstm(l) => {
                let c_prev = c_prev.expect("checked above");
                let mut u = h_prev.to_vec();
                u.extend_from_slice(x);
                let f: Vec<f64> = affine(&l.w_f, &u, &l.b_f).into_iter().map(sigmoid).collect();
                let i: Vec<f64> = affine(&l.w_i, &u, &l.b_i).into_iter().map(sigmoid).collect();
                let o: Vec<f64> = affine(&l.w_o, &u, &l.b_o).into_iter().map(sigmoid).collect();
                let g: Vec<f64> = affine(&l.w_c, &u, &l.b_c).into_iter().map(f64::tanh).collect();
                let c: Vec<f64> = (0..p.n).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
                let h = (0..p.n).map(|k| o[k] * c[k].tanh()).collect();
                Ok(StepOutput {
                    h,
                    c: Some(c.clone()),
                    cache: StepCache {
                        h_prev: h_prev.to_vec(),
                        x: x.to_vec(),
                        a: Vec::new(),
                        s: None,
                        z: None,
                        lstm: Some(LstmCache {
                            f,
                            i,
                            o,
                            g,
                            c_prev: c_prev.to_vec(),
                            c,
                        }),
                    },
                })
            }
        }
    }

    fn residual_step(
        &self,
        h_prev: &[f64],
        x: &[f64],
        v_h: &Matrix,
        b_h: &[f64],
        gate: Option<&Gate>,
    ) -> Result<StepOutput> {
        let eps = self.params.epsilon;
        let m = self.transition.as_ref().expect("residual transition");
        let mh = m.matvec(h_prev);
        let mut a = affine(v_h, x, b_h);
        add_assign(&mut a, &mh);
        let (s, z) = match gate {
            Some(g) => {
                let mut s = affine(&g.v_z, x, &g.b_z);
                add_assign(&mut s, &mh);
                let z: Vec<f64> = s.iter().map(|&v| sigmoid(v)).collect();
                (Some(s), Some(z))
            }
            None => (None, None),
        };
        let h = (0..h_prev.len())
            .map(|k| {
                let upd = a[k].tanh();
                let gz = z.as_ref().map_or(1.0, |z| z[k]);
                h_prev[k] + eps * gz * upd
            })
            .collect();
        Ok(StepOutput {
            h,
            c: None,
            cache: StepCache {
                h_prev: h_prev.to_vec(),
                x: x.to_vec(),
                a,
                s,
                z,
                lstm: None,
            },
        })
    }

    /// `∂h_t/∂h_{t−1}` at the cached point (`∂(h,c)_t/∂(h,c)_{t−1}` for LSTM).
    pub fn jacobian(&self, cache: &StepCache) -> Result<Matrix> {
        let p = self.params;
        let n = p.n;
        self.check_cache(cache)?;
        match &p.weights {
            CellWeights::Vanilla { .. } => {
                let d: Vec<f64> = cache.a.iter().map(|a| 1.0 - a.tanh().powi(2)).collect();
                Ok(self.transition.as_ref().unwrap().scale_rows(&d))
            }
            CellWeights::Antisym { .. } | CellWeights::Ablation { .. } => {
                let d = self.residual_diag(cache);
                let mut j = self.transition.as_ref().unwrap().scale_rows(&d);
                for k in 0..n {
                    j[(k, k)] += 1.0;
                }
                Ok(j)
            }
            CellWeights::Lstm(l) => {
                let lc = cache.lstm.as_ref().unwrap();
                let mut j = Matrix::zeros(2 * n, 2 * n);
                for r in 0..n {
                    let (f, i, o, g) = (lc.f[r], lc.i[r], lc.o[r], lc.g[r]);
                    let tc = lc.c[r].tanh();
                    let cf = lc.c_prev[r] * f * (1.0 - f);
                    let ci = g * i * (1.0 - i);
                    let cg = i * (1.0 - g * g);
                    let ho = tc * o * (1.0 - o);
                    let hc = o * (1.0 - tc * tc);
                    for col in 0..n {
                        let dc_dh = cf * l.w_f[(r, col)] + ci * l.w_i[(r, col)] + cg * l.w_c[(r, col)];
                        j[(n + r, col)] = dc_dh;
                        j[(r, col)] = ho * l.w_o[(r, col)] + hc * dc_dh;
                    }
                    j[(n + r, n + r)] = f;
                    j[(r, n + r)] = hc * f;
                }
                Ok(j)
            }
        }
    }

    /// Diagonal factor of `(J − I)/ε · M⁻¹`, i.e. `∂(update)/∂(Mh)` scaled by ε.
    fn residual_diag(&self, cache: &StepCache) -> Vec<f64> {
        let eps = self.params.epsilon;
        cache
            .a
            .iter()
            .enumerate()
            .map(|(k, &a)| {
                let ta = a.tanh();
                let dt = 1.0 - ta * ta;
                match (&cache.z, &cache.s) {
                    (Some(z), Some(_)) => eps * (z[k] * dt + ta * z[k] * (1.0 - z[k])),
                    _ => eps * dt,
                }
            })
            .collect()
    }

    fn check_cache(&self, cache: &StepCache) -> Result<()> {
        let p = self.params;
        let ok = cache.h_prev.len() == p.n
            && cache.x.len() == p.m
            && match p.kind {
                CellKind::Lstm => cache.lstm.is_some(),
                k => {
                    cache.a.len() == p.n
                        && cache.lstm.is_none()
                        && cache.z.is_some() == k.is_gated()
                }
            };
        if ok {
            Ok(())
        } else {
            Err(Error::shape("step cache", format!("cache does not belong to a {} cell of width {}", p.kind, p.n)))
        }
    }

    /// Vector-Jacobian product of one step. Given `dh = ∂L/∂h_t` (and
    /// `dc = ∂L/∂c_t` for LSTM), accumulates parameter gradients into `acc`
    /// and returns `(∂L/∂h_{t−1}, ∂L/∂c_{t−1})`.
    pub fn backward(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc: Option<&[f64]>,
        acc: &mut GradAccumulator,
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let p = self.params;
        let n = p.n;
        match (&p.weights, &mut acc.grads) {
            (CellWeights::Vanilla { .. }, CellWeights::Vanilla { w, v_h, b_h }) => {
                let wm = self.transition.as_ref().unwrap();
                let da: Vec<f64> = (0..n)
                    .map(|k| dh[k] * (1.0 - cache.a[k].tanh().powi(2)))
                    .collect();
                w.add_outer(1.0, &da, &cache.h_prev);
                v_h.add_outer(1.0, &da, &cache.x);
                add_assign(b_h, &da);
                let mut dh_prev = vec![0.0; n];
                wm.matvec_t_add(&da, &mut dh_prev);
                (dh_prev, None)
            }
            (CellWeights::Antisym { .. }, CellWeights::Antisym { v_h, b_h, gate, .. }) => {
                let dense = acc.dense_w.as_mut().expect("antisym accumulator");
                let dm = residual_backward(self, cache, dh, dense, v_h, b_h, gate.as_mut());
                let mut dh_prev = dh.to_vec();
                self.transition.as_ref().unwrap().matvec_t_add(&dm, &mut dh_prev);
                (dh_prev, None)
            }
            (CellWeights::Ablation { .. }, CellWeights::Ablation { w, v_h, b_h, gate }) => {
                let dm = residual_backward(self, cache, dh, w, v_h, b_h, Some(gate));
                let mut dh_prev = dh.to_vec();
                self.transition.as_ref().unwrap().matvec_t_add(&dm, &mut dh_prev);
                (dh_prev, None)
            }
            (CellWeights::Lstm(l), CellWeights::Lstm(gl)) => {
                let lc = cache.lstm.as_ref().expect("lstm cache");
                let dc = dc.expect("lstm backward needs dc");
                let mut dpf = vec![0.0; n];
                let mut dpi = vec![0.0; n];
                let mut dpo = vec![0.0; n];
                let mut dpg = vec![0.0; n];
                let mut dc_prev = vec![0.0; n];
                for k in 0..n {
                    let tc = lc.c[k].tanh();
                    let dct = dc[k] + dh[k] * lc.o[k] * (1.0 - tc * tc);
                    dpo[k] = dh[k] * tc * lc.o[k] * (1.0 - lc.o[k]);
                    dpf[k] = dct * lc.c_prev[k] * lc.f[k] * (1.0 - lc.f[k]);
                    dpi[k] = dct * lc.g[k] * lc.i[k] * (1.0 - lc.i[k]);
                    dpg[k] = dct * lc.i[k] * (1.0 - lc.g[k] * lc.g[k]);
                    dc_prev[k] = dct * lc.f[k];
                }
                let mut u = cache.h_prev.clone();
                u.extend_from_slice(&cache.x);
                let mut du = vec![0.0; n + p.m];
                for (dp, w, gw, gb) in [
                    (&dpf, &l.w_f, &mut gl.w_f, &mut gl.b_f),
                    (&dpi, &l.w_i, &mut gl.w_i, &mut gl.b_i),
                    (&dpo, &l.w_o, &mut gl.w_o, &mut gl.b_o),
                    (&dpg, &l.w_c, &mut gl.w_c, &mut gl.b_c),
                ] {
                    gw.add_outer(1.0, dp, &u);
                    add_assign(gb, dp);
                    w.matvec_t_add(dp, &mut du);
                }
                du.truncate(n);
                (du, Some(dc_prev))
            }
            _ => panic!("gradient accumulator does not match cell kind"),
        }
    }
}

/// Shared VJP of the residual kinds. Returns `∂L/∂(Mh)`; accumulates the
/// dense transition gradient into `dw`.
fn residual_backward(
    cell: &PreparedCell<'_>,
    cache: &StepCache,
    dh: &[f64],
    dw: &mut Matrix,
    v_h: &mut Matrix,
    b_h: &mut [f64],
    gate: Option<&mut Gate>,
) -> Vec<f64> {
    let eps = cell.params.epsilon;
    let n = dh.len();
    let mut da = vec![0.0; n];
    let mut ds = vec![0.0; n];
    for k in 0..n {
        let ta = cache.a[k].tanh();
        match &cache.z {
            Some(z) => {
                da[k] = eps * dh[k] * z[k] * (1.0 - ta * ta);
                ds[k] = eps * dh[k] * ta * z[k] * (1.0 - z[k]);
            }
            None => da[k] = eps * dh[k] * (1.0 - ta * ta),
        }
    }
    v_h.add_outer(1.0, &da, &cache.x);
    add_assign(b_h, &da);
    let dm: Vec<f64> = match gate {
        Some(g) => {
            g.v_z.add_outer(1.0, &ds, &cache.x);
            add_assign(&mut g.b_z, &ds);
            da.iter().zip(&ds).map(|(a, s)| a + s).collect()
        }
        None => da,
    };
    dw.add_outer(1.0, &dm, &cache.h_prev);
    dm
}

/// Gradient buffers for one cell. Antisymmetric kinds accumulate the dense
/// gradient of `W − Wᵀ` and fold it onto the stored triangle in
/// [`GradAccumulator::finish`].
#[derive(Clone, Debug)]
pub struct GradAccumulator {
    grads: CellWeights,
    dense_w: Option<Matrix>,
}

impl GradAccumulator {
    pub fn new(p: &CellParams) -> Self {
        GradAccumulator {
            grads: CellWeights::zeros(p.kind, p.n, p.m),
            dense_w: p.kind.is_antisymmetric().then(|| Matrix::zeros(p.n, p.n)),
        }
    }

    pub fn finish(mut self) -> CellWeights {
        if let (Some(dense), CellWeights::Antisym { w, .. }) = (&self.dense_w, &mut self.grads) {
            let mut upper = vec![0.0; w.upper().len()];
            w.pull_back(dense, &mut upper);
            w.upper_mut().copy_from_slice(&upper);
        }
        self.grads
    }
}

/// One step of `p` from `(h_prev, c_prev)` on input `x`.
pub fn cell_step(p: &CellParams, h_prev: &[f64], c_prev: Option<&[f64]>, x: &[f64]) -> Result<StepOutput> {
    p.prepare().step(h_prev, c_prev, x)
}

/// Analytic step Jacobian at the point recorded in `cache`.
pub fn step_jacobian(p: &CellParams, cache: &StepCache) -> Result<Matrix> {
    p.prepare().jacobian(cache)
}

/// Trainable scalars of the cell plus a `classes`-way linear readout.
pub fn param_count(kind: CellKind, n: usize, m: usize, classes: usize) -> usize {
    let readout = n * classes + classes;
    let gate = if kind.is_gated() { n * m + n } else { 0 };
    let cell = match kind {
        CellKind::Antisym | CellKind::AntisymDiffusion | CellKind::AntisymGated => {
            n * (n - 1) / 2 + n * m + n + gate
        }
        CellKind::Vanilla | CellKind::AblationGated => n * n + n * m + n + gate,
        CellKind::Lstm => 4 * (n * (n + m) + n),
    };
    cell + readout
}

/// Flat parameter count of a weights value (for cross-checking
/// [`param_count`]).
pub fn weights_len(w: &CellWeights) -> usize {
    w.buffers().iter().map(|b| b.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{seeded_gaussian, SeededRng};

    fn random_cell(kind: CellKind, n: usize, m: usize, seed: u64) -> CellParams {
        let gamma = if kind.uses_diffusion() { 0.05 } else { 0.0 };
        let mut p = CellParams::zeros(kind, n, m, 0.3, gamma).unwrap();
        let mut rng = SeededRng::new(seed);
        for b in p.weights.buffers_mut() {
            for v in b.iter_mut() {
                *v = rng.normal(0.0, 0.7);
            }
        }
        p
    }

    fn state(p: &CellParams, rng: &mut SeededRng) -> (Vec<f64>, Option<Vec<f64>>, Vec<f64>) {
        let h = seeded_gaussian(1, p.n, 0.0, 0.5, rng).into_vec();
        let c = (p.kind == CellKind::Lstm).then(|| seeded_gaussian(1, p.n, 0.0, 0.5, rng).into_vec());
        let x = seeded_gaussian(1, p.m, 0.0, 1.0, rng).into_vec();
        (h, c, x)
    }

    #[test]
    fn zero_fixed_point() {
        for kind in CellKind::ALL {
            let p = CellParams::zeros(kind, 3, 2, 0.1, 0.0).unwrap();
            let c = (kind == CellKind::Lstm).then(|| vec![0.0; 3]);
            let out = cell_step(&p, &[0.0; 3], c.as_deref(), &[0.0; 2]).unwrap();
            assert_eq!(out.h, vec![0.0; 3], "{kind}");
            if let Some(c) = out.c {
                assert_eq!(c, vec![0.0; 3]);
            }
        }
    }

    #[test]
    fn antisym_hand_example() {
        let mut p = CellParams::zeros(CellKind::Antisym, 2, 1, 0.1, 0.0).unwrap();
        if let CellWeights::Antisym { w, .. } = &mut p.weights {
            w.upper_mut()[0] = 1.0;
        }
        let out = cell_step(&p, &[1.0, 0.0], None, &[0.0]).unwrap();
        assert_eq!(out.cache.a, vec![0.0, -1.0]);
        assert_eq!(out.h[0], 1.0);
        assert!((out.h[1] + 0.0761594).abs() < 1e-7);

        let j = step_jacobian(&p, &out.cache).unwrap();
        let want = [1.0, 0.1, -0.0419974, 1.0];
        for (g, w) in j.as_slice().iter().zip(want) {
            assert!((g - w).abs() < 1e-7, "{g} vs {w}");
        }
    }

    #[test]
    fn gated_zero_input_half_gate() {
        let p = random_cell(CellKind::AntisymGated, 4, 2, 1);
        let mut p = p;
        if let CellWeights::Antisym { b_h, gate: Some(g), .. } = &mut p.weights {
            b_h.fill(0.0);
            g.b_z.fill(0.0);
        }
        let out = cell_step(&p, &[0.0; 4], None, &[0.0; 2]).unwrap();
        assert_eq!(out.cache.z.unwrap(), vec![0.5; 4]);
        assert_eq!(out.h, vec![0.0; 4]);
    }

    #[test]
    fn zero_step_size_jacobian_is_identity() {
        for kind in [CellKind::Antisym, CellKind::AntisymDiffusion, CellKind::AntisymGated] {
            let mut p = random_cell(kind, 5, 2, 3);
            p.epsilon = 0.0;
            let (h, _, x) = state(&p, &mut SeededRng::new(4));
            let out = cell_step(&p, &h, None, &x).unwrap();
            assert_eq!(step_jacobian(&p, &out.cache).unwrap(), Matrix::identity(5));
        }
    }

    #[test]
    fn jacobian_at_origin_is_exact() {
        let mut p = random_cell(CellKind::Antisym, 4, 2, 5);
        if let CellWeights::Antisym { b_h, .. } = &mut p.weights {
            b_h.fill(0.0);
        }
        let out = cell_step(&p, &[0.0; 4], None, &[0.0; 2]).unwrap();
        let j = step_jacobian(&p, &out.cache).unwrap();
        let want = Matrix::identity(4).add(&p.transition().unwrap().scale(p.epsilon)).unwrap();
        assert_eq!(j, want);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let delta = 1e-5;
        for kind in CellKind::ALL {
            for seed in 0..3 {
                let p = random_cell(kind, 8, 3, 10 + seed);
                let (h, c, x) = state(&p, &mut SeededRng::new(100 + seed));
                let out = cell_step(&p, &h, c.as_deref(), &x).unwrap();
                let j = step_jacobian(&p, &out.cache).unwrap();
                let mut s0 = h.clone();
                if let Some(c) = &c {
                    s0.extend_from_slice(c);
                }
                let eval = |s: &[f64]| {
                    let (hh, cc) = s.split_at(p.n);
                    let o = cell_step(&p, hh, c.as_ref().map(|_| cc), &x).unwrap();
                    let mut v = o.h;
                    if let Some(c) = o.c {
                        v.extend(c);
                    }
                    v
                };
                let dim = s0.len();
                for col in 0..dim {
                    let mut sp = s0.clone();
                    let mut sm = s0.clone();
                    sp[col] += delta;
                    sm[col] -= delta;
                    let (fp, fm) = (eval(&sp), eval(&sm));
                    for row in 0..dim {
                        let fd = (fp[row] - fm[row]) / (2.0 * delta);
                        let an = j[(row, col)];
                        let rel = (fd - an).abs() / (1e-8f64).max(fd.abs() + an.abs());
                        assert!(rel <= 1e-6 || (fd - an).abs() < 1e-10, "{kind} seed {seed} ({row},{col}): {fd} vs {an}");
                    }
                }
            }
        }
    }

    #[test]
    fn saturated_gate_matches_diffusion_cell() {
        let p_gated = random_cell(CellKind::AntisymGated, 6, 2, 8);
        let mut p_diff = CellParams::zeros(CellKind::AntisymDiffusion, 6, 2, p_gated.epsilon, p_gated.gamma).unwrap();
        let mut p_gated = p_gated;
        if let (
            CellWeights::Antisym { w, v_h, b_h, gate: Some(g) },
            CellWeights::Antisym { w: w2, v_h: v2, b_h: b2, .. },
        ) = (&mut p_gated.weights, &mut p_diff.weights)
        {
            g.v_z = Matrix::zeros(6, 2);
            g.b_z.fill(50.0);
            *w2 = w.clone();
            *v2 = v_h.clone();
            *b2 = b_h.clone();
        }
        let (h, _, x) = state(&p_gated, &mut SeededRng::new(9));
        let a = cell_step(&p_gated, &h, None, &x).unwrap();
        let b = cell_step(&p_diff, &h, None, &x).unwrap();
        for (u, v) in a.h.iter().zip(&b.h) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = CellParams::zeros(CellKind::Lstm, 3, 2, 0.1, 0.0).unwrap();
        assert!(cell_step(&p, &[0.0; 3], None, &[0.0; 2]).is_err());
        assert!(cell_step(&p, &[0.0; 3], Some(&[0.0; 3]), &[0.0; 3]).is_err());
        let p = CellParams::zeros(CellKind::Antisym, 3, 2, 0.1, 0.0).unwrap();
        assert!(cell_step(&p, &[0.0; 3], Some(&[0.0; 3]), &[0.0; 2]).is_err());
        assert!(CellParams::zeros(CellKind::Vanilla, 3, 2, 0.1, 0.5).is_err());
        assert!(CellParams::zeros(CellKind::AntisymDiffusion, 3, 2, 0.1, -1.0).is_err());
    }

    #[test]
    fn param_counts() {
        assert_eq!(param_count(CellKind::AntisymDiffusion, 128, 1, 10), 9674);
        assert_eq!(param_count(CellKind::Lstm, 128, 1, 10), 67850);
        assert_eq!(param_count(CellKind::AblationGated, 196, 3, 10), 41954);
        for kind in CellKind::ALL {
            let w = CellWeights::zeros(kind, 7, 3);
            assert_eq!(weights_len(&w) + 7 * 4 + 4, param_count(kind, 7, 3, 4), "{kind}");
        }
    }

    #[test]
    fn kind_names_roundtrip() {
        for kind in CellKind::ALL {
            assert_eq!(kind.name().parse::<CellKind>().unwrap(), kind);
        }
        assert!("gru".parse::<CellKind>().is_err());
    }
}
