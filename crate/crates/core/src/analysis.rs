//! End-to-end Jacobians `∂h_T/∂h_0` and their eigenvalue statistics over
//! sweeps of cell kind, diffusion and sequence length.

use std::io::Write;

use rayon::prelude::*;

use crate::cells::{CellKind, CellParams};
use crate::error::{Error, Result};
use crate::linalg::{fmt_f64, Matrix, SeededRng};
use crate::network::{unroll, ClassifierNet};
use crate::optim::{init_params, InitSpec};
use crate::spectral::{eigenvalues, spectral_stats, ComplexSpectrum};

/// `J_T ⋯ J_1` for the run of `cell` over `seq` from the zero state.
/// The LSTM product acts on the stacked state `[h; c]`.
pub fn end_to_end_jacobian(cell: &CellParams, seq: &Matrix) -> Result<Matrix> {
    end_to_end_jacobian_from(cell, seq, None)
}

pub fn end_to_end_jacobian_from(cell: &CellParams, seq: &Matrix, state0: Option<&[f64]>) -> Result<Matrix> {
    let prepared = cell.prepare();
    let (_, _, caches) = unroll(&prepared, seq, state0)?;
    let mut acc = Matrix::identity(cell.state_dim());
    for c in &caches {
        acc = prepared.jacobian(c)?.matmul(&acc)?;
    }
    Ok(acc)
}

/// Jacobian product kept as `matrix · exp(log_scale)` so long runs neither
/// overflow nor underflow.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledProduct {
    pub matrix: Matrix,
    pub log_scale: f64,
}

impl ScaledProduct {
    pub fn identity(dim: usize) -> Self {
        ScaledProduct {
            matrix: Matrix::identity(dim),
            log_scale: 0.0,
        }
    }

    /// Left-multiplies by `j` and renormalizes when the entries drift far from one.
    pub fn push(&mut self, j: &Matrix) -> Result<()> {
        self.matrix = j.matmul(&self.matrix)?;
        let m = self.matrix.max_abs();
        if m > 0.0 && !(1e-100..=1e100).contains(&m) {
            self.matrix = self.matrix.scale(1.0 / m);
            self.log_scale += m.ln();
        }
        Ok(())
    }

    pub fn unscaled(&self) -> Matrix {
        self.matrix.scale(self.log_scale.exp())
    }

    /// Eigenvalues of the product. The `bool` is false when the solver
    /// stopped early; the spectrum is then partial.
    pub fn spectrum(&self) -> Result<(ComplexSpectrum, bool)> {
        let s = self.log_scale.exp();
        match eigenvalues(&self.matrix) {
            Ok(sp) => Ok((sp.scaled(s), true)),
            Err(Error::NoConvergence { partial, .. }) => Ok((partial.scaled(s), false)),
            Err(e) => Err(e),
        }
    }

    /// Mean and population std of the eigenvalue moduli, computed on the
    /// normalized matrix and rescaled so tiny spreads do not underflow.
    /// NaN when the solver found no eigenvalue at all.
    pub fn stats(&self) -> Result<(f64, f64, bool)> {
        let (spectrum, converged) = match eigenvalues(&self.matrix) {
            Ok(sp) => (sp, true),
            Err(Error::NoConvergence { partial, .. }) => (*partial, false),
            Err(e) => return Err(e),
        };
        let s = self.log_scale.exp();
        Ok(match spectral_stats(&spectrum) {
            Ok(st) => (st.mean_modulus * s, st.std_modulus * s, converged),
            Err(_) => (f64::NAN, f64::NAN, converged),
        })
    }
}

/// [`end_to_end_jacobian`] with renormalization, snapshotted after each
/// length in `lengths` (ascending, each ≤ `seq.rows()`).
pub fn scaled_jacobian_snapshots(cell: &CellParams, seq: &Matrix, lengths: &[usize]) -> Result<Vec<ScaledProduct>> {
    if lengths.windows(2).any(|w| w[0] > w[1]) || lengths.last().is_some_and(|&t| t > seq.rows()) {
        return Err(Error::invalid("snapshot lengths must be ascending and within the sequence"));
    }
    let prepared = cell.prepare();
    let (_, _, caches) = unroll(&prepared, seq, None)?;
    let mut prod = ScaledProduct::identity(cell.state_dim());
    let mut out = Vec::with_capacity(lengths.len());
    let mut next = lengths.iter().peekable();
    while next.peek() == Some(&&0) {
        out.push(prod.clone());
        next.next();
    }
    for (t, c) in caches.iter().enumerate() {
        prod.push(&prepared.jacobian(c)?)?;
        while next.peek() == Some(&&(t + 1)) {
            out.push(prod.clone());
            next.next();
        }
    }
    Ok(out)
}

/// Where a sweep gets its networks.
#[derive(Clone, Debug, PartialEq)]
pub enum NetSource {
    /// Fresh random nets for every listed kind.
    Init { kinds: Vec<CellKind>, sigma_w: f64 },
    /// One fixed net. For kinds with diffusion the sweep overrides its γ.
    Checkpoint(Box<ClassifierNet>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub source: NetSource,
    pub n: usize,
    pub m: usize,
    pub epsilon: f64,
    pub gamma_list: Vec<f64>,
    pub t_list: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_list.is_empty() || self.t_list.is_empty() || self.samples == 0 {
            return Err(Error::invalid("gamma list, T list and sample count must be nonempty"));
        }
        if self.t_list.contains(&0) {
            return Err(Error::invalid("every T must be at least 1"));
        }
        if let NetSource::Init { kinds, .. } = &self.source {
            if kinds.is_empty() {
                return Err(Error::invalid("cell list must be nonempty"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub kind: CellKind,
    pub gamma: f64,
    pub t: usize,
    pub sample: usize,
    pub mean_modulus: f64,
    pub std_modulus: f64,
    pub converged: bool,
}

pub const SWEEP_HEADER: &str = "kind,gamma,T,sample,mean_modulus,std_modulus,converged";

/// Seed of the random net for `sample`; independent of kind, γ and T.
pub fn sample_init_seed(seed: u64, sample: usize) -> u64 {
    SeededRng::substream(seed, 2 * sample as u64).next_u64()
}

/// `N(0, 1)` input of `t × m` for `sample`. Shorter runs see a prefix of
/// longer ones.
pub fn sample_input(seed: u64, sample: usize, t: usize, m: usize) -> Matrix {
    let mut rng = SeededRng::substream(seed, 2 * sample as u64 + 1);
    let data = (0..t * m).map(|_| rng.standard_normal()).collect();
    Matrix::from_vec(t, m, data).expect("finite normals")
}

/// One row per (kind, γ, T, sample), in that nesting order. Kinds without
/// diffusion ignore the γ list and emit rows with γ = 0.
pub fn spectrum_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut lengths = cfg.t_list.clone();
    lengths.sort_unstable();
    lengths.dedup();
    let t_max = *lengths.last().expect("nonempty");

    let kinds: Vec<CellKind> = match &cfg.source {
        NetSource::Init { kinds, .. } => kinds.clone(),
        NetSource::Checkpoint(net) => vec![net.cell.kind],
    };
    let mut tasks = Vec::new();
    for &kind in &kinds {
        let gammas = if kind.uses_diffusion() { cfg.gamma_list.clone() } else { vec![0.0] };
        for g in gammas {
            for s in 0..cfg.samples {
                tasks.push((kind, g, s));
            }
        }
    }

    let results: Vec<Result<Vec<SweepRow>>> = tasks
        .par_iter()
        .map(|&(kind, gamma, sample)| {
            let cell = sweep_cell(cfg, kind, gamma, sample)?;
            let seq = sample_input(cfg.seed, sample, t_max, cell.m);
            let snaps = scaled_jacobian_snapshots(&cell, &seq, &lengths)?;
            cfg.t_list
                .iter()
                .map(|t| {
                    let k = lengths.binary_search(t).expect("deduplicated lengths");
                    let (mean, std, converged) = snaps[k].stats()?;
                    Ok(SweepRow {
                        kind,
                        gamma,
                        t: *t,
                        sample,
                        mean_modulus: mean,
                        std_modulus: std,
                        converged,
                    })
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    // tasks are (kind, γ, sample)-major; reorder to (kind, γ, T, sample)
    let per_group = cfg.samples * cfg.t_list.len();
    let mut ordered = Vec::with_capacity(rows.len());
    for group in rows.chunks(per_group) {
        for ti in 0..cfg.t_list.len() {
            for s in 0..cfg.samples {
                ordered.push(group[s * cfg.t_list.len() + ti].clone());
            }
        }
    }
    Ok(ordered)
}

fn sweep_cell(cfg: &SweepConfig, kind: CellKind, gamma: f64, sample: usize) -> Result<CellParams> {
    match &cfg.source {
        NetSource::Init { sigma_w, .. } => {
            let spec = InitSpec {
                sigma_w: *sigma_w,
                seed: sample_init_seed(cfg.seed, sample),
            };
            Ok(init_params(kind, cfg.n, cfg.m, 1, cfg.epsilon, gamma, &spec)?.cell)
        }
        NetSource::Checkpoint(net) => {
            let mut cell = net.cell.clone();
            if kind.uses_diffusion() {
                cell.gamma = gamma;
            }
            cell.validate()?;
            Ok(cell)
        }
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.kind,
            fmt_f64(r.gamma),
            r.t,
            r.sample,
            fmt_f64(r.mean_modulus),
            fmt_f64(r.std_modulus),
            r.converged
        )?;
    }
    Ok(())
}
