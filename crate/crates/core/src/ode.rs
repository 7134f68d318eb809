//! Forward Euler integration, stability classification and 2-D phase portraits.

use crate::error::{Error, Result};
use crate::linalg::{seeded_gaussian, ComplexScalar, Matrix, SeededRng};
use crate::spectral::ComplexSpectrum;

/// States with any entry above this magnitude are treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Default threshold for "real part ≈ 0".
pub const CRITICAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub points: Vec<Vec<f64>>,
    pub epsilon: f64,
    /// Step at which the state left the finite region, if it did.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn norms(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// Integrates `h' = f(h)` with `h_t = h_{t−1} + ε·f(h_{t−1})`.
///
/// Stops early, setting `diverged_at`, when an update is non-finite or
/// exceeds [`DIVERGENCE_LIMIT`]; the offending state is not recorded.
pub fn forward_euler<F>(mut f: F, h0: &[f64], epsilon: f64, steps: usize) -> Result<Trajectory>
where
    F: FnMut(usize, &[f64]) -> Vec<f64>,
{
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {epsilon}")));
    }
    let mut points = Vec::with_capacity(steps + 1);
    points.push(h0.to_vec());
    let mut diverged_at = None;
    for t in 1..=steps {
        let prev = &points[t - 1];
        let dh = f(t, prev);
        assert_eq!(dh.len(), prev.len(), "vector field changed the state dimension");
        let next: Vec<f64> = prev.iter().zip(&dh).map(|(h, d)| h + epsilon * d).collect();
        if next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            diverged_at = Some(t);
            break;
        }
        points.push(next);
    }
    Ok(Trajectory {
        points,
        epsilon,
        diverged_at,
    })
}

/// `|1 + ε·λ|`, the per-step growth of the Euler scheme on `y' = λy`.
pub fn amplification_factor(lambda: ComplexScalar, epsilon: f64) -> f64 {
    (ComplexScalar::new(1.0, 0.0) + lambda * epsilon).norm()
}

/// Whether every mode satisfies `|1 + ελ| ≤ 1` (up to 1e-12).
pub fn euler_stable(spectrum: &ComplexSpectrum, epsilon: f64) -> Result<bool> {
    if spectrum.is_empty() {
        return Err(Error::Empty("spectrum"));
    }
    let worst = spectrum
        .values()
        .iter()
        .map(|&l| amplification_factor(l, epsilon))
        .fold(0.0, f64::max);
    Ok(worst <= 1.0 + 1e-12)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StabilityClass {
    Stable,
    Unstable,
    Critical,
}

/// Classifies a linearization by the real parts of its eigenvalues.
pub fn ode_stability_class(spectrum: &ComplexSpectrum, tol: f64) -> Result<StabilityClass> {
    let max_re = spectrum.max_re().ok_or(Error::Empty("spectrum"))?;
    Ok(if max_re > tol {
        StabilityClass::Unstable
    } else if spectrum.max_abs_re() <= tol {
        StabilityClass::Critical
    } else {
        StabilityClass::Stable
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DynamicsKind {
    /// `h' = A h`
    Linear2d,
    /// `h' = tanh((A − γI) h + x)`
    VanillaRnn2d,
    /// `h' = tanh((A − Aᵀ − γI) h + x)`
    Antisym2d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputMode {
    None,
    /// I.i.d. standard normal inputs through `V = I₂`; one input sequence
    /// drawn from the seed is shared by every trajectory of a portrait.
    Gaussian(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsSpec {
    pub kind: DynamicsKind,
    pub matrix: Matrix,
    pub gamma: f64,
    pub input: InputMode,
}

impl DynamicsSpec {
    pub fn new(kind: DynamicsKind, matrix: Matrix, gamma: f64, input: InputMode) -> Result<Self> {
        if matrix.rows() != 2 || matrix.cols() != 2 {
            return Err(Error::shape(
                "DynamicsSpec",
                format!("expected 2x2, got {}x{}", matrix.rows(), matrix.cols()),
            ));
        }
        if !(gamma >= 0.0) {
            return Err(Error::invalid(format!("diffusion must be non-negative, got {gamma}")));
        }
        Ok(DynamicsSpec {
            kind,
            matrix,
            gamma,
            input,
        })
    }

    /// The matrix acting on `h` inside the vector field.
    pub fn transition(&self) -> Matrix {
        let base = match self.kind {
            DynamicsKind::Linear2d => return self.matrix.clone(),
            DynamicsKind::VanillaRnn2d => self.matrix.clone(),
            DynamicsKind::Antisym2d => self
                .matrix
                .sub(&self.matrix.transpose())
                .expect("square"),
        };
        base.sub(&Matrix::identity(2).scale(self.gamma)).expect("2x2")
    }
}

/// Named systems for the portrait figures. `scale` is `a = b = β`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NamedSystem {
    /// Standard Gaussian `A` drawn from the seed, no structure.
    Vanilla,
    /// `diag(+a, +b)`
    Positive,
    /// `diag(−a, −b)`
    Negative,
    /// `[[0, β], [−β, 0]]`
    Imaginary,
    /// `[[−γ, β], [−β, −γ]]`
    ImaginaryDiffusion,
}

impl NamedSystem {
    pub fn build(self, scale: f64, gamma: f64, seed: u64, input: InputMode) -> Result<DynamicsSpec> {
        let m = match self {
            NamedSystem::Vanilla => seeded_gaussian(2, 2, 0.0, 1.0, &mut SeededRng::new(seed)),
            NamedSystem::Positive => Matrix::from_diag(&[scale, scale]),
            NamedSystem::Negative => Matrix::from_diag(&[-scale, -scale]),
            NamedSystem::Imaginary | NamedSystem::ImaginaryDiffusion => {
                Matrix::from_rows(&[[0.0, scale], [-scale, 0.0]])?
            }
        };
        let gamma = match self {
            NamedSystem::ImaginaryDiffusion => gamma,
            _ => 0.0,
        };
        DynamicsSpec::new(DynamicsKind::VanillaRnn2d, m, gamma, input)
    }
}

/// Square grid of initial conditions over `[min, max]²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub points_per_axis: usize,
}

impl Grid {
    /// Initial conditions in row-major order: the first coordinate is the
    /// slow index.
    pub fn initial_conditions(&self) -> Vec<[f64; 2]> {
        let k = self.points_per_axis;
        let coord = |i: usize| {
            if k == 1 {
                self.min
            } else {
                self.min + (self.max - self.min) * i as f64 / (k - 1) as f64
            }
        };
        (0..k)
            .flat_map(|i| (0..k).map(move |j| [coord(i), coord(j)]))
            .collect()
    }
}

/// One Euler trajectory per grid point.
pub fn phase_portrait(spec: &DynamicsSpec, grid: &Grid, epsilon: f64, steps: usize) -> Result<Vec<Trajectory>> {
    if grid.points_per_axis == 0 {
        return Err(Error::invalid("grid needs at least one point per axis"));
    }
    let m = spec.transition();
    let inputs: Option<Vec<[f64; 2]>> = match spec.input {
        InputMode::None => None,
        InputMode::Gaussian(seed) => {
            let mut rng = SeededRng::new(seed);
            Some(
                (0..steps)
                    .map(|_| [rng.standard_normal(), rng.standard_normal()])
                    .collect(),
            )
        }
    };
    grid.initial_conditions()
        .iter()
        .map(|h0| {
            forward_euler(
                |t, h| {
                    let mut a = m.matvec(h);
                    if let Some(x) = &inputs {
                        a[0] += x[t - 1][0];
                        a[1] += x[t - 1][1];
                    }
                    match spec.kind {
                        DynamicsKind::Linear2d => a,
                        _ => a.into_iter().map(f64::tanh).collect(),
                    }
                },
                h0,
                epsilon,
                steps,
            )
        })
        .collect()
}
