use antisym_rnn::analysis::end_to_end_jacobian;
use antisym_rnn::cells::{cell_step, step_jacobian, CellKind};
use antisym_rnn::data::{fixed_permutation, noise_pad, planted_signal_dataset, SequenceDataset};
use antisym_rnn::linalg::{fmt_f64, seeded_gaussian};
use antisym_rnn::network::{cross_entropy, softmax};
use antisym_rnn::ode::{forward_euler, ode_stability_class, StabilityClass};
use antisym_rnn::optim::{adagrad_update, init_params, InitSpec};
use antisym_rnn::spectral::{eigenvalues, verify_dw_imaginary, AntisymmetricParam};
use antisym_rnn::{Matrix, SeededRng};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    seeded_gaussian(rows, cols, 0.0, 1.0, &mut SeededRng::new(seed))
}

fn antisym(n: usize, seed: u64) -> AntisymmetricParam {
    let mut rng = SeededRng::new(seed);
    let upper = (0..AntisymmetricParam::len_for(n)).map(|_| rng.standard_normal()).collect();
    AntisymmetricParam::new(n, upper).unwrap()
}

/// Determinant by Gaussian elimination with partial pivoting.
fn det(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut a = m.clone();
    let mut d = 1.0;
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs())).unwrap();
        if a[(p, k)] == 0.0 {
            return 0.0;
        }
        if p != k {
            for j in 0..n {
                let t = a[(k, j)];
                a[(k, j)] = a[(p, j)];
                a[(p, j)] = t;
            }
            d = -d;
        }
        d *= a[(k, k)];
        for i in k + 1..n {
            let f = a[(i, k)] / a[(k, k)];
            for j in k..n {
                let v = a[(k, j)];
                a[(i, j)] -= f * v;
            }
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transpose_is_an_involution(r in 1usize..9, c in 1usize..9, seed in any::<u64>()) {
        let m = matrix(r, c, seed);
        prop_assert_eq!(m.transpose().transpose(), m);
    }

    #[test]
    fn identity_products_are_exact(r in 1usize..9, c in 1usize..9, seed in any::<u64>()) {
        let m = matrix(r, c, seed);
        prop_assert_eq!(Matrix::identity(r).matmul(&m).unwrap(), m.clone());
        prop_assert_eq!(m.matmul(&Matrix::identity(c)).unwrap(), m);
    }

    #[test]
    fn gaussian_draws_are_reproducible(r in 1usize..6, c in 1usize..6, mean in -5.0f64..5.0, std in 0.0f64..3.0, seed in any::<u64>()) {
        let a = seeded_gaussian(r, c, mean, std, &mut SeededRng::new(seed));
        let b = seeded_gaussian(r, c, mean, std, &mut SeededRng::new(seed));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip_is_exact(r in 1usize..6, c in 1usize..6, seed in any::<u64>(), scale in -300i32..300) {
        let m = matrix(r, c, seed).scale(10f64.powi(scale));
        let back = Matrix::read_csv(m.to_csv_string().as_bytes()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn number_format_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let back: f64 = fmt_f64(v).parse().unwrap();
        prop_assert!(back == v);
    }

    #[test]
    fn expansion_is_antisymmetric(n in 1usize..12, seed in any::<u64>()) {
        let p = antisym(n, seed);
        let w = p.expand();
        prop_assert_eq!(w.add(&w.transpose()).unwrap(), Matrix::zeros(n, n));
        for i in 0..n {
            for j in i + 1..n {
                prop_assert_eq!(w[(i, j)], p.upper()[p.offset(i, j)]);
            }
        }
    }

    #[test]
    fn pull_back_is_adjoint_of_expansion(n in 2usize..10, seed in any::<u64>()) {
        // <G, expand(δ)> == <pull_back(G), δ>
        let g = matrix(n, n, seed);
        let delta = antisym(n, seed ^ 0xabcd);
        let lhs: f64 = g.as_slice().iter().zip(delta.expand().as_slice()).map(|(a, b)| a * b).sum();
        let mut out = vec![0.0; AntisymmetricParam::len_for(n)];
        delta.pull_back(&g, &mut out);
        let rhs: f64 = out.iter().zip(delta.upper()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn antisymmetric_spectra_are_imaginary(n in 2usize..24, seed in any::<u64>()) {
        let s = eigenvalues(&antisym(n, seed).expand()).unwrap();
        prop_assert!(s.max_abs_re() <= 1e-9 * (1.0 + s.max_modulus()));
        for z in s.values() {
            prop_assert!(s.values().iter().any(|w| (w - z.conj()).norm() <= 1e-9 * (1.0 + z.norm())));
        }
    }

    #[test]
    fn positive_diagonal_times_antisymmetric_is_imaginary(n in 2usize..20, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let d: Vec<f64> = (0..n).map(|_| (rng.normal(0.0, 1.5)).exp()).collect();
        prop_assert!(verify_dw_imaginary(&d, &antisym(n, seed), 1e-8).unwrap());
    }

    #[test]
    fn eigenvalues_sum_to_trace(n in 1usize..16, seed in any::<u64>()) {
        let m = matrix(n, n, seed);
        let s = eigenvalues(&m).unwrap();
        let sum: f64 = s.values().iter().map(|z| z.re).sum();
        let im: f64 = s.values().iter().map(|z| z.im).sum();
        let scale: f64 = s.values().iter().map(|z| z.norm()).sum::<f64>() + 1.0;
        prop_assert!((sum - m.trace()).abs() <= 1e-9 * scale);
        prop_assert!(im.abs() <= 1e-9 * scale);
    }

    #[test]
    fn moduli_multiply_to_determinant(n in 1usize..7, seed in any::<u64>()) {
        let m = matrix(n, n, seed);
        let prod: f64 = eigenvalues(&m).unwrap().values().iter().map(|z| z.norm()).product();
        let d = det(&m).abs();
        prop_assert!((prod - d).abs() <= 1e-8 * d.max(1e-12), "{prod} vs {d}");
    }

    #[test]
    fn rotation_growth_law(beta in 0.01f64..5.0, eps in 0.001f64..1.0, h0 in -3.0f64..3.0, h1 in 0.1f64..3.0) {
        let tr = forward_euler(|_, h| vec![beta * h[1], -beta * h[0]], &[h0, h1], eps, 200).unwrap();
        let norms = tr.norms();
        let law = (1.0 + eps * eps * beta * beta).sqrt();
        for w in norms.windows(2) {
            prop_assert!((w[1] / w[0] - law).abs() <= 1e-12 * law);
        }
    }

    #[test]
    fn euler_decouples_in_the_eigenbasis(l1 in -2.0f64..2.0, l2 in -2.0f64..2.0, seed in any::<u64>(), eps in 0.01f64..0.5) {
        let p = matrix(2, 2, seed);
        prop_assume!(det(&p).abs() > 0.1);
        let inv = {
            let d = det(&p);
            Matrix::from_rows(&[[p[(1, 1)] / d, -p[(0, 1)] / d], [-p[(1, 0)] / d, p[(0, 0)] / d]]).unwrap()
        };
        let a = p.matmul(&Matrix::from_diag(&[l1, l2])).unwrap().matmul(&inv).unwrap();
        let h0 = [0.7, -0.4];
        let steps = 30;
        let tr = forward_euler(|_, h| a.matvec(h), &h0, eps, steps).unwrap();
        let mut w = inv.matvec(&h0);
        for t in 1..=steps {
            w[0] *= 1.0 + eps * l1;
            w[1] *= 1.0 + eps * l2;
            let h = p.matvec(&w);
            let scale = 1.0 + h[0].abs() + h[1].abs();
            prop_assert!((h[0] - tr.points[t][0]).abs() <= 1e-10 * scale);
            prop_assert!((h[1] - tr.points[t][1]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn skew_part_is_critical_and_diffusion_stabilizes(seed in any::<u64>(), gamma in 0.001f64..5.0) {
        let a = matrix(2, 2, seed);
        let skew = a.sub(&a.transpose()).unwrap();
        prop_assert_eq!(ode_stability_class(&eigenvalues(&skew).unwrap(), 1e-9).unwrap(), StabilityClass::Critical);
        let damped = skew.sub(&Matrix::identity(2).scale(gamma)).unwrap();
        prop_assert_eq!(ode_stability_class(&eigenvalues(&damped).unwrap(), 1e-9).unwrap(), StabilityClass::Stable);
    }

    #[test]
    fn antisymmetric_steps_are_critical(n in 2usize..12, seed in any::<u64>(), eps in 0.01f64..0.5) {
        for kind in [CellKind::Antisym, CellKind::AntisymDiffusion] {
            let cell = init_params(kind, n, 3, 2, eps, 0.0, &InitSpec { sigma_w: 2.0, seed }).unwrap().cell;
            let mut rng = SeededRng::new(seed ^ 1);
            let h: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
            let x: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            let out = cell_step(&cell, &h, None, &x).unwrap();
            let j = step_jacobian(&cell, &out.cache).unwrap();
            let gen = j.sub(&Matrix::identity(n)).unwrap().scale(1.0 / eps);
            let s = eigenvalues(&gen).unwrap();
            prop_assert!(s.max_abs_re() <= 1e-9 * (1.0 + s.max_modulus()));
            let sj = eigenvalues(&j).unwrap();
            prop_assert!(sj.values().iter().all(|z| z.norm() >= 1.0 - 1e-12));
        }
    }

    #[test]
    fn zero_step_size_freezes_the_state(n in 1usize..8, t in 0usize..20, seed in any::<u64>()) {
        let cell = init_params(CellKind::AntisymGated, n, 2, 2, 0.0, 0.1, &InitSpec { sigma_w: 1.0, seed }).unwrap().cell;
        let seq = matrix(t, 2, seed);
        prop_assert_eq!(end_to_end_jacobian(&cell, &seq).unwrap(), Matrix::identity(n));
    }

    #[test]
    fn softmax_and_cross_entropy(logits in prop::collection::vec(-50.0f64..50.0, 2..10), label in 0usize..10) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let label = label % logits.len();
        prop_assert!(cross_entropy(&logits, label).unwrap() >= 0.0);
        let uniform = vec![logits[0]; logits.len()];
        prop_assert_eq!(cross_entropy(&uniform, label).unwrap(), (logits.len() as f64).ln());
    }

    #[test]
    fn adagrad_accumulator_never_shrinks(grads in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..10)) {
        let mut theta = vec![0.0; 4];
        let mut acc = vec![0.0; 4];
        for g in &grads {
            let before = acc.clone();
            adagrad_update(&mut theta, g, &mut acc, 0.1, 1e-10).unwrap();
            prop_assert!(acc.iter().zip(&before).all(|(a, b)| a >= b));
        }
    }

    #[test]
    fn permutations_are_bijections(len in 1usize..500, seed in any::<u64>()) {
        let mut p = fixed_permutation(len, seed);
        p.sort_unstable();
        prop_assert_eq!(p, (0..len).collect::<Vec<_>>());
    }

    #[test]
    fn noise_padding_keeps_the_prefix(steps in 1usize..10, extra in 0usize..10, width in 1usize..4, seed in any::<u64>()) {
        let seqs = (0..3).map(|i| matrix(steps, width, seed.wrapping_add(i))).collect();
        let ds = SequenceDataset::new(seqs, vec![0, 1, 0], steps, width, 2, "test").unwrap();
        let padded = noise_pad(&ds, steps + extra, seed).unwrap();
        for (a, b) in padded.sequences.iter().zip(&ds.sequences) {
            prop_assert_eq!(&a.as_slice()[..steps * width], b.as_slice());
        }
    }

    #[test]
    fn planted_split_is_disjoint(samples in 10usize..80, seed in any::<u64>()) {
        let (train, test) = planted_signal_dataset(samples, 2, 5, 2, 2, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), samples);
        for s in &test.sequences {
            prop_assert!(!train.sequences.contains(s));
        }
    }
}

#[test]
fn indefinite_diagonal_breaks_the_imaginary_spectrum() {
    let w = AntisymmetricParam::new(2, vec![1.0]).unwrap();
    assert!(!verify_dw_imaginary(&[1.0, -1.0], &w, 1e-8).unwrap());
    let s = eigenvalues(&w.expand().scale_rows(&[1.0, -1.0])).unwrap();
    assert!((s.values()[0].re - 1.0).abs() < 1e-12);
}
