use erpcl::autodiff::gradcheck::FD_TOLERANCE;
use erpcl::autodiff::{BnMode, Tape};
use erpcl::verify::gradcheck_suite;
use erpcl::{Error, Tensor};
use proptest::prelude::*;

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Brute-force "same" cross-correlation of one row: left pad (P-1)/2.
fn correlate_oracle(x: &[f64], w: &[f64]) -> Vec<f64> {
    let n = x.len() as isize;
    let left = (w.len() as isize - 1) / 2;
    (0..n)
        .map(|i| {
            w.iter()
                .enumerate()
                .map(|(j, wj)| {
                    let idx = i + j as isize - left;
                    if idx >= 0 && idx < n {
                        wj * x[idx as usize]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect()
}

#[test]
fn conv_identity_delta_and_smoothing_kernels() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]));
    let id = tape.constant(t(&[1, 1], vec![1.0]));
    let y = tape.conv1d_same(x, id, None).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

    let delta = tape.constant(t(&[1, 3], vec![0.0, 1.0, 0.0]));
    let y = tape.conv1d_same(x, delta, None).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

    let ones = tape.constant(t(&[1, 4], vec![1.0; 4]));
    let half = tape.constant(t(&[1, 2], vec![0.5, 0.5]));
    let y = tape.conv1d_same(ones, half, None).unwrap();
    let expected = correlate_oracle(&[1.0; 4], &[0.5, 0.5]);
    assert_eq!(tape.value(y).data(), expected.as_slice());
    assert_eq!(expected, vec![1.0, 1.0, 1.0, 0.5]);
}

#[test]
fn conv_rows_follow_kernel_major_layout() {
    let xs = vec![0.3, -1.0, 2.0, 0.5, 1.5, -0.2, 0.0, 0.7, 1.1, -0.4];
    let ws = vec![0.2, -0.5, 1.0, 0.1, 0.4, 0.3];
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 5], xs.clone()));
    let w = tape.constant(t(&[2, 3], ws.clone()));
    let y = tape.conv1d_same(x, w, None).unwrap();
    assert_eq!(tape.value(y).shape(), &[4, 5]);
    for k in 0..2 {
        for c in 0..2 {
            let want = correlate_oracle(&xs[c * 5..(c + 1) * 5], &ws[k * 3..(k + 1) * 3]);
            let got = &tape.value(y).data()[(k * 2 + c) * 5..(k * 2 + c + 1) * 5];
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn channel_collapse_cases() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let onehot = tape.constant(t(&[3], vec![0.0, 1.0, 0.0]));
    let y = tape.channel_collapse(x, onehot).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 2]);
    assert_eq!(tape.value(y).data(), &[3.0, 4.0]);
    let zeros = tape.constant(t(&[3], vec![0.0; 3]));
    let y = tape.channel_collapse(x, zeros).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0]);

    let xs: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
    let ws = vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0];
    let x = tape.constant(t(&[6, 2], xs.clone()));
    let w = tape.constant(t(&[2, 3], ws.clone()));
    let y = tape.channel_collapse(x, w).unwrap();
    for g in 0..2 {
        for n in 0..2 {
            let mut acc = 0.0;
            for c in 0..3 {
                acc += ws[g * 3 + c] * xs[(g * 3 + c) * 2 + n];
            }
            assert_eq!(tape.value(y).data()[g * 2 + n], acc);
        }
    }
}

#[test]
fn pooling_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 5], vec![1.0, 3.0, 5.0, 7.0, 100.0]));
    let y = tape.avg_pool_time(x, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 6.0]);
    let y = tape.avg_pool_time(x, 1).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 3.0, 5.0, 7.0, 100.0]);
    assert!(tape.avg_pool_time(x, 0).is_err());
}

#[test]
fn elu_values() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], vec![-1.0, 0.0, 2.0]));
    let y = tape.elu(x);
    let v = tape.value(y).data();
    assert!((v[0] - (-0.63212)).abs() < 1e-5);
    assert_eq!(v[1], 0.0);
    assert_eq!(v[2], 2.0);
}

#[test]
fn batch_norm_cases() {
    let mut tape = Tape::new();
    let ones = tape.constant(t(&[2], vec![1.0, 1.0]));
    let zeros = tape.constant(t(&[2], vec![0.0, 0.0]));
    // already zero-mean, unit-variance columns
    let x = tape.constant(t(&[2, 2], vec![1.0, -1.0, -1.0, 1.0]));
    let (y, m) = tape.batch_norm(x, ones, zeros, BnMode::Train).unwrap();
    let scale = 1.0 / (1.0 + 1e-5f64).sqrt();
    for (a, b) in tape.value(y).data().iter().zip([1.0, -1.0, -1.0, 1.0]) {
        assert!((a - b * scale).abs() < 1e-12);
    }
    let m = m.unwrap();
    assert_eq!((m.mean.clone(), m.var.clone(), m.batch), (vec![0.0, 0.0], vec![1.0, 1.0], 2));

    let beta = tape.constant(t(&[2], vec![0.5, -2.0]));
    let (y, _) = tape.batch_norm(x, zeros, beta, BnMode::Train).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, -2.0, 0.5, -2.0]);

    let xs: Vec<f64> = (0..24).map(|i| ((i * 7 % 11) as f64) * 0.3 - 1.0).collect();
    let gs = vec![1.5, 0.5, -1.0, 2.0];
    let bs = vec![0.1, 0.0, -0.3, 1.0];
    let x = tape.constant(t(&[6, 4], xs.clone()));
    let g = tape.constant(t(&[4], gs.clone()));
    let b = tape.constant(t(&[4], bs.clone()));
    let (y, _) = tape.batch_norm(x, g, b, BnMode::Train).unwrap();
    for j in 0..4 {
        let col: Vec<f64> = (0..6).map(|r| xs[r * 4 + j]).collect();
        let mean = col.iter().sum::<f64>() / 6.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        for r in 0..6 {
            let want = gs[j] * (col[r] - mean) / (var + 1e-5).sqrt() + bs[j];
            assert!((tape.value(y).data()[r * 4 + j] - want).abs() < 1e-6);
        }
    }

    let single = tape.constant(t(&[1, 2], vec![1.0, 2.0]));
    assert!(matches!(
        tape.batch_norm(single, ones, zeros, BnMode::Train),
        Err(Error::DegenerateBatch(_))
    ));
    let (y, m) = tape
        .batch_norm(single, ones, zeros, BnMode::Eval { mean: &[1.0, 0.0], var: &[1.0, 4.0] })
        .unwrap();
    assert!(m.is_none());
    assert!((tape.value(y).data()[1] - 2.0 / (4.0 + 1e-5f64).sqrt()).abs() < 1e-12);
}

#[test]
fn dense_matches_loop_oracle() {
    let xs = vec![0.5, -1.0, 2.0];
    let ws = vec![1.0, 2.0, 0.5, -1.0, 3.0, 0.25];
    let bs = vec![0.1, -0.2];
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], xs.clone()));
    let w = tape.constant(t(&[3, 2], ws.clone()));
    let b = tape.constant(t(&[2], bs.clone()));
    let y = tape.dense(x, w, b).unwrap();
    for o in 0..2 {
        let want: f64 = (0..3).map(|f| xs[f] * ws[f * 2 + o]).sum::<f64>() + bs[o];
        assert!((tape.value(y).data()[o] - want).abs() < 1e-12);
    }
}

#[test]
fn backward_basics() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], vec![1.0, 2.0, 3.0]).with_grad());
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1], vec![3.0]).with_grad());
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[12.0]);
    tape.zero_grads();
    assert_eq!(tape.grad(x).unwrap(), &[0.0]);

    assert!(matches!(tape.backward(x), Ok(())));
    let v = tape.leaf(t(&[2], vec![1.0, 2.0]).with_grad());
    assert!(matches!(tape.backward(v), Err(Error::Rank(_))));
}

#[test]
fn finite_difference_suite_passes() {
    let results = gradcheck_suite(1).unwrap();
    assert!(results.len() >= 15);
    for r in &results {
        assert!(r.checked > 0, "{}", r.name);
        assert!(r.max_rel_error < FD_TOLERANCE, "{}: {:e}", r.name, r.max_rel_error);
    }
    for name in ["end_to_end_contrastive", "end_to_end_bce"] {
        assert!(results.iter().any(|r| r.name == name));
    }
}

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

proptest! {
    #[test]
    fn conv_is_linear_in_input(
        a in vec_strategy(24), b in vec_strategy(24), w in vec_strategy(10),
        alpha in -3.0f64..3.0, beta in -3.0f64..3.0,
    ) {
        let mut tape = Tape::new();
        let kv = tape.constant(t(&[2, 5], w));
        let conv = |tape: &mut Tape<f64>, x: Vec<f64>| {
            let xv = tape.constant(t(&[3, 8], x));
            let y = tape.conv1d_same(xv, kv, None).unwrap();
            tape.value(y).data().to_vec()
        };
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
        let lhs = conv(&mut tape, mix);
        let ya = conv(&mut tape, a);
        let yb = conv(&mut tape, b);
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (alpha * ya[i] + beta * yb[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_preserves_time_length(n in 1usize..40, p in 1usize..16) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(vec![2, n]));
        let w = tape.constant(Tensor::<f64>::zeros(vec![3, p]));
        let y = tape.conv1d_same(x, w, None).unwrap();
        prop_assert_eq!(tape.value(y).shape(), &[6, n]);
    }

    #[test]
    fn pooling_preserves_mean_of_covered_samples(x in vec_strategy(24), window in 1usize..7) {
        let mut tape = Tape::new();
        let xv = tape.constant(t(&[1, 24], x.clone()));
        let y = tape.avg_pool_time(xv, window).unwrap();
        let covered = (24 / window) * window;
        let want = x[..covered].iter().sum::<f64>() / covered as f64;
        let got = tape.value(y).data().iter().sum::<f64>() / (24 / window) as f64;
        prop_assert!((want - got).abs() < 1e-10);
    }
}
