mod common;

use common::*;
use fairstack::autodiff::{sigmoid, AdamConfig, AdamState, Graph, Matrix, BCE_EPS};
use fairstack::Error;
use proptest::prelude::*;

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(rows)
}

#[test]
fn matmul_examples() {
    let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let eye = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
    assert_eq!(a.matmul(&eye).unwrap(), a);
    assert_eq!(
        m(&[&[1.0, 2.0]]).matmul(&m(&[&[3.0], &[4.0]])).unwrap(),
        m(&[&[11.0]])
    );
}

#[test]
fn matmul_gradient_of_sum_matches_finite_differences() {
    let a = m(&[&[1.0, 1.0], &[1.0, 1.0]]);
    let b = m(&[&[2.0, 0.0], &[0.0, 2.0]]);
    let mut g = Graph::new();
    let av = g.param(a.clone());
    let bv = g.constant(b.clone());
    let p = g.matmul(av, bv).unwrap();
    let loss = g.sum(p);
    g.backward(loss).unwrap();
    let numeric = numeric_gradient(&[a], 0, &|x| Ok(x[0].matmul(&b)?.sum())).unwrap();
    assert_eq!(g.grad(av).unwrap(), &m(&[&[2.0, 2.0], &[2.0, 2.0]]));
    for n in numeric {
        assert!((n - 2.0).abs() < 1e-8);
    }
}

fn bce_value(p: &[f64], t: &[f64]) -> f64 {
    let mut g = Graph::new();
    let pv = g.constant(Matrix::column(p));
    let l = g.bce(pv, &Matrix::column(t)).unwrap();
    g.scalar(l)
}

#[test]
fn bce_examples() {
    assert!((bce_value(&[0.5], &[1.0]) - std::f64::consts::LN_2).abs() < 1e-12);
    let near_one = bce_value(&[1.0 - BCE_EPS], &[1.0]);
    assert!(near_one > 0.0 && (near_one - BCE_EPS).abs() < 1e-12);
    assert!((bce_value(&[0.9, 0.1], &[1.0, 0.0]) - (-(0.9f64).ln())).abs() < 1e-12);
    assert!((bce_value(&[0.9, 0.1], &[1.0, 0.0]) - 0.105361).abs() < 1e-6);
}

#[test]
fn bce_clamp_keeps_loss_finite() {
    assert!((bce_value(&[0.0], &[1.0]) - -(BCE_EPS.ln())).abs() < 1e-9);
    assert!(bce_value(&[1.0], &[1.0]) > 0.0);
}

#[test]
fn bce_shape_mismatch_is_dimension_error() {
    let mut g = Graph::new();
    let p = g.constant(Matrix::filled(2, 1, 0.5));
    assert!(matches!(
        g.bce(p, &Matrix::zeros(3, 1)),
        Err(Error::Dimension { .. })
    ));
}

fn mse_value(r: Matrix, t: Matrix) -> f64 {
    let mut g = Graph::new();
    let rv = g.constant(r);
    let l = g.mse(rv, &t).unwrap();
    g.scalar(l)
}

#[test]
fn mse_examples() {
    let x = m(&[&[1.0, -2.0], &[0.5, 3.0]]);
    assert_eq!(mse_value(x.clone(), x), 0.0);
    assert_eq!(mse_value(m(&[&[3.0, 4.0]]), m(&[&[0.0, 0.0]])), 25.0);
    // Rows with squared norms 1 and 3.
    let r = m(&[&[1.0, 0.0], &[1.0, 2.0f64.sqrt()]]);
    assert!((mse_value(r, Matrix::zeros(2, 2)) - 2.0).abs() < 1e-12);
}

#[test]
fn backward_of_sum_is_ones_and_accumulates() {
    let mut g = Graph::new();
    let w = g.param(m(&[&[1.0, -2.0], &[3.0, 0.5]]));
    let loss = g.sum(w);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap(), &Matrix::filled(2, 2, 1.0));
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap(), &Matrix::filled(2, 2, 2.0));
    g.zero_grad();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap(), &Matrix::filled(2, 2, 1.0));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let w = g.param(Matrix::zeros(2, 2));
    assert!(matches!(g.backward(w), Err(Error::Contract(_))));
}

#[test]
fn adam_three_steps_on_square_match_reference() {
    let mut w = Matrix::filled(1, 1, 1.0);
    let mut state = AdamState::new(AdamConfig::with_lr(0.01), &[(1, 1)]);
    let mut reference = ReferenceAdam::new(0.01, 1);
    let mut w_ref = [1.0];
    for _ in 0..3 {
        let g = Matrix::filled(1, 1, 2.0 * w.data()[0]);
        state.step(vec![&mut w], &[g]).unwrap();
        let g_ref = [2.0 * w_ref[0]];
        reference.step(&mut w_ref, &g_ref);
        assert!((w.data()[0] - w_ref[0]).abs() <= 1e-12);
    }
    assert_eq!(state.step_count(), 3);
}

proptest! {
    #[test]
    fn bce_is_non_negative(p in prop::collection::vec(0.0f64..=1.0, 1..8), seed in any::<u64>()) {
        let t = bits(&mut rng(seed), p.len(), 1);
        prop_assert!(bce_value(&p, t.data()) >= 0.0);
    }

    #[test]
    fn logit_form_agrees_with_probability_form_inside_clamp(x in prop::collection::vec(-10.0f64..10.0, 1..8), seed in any::<u64>()) {
        let t = bits(&mut rng(seed), x.len(), 1);
        let p: Vec<f64> = x.iter().map(|&v| sigmoid(v)).collect();
        let mut g = Graph::new();
        let xv = g.constant(Matrix::column(&x));
        let l = g.bce_with_logits(xv, &t).unwrap();
        let a = g.scalar(l);
        let b = bce_value(&p, t.data());
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b), "{} vs {}", a, b);
    }

    #[test]
    fn mse_zero_iff_equal(r in prop::collection::vec(-5.0f64..5.0, 1..10), shift in prop::collection::vec(-1.0f64..1.0, 1..10)) {
        let n = r.len().min(shift.len());
        let a = Matrix::column(&r[..n]);
        let b = Matrix::column(&r[..n].iter().zip(&shift).map(|(x, d)| x + d).collect::<Vec<_>>());
        let v = mse_value(a.clone(), b.clone());
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v == 0.0, a == b);
        prop_assert_eq!(mse_value(a.clone(), a), 0.0);
    }
}
