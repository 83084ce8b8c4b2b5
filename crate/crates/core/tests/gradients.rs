//! Finite-difference checks of the network's analytic gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surrohmc::nn::Mlp;

const STEP: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Smallest |pre-activation| over all hidden units for one input.
fn min_preactivation(model: &Mlp, x: &[f64]) -> f64 {
    let mut act = ndarray::Array1::from(x.to_vec());
    let mut min = f64::INFINITY;
    for (l, (w, b)) in model.weights().iter().zip(model.biases()).enumerate() {
        let z = w.dot(&act) + b;
        if l + 1 < model.n_layers() {
            min = z.iter().fold(min, |m, v| m.min(v.abs()));
        }
        act = z.mapv(surrohmc::nn::selu);
    }
    min
}

#[test]
fn input_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0_f64;
    for trial in 0..20 {
        let model = Mlp::new_lecun(&[8, 16, 16, 32], &mut rng).unwrap();
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.5..1.5)).collect();
        if min_preactivation(&model, &x) < 1e-6 {
            continue;
        }
        let c: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |x: &[f64]| -> f64 {
            model.forward(x).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        let g = model.grad_input(&x, &c).unwrap();
        for i in 0..8 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += STEP;
            xm[i] -= STEP;
            let fd = (f(&xp) - f(&xm)) / (2.0 * STEP);
            let e = rel_err(g[i], fd);
            worst = worst.max(e);
            assert!(e < 1e-4, "trial {trial} input {i}: analytic {} vs fd {fd}", g[i]);
        }
    }
    eprintln!("worst input-gradient relative error {worst:.2e}");
}

#[test]
fn parameter_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let model = Mlp::new_lecun(&[8, 16, 16, 32], &mut rng).unwrap();
    let x = Array2::from_shape_fn((6, 8), |_| rng.random_range(-1.0..1.0));
    let y = Array2::from_shape_fn((6, 32), |_| rng.random_range(-2.0..2.0));
    let l2 = 1e-3;
    let (_, grads) = model.grad_params(x.view(), y.view(), l2).unwrap();

    let loss = |m: &Mlp| m.grad_params(x.view(), y.view(), l2).unwrap().0;
    let mut checked = 0;
    for l in 0..model.n_layers() {
        let (rows, cols) = model.weights()[l].dim();
        for r in 0..rows {
            for c in 0..cols {
                let mut mp = model.clone();
                let mut mm = model.clone();
                mp.weights_mut()[l][[r, c]] += STEP;
                mm.weights_mut()[l][[r, c]] -= STEP;
                let fd = (loss(&mp) - loss(&mm)) / (2.0 * STEP);
                let an = grads.weights[l][[r, c]];
                assert!(rel_err(an, fd) < 1e-4, "W{l}[{r},{c}]: {an} vs {fd}");
                checked += 1;
            }
            let mut mp = model.clone();
            let mut mm = model.clone();
            mp.biases_mut()[l][r] += STEP;
            mm.biases_mut()[l][r] -= STEP;
            let fd = (loss(&mp) - loss(&mm)) / (2.0 * STEP);
            let an = grads.biases[l][r];
            assert!(rel_err(an, fd) < 1e-4, "b{l}[{r}]: {an} vs {fd}");
            checked += 1;
        }
    }
    assert_eq!(checked, model.n_params());
}
