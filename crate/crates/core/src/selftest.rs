//! Fast numerical invariant checks, run by the `selftest` subcommand.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diagnostics::{autocorrelation, effective_sample_size};
use crate::forward_model::{DomainBox, FluxSpectrum, HelioParams, N_BINS};
use crate::nn::Mlp;
use crate::posterior::{chi_squared, embed, FixedContext, PriorBox, SurrogatePosterior, N_SAMPLED};
use crate::samplers::{leapfrog, run_chain, ChainConfig, DiagonalGaussian, LogDensity, PhaseState, SamplerKind};
use crate::surrogate::{input_scaler, AffineScaler, Surrogate};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{} {:<28} {:>7.2}s  {}\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.seconds,
                    c.detail
                )
            })
            .collect()
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> (bool, String)) -> Check {
    let t = Instant::now();
    let (passed, detail) = f();
    Check {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

pub fn run_selftest() -> SelftestReport {
    SelftestReport {
        checks: vec![
            timed("network parameter gradient", network_gradient),
            timed("posterior gradient", posterior_gradient),
            timed("leapfrog reversibility", leapfrog_reversibility),
            timed("energy error step halving", energy_ratio),
            timed("acf at lag zero", acf_lag_zero),
            timed("ess bounds", ess_bounds),
            timed("chi-squared scale invariance", chi_squared_scaling),
            timed("prior continuity", prior_continuity),
            timed("nuts gaussian recovery", || gaussian_recovery(SamplerKind::Nuts)),
            timed("rwmh gaussian recovery", || gaussian_recovery(SamplerKind::Rwmh)),
        ],
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn network_gradient() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut net = Mlp::new_lecun(&[4, 6, 5, 3], &mut rng).expect("valid dims");
    let x = ndarray::Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
    let y = ndarray::Array2::from_shape_fn((7, 3), |_| rng.random_range(-1.0..1.0));
    let l2 = 1e-3;
    let (_, g) = net.grad_params(x.view(), y.view(), l2).expect("shapes agree");
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for l in 0..net.n_layers() {
        let (r, c) = net.weights()[l].dim();
        for i in 0..r {
            for j in 0..c {
                let w0 = net.weights()[l][[i, j]];
                net.weights_mut()[l][[i, j]] = w0 + h;
                let up = net.grad_params(x.view(), y.view(), l2).expect("shapes agree").0;
                net.weights_mut()[l][[i, j]] = w0 - h;
                let down = net.grad_params(x.view(), y.view(), l2).expect("shapes agree").0;
                net.weights_mut()[l][[i, j]] = w0;
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((fd - g.weights[l][[i, j]]).abs() / fd.abs().max(g.weights[l][[i, j]].abs()).max(1e-3));
            }
        }
    }
    (worst < 1e-4, format!("max relative error {worst:.2e}"))
}

/// A random network with plausible output scaling over the default box.
pub fn toy_surrogate(seed: u64) -> Surrogate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Mlp::new_lecun(&[8, 16, 16, N_BINS], &mut rng).expect("valid dims");
    let output = AffineScaler {
        offset: (0..N_BINS).map(|i| 3.0 - 0.15 * i as f64).collect(),
        scale: vec![0.2; N_BINS],
    };
    Surrogate::new(
        net,
        input_scaler(&DomainBox::default()),
        output,
        HelioParams::NAMES.iter().map(|s| s.to_string()).collect(),
    )
    .expect("consistent toy surrogate")
}

fn posterior_gradient() -> (bool, String) {
    let model = toy_surrogate(5);
    let prior = PriorBox::from_domain(&DomainBox::default());
    let bare = FixedContext {
        alpha: 30.0,
        i_hmf: 5.0,
        v_sw: 400.0,
        observed: FluxSpectrum::new(vec![1.0; N_BINS], Some(vec![1.0; N_BINS])).expect("valid"),
    };
    let flux = model
        .predict_flux(&embed(&[2.0, 0.8, 1.0, 0.9, 1.2], &bare))
        .expect("in range");
    let sigma = flux.iter().map(|f| 0.03 * f).collect();
    let ctx = FixedContext::new(30.0, 5.0, 400.0, FluxSpectrum::new(flux, Some(sigma)).expect("valid")).expect("valid");
    let post = SurrogatePosterior::new(&model, ctx, prior).expect("valid");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let z: [f64; N_SAMPLED] = std::array::from_fn(|i| rng.random_range(prior.lower[i]..prior.upper[i]));
        let (_, g) = post.log_posterior_and_grad(&z).expect("finite");
        for i in 0..N_SAMPLED {
            let h = 1e-5 * (prior.upper[i] - prior.lower[i]);
            let (mut zp, mut zm) = (z, z);
            zp[i] += h;
            zm[i] -= h;
            let fd = (post.log_posterior(&zp).expect("finite") - post.log_posterior(&zm).expect("finite")) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3));
        }
    }
    (worst < 1e-3, format!("max relative error {worst:.2e}"))
}

fn leapfrog_reversibility() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let target = DiagonalGaussian {
            sd: (0..5).map(|_| rng.random_range(0.2..5.0)).collect(),
        };
        let q: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let step = rng.random_range(0.01..0.3);
        let (mut next, _) = leapfrog(&target, &PhaseState::new(&target, q.clone(), p.clone()), step);
        next.momentum.iter_mut().for_each(|v| *v = -*v);
        let (back, _) = leapfrog(&target, &next, step);
        for i in 0..5 {
            worst = worst.max((back.position[i] - q[i]).abs()).max((back.momentum[i] + p[i]).abs());
        }
    }
    (worst <= 1e-10, format!("max round-trip error {worst:.2e}"))
}

/// Largest |H - H0| along a trajectory of fixed length.
pub fn max_energy_error(target: &impl LogDensity, start: &PhaseState, step: f64, length: f64) -> f64 {
    let h0 = start.hamiltonian();
    let mut s = start.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..(length / step).round() as usize {
        s = leapfrog(target, &s, step).0;
        worst = worst.max((s.hamiltonian() - h0).abs());
    }
    worst
}

fn energy_ratio() -> (bool, String) {
    let target = DiagonalGaussian {
        sd: vec![1.0, 2.0, 3.0, 4.0, 5.0],
    };
    let start = PhaseState::new(&target, vec![1.0, -1.0, 2.0, 0.5, -3.0], vec![0.3, 0.8, -0.5, 1.0, 0.2]);
    let ratio = max_energy_error(&target, &start, 0.1, 2.0) / max_energy_error(&target, &start, 0.05, 2.0);
    ((3.0..=5.0).contains(&ratio), format!("ratio {ratio:.3}"))
}

fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut v = 0.0;
    for _ in 0..n {
        v = phi * v + rng.sample::<f64, _>(StandardNormal);
        x.push(v);
    }
    x
}

fn acf_lag_zero() -> (bool, String) {
    let mut ok = true;
    for (phi, seed) in [(0.0, 1), (0.5, 2), (0.95, 3), (-0.7, 4)] {
        match autocorrelation(&ar1(5000, phi, seed), 200) {
            Ok(a) => ok &= a.at(0) == 1.0 && a.values.iter().all(|v| v.abs() <= 1.0),
            Err(_) => ok = false,
        }
    }
    (ok, "rho(0) == 1 and |rho| <= 1 on four AR(1) series".into())
}

fn ess_bounds() -> (bool, String) {
    let mut detail = Vec::new();
    let mut ok = true;
    for (phi, seed) in [(0.0, 5), (0.9, 6), (-0.9, 7)] {
        let x = ar1(4000, phi, seed);
        match effective_sample_size(&x) {
            Ok(e) => {
                ok &= e > 0.0 && e <= x.len() as f64;
                detail.push(format!("{e:.0}"));
            }
            Err(_) => ok = false,
        }
    }
    (ok, format!("ESS of 4000-step AR(1) series: {}", detail.join(", ")))
}

fn chi_squared_scaling() -> (bool, String) {
    let flux: Vec<f64> = (0..N_BINS).map(|i| 1.0 + i as f64).collect();
    let pred: Vec<f64> = (0..N_BINS).map(|i| 1.5 + 0.9 * i as f64).collect();
    let sigma: Vec<f64> = (0..N_BINS).map(|i| 0.25 + 0.01 * i as f64).collect();
    let chi = |c: f64| {
        let s = sigma.iter().map(|v| v * c).collect();
        chi_squared(&FluxSpectrum::new(flux.clone(), Some(s)).expect("valid"), &pred).expect("finite")
    };
    let base = chi(1.0);
    let ok = [0.5, 2.0, 4.0, 0.25].iter().all(|&c| chi(c) == base / (c * c));
    (ok, "chi2(c sigma) == chi2(sigma) / c^2 for c in {1/4, 1/2, 2, 4}".into())
}

fn prior_continuity() -> (bool, String) {
    let prior = PriorBox::from_domain(&DomainBox::default());
    let mut worst: f64 = 0.0;
    for i in 0..N_SAMPLED {
        for (face, dir) in [(prior.lower[i], -1.0), (prior.upper[i], 1.0)] {
            let mut at = prior.center();
            at[i] = face;
            let mut beyond = at;
            beyond[i] = face + dir * 1e-12 * prior.decay_scale[i];
            worst = worst.max((prior.log_prior(&at) - prior.log_prior(&beyond)).abs());
        }
    }
    (worst <= 1e-12, format!("max jump {worst:.1e}"))
}

fn gaussian_recovery(kind: SamplerKind) -> (bool, String) {
    let sd = vec![1.0, 2.0, 3.0, 4.0, 5.0];
    let target = DiagonalGaussian { sd: sd.clone() };
    let cfg = match kind {
        SamplerKind::Nuts => ChainConfig {
            n_samples: 20_000,
            burn_in: 1000,
            thin: Some(1),
            seed: 17,
            ..Default::default()
        },
        SamplerKind::Rwmh => ChainConfig {
            sampler: SamplerKind::Rwmh,
            n_samples: 100_000,
            burn_in: 20_000,
            thin: Some(20),
            rwmh_scale: 1.0,
            rwmh_autotune: true,
            seed: 17,
            ..Default::default()
        },
    };
    let chain = match run_chain(&cfg, &target, &[0.0; 5]) {
        Ok(c) => c,
        Err(e) => return (false, e.to_string()),
    };
    let mut ok = true;
    let mut worst_z: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for (i, s) in sd.iter().enumerate() {
        let col = chain.column(i);
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let Ok(ess) = effective_sample_size(&col) else {
            return (false, "constant chain".into());
        };
        let z = mean.abs() / (var / ess).sqrt();
        let dv = rel_err(var, s * s);
        worst_z = worst_z.max(z);
        worst_var = worst_var.max(dv);
        ok &= z < 4.0 && dv < 0.1;
    }
    (
        ok,
        format!(
            "max |mean|/se {worst_z:.2}, max variance error {:.1}%, acceptance {:.2}",
            100.0 * worst_var,
            chain.stats.accept_rate
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        let report = run_selftest();
        assert!(report.passed(), "{}", report.render());
        assert_eq!(report.checks.len(), 10);
    }
}
