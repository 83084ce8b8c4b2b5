//! Surrogate log-posterior over the five sampled transport parameters.
//!
//! The likelihood is `exp(-chi^2 / 2)` with chi^2 summed over the 32 rigidity
//! bins in linear flux. The prior is a plateau over the training box (log
//! value `ln 1e6`) with a one-sided quadratic fall-off outside, which keeps
//! the target C1 for Hamiltonian dynamics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::forward_model::{DomainBox, FluxSpectrum, HelioParams, Oracle, N_BINS, N_PARAMS};
use crate::samplers::LogDensity;
use crate::surrogate::Surrogate;

pub const N_SAMPLED: usize = 5;

/// Positions of the sampled parameters inside the 8-vector network input.
pub const SAMPLED_INDICES: [usize; N_SAMPLED] = [3, 4, 5, 6, 7];

pub const SAMPLED_NAMES: [&str; N_SAMPLED] = ["k0_par", "a_par", "b_par", "a_perp", "b_perp"];

pub type SampledParams = [f64; N_SAMPLED];

/// Parameters held fixed for one observation interval, plus the data.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedContext {
    pub alpha: f64,
    pub i_hmf: f64,
    pub v_sw: f64,
    pub observed: FluxSpectrum,
}

impl FixedContext {
    pub fn new(alpha: f64, i_hmf: f64, v_sw: f64, observed: FluxSpectrum) -> Result<Self> {
        if observed.sigma.is_none() {
            return Err(Error::Invalid("observed spectrum needs per-bin sigma".into()));
        }
        for (name, v) in [("alpha", alpha), ("i_hmf", i_hmf), ("v_sw", v_sw)] {
            if !v.is_finite() {
                return Err(Error::Invalid(format!("context.{name} must be finite")));
            }
        }
        Ok(FixedContext {
            alpha,
            i_hmf,
            v_sw,
            observed,
        })
    }

    fn sigma(&self) -> &[f64] {
        self.observed.sigma.as_deref().expect("validated at construction")
    }
}

pub fn embed(z: &SampledParams, ctx: &FixedContext) -> [f64; N_PARAMS] {
    [ctx.alpha, ctx.i_hmf, ctx.v_sw, z[0], z[1], z[2], z[3], z[4]]
}

pub fn extract(x: &[f64; N_PARAMS]) -> SampledParams {
    SAMPLED_INDICES.map(|i| x[i])
}

pub fn chi_squared(obs: &FluxSpectrum, pred: &[f64]) -> Result<f64> {
    let sigma = obs
        .sigma
        .as_ref()
        .ok_or_else(|| Error::Invalid("chi-squared needs per-bin sigma".into()))?;
    if pred.len() != N_BINS {
        return Err(Error::dims("predicted spectrum", N_BINS, pred.len()));
    }
    if pred.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("non-finite predicted flux".into()));
    }
    Ok(obs
        .flux
        .iter()
        .zip(pred)
        .zip(sigma)
        .map(|((o, p), s)| {
            let r = (o - p) / s;
            r * r
        })
        .sum())
}

/// Relative per-bin uncertainty of synthetic observations.
pub const SYNTHETIC_NOISE: f64 = 0.03;

/// Noisy synthetic observation of the oracle at `truth`: each bin is the
/// noise-free flux times `1 + noise * N(0, 1)`, with sigma `noise * flux`.
/// Returns the observation and the noise-free spectrum.
pub fn synthetic_observation(
    oracle: &Oracle,
    truth: &HelioParams,
    noise: f64,
    seed: u64,
) -> Result<(FluxSpectrum, Vec<f64>)> {
    if !(noise > 0.0 && noise < 1.0) {
        return Err(Error::Invalid(format!("noise fraction must lie in (0, 1), got {noise}")));
    }
    let clean = oracle.modulated_flux(truth)?.flux;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flux = clean
        .iter()
        .map(|f| f * (1.0 + noise * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let sigma = clean.iter().map(|f| noise * f).collect();
    Ok((FluxSpectrum::new(flux, Some(sigma))?, clean))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorBox {
    pub lower: SampledParams,
    pub upper: SampledParams,
    pub plateau_log_value: f64,
    pub decay_scale: SampledParams,
}

impl PriorBox {
    /// Training box restricted to the sampled dimensions; decay scale 2% of
    /// each width.
    pub fn from_domain(domain: &DomainBox) -> Self {
        let lower = SAMPLED_INDICES.map(|i| domain.lower[i]);
        let upper = SAMPLED_INDICES.map(|i| domain.upper[i]);
        PriorBox {
            lower,
            upper,
            plateau_log_value: 1e6_f64.ln(),
            decay_scale: std::array::from_fn(|i| 0.02 * (upper[i] - lower[i])),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..N_SAMPLED {
            if !(self.lower[i] < self.upper[i]) {
                return Err(Error::Invalid(format!("prior.lower[{i}] must be below prior.upper[{i}]")));
            }
            if !(self.decay_scale[i] > 0.0) {
                return Err(Error::Invalid(format!("prior.decay_scale[{i}] must be positive")));
            }
        }
        if !self.plateau_log_value.is_finite() {
            return Err(Error::Invalid("prior.plateau_log_value must be finite".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> SampledParams {
        std::array::from_fn(|i| 0.5 * (self.lower[i] + self.upper[i]))
    }

    pub fn half_width(&self) -> SampledParams {
        std::array::from_fn(|i| 0.5 * (self.upper[i] - self.lower[i]))
    }

    pub fn log_prior(&self, z: &SampledParams) -> f64 {
        self.log_prior_and_grad(z).0
    }

    pub fn log_prior_and_grad(&self, z: &SampledParams) -> (f64, SampledParams) {
        let mut value = self.plateau_log_value;
        let mut grad = [0.0; N_SAMPLED];
        for i in 0..N_SAMPLED {
            let s = self.decay_scale[i];
            if z[i] < self.lower[i] {
                let d = self.lower[i] - z[i];
                value -= (d / s) * (d / s);
                grad[i] = 2.0 * d / (s * s);
            } else if z[i] > self.upper[i] {
                let d = z[i] - self.upper[i];
                value -= (d / s) * (d / s);
                grad[i] = -2.0 * d / (s * s);
            }
        }
        (value, grad)
    }
}

/// Unnormalised log-posterior of the sampled parameters under a surrogate.
#[derive(Debug, Clone)]
pub struct SurrogatePosterior<'a> {
    pub model: &'a Surrogate,
    pub ctx: FixedContext,
    pub prior: PriorBox,
}

impl<'a> SurrogatePosterior<'a> {
    pub fn new(model: &'a Surrogate, ctx: FixedContext, prior: PriorBox) -> Result<Self> {
        if model.input_dim() != N_PARAMS {
            return Err(Error::dims("surrogate input", N_PARAMS, model.input_dim()));
        }
        if model.output_dim() != N_BINS {
            return Err(Error::dims("surrogate output", N_BINS, model.output_dim()));
        }
        prior.validate()?;
        Ok(SurrogatePosterior { model, ctx, prior })
    }

    pub fn predicted_flux(&self, z: &SampledParams) -> Result<Vec<f64>> {
        self.model.predict_flux(&embed(z, &self.ctx))
    }

    pub fn log_likelihood(&self, z: &SampledParams) -> Result<f64> {
        Ok(-0.5 * chi_squared(&self.ctx.observed, &self.predicted_flux(z)?)?)
    }

    pub fn log_prior(&self, z: &SampledParams) -> f64 {
        self.prior.log_prior(z)
    }

    pub fn log_posterior(&self, z: &SampledParams) -> Result<f64> {
        Ok(self.log_likelihood(z)? + self.log_prior(z))
    }

    pub fn log_posterior_and_grad(&self, z: &SampledParams) -> Result<(f64, SampledParams)> {
        let eval = self.model.evaluate(&embed(z, &self.ctx))?;
        let obs = &self.ctx.observed.flux;
        let sigma = self.ctx.sigma();
        let chi2 = chi_squared(&self.ctx.observed, &eval.flux)?;
        // d(-chi2/2)/d pred_i = (obs_i - pred_i) / sigma_i^2
        let cot: Vec<f64> = (0..N_BINS)
            .map(|i| (obs[i] - eval.flux[i]) / (sigma[i] * sigma[i]))
            .collect();
        let g_full = self.model.pullback(&eval, &cot)?;
        let (lp, g_prior) = self.prior.log_prior_and_grad(z);
        let grad = std::array::from_fn(|i| g_full[SAMPLED_INDICES[i]] + g_prior[i]);
        Ok((-0.5 * chi2 + lp, grad))
    }

    /// The same posterior in box-standardised coordinates `u`, where
    /// `z = center + half_width * u`.
    pub fn standardized(&self) -> StandardizedPosterior<'_, 'a> {
        StandardizedPosterior {
            posterior: self,
            center: self.prior.center(),
            half_width: self.prior.half_width(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StandardizedPosterior<'p, 'a> {
    posterior: &'p SurrogatePosterior<'a>,
    center: SampledParams,
    half_width: SampledParams,
}

impl StandardizedPosterior<'_, '_> {
    pub fn to_physical(&self, u: &[f64]) -> SampledParams {
        std::array::from_fn(|i| self.center[i] + self.half_width[i] * u[i])
    }

    pub fn to_standard(&self, z: &SampledParams) -> Vec<f64> {
        (0..N_SAMPLED).map(|i| (z[i] - self.center[i]) / self.half_width[i]).collect()
    }
}

impl LogDensity for StandardizedPosterior<'_, '_> {
    fn dim(&self) -> usize {
        N_SAMPLED
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        self.posterior
            .log_posterior(&self.to_physical(u))
            .unwrap_or(f64::NEG_INFINITY)
    }

    fn log_density_and_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        match self.posterior.log_posterior_and_grad(&self.to_physical(u)) {
            Ok((v, g)) => {
                for i in 0..N_SAMPLED {
                    grad[i] = g[i] * self.half_width[i];
                }
                v
            }
            Err(_) => {
                grad.iter_mut().for_each(|g| *g = f64::NAN);
                f64::NEG_INFINITY
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selftest::toy_surrogate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx_matching(model: &Surrogate, z: &SampledParams) -> FixedContext {
        let bare = FixedContext {
            alpha: 30.0,
            i_hmf: 5.0,
            v_sw: 400.0,
            observed: FluxSpectrum::new(vec![1.0; 32], Some(vec![1.0; 32])).unwrap(),
        };
        let flux = model.predict_flux(&embed(z, &bare)).unwrap();
        let sigma = flux.iter().map(|f| 0.03 * f).collect();
        FixedContext::new(30.0, 5.0, 400.0, FluxSpectrum::new(flux, Some(sigma)).unwrap()).unwrap()
    }

    fn random_z(rng: &mut impl Rng, prior: &PriorBox, spill: f64) -> SampledParams {
        std::array::from_fn(|i| {
            let w = prior.upper[i] - prior.lower[i];
            rng.random_range(prior.lower[i] - spill * w..prior.upper[i] + spill * w)
        })
    }

    #[test]
    fn synthetic_noise_has_requested_scale() {
        let truth = HelioParams::from_array(DomainBox::default().center());
        let oracle = Oracle::default();
        let mut pulls = Vec::new();
        for seed in 0..200 {
            let (obs, clean) = synthetic_observation(&oracle, &truth, 0.03, seed).unwrap();
            let sigma = obs.sigma.as_ref().unwrap();
            for i in 0..N_BINS {
                assert!((sigma[i] - 0.03 * clean[i]).abs() <= 1e-15 * clean[i]);
                pulls.push((obs.flux[i] - clean[i]) / sigma[i]);
            }
        }
        let n = pulls.len() as f64;
        let mean = pulls.iter().sum::<f64>() / n;
        let var = pulls.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05 && (var - 1.0).abs() < 0.05, "{mean} {var}");
        assert!(synthetic_observation(&oracle, &truth, 0.0, 1).is_err());
    }

    #[test]
    fn embed_places_and_extracts() {
        let obs = FluxSpectrum::new(vec![1.0; 32], Some(vec![1.0; 32])).unwrap();
        let ctx = FixedContext::new(30.0, 5.0, 400.0, obs).unwrap();
        let z = [1.0, 0.0, 0.0, 0.0, 0.0];
        let x = embed(&z, &ctx);
        assert_eq!(x, [30.0, 5.0, 400.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(extract(&x), z);
    }

    #[test]
    fn chi_squared_cases() {
        let flux: Vec<f64> = (1..=32).map(|i| i as f64).collect();
        let sigma: Vec<f64> = (1..=32).map(|i| 0.1 * i as f64).collect();
        let obs = FluxSpectrum::new(flux.clone(), Some(sigma.clone())).unwrap();
        assert_eq!(chi_squared(&obs, &flux).unwrap(), 0.0);
        let shifted: Vec<f64> = flux.iter().zip(&sigma).map(|(f, s)| f + s).collect();
        assert!((chi_squared(&obs, &shifted).unwrap() - 32.0).abs() < 1e-12);

        let no_sigma = FluxSpectrum::new(flux.clone(), None).unwrap();
        assert!(chi_squared(&no_sigma, &flux).is_err());
        let mut bad = flux.clone();
        bad[3] = f64::NAN;
        assert!(chi_squared(&obs, &bad).is_err());
    }

    #[test]
    fn chi_squared_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let flux: Vec<f64> = (0..32).map(|_| rng.random_range(0.1..100.0)).collect();
            let sigma: Vec<f64> = (0..32).map(|_| rng.random_range(0.01..3.0)).collect();
            let pred: Vec<f64> = (0..32).map(|_| rng.random_range(0.1..100.0)).collect();
            let mut direct = 0.0;
            for i in 0..32 {
                direct += (flux[i] - pred[i]).powi(2) / sigma[i].powi(2);
            }
            let obs = FluxSpectrum::new(flux, Some(sigma)).unwrap();
            let got = chi_squared(&obs, &pred).unwrap();
            assert!((got - direct).abs() <= 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn chi_squared_sigma_scaling_is_exact() {
        let flux: Vec<f64> = (0..32).map(|i| 1.0 + i as f64).collect();
        let pred: Vec<f64> = (0..32).map(|i| 1.5 + i as f64 * 0.9).collect();
        let sigma: Vec<f64> = (0..32).map(|i| 0.25 + 0.01 * i as f64).collect();
        let base = chi_squared(&FluxSpectrum::new(flux.clone(), Some(sigma.clone())).unwrap(), &pred).unwrap();
        // power-of-two factors keep the comparison exact in binary floating point
        for c in [0.5, 2.0, 4.0] {
            let scaled: Vec<f64> = sigma.iter().map(|s| s * c).collect();
            let chi = chi_squared(&FluxSpectrum::new(flux.clone(), Some(scaled)).unwrap(), &pred).unwrap();
            assert_eq!(chi, base / (c * c));
        }
    }

    #[test]
    fn likelihood_is_zero_at_own_prediction_and_minus_16_one_sigma_off() {
        let model = toy_surrogate(2);
        let prior = PriorBox::from_domain(&DomainBox::default());
        let z = prior.center();
        let ctx = ctx_matching(&model, &z);
        let post = SurrogatePosterior::new(&model, ctx.clone(), prior).unwrap();
        assert_eq!(post.log_likelihood(&z).unwrap(), 0.0);

        let sigma = ctx.observed.sigma.clone().unwrap();
        let shifted: Vec<f64> = ctx.observed.flux.iter().zip(&sigma).map(|(f, s)| f + s).collect();
        let ctx2 = FixedContext::new(30.0, 5.0, 400.0, FluxSpectrum::new(shifted, Some(sigma)).unwrap()).unwrap();
        let post2 = SurrogatePosterior::new(&model, ctx2, prior).unwrap();
        assert!((post2.log_likelihood(&z).unwrap() + 16.0).abs() < 1e-9);
    }

    #[test]
    fn likelihood_composes_chi_squared_and_forward() {
        let model = toy_surrogate(3);
        let prior = PriorBox::from_domain(&DomainBox::default());
        let ctx = ctx_matching(&model, &[1.0, 0.5, 0.5, 0.5, 0.5]);
        let post = SurrogatePosterior::new(&model, ctx.clone(), prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let z = random_z(&mut rng, &prior, 0.0);
            let pred = model.predict_flux(&embed(&z, &ctx)).unwrap();
            let expected = -chi_squared(&ctx.observed, &pred).unwrap() / 2.0;
            let got = post.log_likelihood(&z).unwrap();
            assert_eq!(got, expected);
            assert!(got <= 0.0);
        }
    }

    #[test]
    fn prior_plateau_faces_and_decay() {
        let prior = PriorBox::from_domain(&DomainBox::default());
        assert!((prior.log_prior(&prior.center()) - 13.815510557964274).abs() < 1e-12);
        let mut z = prior.center();
        z[2] = prior.upper[2];
        assert_eq!(prior.log_prior(&z), prior.plateau_log_value);
        z[2] = prior.upper[2] + prior.decay_scale[2];
        assert!((prior.log_prior(&z) - (prior.plateau_log_value - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn prior_is_continuous_at_faces() {
        let prior = PriorBox::from_domain(&DomainBox::default());
        for i in 0..N_SAMPLED {
            for face in [prior.lower[i], prior.upper[i]] {
                let mut inside = prior.center();
                let mut outside = prior.center();
                inside[i] = face;
                outside[i] = if face == prior.lower[i] {
                    face - 1e-12 * prior.decay_scale[i]
                } else {
                    face + 1e-12 * prior.decay_scale[i]
                };
                assert!((prior.log_prior(&inside) - prior.log_prior(&outside)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn prior_strictly_decreases_along_outward_rays() {
        let prior = PriorBox::from_domain(&DomainBox::default());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let dir: [f64; 5] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let mut last = f64::INFINITY;
            let mut left_box = false;
            for k in 0..400 {
                let t = k as f64 * 0.01;
                let z: SampledParams = std::array::from_fn(|i| prior.center()[i] + t * dir[i] * prior.half_width()[i]);
                let lp = prior.log_prior(&z);
                let outside = (0..5).any(|i| z[i] < prior.lower[i] || z[i] > prior.upper[i]);
                if outside && left_box {
                    assert!(lp < last);
                }
                left_box |= outside;
                last = lp;
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences_everywhere() {
        let model = toy_surrogate(5);
        let prior = PriorBox::from_domain(&DomainBox::default());
        let ctx = ctx_matching(&model, &[2.0, 0.8, 1.0, 0.9, 1.2]);
        let post = SurrogatePosterior::new(&model, ctx, prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..100 {
            // interior, faces and exterior
            let z = random_z(&mut rng, &prior, if trial % 2 == 0 { 0.0 } else { 0.1 });
            let (v, g) = post.log_posterior_and_grad(&z).unwrap();
            assert!((v - post.log_prior(&z) - post.log_likelihood(&z).unwrap()).abs() < 1e-12 * v.abs().max(1.0));
            for i in 0..N_SAMPLED {
                let h = 1e-5 * (prior.upper[i] - prior.lower[i]);
                let mut zp = z;
                let mut zm = z;
                zp[i] += h;
                zm[i] -= h;
                let fd = (post.log_posterior(&zp).unwrap() - post.log_posterior(&zm).unwrap()) / (2.0 * h);
                let tol = 1e-3 * g[i].abs().max(fd.abs()).max(1e-3);
                assert!((g[i] - fd).abs() <= tol, "trial {trial} dim {i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn gradient_points_back_to_box_far_outside() {
        let model = toy_surrogate(7);
        let prior = PriorBox::from_domain(&DomainBox::default());
        let ctx = ctx_matching(&model, &prior.center());
        let post = SurrogatePosterior::new(&model, ctx, prior).unwrap();
        let mut z = prior.center();
        z[0] = prior.upper[0] + 10.0 * prior.decay_scale[0];
        z[3] = prior.lower[3] - 12.0 * prior.decay_scale[3];
        let (_, g) = post.log_posterior_and_grad(&z).unwrap();
        assert!(g[0] < 0.0);
        assert!(g[3] > 0.0);
    }
}
