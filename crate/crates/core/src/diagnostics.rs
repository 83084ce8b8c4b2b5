//! Chain diagnostics and posterior summaries: autocorrelation, effective
//! sample size, credible intervals and regions, predictive flux bands.

use std::fmt::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward_model::{rigidity_grid, N_BINS};
use crate::posterior::{FixedContext, N_SAMPLED, SAMPLED_NAMES};
use crate::samplers::{Chain, ChainConfig, ChainStats};
use crate::surrogate::Surrogate;

pub const CI_1D_MASS: f64 = 0.683;
pub const REGION_2D_MASS: f64 = 0.954;
pub const REGION_2D_BINS: usize = 50;
pub const MARGINAL_BINS: usize = 100;
const MIN_INTERVAL_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcfSeries {
    /// `values[k]` is the autocorrelation at lag `k`.
    pub values: Vec<f64>,
}

impl AcfSeries {
    pub fn max_lag(&self) -> usize {
        self.values.len() - 1
    }

    pub fn at(&self, lag: usize) -> f64 {
        self.values[lag]
    }
}

fn centered(series: &[f64]) -> Result<Vec<f64>> {
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("series contains non-finite values".into()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let d: Vec<f64> = series.iter().map(|v| v - mean).collect();
    if d.iter().all(|v| *v == 0.0) {
        return Err(Error::ConstantSeries);
    }
    Ok(d)
}

/// Unnormalised autocovariance sums `sum_t d_t d_{t+k}` for `k < n` via FFT.
fn autocovariance_sums(d: &[f64]) -> Vec<f64> {
    let n = d.len();
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = d.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    buf[..n].iter().map(|c| c.re / m as f64).collect()
}

fn normalise(sums: &[f64]) -> Vec<f64> {
    let c0 = sums[0];
    sums.iter()
        .enumerate()
        .map(|(k, &c)| {
            if k == 0 {
                return 1.0;
            }
            let r = c / c0;
            debug_assert!(r.abs() <= 1.0 + 1e-9, "autocorrelation {r} at lag {k}");
            r.clamp(-1.0, 1.0)
        })
        .collect()
}

/// Biased-normalisation autocorrelation up to `max_lag`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<AcfSeries> {
    if series.len() <= max_lag + 1 {
        return Err(Error::TooFewSamples {
            need: max_lag + 2,
            got: series.len(),
        });
    }
    let d = centered(series)?;
    let mut sums = autocovariance_sums(&d);
    sums.truncate(max_lag + 1);
    Ok(AcfSeries { values: normalise(&sums) })
}

/// Effective sample size with Geyer's initial positive sequence truncation,
/// clamped to the series length.
pub fn effective_sample_size(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 4 {
        return Err(Error::TooFewSamples { need: 4, got: n });
    }
    let rho = normalise(&autocovariance_sums(&centered(series)?));
    let mut pair_sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let gamma = rho[2 * k] + rho[2 * k + 1];
        if gamma <= 0.0 {
            break;
        }
        pair_sum += gamma;
        k += 1;
    }
    let tau = (2.0 * pair_sum - 1.0).max(1.0 / n as f64);
    Ok((n as f64 / tau).min(n as f64))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_finite(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("samples contain non-finite values".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

fn check_mass(mass: f64) -> Result<()> {
    if mass > 0.0 && mass < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("mass must lie in (0, 1), got {mass}")))
    }
}

/// Equal-tailed interval; zero width is reported as a degenerate-interval
/// error.
pub fn credible_interval_1d(samples: &[f64], mass: f64) -> Result<(f64, f64)> {
    check_mass(mass)?;
    if samples.len() < MIN_INTERVAL_SAMPLES {
        return Err(Error::TooFewSamples {
            need: MIN_INTERVAL_SAMPLES,
            got: samples.len(),
        });
    }
    let s = sorted_finite(samples)?;
    let tail = 0.5 * (1.0 - mass);
    let (lo, hi) = (quantile_sorted(&s, tail), quantile_sorted(&s, 1.0 - tail));
    if lo >= hi {
        return Err(Error::DegenerateInterval(lo));
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram1d {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Axis range with a unit-width fallback around constant data.
fn axis_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (lo, hi)
    } else {
        let pad = 0.5 * lo.abs().max(1.0) * 1e-6;
        (lo - pad, hi + pad)
    }
}

fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect()
}

pub fn histogram_1d(samples: &[f64], bins: usize) -> Result<Histogram1d> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    if bins == 0 {
        return Err(Error::Invalid("histogram needs at least one bin".into()));
    }
    let s = sorted_finite(samples)?;
    let (lo, hi) = axis_range(&s);
    let mut counts = vec![0u64; bins];
    for &v in &s {
        counts[bin_of(v, lo, hi, bins)] += 1;
    }
    Ok(Histogram1d {
        edges: edges(lo, hi, bins),
        counts,
    })
}

/// Centre of the fullest bin of a 100-bin histogram; the value itself for
/// constant samples.
pub fn marginal_maximum(samples: &[f64]) -> Result<f64> {
    let h = histogram_1d(samples, MARGINAL_BINS)?;
    if samples.iter().all(|v| *v == samples[0]) {
        return Ok(samples[0]);
    }
    let best = (0..h.counts.len()).fold(0, |b, k| if h.counts[k] > h.counts[b] { k } else { b });
    Ok(0.5 * (h.edges[best] + h.edges[best + 1]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Region2d {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// `counts[ix][iy]`.
    pub counts: Vec<Vec<u64>>,
    pub mass: f64,
    /// Smallest bin count inside the region.
    pub threshold_count: u64,
    /// The same threshold as a probability density.
    pub threshold_density: f64,
    pub n_samples: usize,
}

impl Region2d {
    pub fn in_region(&self, ix: usize, iy: usize) -> bool {
        self.counts[ix][iy] >= self.threshold_count
    }

    pub fn bin_area(&self) -> f64 {
        (self.x_edges[1] - self.x_edges[0]) * (self.y_edges[1] - self.y_edges[0])
    }

    pub fn n_region_bins(&self) -> usize {
        self.counts.iter().flatten().filter(|&&c| c >= self.threshold_count).count()
    }

    pub fn area(&self) -> f64 {
        self.n_region_bins() as f64 * self.bin_area()
    }

    pub fn contained_fraction(&self) -> f64 {
        let inside: u64 = self.counts.iter().flatten().filter(|&&c| c >= self.threshold_count).sum();
        inside as f64 / self.n_samples as f64
    }
}

/// Highest-density region from a `bins x bins` histogram: the bins whose
/// count is at least the largest level that still captures `mass`.
pub fn credible_region_2d(x: &[f64], y: &[f64], mass: f64, bins: usize) -> Result<Region2d> {
    check_mass(mass)?;
    if x.len() != y.len() {
        return Err(Error::dims("second coordinate", x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    if bins < 10 {
        return Err(Error::Invalid(format!("2-D region needs at least 10 bins, got {bins}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("samples contain non-finite values".into()));
    }
    let (x0, x1) = axis_range(x);
    let (y0, y1) = axis_range(y);
    let mut counts = vec![vec![0u64; bins]; bins];
    for (&a, &b) in x.iter().zip(y) {
        counts[bin_of(a, x0, x1, bins)][bin_of(b, y0, y1, bins)] += 1;
    }
    let mut flat: Vec<u64> = counts.iter().flatten().copied().filter(|&c| c > 0).collect();
    flat.sort_unstable_by(|a, b| b.cmp(a));
    let need = mass * x.len() as f64;
    let mut acc = 0u64;
    let mut threshold = flat[0];
    for &c in &flat {
        acc += c;
        threshold = c;
        if acc as f64 >= need {
            break;
        }
    }
    let bin_area = (x1 - x0) * (y1 - y0) / (bins * bins) as f64;
    Ok(Region2d {
        x_edges: edges(x0, x1, bins),
        y_edges: edges(y0, y1, bins),
        counts,
        mass,
        threshold_count: threshold,
        threshold_density: threshold as f64 / (x.len() as f64 * bin_area),
        n_samples: x.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveBands {
    pub rigidity: Vec<f64>,
    pub lo68: Vec<f64>,
    pub hi68: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
    pub map_flux: Vec<f64>,
    pub observed: Vec<f64>,
    pub sigma: Vec<f64>,
}

fn map_index(chain: &Chain) -> Result<usize> {
    if chain.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    Ok((0..chain.len()).fold(0, |b, k| if chain.log_targets[k] > chain.log_targets[b] { k } else { b }))
}

fn sampled_point(sample: &[f64]) -> Result<[f64; N_SAMPLED]> {
    sample
        .try_into()
        .map_err(|_| Error::dims("chain sample", N_SAMPLED, sample.len()))
}

/// Surrogate flux at every stored sample (physical coordinates), reduced to
/// per-bin equal-tailed 68% and 95% bands plus the flux at the MAP sample.
pub fn posterior_predictive(chain: &Chain, model: &Surrogate, ctx: &FixedContext) -> Result<PredictiveBands> {
    use rayon::prelude::*;
    let best = map_index(chain)?;
    let fluxes = chain
        .samples
        .par_iter()
        .map(|s| model.predict_flux(&crate::posterior::embed(&sampled_point(s)?, ctx)))
        .collect::<Result<Vec<_>>>()?;
    let mut bands = PredictiveBands {
        rigidity: rigidity_grid().values().to_vec(),
        lo68: Vec::with_capacity(N_BINS),
        hi68: Vec::with_capacity(N_BINS),
        lo95: Vec::with_capacity(N_BINS),
        hi95: Vec::with_capacity(N_BINS),
        map_flux: fluxes[best].clone(),
        observed: ctx.observed.flux.clone(),
        sigma: ctx.observed.sigma.clone().unwrap_or_else(|| vec![0.0; N_BINS]),
    };
    for bin in 0..N_BINS {
        let column: Vec<f64> = fluxes.iter().map(|f| f[bin]).collect();
        let s = sorted_finite(&column)?;
        bands.lo68.push(quantile_sorted(&s, 0.16));
        bands.hi68.push(quantile_sorted(&s, 0.84));
        bands.lo95.push(quantile_sorted(&s, 0.025));
        bands.hi95.push(quantile_sorted(&s, 0.975));
    }
    Ok(bands)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRegion {
    pub i: usize,
    pub j: usize,
    pub region: Region2d,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorSummary {
    pub names: Vec<String>,
    pub map_point: Vec<f64>,
    pub map_log_target: f64,
    pub means: Vec<f64>,
    pub marginal_maxima: Vec<f64>,
    /// 68.3% equal-tailed intervals; `None` when too few or degenerate.
    pub ci_1d: Vec<Option<(f64, f64)>>,
    pub ess: Vec<Option<f64>>,
    pub regions_2d: Vec<PairRegion>,
    pub bands: PredictiveBands,
}

pub fn summarize(chain: &Chain, model: &Surrogate, ctx: &FixedContext) -> Result<PosteriorSummary> {
    let best = map_index(chain)?;
    if chain.dim() != N_SAMPLED {
        return Err(Error::dims("chain sample", N_SAMPLED, chain.dim()));
    }
    let columns: Vec<Vec<f64>> = (0..N_SAMPLED).map(|i| chain.column(i)).collect();
    let n = chain.len() as f64;
    let mut regions = Vec::with_capacity(10);
    for i in 0..N_SAMPLED {
        for j in i + 1..N_SAMPLED {
            regions.push(PairRegion {
                i,
                j,
                region: credible_region_2d(&columns[i], &columns[j], REGION_2D_MASS, REGION_2D_BINS)?,
            });
        }
    }
    Ok(PosteriorSummary {
        names: SAMPLED_NAMES.iter().map(|s| s.to_string()).collect(),
        map_point: chain.samples[best].clone(),
        map_log_target: chain.log_targets[best],
        means: columns.iter().map(|c| c.iter().sum::<f64>() / n).collect(),
        marginal_maxima: columns.iter().map(|c| marginal_maximum(c)).collect::<Result<_>>()?,
        ci_1d: columns.iter().map(|c| credible_interval_1d(c, CI_1D_MASS).ok()).collect(),
        ess: columns.iter().map(|c| effective_sample_size(c).ok()).collect(),
        regions_2d: regions,
        bands: posterior_predictive(chain, model, ctx)?,
    })
}

/// Evaluation counts of a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EvaluationLedger {
    pub stored_samples: usize,
    pub burn_in: usize,
    pub raw_steps: usize,
    pub leapfrog_steps: u64,
    pub gradient_evals: u64,
    pub density_evals: u64,
}

impl EvaluationLedger {
    pub fn from_chain(chain: &Chain) -> Self {
        let s = &chain.stats;
        EvaluationLedger {
            stored_samples: chain.len(),
            burn_in: s.burn_in,
            raw_steps: s.raw_steps,
            leapfrog_steps: s.leapfrog_steps,
            gradient_evals: s.gradient_evals,
            density_evals: s.density_evals,
        }
    }

    /// Checks the counts against what `config` prescribes; returns the
    /// mismatches.
    pub fn mismatches(&self, config: &ChainConfig, stats: &ChainStats) -> Vec<String> {
        let mut out = Vec::new();
        if self.stored_samples != config.n_samples {
            out.push(format!("stored samples {} != configured {}", self.stored_samples, config.n_samples));
        }
        if self.burn_in != config.burn_in {
            out.push(format!("burn-in {} != configured {}", self.burn_in, config.burn_in));
        }
        if self.raw_steps != config.raw_steps() {
            out.push(format!("raw steps {} != configured {}", self.raw_steps, config.raw_steps()));
        }
        if self.gradient_evals != stats.setup_gradient_evals + self.leapfrog_steps {
            out.push(format!(
                "gradient evaluations {} != setup {} + leapfrog steps {}",
                self.gradient_evals, stats.setup_gradient_evals, self.leapfrog_steps
            ));
        }
        out
    }

    pub fn render(&self) -> String {
        format!(
            "stored_samples {}\nburn_in {}\nraw_steps {}\nleapfrog_steps {}\ngradient_evals {}\ndensity_evals {}\n",
            self.stored_samples, self.burn_in, self.raw_steps, self.leapfrog_steps, self.gradient_evals, self.density_evals
        )
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

/// One row per parameter.
pub fn write_summary_csv(path: &Path, s: &PosteriorSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["parameter", "mean", "map", "marginal_max", "ci68_lo", "ci68_hi", "ess"])?;
    for i in 0..s.names.len() {
        let (lo, hi) = s.ci_1d[i].map_or((None, None), |(a, b)| (Some(a), Some(b)));
        w.write_record([
            s.names[i].clone(),
            s.means[i].to_string(),
            s.map_point[i].to_string(),
            s.marginal_maxima[i].to_string(),
            opt(lo),
            opt(hi),
            opt(s.ess[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bands_csv(path: &Path, b: &PredictiveBands) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rigidity", "lo68", "hi68", "lo95", "hi95", "map_flux", "observed", "sigma"])?;
    for k in 0..b.rigidity.len() {
        let row = [
            b.rigidity[k],
            b.lo68[k],
            b.hi68[k],
            b.lo95[k],
            b.hi95[k],
            b.map_flux[k],
            b.observed[k],
            b.sigma[k],
        ];
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `lag, <name>...`.
pub fn write_acf_csv(path: &Path, names: &[&str], acfs: &[AcfSeries]) -> Result<()> {
    if names.len() != acfs.len() {
        return Err(Error::dims("ACF column names", acfs.len(), names.len()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["lag".to_string()];
    header.extend(names.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    let lags = acfs.iter().map(|a| a.values.len()).min().unwrap_or(0);
    for k in 0..lags {
        let mut row = vec![k.to_string()];
        row.extend(acfs.iter().map(|a| a.values[k].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: `parameter, bin_lo, bin_hi, count`.
pub fn write_hist1d_csv(path: &Path, names: &[&str], hists: &[Histogram1d]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["parameter", "bin_lo", "bin_hi", "count"])?;
    for (name, h) in names.iter().zip(hists) {
        for k in 0..h.counts.len() {
            w.write_record([
                name.to_string(),
                h.edges[k].to_string(),
                h.edges[k + 1].to_string(),
                h.counts[k].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long format over all pairs: `x_param, y_param, x_center, y_center,
/// count, density, threshold_density, in_region`.
pub fn write_hist2d_csv(path: &Path, names: &[&str], regions: &[PairRegion]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "x_param",
        "y_param",
        "x_center",
        "y_center",
        "count",
        "density",
        "threshold_density",
        "in_region",
    ])?;
    for pr in regions {
        let r = &pr.region;
        let norm = r.n_samples as f64 * r.bin_area();
        for ix in 0..r.counts.len() {
            for iy in 0..r.counts[ix].len() {
                let c = r.counts[ix][iy];
                w.write_record([
                    names[pr.i].to_string(),
                    names[pr.j].to_string(),
                    (0.5 * (r.x_edges[ix] + r.x_edges[ix + 1])).to_string(),
                    (0.5 * (r.y_edges[iy] + r.y_edges[iy + 1])).to_string(),
                    c.to_string(),
                    (c as f64 / norm).to_string(),
                    r.threshold_density.to_string(),
                    (r.in_region(ix, iy) as u8).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Human-readable rendering of a summary.
pub fn render_summary(s: &PosteriorSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>12} {:>12} {:>12} {:>12} {:>12} {:>9}",
        "param", "mean", "map", "marg_max", "ci68_lo", "ci68_hi", "ess"
    );
    for i in 0..s.names.len() {
        let (lo, hi) = s.ci_1d[i].map_or((f64::NAN, f64::NAN), |p| p);
        let _ = writeln!(
            out,
            "{:<8} {:>12.5} {:>12.5} {:>12.5} {:>12.5} {:>12.5} {:>9.1}",
            s.names[i],
            s.means[i],
            s.map_point[i],
            s.marginal_maxima[i],
            lo,
            hi,
            s.ess[i].unwrap_or(f64::NAN)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let e = normals(n, seed);
        let mut x = vec![0.0; n];
        x[0] = e[0] / (1.0 - phi * phi).sqrt();
        for t in 1..n {
            x[t] = phi * x[t - 1] + e[t];
        }
        x
    }

    fn direct_acf(x: &[f64], max_lag: usize) -> Vec<f64> {
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        (0..=max_lag)
            .map(|k| (0..n - k).map(|t| (x[t] - m) * (x[t + k] - m)).sum::<f64>() / c0)
            .collect()
    }

    #[test]
    fn acf_matches_direct_sum() {
        let x = ar1(3000, 0.7, 2);
        let fast = autocorrelation(&x, 200).unwrap();
        let slow = direct_acf(&x, 200);
        for k in 0..=200 {
            assert!((fast.at(k) - slow[k]).abs() < 1e-10, "lag {k}");
        }
        assert_eq!(fast.at(0), 1.0);
    }

    #[test]
    fn acf_iid_small_and_ar1_geometric() {
        let iid = autocorrelation(&normals(100_000, 1), 50).unwrap();
        assert_eq!(iid.at(0), 1.0);
        assert!((1..=50).all(|k| iid.at(k).abs() < 0.02));
        let a = autocorrelation(&ar1(100_000, 0.9, 3), 20).unwrap();
        assert!((a.at(1) - 0.9).abs() < 0.02);
        for k in 2..=10 {
            assert!((a.at(k) - 0.9f64.powi(k as i32)).abs() < 0.05, "lag {k}");
        }
        assert!(a.values.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn acf_errors() {
        assert!(matches!(autocorrelation(&[2.0; 50], 5), Err(Error::ConstantSeries)));
        assert!(matches!(autocorrelation(&[1.0, 2.0, 3.0], 2), Err(Error::TooFewSamples { .. })));
        assert!(matches!(effective_sample_size(&[2.0; 50]), Err(Error::ConstantSeries)));
    }

    #[test]
    fn ess_cases() {
        let n = 10_000;
        let iid = effective_sample_size(&normals(n, 5)).unwrap();
        assert!((iid / n as f64 - 1.0).abs() < 0.15, "{iid}");
        assert!(iid <= n as f64 && iid > 0.0);

        let ar = effective_sample_size(&ar1(100_000, 0.9, 6)).unwrap() / 100_000.0;
        let expected = 0.1 / 1.9;
        assert!((ar / expected - 1.0).abs() < 0.3, "{ar}");

        let base = normals(n / 2, 7);
        let doubled: Vec<f64> = base.iter().flat_map(|&v| [v, v]).collect();
        let e = effective_sample_size(&doubled).unwrap();
        assert!((e / (n as f64 / 2.0) - 1.0).abs() < 0.15, "{e}");
    }

    #[test]
    fn interval_gaussian_quantiles() {
        let x = normals(1_000_000, 8);
        let (lo, hi) = credible_interval_1d(&x, 0.683).unwrap();
        assert!((lo + 1.0).abs() < 0.02 && (hi - 1.0).abs() < 0.02, "{lo} {hi}");
        let (lo2, hi2) = credible_interval_1d(&x, 0.954).unwrap();
        assert!((lo2 + 2.0).abs() < 0.03 && (hi2 - 2.0).abs() < 0.03, "{lo2} {hi2}");
        assert!(lo2 <= lo && hi <= hi2);
    }

    #[test]
    fn interval_edge_cases() {
        let mut x = vec![5.0; 200];
        x[17] = 9.0;
        assert!(matches!(credible_interval_1d(&x, 0.683), Err(Error::DegenerateInterval(v)) if v == 5.0));
        assert!(matches!(credible_interval_1d(&x[..50], 0.683), Err(Error::TooFewSamples { .. })));
        assert!(credible_interval_1d(&normals(500, 1), 1.0).is_err());
    }

    #[test]
    fn quantile_intervals_nest() {
        let x = normals(5000, 9);
        let mut prev = credible_interval_1d(&x, 0.05).unwrap();
        for k in 1..19 {
            let cur = credible_interval_1d(&x, 0.05 + 0.05 * k as f64).unwrap();
            assert!(cur.0 <= prev.0 && prev.1 <= cur.1);
            prev = cur;
        }
    }

    #[test]
    fn region_area_gaussian() {
        let x = normals(1_000_000, 10);
        let y = normals(1_000_000, 11);
        let r = credible_region_2d(&x, &y, 0.954, REGION_2D_BINS).unwrap();
        let analytic = 2.0 * std::f64::consts::PI * -(1.0f64 - 0.954).ln();
        assert!((r.area() / analytic - 1.0).abs() < 0.15, "area {}", r.area());
        assert!(r.contained_fraction() >= 0.954);
        let r999 = credible_region_2d(&x, &y, 0.999, REGION_2D_BINS).unwrap();
        assert!(r999.contained_fraction() >= 0.999);
    }

    #[test]
    fn region_single_point_and_errors() {
        let r = credible_region_2d(&[1.5; 40], &[-2.0; 40], 0.954, 20).unwrap();
        assert_eq!(r.n_region_bins(), 1);
        assert_eq!(r.contained_fraction(), 1.0);
        assert!(credible_region_2d(&[1.0; 3], &[1.0; 4], 0.9, 20).is_err());
        assert!(credible_region_2d(&[1.0; 3], &[1.0; 3], 0.9, 5).is_err());
    }

    #[test]
    fn marginal_maximum_finds_mode() {
        let x: Vec<f64> = normals(200_000, 12).iter().map(|v| 3.0 + 0.5 * v).collect();
        assert!((marginal_maximum(&x).unwrap() - 3.0).abs() < 0.1);
        assert_eq!(marginal_maximum(&[4.25; 10]).unwrap(), 4.25);
    }

    #[test]
    fn quantile_sorted_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&s, 0.0), 0.0);
        assert_eq!(quantile_sorted(&s, 1.0), 3.0);
        assert!((quantile_sorted(&s, 0.5) - 1.5).abs() < 1e-15);
        assert_eq!(quantile_sorted(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn ledger_detects_mismatch() {
        let cfg = ChainConfig {
            n_samples: 10,
            burn_in: 5,
            ..Default::default()
        };
        let target = crate::samplers::DiagonalGaussian::standard(2);
        let chain = crate::samplers::run_chain(&cfg, &target, &[0.0; 2]).unwrap();
        let ledger = EvaluationLedger::from_chain(&chain);
        assert!(ledger.mismatches(&cfg, &chain.stats).is_empty());
        assert_eq!(ledger.raw_steps, 105);
        let other = ChainConfig { n_samples: 11, ..cfg };
        assert_eq!(ledger.mismatches(&other, &chain.stats).len(), 2);
    }
}
