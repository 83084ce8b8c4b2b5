//! The trained emulator: a network plus the affine maps that put physical
//! parameters into its input range and turn its outputs back into log10 flux.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::forward_model::{Dataset, DomainBox, HelioParams, Split, N_BINS, N_PARAMS};
use crate::nn::{self, Mlp, Trace, TrainConfig, TrainData, TrainHistory};

/// `normalized = (x - offset) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineScaler {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl AffineScaler {
    pub fn identity(n: usize) -> Self {
        AffineScaler {
            offset: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Maps the box onto `[-1, 1]` per coordinate.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Self {
        AffineScaler {
            offset: lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect(),
            scale: lower.iter().zip(upper).map(|(l, u)| 0.5 * (u - l)).collect(),
        }
    }

    /// Column means and standard deviations (floored so constant columns
    /// stay invertible).
    pub fn standardizing(columns: &Array2<f64>) -> Self {
        let n = columns.nrows().max(1) as f64;
        let mut offset = Vec::with_capacity(columns.ncols());
        let mut scale = Vec::with_capacity(columns.ncols());
        for col in columns.columns() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            offset.push(mean);
            scale.push(if sd > 1e-12 { sd } else { 1.0 });
        }
        AffineScaler { offset, scale }
    }

    /// Column means as offsets and one pooled standard deviation as the
    /// common scale, so normalised errors stay proportional across columns.
    pub fn centering_pooled(columns: &Array2<f64>) -> Self {
        let n = columns.nrows().max(1) as f64;
        let offset: Vec<f64> = columns.columns().into_iter().map(|c| c.sum() / n).collect();
        let mut ss = 0.0;
        for (col, m) in columns.columns().into_iter().zip(&offset) {
            ss += col.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        let sd = (ss / (n * columns.ncols().max(1) as f64)).sqrt();
        let sd = if sd > 1e-12 { sd } else { 1.0 };
        AffineScaler {
            scale: vec![sd; offset.len()],
            offset,
        }
    }

    pub fn len(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset.is_empty()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(v, (o, s))| (v - o) / s)
            .collect()
    }

    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(v, (o, s))| o + s * v)
            .collect()
    }

    fn normalize_rows(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.offset[j]) / self.scale[j];
            }
        }
        out
    }

    fn denormalize_rows(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.offset[j] + self.scale[j] * *v;
            }
        }
        out
    }
}

/// Network output pulled back to physical space for one input.
#[derive(Debug, Clone)]
pub struct SurrogateEval {
    pub log10_flux: Vec<f64>,
    pub flux: Vec<f64>,
    trace: Trace,
}

/// Network + scalers. Predicts log10 flux; [`Surrogate::predict_flux`]
/// undoes the logarithm.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub net: Mlp,
    pub input: AffineScaler,
    pub output: AffineScaler,
    pub input_names: Vec<String>,
}

impl Surrogate {
    pub fn new(net: Mlp, input: AffineScaler, output: AffineScaler, input_names: Vec<String>) -> Result<Self> {
        if input.len() != net.input_dim() || input_names.len() != net.input_dim() {
            return Err(Error::dims("surrogate input scaling", net.input_dim(), input.len()));
        }
        if output.len() != net.output_dim() {
            return Err(Error::dims("surrogate output scaling", net.output_dim(), output.len()));
        }
        let finite = |s: &AffineScaler| s.offset.iter().chain(&s.scale).all(|v| v.is_finite());
        if !finite(&input) || !finite(&output) || input.scale.iter().chain(&output.scale).any(|&s| s == 0.0) {
            return Err(Error::Numerical("surrogate scaling constants must be finite and non-zero".into()));
        }
        Ok(Surrogate {
            net,
            input,
            output,
            input_names,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// The box the network was trained on (the `[-1, 1]` preimage).
    pub fn trusted_domain(&self) -> (Vec<f64>, Vec<f64>) {
        let lower = self.input.offset.iter().zip(&self.input.scale).map(|(o, s)| o - s.abs()).collect();
        let upper = self.input.offset.iter().zip(&self.input.scale).map(|(o, s)| o + s.abs()).collect();
        (lower, upper)
    }

    pub fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dims("surrogate input", self.input_dim(), x.len()));
        }
        let (lower, upper) = self.trusted_domain();
        for i in 0..x.len() {
            if !(x[i] >= lower[i] && x[i] <= upper[i]) {
                return Err(Error::Domain {
                    field: self.input_names[i].clone(),
                    value: x[i],
                    lo: lower[i],
                    hi: upper[i],
                });
            }
        }
        Ok(())
    }

    pub fn predict_log10(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dims("surrogate input", self.input_dim(), x.len()));
        }
        let y = self.net.forward(&self.input.normalize(x))?;
        Ok(self.output.denormalize(&y))
    }

    pub fn predict_flux(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_log10(x)?.into_iter().map(|v| 10f64.powf(v)).collect())
    }

    /// Forward pass that keeps what [`Surrogate::pullback`] needs.
    pub fn evaluate(&self, x: &[f64]) -> Result<SurrogateEval> {
        if x.len() != self.input_dim() {
            return Err(Error::dims("surrogate input", self.input_dim(), x.len()));
        }
        let trace = self.net.forward_traced(&self.input.normalize(x))?;
        let log10_flux = self.output.denormalize(trace.output());
        let flux = log10_flux.iter().map(|v| 10f64.powf(*v)).collect();
        Ok(SurrogateEval {
            log10_flux,
            flux,
            trace,
        })
    }

    /// Gradient of `cotangent · flux(x)` with respect to the physical input.
    pub fn pullback(&self, eval: &SurrogateEval, flux_cotangent: &[f64]) -> Result<Vec<f64>> {
        if flux_cotangent.len() != self.output_dim() {
            return Err(Error::dims("flux cotangent", self.output_dim(), flux_cotangent.len()));
        }
        // d flux / d y = flux * ln10 * output scale
        let net_cot: Vec<f64> = flux_cotangent
            .iter()
            .zip(&eval.flux)
            .zip(&self.output.scale)
            .map(|((c, f), s)| c * f * std::f64::consts::LN_10 * s)
            .collect();
        let g = self.net.backprop_input(&eval.trace, &net_cot)?;
        Ok(g.iter().zip(&self.input.scale).map(|(v, s)| v / s).collect())
    }
}

fn split_arrays(ds: &Dataset, which: Split) -> (Array2<f64>, Array2<f64>) {
    let n = ds.count(which);
    let mut x = Array2::zeros((n, N_PARAMS));
    let mut y = Array2::zeros((n, N_BINS));
    for (i, (xi, yi)) in ds.rows(which).enumerate() {
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&xi[..]));
        y.row_mut(i).assign(&ndarray::ArrayView1::from(&yi[..]));
    }
    (x, y)
}

/// Train a surrogate on a generated dataset. Inputs are mapped to `[-1, 1]`
/// over the dataset's domain box; log10 targets are centred per bin and
/// divided by one pooled standard deviation (training split), so the MAE
/// loss stays proportional to the log10 error in every bin.
pub fn fit_surrogate<F>(ds: &Dataset, config: &TrainConfig, on_epoch: F) -> Result<(Surrogate, TrainHistory)>
where
    F: FnMut(usize, &TrainHistory),
{
    if ds.count(Split::Train) == 0 || ds.count(Split::Test) == 0 {
        return Err(Error::EmptyBatch);
    }
    let input = input_scaler(&ds.meta.domain);
    let (x_train, y_train) = split_arrays(ds, Split::Train);
    let (x_test, y_test) = split_arrays(ds, Split::Test);
    let output = AffineScaler::centering_pooled(&y_train);
    let data = TrainData {
        x_train: input.normalize_rows(&x_train),
        y_train: output.normalize_rows(&y_train),
        x_test: input.normalize_rows(&x_test),
        y_test: output.normalize_rows(&y_test),
    };
    let (net, history) = nn::train_with_progress(&data, config, on_epoch)?;
    let names = HelioParams::NAMES.iter().map(|s| s.to_string()).collect();
    Ok((Surrogate::new(net, input, output, names)?, history))
}

pub fn input_scaler(domain: &DomainBox) -> AffineScaler {
    AffineScaler::from_box(&domain.lower, &domain.upper)
}

/// Surrogate accuracy on one split of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    /// mean |predicted / true - 1| per rigidity bin
    pub mean_rel_error: Vec<f64>,
    /// Pearson r between the signed relative residual and each input, per bin
    /// (`[bin][input]`).
    pub residual_input_corr: Vec<Vec<f64>>,
}

impl AccuracyReport {
    pub fn max_mean_rel_error(&self) -> f64 {
        self.mean_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_abs_corr(&self) -> f64 {
        self.residual_input_corr
            .iter()
            .flatten()
            .fold(0.0, |m, r| m.max(r.abs()))
    }
}

pub fn accuracy(model: &Surrogate, ds: &Dataset, which: Split) -> Result<AccuracyReport> {
    let (x, y) = split_arrays(ds, which);
    if x.nrows() < 2 {
        return Err(Error::TooFewSamples { need: 2, got: x.nrows() });
    }
    let pred = model
        .output
        .denormalize_rows(&model.net.forward_batch(model.input.normalize_rows(&x).view())?);
    let n = x.nrows();
    let mut resid = Array2::zeros((n, N_BINS));
    for i in 0..n {
        for b in 0..N_BINS {
            resid[[i, b]] = 10f64.powf(pred[[i, b]] - y[[i, b]]) - 1.0;
        }
    }
    let mean_rel_error = (0..N_BINS)
        .map(|b| resid.column(b).iter().map(|r| r.abs()).sum::<f64>() / n as f64)
        .collect();
    let residual_input_corr = (0..N_BINS)
        .map(|b| (0..N_PARAMS).map(|p| pearson(resid.column(b), x.column(p))).collect())
        .collect();
    Ok(AccuracyReport {
        mean_rel_error,
        residual_input_corr,
    })
}

fn pearson(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_surrogate(seed: u64) -> Surrogate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new_lecun(&[8, 16, 16, 32], &mut rng).unwrap();
        let b = DomainBox::default();
        let output = AffineScaler {
            offset: (0..32).map(|i| 2.0 - 0.1 * i as f64).collect(),
            scale: (0..32).map(|i| 0.5 / (1.0 + i as f64)).collect(),
        };
        Surrogate::new(
            net,
            input_scaler(&b),
            output,
            HelioParams::NAMES.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn scaler_round_trip() {
        let s = AffineScaler::from_box(&[0.0, -2.0], &[4.0, 2.0]);
        assert_eq!(s.normalize(&[0.0, 2.0]), vec![-1.0, 1.0]);
        assert_eq!(s.denormalize(&[1.0, 0.0]), vec![4.0, 0.0]);
    }

    #[test]
    fn pullback_matches_finite_differences() {
        let sur = random_surrogate(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = DomainBox::default();
        for _ in 0..10 {
            let x: Vec<f64> = (0..8).map(|i| rng.random_range(b.lower[i]..b.upper[i])).collect();
            let c: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eval = sur.evaluate(&x).unwrap();
            assert_eq!(eval.flux, sur.predict_flux(&x).unwrap());
            let g = sur.pullback(&eval, &c).unwrap();
            for i in 0..8 {
                let h = 1e-5 * (b.upper[i] - b.lower[i]);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let f = |x: &[f64]| -> f64 {
                    sur.predict_flux(x).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum()
                };
                let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                assert!((g[i] - fd).abs() <= 1e-4 * g[i].abs().max(fd.abs()).max(1e-8), "{i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn domain_check_names_the_field() {
        let sur = random_surrogate(1);
        let mut x = DomainBox::default().center().to_vec();
        assert!(sur.check_domain(&x).is_ok());
        x[6] = 9.0;
        match sur.check_domain(&x) {
            Err(Error::Domain { field, .. }) => assert_eq!(field, "a_perp"),
            other => panic!("{other:?}"),
        }
    }
}
