//! Analytic stand-in for a cosmic-ray transport solver.
//!
//! A force-field style mapping of a power-law local interstellar spectrum,
//! driven by a rigidity-dependent modulation potential built from the eight
//! heliospheric parameters. It shares the input/output signature of a full
//! transport solver (8 parameters in, 32 log-spaced rigidity bins out) and can
//! be told to fail at random to mimic numerically unstable solves. It is not a
//! solution of the transport equation.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_BINS: usize = 32;
pub const N_PARAMS: usize = 8;

pub const R_MIN_GV: f64 = 0.2;
pub const R_MAX_GV: f64 = 200.0;

/// Fixed log-uniform rigidity grid, 0.2 to 200 GV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidityGrid {
    values: [f64; N_BINS],
}

impl RigidityGrid {
    pub fn values(&self) -> &[f64; N_BINS] {
        &self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }
}

pub fn rigidity_grid() -> RigidityGrid {
    let decades = (R_MAX_GV / R_MIN_GV).log10();
    let mut values = [0.0; N_BINS];
    for (i, v) in values.iter_mut().enumerate() {
        *v = R_MIN_GV * 10f64.powf(decades * i as f64 / (N_BINS - 1) as f64);
    }
    // pin the endpoints against powf rounding
    values[0] = R_MIN_GV;
    values[N_BINS - 1] = R_MAX_GV;
    RigidityGrid { values }
}

/// The eight forward-model inputs, in surrogate input order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HelioParams {
    /// tilt angle, degrees
    pub alpha: f64,
    /// HMF intensity at 1 AU, nT
    pub i_hmf: f64,
    /// solar wind speed, km/s
    pub v_sw: f64,
    pub k0_par: f64,
    pub a_par: f64,
    pub b_par: f64,
    pub a_perp: f64,
    pub b_perp: f64,
}

impl HelioParams {
    pub const NAMES: [&'static str; N_PARAMS] = [
        "alpha", "i_hmf", "v_sw", "k0_par", "a_par", "b_par", "a_perp", "b_perp",
    ];

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.alpha,
            self.i_hmf,
            self.v_sw,
            self.k0_par,
            self.a_par,
            self.b_par,
            self.a_perp,
            self.b_perp,
        ]
    }

    pub fn from_array(a: [f64; N_PARAMS]) -> Self {
        HelioParams {
            alpha: a[0],
            i_hmf: a[1],
            v_sw: a[2],
            k0_par: a[3],
            a_par: a[4],
            b_par: a[5],
            a_perp: a[6],
            b_perp: a[7],
        }
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        let a: [f64; N_PARAMS] = s
            .try_into()
            .map_err(|_| Error::dims("heliospheric parameters", N_PARAMS, s.len()))?;
        Ok(Self::from_array(a))
    }
}

/// Axis-aligned box over the eight parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: [f64; N_PARAMS],
    pub upper: [f64; N_PARAMS],
}

impl Default for DomainBox {
    fn default() -> Self {
        DomainBox {
            lower: [10.0, 3.0, 300.0, 0.5, 0.3, 0.3, 0.3, 0.3],
            upper: [75.0, 9.0, 700.0, 5.0, 1.5, 2.0, 1.5, 2.0],
        }
    }
}

impl DomainBox {
    pub fn validate(&self) -> Result<()> {
        for i in 0..N_PARAMS {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Invalid(format!(
                    "domain box for {} must satisfy lower < upper (got [{lo}, {hi}])",
                    HelioParams::NAMES[i]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64; N_PARAMS]) -> bool {
        self.violation(x).is_none()
    }

    /// First coordinate outside the box, as a domain error.
    pub fn violation(&self, x: &[f64; N_PARAMS]) -> Option<Error> {
        (0..N_PARAMS).find_map(|i| {
            let v = x[i];
            (!(v >= self.lower[i] && v <= self.upper[i])).then(|| Error::Domain {
                field: HelioParams::NAMES[i].to_string(),
                value: v,
                lo: self.lower[i],
                hi: self.upper[i],
            })
        })
    }

    pub fn center(&self) -> [f64; N_PARAMS] {
        std::array::from_fn(|i| 0.5 * (self.lower[i] + self.upper[i]))
    }

    pub fn half_width(&self) -> [f64; N_PARAMS] {
        std::array::from_fn(|i| 0.5 * (self.upper[i] - self.lower[i]))
    }

    /// The box grown by `frac` of its width on every side, clipped to
    /// physically meaningful values.
    pub fn widened(&self, frac: f64) -> DomainBox {
        let mut out = *self;
        for i in 0..N_PARAMS {
            let w = self.upper[i] - self.lower[i];
            out.lower[i] -= frac * w;
            out.upper[i] += frac * w;
        }
        out.lower[0] = out.lower[0].max(0.0);
        out.upper[0] = out.upper[0].min(90.0);
        for i in 1..4 {
            out.lower[i] = out.lower[i].max(1e-3 * self.lower[i]);
        }
        out
    }
}

/// Constants of the analytic oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConstants {
    /// LIS normalisation A in J = A R^-gamma
    pub lis_norm: f64,
    pub lis_index: f64,
    /// proton rest mass, GeV
    pub proton_mass: f64,
    /// diffusion-slope break rigidity, GV
    pub break_rigidity: f64,
    pub par_weight: f64,
    pub perp_weight: f64,
    /// modulation potential scale, GV
    pub phi0: f64,
}

impl Default for OracleConstants {
    fn default() -> Self {
        OracleConstants {
            lis_norm: 1.8e4,
            lis_index: 2.7,
            proton_mass: 0.938272,
            break_rigidity: 4.0,
            par_weight: 0.2,
            perp_weight: 0.8,
            phi0: 0.35,
        }
    }
}

/// Flux on the rigidity grid, with optional per-bin uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxSpectrum {
    pub flux: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl FluxSpectrum {
    pub fn new(flux: Vec<f64>, sigma: Option<Vec<f64>>) -> Result<Self> {
        if flux.len() != N_BINS {
            return Err(Error::dims("flux spectrum", N_BINS, flux.len()));
        }
        if let Some((i, v)) = flux.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Invalid(format!("flux[{i}] = {v} must be positive and finite")));
        }
        if let Some(s) = &sigma {
            if s.len() != N_BINS {
                return Err(Error::dims("flux uncertainties", N_BINS, s.len()));
            }
            if let Some((i, v)) = s.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::Invalid(format!("sigma[{i}] = {v} must be positive and finite")));
            }
        }
        Ok(FluxSpectrum { flux, sigma })
    }

    pub fn log10(&self) -> Vec<f64> {
        self.flux.iter().map(|f| f.log10()).collect()
    }

    pub fn read_csv(path: &std::path::Path) -> Result<Self> {
        let name = path.display().to_string();
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let expected = ["rigidity_gv", "flux", "sigma"];
        if headers.iter().map(str::trim).collect::<Vec<_>>() != expected {
            return Err(Error::format(&name, "header must be rigidity_gv,flux,sigma"));
        }
        let grid = rigidity_grid();
        let mut flux = Vec::with_capacity(N_BINS);
        let mut sigma = Vec::with_capacity(N_BINS);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64> {
                rec.get(j)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::format(&name, format!("row {}: bad number in column {j}", i + 1)))
            };
            if i >= N_BINS {
                return Err(Error::format(&name, format!("expected {N_BINS} rows")));
            }
            let r = parse(0)?;
            if (r / grid.get(i) - 1.0).abs() > 1e-6 {
                return Err(Error::format(
                    &name,
                    format!("row {}: rigidity {r} GV does not match grid value {}", i + 1, grid.get(i)),
                ));
            }
            flux.push(parse(1)?);
            sigma.push(parse(2)?);
        }
        if flux.len() != N_BINS {
            return Err(Error::format(&name, format!("expected {N_BINS} rows, found {}", flux.len())));
        }
        FluxSpectrum::new(flux, Some(sigma))
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let sigma = self
            .sigma
            .as_ref()
            .ok_or_else(|| Error::Invalid("observed spectrum needs per-bin sigma".into()))?;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rigidity_gv", "flux", "sigma"])?;
        for (i, r) in rigidity_grid().values().iter().enumerate() {
            w.write_record([r.to_string(), self.flux[i].to_string(), sigma[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of a solve: a spectrum or a simulated instability.
#[derive(Debug, Clone, PartialEq)]
pub enum Solve {
    Converged(FluxSpectrum),
    Unstable,
}

/// The analytic oracle with simulated failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub constants: OracleConstants,
    pub p_fail: f64,
    /// Parameters outside this box are rejected.
    pub validity: DomainBox,
}

impl Default for Oracle {
    fn default() -> Self {
        Oracle {
            constants: OracleConstants::default(),
            p_fail: 0.02,
            validity: DomainBox::default().widened(0.5),
        }
    }
}

impl Oracle {
    pub fn with_p_fail(p_fail: f64) -> Self {
        Oracle {
            p_fail,
            ..Oracle::default()
        }
    }

    pub fn lis_flux(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Invalid(format!("rigidity must be positive (got {r})")));
        }
        Ok(self.constants.lis_norm * r.powf(-self.constants.lis_index))
    }

    pub fn kinetic_energy(&self, r: f64) -> f64 {
        let m = self.constants.proton_mass;
        (r * r + m * m).sqrt() - m
    }

    pub fn beta(&self, r: f64) -> f64 {
        let m = self.constants.proton_mass;
        r / (r * r + m * m).sqrt()
    }

    fn broken_power_law(&self, r: f64, below: f64, above: f64) -> f64 {
        let x = r / self.constants.break_rigidity;
        if r <= self.constants.break_rigidity {
            x.powf(below)
        } else {
            x.powf(above)
        }
    }

    /// Effective diffusion coefficient: a 0.2/0.8 blend of the parallel and
    /// perpendicular broken power laws, times `k0_par * beta`.
    pub fn effective_dc(&self, z: &HelioParams, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Invalid(format!("rigidity must be positive (got {r})")));
        }
        if !(z.k0_par > 0.0) {
            return Err(Error::Domain {
                field: "k0_par".into(),
                value: z.k0_par,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        let c = &self.constants;
        let blend = c.par_weight * self.broken_power_law(r, z.a_par, z.b_par)
            + c.perp_weight * self.broken_power_law(r, z.a_perp, z.b_perp);
        Ok(z.k0_par * self.beta(r) * blend)
    }

    /// Modulation potential in GV at rigidity `r`.
    pub fn modulation_potential(&self, z: &HelioParams, r: f64) -> Result<f64> {
        let kappa = self.effective_dc(z, r)?;
        Ok(self.constants.phi0 * (z.v_sw / 400.0) * (z.i_hmf / 5.0).powf(0.8) * (1.0 + z.alpha / 90.0)
            / kappa)
    }

    /// Noise-free modulated spectrum; never fails except for domain errors.
    pub fn modulated_flux(&self, z: &HelioParams) -> Result<FluxSpectrum> {
        if let Some(err) = self.validity.violation(&z.to_array()) {
            return Err(err);
        }
        let m = self.constants.proton_mass;
        let mut flux = Vec::with_capacity(N_BINS);
        for &r in rigidity_grid().values() {
            let phi = self.modulation_potential(z, r)?;
            let shifted = r + phi;
            let t = self.kinetic_energy(r);
            let ts = self.kinetic_energy(shifted);
            flux.push(self.lis_flux(shifted)? * ((t * (t + 2.0 * m)) / (ts * (ts + 2.0 * m))));
        }
        FluxSpectrum::new(flux, None)
    }

    /// One solver call. A single uniform draw decides the simulated failure.
    pub fn solve_flux<R: Rng + ?Sized>(&self, z: &HelioParams, rng: &mut R) -> Result<Solve> {
        let spectrum = self.modulated_flux(z)?;
        let u: f64 = rng.random();
        if u < self.p_fail {
            return Ok(Solve::Unstable);
        }
        Ok(Solve::Converged(spectrum))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub n_requested: usize,
    pub n_failed: usize,
    pub p_fail: f64,
    pub domain: DomainBox,
    pub oracle: OracleConstants,
}

/// Solver outputs as log10 flux, with a 90/10 train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<[f64; N_PARAMS]>,
    pub targets: Vec<[f64; N_BINS]>,
    pub split: Vec<Split>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn count(&self, which: Split) -> usize {
        self.split.iter().filter(|&&s| s == which).count()
    }

    pub fn rows(&self, which: Split) -> impl Iterator<Item = (&[f64; N_PARAMS], &[f64; N_BINS])> {
        self.inputs
            .iter()
            .zip(&self.targets)
            .zip(&self.split)
            .filter(move |(_, &s)| s == which)
            .map(|(row, _)| row)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = HelioParams::NAMES.iter().map(|s| s.to_string()).collect();
        header.extend((0..N_BINS).map(|i| format!("log10_flux_{i:02}")));
        header.push("split".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.inputs[i].iter().map(|v| v.to_string()).collect();
            rec.extend(self.targets[i].iter().map(|v| v.to_string()));
            rec.push(self.split[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        std::fs::write(meta_path(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let name = path.display().to_string();
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(meta_path(path))?)?;
        let mut rdr = csv::Reader::from_path(path)?;
        let width = N_PARAMS + N_BINS + 1;
        if rdr.headers()?.len() != width {
            return Err(Error::format(&name, format!("expected {width} columns")));
        }
        let mut ds = Dataset {
            inputs: Vec::new(),
            targets: Vec::new(),
            split: Vec::new(),
            meta,
        };
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |j: usize| -> Result<f64> {
                rec[j]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(&name, format!("row {}: bad value in column {j}", line + 1)))
            };
            let mut x = [0.0; N_PARAMS];
            for (j, v) in x.iter_mut().enumerate() {
                *v = num(j)?;
            }
            let mut y = [0.0; N_BINS];
            for (j, v) in y.iter_mut().enumerate() {
                *v = num(N_PARAMS + j)?;
            }
            let split = match &rec[width - 1] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(Error::format(&name, format!("row {}: unknown split tag {other:?}", line + 1)))
                }
            };
            ds.inputs.push(x);
            ds.targets.push(y);
            ds.split.push(split);
        }
        Ok(ds)
    }
}

pub fn meta_path(path: &std::path::Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    p.into()
}

/// Per-row generator stream: rows are independent of evaluation order.
fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

/// Sample `n` parameter vectors uniformly in `domain`, solve each, drop the
/// failed solves, and split the survivors 90/10 with a seeded shuffle.
pub fn generate_dataset(n: usize, domain: &DomainBox, seed: u64, oracle: &Oracle) -> Result<Dataset> {
    use rayon::prelude::*;

    if n < 100 {
        return Err(Error::Invalid(format!("dataset needs at least 100 rows for a split (got {n})")));
    }
    domain.validate()?;
    if !(0.0..1.0).contains(&oracle.p_fail) {
        return Err(Error::Invalid(format!("p_fail must lie in [0, 1) (got {})", oracle.p_fail)));
    }

    let solved: Vec<Option<([f64; N_PARAMS], [f64; N_BINS])>> = (0..n)
        .into_par_iter()
        .map(|row| -> Result<_> {
            let mut rng = row_rng(seed, row);
            let x: [f64; N_PARAMS] =
                std::array::from_fn(|i| rng.random_range(domain.lower[i]..=domain.upper[i]));
            match oracle.solve_flux(&HelioParams::from_array(x), &mut rng)? {
                Solve::Converged(s) => {
                    let y: [f64; N_BINS] = std::array::from_fn(|i| s.flux[i].log10());
                    Ok(Some((x, y)))
                }
                Solve::Unstable => Ok(None),
            }
        })
        .collect::<Result<_>>()?;

    let n_failed = solved.iter().filter(|r| r.is_none()).count();
    let (inputs, targets): (Vec<_>, Vec<_>) = solved.into_iter().flatten().unzip();
    let survivors = inputs.len();
    if survivors < 10 {
        return Err(Error::Numerical(format!("only {survivors} of {n} solves converged")));
    }

    let n_test = ((survivors as f64) * 0.1).round() as usize;
    let mut order: Vec<usize> = (0..survivors).collect();
    let mut shuffle_rng = row_rng(seed, usize::MAX);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
    let mut split = vec![Split::Train; survivors];
    for &i in &order[..n_test] {
        split[i] = Split::Test;
    }

    Ok(Dataset {
        inputs,
        targets,
        split,
        meta: DatasetMeta {
            seed,
            n_requested: n,
            n_failed,
            p_fail: oracle.p_fail,
            domain: *domain,
            oracle: oracle.constants,
        },
    })
}
