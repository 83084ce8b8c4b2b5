//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surrohmc::diagnostics::{autocorrelation, credible_interval_1d, effective_sample_size, EvaluationLedger};
use surrohmc::forward_model::{generate_dataset, Dataset, DomainBox, HelioParams, Oracle, Split};
use surrohmc::nn::TrainConfig;
use surrohmc::posterior::{
    synthetic_observation, FixedContext, PriorBox, SurrogatePosterior, N_SAMPLED, SAMPLED_INDICES, SAMPLED_NAMES,
    SYNTHETIC_NOISE,
};
use surrohmc::samplers::{read_chain, run_chain, write_chain, Chain, ChainConfig, DiagonalGaussian, SamplerKind};
use surrohmc::selftest::run_selftest;
use surrohmc::surrogate::{accuracy, fit_surrogate, Surrogate};

const DATASET_ROWS: usize = 100_000;
const TRAIN_EPOCHS: usize = 450;
const TRUTH: [f64; 8] = [40.0, 5.0, 450.0, 2.0, 0.8, 1.0, 0.7, 1.2];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        if !o.passed {
            self.failures += 1;
        }
        println!(
            "{} {name} ({secs:.1} s): {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
}

fn training_box(model: &Surrogate) -> DomainBox {
    let (lo, hi) = model.trusted_domain();
    DomainBox {
        lower: lo.try_into().unwrap(),
        upper: hi.try_into().unwrap(),
    }
}

fn observed_context(seed: u64) -> FixedContext {
    let truth = HelioParams::from_array(TRUTH);
    let (obs, _) = synthetic_observation(&Oracle::default(), &truth, SYNTHETIC_NOISE, seed).unwrap();
    FixedContext::new(TRUTH[0], TRUTH[1], TRUTH[2], obs).unwrap()
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn physical_chain(chain: Chain, post: &SurrogatePosterior) -> Chain {
    let target = post.standardized();
    chain.map_samples(|u| target.to_physical(u).to_vec())
}

fn criterion_1(ds: &Dataset) -> (Outcome, Surrogate) {
    let t = Instant::now();
    let cfg = TrainConfig {
        max_epochs: TRAIN_EPOCHS,
        ..Default::default()
    };
    let (model, history) = fit_surrogate(ds, &cfg, |_, _| {}).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let report = accuracy(&model, ds, Split::Test).unwrap();
    let (worst_bin, worst) = report
        .mean_rel_error
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |a, (i, e)| if e > a.1 { (i, e) } else { a });
    let corr = report.max_abs_corr();
    let passed = worst <= 0.03 && corr < 0.1 && secs <= 1800.0;
    let detail = format!(
        "max per-bin relative error {worst:.4} (bin {worst_bin}, bound 0.03); max |residual-input r| {corr:.3} \
         (bound 0.1); {} epochs, best {}; training {secs:.0} s",
        history.train_loss.len(),
        history.best_epoch
    );
    (outcome(passed, detail), model)
}

fn criterion_2(model: &Surrogate) -> Outcome {
    let prior = PriorBox::from_domain(&training_box(model));
    let post = SurrogatePosterior::new(model, observed_context(11), prior).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let z: [f64; N_SAMPLED] = std::array::from_fn(|i| {
            let w = prior.upper[i] - prior.lower[i];
            rng.random_range(prior.lower[i] + 0.01 * w..prior.upper[i] - 0.01 * w)
        });
        let (_, g) = post.log_posterior_and_grad(&z).unwrap();
        for i in 0..N_SAMPLED {
            let h = 1e-6 * (prior.upper[i] - prior.lower[i]);
            let (mut zp, mut zm) = (z, z);
            zp[i] += h;
            zm[i] -= h;
            let fd = (post.log_posterior(&zp).unwrap() - post.log_posterior(&zm).unwrap()) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3));
        }
    }
    outcome(worst < 1e-3, format!("max relative error {worst:.2e} over 100 points (bound 1e-3)"))
}

fn gaussian_check(kind: SamplerKind) -> (bool, String) {
    let sd = [1.0, 2.0, 3.0, 4.0, 5.0];
    let target = DiagonalGaussian { sd: sd.to_vec() };
    let cfg = match kind {
        SamplerKind::Nuts => ChainConfig {
            n_samples: 20_000,
            burn_in: 2000,
            thin: Some(1),
            seed: 31,
            ..Default::default()
        },
        SamplerKind::Rwmh => ChainConfig {
            sampler: SamplerKind::Rwmh,
            n_samples: 100_000,
            burn_in: 50_000,
            thin: Some(100),
            rwmh_scale: 1.0,
            rwmh_autotune: true,
            seed: 31,
            ..Default::default()
        },
    };
    let chain = run_chain(&cfg, &target, &[0.0; 5]).unwrap();
    let (mut worst_z, mut worst_var, mut min_ess) = (0.0f64, 0.0f64, f64::INFINITY);
    for (i, s) in sd.iter().enumerate() {
        let col = chain.column(i);
        let (m, v) = mean_var(&col);
        let ess = effective_sample_size(&col).unwrap();
        worst_z = worst_z.max(m.abs() / (s * s / ess).sqrt());
        worst_var = worst_var.max((v / (s * s) - 1.0).abs());
        min_ess = min_ess.min(ess);
    }
    let ok = worst_z <= 4.0 && worst_var <= 0.1 && min_ess >= 5000.0;
    (
        ok,
        format!("{kind:?}: max |mean|/SE {worst_z:.2}, max variance error {worst_var:.3}, min ESS {min_ess:.0}"),
    )
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let (a, da) = gaussian_check(SamplerKind::Nuts);
    let (b, db) = gaussian_check(SamplerKind::Rwmh);
    let secs = t.elapsed().as_secs_f64();
    outcome(a && b && secs <= 120.0, format!("{da}; {db}; {secs:.1} s (bound 120 s)"))
}

fn criterion_4(model: &Surrogate) -> Outcome {
    let t = Instant::now();
    let prior = PriorBox::from_domain(&training_box(model));
    let post = SurrogatePosterior::new(model, observed_context(11), prior).unwrap();
    let target = post.standardized();
    let start = vec![0.0; N_SAMPLED];
    let nuts = run_chain(
        &ChainConfig {
            n_samples: 4000,
            burn_in: 2000,
            thin: Some(1),
            seed: 41,
            ..Default::default()
        },
        &target,
        &start,
    )
    .unwrap();
    let rwmh = run_chain(
        &ChainConfig {
            sampler: SamplerKind::Rwmh,
            n_samples: 1_000_000,
            burn_in: 200_000,
            thin: Some(1),
            rwmh_scale: 1e-2,
            rwmh_autotune: true,
            seed: 41,
            ..Default::default()
        },
        &target,
        &start,
    )
    .unwrap();
    let secs = t.elapsed().as_secs_f64();
    let k0 = 0;
    let (nc, rc) = (nuts.column(k0), rwmh.column(k0));
    let nuts_lag1 = autocorrelation(&nc, 1).unwrap().at(1);
    let rwmh_lag100 = autocorrelation(&rc, 100).unwrap().at(100);
    let nuts_rate = effective_sample_size(&nc).unwrap() / nc.len() as f64;
    let rwmh_rate = effective_sample_size(&rc).unwrap() / rc.len() as f64;
    let ratio = nuts_rate / rwmh_rate;
    let acc = rwmh.stats.accept_rate;
    let passed = ratio >= 20.0 && (0.15..=0.35).contains(&acc) && secs <= 600.0;
    outcome(
        passed,
        format!(
            "k0_par ESS per stored sample NUTS {nuts_rate:.3} / RWMH {rwmh_rate:.5} = {ratio:.1} (bound 20); \
             NUTS lag-1 ACF {nuts_lag1:.3}, RWMH lag-100 ACF {rwmh_lag100:.3}; RWMH acceptance {acc:.3} \
             (scale {:.2e}); {secs:.0} s",
            rwmh.stats.step_size
        ),
    )
}

fn criterion_5(model: &Surrogate) -> Outcome {
    let t = Instant::now();
    let prior = PriorBox::from_domain(&training_box(model));
    let tracked = [0usize, 3, 4];
    let mut in68 = [0usize; 3];
    let mut in95 = [0usize; 3];
    let mut widths_ok = true;
    let mut notes = Vec::new();
    for seed in [1u64, 2, 3] {
        let post = SurrogatePosterior::new(model, observed_context(seed), prior).unwrap();
        let cfg = ChainConfig {
            seed,
            ..Default::default()
        };
        let chain = physical_chain(run_chain(&cfg, &post.standardized(), &[0.0; N_SAMPLED]).unwrap(), &post);
        let mut w = [0.0; N_SAMPLED];
        for i in 0..N_SAMPLED {
            let col = chain.column(i);
            let truth = TRUTH[SAMPLED_INDICES[i]];
            let (lo, hi) = credible_interval_1d(&col, 0.683).unwrap();
            let (lo95, hi95) = credible_interval_1d(&col, 0.95).unwrap();
            w[i] = hi - lo;
            if let Some(k) = tracked.iter().position(|&j| j == i) {
                in68[k] += usize::from(lo <= truth && truth <= hi);
                in95[k] += usize::from(lo95 <= truth && truth <= hi95);
            }
        }
        // a slopes share one box range and b slopes another, so compare like with like
        widths_ok &= w[1] > w[3] && w[2] > w[4];
        notes.push(format!(
            "seed {seed}: widths a_par {:.3} b_par {:.3} a_perp {:.3} b_perp {:.3}",
            w[1], w[2], w[3], w[4]
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    let coverage_ok = in68.iter().all(|&c| c >= 1) && in95.iter().all(|&c| c == 3);
    let cover = tracked
        .iter()
        .enumerate()
        .map(|(k, &i)| format!("{} 68%: {}/3 95%: {}/3", SAMPLED_NAMES[i], in68[k], in95[k]))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        coverage_ok && widths_ok && secs <= 1800.0,
        format!("{cover}; {}; {secs:.0} s", notes.join("; ")),
    )
}

fn criterion_6(model: &Surrogate) -> Outcome {
    let prior = PriorBox::from_domain(&training_box(model));
    let post = SurrogatePosterior::new(model, observed_context(11), prior).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let points: Vec<[f64; N_SAMPLED]> = (0..2000)
        .map(|_| std::array::from_fn(|i| rng.random_range(prior.lower[i]..prior.upper[i])))
        .collect();
    let t = Instant::now();
    let mut acc = 0.0;
    for z in &points {
        acc += post.log_likelihood(z).unwrap();
    }
    let per_call_ms = t.elapsed().as_secs_f64() * 1e3 / points.len() as f64;
    assert!(acc.is_finite());

    let cfg = ChainConfig {
        n_samples: 200,
        burn_in: 300,
        thin: Some(3),
        seed: 6,
        ..Default::default()
    };
    let chain = physical_chain(run_chain(&cfg, &post.standardized(), &[0.0; N_SAMPLED]).unwrap(), &post);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.csv");
    write_chain(&path, &chain, &SAMPLED_NAMES).unwrap();
    let (_, back) = read_chain(&path).unwrap();
    let ledger = EvaluationLedger::from_chain(&back);
    let mismatches = ledger.mismatches(&cfg, &back.stats);
    let exact = ledger.stored_samples == 200 && ledger.raw_steps == 900 && ledger.burn_in == 300;
    outcome(
        per_call_ms <= 5.0 && mismatches.is_empty() && exact,
        format!(
            "likelihood {per_call_ms:.3} ms per call (bound 5 ms); ledger stored {} raw {} gradients {} \
             leapfrog {}; mismatches {:?}",
            ledger.stored_samples, ledger.raw_steps, ledger.gradient_evals, ledger.leapfrog_steps, mismatches
        ),
    )
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let report = run_selftest();
    let secs = t.elapsed().as_secs_f64();
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    outcome(
        report.passed() && secs <= 60.0,
        format!("{} checks, failed {:?}; {secs:.1} s (bound 60 s)", report.checks.len(), failed),
    )
}

fn main() -> ExitCode {
    let mut suite = Suite { failures: 0 };
    let ds = generate_dataset(DATASET_ROWS, &DomainBox::default(), 1, &Oracle::default()).unwrap();

    let mut model = None;
    suite.run("1 surrogate accuracy", || {
        let (o, m) = criterion_1(&ds);
        model = Some(m);
        o
    });
    let model = model.unwrap();
    suite.run("2 gradient correctness", || criterion_2(&model));
    suite.run("3 sampler correctness", criterion_3);
    suite.run("4 nuts vs rwmh efficiency", || criterion_4(&model));
    suite.run("5 parameter recovery", || criterion_5(&model));
    suite.run("6 throughput and evaluation ledger", || criterion_6(&model));
    suite.run("7 numerical invariant suite", criterion_7);

    if suite.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", suite.failures);
        ExitCode::FAILURE
    }
}
