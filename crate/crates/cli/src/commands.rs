use std::io::Write as _;
use std::path::{Path, PathBuf};

use surrohmc::diagnostics::{
    autocorrelation, histogram_1d, render_summary, summarize, write_acf_csv, write_bands_csv, write_hist1d_csv,
    write_hist2d_csv, write_summary_csv, EvaluationLedger, MARGINAL_BINS,
};
use surrohmc::forward_model::{
    generate_dataset, rigidity_grid, Dataset, DomainBox, FluxSpectrum, HelioParams, Oracle, Split, N_PARAMS,
};
use surrohmc::model_file::{load_model, save_model};
use surrohmc::posterior::{embed, synthetic_observation, FixedContext, SurrogatePosterior, SAMPLED_NAMES};
use surrohmc::samplers::{read_chain, run_chains, write_chain};
use surrohmc::selftest::run_selftest;
use surrohmc::surrogate::{accuracy, fit_surrogate, Surrogate};

use crate::config::RunConfig;
use crate::CliError;

fn require(path: &Path, field: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{field}: {} does not exist", path.display())))
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            std::fs::create_dir_all(p).map_err(|e| CliError::Io(format!("cannot create {}: {e}", p.display())))
        }
        _ => Ok(()),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("paths.output_dir {}: {e}", dir.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn oracle(cfg: &RunConfig) -> Oracle {
    Oracle {
        constants: cfg.data.oracle,
        p_fail: cfg.data.p_fail,
        validity: cfg.data.domain.widened(0.5),
    }
}

pub fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = generate_dataset(cfg.data.n_samples, &cfg.data.domain, cfg.data.seed, &oracle(cfg))?;
    ensure_parent(&cfg.paths.dataset)?;
    ds.write(&cfg.paths.dataset)?;
    println!(
        "wrote {} rows ({} train, {} test, {} solver failures dropped) to {}",
        ds.len(),
        ds.count(Split::Train),
        ds.count(Split::Test),
        ds.meta.n_failed,
        cfg.paths.dataset.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, quiet: bool) -> Result<(), CliError> {
    require(&cfg.paths.dataset, "paths.dataset")?;
    let ds = Dataset::read(&cfg.paths.dataset)?;
    let (model, history) = fit_surrogate(&ds, &cfg.train, |epoch, h| {
        if !quiet {
            eprintln!(
                "epoch {epoch:>4}  train {:.6}  test {:.6}  lr {:.2e}",
                h.train_loss[epoch], h.test_loss[epoch], h.learning_rate[epoch]
            );
        }
    })?;
    ensure_parent(&cfg.paths.model)?;
    save_model(&model, &cfg.paths.model)?;

    let hist_path = with_suffix(&cfg.paths.model, ".history.csv");
    let mut w = csv::Writer::from_path(&hist_path).map_err(surrohmc::Error::from)?;
    let rec = |w: &mut csv::Writer<std::fs::File>, r: [String; 4]| w.write_record(&r).map_err(surrohmc::Error::from);
    rec(&mut w, ["epoch", "train_loss", "test_loss", "learning_rate"].map(String::from))?;
    for e in 0..history.train_loss.len() {
        rec(
            &mut w,
            [
                e.to_string(),
                history.train_loss[e].to_string(),
                history.test_loss[e].to_string(),
                history.learning_rate[e].to_string(),
            ],
        )?;
    }
    w.flush().map_err(surrohmc::Error::from)?;

    let report = accuracy(&model, &ds, Split::Test)?;
    println!("best epoch {} of {}", history.best_epoch, history.train_loss.len());
    println!("rigidity_gv,mean_rel_error");
    for (r, e) in rigidity_grid().values().iter().zip(&report.mean_rel_error) {
        println!("{r:.5},{e:.5}");
    }
    println!(
        "max per-bin relative error {:.4}; max |residual-input correlation| {:.3}",
        report.max_mean_rel_error(),
        report.max_abs_corr()
    );
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let truth = HelioParams::from_array(cfg.simulate.truth);
    let (obs, clean) = synthetic_observation(&oracle(cfg), &truth, cfg.simulate.noise, cfg.simulate.seed)?;
    ensure_parent(&cfg.paths.observed)?;
    obs.write_csv(&cfg.paths.observed)?;
    let side = serde_json::json!({ "truth": truth, "noise": cfg.simulate.noise, "seed": cfg.simulate.seed, "clean_flux": clean });
    let text = serde_json::to_string_pretty(&side).map_err(surrohmc::Error::from)? + "\n";
    std::fs::write(with_suffix(&cfg.paths.observed, ".truth.json"), text).map_err(surrohmc::Error::from)?;
    println!("wrote synthetic observation to {}", cfg.paths.observed.display());
    Ok(())
}

fn training_box(model: &Surrogate) -> DomainBox {
    let (lo, hi) = model.trusted_domain();
    DomainBox {
        lower: lo.try_into().expect("eight inputs"),
        upper: hi.try_into().expect("eight inputs"),
    }
}

fn load_inputs(cfg: &RunConfig) -> Result<(Surrogate, FixedContext), CliError> {
    require(&cfg.paths.model, "paths.model")?;
    require(&cfg.paths.observed, "paths.observed")?;
    let model = load_model(&cfg.paths.model)?;
    if model.input_dim() != N_PARAMS {
        return Err(CliError::Config(format!("paths.model: expects {} inputs", model.input_dim())));
    }
    let observed = FluxSpectrum::read_csv(&cfg.paths.observed)?;
    if observed.sigma.is_none() {
        return Err(CliError::Config("paths.observed: spectrum has no sigma column".into()));
    }
    let c = &cfg.context;
    let ctx = FixedContext::new(c.alpha, c.i_hmf, c.v_sw, observed)?;
    Ok((model, ctx))
}

fn check_context(model: &Surrogate, ctx: &FixedContext) -> Result<(), CliError> {
    let b = training_box(model);
    for (i, v) in [ctx.alpha, ctx.i_hmf, ctx.v_sw].into_iter().enumerate() {
        if !(v >= b.lower[i] && v <= b.upper[i]) {
            return Err(surrohmc::Error::Domain {
                field: format!("context.{}", HelioParams::NAMES[i]),
                value: v,
                lo: b.lower[i],
                hi: b.upper[i],
            }
            .into());
        }
    }
    Ok(())
}

fn chain_path(dir: &Path, chains: usize, c: usize) -> PathBuf {
    if chains == 1 {
        dir.join("chain.csv")
    } else {
        dir.join(format!("chain_{c}.csv"))
    }
}

pub fn sample(cfg: &RunConfig, chains: usize) -> Result<(), CliError> {
    let (model, ctx) = load_inputs(cfg)?;
    check_context(&model, &ctx)?;
    let prior = cfg.prior.build(&training_box(&model));
    let post = SurrogatePosterior::new(&model, ctx, prior)?;
    let target = post.standardized();
    let runs = run_chains(&cfg.chain, &target, &[0.0; 5], chains)?;
    ensure_dir(&cfg.paths.output_dir)?;
    for (c, chain) in runs.into_iter().enumerate() {
        let chain = chain.map_samples(|u| target.to_physical(u).to_vec());
        let path = chain_path(&cfg.paths.output_dir, chains, c);
        write_chain(&path, &chain, &SAMPLED_NAMES)?;
        let s = &chain.stats;
        println!(
            "{}: {} samples, acceptance {:.3}, divergences {}, step {:.4e}, gradient evals {}, density evals {}",
            path.display(),
            chain.len(),
            s.accept_rate,
            s.divergences,
            s.step_size,
            s.gradient_evals,
            s.density_evals
        );
    }
    Ok(())
}

pub fn diagnose(cfg: &RunConfig, chain: Option<PathBuf>) -> Result<(), CliError> {
    let dir = &cfg.paths.output_dir;
    let chain_file = chain.unwrap_or_else(|| {
        let single = dir.join("chain.csv");
        if single.exists() {
            single
        } else {
            dir.join("chain_0.csv")
        }
    });
    require(&chain_file, "chain")?;
    let (model, ctx) = load_inputs(cfg)?;
    let (names, chain) = read_chain(&chain_file)?;
    if names != SAMPLED_NAMES {
        return Err(CliError::Config(format!(
            "chain: columns {names:?} do not match {SAMPLED_NAMES:?}"
        )));
    }
    let summary = summarize(&chain, &model, &ctx)?;
    ensure_dir(dir)?;
    write_summary_csv(&dir.join("summary.csv"), &summary)?;
    write_bands_csv(&dir.join("bands.csv"), &summary.bands)?;
    write_hist2d_csv(&dir.join("hist2d.csv"), &SAMPLED_NAMES, &summary.regions_2d)?;
    let columns: Vec<Vec<f64>> = (0..SAMPLED_NAMES.len()).map(|i| chain.column(i)).collect();
    let hists = columns
        .iter()
        .map(|c| histogram_1d(c, MARGINAL_BINS))
        .collect::<surrohmc::Result<Vec<_>>>()?;
    write_hist1d_csv(&dir.join("hist1d.csv"), &SAMPLED_NAMES, &hists)?;
    let max_lag = cfg.diagnose.max_lag.min(chain.len().saturating_sub(2));
    if max_lag > 0 {
        match columns.iter().map(|c| autocorrelation(c, max_lag)).collect::<surrohmc::Result<Vec<_>>>() {
            Ok(acfs) => write_acf_csv(&dir.join("acf.csv"), &SAMPLED_NAMES, &acfs)?,
            Err(e) => eprintln!("warning: no ACF table: {e}"),
        }
    }

    let ledger = EvaluationLedger::from_chain(&chain);
    let mismatches = ledger.mismatches(&cfg.chain, &chain.stats);
    let mut text = render_summary(&summary);
    text.push_str(&format!("\nMAP log target {}\n\nevaluation ledger\n", summary.map_log_target));
    text.push_str(&ledger.render());
    if mismatches.is_empty() {
        text.push_str("ledger matches the configured run\n");
    } else {
        for m in &mismatches {
            text.push_str(&format!("ledger mismatch: {m}\n"));
        }
    }
    std::fs::write(dir.join("summary.txt"), &text).map_err(surrohmc::Error::from)?;
    print!("{text}");
    Ok(())
}

pub fn predict(cfg: &RunConfig, z: [f64; 5]) -> Result<(), CliError> {
    require(&cfg.paths.model, "paths.model")?;
    let model = load_model(&cfg.paths.model)?;
    let c = &cfg.context;
    let placeholder = FluxSpectrum::new(vec![1.0; 32], Some(vec![1.0; 32]))?;
    let x = embed(&z, &FixedContext::new(c.alpha, c.i_hmf, c.v_sw, placeholder)?);
    model.check_domain(&x)?;
    let log10 = model.predict_log10(&x)?;
    let mut out = std::io::stdout().lock();
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    writeln!(out, "rigidity_gv,log10_flux,flux").map_err(io)?;
    for (r, l) in rigidity_grid().values().iter().zip(&log10) {
        writeln!(out, "{r},{l},{}", 10f64.powf(*l)).map_err(io)?;
    }
    Ok(())
}

pub fn selftest() -> Result<(), CliError> {
    let report = run_selftest();
    print!("{}", report.render());
    if report.passed() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::SelftestFailed)
    }
}
