mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dpnmf::data::{self, CorpusCounts, Normalization};
use dpnmf::federation::run_protocol;
use dpnmf::{
    fit, gaussian_sigma, masked_rmse, objective_value, overall_epsilon, sensitivity_a,
    sensitivity_b, top_k_terms, Coefficients, DataMatrix, Dictionary, Error, Hyperparams,
    InProcessChannel, PrivacyParams, Trajectory,
};

#[derive(Parser, Debug)]
#[command(name = "dpnmf", version, about = "Robust and differentially-private NMF")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Non-private robust NMF.
    Fit(FitArgs),
    /// Private robust NMF with Gaussian-perturbed statistics.
    FitDp(FitDpArgs),
    /// Overall (epsilon, delta) spend of a private run.
    Account(AccountArgs),
    /// Corrupt a fraction of columns with uniform noise.
    Contaminate(ContaminateArgs),
    /// Objective value or masked RMSE.
    Eval(EvalArgs),
    /// Top terms of every dictionary column.
    Topics(TopicsArgs),
}

#[derive(Args, Debug)]
struct CommonFit {
    /// Data matrix, rows are features. `.csv` is dense, anything else coordinate format.
    #[arg(long)]
    input: PathBuf,
    /// Uncorrupted matrix; adds the objective to every trajectory record.
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = Hyperparams::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = Hyperparams::DEFAULT_M)]
    m: f64,
    #[arg(long, default_value_t = Hyperparams::DEFAULT_ETA_H)]
    eta_h: f64,
    #[arg(long)]
    eta_w: Option<f64>,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    inner_iters: usize,
    #[arg(long, default_value_t = Hyperparams::DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    normalize: Option<Normalization>,
    /// Treat the input as term counts and convert to tf-idf weights first.
    #[arg(long)]
    tfidf: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: CommonFit,
}

#[derive(Args, Debug)]
struct FitDpArgs {
    #[command(flatten)]
    common: CommonFit,
    #[arg(long)]
    eps_t: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    /// Do not model outliers; halves the sensitivity of B.
    #[arg(long)]
    no_outliers: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run the two-role protocol and write its message transcript here.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AccountArgs {
    #[arg(long)]
    iters: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    eps_t: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, overrides_with = "no_outliers")]
    outliers: bool,
    #[arg(long, overrides_with = "outliers")]
    no_outliers: bool,
}

#[derive(Args, Debug)]
struct ContaminateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    col_frac: f64,
    #[arg(long, default_value_t = 0.7)]
    entry_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, requires_all = ["w", "h"], conflicts_with_all = ["v", "vhat", "mask"])]
    clean: Option<PathBuf>,
    #[arg(long)]
    w: Option<PathBuf>,
    #[arg(long)]
    h: Option<PathBuf>,
    #[arg(long, requires_all = ["vhat", "mask"])]
    v: Option<PathBuf>,
    #[arg(long)]
    vhat: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TopicsArgs {
    #[arg(long)]
    w: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParam(_) => 1,
        Error::NonFinite(_) | Error::Svd(_) => 3,
        _ => 2,
    }
}

fn load_input(path: &Path, tfidf: bool, norm: Normalization) -> dpnmf::Result<DataMatrix> {
    let mut v = data::load_matrix(path)?;
    if tfidf {
        v = data::tfidf(&CorpusCounts::from_matrix(&v)?);
    }
    Ok(data::normalize_columns(&v, norm))
}

fn hyperparams(c: &CommonFit, eta_w: f64) -> Hyperparams {
    Hyperparams {
        k: c.k,
        lambda: c.lambda,
        m: c.m,
        eta_h: c.eta_h,
        eta_w,
        outer_iters: c.iters,
        inner_iters: c.inner_iters,
        tol: c.tol,
    }
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> dpnmf::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for rec in traj.records() {
        let line = serde_json::to_string(rec).expect("records serialize");
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn write_manifest(dir: &Path, manifest: serde_json::Value) -> dpnmf::Result<()> {
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn inputs_json(c: &CommonFit, norm: Normalization) -> serde_json::Value {
    json!({
        "input": c.input,
        "clean": c.clean,
        "normalize": norm,
        "tfidf": c.tfidf,
    })
}

fn run_fit(a: &FitArgs) -> dpnmf::Result<()> {
    let c = &a.common;
    let norm = c.normalize.unwrap_or(Normalization::None);
    let hp = hyperparams(c, c.eta_w.unwrap_or(c.eta_h));
    let v = load_input(&c.input, c.tfidf, norm)?;
    let clean = c.clean.as_deref().map(|p| load_input(p, c.tfidf, norm)).transpose()?;
    let out = fit(&v, &hp, clean.as_ref())?;

    fs::create_dir_all(&c.out)?;
    data::save_dense_csv(c.out.join("w.csv"), out.w.values())?;
    data::save_dense_csv(c.out.join("h.csv"), out.h.values())?;
    data::save_dense_csv(c.out.join("r.csv"), out.r.values())?;
    write_trajectory(&c.out.join("trajectory.jsonl"), &out.trajectory)?;
    write_manifest(
        &c.out,
        json!({
            "command": "fit",
            "version": env!("CARGO_PKG_VERSION"),
            "data": inputs_json(c, norm),
            "hyperparams": hp,
            // The non-private fit is deterministic.
            "seed": null,
            "iterations_run": out.trajectory.len(),
        }),
    )?;
    if let Some(rec) = out.trajectory.last() {
        println!("iterations {} loss {:.6e}", rec.iter, rec.loss);
        if let Some(obj) = rec.objective {
            println!("objective {obj:.6e}");
        }
    }
    Ok(())
}

fn run_fit_dp(a: &FitDpArgs) -> dpnmf::Result<()> {
    let c = &a.common;
    let norm = c.normalize.unwrap_or(Normalization::UnitL2Clip);
    let hp = hyperparams(c, c.eta_w.unwrap_or(c.eta_h / Hyperparams::PRIVATE_ETA_RATIO));
    let pp = PrivacyParams {
        model_outliers: !a.no_outliers,
        ..PrivacyParams::new(a.eps_t, a.delta, a.seed)
    };
    let v = load_input(&c.input, c.tfidf, norm)?;
    let clean = c.clean.as_deref().map(|p| load_input(p, c.tfidf, norm)).transpose()?;
    let out = dpnmf::fit_dp(&v, &hp, &pp, clean.as_ref())?;

    if let Some(path) = &a.transcript {
        let run = run_protocol(&v, &hp, &pp, &mut InProcessChannel::new())?;
        if run.w.values() != out.w.values() {
            return Err(Error::InvalidData(
                "protocol run diverged from the monolithic private fit".into(),
            ));
        }
        fs::write(path, run.transcript.join("\n") + "\n")?;
    }

    fs::create_dir_all(&c.out)?;
    data::save_dense_csv(c.out.join("w.csv"), out.w.values())?;
    write_trajectory(&c.out.join("trajectory.jsonl"), &out.trajectory)?;
    let first = out.noise.first();
    write_manifest(
        &c.out,
        json!({
            "command": "fit-dp",
            "version": env!("CARGO_PKG_VERSION"),
            "data": inputs_json(c, norm),
            "hyperparams": hp,
            "privacy": pp,
            "seed": pp.seed,
            "tau_a": first.map(|s| s.tau_a),
            "tau_b": first.map(|s| s.tau_b),
            "spend": out.spend,
            "transcript": a.transcript,
        }),
    )?;
    println!("epsilon {:.6}", out.spend.epsilon);
    println!("delta {:e}", out.spend.delta);
    println!("alpha_opt {:.6}", out.spend.alpha_opt);
    println!("iterations {}", out.spend.t);
    Ok(())
}

fn run_account(a: &AccountArgs) -> dpnmf::Result<()> {
    let outliers = !a.no_outliers;
    if a.n == 0 {
        return Err(Error::InvalidParam("n must be >= 1".into()));
    }
    let (da, db) = (sensitivity_a(a.n), sensitivity_b(a.n, outliers));
    let tau_a = gaussian_sigma(da, a.eps_t, a.delta)?;
    let tau_b = gaussian_sigma(db, a.eps_t, a.delta)?;
    let spend = overall_epsilon(a.iters, da, tau_a, db, tau_b, a.delta)?;
    println!("tau_a {tau_a:.6}");
    println!("tau_b {tau_b:.6}");
    println!("epsilon {:.6}", spend.epsilon);
    println!("alpha_opt {:.6}", spend.alpha_opt);
    println!("naive_epsilon {:.6}", a.iters as f64 * 2.0 * a.eps_t);
    Ok(())
}

fn run_contaminate(a: &ContaminateArgs) -> dpnmf::Result<()> {
    let v = data::load_matrix(&a.input)?;
    let (corrupted, mask) = data::contaminate(&v, a.col_frac, a.entry_frac, a.seed)?;
    fs::create_dir_all(&a.out)?;
    data::save_dense_csv(a.out.join("contaminated.csv"), corrupted.values())?;
    fs::write(a.out.join("mask.csv"), data::format_mask(&mask))?;
    write_manifest(
        &a.out,
        json!({
            "command": "contaminate",
            "version": env!("CARGO_PKG_VERSION"),
            "input": a.input,
            "col_frac": a.col_frac,
            "entry_frac": a.entry_frac,
            "seed": a.seed,
        }),
    )?;
    let cols = mask.columns().into_iter().filter(|c| c.iter().any(|&b| b)).count();
    println!("corrupted {} entries in {cols} columns", mask.iter().filter(|&&b| b).count());
    Ok(())
}

fn run_eval(a: &EvalArgs) -> dpnmf::Result<()> {
    match (&a.clean, &a.w, &a.h, &a.v, &a.vhat, &a.mask) {
        (Some(clean), Some(w), Some(h), None, None, None) => {
            let clean = data::load_matrix(clean)?;
            let w = Dictionary::new(data::load_real_csv(w)?)?;
            let h = Coefficients::new(data::load_real_csv(h)?)?;
            println!("objective {:.10e}", objective_value(&clean, &w, &h)?);
        }
        (None, None, None, Some(v), Some(vhat), Some(mask)) => {
            let v = data::load_real_csv(v)?;
            let vhat = data::load_real_csv(vhat)?;
            let mask = data::load_mask(mask)?;
            println!("rmse {:.10e}", masked_rmse(&v, &vhat, &mask)?);
        }
        _ => {
            return Err(Error::InvalidParam(
                "eval needs either --clean --w --h or --v --vhat --mask".into(),
            ))
        }
    }
    Ok(())
}

fn run_topics(a: &TopicsArgs) -> dpnmf::Result<()> {
    let w = Dictionary::new(data::load_real_csv(&a.w)?)?;
    let vocab = data::load_vocabulary(&a.vocab)?;
    for (i, terms) in top_k_terms(&w, &vocab, a.k)?.iter().enumerate() {
        println!("topic {}: {}", i + 1, terms.join(" "));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let argv = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };

    let result = match &cli.cmd {
        Command::Fit(a) => run_fit(a),
        Command::FitDp(a) => run_fit_dp(a),
        Command::Account(a) => run_account(a),
        Command::Contaminate(a) => run_contaminate(a),
        Command::Eval(a) => run_eval(a),
        Command::Topics(a) => run_topics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
