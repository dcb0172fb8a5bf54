use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use kode::analysis::lotka_volterra::{lotka_volterra_study, ParameterSummary, PARAMETER_NAMES};
use kode::analysis::{convergence_study, log_log_slope, mmd_stability_check, ode_perturbation_check, ConvergenceRow};
use kode::data::{benchmark_split, generate_benchmark, load_csv, save_csv_with_header, Benchmark};
use kode::kernels::{KernelFamily, KernelSpec};
use kode::model::{Evaluation, TransportModel};
use kode::optim::TrainTrace;
use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::config::{read_config, require_file, LvRunConfig, RunConfig};
use crate::CliError;

/// Lengthscale of the Gaussian kernel in the interpolation convergence check.
const CONVERGENCE_GAMMA: f64 = 0.2;
const CONVERGENCE_GRID: [usize; 4] = [10, 20, 40, 80];

fn columns(prefix: &str, range: std::ops::Range<usize>) -> Vec<String> {
    range.map(|i| format!("{prefix}{}", i + 1)).collect()
}

fn check_output_file(path: &Path) -> Result<(), CliError> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(CliError::usage_msg(format!(
            "output directory {} does not exist",
            parent.display()
        )));
    }
    if path.is_dir() {
        return Err(CliError::usage_msg(format!(
            "output path {} is a directory",
            path.display()
        )));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime_msg(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn load_model(path: &Path) -> Result<TransportModel, CliError> {
    require_file(path)?;
    TransportModel::load(path).map_err(CliError::usage)
}

fn load_input(path: &Path) -> Result<Array2<f64>, CliError> {
    require_file(path)?;
    load_csv(path).map_err(CliError::usage)
}

fn check_width(what: &str, expected: usize, found: usize) -> Result<(), CliError> {
    if expected == found {
        Ok(())
    } else {
        Err(CliError::usage_msg(format!(
            "{what} has {found} columns but the model has dimension {expected}"
        )))
    }
}

pub fn generate(name: &str, n: usize, seed: u64, output: &Path) -> Result<(), CliError> {
    let which: Benchmark = name.parse().map_err(CliError::usage)?;
    if n == 0 {
        return Err(CliError::usage_msg("n must be positive"));
    }
    check_output_file(output)?;
    let x = generate_benchmark(which, n, seed)?;
    save_csv_with_header(output, Some(&columns("x", 0..2)), x.view())?;
    Ok(())
}

/// Writes the trace when training stops on a non-finite loss.
fn save_partial_trace(err: kode::Error, dir: &Path) -> CliError {
    if let kode::Error::NonFiniteLoss { trace, .. } = &err {
        if let Err(e) = trace.write_csv(dir.join("trace.csv")) {
            eprintln!("warning: could not write partial trace: {e}");
        }
    }
    CliError::runtime_msg(err.to_string())
}

#[derive(Serialize)]
struct TrainReport {
    best_epoch: usize,
    best_val_nmmd: f64,
    test: Option<EvaluationReport>,
}

pub fn train(config_path: &Path) -> Result<(), CliError> {
    let cfg: RunConfig = read_config(config_path)?;
    cfg.validate()?;
    let (train, val, test) = match cfg.benchmark {
        Some(b) => {
            let sp = benchmark_split(b, cfg.data_seed.unwrap_or(cfg.hyper.seed))?;
            (sp.train, sp.val, Some(sp.test))
        }
        None => {
            let train = load_input(cfg.train_data.as_deref().expect("validated"))?;
            let val = load_input(cfg.val_data.as_deref().expect("validated"))?;
            let test = cfg.test_data.as_deref().map(load_input).transpose()?;
            (train, val, test)
        }
    };
    let d = train.ncols();
    check_width("val_data", d, val.ncols())?;
    if let Some(t) = &test {
        check_width("test_data", d, t.ncols())?;
    }
    if cfg.mask_dim >= d {
        return Err(CliError::usage_msg(format!(
            "mask_dim {} must be smaller than the data dimension {d}",
            cfg.mask_dim
        )));
    }
    if cfg.hyper.batch_size > train.nrows() {
        return Err(CliError::usage_msg(format!(
            "batch_size {} exceeds the {} training rows",
            cfg.hyper.batch_size,
            train.nrows()
        )));
    }
    std::fs::create_dir_all(&cfg.output_dir)?;

    let (tc, mc) = (cfg.hyper.train_config(), cfg.hyper.model_config());
    let fitted = if cfg.mask_dim > 0 {
        TransportModel::fit_triangular(&tc, &mc, train.view(), val.view(), cfg.mask_dim)
    } else {
        TransportModel::fit(&tc, &mc, train.view(), val.view())
    };
    let (mut model, trace) = fitted.map_err(|e| save_partial_trace(e, &cfg.output_dir))?;

    let test_eval = match &test {
        Some(t) if cfg.mask_dim == 0 => {
            let e = model.evaluate(t.view(), cfg.evaluation_seed)?;
            model.meta.test_nmmd = Some(e.normalized_mmd);
            Some(EvaluationReport::new(e, t.nrows(), cfg.evaluation_seed))
        }
        _ => None,
    };
    model.save(cfg.output_dir.join("model.json"))?;
    trace.write_csv(cfg.output_dir.join("trace.csv"))?;
    println!("validation normalized MMD: {}", trace.best_val_nmmd);
    if let Some(e) = &test_eval {
        println!("test normalized MMD: {}", e.normalized_mmd);
    }
    write_json(
        &cfg.output_dir.join("report.json"),
        &TrainReport {
            best_epoch: trace.best_epoch,
            best_val_nmmd: trace.best_val_nmmd,
            test: test_eval,
        },
    )
}

fn parse_condition(raw: &str) -> Result<Array1<f64>, CliError> {
    raw.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::usage_msg(format!("bad conditioning value `{v}`")))
        })
        .collect()
}

pub fn sample(
    model_path: &Path,
    n: usize,
    seed: u64,
    output: &Path,
    backward: Option<&Path>,
    condition: Option<&str>,
) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    check_output_file(output)?;
    let d = model.dim();
    if let Some(input) = backward {
        let y = load_input(input)?;
        check_width("backward input", d, y.ncols())?;
        let z = model.pull_back(y.view())?;
        save_csv_with_header(output, Some(&columns("z", 0..d)), z.view())?;
        return Ok(());
    }
    if let Some(raw) = condition {
        let m = model.mask_dim();
        if m == 0 {
            return Err(CliError::usage_msg(
                "--condition needs a triangular model, but this model has mask_dim 0",
            ));
        }
        let y = parse_condition(raw)?;
        if y.len() != m {
            return Err(CliError::usage_msg(format!(
                "--condition takes {m} values, got {}",
                y.len()
            )));
        }
        let out = model.condition(y.view(), n, seed)?;
        if out.extrapolated {
            eprintln!("warning: conditioning value lies outside the training range; samples are extrapolated");
        }
        save_csv_with_header(output, Some(&columns("x", m..d)), out.samples.view())?;
        return Ok(());
    }
    let x = model.sample(n, seed)?;
    save_csv_with_header(output, Some(&columns("x", 0..d)), x.view())?;
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport {
    normalized_mmd: f64,
    normalized_mmd_squared: f64,
    mmd_squared: f64,
    reference_mmd_squared: f64,
    n_test: usize,
    reference_seed: u64,
}

impl EvaluationReport {
    fn new(e: Evaluation, n_test: usize, reference_seed: u64) -> Self {
        Self {
            normalized_mmd: e.normalized_mmd,
            normalized_mmd_squared: e.normalized_mmd_squared(),
            mmd_squared: e.mmd_squared,
            reference_mmd_squared: e.reference_mmd_squared,
            n_test,
            reference_seed,
        }
    }
}

pub fn evaluate(
    model_path: &Path,
    test_path: &Path,
    reference_seed: u64,
    report: Option<&Path>,
) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let test = load_input(test_path)?;
    check_width("test data", model.dim(), test.ncols())?;
    if let Some(r) = report {
        check_output_file(r)?;
    }
    let e = model.evaluate(test.view(), reference_seed)?;
    println!("{}", e.normalized_mmd);
    if let Some(r) = report {
        write_json(r, &EvaluationReport::new(e, test.nrows(), reference_seed))?;
    }
    Ok(())
}

pub fn trajectories(model_path: &Path, n: usize, seed: u64, output: &Path) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    check_output_file(output)?;
    let traj = model.trajectories(n, seed)?;
    let d = model.dim();
    let mut w = BufWriter::new(File::create(output)?);
    let mut header = vec!["sample_id".to_string(), "t".to_string()];
    header.extend(columns("x", 0..d));
    writeln!(w, "{}", header.join(","))?;
    for i in 0..n {
        for (k, t) in traj.times.iter().enumerate() {
            write!(w, "{i},{t}")?;
            for j in 0..d {
                write!(w, ",{}", traj.states[[k, i, j]])?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct LvReport<'a> {
    observation: Vec<f64>,
    extrapolated: bool,
    mcmc_acceptance_rate: f64,
    best_epoch: usize,
    best_val_nmmd: f64,
    parameters: &'a [ParameterSummary],
}

pub fn lotka_volterra(config_path: &Path) -> Result<(), CliError> {
    let cfg: LvRunConfig = read_config(config_path)?;
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let study = lotka_volterra_study(&cfg.study_config()).map_err(|e| save_partial_trace(e, &cfg.output_dir))?;
    let names: Vec<String> = PARAMETER_NAMES.iter().map(|s| s.to_string()).collect();
    let dir = &cfg.output_dir;
    save_csv_with_header(dir.join("posterior_kode.csv"), Some(&names), study.kode.view())?;
    save_csv_with_header(dir.join("posterior_mcmc.csv"), Some(&names), study.mcmc.samples.view())?;
    study.model.save(dir.join("model.json"))?;
    write_trace(&study.trace, dir)?;
    for p in &study.summary {
        println!(
            "{}: truth {} kode {} +- {} mcmc {} +- {}",
            p.name, p.truth, p.kode_mean, p.kode_std, p.mcmc_mean, p.mcmc_std
        );
    }
    write_json(
        &dir.join("report.json"),
        &LvReport {
            observation: study.y_obs.to_vec(),
            extrapolated: study.extrapolated,
            mcmc_acceptance_rate: study.mcmc.acceptance_rate,
            best_epoch: study.trace.best_epoch,
            best_val_nmmd: study.trace.best_val_nmmd,
            parameters: &study.summary,
        },
    )
}

fn write_trace(trace: &TrainTrace, dir: &Path) -> Result<(), CliError> {
    trace.write_csv(dir.join("trace.csv"))?;
    Ok(())
}

#[derive(Serialize)]
struct CheckSummary {
    trials: usize,
    max_violation: f64,
    passed: bool,
}

#[derive(Serialize)]
struct TheoryReport {
    seed: u64,
    mmd_stability: CheckSummary,
    ode_perturbation: CheckSummary,
    convergence_gamma: f64,
    convergence: Vec<ConvergenceRow>,
    convergence_slope: f64,
    convergence_passed: bool,
}

pub fn theory_check(seed: u64, mmd_trials: usize, ode_trials: usize, report: Option<&Path>) -> Result<(), CliError> {
    if mmd_trials == 0 || ode_trials == 0 {
        return Err(CliError::usage_msg("trial counts must be positive"));
    }
    if let Some(r) = report {
        check_output_file(r)?;
    }
    let stability = mmd_stability_check(1.0, mmd_trials, seed, KernelFamily::Gaussian)?;
    let perturbation = ode_perturbation_check(ode_trials, seed)?;
    let spec = KernelSpec::gaussian(CONVERGENCE_GAMMA)?;
    let rows = convergence_study(&spec, |x| (2.0 * std::f64::consts::PI * x).sin(), &CONVERGENCE_GRID)?;
    let slope = log_log_slope(&rows);
    let out = TheoryReport {
        seed,
        mmd_stability: CheckSummary {
            trials: mmd_trials,
            max_violation: stability.max_violation,
            passed: stability.max_violation <= 1e-10,
        },
        ode_perturbation: CheckSummary {
            trials: ode_trials,
            max_violation: perturbation.max_violation,
            passed: perturbation.max_violation <= 0.0,
        },
        convergence_gamma: CONVERGENCE_GAMMA,
        convergence: rows,
        convergence_slope: slope,
        convergence_passed: slope > 2.0,
    };
    println!(
        "mmd stability: max violation {} ({})",
        out.mmd_stability.max_violation,
        verdict(out.mmd_stability.passed)
    );
    println!(
        "ode perturbation: max violation {} ({})",
        out.ode_perturbation.max_violation,
        verdict(out.ode_perturbation.passed)
    );
    println!(
        "interpolation convergence: slope {} ({})",
        out.convergence_slope,
        verdict(out.convergence_passed)
    );
    if let Some(r) = report {
        write_json(r, &out)?;
    }
    if out.mmd_stability.passed && out.ode_perturbation.passed && out.convergence_passed {
        Ok(())
    } else {
        Err(CliError::runtime_msg("theory checks failed"))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}
