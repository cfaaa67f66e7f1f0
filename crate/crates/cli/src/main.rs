use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bbs_core::distributions::Sample;
use bbs_core::error::Error;
use bbs_core::estimation::{fit_bbs, fit_bbs_restricted, fit_gbs2, FitOptions};
use bbs_core::hypothesis::one_sided::{slr, slr_bootstrap, slr_c1, slr_c2};
use bbs_core::hypothesis::two_sided::{
    bartlett_bootstrap_lr, bootstrap_two_sided, lr_test, score_test, wald_test, StatisticKind,
};
use bbs_core::hypothesis::{Alternative, Parameter, TestSpec};
use bbs_core::likelihood::PenaltySpec;
use bbs_core::montecarlo::{run_study, SimConfig};
use bbs_core::nonnested::decide;
use bbs_core::stream::StreamKey;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "bbs", version, about = "Inference for the bimodal Birnbaum-Saunders distribution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a data file.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Model::Bbs)]
        model: Model,
        /// Defaults to `modified` for bbs and `none` for bs.
        #[arg(long, value_enum)]
        penalty: Option<PenaltyArg>,
        #[arg(long, default_value_t = 1.0)]
        phi: f64,
    },
    /// Test a hypothesis on one BBS parameter.
    Test {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "gamma")]
        param: Parameter,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        null: f64,
        #[arg(long = "type", value_enum, default_value_t = TestType::Lr)]
        kind: TestType,
        #[arg(long, value_enum, default_value_t = TestMethod::Asymptotic)]
        method: TestMethod,
        #[arg(long, value_enum, default_value_t = Side::Two)]
        side: Side,
        #[arg(long = "B", default_value_t = 299)]
        b: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = PenaltyArg::Modified)]
        penalty: PenaltyArg,
        #[arg(long, default_value_t = 1.0)]
        phi: f64,
    },
    /// Choose between BBS and GBS2 with two bootstrap tests.
    Select {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "B", default_value_t = 299)]
        b: usize,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = PenaltyArg::Modified)]
        penalty: PenaltyArg,
        #[arg(long, default_value_t = 1.0)]
        phi: f64,
    },
    /// Run a Monte Carlo study from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides `master_seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Bbs,
    Bs,
    Gbs2,
}

#[derive(Clone, Copy, ValueEnum)]
enum PenaltyArg {
    None,
    Jeffreys,
    Modified,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum TestType {
    Lr,
    Score,
    Wald,
    Slr,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum TestMethod {
    Asymptotic,
    Bootstrap,
    Bartlett,
    C1,
    C2,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Side {
    Two,
    Less,
    Greater,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Usage(String),
    Statistical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::FitFailed { .. } | Error::BootstrapFailures { .. } | Error::Numerical(_) | Error::Quadrature { .. } => {
                Failure::Statistical(e.to_string())
            }
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome = Result<(Value, bool), Failure>;

fn penalty(kind: PenaltyArg, phi: f64) -> Result<PenaltySpec, Failure> {
    let p = match kind {
        PenaltyArg::None => PenaltySpec::none(),
        PenaltyArg::Jeffreys => PenaltySpec::jeffreys(),
        PenaltyArg::Modified => PenaltySpec::modified(phi),
    };
    p.validate()?;
    Ok(p)
}

/// Reads one positive real per line; a non-numeric first line is a header.
fn read_data(path: &Path) -> Result<Sample, Failure> {
    let file = std::fs::File::open(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file);
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        let fields: Vec<&str> = rec.iter().map(str::trim).collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        if fields.len() != 1 {
            return Err(Failure::Usage(format!("line {line}: expected one column, found {}", fields.len())));
        }
        match fields[0].parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => values.push(v),
            Ok(v) => return Err(Failure::Usage(format!("line {line}: value {v} is not a positive real"))),
            Err(_) if values.is_empty() && line == 1 => {}
            Err(_) => return Err(Failure::Usage(format!("line {line}: `{}` is not a number", fields[0]))),
        }
    }
    if values.is_empty() {
        return Err(Failure::Usage(format!("{}: no observations", path.display())));
    }
    Ok(Sample::new(values)?)
}

fn cmd_fit(data: &Path, model: Model, pen: Option<PenaltyArg>, phi: f64) -> Outcome {
    let x = read_data(data)?;
    let opts = FitOptions::default();
    let n = x.len() as f64;
    let (name, estimates, stderr, ll, llp, status, iterations, k) = match model {
        Model::Bbs | Model::Bs => {
            let default = if matches!(model, Model::Bbs) { PenaltyArg::Modified } else { PenaltyArg::None };
            let spec = penalty(pen.unwrap_or(default), phi)?;
            let (name, fit, k) = match model {
                Model::Bbs => ("bbs", fit_bbs(&x, &spec, &opts)?, 3),
                _ => ("bs", fit_bbs_restricted(&x, &spec, [None, None, Some(0.0)], &opts)?, 2),
            };
            let p = fit.params;
            let est = json!({"alpha": p.alpha, "beta": p.beta, "gamma": p.gamma});
            let se = fit.stderr.map(|s| json!({"alpha": s[0], "beta": s[1], "gamma": s[2]}));
            (name, est, se, fit.loglik_plain, fit.loglik_penalized, fit.status, fit.iterations, k)
        }
        Model::Gbs2 => {
            if pen.is_some() {
                return Err(Failure::Usage("gbs2 fits are unpenalized; drop --penalty".into()));
            }
            let fit = fit_gbs2(&x, &opts)?;
            let p = fit.params;
            let est = json!({"alpha": p.alpha, "beta": p.beta, "nu": p.nu});
            let se = fit.stderr.map(|s| json!({"alpha": s[0], "beta": s[1], "nu": s[2]}));
            ("gbs2", est, se, fit.loglik_plain, fit.loglik_penalized, fit.status, fit.iterations, 3)
        }
    };
    let kf = k as f64;
    let converged = status == bbs_core::estimation::FitStatus::Converged;
    eprintln!("{name}: {status:?} after {iterations} iterations, loglik {ll:.4}");
    eprintln!("estimates: {estimates}");
    Ok((
        json!({
            "schema_version": SCHEMA_VERSION,
            "command": "fit",
            "model": name,
            "n": x.len(),
            "estimates": estimates,
            "stderr": stderr,
            "loglik": ll,
            "loglik_penalized": llp,
            "parameters": k,
            "aic": -2.0 * ll + 2.0 * kf,
            "bic": -2.0 * ll + kf * n.ln(),
            "status": status,
            "iterations": iterations,
        }),
        converged,
    ))
}

#[allow(clippy::too_many_arguments)]
fn cmd_test(
    data: &Path,
    param: Parameter,
    null: f64,
    kind: TestType,
    method: TestMethod,
    side: Side,
    b: usize,
    seed: u64,
    pen: PenaltySpec,
) -> Outcome {
    use TestMethod::*;
    use TestType::*;
    let valid = match kind {
        Lr => matches!(method, Asymptotic | Bootstrap | Bartlett),
        Score => matches!(method, Asymptotic | Bootstrap),
        Wald => method == Asymptotic,
        Slr => matches!(method, Asymptotic | Bootstrap | C1 | C2),
    };
    if !valid {
        return Err(Failure::Usage(format!(
            "--type {} does not support --method {}",
            kind.to_possible_value().unwrap().get_name(),
            method.to_possible_value().unwrap().get_name()
        )));
    }
    if kind != Slr && side != Side::Two {
        return Err(Failure::Usage("only --type slr supports one-sided alternatives".into()));
    }
    let alternative = match side {
        Side::Two => Alternative::TwoSided,
        Side::Less => Alternative::Less,
        Side::Greater => Alternative::Greater,
    };
    let spec = TestSpec { alternative, ..TestSpec::scalar(param, null) };
    spec.validate()?;
    let x = read_data(data)?;
    let opts = FitOptions::default();
    let key = StreamKey::new(seed);
    let result = match (kind, method) {
        (Lr, Asymptotic) => lr_test(&x, &spec, &pen, &opts),
        (Lr, Bootstrap) => bootstrap_two_sided(&x, &spec, &pen, StatisticKind::Lr, b, key, &opts),
        (Lr, Bartlett) => bartlett_bootstrap_lr(&x, &spec, &pen, b, key, 0.0, &opts),
        (Score, Asymptotic) => score_test(&x, &spec, &pen, &opts),
        (Score, Bootstrap) => bootstrap_two_sided(&x, &spec, &pen, StatisticKind::Score, b, key, &opts),
        (Wald, _) => wald_test(&x, &spec, &pen, &opts),
        (Slr, Asymptotic) => slr(&x, &spec, &pen, &opts),
        (Slr, C1) => slr_c1(&x, &spec, &pen, &opts),
        (Slr, C2) => slr_c2(&x, &spec, &pen, &opts),
        (Slr, Bootstrap) => slr_bootstrap(&x, &spec, &pen, b, key, &opts),
        _ => unreachable!("checked above"),
    }?;
    eprintln!("{:?}: statistic {:.6}, p-value {:.6}", result.method, result.statistic, result.p_value);
    let mut out = json!({"schema_version": SCHEMA_VERSION, "command": "test", "hypothesis": spec, "n": x.len()});
    if let (Value::Object(o), Ok(Value::Object(r))) = (&mut out, serde_json::to_value(&result)) {
        o.extend(r);
    }
    Ok((out, true))
}

fn cmd_select(data: &Path, b: usize, epsilon: f64, seed: u64, pen: PenaltySpec) -> Outcome {
    let x = read_data(data)?;
    let r = decide(&x, b, epsilon, StreamKey::new(seed), &pen, &FitOptions::default())?;
    eprintln!(
        "W_ne {:.4}, p_f {:.4}, p_g {:.4}: outcome {:?}, selected {:?}",
        r.w_ne, r.p_f, r.p_g, r.outcome, r.selected
    );
    let mut out = json!({"schema_version": SCHEMA_VERSION, "command": "select", "n": x.len()});
    if let (Value::Object(o), Ok(Value::Object(v))) = (&mut out, serde_json::to_value(&r)) {
        o.extend(v);
    }
    Ok((out, true))
}

fn cmd_simulate(config: &Path, out: &Path, threads: Option<usize>, seed: Option<u64>) -> Outcome {
    let mut cfg = SimConfig::load(config)?;
    if threads.is_some() {
        cfg.threads = threads;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    let report = run_study(&cfg)?;
    let (csv, json_path) = report.write(out).map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))?;
    eprint!("{}", report.summary());
    Ok((
        json!({
            "schema_version": SCHEMA_VERSION,
            "command": "simulate",
            "csv": csv,
            "json": json_path,
            "records": report.records.len(),
        }),
        true,
    ))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Fit { data, model, penalty: pen, phi } => cmd_fit(&data, model, pen, phi),
        Command::Test { data, param, null, kind, method, side, b, seed, penalty: pen, phi } => {
            penalty(pen, phi).and_then(|p| cmd_test(&data, param, null, kind, method, side, b, seed, p))
        }
        Command::Select { data, b, epsilon, seed, penalty: pen, phi } => {
            penalty(pen, phi).and_then(|p| cmd_select(&data, b, epsilon, seed, p))
        }
        Command::Simulate { config, out, threads, seed } => cmd_simulate(&config, &out, threads, seed),
    };
    match outcome {
        Ok((value, ok)) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("json"));
            ExitCode::from(if ok { 0 } else { 2 })
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Statistical(m)) => {
            eprintln!("error: {m}");
            println!("{}", json!({"schema_version": SCHEMA_VERSION, "status": "failed", "error": m}));
            ExitCode::from(2)
        }
    }
}
