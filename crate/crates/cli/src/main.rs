use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use spectral_lab::harness::{
    convergence_check, kta_evolution, run_case, run_lazy, scaling_study, spectra_snapshot,
    sweep_learning_rate, CheckStatus, ExperimentConfig, RunDir,
};
use spectral_lab::model::read_checkpoint;
use spectral_lab::spectral::Histogram;
use spectral_lab::Error;

#[derive(Parser)]
#[command(name = "spectral-lab", version, about = "Spectral dynamics of two-layer networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config; repeat for kta-evolution to compare several cases.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    /// Override a config entry, e.g. `--set optimizer.batch=64`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, default_value = "runs", global = true)]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, PartialEq, Eq)]
enum Command {
    /// Train one configuration over its trials and report spectra and test metrics.
    RunCase {
        /// Also save the trained models.
        #[arg(long)]
        save_checkpoints: bool,
    },
    /// Leading eigenvalues and alignments across a learning-rate grid.
    SweepLr,
    /// Weight and kernel changes across a grid of sample sizes at fixed ratios.
    ScalingStudy,
    /// Per-step check of the first-layer GD convergence bounds.
    ConvergenceCheck,
    /// Ridgeless regression with the initial NTK.
    LazyBaseline,
    /// Spectra of a fresh initialization or of a saved checkpoint.
    Spectra {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// CK target alignment over training for one or more cases.
    KtaEvolution,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::RunCase { .. } => "run-case",
            Command::SweepLr => "sweep-lr",
            Command::ScalingStudy => "scaling-study",
            Command::ConvergenceCheck => "convergence-check",
            Command::LazyBaseline => "lazy-baseline",
            Command::Spectra { .. } => "spectra",
            Command::KtaEvolution => "kta-evolution",
        }
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Config(msg),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

struct Outcome {
    code: u8,
    summary: Value,
}

fn load_configs(cli: &Cli) -> Result<(Vec<ExperimentConfig>, Vec<String>), Failure> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let texts = if cli.config.is_empty() {
        vec!["{}".to_string()]
    } else {
        cli.config
            .iter()
            .map(|p| fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display()))))
            .collect::<Result<_, _>>()?
    };
    let configs = texts
        .iter()
        .map(|t| Ok(ExperimentConfig::from_json(t)?.with_overrides(&overrides)?))
        .collect::<Result<Vec<_>, Error>>()?;
    Ok((configs, overrides))
}

fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("lower,upper,density\n");
    for (i, d) in h.densities.iter().enumerate() {
        s += &format!("{:e},{:e},{:e}\n", h.edges[i], h.edges[i + 1], d);
    }
    s
}

fn option_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn execute(cli: &Cli) -> Result<Outcome, Failure> {
    let (configs, overrides) = load_configs(cli)?;
    if configs.len() > 1 && cli.command != Command::KtaEvolution {
        return Err(Failure::Config("only kta-evolution accepts several --config files".into()));
    }
    let cfg = &configs[0];
    let configs_value: Vec<Value> = configs.iter().map(|c| c.to_value()).collect();
    let config_value = match &cli.command {
        Command::Spectra { checkpoint: Some(p) } => json!({"configs": configs_value, "checkpoint": p}),
        _ => json!({ "configs": configs_value }),
    };
    let name = cli.command.name();
    let mut run = RunDir::create(&cli.out, name, &config_value, &overrides)?;
    let mut code = 0;
    let mut summary = match &cli.command {
        Command::RunCase { save_checkpoints } => {
            let report = run_case(cfg, save_checkpoints.then(|| run.path()))?;
            for t in &report.trials {
                run.write_trace(&format!("trace-seed{}", t.seed), &t.trace)?;
                for (family, pair) in [("weight", &t.weight), ("ck", &t.ck), ("ntk", &t.ntk)] {
                    run.write_eigenvalues(&format!("eig-seed{}-{family}-init.csv", t.seed), &pair.initial.eigenvalues)?;
                    run.write_eigenvalues(&format!("eig-seed{}-{family}-trained.csv", t.seed), &pair.trained.eigenvalues)?;
                }
            }
            let mut v = serde_json::to_value(&report).map_err(Error::from)?;
            for t in v["trials"].as_array_mut().into_iter().flatten() {
                if let Value::Object(m) = t {
                    m.remove("trace");
                }
            }
            run.write_json("report.json", &v)?;
            json!({"r2": report.summary.r2, "test_error": report.summary.test_error,
                   "capped_trials": report.summary.capped_trials})
        }
        Command::SweepLr => {
            let r = sweep_learning_rate(cfg)?;
            let mut csv = String::from(
                "learning_rate,lambda_weight,lambda_ck,lambda_ntk,alignment_beta,alignment_ck,alignment_ntk,epochs,hit_cap,final_loss,r2\n",
            );
            for p in &r.points {
                let cells = [
                    format!("{:e}", p.learning_rate),
                    option_cell(p.lambda_weight),
                    option_cell(p.lambda_ck),
                    option_cell(p.lambda_ntk),
                    option_cell(p.alignment_beta),
                    option_cell(p.alignment_ck),
                    option_cell(p.alignment_ntk),
                    p.epochs.to_string(),
                    p.hit_cap.to_string(),
                    option_cell(p.final_loss),
                    option_cell(p.r2),
                ];
                csv += &(cells.join(",") + "\n");
            }
            run.write_text("sweep.csv", &csv)?;
            run.write_json("sweep.json", &r)?;
            let diverged = r.points.iter().filter(|p| p.error.is_some()).count();
            json!({"points": r.points.len(), "diverged": diverged, "edges": r.edges})
        }
        Command::ScalingStudy => {
            let r = scaling_study(cfg)?;
            let mut csv = String::from("n,d,h,quantity,mean,sd\n");
            for row in &r.rows {
                let v = &row.values;
                for (q, m) in [
                    ("w_fro", v.w_fro),
                    ("w_fro_scaled", v.w_fro_scaled),
                    ("w_op_scaled", v.w_op_scaled),
                    ("w_2inf_scaled", v.w_2inf_scaled),
                    ("ck_fro", v.ck_fro),
                    ("ck_op", v.ck_op),
                    ("ntk_fro", v.ntk_fro),
                    ("ntk_op", v.ntk_op),
                ] {
                    csv += &format!("{},{},{},{q},{:e},{:e}\n", row.n, row.d, row.h, m.mean, m.sd);
                }
            }
            run.write_text("scaling.csv", &csv)?;
            run.write_json("scaling.json", &r)?;
            json!({"slopes": r.slopes, "relative_spread": r.relative_spread})
        }
        Command::ConvergenceCheck => {
            let r = convergence_check(cfg)?;
            run.write_json("convergence.json", &r)?;
            if r.status == CheckStatus::Violated {
                code = 3;
            }
            let violations = r.trials.iter().filter(|t| t.first_violation.is_some()).count();
            json!({"check": r.status, "reason": r.reason, "learning_rate": r.learning_rate,
                   "max_learning_rate": r.max_learning_rate, "violated_trials": violations})
        }
        Command::LazyBaseline => {
            let r = run_lazy(cfg)?;
            run.write_json("lazy.json", &r)?;
            json!({"r2": r.r2, "test_error": r.test_error, "ntk_floor": r.ntk_floor})
        }
        Command::Spectra { checkpoint } => {
            let model = match checkpoint {
                Some(path) => {
                    let file = fs::File::open(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
                    Some(read_checkpoint::<f64>(&mut BufReader::new(file))?)
                }
                None => None,
            };
            let r = spectra_snapshot(cfg, model)?;
            run.write_eigenvalues("eig-weight.csv", &r.weight.eigenvalues)?;
            run.write_eigenvalues("eig-ck.csv", &r.ck.eigenvalues)?;
            run.write_eigenvalues("eig-ntk.csv", &r.ntk.eigenvalues)?;
            run.write_text("esd-weight.csv", &histogram_csv(&r.weight_histogram))?;
            run.write_json("spectra.json", &r)?;
            json!({"source": r.source, "mp_ks_distance": r.mp_ks_distance,
                   "ck_alpha": r.ck.alpha(), "ck_spikes": r.ck.spikes.len()})
        }
        Command::KtaEvolution => {
            let curves = kta_evolution(&configs)?;
            let mut csv = String::from("name,seed,progress,kta\n");
            for c in &curves {
                for (t, k) in &c.points {
                    csv += &format!("{},{},{t:e},{k:e}\n", c.name, c.seed);
                }
            }
            run.write_text("kta.csv", &csv)?;
            run.write_json("kta.json", &json!({ "curves": curves }))?;
            let finals: Vec<Value> = curves
                .iter()
                .map(|c| json!({"name": c.name, "seed": c.seed, "final_kta": c.final_kta}))
                .collect();
            json!({ "final_kta": finals })
        }
    };
    let dir = run.path().display().to_string();
    run.finish()?;
    if let Value::Object(m) = &mut summary {
        m.insert("run_dir".into(), dir.into());
    }
    Ok(Outcome { code, summary })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let name = cli.command.name();
    let (code, mut line) = match execute(&cli) {
        Ok(o) => (o.code, o.summary),
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            (1, json!({ "error": msg }))
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            (2, json!({ "error": msg }))
        }
    };
    if let Value::Object(m) = &mut line {
        m.insert("subcommand".into(), name.into());
        m.insert("status".into(), if code == 0 { "ok" } else { "error" }.into());
        m.insert("exit_code".into(), code.into());
    }
    if !cli.quiet && code == 0 {
        eprintln!("{name}: done");
    }
    println!("{line}");
    ExitCode::from(code)
}
