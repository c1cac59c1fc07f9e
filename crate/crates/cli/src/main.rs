//! `dcso` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dcso::bilevel::{bigm_linearize, build_kkt_for};
use dcso::evaluate::{saa_scenarios, Method};
use dcso::experiment::{
    prepare, run_experiment, run_sensitivity, summary_text, write_manifest, write_outputs, write_sensitivity_csv,
    ExperimentConfig, ExperimentError, Sweep,
};
use dcso::program::{build_wsaa, Formulation};
use dcso::scenarios::{generate_community, write_csv};
use dcso::solver::export_lp;

#[derive(Parser)]
#[command(name = "dcso", version, about = "Contextual stochastic optimization for prosumer networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic covariate and outcome CSVs of every prosumer.
    Generate(Common),
    /// Run every method over all trials and write the result tables.
    Run(Common),
    /// Repeat the experiment over prosumer counts or sample sizes.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SweepKind::Samples)]
        sweep: SweepKind,
        /// Comma-separated sweep points.
        #[arg(long, value_delimiter = ',', default_value = "20,50,100")]
        values: Vec<usize>,
        /// Comma-separated seeds; trials are pooled across them.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
    /// Export one prosumer's program in LP format.
    ExportLp {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        prosumer: usize,
        #[arg(long, value_enum, default_value_t = LpKind::Saa)]
        kind: LpKind,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config file; defaults to the built-in ten-prosumer setup.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    prosumers: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Restrict to these methods (PO, SAA, WSAA_KNN, WSAA_CKNN); repeatable.
    #[arg(long = "method", value_parser = parse_method)]
    methods: Vec<Method>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Samples,
    Prosumers,
}

#[derive(Clone, Copy, ValueEnum)]
enum LpKind {
    /// Sample-average program under uniform weights.
    Saa,
    /// Optimality conditions of that program with big-M complementarity.
    Kkt,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method {s:?}; expected PO, SAA, WSAA_KNN or WSAA_CKNN"))
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) => Failure::Usage(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default_config(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.prosumers {
            cfg.prosumers = v;
        }
        if let Some(v) = self.samples {
            cfg.samples = v;
            if cfg.history.is_some_and(|h| h < v) {
                cfg.history = Some(v);
            }
            cfg.training.po_k = cfg.training.po_k.min(v);
        }
        if !self.methods.is_empty() {
            cfg.methods = self.methods.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn mark_failed(dir: &Path, message: &str) {
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = std::fs::write(dir.join("FAILED"), format!("{message}\n"));
    }
}

fn cmd_generate(c: &Common) -> Result<(), Failure> {
    let cfg = c.config()?;
    let gen = cfg.generator_config()?;
    let topo = cfg.topology.build(cfg.prosumers)?;
    let adj: Vec<Vec<usize>> = (0..cfg.prosumers).map(|n| topo.neighbors(n).to_vec()).collect();
    let com = generate_community(cfg.seed, &gen, &adj).context("generating data")?;
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    let mut files = Vec::new();
    for (n, ds) in com.datasets.iter().enumerate() {
        let cov = format!("prosumer_{n}_covariates.csv");
        let out = format!("prosumer_{n}_outcomes.csv");
        write_csv(ds, &c.out.join(&cov), &c.out.join(&out)).context("writing dataset")?;
        files.push(cov);
        files.push(out);
    }
    std::fs::write(c.out.join("params.json"), serde_json::to_string_pretty(&com.params).context("params")?)
        .context("writing params")?;
    std::fs::write(c.out.join("config.json"), cfg.to_json()).context("writing config")?;
    files.push("params.json".into());
    files.push("config.json".into());
    let names: Vec<&str> = files.iter().map(String::as_str).collect();
    write_manifest(&c.out, cfg.seed, &cfg.sha256(), &names)?;
    println!("wrote {} days for {} prosumers to {}", gen.samples, cfg.prosumers, c.out.display());
    Ok(())
}

fn cmd_run(c: &Common) -> Result<(), Failure> {
    let cfg = c.config()?;
    let res = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            mark_failed(&c.out, &e.to_string());
            return Err(e.into());
        }
    };
    if let Err(e) = write_outputs(&res, &c.out) {
        mark_failed(&c.out, &e.to_string());
        return Err(Failure::Runtime(e.into()));
    }
    print!("{}", summary_text(&res));
    if res.failed() {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "{} stage(s) failed; partial results in {}",
            res.failures.len(),
            c.out.display()
        )));
    }
    Ok(())
}

fn cmd_sensitivity(c: &Common, kind: SweepKind, values: &[usize], seeds: &[u64]) -> Result<(), Failure> {
    let cfg = c.config()?;
    let sweep = match kind {
        SweepKind::Samples => Sweep::Samples(values.to_vec()),
        SweepKind::Prosumers => Sweep::Prosumers(values.to_vec()),
    };
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    let rows = match run_sensitivity(&cfg, &sweep, seeds) {
        Ok(r) => r,
        Err(e) => {
            mark_failed(&c.out, &e.to_string());
            return Err(e.into());
        }
    };
    write_sensitivity_csv(&rows, &c.out.join("sensitivity.csv"))?;
    std::fs::write(c.out.join("config.json"), cfg.to_json()).context("writing config")?;
    write_manifest(&c.out, cfg.seed, &cfg.sha256(), &["sensitivity.csv", "config.json"])?;
    println!("{:<10} {:>6} {:<10} {:>12} {:>12} {:>12}", sweep.name(), "n", "method", "median", "q1", "q3");
    for r in &rows {
        println!("{:<10} {:>6} {:<10} {:>12.1} {:>12.1} {:>12.1}", r.value, r.count, r.method.as_str(), r.median, r.q1, r.q3);
    }
    Ok(())
}

fn cmd_export_lp(c: &Common, prosumer: usize, kind: LpKind) -> Result<(), Failure> {
    let cfg = c.config()?;
    if prosumer >= cfg.prosumers {
        return Err(Failure::Usage(anyhow::anyhow!("--prosumer {prosumer} out of range for {} prosumers", cfg.prosumers)));
    }
    let prep = prepare(&cfg)?;
    let p = &prep.params[prosumer];
    let scenarios = saa_scenarios(p, &prep.train[prosumer]);
    let text = match kind {
        LpKind::Saa => {
            let prog = build_wsaa(p, &scenarios, None, Formulation::Explicit).context("building program")?;
            export_lp(&prog.qp, &[])
        }
        LpKind::Kkt => {
            let (kkt, _) = build_kkt_for(p, &scenarios).context("building optimality conditions")?;
            bigm_linearize(&kkt).context("linearizing")?.to_lp()
        }
    };
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    let name = match kind {
        LpKind::Saa => format!("prosumer_{prosumer}_saa.lp"),
        LpKind::Kkt => format!("prosumer_{prosumer}_kkt.lp"),
    };
    std::fs::write(c.out.join(&name), text).context("writing LP file")?;
    println!("wrote {}", c.out.join(name).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let outcome = match &cli.command {
        Command::Generate(c) => cmd_generate(c),
        Command::Run(c) => cmd_run(c),
        Command::Sensitivity { common, sweep, values, seeds } => cmd_sensitivity(common, *sweep, values, seeds),
        Command::ExportLp { common, prosumer, kind } => cmd_export_lp(common, *prosumer, *kind),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("FAILED: {e:#}");
            ExitCode::from(2)
        }
    }
}
