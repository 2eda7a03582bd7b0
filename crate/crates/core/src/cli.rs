//! The `bvss` command-line tool.
//!
//! Settings come from an optional JSON config file; every command-line flag
//! overrides the corresponding config entry.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::baselines::{att_plugin, fit_lasso_cv, fit_ols, fit_qp, EstimatorResult};
use crate::error::{BvssError, Result};
use crate::inference::{att_from_draws, counterfactual_path, diagnostics, effective_sample_size, inclusion_probs};
use crate::model::Hyperparams;
use crate::panel::{load_panel, PanelData};
use crate::sampler::{run_chain, SamplerOutput};
use crate::simgen::{generate, run_replicates, DgpKind, DgpSpec, Method, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "bvss", version, about = "Bayesian synthetic control with a soft simplex constraint")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to a panel CSV and write posterior summaries.
    Fit(CommonArgs),
    /// Run a simulation study on a synthetic design.
    Simulate(SimulateArgs),
    /// Time the sampler and report throughput.
    Benchmark(SimulateArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Panel CSV: time, treated, control columns.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// 0-based data row of the first post-treatment period.
    #[arg(long = "treatment-at")]
    pub treatment_at: Option<usize>,
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Worker threads for replicate-level parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Comma-separated: bvss, ols, ols_oracle, qp, qp_oracle, lasso.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Credible level of the reported intervals.
    #[arg(long)]
    pub level: Option<f64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// sparse, factor_nonsparse or factor_sparse.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long = "m-post")]
    pub m_post: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub j: Option<usize>,
    /// ‖w*‖₁ of the true weights.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long = "delta-star")]
    pub delta_star: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
}

/// Effective settings of a run after merging config file and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub treatment_at: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub iters: usize,
    pub burnin: usize,
    pub level: f64,
    pub threads: Option<usize>,
    pub methods: Vec<Method>,
    pub hyperparams: Hyperparams,
    pub dgp: Option<DgpSpec>,
    pub reps: usize,
    pub lasso_folds: usize,
    pub lasso_lambdas: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            treatment_at: None,
            out: None,
            seed: 0,
            iters: 1000,
            burnin: 500,
            level: 0.95,
            threads: None,
            methods: vec![Method::Bvss],
            hyperparams: Hyperparams::default(),
            dgp: None,
            reps: 100,
            lasso_folds: 10,
            lasso_lambdas: 100,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| BvssError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn apply_common(&mut self, a: &CommonArgs) -> Result<()> {
        if let Some(v) = &a.data {
            self.data = Some(v.clone());
        }
        if let Some(v) = a.treatment_at {
            self.treatment_at = Some(v);
        }
        if let Some(v) = &a.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = a.seed {
            self.seed = v;
        }
        if let Some(v) = a.iters {
            self.iters = v;
        }
        if let Some(v) = a.burnin {
            self.burnin = v;
        }
        if let Some(v) = a.theta {
            self.hyperparams.theta = v;
        }
        if let Some(v) = a.threads {
            self.threads = Some(v);
        }
        if let Some(v) = a.level {
            self.level = v;
        }
        if let Some(list) = &a.methods {
            self.methods = list.iter().map(|s| s.trim().parse()).collect::<Result<_>>()?;
        }
        Ok(())
    }

    fn apply_simulate(&mut self, a: &SimulateArgs) -> Result<()> {
        self.apply_common(&a.common)?;
        let mut dgp = self.dgp.clone().unwrap_or_default();
        if let Some(k) = &a.kind {
            dgp.kind = k.parse::<DgpKind>()?;
        }
        if let Some(v) = a.m {
            dgp.m = v;
        }
        if let Some(v) = a.m_post {
            dgp.m_post = v;
        }
        if let Some(v) = a.n {
            dgp.n = v;
        }
        if let Some(v) = a.j {
            dgp.j = v;
        }
        if let Some(v) = a.lambda {
            dgp.lambda_scale = v;
        }
        if let Some(v) = a.delta_star {
            dgp.delta_star = v;
        }
        if let Some(v) = a.reps {
            self.reps = v;
        }
        self.dgp = Some(dgp);
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.hyperparams.validate()?;
        if self.iters <= self.burnin {
            return Err(BvssError::Config(format!(
                "iters ({}) must exceed burnin ({})",
                self.iters, self.burnin
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(BvssError::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.methods.is_empty() {
            return Err(BvssError::Config("no methods requested".into()));
        }
        if self.threads == Some(0) {
            return Err(BvssError::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the settings that determine the outputs.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        canonical.threads = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn metadata(&self) -> serde_json::Value {
        json!({
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "config_sha256": self.hash(),
            "quantiles": "linear interpolation; central interval at ((1 - level)/2, (1 + level)/2)",
            "sampler": {
                "n_tau": self.hyperparams.n_tau,
                "eta": self.hyperparams.eta,
                "pair_order": "lexicographic",
            },
        })
    }

    fn comment(&self) -> String {
        format!("bvss {} seed={} config_sha256={}", env!("CARGO_PKG_VERSION"), self.seed, self.hash())
    }

    fn out_dir(&self) -> Result<&Path> {
        let dir = self
            .out
            .as_deref()
            .ok_or_else(|| BvssError::Config("an output directory is required (--out)".into()))?;
        fs::create_dir_all(dir).map_err(|e| BvssError::io(dir, e))?;
        Ok(dir)
    }

    fn panel(&self) -> Result<PanelData> {
        let path = self
            .data
            .as_deref()
            .ok_or_else(|| BvssError::Config("a panel CSV is required (--data)".into()))?;
        let at = self
            .treatment_at
            .ok_or_else(|| BvssError::Config("the treatment row is required (--treatment-at)".into()))?;
        load_panel(path, at)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| BvssError::io(path, e))?))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| BvssError::io(path, e))
}

fn interval(lo: f64, hi: f64) -> serde_json::Value {
    json!([lo, hi])
}

fn fit_baseline(panel: &PanelData, method: Method, cfg: &RunConfig) -> Result<EstimatorResult> {
    match method {
        Method::Ols => fit_ols(panel, None),
        Method::Qp => fit_qp(panel, None),
        Method::Lasso => fit_lasso_cv(panel, cfg.lasso_folds.min(panel.m()), cfg.lasso_lambdas, cfg.seed),
        Method::OlsOracle | Method::QpOracle => Err(BvssError::Config(format!(
            "{method} needs the true support and is only available in simulations"
        ))),
        Method::Bvss => unreachable!("handled by the sampler"),
    }
}

/// Posterior summary JSON for a fitted chain.
pub fn fit_summary(out: &SamplerOutput, panel: &PanelData, level: f64) -> Result<serde_json::Value> {
    let rb = att_from_draws(out, panel, level, true)?;
    let plain = att_from_draws(out, panel, level, false)?;
    let incl = inclusion_probs(out)?;
    let diag = diagnostics(out)?;
    let w_mean: Vec<f64> = (0..panel.n())
        .map(|i| out.draws.iter().map(|d| d.w[i]).sum::<f64>() / out.draws.len() as f64)
        .collect();
    Ok(json!({
        "att": {
            "mean": rb.mean,
            "ci": interval(rb.ci_lo, rb.ci_hi),
            "level": level,
            "rao_blackwellized": true,
            "plain_mean": plain.mean,
            "plain_ci": interval(plain.ci_lo, plain.ci_hi),
            "plugin_at_posterior_mean_w": att_plugin(&w_mean, panel)?,
        },
        "tau": { "mean": rb.tau_mean, "ci": interval(rb.tau_ci.lo, rb.tau_ci.hi) },
        "phi": { "mean": rb.phi_mean, "ci": interval(rb.phi_ci.lo, rb.phi_ci.hi) },
        "tau_phi_ratio": rb.tau_mean / rb.phi_mean,
        "model_size": { "mean": rb.model_size_mean, "ci": interval(rb.size_ci.lo, rb.size_ci.hi) },
        "inclusion": panel.unit_names.iter().zip(&incl).zip(&w_mean)
            .map(|((u, p), w)| json!({ "unit": u, "prob": p, "w_mean": w }))
            .collect::<Vec<_>>(),
        "diagnostics": diag,
        "dimensions": { "m": panel.m(), "m_post": panel.m_post(), "n": panel.n(), "draws": out.n_draws() },
    }))
}

/// `bvss fit`: trace.csv, summary.json and counterfactual.csv.
pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let panel = cfg.panel()?;
    let dir = cfg.out_dir()?;
    let mut summary = json!({ "metadata": cfg.metadata() });
    let mut baselines = Vec::new();
    for &method in &cfg.methods {
        if method == Method::Bvss {
            log::info!("sampling {} iterations on {} x {} panel", cfg.iters, panel.m(), panel.n());
            let out = run_chain(&panel, &cfg.hyperparams, cfg.iters, cfg.burnin, cfg.seed)?;
            out.write_trace_csv(create(&dir.join("trace.csv"))?, &panel.unit_names, Some(&cfg.comment()))?;
            counterfactual_path(&out, &panel)?.write_csv(
                &panel,
                create(&dir.join("counterfactual.csv"))?,
                Some(&cfg.comment()),
            )?;
            summary["bvss"] = fit_summary(&out, &panel, cfg.level)?;
        } else {
            baselines.push(fit_baseline(&panel, method, cfg)?);
        }
    }
    if !baselines.is_empty() {
        summary["baselines"] = serde_json::to_value(&baselines)?;
    }
    write_json(&dir.join("summary.json"), &summary)
}

/// `bvss simulate`: metrics.csv and summary.json.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let spec = cfg.dgp.clone().unwrap_or_default();
    let dir = cfg.out_dir()?;
    let sim = SimConfig {
        hyper: cfg.hyperparams,
        n_iter: cfg.iters,
        n_burnin: cfg.burnin,
        lasso_folds: cfg.lasso_folds,
        lasso_lambdas: cfg.lasso_lambdas,
    };
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    log::info!("running {} replicates of the {} design", cfg.reps, spec.kind);
    let report = run_replicates(&spec, &methods, cfg.reps, cfg.seed, &sim)?;
    report.write_metrics_csv(create(&dir.join("metrics.csv"))?, Some(&cfg.comment()))?;
    let mut summary = serde_json::to_value(&report)?;
    summary["metadata"] = cfg.metadata();
    summary["metadata"]["factor_initial_state"] = json!("zero, no burn-in");
    write_json(&dir.join("summary.json"), &summary)
}

/// `bvss benchmark`: throughput on the given panel or one simulated panel.
/// Timings go to stdout only.
pub fn cmd_benchmark(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let panel = if cfg.data.is_some() {
        cfg.panel()?
    } else {
        let spec = cfg.dgp.clone().unwrap_or_default();
        generate(&spec, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed))?.0
    };
    let start = Instant::now();
    let out = run_chain(&panel, &cfg.hyperparams, cfg.iters, cfg.burnin, cfg.seed)?;
    let secs = start.elapsed().as_secs_f64().max(1e-9);
    let taus: Vec<f64> = out.draws.iter().map(|d| d.tau).collect();
    let phis: Vec<f64> = out.draws.iter().map(|d| d.phi).collect();
    println!("panel            M={} M_post={} N={}", panel.m(), panel.m_post(), panel.n());
    println!("iterations       {}", cfg.iters);
    println!("wall time        {secs:.3} s");
    println!("iterations/sec   {:.1}", cfg.iters as f64 / secs);
    println!("pair updates/sec {:.0}", out.pair_updates as f64 / secs);
    println!("ESS/sec tau      {:.1}", effective_sample_size(&taus).ess / secs);
    println!("ESS/sec phi      {:.1}", effective_sample_size(&phis).ess / secs);
    println!("tau acceptance   {:.3}", out.acceptance_rate_tau);
    Ok(())
}

fn configure_threads(cfg: &RunConfig) {
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_json_file(p),
        None => Ok(RunConfig::default()),
    }
}

/// Parses arguments, runs the command, and maps errors to a one-line
/// `error[CODE]: message` report. Returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let result = (|| -> Result<()> {
        match &cli.command {
            Command::Fit(a) => {
                let mut cfg = load_config(a.config.as_deref())?;
                cfg.apply_common(a)?;
                configure_threads(&cfg);
                cmd_fit(&cfg)
            }
            Command::Simulate(a) => {
                let mut cfg = load_config(a.common.config.as_deref())?;
                cfg.apply_simulate(a)?;
                configure_threads(&cfg);
                cmd_simulate(&cfg)
            }
            Command::Benchmark(a) => {
                let mut cfg = load_config(a.common.config.as_deref())?;
                cfg.apply_simulate(a)?;
                configure_threads(&cfg);
                cmd_benchmark(&cfg)
            }
        }
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            1
        }
    }
}
