use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use cogsim::baselines::grid_table_csv;
use cogsim::config::kv_lines;
use cogsim::metrics::calibrate_theta_p_max;
use cogsim::{grid_search, run_experiment, ExperimentSpec, PolicyKind};

#[derive(Parser, Debug)]
#[command(name = "cogsim", version, about = "DCF primary / learning secondary channel-sharing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one scenario with one policy.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "qlearning")]
        policy: PolicyKind,
        /// Also run the grid oracle and write the strategy comparison.
        #[arg(long)]
        with_oracle: bool,
    },
    /// Sweep lambda1 over policies and replications.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated arrival rates.
        #[arg(long)]
        sweep_lambda1: Option<String>,
        /// Comma-separated policies: qlearning, uniform, gridsearch, silent.
        #[arg(long)]
        policies: Option<String>,
        #[arg(long)]
        replications: Option<u32>,
    },
    /// Run the grid-search oracle only.
    Grid {
        #[command(flatten)]
        common: Common,
    },
    /// Print the solo-primary reference throughput.
    Calibrate {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Options shared by the simulating verbs.
#[derive(Args, Debug)]
struct Common {
    /// `key = value` file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    horizon_slots: Option<u64>,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    grid_eval_slots: Option<u64>,
    /// Keep every n-th trace row.
    #[arg(long)]
    trace_every: Option<u64>,
    #[command(flatten)]
    scenario: Scenario,
}

/// One flag per scenario field.
#[derive(Args, Debug, Default)]
struct Scenario {
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    buffer_b: Option<u32>,
    #[arg(long)]
    max_retry_m: Option<u32>,
    /// Comma-separated backoff windows, one per stage.
    #[arg(long)]
    windows: Option<String>,
    #[arg(long)]
    ws: Option<u32>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    rho_star: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    nu_star: Option<f64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    /// throughput_loss or failure_prob
    #[arg(long)]
    constraint_mode: Option<String>,
    /// every_slot or completion
    #[arg(long)]
    feedback_cadence: Option<String>,
    #[arg(long)]
    packet_slots: Option<u32>,
    #[arg(long)]
    difs_slots: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    packet_bits: Option<u32>,
    #[arg(long)]
    calibration_slots: Option<u64>,
    #[arg(long)]
    calibration_seed: Option<u64>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    tau_decay_actions: Option<f64>,
    #[arg(long)]
    convergence_window: Option<usize>,
    #[arg(long)]
    convergence_eps: Option<f64>,
    #[arg(long)]
    update_on_forced: Option<bool>,
    #[arg(long)]
    gamma_discount: Option<f64>,
    /// per_action or global
    #[arg(long)]
    step_index: Option<String>,
}

fn push<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key, v.to_string()));
    }
}

impl Scenario {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut o = Vec::new();
        push(&mut o, "lambda1", &self.lambda1);
        push(&mut o, "buffer_b", &self.buffer_b);
        push(&mut o, "max_retry_m", &self.max_retry_m);
        push(&mut o, "windows", &self.windows);
        push(&mut o, "ws", &self.ws);
        push(&mut o, "rho", &self.rho);
        push(&mut o, "rho_star", &self.rho_star);
        push(&mut o, "nu", &self.nu);
        push(&mut o, "nu_star", &self.nu_star);
        push(&mut o, "gamma1", &self.gamma1);
        push(&mut o, "gamma2", &self.gamma2);
        push(&mut o, "constraint_mode", &self.constraint_mode);
        push(&mut o, "feedback_cadence", &self.feedback_cadence);
        push(&mut o, "packet_slots", &self.packet_slots);
        push(&mut o, "difs_slots", &self.difs_slots);
        push(&mut o, "seed", &self.seed);
        push(&mut o, "lambda2", &self.lambda2);
        push(&mut o, "packet_bits", &self.packet_bits);
        push(&mut o, "calibration_slots", &self.calibration_slots);
        push(&mut o, "calibration_seed", &self.calibration_seed);
        push(&mut o, "tau0", &self.tau0);
        push(&mut o, "tau_decay_actions", &self.tau_decay_actions);
        push(&mut o, "convergence_window", &self.convergence_window);
        push(&mut o, "convergence_eps", &self.convergence_eps);
        push(&mut o, "update_on_forced", &self.update_on_forced);
        push(&mut o, "gamma_discount", &self.gamma_discount);
        push(&mut o, "step_index", &self.step_index);
        o
    }
}

impl Common {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut o = Vec::new();
        if let Some(dir) = &self.output_dir {
            o.push(("output_dir", dir.display().to_string()));
        }
        push(&mut o, "horizon_slots", &self.horizon_slots);
        push(&mut o, "grid_step", &self.grid_step);
        push(&mut o, "grid_eval_slots", &self.grid_eval_slots);
        push(&mut o, "trace_every", &self.trace_every);
        o.extend(self.scenario.overrides());
        o
    }
}

/// Defaults, then the config file, then flags.
fn build_spec(config: Option<&Path>, overrides: &[(&str, String)]) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    if let Some(path) = config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (line, key, value) in kv_lines(&text)? {
            spec.set(key, value).with_context(|| format!("{}:{line}", path.display()))?;
        }
    }
    for (key, value) in overrides {
        spec.set(key, value).with_context(|| format!("--{}", key.replace('_', "-")))?;
    }
    spec.validate()?;
    Ok(spec)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();

    match cli.command {
        Command::Run { common, policy, with_oracle } => {
            let mut spec = build_spec(common.config.as_deref(), &common.overrides())?;
            spec.sweep_lambda1 = vec![spec.base.lambda1];
            spec.replications = 1;
            spec.policies = vec![policy];
            if with_oracle && policy != PolicyKind::GridSearch {
                spec.policies.push(PolicyKind::GridSearch);
            }
            report(&spec)?;
        }
        Command::Sweep { common, sweep_lambda1, policies, replications } => {
            let mut overrides = common.overrides();
            push(&mut overrides, "sweep_lambda1", &sweep_lambda1);
            push(&mut overrides, "policies", &policies);
            push(&mut overrides, "replications", &replications);
            let spec = build_spec(common.config.as_deref(), &overrides)?;
            report(&spec)?;
        }
        Command::Grid { common } => {
            let spec = build_spec(common.config.as_deref(), &common.overrides())?;
            let cfg = &spec.base;
            let result = grid_search(cfg, spec.grid_step, spec.grid_eval_slots)?;
            fs::create_dir_all(&spec.output_dir)?;
            let path = spec.output_dir.join(format!("grid_lambda{}.csv", cfg.lambda1));
            fs::write(&path, grid_table_csv(&result, cfg))?;
            if result.no_feasible_point {
                log::warn!("no feasible policy on the grid");
            }
            let best = result.table.iter().find(|p| p.policy == result.best).expect("best is on the grid");
            println!(
                "best {:?} theta_s={} theta_p={} loss={}",
                result.best.as_slice(),
                best.theta_s,
                best.theta_p,
                best.loss
            );
            info!("wrote {}", path.display());
        }
        Command::Calibrate { scenario, config } => {
            let spec = build_spec(config.as_deref(), &scenario.overrides())?;
            println!("{}", calibrate_theta_p_max(&spec.base)?);
        }
    }
    Ok(())
}

fn report(spec: &ExperimentSpec) -> Result<()> {
    let report = run_experiment(spec)?;
    for c in &report.cells {
        let s = &c.summary;
        println!(
            "{}: theta_s={:.5} theta_p={:.5} loss={:.5} failure_ratio={:.5}",
            c.label, s.theta_s, s.theta_p, s.loss, s.failure_ratio
        );
    }
    info!("wrote {} files to {}", report.files.len(), spec.output_dir.display());
    Ok(())
}
