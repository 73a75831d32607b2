//! `jgsw`: scenario generation, toy training, theorem verification, frame
//! simulation, scaling sweeps, and wire-format inspection.
//!
//! Output is machine-readable (JSON or CSV). Exit codes: 0 success,
//! 2 validation failure, 3 training failure, 4 verification failure,
//! 5 decode failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jgsw_core::config::RunConfig;
use jgsw_core::error::Error;
use jgsw_core::sim::{baseline_broadcast, run_frame, scaling_sweep, SweepResult, SweepScene};
use jgsw_core::train::{train_toy, ParamsFile};
use jgsw_core::verify::{
    check_greedy_optimality, check_scheduler_consistency, check_singleton_optimality,
    check_top1_violation_detector, CheckReport,
};
use jgsw_core::wire::{decode_message, Message};

const EXIT_VALIDATION: u8 = 2;
const EXIT_TRAINING: u8 = 3;
const EXIT_VERIFICATION: u8 = 4;
const EXIT_DECODE: u8 = 5;

#[derive(Parser)]
#[command(name = "jgsw", version, about = "Bandwidth-budgeted cooperative perception toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Set any config key, e.g. --override train.lambda=10 (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        RunConfig::load(&self.config, &overrides)
    }

    fn base_dir(&self) -> Option<&Path> {
        self.config.parent()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate a config and write the reproducible scenario description.
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output path for the scenario description.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy pipeline; writes a parameter file and per-epoch CSV.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output path for the trained parameter file.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch metrics CSV (stdout when omitted).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run the optimality and consistency check suites.
    Verify {
        /// Trials for the singleton-optimality check.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative control: inject a redundant top-2 mask and require the
        /// violation to be reported.
        #[arg(long, default_value_t = false)]
        inject_fault: bool,
    },
    /// Simulate one exchange frame and print the report.
    Sim {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also run the naive-broadcast baseline and include it.
        #[arg(long, default_value_t = false)]
        baseline: bool,
        /// Write every exchanged message to this directory for replay.
        #[arg(long)]
        dump_messages: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, conflicts_with = "csv", default_value_t = false)]
        json: bool,
        #[arg(long, default_value_t = false)]
        csv: bool,
    },
    /// Scaling sweep over agent counts; emits per-(N, seed) CSV rows.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Agent counts, e.g. --agents 2,4,8,16 (defaults to the config).
        #[arg(long, value_delimiter = ',')]
        agents: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Emit long-format (metric, n_agents, seed, value) rows.
        #[arg(long, default_value_t = false)]
        plot_data: bool,
        #[arg(long, conflicts_with = "csv", default_value_t = false)]
        json: bool,
        #[arg(long, default_value_t = false)]
        csv: bool,
    },
    /// Pretty-print a wire message file.
    Dump {
        /// Message file to inspect.
        file: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Training { .. } => EXIT_TRAINING,
        Error::Decode(_) => EXIT_DECODE,
        Error::Io(_) => 1,
        _ => EXIT_VALIDATION,
    }
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

/// Scheduler settings with the learned threshold: a parameter file's
/// trained tau supersedes the config default, and an explicit
/// `--override scheduler.tau=` supersedes both.
fn effective_scheduler(
    cfg: &RunConfig,
    params: &jgsw_core::ModelParams,
    args: &ConfigArgs,
) -> Result<jgsw_core::SchedulerConfig, Error> {
    let base = cfg.scheduler_config()?;
    let overridden = args
        .overrides
        .iter()
        .any(|o| o.trim_start().starts_with("scheduler.tau"));
    if overridden {
        Ok(base)
    } else {
        jgsw_core::SchedulerConfig::new(params.tau, base.budget_bytes, base.top_k)
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Gen { config, out } => {
            let cfg = config.load()?;
            // Generating proves the config is realizable before it is echoed.
            let scenario = cfg.scenario()?;
            let mut text = cfg.to_toml();
            text.insert_str(
                0,
                &format!(
                    "# scenario: {} agents, {} objects, grid {}x{}x{}\n",
                    scenario.n_agents(),
                    scenario.objects.len(),
                    cfg.grid.h,
                    cfg.grid.w,
                    cfg.grid.c
                ),
            );
            std::fs::write(&out, text)?;
            eprintln!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            config,
            out,
            metrics,
        } => {
            let cfg = config.load()?;
            let scenario = cfg.scenario()?;
            let init = cfg.model_params(config.base_dir())?;
            let outcome = train_toy(&[scenario], init, &cfg.train_params())?;

            let mut csv = String::from("epoch,loss_task,loss_semantic,bytes,selected_cells\n");
            for m in &outcome.metrics {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    m.epoch, m.loss_task, m.loss_semantic, m.bytes, m.selected_cells
                ));
            }
            write_output(metrics.as_deref(), &csv)?;

            let params = ParamsFile::from_model(&outcome.params);
            std::fs::write(&out, params.to_toml())?;
            eprintln!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            trials,
            seed,
            inject_fault,
        } => {
            let mut reports: Vec<CheckReport> = vec![
                check_singleton_optimality(trials, seed)?,
                check_greedy_optimality(trials.clamp(1, 1_000), seed)?,
                check_scheduler_consistency(trials.clamp(1, 500), seed)?,
            ];
            if inject_fault {
                reports.push(check_top1_violation_detector()?);
            }
            let mut all_passed = true;
            let mut stdout = std::io::stdout().lock();
            for r in &reports {
                let status = if r.passed { "PASS" } else { "FAIL" };
                writeln!(stdout, "{}: {} ({} trials) — {}", r.name, status, r.trials, r.detail)?;
                if let Some(example) = &r.counterexample {
                    writeln!(stdout, "  counterexample: {example}")?;
                }
                all_passed &= r.passed;
            }
            Ok(if all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERIFICATION)
            })
        }
        Command::Sim {
            config,
            baseline,
            dump_messages,
            out,
            json: _,
            csv,
        } => {
            let cfg = config.load()?;
            let scenario = cfg.scenario()?;
            let params = cfg.model_params(config.base_dir())?;
            let sched_cfg = effective_scheduler(&cfg, &params, &config)?;
            let budget = cfg.comm_budget()?;
            let report = run_frame(&scenario, &params, &sched_cfg, &budget, 0, 0)?;
            if let Some(dir) = dump_messages {
                std::fs::create_dir_all(&dir)?;
                for (name, bytes) in
                    jgsw_core::sim::frame_messages(&scenario, &params, &sched_cfg, 0)?
                {
                    std::fs::write(dir.join(&name), bytes)?;
                }
                eprintln!("wrote messages to {}", dir.display());
            }
            let content = if csv {
                let mut s = String::from(
                    "frame_id,n_agents,bytes_control,bytes_feature,admitted_entry_bytes,\
                     selected_cells,frame_utility,control_latency_ms,data_latency_ms,toy_loss\n",
                );
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    report.frame_id,
                    report.n_agents,
                    report.total_control_bytes,
                    report.total_feature_bytes,
                    report.admitted_entry_bytes,
                    report.total_selected_cells,
                    report.frame_utility,
                    report.control_latency_ms,
                    report.data_latency_ms,
                    report.toy_task_loss
                ));
                s
            } else if baseline {
                let base = baseline_broadcast(&scenario, &params, &budget, 0, 0)?;
                format!(
                    "{{\"scheduled\":{},\"baseline\":{}}}\n",
                    serde_json::to_string_pretty(&report).expect("report serializes"),
                    serde_json::to_string_pretty(&base).expect("report serializes")
                )
            } else {
                let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
                s.push('\n');
                s
            };
            write_output(out.as_deref(), &content)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            config,
            agents,
            out,
            plot_data,
            json,
            csv: _,
        } => {
            let cfg = config.load()?;
            let agent_counts = if agents.is_empty() {
                cfg.sweep.agents.clone()
            } else {
                agents
            };
            let seeds: Vec<u64> = (0..cfg.sweep.seeds as u64)
                .map(|i| cfg.seed.wrapping_add(i))
                .collect();
            let scene = SweepScene {
                grid: cfg.grid_spec()?,
                n_objects: cfg.objects.count,
                options: cfg.scene_options(),
            };
            let params = cfg.model_params(config.base_dir())?;
            let sched_cfg = effective_scheduler(&cfg, &params, &config)?;
            let budget = cfg.comm_budget()?;
            let result = scaling_sweep(&scene, &params, &sched_cfg, &budget, &agent_counts, &seeds)?;
            let content = if json {
                let mut s = serde_json::to_string_pretty(&result).expect("sweep serializes");
                s.push('\n');
                s
            } else if plot_data {
                plot_data_csv(&result)
            } else {
                sweep_csv(&result)
            };
            write_output(out.as_deref(), &content)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Dump { file } => {
            let bytes = std::fs::read(&file)?;
            match decode_message(&bytes) {
                Ok(message) => {
                    print!("{}", render_message(&message));
                    Ok(ExitCode::SUCCESS)
                }
                Err(err) => {
                    eprintln!("error: {err}");
                    Ok(ExitCode::from(EXIT_DECODE))
                }
            }
        }
    }
}

fn sweep_csv(result: &SweepResult) -> String {
    let mut s = String::from(
        "N,seed,bytes_total,bytes_baseline,cells_selected,frame_utility,latency_ms\n",
    );
    for p in &result.points {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.n_agents,
            p.seed,
            p.bytes_total,
            p.bytes_baseline,
            p.cells_selected,
            p.frame_utility,
            p.latency_ms
        ));
    }
    s
}

fn plot_data_csv(result: &SweepResult) -> String {
    let mut s = String::from("metric,n_agents,seed,value\n");
    for p in &result.points {
        for (metric, value) in [
            ("bytes_total", p.bytes_total as f64),
            ("bytes_baseline", p.bytes_baseline as f64),
            ("cells_selected", p.cells_selected as f64),
            ("frame_utility", p.frame_utility),
            ("latency_ms", p.latency_ms),
            ("toy_loss", p.toy_loss),
        ] {
            s.push_str(&format!("{metric},{},{},{value}\n", p.n_agents, p.seed));
        }
    }
    s
}

fn render_message(message: &Message) -> String {
    let header = message.header();
    let mut s = String::new();
    s.push_str(&format!(
        "type: {}\nagent: {}\nframe: {}\ngrid: {}x{} ({} channels)\nentries: {}\n",
        match header.msg_type {
            jgsw_core::wire::MsgType::UtilityMap => "utility map",
            jgsw_core::wire::MsgType::FeaturePayload => "feature payload",
        },
        header.agent_id,
        header.frame_id,
        header.h,
        header.w,
        header.c,
        header.entry_count
    ));
    match message {
        Message::Utility { payload, .. } => {
            s.push_str(&format!(
                "scale: {}\noffset: {}\n",
                payload.scale, payload.offset
            ));
            for &(cell, code) in &payload.entries {
                let value = payload.offset as f64 + code as f64 * payload.scale as f64;
                s.push_str(&format!("  cell {cell}: code {code} -> {value}\n"));
            }
        }
        Message::Features { entries, .. } => {
            for (cell, values) in entries {
                let rendered: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
                s.push_str(&format!("  cell {cell}: [{}]\n", rendered.join(", ")));
            }
        }
    }
    s
}
