use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use navex::metrics::{segment_sizes, theorem_bound};
use navex::oracle::{min_nav_times, s_arrow_l, s_l};
use navex::ChangeSchedule;
use navex_harness::lemmas::{check_balance, check_stream_count};
use navex_harness::{parse_seeds, run_experiment, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "explore", about = "Run and inspect exploration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment and write its logs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// `a..b`, `a..=b` or `s1,s2,...`; defaults to the config's seeds.
        #[arg(long)]
        seeds: Option<String>,
        /// Output directory; EXPLORE_LOG_DIR and then the config are used
        /// when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print S_L, S→_L and the navigation-time table of a kernel.
    Oracle {
        /// Schedule file; its first segment is used unless --segment is set.
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long = "L")]
        l: f64,
        #[arg(long, default_value_t = 0)]
        segment: usize,
    },
    /// Check the stream scheduler's counting properties exhaustively.
    VerifyLemmas {
        #[arg(long, default_value_t = 10_000)]
        q_max: u64,
        #[arg(long, default_value_t = 100)]
        b_max: u64,
    },
    /// Evaluate the exploration-step bound for an experiment's schedule.
    Bound {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<u8, HarnessError> {
    match command {
        Command::Run { config, seeds, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seeds = match seeds {
                Some(s) => parse_seeds(&s)?,
                None => cfg.seeds.clone(),
            };
            let out = out
                .or_else(|| std::env::var_os("EXPLORE_LOG_DIR").map(PathBuf::from))
                .unwrap_or_else(|| cfg.output_dir.clone());
            let report = run_experiment(&cfg, &seeds, &out)?;
            for s in &report.summaries {
                println!(
                    "seed {:>4}  steps {:>10}  rounds {:>3}  exploration {:>10}{}",
                    s.seed,
                    s.total_steps,
                    s.rounds,
                    s.exploration_steps,
                    if s.halted { "  HALTED" } else { "" }
                );
            }
            println!("wrote {}", report.output_dir.display());
            let halted = report.halted();
            if !halted.is_empty() {
                eprintln!("replicas {halted:?} hit the step ceiling");
                return Ok(3);
            }
            Ok(0)
        }
        Command::Oracle { kernel, l, segment } => {
            let schedule = ChangeSchedule::load(&kernel).map_err(|e| HarnessError::Config(e.to_string()))?;
            let seg = schedule.segments().get(segment).ok_or_else(|| {
                HarnessError::Config(format!(
                    "segment {segment} out of range ({} segments)",
                    schedule.segments().len()
                ))
            })?;
            let k = &seg.kernel;
            let sl = s_l(k, l);
            let arrow = s_arrow_l(k, l);
            let fmt =
                |set: &BTreeSet<navex::StateId>| set.iter().map(|s| s.0.to_string()).collect::<Vec<_>>().join(", ");
            println!("S_L  = {{{}}}", fmt(&sl));
            println!("S→_L = {{{}}}", fmt(&arrow));
            println!("{:>6}  {:>14}  {:>5}  {:>5}", "state", "tau", "S_L", "S→_L");
            for (s, tau) in min_nav_times(k).into_iter().enumerate() {
                let id = navex::StateId(s);
                println!(
                    "{:>6}  {:>14}  {:>5}  {:>5}",
                    s,
                    tau.to_string(),
                    sl.contains(&id),
                    arrow.contains(&id)
                );
            }
            Ok(0)
        }
        Command::VerifyLemmas { q_max, b_max } => {
            let mut failed = false;
            match check_stream_count(q_max) {
                Ok(()) => println!("stream count = ceil(sqrt(q)) for q in 1..={q_max}: ok"),
                Err(v) => {
                    println!("stream count: {v:?}");
                    failed = true;
                }
            }
            match check_balance(b_max) {
                Ok(()) => println!("b streams served b quanta each at q = b^2 for b in 1..={b_max}: ok"),
                Err(v) => {
                    println!("balance: {v:?}");
                    failed = true;
                }
            }
            Ok(u8::from(failed))
        }
        Command::Bound { config, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let schedule = cfg.schedule(seed)?;
            let a = &cfg.algorithm;
            let sizes = segment_sizes(&schedule, a.l, a.eps, u64::MAX);
            let report = theorem_bound(&sizes, schedule.action_count(), a.l, a.eps, a.delta, a.constants());
            println!("settings: {}  |S→_(1+eps)L| per setting: {sizes:?}", sizes.len());
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("reports always serialize")
            );
            Ok(0)
        }
    }
}
