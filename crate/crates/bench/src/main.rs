use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xtask::config::detect_numa_zones;
use xtask::{DlbConfig, Strategy, TeamConfig};
use xtask_bench::kernels::hashbucket::HashKind;
use xtask_bench::kernels::imbalance::ImbalanceSpec;
use xtask_bench::{run_experiment, BenchError, BenchSpec, KernelSpec};

#[derive(Parser, Debug)]
#[command(
    name = "xtask-bench",
    version,
    about = "Task-parallel benchmark kernels on the xtask runtime"
)]
struct Cli {
    #[command(subcommand)]
    kernel: Kernel,
    #[command(flatten)]
    team: TeamArgs,
}

#[derive(Args, Debug)]
struct TeamArgs {
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// NUMA zones: a count, or `auto` to read the OS topology.
    #[arg(long, global = true, default_value = "1")]
    zones: String,
    /// Load balancing: none, rp or ws.
    #[arg(long, global = true, default_value = "ws")]
    dlb: Strategy,
    /// Victims asked per request round.
    #[arg(long, global = true)]
    nvictim: Option<usize>,
    /// Most tasks handed over per request.
    #[arg(long, global = true)]
    nsteal: Option<usize>,
    /// Idle scheduling points before a thief sends requests.
    #[arg(long, global = true)]
    tinterval: Option<u64>,
    /// Probability that a victim is picked from the thief's own zone.
    #[arg(long, global = true)]
    plocal: Option<f64>,
    #[arg(long, global = true, default_value_t = 1)]
    repeat: usize,
    /// Write per-run profiler dumps under this directory.
    #[arg(long, global = true)]
    profile_dir: Option<PathBuf>,
    /// Ring capacity (power of two).
    #[arg(long, global = true)]
    queue_cap: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Kernel {
    /// Recursive Fibonacci.
    Fib {
        #[arg(default_value_t = 30)]
        n: u32,
        #[arg(long, default_value_t = 10)]
        cutoff: u32,
    },
    /// N-queens solution count.
    Nqueens {
        #[arg(default_value_t = 11)]
        n: usize,
        /// Rows that fan out into tasks.
        #[arg(long, default_value_t = 3)]
        depth: usize,
    },
    /// Merge sort of seeded random keys.
    Msort {
        #[arg(default_value_t = 1 << 20)]
        n: usize,
        #[arg(long, default_value_t = 2048)]
        leaf: usize,
    },
    /// Strassen matrix multiply.
    Strassen {
        #[arg(default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        cutoff: usize,
    },
    /// Spin tasks with work concentrated on a few workers' queues.
    Imbalance {
        #[arg(long, default_value_t = ImbalanceSpec::default().n_tasks)]
        tasks: usize,
        #[arg(long, default_value_t = ImbalanceSpec::default().skew)]
        skew: f64,
        /// Fraction of workers receiving the concentrated work.
        #[arg(long, default_value_t = ImbalanceSpec::default().hot_fraction)]
        hot: f64,
        /// Mean spin iterations per task.
        #[arg(long, default_value_t = ImbalanceSpec::default().work_per_task)]
        work: u64,
    },
    /// Batched record hashing into per-zone buckets.
    Hashbucket {
        /// Generate 2^k records.
        #[arg(default_value_t = 20)]
        k: u32,
        #[arg(long, default_value_t = 1024)]
        batch: usize,
        /// splitmix or sha256.
        #[arg(long, default_value = "splitmix")]
        hash: HashKind,
    },
}

impl Kernel {
    fn spec(&self) -> KernelSpec {
        match *self {
            Kernel::Fib { n, cutoff } => KernelSpec::Fib { n, cutoff },
            Kernel::Nqueens { n, depth } => KernelSpec::NQueens { n, depth },
            Kernel::Msort { n, leaf } => KernelSpec::Msort { n, leaf },
            Kernel::Strassen { n, cutoff } => KernelSpec::Strassen { n, cutoff },
            Kernel::Imbalance {
                tasks,
                skew,
                hot,
                work,
            } => KernelSpec::Imbalance(ImbalanceSpec {
                n_tasks: tasks,
                skew,
                hot_fraction: hot,
                work_per_task: work,
            }),
            Kernel::Hashbucket { k, batch, hash } => KernelSpec::HashBucket { k, batch, hash },
        }
    }
}

fn team_config(a: &TeamArgs) -> Result<TeamConfig, String> {
    let zones = match a.zones.as_str() {
        "auto" => detect_numa_zones().unwrap_or(1).clamp(1, a.threads.max(1)),
        z => z
            .parse()
            .map_err(|_| format!("--zones expects a count or 'auto', got '{z}'"))?,
    };
    let defaults = DlbConfig::default();
    let config = TeamConfig {
        n_workers: a.threads,
        queue_capacity: a.queue_cap.unwrap_or(TeamConfig::default().queue_capacity),
        zones,
        dlb: DlbConfig {
            strategy: a.dlb,
            n_victim: a.nvictim.unwrap_or(defaults.n_victim),
            n_steal: a.nsteal.unwrap_or(defaults.n_steal),
            t_interval: a.tinterval.unwrap_or(defaults.t_interval),
            p_local: a.plocal.unwrap_or(defaults.p_local),
        },
        profiling: false,
        seed: a.seed,
    };
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("xtask-bench: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let team = match team_config(&cli.team) {
        Ok(t) => t,
        Err(e) => return usage_error(&e),
    };
    if cli.team.repeat == 0 {
        return usage_error("--repeat must be at least 1");
    }
    let spec = BenchSpec {
        kernel: cli.kernel.spec(),
        repeat: cli.team.repeat,
        team,
        profile_dir: cli.team.profile_dir.clone(),
    };
    let report = match run_experiment(&spec) {
        Ok(r) => r,
        Err(BenchError::Invalid(e)) => return usage_error(&e),
        Err(e) => {
            eprintln!("xtask-bench: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    for (i, run) in report.runs.iter().enumerate() {
        let mut line = format!(
            "run={i} wall_ms={:.3} {}",
            run.wall.as_secs_f64() * 1e3,
            run.detail
        );
        if report.team.profiling {
            line += &format!(" stall_ticks={}", run.stall_ticks);
            if let Some(cv) = run.utilization_cv {
                line += &format!(" utilization_cv={cv:.3}");
            }
        }
        if let Some(dir) = &run.dump {
            line += &format!(" dump={}", dir.display());
        }
        println!("{}", line.trim_end());
    }
    let counters = report.counters();
    let totals: Vec<String> = counters
        .entries()
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    println!("COUNTERS {}", totals.join(" "));
    println!("{}", report.summary_line());
    if let Some(f) = &report.failure {
        eprintln!("xtask-bench: oracle check failed: {f}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
