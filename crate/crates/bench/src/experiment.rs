//! Runs a kernel repeatedly on one team, checks every result against its
//! oracle and summarizes wall times and counters.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;
use xtask::profiler::{self, DumpError};
use xtask::{CounterSet, EventKind, Team, TeamConfig, TeamError, TeamReport, Worker};

use crate::kernels::hashbucket::{self, HashKind, HashOutcome};
use crate::kernels::imbalance::{self, ImbalanceSpec};
use crate::kernels::strassen::{self, Matrix};
use crate::kernels::{fib, msort, nqueens};
use crate::oracle;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Fib {
        n: u32,
        cutoff: u32,
    },
    NQueens {
        n: usize,
        depth: usize,
    },
    Msort {
        n: usize,
        leaf: usize,
    },
    Strassen {
        n: usize,
        cutoff: usize,
    },
    Imbalance(ImbalanceSpec),
    HashBucket {
        k: u32,
        batch: usize,
        hash: HashKind,
    },
}

impl KernelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Fib { .. } => "fib",
            KernelSpec::NQueens { .. } => "nqueens",
            KernelSpec::Msort { .. } => "msort",
            KernelSpec::Strassen { .. } => "strassen",
            KernelSpec::Imbalance(_) => "imbalance",
            KernelSpec::HashBucket { .. } => "hashbucket",
        }
    }

    /// Size arguments as `key=value` pairs separated by spaces.
    pub fn args(&self) -> String {
        match self {
            KernelSpec::Fib { n, cutoff } => format!("n={n} cutoff={cutoff}"),
            KernelSpec::NQueens { n, depth } => format!("n={n} depth={depth}"),
            KernelSpec::Msort { n, leaf } => format!("n={n} leaf={leaf}"),
            KernelSpec::Strassen { n, cutoff } => format!("n={n} cutoff={cutoff}"),
            KernelSpec::Imbalance(s) => format!(
                "tasks={} skew={} hot={} work={}",
                s.n_tasks, s.skew, s.hot_fraction, s.work_per_task
            ),
            KernelSpec::HashBucket { k, batch, hash } => format!("k={k} batch={batch} hash={hash}"),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            KernelSpec::Fib { n, .. } if n > 92 => Err(format!("fib({n}) overflows u64")),
            KernelSpec::NQueens { n, .. } if !(1..=nqueens::MAX_N).contains(&n) => Err(format!(
                "nqueens n must be in 1..={}, got {n}",
                nqueens::MAX_N
            )),
            KernelSpec::Msort { n, leaf } if n == 0 || leaf == 0 => {
                Err("msort needs n >= 1 and leaf >= 1".into())
            }
            KernelSpec::Strassen { n, cutoff } if !n.is_power_of_two() || cutoff == 0 => {
                Err(format!(
                    "strassen needs a power-of-two n and cutoff >= 1, got n={n} cutoff={cutoff}"
                ))
            }
            KernelSpec::Imbalance(ref s) => s.validate(),
            KernelSpec::HashBucket { k, batch, .. } if k > hashbucket::MAX_K || batch == 0 => Err(
                format!("hashbucket needs k <= {} and batch >= 1", hashbucket::MAX_K),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub kernel: KernelSpec,
    pub repeat: usize,
    pub team: TeamConfig,
    /// Where per-run dumps go; `XTASK_PERFLOG_DIR` is used when unset.
    pub profile_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark: {0}")]
    Invalid(String),
    #[error(transparent)]
    Team(#[from] TeamError),
    #[error(transparent)]
    Dump(#[from] DumpError),
}

/// One repetition.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub wall: Duration,
    /// Kernel result fingerprint; identical across strategies and team sizes.
    pub value: u64,
    pub detail: String,
    pub counters: CounterSet,
    pub executed_per_worker: Vec<u64>,
    /// Exclusive STALL ticks over all workers (0 without profiling).
    pub stall_ticks: u64,
    /// Coefficient of variation of per-worker TASK time, when profiled.
    pub utilization_cv: Option<f64>,
    /// Records per second, for hashbucket.
    pub throughput: Option<f64>,
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub kernel: &'static str,
    pub args: String,
    pub team: TeamConfig,
    pub runs: Vec<RunSummary>,
    /// First oracle or conservation failure; the experiment stops there.
    pub failure: Option<String>,
}

impl ExperimentReport {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }

    pub fn wall_ms(&self) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| r.wall.as_secs_f64() * 1e3)
            .collect()
    }

    pub fn mean_ms(&self) -> f64 {
        mean(&self.wall_ms())
    }

    pub fn min_ms(&self) -> f64 {
        self.wall_ms().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn max_ms(&self) -> f64 {
        self.wall_ms().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Counters summed over all runs.
    pub fn counters(&self) -> CounterSet {
        let mut total = CounterSet::default();
        for r in &self.runs {
            total.merge(&r.counters);
        }
        total
    }

    pub fn mean_stall_ticks(&self) -> f64 {
        mean(
            &self
                .runs
                .iter()
                .map(|r| r.stall_ticks as f64)
                .collect::<Vec<_>>(),
        )
    }

    pub fn mean_throughput(&self) -> Option<f64> {
        let t: Option<Vec<f64>> = self.runs.iter().map(|r| r.throughput).collect();
        t.filter(|t| !t.is_empty()).map(|t| mean(&t))
    }

    /// The machine-readable `RESULT ...` line.
    pub fn summary_line(&self) -> String {
        format!(
            "RESULT kernel={} threads={} dlb={} mean_ms={:.3} min_ms={:.3} max_ms={:.3} ok={}",
            self.kernel,
            self.team.n_workers,
            self.team.dlb.strategy.cli_name(),
            self.mean_ms(),
            self.min_ms(),
            self.max_ms(),
            self.ok()
        )
    }
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.summary_line())
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Coefficient of variation; zero for an all-zero sample.
pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let m = mean(xs);
    if m == 0.0 {
        return 0.0;
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
    var.sqrt() / m
}

/// Inputs and expected results, built once per experiment.
enum Prepared {
    Fib {
        n: u32,
        cutoff: u32,
        want: u64,
    },
    NQueens {
        n: usize,
        depth: usize,
        want: u64,
    },
    Msort {
        input: Vec<u64>,
        leaf: usize,
        want: Vec<u64>,
    },
    Strassen {
        a: Matrix,
        b: Matrix,
        cutoff: usize,
        want: Matrix,
        naive: Matrix,
    },
    Imbalance {
        weights: Vec<u64>,
        want: Vec<u64>,
    },
    Hash {
        k: u32,
        batch: usize,
        hash: HashKind,
    },
}

enum Output {
    Count(u64),
    Sorted(Vec<u64>),
    Product(Result<Matrix, strassen::NotPowerOfTwo>),
    Spins(Vec<u64>),
    Hashes(HashOutcome),
}

fn prepare(kernel: &KernelSpec, team: &TeamConfig) -> Prepared {
    match *kernel {
        KernelSpec::Fib { n, cutoff } => Prepared::Fib {
            n,
            cutoff,
            want: oracle::fib(n),
        },
        KernelSpec::NQueens { n, depth } => Prepared::NQueens {
            n,
            depth,
            want: oracle::nqueens(n),
        },
        KernelSpec::Msort { n, leaf } => {
            let input = msort::random_input(n, team.seed);
            let want = oracle::sort(&input);
            Prepared::Msort { input, leaf, want }
        }
        KernelSpec::Strassen { n, cutoff } => {
            let a = Matrix::random(n, team.seed);
            let b = Matrix::random(n, team.seed ^ 0x5bd1_e995);
            let want = oracle::strassen(&a, &b, cutoff);
            let naive = oracle::matmul_naive(&a, &b);
            Prepared::Strassen {
                a,
                b,
                cutoff,
                want,
                naive,
            }
        }
        KernelSpec::Imbalance(ref spec) => {
            let weights = spec.weights(team.n_workers);
            let want = weights
                .iter()
                .enumerate()
                .map(|(j, &w)| imbalance::spin(w, j as u64))
                .collect();
            Prepared::Imbalance { weights, want }
        }
        KernelSpec::HashBucket { k, batch, hash } => Prepared::Hash { k, batch, hash },
    }
}

fn execute(w: &Worker<'_>, p: &Prepared) -> Output {
    match p {
        Prepared::Fib { n, cutoff, .. } => Output::Count(fib::fib(w, *n, *cutoff)),
        Prepared::NQueens { n, depth, .. } => Output::Count(nqueens::nqueens(w, *n, *depth)),
        Prepared::Msort { input, leaf, .. } => {
            let mut data = input.clone();
            msort::msort(w, &mut data, *leaf);
            Output::Sorted(data)
        }
        Prepared::Strassen { a, b, cutoff, .. } => {
            Output::Product(strassen::strassen(w, a, b, *cutoff))
        }
        Prepared::Imbalance { weights, .. } => Output::Spins(imbalance::imbalance(w, weights)),
        Prepared::Hash { k, batch, hash } => {
            Output::Hashes(hashbucket::hashbucket(w, *k, *batch, *hash))
        }
    }
}

/// Checks `out` against the oracle; returns (fingerprint, detail, throughput).
fn check(p: &Prepared, out: Output) -> Result<(u64, String, Option<f64>), String> {
    match (p, out) {
        (Prepared::Fib { want, .. } | Prepared::NQueens { want, .. }, Output::Count(got)) => {
            if got != *want {
                return Err(format!("got {got}, oracle says {want}"));
            }
            Ok((got, format!("value={got}"), None))
        }
        (Prepared::Msort { input, want, .. }, Output::Sorted(got)) => {
            let sum = msort::checksum(&got);
            if !msort::is_sorted(&got) || sum != msort::checksum(input) || got != *want {
                return Err("output is not the sorted input".into());
            }
            Ok((sum, format!("sorted=true checksum={sum:016x}"), None))
        }
        (Prepared::Strassen { want, naive, .. }, Output::Product(got)) => {
            let got = got.map_err(|e| e.to_string())?;
            let residual = got.max_abs_diff(naive);
            let bound = 1e-9 * got.n() as f64;
            if residual > bound {
                return Err(format!("residual {residual:e} exceeds {bound:e}"));
            }
            if got != *want {
                return Err("product differs from sequential Strassen".into());
            }
            let fp = (0..got.n())
                .flat_map(|i| (0..got.n()).map(move |j| (i, j)))
                .fold(0u64, |acc, (i, j)| {
                    acc.rotate_left(5) ^ got.get(i, j).to_bits()
                });
            Ok((fp, format!("residual={residual:e}"), None))
        }
        (Prepared::Imbalance { want, .. }, Output::Spins(got)) => {
            if got != *want {
                return Err("spin results differ from serial run".into());
            }
            let sum = imbalance::checksum(&got);
            Ok((
                sum,
                format!("tasks={} checksum={sum:016x}", got.len()),
                None,
            ))
        }
        (Prepared::Hash { hash, .. }, Output::Hashes(got)) => {
            hashbucket::verify(&got, *hash)?;
            let hist = got.histogram();
            let fp = hist.iter().fold(got.records.len() as u64, |a, &c| {
                a.wrapping_mul(31).wrapping_add(c)
            });
            let tput = got.throughput();
            Ok((
                fp,
                format!(
                    "records={} tasks={} hashes_per_s={tput:.0} buckets={hist:?}",
                    got.records.len(),
                    got.tasks
                ),
                Some(tput),
            ))
        }
        _ => unreachable!("kernel output does not match its input"),
    }
}

fn profile_of(report: &TeamReport) -> (u64, Option<f64>) {
    if !report.config.profiling {
        return (0, None);
    }
    let busy: Vec<f64> = report
        .workers
        .iter()
        .map(|w| {
            profiler::state_durations(&w.events)
                .map(|d| d.get(EventKind::Task) as f64)
                .unwrap_or(0.0)
        })
        .collect();
    (report.stall_ticks(), Some(coefficient_of_variation(&busy)))
}

fn round_check(report: &TeamReport) -> Result<(), String> {
    for (id, &(start, end)) in report.rounds.iter().enumerate() {
        if end < start {
            return Err(format!("worker {id} round went back from {start} to {end}"));
        }
        let handled = report.workers[id].counters.nreq_handled;
        if end - start != report.workers[id].counters.nrounds_advanced || handled > end - start {
            return Err(format!(
                "worker {id} advanced {} rounds for {handled} handled requests",
                end - start
            ));
        }
    }
    let max = report.totals().max_steal_per_request;
    if max > report.config.dlb.n_steal as u64 {
        return Err(format!(
            "{max} tasks moved for one request, n_steal is {}",
            report.config.dlb.n_steal
        ));
    }
    Ok(())
}

/// Runs `spec.repeat` repetitions on one team. Oracle and conservation
/// failures stop the experiment and are reported in `failure`; they are not
/// errors of this function.
pub fn run_experiment(spec: &BenchSpec) -> Result<ExperimentReport, BenchError> {
    spec.kernel.validate().map_err(BenchError::Invalid)?;
    if spec.repeat == 0 {
        return Err(BenchError::Invalid("repeat must be at least 1".into()));
    }
    let dump_root = profiler::resolve_dump_dir(spec.profile_dir.as_deref()).ok();
    let mut config = spec.team.clone();
    config.profiling |= dump_root.is_some() || matches!(spec.kernel, KernelSpec::Imbalance(_));
    let mut team = Team::new(config.clone())?;
    let prepared = prepare(&spec.kernel, &config);

    let mut report = ExperimentReport {
        kernel: spec.kernel.name(),
        args: spec.kernel.args(),
        team: config,
        runs: Vec::with_capacity(spec.repeat),
        failure: None,
    };
    for run in 0..spec.repeat {
        let (out, team_report) = team.run(|w| execute(w, &prepared))?;
        let checked = check(&prepared, out).and_then(|v| {
            team_report.check_conservation()?;
            round_check(&team_report)?;
            Ok(v)
        });
        let dump = match &dump_root {
            Some(root) => Some(write_dump(root, run, &spec.kernel, &team_report)?),
            None => None,
        };
        let (stall_ticks, utilization_cv) = profile_of(&team_report);
        let (value, detail, throughput) = match checked {
            Ok(v) => v,
            Err(e) => {
                report.failure = Some(format!("run {run}: {e}"));
                (0, String::new(), None)
            }
        };
        report.runs.push(RunSummary {
            wall: team_report.wall,
            value,
            detail,
            counters: team_report.totals(),
            executed_per_worker: team_report
                .workers
                .iter()
                .map(|w| w.counters.ntasks_executed)
                .collect(),
            stall_ticks,
            utilization_cv,
            throughput,
            dump,
        });
        if report.failure.is_some() {
            break;
        }
    }
    Ok(report)
}

fn write_dump(
    root: &Path,
    run: usize,
    kernel: &KernelSpec,
    report: &TeamReport,
) -> Result<PathBuf, DumpError> {
    let dir = root.join(format!("run_{run}"));
    let mut manifest = report.manifest();
    manifest.push("benchmark", kernel.name());
    manifest.push("args", kernel.args());
    manifest.push("run", run);
    report.dump(&dir, &manifest)?;
    Ok(dir)
}
