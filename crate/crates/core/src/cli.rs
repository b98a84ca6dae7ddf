//! Command-line front end: oracle verification, desk-scale benchmarks,
//! cost-model tables and the cross-backend check suite.
//!
//! Machine-readable output goes to stdout (or `--output`); diagnostics go to
//! stderr. With the socket backend every rank runs the same command and only
//! rank 0 reports.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::costmodel::{
    calibrate_constant, cube_side, iso_check, write_efficiency_csv, write_iso_csv, CostParams, EfficiencyRecord,
    Growth, Model,
};
use crate::error::{Error, Result};
use crate::matmul::{
    multiply_on, run_inproc, seeded_matrix, serial_multiply, Algorithm, BlockDecomposition, Matrix, Operand,
};
use crate::suite::run_suite;
use crate::transport::{run_spmd, Comm, CommStats, SocketEndpoint, Transport};
use crate::wire::Wire;

/// Largest grid side run on the in-process backend.
pub const INPROC_MAX_Q: usize = 4;

pub const BENCH_CSV_HEADER: &str = "algo,p,n,seconds,messages,bytes,rounds";

#[derive(Debug, Parser)]
#[command(name = "distseq", version, about = "SPMD distributed sequences: matmul verification, benchmarks and cost model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run both parallel multiplications and compare them with the serial oracle.
    Verify(MatmulArgs),
    /// Time serial, generic and grid multiplication; emit CSV.
    Bench(MatmulArgs),
    /// Evaluate the analytical cost model; emit CSV.
    Model(ModelArgs),
    /// Run the collective check suite and print one line per check and rank.
    Suite(SuiteArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Inproc,
    Socket,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "inproc")]
    pub backend: Backend,
    /// This process's rank (socket backend).
    #[arg(long)]
    pub rank: Option<usize>,
    /// File with one `host:port` per line, line i = rank i (socket backend).
    #[arg(long)]
    pub peers: Option<PathBuf>,
    /// Seconds to wait for the socket mesh to form.
    #[arg(long, default_value_t = 30)]
    pub connect_timeout: u64,
}

impl BackendArgs {
    fn connect(&self) -> Result<SocketEndpoint> {
        let (Some(rank), Some(peers)) = (self.rank, self.peers.as_ref()) else {
            return Err(Error::Domain("the socket backend needs --rank and --peers".into()));
        };
        SocketEndpoint::from_peers_file(rank, peers, Duration::from_secs(self.connect_timeout))
    }
}

#[derive(Debug, Clone, Args)]
pub struct MatmulArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Grid side; the run uses p = q³ ranks.
    #[arg(long, default_value_t = 2)]
    pub q: usize,
    /// Matrix side; must be a multiple of q.
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Max-abs error accepted against the serial product.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also dump the assembled product in matrix text format to this file.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Processor counts (perfect cubes).
    #[arg(long, value_delimiter = ',', default_value = "1,8,27,64,125,216,343,512")]
    pub p: Vec<usize>,
    /// Matrix sides.
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub t_s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t_w: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t_flop: f64,
    /// Append isoefficiency tables (blank-line separated) after the records.
    #[arg(long)]
    pub iso: bool,
    /// Efficiency the isoefficiency tables are calibrated to at the smallest p > 1.
    #[arg(long, default_value_t = 0.8)]
    pub target_efficiency: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SuiteArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// World size for the in-process backend.
    #[arg(long, default_value_t = 8)]
    pub procs: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

/// What a command produced: the report text and whether every check passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub success: bool,
}

/// A validated matmul configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub backend: Backend,
    pub q: usize,
    pub n: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl RunConfig {
    pub fn from_args(args: &MatmulArgs) -> Result<Self> {
        if args.q == 0 {
            return Err(Error::Domain("--q must be at least 1".into()));
        }
        BlockDecomposition::new(args.n, args.q)?;
        if args.backend.backend == Backend::Inproc && args.q > INPROC_MAX_Q {
            return Err(Error::Domain(format!("in-process runs are limited to q ≤ {INPROC_MAX_Q}")));
        }
        if args.tolerance.is_nan() || args.tolerance < 0.0 {
            return Err(Error::Domain("--tolerance must be non-negative".into()));
        }
        Ok(RunConfig { backend: args.backend.backend, q: args.q, n: args.n, seed: args.seed, tolerance: args.tolerance })
    }

    pub fn p(&self) -> usize {
        self.q.pow(3)
    }
}

/// Result of one parallel multiplication as seen by the reporting rank.
struct AlgoReport {
    algorithm: Algorithm,
    product: Matrix,
    stats: CommStats,
    seconds: f64,
}

fn encode_stats(s: &CommStats) -> Vec<u8> {
    vec![s.messages_sent, s.bytes_sent, s.rounds].to_bytes()
}

fn decode_stats(bytes: &[u8]) -> Result<CommStats> {
    match Vec::<u64>::from_bytes(bytes)?[..] {
        [messages_sent, bytes_sent, rounds] => Ok(CommStats { messages_sent, bytes_sent, rounds }),
        _ => Err(Error::Codec("stats record needs three counters".into())),
    }
}

/// Runs `algorithm` on this socket rank. Rank 0 gets the report.
fn multiply_socket(t: &dyn Transport, algorithm: Algorithm, cfg: &RunConfig) -> Result<Option<AlgoReport>> {
    let comm = Comm::world(t);
    comm.barrier()?;
    let start = Instant::now();
    let result = multiply_on(t, algorithm, cfg.seed, cfg.n, cfg.q)?;
    comm.barrier()?;
    let seconds = start.elapsed().as_secs_f64();
    let all = comm.all_gather(encode_stats(&result.algorithm_stats))?;
    let per_rank = all.iter().map(|b| decode_stats(b)).collect::<Result<Vec<_>>>()?;
    Ok(result.product.map(|product| AlgoReport {
        algorithm,
        product,
        stats: CommStats::aggregate(&per_rank),
        seconds,
    }))
}

fn multiply_all(cfg: &RunConfig, backend: &BackendArgs) -> Result<Option<Vec<AlgoReport>>> {
    let algorithms = [Algorithm::Generic, Algorithm::Grid];
    match cfg.backend {
        Backend::Inproc => algorithms
            .iter()
            .map(|&algorithm| {
                let start = Instant::now();
                let run = run_inproc(algorithm, cfg.seed, cfg.n, cfg.q)?;
                let seconds = start.elapsed().as_secs_f64();
                Ok(AlgoReport { algorithm, stats: run.total_stats(), product: run.product, seconds })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some),
        Backend::Socket => {
            let ep = backend.connect()?;
            if ep.size() != cfg.p() {
                return Err(Error::Topology(format!("peers file lists {} ranks, q = {} needs {}", ep.size(), cfg.q, cfg.p())));
            }
            let mut reports = Vec::new();
            for algorithm in algorithms {
                if let Some(report) = multiply_socket(&ep, algorithm, cfg)? {
                    reports.push(report);
                }
            }
            Comm::world(&ep).barrier()?;
            Ok((ep.rank().0 == 0).then_some(reports))
        }
    }
}

fn oracle(cfg: &RunConfig) -> Result<Matrix> {
    serial_multiply(&seeded_matrix(cfg.seed, Operand::A, cfg.n), &seeded_matrix(cfg.seed, Operand::B, cfg.n))
}

pub fn verify(args: &MatmulArgs) -> Result<Outcome> {
    let cfg = RunConfig::from_args(args)?;
    let Some(reports) = multiply_all(&cfg, &args.backend)? else {
        return Ok(Outcome { stdout: String::new(), success: true });
    };
    let expected = oracle(&cfg)?;
    let mut out = String::new();
    let mut success = true;
    for r in &reports {
        let err = r.product.max_abs_diff(&expected)?;
        let pass = err <= cfg.tolerance;
        success &= pass;
        let _ = writeln!(
            out,
            "algorithm={} p={} n={} seed={} max_abs_err={:e} messages={} bytes={} rounds={} status={}",
            r.algorithm.name(),
            cfg.p(),
            cfg.n,
            cfg.seed,
            err,
            r.stats.messages_sent,
            r.stats.bytes_sent,
            r.stats.rounds,
            if pass { "pass" } else { "fail" }
        );
    }
    if let (Some(path), Some(r)) = (&args.dump, reports.last()) {
        std::fs::write(path, r.product.to_text())?;
    }
    Ok(Outcome { stdout: out, success })
}

pub fn bench(args: &MatmulArgs) -> Result<Outcome> {
    let cfg = RunConfig::from_args(args)?;
    let a = seeded_matrix(cfg.seed, Operand::A, cfg.n);
    let b = seeded_matrix(cfg.seed, Operand::B, cfg.n);
    let start = Instant::now();
    let expected = serial_multiply(&a, &b)?;
    let serial_seconds = start.elapsed().as_secs_f64();

    let Some(reports) = multiply_all(&cfg, &args.backend)? else {
        return Ok(Outcome { stdout: String::new(), success: true });
    };
    let mut out = format!("{BENCH_CSV_HEADER}\n");
    let _ = writeln!(out, "serial,1,{},{:.6},0,0,0", cfg.n, serial_seconds);
    let mut success = true;
    for r in &reports {
        success &= r.product.max_abs_diff(&expected)? <= cfg.tolerance;
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{},{},{}",
            r.algorithm.name(),
            cfg.p(),
            cfg.n,
            r.seconds,
            r.stats.messages_sent,
            r.stats.bytes_sent,
            r.stats.rounds
        );
    }
    Ok(Outcome { stdout: out, success })
}

pub fn model(args: &ModelArgs) -> Result<Outcome> {
    let params = CostParams::new(args.t_s, args.t_w, args.t_flop)?;
    let mut records = Vec::new();
    let mut success = true;
    for model in [Model::Generic, Model::Grid] {
        for &p in &args.p {
            for &n in &args.n {
                match EfficiencyRecord::evaluate(model, &params, n as f64, p) {
                    Ok(r) => records.push(r),
                    Err(e) => {
                        eprintln!("model={model} p={p} n={n}: {e}");
                        success = false;
                    }
                }
            }
        }
    }
    let mut out = write_efficiency_csv(&records);

    if args.iso {
        let ps: Vec<usize> = args.p.iter().copied().filter(|&p| cube_side(p).is_ok()).collect();
        let anchor = ps.iter().copied().find(|&p| p > 1).ok_or_else(|| {
            Error::Domain("isoefficiency tables need at least one cube p > 1".into())
        })?;
        for model in [Model::Generic, Model::Grid] {
            for growth in [Growth::Isoefficiency, Growth::Linear] {
                let c = calibrate_constant(model, &params, growth, anchor, args.target_efficiency)?;
                let rows = iso_check(model, &params, growth, c, &ps)?;
                out.push('\n');
                out.push_str(&write_iso_csv(model, growth, c, &rows));
            }
        }
    }
    Ok(Outcome { stdout: out, success })
}

pub fn suite(args: &SuiteArgs) -> Result<Outcome> {
    let lines = match args.backend.backend {
        Backend::Inproc => {
            if args.procs == 0 || args.procs > INPROC_MAX_Q.pow(3) {
                return Err(Error::Domain(format!("--procs must be in 1..={}", INPROC_MAX_Q.pow(3))));
            }
            let run = run_spmd(args.procs, |ep| run_suite(ep, args.seed));
            run.results.into_iter().collect::<Result<Vec<_>>>()?.concat()
        }
        Backend::Socket => {
            let ep = args.backend.connect()?;
            let lines = run_suite(&ep, args.seed)?;
            Comm::world(&ep).barrier()?;
            lines
        }
    };
    let mut out = String::new();
    for line in lines {
        let _ = writeln!(out, "{line}");
    }
    Ok(Outcome { stdout: out, success: true })
}

fn output_path(command: &Command) -> Option<&PathBuf> {
    match command {
        Command::Verify(a) | Command::Bench(a) => a.output.as_ref(),
        Command::Model(a) => a.output.as_ref(),
        Command::Suite(_) => None,
    }
}

/// Runs a parsed command. Writes the report to stdout or `--output`.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    let outcome = match &cli.command {
        Command::Verify(a) => verify(a)?,
        Command::Bench(a) => bench(a)?,
        Command::Model(a) => model(a)?,
        Command::Suite(a) => suite(a)?,
    };
    if let Some(path) = output_path(&cli.command) {
        std::fs::write(path, &outcome.stdout)?;
        return Ok(Outcome { stdout: String::new(), success: outcome.success });
    }
    Ok(outcome)
}
