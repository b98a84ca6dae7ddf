//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

mod common;

use std::time::Instant;

use distseq::costmodel::{
    calibrate_constant, generic_tp, grid_tp, iso_check, CostParams, Growth, Model,
};
use distseq::dseq::DistSeq;
use distseq::matmul::{run_inproc, seeded_matrix, Algorithm, Matrix, Operand};
use distseq::suite::{aggregate, CheckLine};
use distseq::transport::{run_spmd, Comm, CommStats, RankId, Transport};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg.into()) }
}

fn naive(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.rows();
    let mut c = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            c.set(i, j, (0..n).map(|k| a.get(i, k) * b.get(k, j)).sum());
        }
    }
    c
}

fn ceil_log2(p: usize) -> u64 {
    (p as f64).log2().ceil() as u64
}

fn oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (q, n) in [(1, 4), (2, 4), (2, 8), (3, 6), (3, 12), (4, 8)] {
        for seed in 0..10u64 {
            let expected = naive(&seeded_matrix(seed, Operand::A, n), &seeded_matrix(seed, Operand::B, n));
            for alg in [Algorithm::Generic, Algorithm::Grid] {
                let run = run_inproc(alg, seed, n, q).map_err(|e| e.to_string())?;
                let err = run.product.max_abs_diff(&expected).map_err(|e| e.to_string())?;
                ensure(err <= 1e-9, format!("{} q={q} n={n} seed={seed} err={err:e}", alg.name()))?;
                worst = worst.max(err);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, format!("took {secs:.1}s"))?;
    Ok(format!("120 runs, max err {worst:e}, {secs:.2}s"))
}

fn collective_counts(p: usize) -> Vec<Vec<CommStats>> {
    run_spmd(p, |ep| {
        let comm = Comm::world(ep);
        let me = comm.rank().0;
        let mut out = Vec::new();
        let mut mark = ep.stats();
        let mut lap = |out: &mut Vec<CommStats>| {
            let now = ep.stats();
            out.push(now.since(&mark));
            mark = now;
        };
        comm.broadcast(RankId(0), (me == 0).then(|| vec![7; 16])).unwrap();
        lap(&mut out);
        comm.reduce(RankId(0), vec![me as u8], |a, b| Ok(vec![a[0].wrapping_add(b[0])])).unwrap();
        lap(&mut out);
        comm.all_gather(vec![me as u8; 4]).unwrap();
        lap(&mut out);
        comm.circular_shift(1, vec![me as u8]).unwrap();
        lap(&mut out);
        out
    })
    .results
}

fn check_counts(p: usize, by_check: impl Fn(&str) -> CommStats) -> Result<(), String> {
    let p64 = p as u64;
    let expect = [
        ("broadcast", p64 - 1, ceil_log2(p)),
        ("reduce", p64 - 1, ceil_log2(p)),
        ("allgather", p64 * (p64 - 1), p64 - 1),
        ("shift", p64, 1),
    ];
    for (name, messages, rounds) in expect {
        let s = by_check(name);
        ensure(
            s.messages_sent == messages && s.rounds == rounds,
            format!("p={p} {name}: {} messages / {} rounds, expected {messages} / {rounds}", s.messages_sent, s.rounds),
        )?;
    }
    Ok(())
}

fn collective_complexity() -> Check {
    for p in [2, 4, 8, 16] {
        let per_rank = collective_counts(p);
        let names = ["broadcast", "reduce", "allgather", "shift"];
        check_counts(p, |name| {
            let i = names.iter().position(|n| *n == name).unwrap();
            CommStats::aggregate(per_rank.iter().map(|r| &r[i]))
        })?;
    }
    Ok("p = 2, 4, 8, 16 exact".into())
}

fn spmd_bit_counts() -> Check {
    let run = run_spmd(5, |ep| {
        DistSeq::from_range(ep, 0..=2).map_d(|i| i64::from(i.count_ones())).into_local()
    });
    let expected = [Some(0), Some(1), Some(1), None, None];
    ensure(run.results == expected, format!("got {:?}", run.results))?;
    ensure(run.total_stats() == CommStats::default(), "map_d sent messages")?;
    Ok(format!("{:?}", run.results))
}

fn cost_golden_values() -> Check {
    let generic = generic_tp(8.0, 8).map_err(|e| e.to_string())?;
    let grid = grid_tp(8.0, 8).map_err(|e| e.to_string())?;
    ensure(generic == 97.0 && grid == 115.0, format!("generic {generic}, grid {grid}"))?;
    let mut points = 0;
    let mut worst = 0.0f64;
    for p in [1usize, 8, 27, 64, 125] {
        for n in [5.0, 8.0, 60.0, 512.0] {
            // hand-written overhead expressions in unit parameters
            let (pf, log_p, q) = (p as f64, (p as f64).log2(), (p as f64).cbrt().round());
            let displayed = [
                (Model::Generic, 4.0 * pf * q * q + pf / 3.0 * (log_p + n * n / (q * q) * log_p)),
                (Model::Grid, pf * log_p + n * n * q * log_p),
            ];
            for (model, t_o) in displayed {
                let tp = model.parallel_time(&CostParams::UNIT, n, p).map_err(|e| e.to_string())?;
                let from_tp = pf * tp - n * n * n;
                let rel = (from_tp - t_o).abs() / t_o.abs().max(1.0);
                worst = worst.max(rel);
                ensure(rel <= 1e-12, format!("{model} n={n} p={p}: {from_tp} vs {t_o}"))?;
                points += 1;
            }
        }
    }
    Ok(format!("97 / 115, T_o identity at {points} points, max rel err {worst:e}"))
}

fn spread(rows: &[distseq::costmodel::IsoRow]) -> f64 {
    let es = rows.iter().map(|r| r.record.e);
    es.clone().fold(f64::MIN, f64::max) - es.fold(f64::MAX, f64::min)
}

fn iso_band(model: Model, ps: &[usize]) -> Result<f64, String> {
    let unit = CostParams::UNIT;
    let c = calibrate_constant(model, &unit, Growth::Isoefficiency, 8, 0.8).map_err(|e| e.to_string())?;
    let rows = iso_check(model, &unit, Growth::Isoefficiency, c, ps).map_err(|e| e.to_string())?;
    let band = spread(&rows);
    ensure(band <= 0.1, format!("{model} band {band}"))?;
    Ok(band)
}

fn linear_decreasing(model: Model, ps: &[usize]) -> Result<(), String> {
    let unit = CostParams::UNIT;
    let c = calibrate_constant(model, &unit, Growth::Linear, 8, 0.8).map_err(|e| e.to_string())?;
    let rows = iso_check(model, &unit, Growth::Linear, c, ps).map_err(|e| e.to_string())?;
    let es: Vec<f64> = rows.iter().map(|r| r.record.e).collect();
    ensure(es.windows(2).all(|w| w[1] < w[0]), format!("{model} linear E not decreasing: {es:?}"))
}

fn isoefficiency() -> Check {
    let cubes = [8, 27, 64, 125, 216];
    let grid_band = iso_band(Model::Grid, &cubes)?;
    let generic_band = iso_band(Model::Generic, &cubes)?;
    linear_decreasing(Model::Grid, &cubes)?;
    linear_decreasing(Model::Generic, &cubes)?;
    linear_decreasing(Model::Generic, &[8, 64, 512, 4096])?;
    Ok(format!("band grid {grid_band:.4}, generic {generic_band:.4}; W = c·p decreasing"))
}

fn loop_elimination() -> Check {
    for q in [2usize, 3] {
        let generic = run_inproc(Algorithm::Generic, 1, 2 * q, q).map_err(|e| e.to_string())?;
        let grid = run_inproc(Algorithm::Grid, 1, 2 * q, q).map_err(|e| e.to_string())?;
        ensure(generic.counters.iter().all(|c| c.collective_iterations == (q * q) as u64), format!("generic q={q}"))?;
        ensure(grid.counters.iter().all(|c| c.collective_iterations == 1), format!("grid q={q}"))?;
    }
    Ok("generic q², grid 1 at q = 2, 3".into())
}

fn parse_lines(text: &str) -> Result<Vec<CheckLine>, String> {
    text.lines().map(|l| l.parse::<CheckLine>().map_err(|e| e.to_string())).collect()
}

fn backend_substitutability() -> Check {
    let outputs = common::run_socket_world(8, &["suite", "--seed", "42"]);
    let mut socket_text = String::new();
    for (rank, out) in outputs.iter().enumerate() {
        ensure(out.status.success(), format!("rank {rank}: {}", String::from_utf8_lossy(&out.stderr)))?;
        socket_text.push_str(&common::stdout(out));
    }
    let inproc = common::run(&["suite", "--procs", "8", "--seed", "42"]);
    ensure(inproc.status.success(), "in-process suite failed")?;
    let inproc_text = common::stdout(&inproc);
    ensure(socket_text == inproc_text, "socket and in-process suite output differ")?;

    let lines = parse_lines(&socket_text)?;
    check_counts(8, |name| aggregate(&lines, name))?;
    let product = lines
        .iter()
        .find(|l| l.check == "matmul-grid" && l.rank == 0)
        .ok_or("no matmul line")?;
    let c = <Matrix as distseq::wire::Wire>::from_bytes(&product.result).map_err(|e| e.to_string())?;
    let expected = naive(&seeded_matrix(42, Operand::A, 4), &seeded_matrix(42, Operand::B, 4));
    let err = c.max_abs_diff(&expected).map_err(|e| e.to_string())?;
    ensure(err <= 1e-9, format!("socket matmul err {err:e}"))?;
    Ok(format!("{} lines byte-identical across 8 processes", lines.len()))
}

fn determinism() -> Check {
    for alg in [Algorithm::Generic, Algorithm::Grid] {
        let a = run_inproc(alg, 77, 12, 3).map_err(|e| e.to_string())?;
        let b = run_inproc(alg, 77, 12, 3).map_err(|e| e.to_string())?;
        ensure(a.stats == b.stats, format!("{} stats differ", alg.name()))?;
        ensure(a.product.data() == b.product.data(), format!("{} products differ", alg.name()))?;
    }
    let first = collective_counts(16);
    ensure(first == collective_counts(16), "collective stats differ")?;
    Ok("stats and products identical".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("collective complexity", collective_complexity),
        ("spmd output", spmd_bit_counts),
        ("cost model golden values", cost_golden_values),
        ("isoefficiency", isoefficiency),
        ("loop elimination", loop_elimination),
        ("backend substitutability", backend_substitutability),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
