//! Python bindings: matrix multiplication on in-process worlds, the cost
//! model, grid coordinates and the collective suite.

use distseq::costmodel::{self, CostParams, EfficiencyRecord, Growth, Model};
use distseq::dseq::DistSeq;
use distseq::grid;
use distseq::matmul::{self, Algorithm, Matrix, Operand};
use distseq::suite;
use distseq::transport::{run_spmd, CommStats, RankId};
use distseq::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Transport(_) | Error::Io(_) | Error::Topology(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_model(name: &str) -> PyResult<Model> {
    match name {
        "generic" => Ok(Model::Generic),
        "grid" => Ok(Model::Grid),
        _ => Err(PyValueError::new_err(format!("unknown model {name:?}, expected 'generic' or 'grid'"))),
    }
}

fn parse_algorithm(name: &str) -> PyResult<Algorithm> {
    Ok(match parse_model(name)? {
        Model::Generic => Algorithm::Generic,
        Model::Grid => Algorithm::Grid,
    })
}

fn parse_growth(name: &str) -> PyResult<Growth> {
    match name {
        "iso" => Ok(Growth::Isoefficiency),
        "linear" => Ok(Growth::Linear),
        other => other
            .strip_prefix("power:")
            .and_then(|e| e.parse().ok())
            .map(Growth::Power)
            .ok_or_else(|| PyValueError::new_err(format!("unknown growth {other:?}, expected iso, linear or power:<e>"))),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(py_err)
}

#[pyclass(name = "CommStats", frozen, get_all, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyCommStats {
    messages: u64,
    bytes: u64,
    rounds: u64,
}

impl From<CommStats> for PyCommStats {
    fn from(s: CommStats) -> Self {
        PyCommStats { messages: s.messages_sent, bytes: s.bytes_sent, rounds: s.rounds }
    }
}

#[pymethods]
impl PyCommStats {
    fn __repr__(&self) -> String {
        format!("CommStats(messages={}, bytes={}, rounds={})", self.messages, self.bytes, self.rounds)
    }
}

#[pyclass(name = "MatmulResult", frozen, get_all)]
struct PyMatmulResult {
    algorithm: String,
    product: Vec<Vec<f64>>,
    stats: PyCommStats,
    /// Per-rank collective loop iterations.
    iterations: Vec<u64>,
    /// Per-rank operand blocks materialized.
    blocks_materialized: Vec<u64>,
}

#[pyclass(name = "EfficiencyRecord", frozen, get_all)]
struct PyEfficiencyRecord {
    model: String,
    p: usize,
    n: f64,
    t_s: f64,
    t_p: f64,
    cost: f64,
    t_o: f64,
    e: f64,
}

impl From<EfficiencyRecord> for PyEfficiencyRecord {
    fn from(r: EfficiencyRecord) -> Self {
        PyEfficiencyRecord {
            model: r.model.name().to_owned(),
            p: r.p,
            n: r.n,
            t_s: r.t_s,
            t_p: r.t_p,
            cost: r.cost,
            t_o: r.t_o,
            e: r.e,
        }
    }
}

#[pymethods]
impl PyEfficiencyRecord {
    fn __repr__(&self) -> String {
        format!("EfficiencyRecord(model={:?}, p={}, n={}, T_P={}, E={})", self.model, self.p, self.n, self.t_p, self.e)
    }
}

#[pyclass(name = "CheckLine", frozen, get_all)]
struct PyCheckLine {
    check: String,
    rank: usize,
    stats: PyCommStats,
    result: Vec<u8>,
}

#[pyfunction]
#[pyo3(signature = (algorithm, seed, n, q))]
fn multiply(algorithm: &str, seed: u64, n: usize, q: usize) -> PyResult<PyMatmulResult> {
    let algorithm = parse_algorithm(algorithm)?;
    let run = matmul::run_inproc(algorithm, seed, n, q).map_err(py_err)?;
    Ok(PyMatmulResult {
        algorithm: algorithm.name().to_owned(),
        product: run.product.to_rows(),
        stats: run.total_stats().into(),
        iterations: run.counters.iter().map(|c| c.collective_iterations).collect(),
        blocks_materialized: run.counters.iter().map(|c| c.blocks_materialized).collect(),
    })
}

#[pyfunction]
fn seeded_matrix(seed: u64, operand: &str, n: usize) -> PyResult<Vec<Vec<f64>>> {
    let operand = match operand {
        "A" | "a" => Operand::A,
        "B" | "b" => Operand::B,
        _ => return Err(PyValueError::new_err("operand must be 'A' or 'B'")),
    };
    Ok(matmul::seeded_matrix(seed, operand, n).to_rows())
}

#[pyfunction]
fn serial_multiply(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(matmul::serial_multiply(&to_matrix(a)?, &to_matrix(b)?).map_err(py_err)?.to_rows())
}

#[pyfunction]
fn generic_tp(n: f64, p: usize) -> PyResult<f64> {
    costmodel::generic_tp(n, p).map_err(py_err)
}

#[pyfunction]
fn grid_tp(n: f64, p: usize) -> PyResult<f64> {
    costmodel::grid_tp(n, p).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (model, n, p, t_s = 1.0, t_w = 1.0, t_flop = 1.0))]
fn evaluate(model: &str, n: f64, p: usize, t_s: f64, t_w: f64, t_flop: f64) -> PyResult<PyEfficiencyRecord> {
    let params = CostParams::new(t_s, t_w, t_flop).map_err(py_err)?;
    Ok(EfficiencyRecord::evaluate(parse_model(model)?, &params, n, p).map_err(py_err)?.into())
}

type IsoTable = (f64, Vec<(usize, usize, f64)>);

/// Calibrates `c` so that `E(anchor) = target`, then evaluates every `p`.
/// Returns `(c, [(p, n, E), ...])`.
#[pyfunction]
#[pyo3(signature = (model, growth, ps, target = 0.8, anchor = 8))]
fn iso_check(model: &str, growth: &str, ps: Vec<usize>, target: f64, anchor: usize) -> PyResult<IsoTable> {
    let (model, growth) = (parse_model(model)?, parse_growth(growth)?);
    let unit = CostParams::UNIT;
    let c = costmodel::calibrate_constant(model, &unit, growth, anchor, target).map_err(py_err)?;
    let rows = costmodel::iso_check(model, &unit, growth, c, &ps).map_err(py_err)?;
    Ok((c, rows.iter().map(|r| (r.p, r.n, r.record.e)).collect()))
}

#[pyfunction]
fn cost_ratio(model: &str, n: f64, p: usize) -> PyResult<f64> {
    costmodel::cost_ratio(parse_model(model)?, &CostParams::UNIT, n, p).map_err(py_err)
}

#[pyfunction]
fn grid_rank(q: usize, i: usize, j: usize, k: usize) -> PyResult<usize> {
    Ok(grid::rank_of(&[q, q, q], &[i, j, k]).map_err(py_err)?.0)
}

#[pyfunction]
fn grid_coords(q: usize, rank: usize) -> PyResult<(usize, usize, usize)> {
    match grid::coords_of(&[q, q, q], RankId(rank)).map_err(py_err)?[..] {
        [i, j, k] => Ok((i, j, k)),
        _ => unreachable!("three axes"),
    }
}

/// Number of set bits of `0..=2`, mapped over a world of `world_size` ranks.
#[pyfunction]
fn popcount_demo(world_size: usize) -> PyResult<Vec<Option<i64>>> {
    if world_size == 0 {
        return Err(PyValueError::new_err("world_size must be positive"));
    }
    let run = run_spmd(world_size, |ep| DistSeq::from_range(ep, 0..=2).map_d(|i| i64::from(i.count_ones())).into_local());
    Ok(run.results)
}

/// Runs the collective suite on `procs` in-process ranks.
#[pyfunction]
#[pyo3(signature = (procs, seed = 42))]
fn collective_suite(procs: usize, seed: u64) -> PyResult<Vec<PyCheckLine>> {
    if procs == 0 || procs > 64 {
        return Err(PyValueError::new_err("procs must be in 1..=64"));
    }
    let run = run_spmd(procs, |ep| suite::run_suite(ep, seed));
    let mut out = Vec::new();
    for lines in run.results {
        for l in lines.map_err(py_err)? {
            out.push(PyCheckLine { check: l.check, rank: l.rank, stats: l.stats.into(), result: l.result });
        }
    }
    Ok(out)
}

#[pymodule]
fn pydistseq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCommStats>()?;
    m.add_class::<PyMatmulResult>()?;
    m.add_class::<PyEfficiencyRecord>()?;
    m.add_class::<PyCheckLine>()?;
    m.add_function(wrap_pyfunction!(multiply, m)?)?;
    m.add_function(wrap_pyfunction!(seeded_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(serial_multiply, m)?)?;
    m.add_function(wrap_pyfunction!(generic_tp, m)?)?;
    m.add_function(wrap_pyfunction!(grid_tp, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(iso_check, m)?)?;
    m.add_function(wrap_pyfunction!(cost_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(grid_rank, m)?)?;
    m.add_function(wrap_pyfunction!(grid_coords, m)?)?;
    m.add_function(wrap_pyfunction!(popcount_demo, m)?)?;
    m.add_function(wrap_pyfunction!(collective_suite, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn name_parsing() {
        assert_eq!(parse_model("grid").unwrap(), Model::Grid);
        assert_eq!(parse_growth("power:1.5").unwrap(), Growth::Power(1.5));
        assert_eq!(parse_growth("iso").unwrap(), Growth::Isoefficiency);
        assert!(matches!(parse_algorithm("generic").unwrap(), Algorithm::Generic));
    }
}
