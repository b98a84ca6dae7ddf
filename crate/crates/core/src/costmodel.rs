//! Analytical runtime, overhead and efficiency model for the collectives and
//! both matrix multiplication algorithms.
//!
//! Logarithms are base 2. The normalized functions ([`generic_tp`],
//! [`grid_tp`]) fix `t_s = t_w = t_flop = 1`; the [`Model`] methods take
//! explicit [`CostParams`].

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

/// Machine parameters in abstract time units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    /// Message start-up time.
    pub t_s: f64,
    /// Per-word transfer time.
    pub t_w: f64,
    /// Time of one scalar multiply-add.
    pub t_flop: f64,
}

impl CostParams {
    pub const UNIT: CostParams = CostParams { t_s: 1.0, t_w: 1.0, t_flop: 1.0 };

    pub fn new(t_s: f64, t_w: f64, t_flop: f64) -> Result<Self> {
        for (name, v) in [("t_s", t_s), ("t_w", t_w), ("t_flop", t_flop)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Domain(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(CostParams { t_s, t_w, t_flop })
    }
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams::UNIT
    }
}

fn log2p(p: usize) -> f64 {
    (p as f64).log2()
}

/// Cost of one message of `m` words: `t_s + t_w·m`.
pub fn comm_cost(params: &CostParams, m: f64) -> f64 {
    params.t_s + params.t_w * m
}

/// Runtimes of the basic collectives on `p` ranks with `m`-word messages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectiveCosts {
    pub broadcast: f64,
    pub reduce: f64,
    pub all_to_all: f64,
    pub shift: f64,
}

/// `t_lambda` is the cost of one application of the reduction operator on an
/// `m`-word element.
pub fn collective_costs(params: &CostParams, p: usize, m: f64, t_lambda: impl Fn(f64) -> f64) -> CollectiveCosts {
    let log_p = log2p(p.max(1));
    CollectiveCosts {
        broadcast: comm_cost(params, m) * log_p,
        reduce: log_p * (comm_cost(params, m) + t_lambda(m)),
        all_to_all: params.t_s * log_p + params.t_w * m * (p.max(1) - 1) as f64,
        shift: comm_cost(params, m),
    }
}

/// `q` with `q³ = p`, or a domain error.
pub fn cube_side(p: usize) -> Result<usize> {
    let mut q = (p as f64).cbrt().round() as usize;
    while q.pow(3) > p {
        q -= 1;
    }
    while (q + 1).pow(3) <= p {
        q += 1;
    }
    if p == 0 || q.pow(3) != p {
        return Err(Error::Domain(format!("p = {p} is not a perfect cube")));
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    Generic,
    Grid,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Generic => "generic",
            Model::Grid => "grid",
        }
    }

    /// `T_S = t_flop·n³`.
    pub fn sequential_time(self, params: &CostParams, n: f64) -> f64 {
        params.t_flop * n.powi(3)
    }

    /// Parallel runtime on `p = q³` ranks.
    ///
    /// Generic: `t_flop·(4p^{2/3} + n³/p) + (t_s·log p + t_w·(n²/p^{2/3})·log p)/3`,
    /// the `4p^{2/3}` being the per-iteration skip overhead of the `q²` loop.
    /// Grid: `t_flop·n³/p + t_s·log p + t_w·(n²/p^{2/3})·log p`.
    pub fn parallel_time(self, params: &CostParams, n: f64, p: usize) -> Result<f64> {
        let q = cube_side(p)? as f64;
        let pf = p as f64;
        let log_p = log2p(p);
        let p23 = q * q;
        let compute = n.powi(3) / pf;
        let words = n * n / p23;
        Ok(match self {
            Model::Generic => {
                params.t_flop * (4.0 * p23 + compute) + (params.t_s * log_p + params.t_w * words * log_p) / 3.0
            }
            Model::Grid => params.t_flop * compute + params.t_s * log_p + params.t_w * words * log_p,
        })
    }

    /// `T_o = p·T_P − T_S`.
    pub fn overhead(self, params: &CostParams, n: f64, p: usize) -> Result<f64> {
        Ok(p as f64 * self.parallel_time(params, n, p)? - self.sequential_time(params, n))
    }

    /// The overhead written out in closed form for unit parameters, kept
    /// separate from [`Model::overhead`] so the two can be cross-checked.
    ///
    /// Generic: `4p^{5/3} + (p/3)(log p + (n²/p^{2/3}) log p)`.
    /// Grid: `p log p + n² p^{1/3} log p`.
    pub fn overhead_closed_form(self, n: f64, p: usize) -> Result<f64> {
        let q = cube_side(p)? as f64;
        let pf = p as f64;
        let log_p = log2p(p);
        Ok(match self {
            Model::Generic => 4.0 * pf * q * q + pf / 3.0 * (log_p + n * n / (q * q) * log_p),
            Model::Grid => pf * log_p + n * n * q * log_p,
        })
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Normalized parallel runtime of the loop algorithm.
pub fn generic_tp(n: f64, p: usize) -> Result<f64> {
    Model::Generic.parallel_time(&CostParams::UNIT, n, p)
}

/// Normalized parallel runtime of the grid algorithm.
pub fn grid_tp(n: f64, p: usize) -> Result<f64> {
    Model::Grid.parallel_time(&CostParams::UNIT, n, p)
}

/// `E = T_S / (p·T_P)`.
pub fn efficiency(t_s: f64, t_p: f64, p: usize) -> Result<f64> {
    if t_p.is_nan() || t_p <= 0.0 || p == 0 {
        return Err(Error::Domain(format!("efficiency needs T_P > 0 and p ≥ 1 (T_P = {t_p}, p = {p})")));
    }
    Ok(t_s / (p as f64 * t_p))
}

/// Model evaluation at one `(n, p)` point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyRecord {
    pub model: Model,
    pub p: usize,
    pub n: f64,
    pub t_s: f64,
    pub t_p: f64,
    pub cost: f64,
    pub t_o: f64,
    pub e: f64,
}

impl EfficiencyRecord {
    pub fn evaluate(model: Model, params: &CostParams, n: f64, p: usize) -> Result<Self> {
        let t_s = model.sequential_time(params, n);
        let t_p = model.parallel_time(params, n, p)?;
        let cost = p as f64 * t_p;
        Ok(EfficiencyRecord { model, p, n, t_s, t_p, cost, t_o: cost - t_s, e: efficiency(t_s, t_p, p)? })
    }
}

/// How the problem size `W` grows with `p` in an isoefficiency table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Growth {
    /// The model's own isoefficiency function: `p^{5/3}` for the loop
    /// algorithm, `p·log³p` for the grid algorithm.
    Isoefficiency,
    /// `W = c·p`.
    Linear,
    /// `W = c·p^exponent`.
    Power(f64),
}

impl Growth {
    pub fn name(self) -> String {
        match self {
            Growth::Isoefficiency => "iso".into(),
            Growth::Linear => "linear".into(),
            Growth::Power(e) => format!("power({e})"),
        }
    }

    /// Target problem size for `p` ranks and constant `c`.
    pub fn work(self, model: Model, c: f64, p: usize) -> f64 {
        let pf = p as f64;
        c * match (self, model) {
            (Growth::Isoefficiency, Model::Generic) => pf.powf(5.0 / 3.0),
            (Growth::Isoefficiency, Model::Grid) => pf * log2p(p).powi(3),
            (Growth::Linear, _) => pf,
            (Growth::Power(e), _) => pf.powf(e),
        }
    }
}

/// One row of an isoefficiency table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsoRow {
    pub p: usize,
    /// Requested problem size `c·f(p)`.
    pub target_work: f64,
    /// Matrix side actually used: `W^{1/3}` rounded to a positive multiple of `q`.
    pub n: usize,
    pub record: EfficiencyRecord,
}

/// Grows `W` with `p` according to `growth` and reports the efficiency reached
/// at each `p`.
pub fn iso_check(model: Model, params: &CostParams, growth: Growth, c: f64, ps: &[usize]) -> Result<Vec<IsoRow>> {
    if ps.is_empty() {
        return Err(Error::Domain("isoefficiency check needs at least one p".into()));
    }
    ps.iter()
        .map(|&p| {
            let q = cube_side(p)?;
            let target_work = growth.work(model, c, p);
            let n = ((target_work.cbrt() / q as f64).round() as usize).max(1) * q;
            let record = EfficiencyRecord::evaluate(model, params, n as f64, p)?;
            Ok(IsoRow { p, target_work, n, record })
        })
        .collect()
}

/// Finds `c` such that `W = c·f(p)` gives efficiency `target` at `p`, using a
/// continuous (unrounded) `n`.
pub fn calibrate_constant(model: Model, params: &CostParams, growth: Growth, p: usize, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Domain(format!("target efficiency {target} outside (0, 1)")));
    }
    let e_at = |log_c: f64| -> Result<f64> {
        let n = growth.work(model, log_c.exp(), p).cbrt();
        Ok(EfficiencyRecord::evaluate(model, params, n, p)?.e)
    };
    let (mut lo, mut hi) = (-40.0f64, 60.0f64);
    if e_at(lo)? > target || e_at(hi)? < target {
        return Err(Error::Domain(format!("efficiency {target} not reachable at p = {p}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if e_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// `p·T_P / T_S`; bounded along a sequence of points iff the algorithm is
/// cost-optimal there.
pub fn cost_ratio(model: Model, params: &CostParams, n: f64, p: usize) -> Result<f64> {
    let r = EfficiencyRecord::evaluate(model, params, n, p)?;
    Ok(r.cost / r.t_s)
}

/// Whether `p·T_P / T_S ≤ bound` at `(n, p)`.
pub fn cost_optimal_check(model: Model, params: &CostParams, n: f64, p: usize, bound: f64) -> Result<bool> {
    Ok(cost_ratio(model, params, n, p)? <= bound)
}

/// Formats `v` with `digits` significant digits, dropping trailing zeros
/// (C's `%g`).
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        return format!("{}e{exp}", trim_fraction(mantissa));
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_fraction(&format!("{v:.decimals$}")).to_owned()
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const EFFICIENCY_CSV_HEADER: &str = "model,p,n,T_S,T_P,cost,T_o,E";

pub const ISO_CSV_HEADER: &str = "model,growth,c,p,n,W,E";

pub fn write_efficiency_csv(records: &[EfficiencyRecord]) -> String {
    let mut out = format!("{EFFICIENCY_CSV_HEADER}\n");
    for r in records {
        let f = |v: f64| format_significant(v, 6);
        let _ = writeln!(out, "{},{},{},{},{},{},{},{}", r.model, r.p, f(r.n), f(r.t_s), f(r.t_p), f(r.cost), f(r.t_o), f(r.e));
    }
    out
}

pub fn write_iso_csv(model: Model, growth: Growth, c: f64, rows: &[IsoRow]) -> String {
    let mut out = format!("{ISO_CSV_HEADER}\n");
    for row in rows {
        let f = |v: f64| format_significant(v, 6);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            model,
            growth.name(),
            f(c),
            row.p,
            row.n,
            f(row.record.t_s),
            f(row.record.e)
        );
    }
    out
}
