//! Dense matrices, seeded block proxies and the parallel multiplication
//! algorithms built from distributed sequences.
//!
//! Both parallel algorithms run on `p = q³` ranks and split `n×n` operands
//! into `q×q` blocks of side `b = n/q`. The product block `C[i][j]` always ends
//! up on rank `(i·q + j)·q`, which is `(i, j, 0)` in grid coordinates.

use std::cell::Cell;
use std::fmt::Write as _;
use std::ops::Add;
use std::rc::Rc;

use crate::dseq::DistSeq;
use crate::error::{Error, Result};
use crate::grid::Grid3D;
use crate::transport::{run_spmd, Comm, CommStats, RankId, Tag, Transport};
use crate::wire::{take, Wire};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// The `side×side` block at block coordinates `(bi, bj)`.
    pub fn block(&self, bi: usize, bj: usize, side: usize) -> Matrix {
        let mut out = Matrix::zeros(side, side);
        for r in 0..side {
            let src = (bi * side + r) * self.cols + bj * side;
            out.data[r * side..(r + 1) * side].copy_from_slice(&self.data[src..src + side]);
        }
        out
    }

    pub fn set_block(&mut self, bi: usize, bj: usize, block: &Matrix) {
        let side = block.rows;
        for r in 0..side {
            let dst = (bi * side + r) * self.cols + bj * side;
            self.data[dst..dst + side].copy_from_slice(&block.data[r * side..(r + 1) * side]);
        }
    }

    pub fn checked_add(&self, other: &Matrix) -> Result<Matrix> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Shape(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(x, y)| x + y).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// `self += a·b`, accumulating each entry in ascending `k`.
    pub fn add_product(&mut self, a: &Matrix, b: &Matrix) -> Result<()> {
        if a.cols != b.rows || (self.rows, self.cols) != (a.rows, b.cols) {
            return Err(Error::Shape(format!(
                "cannot accumulate {}x{} · {}x{} into {}x{}",
                a.rows, a.cols, b.rows, b.cols, self.rows, self.cols
            )));
        }
        for r in 0..a.rows {
            for c in 0..b.cols {
                let mut sum = self.data[r * self.cols + c];
                for k in 0..a.cols {
                    sum += a.data[r * a.cols + k] * b.data[k * b.cols + c];
                }
                self.data[r * self.cols + c] = sum;
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Shape("comparing matrices of different shapes".into()));
        }
        Ok(self.data.iter().zip(&other.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
    }

    /// `rows cols` on the first line, then one line of space-separated values
    /// per row.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.rows, self.cols);
        for row in self.data.chunks(self.cols.max(1)).take(self.rows) {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Matrix> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Codec("empty matrix text".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Codec(format!("bad dimension {t:?}"))))
            .collect::<Result<_>>()?;
        let [rows, cols] = dims[..] else {
            return Err(Error::Codec(format!("header {header:?} is not `rows cols`")));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for (r, line) in lines.enumerate() {
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Codec(format!("bad value {t:?}"))))
                .collect::<Result<_>>()?;
            if values.len() != cols || r >= rows {
                return Err(Error::Codec(format!("row {r} does not fit a {rows}x{cols} matrix")));
            }
            data.extend(values);
        }
        Matrix::from_vec(rows, cols, data).map_err(|_| Error::Codec(format!("expected {rows} rows")))
    }
}

impl Add for Matrix {
    type Output = Matrix;

    /// Panics on a shape mismatch; use [`Matrix::checked_add`] otherwise.
    fn add(self, other: Matrix) -> Matrix {
        self.checked_add(&other).expect("matrix shapes agree")
    }
}

impl Wire for Matrix {
    fn encode(&self, out: &mut Vec<u8>) {
        self.rows.encode(out);
        self.cols.encode(out);
        for v in &self.data {
            v.encode(out);
        }
    }

    fn decode(input: &mut &[u8]) -> Result<Self> {
        let rows = usize::decode(input)?;
        let cols = usize::decode(input)?;
        let count = rows
            .checked_mul(cols)
            .filter(|c| c.checked_mul(8).is_some_and(|bytes| bytes <= input.len()))
            .ok_or_else(|| Error::Codec(format!("{rows}x{cols} matrix exceeds payload")))?;
        let bytes = take(input, count * 8)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Matrix { rows, cols, data })
    }
}

/// Triple-loop product, summing over `k` in ascending order.
pub fn serial_multiply(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!("cannot multiply {}x{} by {}x{}", a.rows, a.cols, b.rows, b.cols)));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    c.add_product(a, b)?;
    Ok(c)
}

/// Block formulation `C[i][j] = Σ_k A[i][k]·B[k][j]` over a `q×q` split.
///
/// Block products are accumulated into one running sum per entry, which keeps
/// the floating-point summation order of [`serial_multiply`].
pub fn serial_blocked(a: &Matrix, b: &Matrix, q: usize) -> Result<Matrix> {
    if a.rows != a.cols || b.rows != b.cols || a.rows != b.rows {
        return Err(Error::Shape("blocked multiply expects square matrices of equal side".into()));
    }
    let dec = BlockDecomposition::new(a.rows, q)?;
    let side = dec.block_side();
    let mut c = Matrix::zeros(a.rows, a.rows);
    for bi in 0..q {
        for bj in 0..q {
            let mut acc = Matrix::zeros(side, side);
            for bk in 0..q {
                acc.add_product(&a.block(bi, bk, side), &b.block(bk, bj, side))?;
            }
            c.set_block(bi, bj, &acc);
        }
    }
    Ok(c)
}

/// `n×n` matrices split into `q×q` blocks of side `n/q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDecomposition {
    n: usize,
    q: usize,
}

impl BlockDecomposition {
    pub fn new(n: usize, q: usize) -> Result<Self> {
        if q == 0 || n == 0 || !n.is_multiple_of(q) {
            return Err(Error::Decomposition(format!("grid side {q} does not divide matrix side {n}")));
        }
        Ok(BlockDecomposition { n, q })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn block_side(&self) -> usize {
        self.n / self.q
    }

    /// Words per block, `(n/q)²`.
    pub fn block_words(&self) -> usize {
        self.block_side() * self.block_side()
    }
}

/// Which operand a seeded entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    A,
    B,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Entry `(row, col)` of the seeded operand, uniform in `[0, 1)`.
///
/// Depends only on the global position, so every block decomposition of the
/// same seed describes the same matrix.
pub fn seeded_entry(seed: u64, operand: Operand, row: usize, col: usize) -> f64 {
    let tag = match operand {
        Operand::A => 0x41,
        Operand::B => 0x42,
    };
    let mut h = splitmix64(seed ^ tag);
    h = splitmix64(h ^ row as u64);
    h = splitmix64(h ^ col as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// The full seeded `n×n` operand.
pub fn seeded_matrix(seed: u64, operand: Operand, n: usize) -> Matrix {
    let data = (0..n * n).map(|idx| seeded_entry(seed, operand, idx / n, idx % n)).collect();
    Matrix { rows: n, cols: n, data }
}

/// Recipe for one block of a seeded operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LazyBlock {
    pub seed: u64,
    pub operand: Operand,
    pub block_row: usize,
    pub block_col: usize,
    pub side: usize,
}

impl LazyBlock {
    pub fn materialize(&self) -> Matrix {
        let side = self.side;
        let data = (0..side * side)
            .map(|idx| {
                let row = self.block_row * side + idx / side;
                let col = self.block_col * side + idx % side;
                seeded_entry(self.seed, self.operand, row, col)
            })
            .collect();
        Matrix { rows: side, cols: side, data }
    }

    fn counted(self, counter: &Rc<Cell<u64>>) -> impl FnOnce() -> Matrix + 'static {
        let counter = Rc::clone(counter);
        move || {
            counter.set(counter.get() + 1);
            self.materialize()
        }
    }
}

/// Per-rank work performed by one multiplication.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkCounters {
    /// Collective loop iterations this rank stepped through, active or not.
    pub collective_iterations: u64,
    /// Block products computed by this rank's `map_d`.
    pub block_products: u64,
    /// Operand blocks materialized on this rank.
    pub blocks_materialized: u64,
}

/// What one rank holds after a multiplication.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOutcome {
    /// `((i, j), C[i][j])` for every result block owned by this rank.
    pub blocks: Vec<((usize, usize), Matrix)>,
    pub counters: WorkCounters,
}

/// Rank holding `C[i][j]` after either algorithm.
pub fn block_owner(q: usize, i: usize, j: usize) -> RankId {
    RankId((i * q + j) * q)
}

fn check_world(world: &dyn Transport, q: usize) -> Result<()> {
    if q == 0 || q.checked_pow(3) != Some(world.size()) {
        return Err(Error::Topology(format!("{} ranks do not form a q³ grid with q = {q}", world.size())));
    }
    Ok(())
}

/// One block-row × block-column pipeline: `zip → map_d(·) → reduce_d(+)`.
fn multiply_line<'w>(
    a_line: DistSeq<'w, Matrix>,
    b_line: DistSeq<'w, Matrix>,
    products: &mut u64,
) -> Result<Option<Matrix>> {
    let partial = a_line.zip(b_line)?.try_map_d(|(a, b)| {
        *products += 1;
        serial_multiply(&a, &b)
    })?;
    Ok(partial.reduce_d(|x, y| x + y)?.into_value())
}

/// The loop formulation: every rank walks all `q²` `(i, j)` iterations; in
/// iteration `(i, j)` ranks `(i·q+j)·q .. +q` hold `A[i][k]`, `B[k][j]` and
/// reduce their products, all other ranks skip.
pub fn generic_parallel_multiply(world: &dyn Transport, seed: u64, n: usize, q: usize) -> Result<RankOutcome> {
    check_world(world, q)?;
    let side = BlockDecomposition::new(n, q)?.block_side();
    let materialized = Rc::new(Cell::new(0));
    let mut counters = WorkCounters::default();
    let mut blocks = Vec::new();

    for i in 0..q {
        for j in 0..q {
            counters.collective_iterations += 1;
            let base = (i * q + j) * q;
            let group: Vec<RankId> = (base..base + q).map(RankId).collect();
            let a_row = DistSeq::on_group(world, group.clone(), |k| {
                LazyBlock { seed, operand: Operand::A, block_row: i, block_col: k, side }.counted(&materialized)()
            })?;
            let b_col = DistSeq::on_group(world, group, |k| {
                LazyBlock { seed, operand: Operand::B, block_row: k, block_col: j, side }.counted(&materialized)()
            })?;
            if let Some(c) = multiply_line(a_row, b_col, &mut counters.block_products)? {
                blocks.push(((i, j), c));
            }
        }
    }
    counters.blocks_materialized = materialized.get();
    Ok(RankOutcome { blocks, counters })
}

/// The grid formulation: rank `(i, j, k)` multiplies `A[i][k]·B[k][j]` and
/// the products are summed along z onto `(i, j, 0)`. No loop over `(i, j)`.
pub fn grid_parallel_multiply(grid: &Grid3D<'_>, seed: u64, n: usize) -> Result<RankOutcome> {
    let q = grid.side();
    let side = BlockDecomposition::new(n, q)?.block_side();
    let (i, j, k) = grid.coords();
    let materialized = Rc::new(Cell::new(0));
    let mut counters = WorkCounters { collective_iterations: 1, ..Default::default() };

    let a = LazyBlock { seed, operand: Operand::A, block_row: i, block_col: k, side };
    let b = LazyBlock { seed, operand: Operand::B, block_row: k, block_col: j, side };
    let a_line = grid.z_seq(a.counted(&materialized));
    let b_line = grid.z_seq(b.counted(&materialized));
    let blocks = multiply_line(a_line, b_line, &mut counters.block_products)?
        .map(|c| vec![((i, j), c)])
        .unwrap_or_default();
    counters.blocks_materialized = materialized.get();
    Ok(RankOutcome { blocks, counters })
}

const GATHER_TAG: Tag = 0x4741_5448;

/// Collects every `C[i][j]` from its owner onto rank 0 and assembles the
/// `n×n` product there. Other ranks return `None`.
pub fn gather_result(
    world: &dyn Transport,
    dec: BlockDecomposition,
    blocks: &[((usize, usize), Matrix)],
) -> Result<Option<Matrix>> {
    let q = dec.q();
    check_world(world, q)?;
    let comm = Comm::world(world);
    let me = world.rank();
    let local = |i: usize, j: usize| blocks.iter().find(|(at, _)| *at == (i, j)).map(|(_, m)| m);

    let mut assembled = (me == RankId(0)).then(|| Matrix::zeros(dec.n(), dec.n()));
    for i in 0..q {
        for j in 0..q {
            let owner = block_owner(q, i, j);
            let block = if owner == me {
                match &assembled {
                    Some(_) => local(i, j).cloned(),
                    None => {
                        comm.send(RankId(0), GATHER_TAG, &local(i, j).cloned().to_bytes())?;
                        continue;
                    }
                }
            } else if assembled.is_some() {
                Option::<Matrix>::from_bytes(&comm.recv(owner, GATHER_TAG)?)?
            } else {
                continue;
            };
            let block = block.ok_or_else(|| Error::Assembly(format!("block ({i}, {j}) missing on rank {owner}")))?;
            if block.rows() != dec.block_side() || block.cols() != dec.block_side() {
                return Err(Error::Assembly(format!("block ({i}, {j}) has the wrong shape")));
            }
            if let Some(c) = assembled.as_mut() {
                c.set_block(i, j, &block);
            }
        }
    }
    Ok(assembled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Generic,
    Grid,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Generic => "generic",
            Algorithm::Grid => "grid",
        }
    }
}

/// One rank's share of a complete multiplication.
#[derive(Debug, Clone, PartialEq)]
pub struct RankResult {
    pub outcome: RankOutcome,
    /// Traffic of the algorithm itself, excluding the final gather.
    pub algorithm_stats: CommStats,
    /// The assembled product, on rank 0 only.
    pub product: Option<Matrix>,
}

/// Runs `algorithm` on the calling rank and gathers the product on rank 0.
pub fn multiply_on(world: &dyn Transport, algorithm: Algorithm, seed: u64, n: usize, q: usize) -> Result<RankResult> {
    let dec = BlockDecomposition::new(n, q)?;
    check_world(world, q)?;
    let before = world.stats();
    let outcome = match algorithm {
        Algorithm::Generic => generic_parallel_multiply(world, seed, n, q)?,
        Algorithm::Grid => grid_parallel_multiply(&Grid3D::new(world, q)?, seed, n)?,
    };
    let algorithm_stats = world.stats().since(&before);
    let product = gather_result(world, dec, &outcome.blocks)?;
    Ok(RankResult { outcome, algorithm_stats, product })
}

/// Result of an in-process multiplication across all `q³` ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct MatmulRun {
    pub product: Matrix,
    /// Per-rank traffic of the algorithm, excluding the gather.
    pub stats: Vec<CommStats>,
    pub counters: Vec<WorkCounters>,
}

impl MatmulRun {
    pub fn total_stats(&self) -> CommStats {
        CommStats::aggregate(&self.stats)
    }
}

/// Runs `algorithm` on a fresh in-process world of `q³` ranks.
pub fn run_inproc(algorithm: Algorithm, seed: u64, n: usize, q: usize) -> Result<MatmulRun> {
    BlockDecomposition::new(n, q)?;
    let run = run_spmd(q.pow(3), |ep| multiply_on(ep, algorithm, seed, n, q));
    let mut product = None;
    let mut stats = Vec::with_capacity(run.results.len());
    let mut counters = Vec::with_capacity(run.results.len());
    for result in run.results {
        let result = result?;
        stats.push(result.algorithm_stats);
        counters.push(result.outcome.counters);
        product = product.or(result.product);
    }
    let product = product.ok_or_else(|| Error::Assembly("rank 0 produced no matrix".into()))?;
    Ok(MatmulRun { product, stats, counters })
}
