//! A fixed SPMD program exercising every collective plus one multiplication
//! per algorithm, reporting one line per (check, rank).
//!
//! The program is deterministic, so running it on different backends must
//! produce identical lines; the socket backend is validated that way.

use std::fmt;
use std::str::FromStr;

use crate::costmodel::cube_side;
use crate::error::{Error, Result};
use crate::matmul::{multiply_on, seeded_entry, Algorithm, Operand};
use crate::transport::{Comm, CommStats, RankId, Transport};
use crate::wire::Wire;

/// Outcome of one check on one rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckLine {
    pub check: String,
    pub rank: usize,
    /// Traffic caused by this check on this rank.
    pub stats: CommStats,
    /// Bytes the rank ended up with (empty where a rank receives nothing).
    pub result: Vec<u8>,
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "check={} rank={} messages={} bytes={} rounds={} result={}",
            self.check,
            self.rank,
            self.stats.messages_sent,
            self.stats.bytes_sent,
            self.stats.rounds,
            hex::encode(&self.result)
        )
    }
}

impl FromStr for CheckLine {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for token in line.split_whitespace() {
            let (k, v) = token.split_once('=').ok_or_else(|| Error::Codec(format!("bad field {token:?}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::Codec(format!("missing field {k}")));
        let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| Error::Codec(format!("field {k} is not a number"))) };
        Ok(CheckLine {
            check: get("check")?.to_owned(),
            rank: num("rank")? as usize,
            stats: CommStats { messages_sent: num("messages")?, bytes_sent: num("bytes")?, rounds: num("rounds")? },
            result: hex::decode(get("result")?).map_err(|e| Error::Codec(e.to_string()))?,
        })
    }
}

fn payload(seed: u64, rank: usize, words: usize) -> Vec<u8> {
    (0..words).map(|w| seeded_entry(seed, Operand::A, rank, w)).collect::<Vec<f64>>().to_bytes()
}

fn measured(t: &dyn Transport, check: &str, body: impl FnOnce() -> Result<Vec<u8>>) -> Result<CheckLine> {
    let before = t.stats();
    let result = body()?;
    Ok(CheckLine { check: check.to_owned(), rank: t.rank().0, stats: t.stats().since(&before), result })
}

/// Runs the suite on the calling rank. When the world size is a cube `q³`
/// both multiplication algorithms run with `n = 2q`.
pub fn run_suite(t: &dyn Transport, seed: u64) -> Result<Vec<CheckLine>> {
    let comm = Comm::world(t);
    let me = t.rank().0;
    let mut lines = Vec::new();

    lines.push(measured(t, "broadcast", || {
        comm.broadcast(RankId(0), (me == 0).then(|| payload(seed, 0, 8)))
    })?);
    lines.push(measured(t, "reduce", || {
        let reduced = comm.reduce(RankId(0), (me as u64).to_bytes(), |a, b| {
            Ok((u64::from_bytes(&a)? + u64::from_bytes(&b)?).to_bytes())
        })?;
        Ok(reduced.unwrap_or_default())
    })?);
    lines.push(measured(t, "allgather", || Ok(comm.all_gather(payload(seed, me, 2))?.to_bytes()))?);
    lines.push(measured(t, "shift", || comm.circular_shift(1, payload(seed, me, 1)))?);

    if let Ok(q) = cube_side(t.size()) {
        for algorithm in [Algorithm::Generic, Algorithm::Grid] {
            let result = multiply_on(t, algorithm, seed, 2 * q, q)?;
            lines.push(CheckLine {
                check: format!("matmul-{}", algorithm.name()),
                rank: me,
                stats: result.algorithm_stats,
                result: result.product.map(|m| m.to_bytes()).unwrap_or_default(),
            });
        }
    }
    Ok(lines)
}

/// World totals of one check across the lines of all ranks.
pub fn aggregate(lines: &[CheckLine], check: &str) -> CommStats {
    CommStats::aggregate(lines.iter().filter(|l| l.check == check).map(|l| &l.stats))
}
