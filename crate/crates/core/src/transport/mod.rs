//! Point-to-point message transport and the collectives layered on top of it.
//!
//! A [`Transport`] is one rank's endpoint into a world of `p` ranks. Two
//! backends exist: [`inproc`] runs every rank as a thread of one process and is
//! what the test-suite uses, [`socket`] runs one OS process per rank over TCP.
//! Collectives ([`Comm`]) only ever talk to the trait, so both backends run the
//! same code.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

mod collective;
pub mod inproc;
pub mod socket;

pub use collective::Comm;
pub use inproc::{run_spmd, InProcEndpoint, InProcWorld, SpmdRun};
pub use socket::{read_peers_file, Frame, SocketEndpoint, FRAME_HEADER_LEN};

/// Identity of a process within a world (or, inside a [`Comm`], within a group).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RankId(pub usize);

impl RankId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for RankId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<usize> for RankId {
    fn from(value: usize) -> Self {
        RankId(value)
    }
}

/// Message tag. Tags with the high bit set are reserved for collectives.
pub type Tag = u32;

pub(crate) const COLLECTIVE_TAG_BIT: Tag = 0x8000_0000;

/// Communication counters of one rank.
///
/// `rounds` accumulates, per collective call, the number of sequential
/// communication steps this rank took part in. Aggregated over a world it is
/// the maximum over ranks (see [`CommStats::aggregate`]).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CommStats {
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub rounds: u64,
}

impl CommStats {
    /// Counter growth since `earlier`.
    pub fn since(&self, earlier: &CommStats) -> CommStats {
        CommStats {
            messages_sent: self.messages_sent - earlier.messages_sent,
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            rounds: self.rounds - earlier.rounds,
        }
    }

    /// World totals: messages and bytes are summed, rounds is the max over ranks.
    pub fn aggregate<'a>(per_rank: impl IntoIterator<Item = &'a CommStats>) -> CommStats {
        per_rank.into_iter().fold(CommStats::default(), |acc, s| CommStats {
            messages_sent: acc.messages_sent + s.messages_sent,
            bytes_sent: acc.bytes_sent + s.bytes_sent,
            rounds: acc.rounds.max(s.rounds),
        })
    }
}

#[derive(Debug, Default)]
pub(crate) struct StatsCounter {
    messages: AtomicU64,
    bytes: AtomicU64,
    rounds: AtomicU64,
}

impl StatsCounter {
    pub(crate) fn record_send(&self, payload_len: usize) {
        self.messages.fetch_add(1, Ordering::Relaxed);
        self.bytes.fetch_add(payload_len as u64, Ordering::Relaxed);
    }

    pub(crate) fn record_rounds(&self, rounds: u64) {
        self.rounds.fetch_add(rounds, Ordering::Relaxed);
    }

    pub(crate) fn snapshot(&self) -> CommStats {
        CommStats {
            messages_sent: self.messages.load(Ordering::Relaxed),
            bytes_sent: self.bytes.load(Ordering::Relaxed),
            rounds: self.rounds.load(Ordering::Relaxed),
        }
    }
}

/// One rank's view of a message-passing world.
///
/// Sends are buffered: they never wait for the matching receive. Messages
/// between a (source, dest, tag) triple are delivered exactly once and in
/// order; receives select by source and tag, not by arrival order.
pub trait Transport: Send {
    fn rank(&self) -> RankId;

    fn size(&self) -> usize;

    fn send(&self, dest: RankId, tag: Tag, payload: &[u8]) -> Result<()>;

    /// Blocks until a message from `source` with `tag` is available.
    fn recv(&self, source: RankId, tag: Tag) -> Result<Vec<u8>>;

    /// Like [`Transport::recv`] but gives up after `timeout`, returning `None`.
    fn recv_timeout(&self, source: RankId, tag: Tag, timeout: Duration)
        -> Result<Option<Vec<u8>>>;

    fn stats(&self) -> CommStats;

    /// Adds `rounds` sequential communication steps to this rank's counters.
    fn record_rounds(&self, rounds: u64);
}

pub(crate) fn check_dest(me: RankId, dest: RankId, size: usize) -> Result<()> {
    if dest.0 >= size {
        return Err(Error::Topology(format!(
            "rank {dest} out of range for world of size {size}"
        )));
    }
    if dest == me {
        return Err(Error::Topology(format!("rank {me} cannot send to itself")));
    }
    Ok(())
}

pub(crate) fn check_source(source: RankId, size: usize) -> Result<()> {
    if source.0 >= size {
        return Err(Error::Topology(format!(
            "rank {source} out of range for world of size {size}"
        )));
    }
    Ok(())
}

#[derive(Default)]
struct MailboxState {
    queues: HashMap<(usize, Tag), VecDeque<Vec<u8>>>,
    disconnected: HashSet<usize>,
    closed: bool,
}

/// Incoming message store of one rank, keyed by (source, tag).
#[derive(Default)]
pub(crate) struct Mailbox {
    state: Mutex<MailboxState>,
    arrived: Condvar,
}

impl Mailbox {
    pub(crate) fn deliver(&self, source: usize, tag: Tag, payload: Vec<u8>) -> Result<()> {
        let mut state = self.state.lock().unwrap();
        if state.closed {
            return Err(Error::Transport("world has been shut down".into()));
        }
        state.queues.entry((source, tag)).or_default().push_back(payload);
        drop(state);
        self.arrived.notify_all();
        Ok(())
    }

    /// Marks `source` as gone; receives from it fail once its queue drains.
    pub(crate) fn disconnect(&self, source: usize) {
        self.state.lock().unwrap().disconnected.insert(source);
        self.arrived.notify_all();
    }

    pub(crate) fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.arrived.notify_all();
    }

    pub(crate) fn take(
        &self,
        source: usize,
        tag: Tag,
        deadline: Option<Instant>,
    ) -> Result<Option<Vec<u8>>> {
        let mut state = self.state.lock().unwrap();
        loop {
            if state.closed {
                return Err(Error::Transport("world has been shut down".into()));
            }
            if let Some(queue) = state.queues.get_mut(&(source, tag)) {
                if let Some(payload) = queue.pop_front() {
                    if queue.is_empty() {
                        state.queues.remove(&(source, tag));
                    }
                    return Ok(Some(payload));
                }
            }
            if state.disconnected.contains(&source) {
                return Err(Error::Transport(format!(
                    "rank {source} disconnected before sending tag {tag:#x}"
                )));
            }
            state = match deadline {
                None => self.arrived.wait(state).unwrap(),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return Ok(None);
                    }
                    self.arrived.wait_timeout(state, deadline - now).unwrap().0
                }
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_sums_traffic_and_maxes_rounds() {
        let per_rank = [
            CommStats { messages_sent: 2, bytes_sent: 16, rounds: 3 },
            CommStats { messages_sent: 1, bytes_sent: 8, rounds: 1 },
        ];
        let total = CommStats::aggregate(&per_rank);
        assert_eq!(total, CommStats { messages_sent: 3, bytes_sent: 24, rounds: 3 });
    }

    #[test]
    fn mailbox_matches_on_source_and_tag() {
        let mb = Mailbox::default();
        mb.deliver(1, 1, vec![1]).unwrap();
        mb.deliver(1, 2, vec![2]).unwrap();
        assert_eq!(mb.take(1, 2, None).unwrap(), Some(vec![2]));
        assert_eq!(mb.take(1, 1, None).unwrap(), Some(vec![1]));
        let deadline = Instant::now() + Duration::from_millis(10);
        assert_eq!(mb.take(0, 1, Some(deadline)).unwrap(), None);
    }

    #[test]
    fn closed_mailbox_fails_receivers() {
        let mb = Mailbox::default();
        mb.close();
        assert!(matches!(mb.take(0, 0, None), Err(Error::Transport(_))));
    }
}
