//! In-process world: every rank is a thread, messages move through shared
//! FIFO mailboxes.

use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::{check_dest, check_source, CommStats, Mailbox, RankId, StatsCounter, Tag, Transport};
use crate::error::Result;

struct Shared {
    mailboxes: Vec<Mailbox>,
    stats: Vec<StatsCounter>,
}

/// Handle on an in-process world, used to shut it down or read its counters.
#[derive(Clone)]
pub struct InProcWorld {
    shared: Arc<Shared>,
}

impl InProcWorld {
    /// Creates a world of `size` ranks and returns exactly one endpoint per rank.
    pub fn new(size: usize) -> (InProcWorld, Vec<InProcEndpoint>) {
        let shared = Arc::new(Shared {
            mailboxes: (0..size).map(|_| Mailbox::default()).collect(),
            stats: (0..size).map(|_| StatsCounter::default()).collect(),
        });
        let endpoints = (0..size)
            .map(|rank| InProcEndpoint { rank: RankId(rank), shared: Arc::clone(&shared) })
            .collect();
        (InProcWorld { shared }, endpoints)
    }

    pub fn size(&self) -> usize {
        self.shared.mailboxes.len()
    }

    /// Wakes every blocked receive with a transport error; later sends fail too.
    pub fn shutdown(&self) {
        for mb in &self.shared.mailboxes {
            mb.close();
        }
    }

    pub fn stats(&self) -> Vec<CommStats> {
        self.shared.stats.iter().map(StatsCounter::snapshot).collect()
    }
}

pub struct InProcEndpoint {
    rank: RankId,
    shared: Arc<Shared>,
}

impl Transport for InProcEndpoint {
    fn rank(&self) -> RankId {
        self.rank
    }

    fn size(&self) -> usize {
        self.shared.mailboxes.len()
    }

    fn send(&self, dest: RankId, tag: Tag, payload: &[u8]) -> Result<()> {
        check_dest(self.rank, dest, self.size())?;
        self.shared.mailboxes[dest.0].deliver(self.rank.0, tag, payload.to_vec())?;
        self.shared.stats[self.rank.0].record_send(payload.len());
        Ok(())
    }

    fn recv(&self, source: RankId, tag: Tag) -> Result<Vec<u8>> {
        check_source(source, self.size())?;
        let payload = self.shared.mailboxes[self.rank.0].take(source.0, tag, None)?;
        Ok(payload.expect("blocking take returns a payload"))
    }

    fn recv_timeout(
        &self,
        source: RankId,
        tag: Tag,
        timeout: Duration,
    ) -> Result<Option<Vec<u8>>> {
        check_source(source, self.size())?;
        let deadline = Instant::now() + timeout;
        self.shared.mailboxes[self.rank.0].take(source.0, tag, Some(deadline))
    }

    fn stats(&self) -> CommStats {
        self.shared.stats[self.rank.0].snapshot()
    }

    fn record_rounds(&self, rounds: u64) {
        self.shared.stats[self.rank.0].record_rounds(rounds);
    }
}

/// Per-rank results and final counters of an SPMD run.
#[derive(Debug, Clone)]
pub struct SpmdRun<R> {
    pub results: Vec<R>,
    pub stats: Vec<CommStats>,
}

impl<R> SpmdRun<R> {
    pub fn total_stats(&self) -> CommStats {
        CommStats::aggregate(&self.stats)
    }
}

/// Runs `program` once per rank on a fresh in-process world of `size` ranks
/// and joins all of them.
///
/// If one rank panics the world is shut down so the others fail instead of
/// blocking forever, and the first panic is re-raised.
pub fn run_spmd<R, F>(size: usize, program: F) -> SpmdRun<R>
where
    R: Send,
    F: Fn(&InProcEndpoint) -> R + Sync,
{
    let (world, endpoints) = InProcWorld::new(size);
    let outcomes: Vec<thread::Result<R>> = thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .map(|ep| {
                let world = world.clone();
                let program = &program;
                scope.spawn(move || {
                    let out = panic::catch_unwind(AssertUnwindSafe(|| program(&ep)));
                    if out.is_err() {
                        world.shutdown();
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().and_then(|r| r)).collect()
    });

    let stats = world.stats();
    let mut results = Vec::with_capacity(size);
    for outcome in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(payload) => panic::resume_unwind(payload),
        }
    }
    SpmdRun { results, stats }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn loopback_pair() {
        let run = run_spmd(2, |ep| {
            if ep.rank() == RankId(0) {
                ep.send(RankId(1), 7, &[1, 2, 3]).unwrap();
                None
            } else {
                Some(ep.recv(RankId(0), 7).unwrap())
            }
        });
        assert_eq!(run.results[1], Some(vec![1, 2, 3]));
        assert_eq!(run.stats[0].messages_sent, 1);
        assert_eq!(run.stats[0].bytes_sent, 3);
    }

    #[test]
    fn out_of_range_destination_is_a_topology_error() {
        let (_world, eps) = InProcWorld::new(3);
        assert!(matches!(eps[0].send(RankId(3), 0, &[]), Err(Error::Topology(_))));
        assert!(matches!(eps[0].send(RankId(0), 0, &[]), Err(Error::Topology(_))));
    }

    #[test]
    fn wrong_tag_never_matches() {
        let (_world, eps) = InProcWorld::new(2);
        eps[0].send(RankId(1), 1, b"x").unwrap();
        let got = eps[1].recv_timeout(RankId(0), 2, Duration::from_millis(50)).unwrap();
        assert_eq!(got, None);
        assert_eq!(eps[1].recv(RankId(0), 1).unwrap(), b"x");
    }

    #[test]
    fn shutdown_wakes_blocked_receivers() {
        let (world, mut eps) = InProcWorld::new(2);
        let ep1 = eps.pop().unwrap();
        let waiter = thread::spawn(move || ep1.recv(RankId(0), 0));
        thread::sleep(Duration::from_millis(20));
        world.shutdown();
        assert!(matches!(waiter.join().unwrap(), Err(Error::Transport(_))));
        assert!(matches!(eps[0].send(RankId(1), 0, &[]), Err(Error::Transport(_))));
    }

    #[test]
    #[should_panic(expected = "rank 1 failed")]
    fn panicking_rank_does_not_hang_the_world() {
        run_spmd(2, |ep| {
            if ep.rank() == RankId(1) {
                panic!("rank 1 failed");
            }
            // rank 0 waits for a message that never comes
            let _ = ep.recv(RankId(1), 0);
        });
    }
}
