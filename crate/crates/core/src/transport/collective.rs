use std::cell::Cell;
use std::time::Duration;

use super::{RankId, Tag, Transport, COLLECTIVE_TAG_BIT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
#[repr(u32)]
enum Kind {
    Broadcast = 1,
    Reduce = 2,
    AllGather = 3,
    Shift = 4,
    Barrier = 5,
}

/// Number of doubling steps needed to cover `p` ranks.
pub(crate) fn ceil_log2(p: usize) -> u32 {
    if p <= 1 {
        0
    } else {
        usize::BITS - (p - 1).leading_zeros()
    }
}

fn fnv1a(words: impl IntoIterator<Item = u64>) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= u32::from(b);
            h = h.wrapping_mul(0x0100_0193);
        }
    }
    h
}

/// A communication group: an ordered subset of the world's ranks with
/// group-local ranks `0..members.len()`.
///
/// Every collective must be entered by all members in the same order with the
/// same arguments. Each call is stamped with a per-group instance counter and
/// a digest of its root/offset; both go into the message tag, so members that
/// disagree block instead of exchanging each other's data.
pub struct Comm<'t> {
    transport: &'t dyn Transport,
    members: Vec<RankId>,
    local: usize,
    context: u32,
    instance: Cell<u32>,
}

impl<'t> Comm<'t> {
    /// The group of all ranks, in world order.
    pub fn world(transport: &'t dyn Transport) -> Comm<'t> {
        let members = (0..transport.size()).map(RankId).collect();
        Comm::build(transport, members, transport.rank().0)
    }

    /// Derives a sub-group without communicating. `members` lists world ranks;
    /// position in the list becomes the group-local rank. Returns `None` on
    /// ranks that are not members.
    pub fn subgroup(transport: &'t dyn Transport, members: &[RankId]) -> Result<Option<Comm<'t>>> {
        let size = transport.size();
        for (i, m) in members.iter().enumerate() {
            if m.0 >= size {
                return Err(Error::Topology(format!("group member {m} outside world of size {size}")));
            }
            if members[..i].contains(m) {
                return Err(Error::Topology(format!("rank {m} listed twice in group")));
            }
        }
        let me = transport.rank();
        Ok(members
            .iter()
            .position(|&m| m == me)
            .map(|local| Comm::build(transport, members.to_vec(), local)))
    }

    fn build(transport: &'t dyn Transport, members: Vec<RankId>, local: usize) -> Comm<'t> {
        let context = fnv1a(members.iter().map(|m| m.0 as u64));
        Comm { transport, members, local, context, instance: Cell::new(0) }
    }

    /// Group-local rank of the caller.
    pub fn rank(&self) -> RankId {
        RankId(self.local)
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[RankId] {
        &self.members
    }

    /// World rank of group-local rank `local`.
    pub fn world_rank(&self, local: RankId) -> RankId {
        self.members[local.0]
    }

    pub fn transport(&self) -> &'t dyn Transport {
        self.transport
    }

    fn check_local(&self, r: RankId) -> Result<()> {
        if r.0 >= self.size() {
            return Err(Error::Topology(format!("rank {r} out of range for group of size {}", self.size())));
        }
        Ok(())
    }

    fn check_user_tag(tag: Tag) -> Result<()> {
        if tag & COLLECTIVE_TAG_BIT != 0 {
            return Err(Error::Contract(format!("tag {tag:#x} is reserved for collectives")));
        }
        Ok(())
    }

    /// Point-to-point send to group-local rank `dest`.
    pub fn send(&self, dest: RankId, tag: Tag, payload: &[u8]) -> Result<()> {
        Self::check_user_tag(tag)?;
        self.check_local(dest)?;
        self.transport.send(self.world_rank(dest), tag, payload)
    }

    /// Point-to-point receive from group-local rank `source`.
    pub fn recv(&self, source: RankId, tag: Tag) -> Result<Vec<u8>> {
        Self::check_user_tag(tag)?;
        self.check_local(source)?;
        self.transport.recv(self.world_rank(source), tag)
    }

    pub fn recv_timeout(&self, source: RankId, tag: Tag, timeout: Duration) -> Result<Option<Vec<u8>>> {
        Self::check_user_tag(tag)?;
        self.check_local(source)?;
        self.transport.recv_timeout(self.world_rank(source), tag, timeout)
    }

    fn next_tag(&self, kind: Kind, param: u64) -> Tag {
        let instance = self.instance.get();
        self.instance.set(instance.wrapping_add(1));
        let digest = (self.context ^ fnv1a([param])) & 0xff;
        COLLECTIVE_TAG_BIT | ((kind as u32) << 28) | (digest << 20) | (instance & 0x000f_ffff)
    }

    fn send_raw(&self, dest: usize, tag: Tag, payload: &[u8]) -> Result<()> {
        self.transport.send(self.members[dest], tag, payload)
    }

    fn recv_raw(&self, source: usize, tag: Tag) -> Result<Vec<u8>> {
        self.transport.recv(self.members[source], tag)
    }

    /// One-to-all broadcast by recursive doubling.
    ///
    /// The root passes `Some(payload)`, everyone else `None`; every member
    /// returns the root's payload. `p - 1` messages, `ceil(log2 p)` rounds.
    pub fn broadcast(&self, root: RankId, payload: Option<Vec<u8>>) -> Result<Vec<u8>> {
        self.check_local(root)?;
        let tag = self.next_tag(Kind::Broadcast, root.0 as u64);
        let p = self.size();
        let vrank = (self.local + p - root.0) % p;
        let to_real = |v: usize| (v + root.0) % p;

        let mut data = if vrank == 0 {
            Some(payload.ok_or_else(|| Error::Contract("broadcast root supplied no payload".into()))?)
        } else {
            None
        };
        let mut rounds = 0u64;
        for round in 0..ceil_log2(p) {
            let span = 1usize << round;
            if vrank < span {
                let partner = vrank + span;
                if partner < p {
                    let bytes = data.as_deref().expect("holder has the payload");
                    self.send_raw(to_real(partner), tag, bytes)?;
                    rounds = u64::from(round) + 1;
                }
            } else if vrank < 2 * span {
                data = Some(self.recv_raw(to_real(vrank - span), tag)?);
                rounds = u64::from(round) + 1;
            }
        }
        self.transport.record_rounds(rounds);
        Ok(data.expect("every rank is reached within ceil(log2 p) rounds"))
    }

    /// All-to-one reduction along a binomial tree.
    ///
    /// Partial results are combined in group order starting at `root`
    /// (`combine(lower, higher)`), so the root receives the left fold of
    /// `local` values over ranks `root, root+1, .., p-1, 0, .., root-1`. With
    /// root 0 that is plain rank order and only associativity is required.
    /// Non-roots return `None`. `p - 1` messages, `ceil(log2 p)` rounds.
    pub fn reduce<F>(&self, root: RankId, local: Vec<u8>, mut combine: F) -> Result<Option<Vec<u8>>>
    where
        F: FnMut(Vec<u8>, Vec<u8>) -> Result<Vec<u8>>,
    {
        self.check_local(root)?;
        let tag = self.next_tag(Kind::Reduce, root.0 as u64);
        let p = self.size();
        let vrank = (self.local + p - root.0) % p;
        let to_real = |v: usize| (v + root.0) % p;

        let mut acc = local;
        let mut rounds = 0u64;
        for round in 0..ceil_log2(p) {
            let span = 1usize << round;
            if vrank & span != 0 {
                self.send_raw(to_real(vrank - span), tag, &acc)?;
                self.transport.record_rounds(u64::from(round) + 1);
                return Ok(None);
            }
            let partner = vrank + span;
            if partner < p {
                let theirs = self.recv_raw(to_real(partner), tag)?;
                acc = combine(acc, theirs)?;
                rounds = u64::from(round) + 1;
            }
        }
        self.transport.record_rounds(rounds);
        Ok(Some(acc))
    }

    /// All-to-all broadcast on a ring: element `i` of the result is rank `i`'s
    /// payload. Each rank sends `p - 1` messages over `p - 1` rounds.
    pub fn all_gather(&self, local: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        let tag = self.next_tag(Kind::AllGather, 0);
        let p = self.size();
        let me = self.local;
        let right = (me + 1) % p;
        let left = (me + p - 1) % p;

        let mut out = vec![Vec::new(); p];
        out[me] = local;
        let mut current = me;
        for _ in 1..p {
            self.send_raw(right, tag, &out[current])?;
            let incoming = (current + p - 1) % p;
            out[incoming] = self.recv_raw(left, tag)?;
            current = incoming;
        }
        self.transport.record_rounds(p as u64 - 1);
        Ok(out)
    }

    /// Rank `r` receives the payload of rank `(r - offset) mod p`. One message
    /// per rank in a single round, nothing when `offset ≡ 0 (mod p)`.
    pub fn circular_shift(&self, offset: i64, local: Vec<u8>) -> Result<Vec<u8>> {
        let p = self.size() as i64;
        let shift = offset.rem_euclid(p) as usize;
        let tag = self.next_tag(Kind::Shift, shift as u64);
        if shift == 0 {
            return Ok(local);
        }
        let p = self.size();
        self.send_raw((self.local + shift) % p, tag, &local)?;
        let got = self.recv_raw((self.local + p - shift) % p, tag)?;
        self.transport.record_rounds(1);
        Ok(got)
    }

    /// Blocks until every member has entered the barrier.
    pub fn barrier(&self) -> Result<()> {
        let tag = self.next_tag(Kind::Barrier, 0);
        let p = self.size();
        let me = self.local;
        // dissemination: in round r, signal me + 2^r and wait for me - 2^r
        let mut rounds = 0u64;
        for round in 0..ceil_log2(p) {
            let span = 1usize << round;
            self.send_raw((me + span) % p, tag, &[])?;
            self.recv_raw((me + p - span) % p, tag)?;
            rounds += 1;
        }
        self.transport.record_rounds(rounds);
        Ok(())
    }
}
