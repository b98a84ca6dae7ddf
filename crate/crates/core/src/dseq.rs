//! Distributed sequences: a static process-data mapping over a communication
//! group.
//!
//! Every rank runs the same program and therefore builds the same logical
//! sequence, but only the owner of element `i` (`group[i]`) ever holds or
//! evaluates it. Operations return `Option`-shaped results: owners get a
//! value, everyone else gets `None` and performs no work.

use std::cell::{Cell, OnceCell};
use std::fmt;
use std::ops::RangeInclusive;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::transport::{Comm, RankId, Transport};
use crate::wire::Wire;

/// A value computed on first access, at most once.
pub struct Lazy<'a, T> {
    value: OnceCell<T>,
    init: Cell<Option<Box<dyn FnOnce() -> T + 'a>>>,
}

impl<'a, T> Lazy<'a, T> {
    pub fn new(init: impl FnOnce() -> T + 'a) -> Self {
        Lazy { value: OnceCell::new(), init: Cell::new(Some(Box::new(init))) }
    }

    pub fn ready(value: T) -> Self {
        Lazy { value: OnceCell::from(value), init: Cell::new(None) }
    }

    pub fn force(&self) -> &T {
        self.value.get_or_init(|| {
            let init = self.init.take().expect("lazy initializer re-entered");
            init()
        })
    }

    pub fn is_evaluated(&self) -> bool {
        self.value.get().is_some()
    }

    pub fn into_value(self) -> T {
        self.force();
        self.value.into_inner().expect("forced above")
    }

    /// Defers `f` until the result is forced.
    pub fn map<U>(self, f: impl FnOnce(T) -> U + 'a) -> Lazy<'a, U>
    where
        T: 'a,
    {
        Lazy::new(move || f(self.into_value()))
    }
}

impl<T: fmt::Debug> fmt::Debug for Lazy<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value.get() {
            Some(v) => f.debug_tuple("Lazy").field(v).finish(),
            None => f.write_str("Lazy(<pending>)"),
        }
    }
}

/// A value living on exactly one rank.
#[derive(Debug, Clone, PartialEq)]
pub struct DistSingleton<T> {
    pub owner: RankId,
    pub value: Option<T>,
}

impl<T> DistSingleton<T> {
    pub fn into_value(self) -> Option<T> {
        self.value
    }
}

/// A distributed sequence. Element `i` is owned by world rank `group[i]`.
///
/// When the sequence is longer than the world only the first `p` elements
/// have owners; collectives touching the others fail with
/// [`Error::Unowned`].
pub struct DistSeq<'w, T> {
    world: &'w dyn Transport,
    group: Arc<[RankId]>,
    len: usize,
    comm: Option<Comm<'w>>,
    local: Option<Lazy<'w, T>>,
}

fn default_group(world: &dyn Transport, len: usize) -> Vec<RankId> {
    (0..len.min(world.size())).map(RankId).collect()
}

impl<'w> DistSeq<'w, i64> {
    /// The inclusive integer range `range`, one element per rank starting at
    /// rank 0.
    pub fn from_range(world: &'w dyn Transport, range: RangeInclusive<i64>) -> DistSeq<'w, i64> {
        let (lo, hi) = range.into_inner();
        let len = if hi < lo { 0 } else { (hi - lo + 1) as usize };
        DistSeq::generate(world, len, move |i| lo + i as i64)
    }
}

impl<'w, T> DistSeq<'w, T> {
    /// A sequence of `len` elements on the default group (ranks
    /// `0..min(len, p)`). Only the owning rank creates its element, lazily.
    pub fn generate(world: &'w dyn Transport, len: usize, element: impl FnOnce(usize) -> T + 'w) -> Self {
        let group = default_group(world, len);
        Self::assemble(world, group, len, element)
    }

    /// A sequence over an explicit group, element `i` owned by `group[i]`.
    pub fn on_group(
        world: &'w dyn Transport,
        group: Vec<RankId>,
        element: impl FnOnce(usize) -> T + 'w,
    ) -> Result<Self> {
        let len = group.len();
        // validates the group even on non-members
        Comm::subgroup(world, &group)?;
        Ok(Self::assemble(world, group, len, element))
    }

    fn assemble(
        world: &'w dyn Transport,
        group: Vec<RankId>,
        len: usize,
        element: impl FnOnce(usize) -> T + 'w,
    ) -> Self {
        let comm = Comm::subgroup(world, &group).expect("group validated by caller");
        let local = comm.as_ref().map(|c| {
            let index = c.rank().0;
            Lazy::new(move || element(index))
        });
        DistSeq { world, group: group.into(), len, comm, local }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// World ranks owning elements `0..group().len()`.
    pub fn group(&self) -> &[RankId] {
        &self.group
    }

    pub fn owner(&self, index: usize) -> Option<RankId> {
        self.group.get(index).copied()
    }

    pub fn world(&self) -> &'w dyn Transport {
        self.world
    }

    /// The element index held by the calling rank, if any.
    pub fn local_index(&self) -> Option<usize> {
        self.comm.as_ref().map(|c| c.rank().0)
    }

    pub fn is_member(&self) -> bool {
        self.comm.is_some()
    }

    /// Evaluates (if needed) and borrows the caller's element.
    pub fn local_value(&self) -> Option<&T> {
        self.local.as_ref().map(Lazy::force)
    }

    /// Whether the caller's element has been evaluated. `false` on non-owners.
    pub fn is_materialized(&self) -> bool {
        self.local.as_ref().is_some_and(Lazy::is_evaluated)
    }

    pub fn into_local(self) -> Option<T> {
        self.local.map(Lazy::into_value)
    }

    /// Applies `f` to the caller's element; non-owners do nothing. Never
    /// communicates.
    pub fn map_d<U>(self, f: impl FnOnce(T) -> U) -> DistSeq<'w, U> {
        let DistSeq { world, group, len, comm, local } = self;
        let local = local.map(|lazy| Lazy::ready(f(lazy.into_value())));
        DistSeq { world, group, len, comm, local }
    }

    /// [`DistSeq::map_d`] with a fallible element function. A failure only
    /// surfaces on the rank whose element failed.
    pub fn try_map_d<U, E>(self, f: impl FnOnce(T) -> Result<U, E>) -> Result<DistSeq<'w, U>, E> {
        let DistSeq { world, group, len, comm, local } = self;
        let local = match local {
            Some(lazy) => Some(Lazy::ready(f(lazy.into_value())?)),
            None => None,
        };
        Ok(DistSeq { world, group, len, comm, local })
    }

    /// Pairs two identically distributed sequences. Neither communicates nor
    /// evaluates anything; the pair is forced when first used.
    pub fn zip<U>(self, other: DistSeq<'w, U>) -> Result<DistSeq<'w, (T, U)>>
    where
        T: 'w,
        U: 'w,
    {
        if self.len != other.len {
            return Err(Error::Shape(format!("zip of lengths {} and {}", self.len, other.len)));
        }
        if self.group != other.group {
            return Err(Error::Alignment);
        }
        let DistSeq { world, group, len, comm, local } = self;
        let local = match (local, other.local) {
            (Some(a), Some(b)) => Some(Lazy::new(move || (a.into_value(), b.into_value()))),
            (None, None) => None,
            _ => unreachable!("identical groups give identical ownership"),
        };
        Ok(DistSeq { world, group, len, comm, local })
    }

    /// `zip` followed by `map_d`.
    pub fn zip_with<U, V>(self, other: DistSeq<'w, U>, f: impl FnOnce(T, U) -> V) -> Result<DistSeq<'w, V>>
    where
        T: 'w,
        U: 'w,
    {
        Ok(self.zip(other)?.map_d(|(a, b)| f(a, b)))
    }

    fn require_owned(&self, index: usize) -> Result<()> {
        if index >= self.group.len() {
            return Err(Error::Unowned { index });
        }
        Ok(())
    }
}

impl<'w, T: Wire> DistSeq<'w, T> {
    /// Reduces the sequence to `group[0]` with the associative `combine`,
    /// folding elements in index order.
    pub fn reduce_d(&self, mut combine: impl FnMut(T, T) -> T) -> Result<DistSingleton<T>> {
        if self.len == 0 {
            return Err(Error::EmptySequence);
        }
        self.require_owned(self.len - 1)?;
        let owner = self.group[0];
        let Some(comm) = &self.comm else {
            return Ok(DistSingleton { owner, value: None });
        };
        let local = self.local_value().expect("members own an element").to_bytes();
        let reduced = comm.reduce(RankId(0), local, |a, b| {
            Ok(combine(T::from_bytes(&a)?, T::from_bytes(&b)?).to_bytes())
        })?;
        let value = reduced.map(|bytes| T::from_bytes(&bytes)).transpose()?;
        Ok(DistSingleton { owner, value })
    }

    /// Every member obtains the full element list; non-members get `None`.
    /// A zero-length sequence yields an empty list everywhere.
    pub fn all_gather_d(&self) -> Result<Option<Vec<T>>> {
        if self.len == 0 {
            return Ok(Some(Vec::new()));
        }
        self.require_owned(self.len - 1)?;
        let Some(comm) = &self.comm else {
            return Ok(None);
        };
        let local = self.local_value().expect("members own an element").to_bytes();
        comm.all_gather(local)?.iter().map(|b| T::from_bytes(b)).collect::<Result<_>>().map(Some)
    }

    /// Every member obtains element `index`, broadcast from its owner.
    /// Non-members get `None`. Not cached: each call broadcasts again.
    pub fn apply(&self, index: usize) -> Result<Option<T>> {
        if index >= self.len {
            return Err(Error::Index { index, len: self.len });
        }
        self.require_owned(index)?;
        let Some(comm) = &self.comm else {
            return Ok(None);
        };
        let payload = (comm.rank().0 == index)
            .then(|| self.local_value().expect("members own an element").to_bytes());
        let bytes = comm.broadcast(RankId(index), payload)?;
        T::from_bytes(&bytes).map(Some)
    }
}

impl<T: fmt::Debug> fmt::Display for DistSeq<'_, T> {
    /// `DSeq(Some(v))` on owners, `DSeq(None)` elsewhere.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DSeq({:?})", self.local_value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{run_spmd, CommStats, InProcWorld};
    use std::rc::Rc;

    fn ones(i: i64) -> i64 {
        i64::from(i.count_ones())
    }

    #[test]
    fn lazy_evaluates_once() {
        let calls = Rc::new(Cell::new(0));
        let c = Rc::clone(&calls);
        let lazy = Lazy::new(move || {
            c.set(c.get() + 1);
            5
        });
        assert!(!lazy.is_evaluated());
        assert_eq!(*lazy.force(), 5);
        assert_eq!(*lazy.force(), 5);
        assert_eq!(lazy.map(|v| v * 2).into_value(), 10);
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn range_ownership() {
        let (_w, eps) = InProcWorld::new(4);
        let seq = DistSeq::from_range(&eps[3], 0..=9);
        assert_eq!(seq.len(), 10);
        assert_eq!(seq.group(), &[RankId(0), RankId(1), RankId(2), RankId(3)]);
        assert_eq!(seq.local_value(), Some(&3));
        assert_eq!(seq.owner(4), None);

        let (_w, eps) = InProcWorld::new(1);
        let seq = DistSeq::from_range(&eps[0], 0..=0);
        assert_eq!(seq.local_value(), Some(&0));

        #[allow(clippy::reversed_empty_ranges)]
        let empty = DistSeq::from_range(&eps[0], 0..=-1);
        assert!(empty.is_empty());
        assert_eq!(empty.local_value(), None);
    }

    #[test]
    fn map_over_small_range() {
        let run = run_spmd(5, |ep| {
            let seq = DistSeq::from_range(ep, 0..=ep.size() as i64 - 3);
            seq.map_d(ones).to_string()
        });
        let expected = ["DSeq(Some(0))", "DSeq(Some(1))", "DSeq(Some(1))", "DSeq(None)", "DSeq(None)"];
        assert_eq!(run.results, expected);
        assert_eq!(run.total_stats(), CommStats::default());
    }

    #[test]
    fn non_owners_never_evaluate() {
        let run = run_spmd(3, |ep| {
            let seq = DistSeq::generate(ep, 2, |i| {
                assert!(i < 2, "element {i} has no owner");
                i
            });
            seq.is_materialized() || seq.map_d(|v| v + 1).local_value().is_some()
        });
        assert_eq!(run.results, [true, true, false]);
    }

    #[test]
    fn reduce_bit_counts() {
        let run = run_spmd(5, |ep| {
            let seq = DistSeq::from_range(ep, 0..=2).map_d(ones);
            seq.reduce_d(|a, b| a + b).unwrap()
        });
        assert_eq!(run.results[0], DistSingleton { owner: RankId(0), value: Some(2) });
        for r in &run.results[1..] {
            assert_eq!(r.value, None);
        }
    }

    #[test]
    fn collectives_on_sequences_longer_than_the_world() {
        let (_w, eps) = InProcWorld::new(1);
        let seq = DistSeq::from_range(&eps[0], 0..=3);
        assert!(matches!(seq.reduce_d(|a, b| a + b), Err(Error::Unowned { index: 3 })));
        assert!(matches!(seq.apply(2), Err(Error::Unowned { index: 2 })));
        assert!(matches!(seq.apply(4), Err(Error::Index { index: 4, len: 4 })));
    }

    #[test]
    fn empty_sequence_errors() {
        let (_w, eps) = InProcWorld::new(2);
        let seq = DistSeq::generate(&eps[0], 0, |i| i as i64);
        assert!(matches!(seq.reduce_d(|a, b| a + b), Err(Error::EmptySequence)));
        assert_eq!(seq.all_gather_d().unwrap(), Some(vec![]));
    }

    #[test]
    fn single_element_reduce_and_apply() {
        let run = run_spmd(1, |ep| {
            let seq = DistSeq::generate(ep, 1, |_| 41i64);
            (seq.reduce_d(|a, b| a * b).unwrap().value, seq.apply(0).unwrap())
        });
        assert_eq!(run.results, [(Some(41), Some(41))]);
        assert_eq!(run.total_stats().messages_sent, 0);
    }

    #[test]
    fn apply_broadcasts_from_owner() {
        let run = run_spmd(8, |ep| {
            let seq = DistSeq::generate(ep, 8, |i| format!("e{i}"));
            seq.apply(5).unwrap()
        });
        assert!(run.results.iter().all(|r| r.as_deref() == Some("e5")));
        assert_eq!(run.total_stats().rounds, 3);
        assert_eq!(run.total_stats().messages_sent, 7);
    }

    #[test]
    fn all_gather_on_a_partial_world() {
        let run = run_spmd(6, |ep| DistSeq::generate(ep, 4, |i| (b'a' + i as u8) as char).map_d(String::from).all_gather_d().unwrap());
        for r in &run.results[..4] {
            assert_eq!(r.as_deref(), Some(&["a", "b", "c", "d"].map(String::from)[..]));
        }
        assert_eq!(run.results[4], None);
        assert!(run.stats[..4].iter().all(|s| s.messages_sent == 3 && s.rounds == 3));
    }

    #[test]
    fn zip_checks_shape_and_alignment() {
        let (_w, eps) = InProcWorld::new(4);
        let a = DistSeq::generate(&eps[0], 3, |i| i);
        let b = DistSeq::generate(&eps[0], 2, |i| i);
        assert!(matches!(a.zip(b), Err(Error::Shape(_))));

        let a = DistSeq::generate(&eps[0], 2, |i| i);
        let b = DistSeq::on_group(&eps[0], vec![RankId(0), RankId(2)], |i| i).unwrap();
        assert!(matches!(a.zip(b), Err(Error::Alignment)));

        let a = DistSeq::generate(&eps[0], 2, |i| i);
        let b = DistSeq::generate(&eps[0], 2, |i| i * 10);
        assert!(matches!(a.zip_with(DistSeq::generate(&eps[0], 1, |i| i), |x, y| x + y), Err(Error::Shape(_))));
        let zipped = DistSeq::generate(&eps[0], 2, |i| i).zip(b).unwrap();
        assert!(!zipped.is_materialized());
        assert_eq!(zipped.into_local(), Some((0, 0)));
    }

    #[test]
    fn zip_with_equals_zip_then_map() {
        let run = run_spmd(3, |ep| {
            let a = || DistSeq::generate(ep, 3, |i| i as i64 + 1);
            let b = || DistSeq::generate(ep, 3, |i| 10 * i as i64);
            let via_zip = a().zip(b()).unwrap().into_local();
            let via_with = a().zip_with(b(), |x, y| (x, y)).unwrap().into_local();
            via_zip == via_with
        });
        assert!(run.results.iter().all(|&ok| ok));
        assert_eq!(run.total_stats(), CommStats::default());
    }

    #[test]
    fn failing_element_function_surfaces_on_its_rank() {
        let run = run_spmd(3, |ep| {
            DistSeq::generate(ep, 3, |i| i).try_map_d(|v| if v == 1 { Err("bad") } else { Ok(v) }).is_err()
        });
        assert_eq!(run.results, [false, true, false]);
    }
}
