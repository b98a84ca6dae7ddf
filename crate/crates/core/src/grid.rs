//! Cartesian process grids and the axis sequences derived from them.
//!
//! Ranks map to coordinates in mixed radix with the last axis fastest, so for
//! a `q×q×q` grid `rank = i·q² + j·q + k` and every z-line is a contiguous
//! block of ranks.

use crate::dseq::DistSeq;
use crate::error::{Error, Result};
use crate::transport::{RankId, Transport};

/// Rank of `coords` in a grid with extents `dims`.
pub fn rank_of(dims: &[usize], coords: &[usize]) -> Result<RankId> {
    if dims.len() != coords.len() {
        return Err(Error::Topology(format!(
            "{} coordinates for a {}-dimensional grid",
            coords.len(),
            dims.len()
        )));
    }
    let mut rank = 0;
    for (axis, (&d, &c)) in dims.iter().zip(coords).enumerate() {
        if c >= d {
            return Err(Error::Topology(format!("coordinate {c} out of range on axis {axis} (extent {d})")));
        }
        rank = rank * d + c;
    }
    Ok(RankId(rank))
}

/// Coordinates of `rank` in a grid with extents `dims`.
pub fn coords_of(dims: &[usize], rank: RankId) -> Result<Vec<usize>> {
    let size: usize = dims.iter().product();
    if rank.0 >= size {
        return Err(Error::Topology(format!("rank {rank} outside grid of {size} ranks")));
    }
    let mut rest = rank.0;
    let mut coords = vec![0; dims.len()];
    for (c, &d) in coords.iter_mut().zip(dims).rev() {
        *c = rest % d;
        rest /= d;
    }
    Ok(coords)
}

/// An r-dimensional process grid seen from the calling rank.
pub struct GridN<'w> {
    world: &'w dyn Transport,
    dims: Vec<usize>,
    coords: Vec<usize>,
}

impl<'w> GridN<'w> {
    pub fn new(world: &'w dyn Transport, dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Topology(format!("invalid grid extents {dims:?}")));
        }
        let size: usize = dims.iter().product();
        if size != world.size() {
            return Err(Error::Topology(format!(
                "grid {dims:?} needs {size} ranks, world has {}",
                world.size()
            )));
        }
        let coords = coords_of(&dims, world.rank())?;
        Ok(GridN { world, dims, coords })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn world(&self) -> &'w dyn Transport {
        self.world
    }

    /// Ranks on the line through the caller that varies along `axis`, ordered
    /// by that coordinate.
    pub fn axis_group(&self, axis: usize) -> Result<Vec<RankId>> {
        if axis >= self.dims.len() {
            return Err(Error::Topology(format!("axis {axis} of a {}-dimensional grid", self.dims.len())));
        }
        let mut coords = self.coords.clone();
        (0..self.dims[axis])
            .map(|c| {
                coords[axis] = c;
                rank_of(&self.dims, &coords)
            })
            .collect()
    }

    /// The distributed sequence along `axis` through the caller. The caller
    /// owns the element indexed by its own coordinate on that axis.
    pub fn axis_seq<T>(&self, axis: usize, element: impl FnOnce() -> T + 'w) -> Result<DistSeq<'w, T>> {
        let group = self.axis_group(axis)?;
        DistSeq::on_group(self.world, group, move |_| element())
    }
}

/// A `q×q×q` grid of `p = q³` ranks; rank `(i, j, k)` is `i·q² + j·q + k`.
pub struct Grid3D<'w> {
    inner: GridN<'w>,
    q: usize,
}

impl<'w> Grid3D<'w> {
    pub fn new(world: &'w dyn Transport, q: usize) -> Result<Self> {
        if q == 0 || q.checked_pow(3) != Some(world.size()) {
            return Err(Error::Topology(format!(
                "a grid of side {q} needs q³ ranks, world has {}",
                world.size()
            )));
        }
        Ok(Grid3D { inner: GridN::new(world, vec![q; 3])?, q })
    }

    pub fn side(&self) -> usize {
        self.q
    }

    pub fn world(&self) -> &'w dyn Transport {
        self.inner.world
    }

    /// `(i, j, k)` of the calling rank.
    pub fn coords(&self) -> (usize, usize, usize) {
        let c = self.inner.coords();
        (c[0], c[1], c[2])
    }

    pub fn rank_of(&self, i: usize, j: usize, k: usize) -> Result<RankId> {
        rank_of(self.inner.dims(), &[i, j, k])
    }

    pub fn coords_of(&self, rank: RankId) -> Result<(usize, usize, usize)> {
        let c = coords_of(self.inner.dims(), rank)?;
        Ok((c[0], c[1], c[2]))
    }

    pub fn x_group(&self) -> Vec<RankId> {
        self.inner.axis_group(0).expect("axis 0 exists")
    }

    pub fn y_group(&self) -> Vec<RankId> {
        self.inner.axis_group(1).expect("axis 1 exists")
    }

    /// `[(i, j, 0), .., (i, j, q-1)]` for the caller's `(i, j)`.
    pub fn z_group(&self) -> Vec<RankId> {
        self.inner.axis_group(2).expect("axis 2 exists")
    }

    pub fn x_seq<T>(&self, element: impl FnOnce() -> T + 'w) -> DistSeq<'w, T> {
        self.inner.axis_seq(0, element).expect("axis groups are valid")
    }

    pub fn y_seq<T>(&self, element: impl FnOnce() -> T + 'w) -> DistSeq<'w, T> {
        self.inner.axis_seq(1, element).expect("axis groups are valid")
    }

    /// The sequence varying in `k` with the caller's `(i, j)` fixed. Element
    /// `k` lives on `(i, j, k)`, so `reduce_d` delivers to `(i, j, 0)`.
    pub fn z_seq<T>(&self, element: impl FnOnce() -> T + 'w) -> DistSeq<'w, T> {
        self.inner.axis_seq(2, element).expect("axis groups are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::InProcWorld;
    use std::collections::BTreeSet;

    #[test]
    fn rank_five_of_a_side_two_grid() {
        let (_w, eps) = InProcWorld::new(8);
        let g = Grid3D::new(&eps[5], 2).unwrap();
        assert_eq!(g.coords(), (1, 0, 1));
        assert_eq!(g.rank_of(1, 0, 1).unwrap(), RankId(5));
    }

    #[test]
    fn side_one_grid() {
        let (_w, eps) = InProcWorld::new(1);
        let g = Grid3D::new(&eps[0], 1).unwrap();
        assert_eq!(g.coords(), (0, 0, 0));
        let seq = g.z_seq(|| 3);
        assert_eq!(seq.group(), &[RankId(0)]);
        assert_eq!(seq.local_value(), Some(&3));
        assert_eq!(g.x_seq(|| 1).len(), 1);
    }

    #[test]
    fn wrong_world_size_is_a_topology_error() {
        let (_w, eps) = InProcWorld::new(7);
        assert!(matches!(Grid3D::new(&eps[0], 2), Err(Error::Topology(_))));
        assert!(matches!(Grid3D::new(&eps[0], 0), Err(Error::Topology(_))));
        assert!(matches!(GridN::new(&eps[0], vec![2, 3]), Err(Error::Topology(_))));
    }

    #[test]
    fn z_group_membership() {
        let (_w, eps) = InProcWorld::new(8);
        // (0,1,1) = 0·4 + 1·2 + 1 = 3
        let g = Grid3D::new(&eps[3], 2).unwrap();
        assert_eq!(g.z_group(), vec![RankId(2), RankId(3)]);
        assert_eq!(g.z_seq(|| ()).local_index(), Some(1));
    }

    #[test]
    fn axis_lines_meet_only_at_the_caller() {
        for q in 1..=4 {
            let (_w, eps) = InProcWorld::new(q * q * q);
            for ep in &eps {
                let g = Grid3D::new(ep, q).unwrap();
                let [x, y, z] = [g.x_group(), g.y_group(), g.z_group()].map(|v| v.into_iter().collect::<BTreeSet<_>>());
                let me = BTreeSet::from([ep.rank()]);
                assert_eq!(&x & &y, me);
                assert_eq!(&y & &z, me);
                assert_eq!(&x & &z, me);
            }
        }
    }

    #[test]
    fn axis_groups_partition_the_grid() {
        for q in 1..=4 {
            let (_w, eps) = InProcWorld::new(q * q * q);
            for axis in 0..3 {
                let groups: BTreeSet<Vec<RankId>> =
                    eps.iter().map(|ep| Grid3D::new(ep, q).unwrap().inner.axis_group(axis).unwrap()).collect();
                assert_eq!(groups.len(), q * q);
                let covered: Vec<RankId> = groups.iter().flatten().copied().collect();
                assert_eq!(covered.len(), q * q * q);
                assert_eq!(covered.iter().collect::<BTreeSet<_>>().len(), q * q * q);
                assert!(groups.iter().all(|g| g.len() == q));
            }
        }
    }

    #[test]
    fn mixed_radix_maps_are_inverse_bijections() {
        for dims in [vec![4, 4, 4], vec![2, 3, 5], vec![7], vec![3, 1, 2, 2]] {
            let size: usize = dims.iter().product();
            let mut seen = BTreeSet::new();
            for r in 0..size {
                let c = coords_of(&dims, RankId(r)).unwrap();
                assert!(seen.insert(c.clone()));
                assert_eq!(rank_of(&dims, &c).unwrap(), RankId(r));
            }
            assert!(coords_of(&dims, RankId(size)).is_err());
        }
        assert!(rank_of(&[2, 2], &[0, 2]).is_err());
        assert!(rank_of(&[2, 2], &[0]).is_err());
    }
}
