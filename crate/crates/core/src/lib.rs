//! SPMD distributed collections over a pluggable message transport.
//!
//! Every rank runs the same program. Data lives in distributed sequences
//! ([`dseq::DistSeq`]) whose elements are statically mapped to ranks;
//! communication only happens inside the collective operations on them,
//! which makes the cost of a program readable from its structure.
//!
//! ```
//! use distseq::dseq::DistSeq;
//! use distseq::transport::run_spmd;
//!
//! let run = run_spmd(5, |ep| {
//!     let seq = DistSeq::from_range(ep, 0..=2);
//!     seq.map_d(|i| i64::from(i.count_ones())).into_local()
//! });
//! assert_eq!(run.results, [Some(0), Some(1), Some(1), None, None]);
//! ```

pub mod cli;
pub mod costmodel;
pub mod dseq;
pub mod error;
pub mod grid;
pub mod matmul;
pub mod suite;
pub mod transport;
pub mod wire;

pub use error::{Error, Result};
