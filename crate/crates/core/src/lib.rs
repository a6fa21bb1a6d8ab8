//! Allocation-only core for joint user association and power control in
//! heterogeneous ultra-dense networks (HUDNs).
//!
//! The crate carries every pure computation of the pipeline:
//!
//! * [`scenario`]: reproducible urban layouts (buildings, macro/small sites,
//!   the UE candidate grid) and sampled activation events.
//! * [`radiomap`]: LoS/NLoS large-scale gains between every grid point and
//!   every site.
//! * [`hetgraph`]: the bipartite UE/BS graph with one- and second-order
//!   neighborhoods.
//! * [`grad`]: a define-by-run reverse-mode tape over dense matrices plus Adam.
//! * [`model`]: the two-layer heterogeneous GraphSAGE with association and
//!   power heads.
//! * [`objective`]: SINR, effective rates and the training losses.
//! * [`baselines`]: deterministic comparators and the exhaustive oracle.
//! * [`trainer`]: multi-event generalization training and single-event
//!   specialization fine-tuning.
//!
//! Nothing here touches the filesystem or a clock; see the `hudn` crate for
//! file formats, timing and the command line.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod grad;
pub mod hetgraph;
pub mod linalg;
pub mod math;
pub mod model;
pub mod objective;
pub mod radiomap;
pub mod rng;
pub mod scenario;
pub mod trainer;

pub use linalg::Matrix;
