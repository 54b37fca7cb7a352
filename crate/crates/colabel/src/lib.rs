//! Approximate maximum-posterior-marginal inference in fully connected CRFs
//! over batches of video frames.
//!
//! The model combines externally supplied unary potentials with three kinds
//! of coupling terms, all evaluated inside one parallel mean-field loop:
//!
//! - **Gaussian pairwise kernels** (spatial smoothness, appearance, and a
//!   position-free global appearance kernel) with Potts compatibility,
//!   filtered in linear time on the permutohedral lattice ([`lattice`]);
//! - **Pn-Potts higher-order terms** over mean-shift superpixel cliques,
//!   in several layers of varying granularity ([`superpixels`],
//!   [`potentials`]);
//! - **co-occurrence terms** penalizing unlikely label pairs across the
//!   whole co-labeled batch ([`potentials`]).
//!
//! Frames are co-labeled in windows (default 50 frames at once), which
//! couples appearance statistics across time and yields temporally
//! consistent segmentations at essentially frame-level cost.
//!
//! Start with [`inference::run_inference`] for the full engine, or the
//! `colabel` binary for the file-based pipeline. The guide under `book/`
//! walks through every stage; its code snippets double as doc-tests.

pub mod core;
pub mod inference;
pub mod io;
pub mod lattice;
pub mod metrics;
pub mod potentials;
pub mod superpixels;

pub mod cli;

mod error;
mod util;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide;
