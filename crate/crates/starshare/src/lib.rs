//! Bandwidth-sharing star networks under the min policy: exact simulation,
//! large-deviations rate functions, and variational decay-rate estimates.
//!
//! A star network is a set of capacity-limited channels; documents arrive
//! on routes, each route occupying a pair of channels, and are served at a
//! bandwidth the channels must share. Under the min policy a route gets its
//! occupancy times the smaller of its two channels' per-document shares.
//! The crate covers both sides of the rare-event picture for such networks:
//!
//! * [`model`] defines the network, its states, service rates, face
//!   partitions, and the ergodicity criterion.
//! * [`rate`] builds the cost functionals: the per-route drift cost, the
//!   local rate function on each face, relative entropies of twisted
//!   dynamics, and the stay cost of transient regimes.
//! * [`paths`] integrates those costs along piecewise-linear trajectories
//!   and minimizes over them to produce variational decay-rate bounds for
//!   channel overflow.
//! * [`simulate`] runs the network exactly (naturally or twisted), turns
//!   occupancy histograms into decay-rate estimates, and carries the
//!   likelihood-ratio bookkeeping for martingale checks and importance
//!   sampling.

pub mod error;
pub mod model;
pub mod paths;
pub mod rate;
pub mod simulate;
mod util;

pub use error::{Error, Result};
