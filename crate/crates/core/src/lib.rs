//! Fair-share scheduling core for private clouds.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. It holds the
//! scheduling model:
//!
//! * [`resources`] and [`model`]: resource vectors, flavors, projects, requests, hosts.
//! * [`usage`]: decayed, windowed usage accounting.
//! * [`priority`]: MultiFactor and FairTree priority algorithms.
//! * [`queue`]: the journaled priority queue and its replay.
//! * [`dispatch`]: private/shared quota admission, backfilling dispatch, placement, retries.
//! * [`preempt`]: victim selection for preemptible instances.
//! * [`director`]: the batch/cloud node partition state machine and pledge rebalancing.
//! * [`sim`]: a deterministic discrete-event simulator driving all of the above.
//!
//! File formats, the CLI and the management service live in the `cloudshare` crate.

#![cfg_attr(not(test), no_std)]
// `!(x >= 0.0)` is how NaN gets rejected along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod config;
pub mod director;
pub mod dispatch;
pub mod error;
pub mod model;
pub mod preempt;
pub mod priority;
pub mod queue;
pub mod resources;
pub mod sim;
pub mod usage;

pub use error::{Error, Result};
pub use model::{HostId, NodeId, ProjectId, RequestId, SimTime, UserId};
pub use resources::{Flavor, ResourceVector};
