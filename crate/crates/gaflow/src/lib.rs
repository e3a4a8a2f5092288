//! File formats and the command line around `gaflow-core`.
//!
//! [`gaft`] reads and writes tensor archives, [`formats`] holds the JSON
//! documents passed between pipeline stages and [`cli`] wires them to the
//! core.

pub mod cli;
pub mod error;
pub mod formats;
pub mod gaft;

pub use error::{Error, Result};
pub use gaft::{read_archive, write_archive, TensorArchive};
