#![no_std]
extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod arnoldi;
pub mod basis;
pub mod error;
pub mod golub_kahan;
pub mod irls;
pub mod operators;
pub mod problems;
pub mod projected;
pub mod regparam;
pub mod solver;
pub mod vector;

pub use error::{Error, Result};
