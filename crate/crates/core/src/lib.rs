//! Simulation of a configuration-space wavefunction together with the
//! continuum of worlds it describes.
//!
//! The wavefunction evolves under the Schrödinger equation ([`evolution`]);
//! its density `|psi|^2` is the density of worlds, and each world moves with
//! the velocity field `j / rho` ([`worlds`]). Ideal measurements and their
//! outcome statistics are handled in [`measurement`] and [`spin`].

pub mod cli;
pub mod config;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod io;
pub mod measurement;
pub mod projection;
pub mod rng;
pub mod spectral;
pub mod spin;
pub mod states;
pub mod wavefunction;
pub mod worlds;

pub use error::{Error, Result};
pub use grid::{make_grid, Grid};
pub use wavefunction::{inner_product, probability, world_volume, Region, Wavefunction};
