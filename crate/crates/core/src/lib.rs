//! Numerical laboratory for the mass-constrained Choquard (Pekar) problem
//! `E_g(u) = 1/2 ||grad u||^2 - g/4 iint u^2(x) V(x-y) u^2(y)` on periodic
//! boxes in one, two and three dimensions.

pub mod cli;
pub mod constants;
pub mod dump;
pub mod energy;
pub mod error;
pub mod grid;
pub mod groundstate;
pub mod metastable;
pub mod oracle;
pub mod pokhozaev;
pub mod potentials;
pub mod spectrum;
pub mod transition;

pub use error::{Error, Result};
pub use grid::{make_grid, Field, Grid};
pub use potentials::Potential;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
    #[doc = include_str!("../../../book/src/potentials.md")]
    mod potentials {}
    #[doc = include_str!("../../../book/src/energy.md")]
    mod energy {}
    #[doc = include_str!("../../../book/src/groundstate.md")]
    mod groundstate {}
    #[doc = include_str!("../../../book/src/transition.md")]
    mod transition {}
    #[doc = include_str!("../../../book/src/pokhozaev.md")]
    mod pokhozaev {}
    #[doc = include_str!("../../../book/src/spectrum.md")]
    mod spectrum {}
    #[doc = include_str!("../../../book/src/metastable.md")]
    mod metastable {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
