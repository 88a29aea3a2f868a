//! Reduced models of parametrized 1D scalar conservation laws built from
//! transported subspaces.
//!
//! The offline stage turns full-model snapshots into a small set of
//! transport modes (a low-rank family of increasing maps of the line) and a
//! local linear basis. The online stage evolves a reduced state whose cost
//! per time step depends only on the reduced dimensions, never on the
//! full-model grid.
//!
//! Module map:
//!
//! * [`pwl`] – piecewise-linear functions and maps
//! * [`fullmodel`] – Godunov finite-volume solver with source splitting
//! * [`decompose`] – monotone decompositions and signatures
//! * [`dip`] – displacement interpolation by pieces (DIP) transport maps
//! * [`offline`] – transport modes, local basis, interpolation points, bundle
//! * [`online`] – the reduced time stepper and reconstruction
//! * [`experiments`] – config-driven training / evaluation / timing runs

// negated comparisons are used on purpose: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decompose;
pub mod dip;
pub mod error;
pub mod experiments;
pub mod fullmodel;
pub mod io;
pub mod linalg;
pub mod offline;
pub mod online;
pub mod pwl;

pub use error::{MatsError, Result, StopReason};
pub use pwl::{Grid, GridFn, Polyline};
