//! Mixtures of factorized generalized normals.
//!
//! This crate models heterogeneous (continuous + categorical) data with a
//! finite mixture whose components factorize over the attributes: each
//! component is a product of one *generalized normal* — a Gaussian density
//! extended with an exact impulse limit — per continuous attribute and one
//! dense probability vector per symbolic attribute. The family is closed
//! under the operations that pattern completion needs, so conditioning on
//! uncertain evidence, marginalizing, and computing posterior moments are
//! all available in closed form, with no sampling or iterative inference.
//!
//! The pieces fit together as follows:
//!
//! * [`gn`] — the scalar calculus: densities, products, overlaps and
//!   interval masses of generalized normals, in linear and log form.
//! * [`model`] — attribute schemas, the mixture model, joint and marginal
//!   densities, sampling, and the plain-text model file format.
//! * [`evidence`] — elementary uncertain observations, the query language,
//!   and expansion of composed expressions into weighted conjunctions.
//! * [`inference`] — exact posterior mixtures over target attributes given
//!   evidence, with point estimates, credibility intervals, posterior
//!   densities and moments.
//! * [`learning`] — EM fitting of the mixture from exact or uncertain
//!   training tables, plus model-order selection helpers.
//! * [`dataset`] — tabular text I/O: schema files, datasets with uncertain
//!   cells, and reproducible corruption for benchmark protocols.
//!
//! The `mfgn` binary wraps the library in a batch CLI (`train`, `infer`,
//! `eval`, `complete`, `sample`, `corrupt`, `plot-data`).

pub mod dataset;
pub mod error;
pub mod evidence;
pub mod gn;
pub mod inference;
pub mod learning;
pub mod model;

pub use error::{Error, Result};
