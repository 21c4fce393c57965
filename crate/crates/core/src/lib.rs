//! Trigger matching networks for named entity recognition.
//!
//! Entity triggers are small groups of words that explain why a span is an
//! entity of some type. Stage one learns a shared embedding for triggers and
//! sentences ([`matcher`]); stage two feeds a trigger vector as an attention
//! query into a BLSTM-CRF tagger ([`tagger`]). At inference time the query is
//! the mean of the nearest stored triggers ([`inference`]).
//!
//! ```no_run
//! use std::sync::Arc;
//! use tmn::harness::{generate_synthetic, pipeline, RunConfig};
//!
//! let config = RunConfig::synthetic();
//! let data = generate_synthetic(&config.synthetic)?;
//! let pretrained = Arc::new(data.pretrained.clone());
//! let trained = pipeline::train_tmn(&data.train, &data.types, pretrained, &config, 1)?;
//! let scores = pipeline::evaluate_tmn(&trained.model, &data.test)?;
//! println!("F1 {:.3}", scores.f1);
//! # Ok::<(), tmn::Error>(())
//! ```

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod inference;
pub mod matcher;
pub mod optim;
pub mod params;
pub mod tagger;

pub use error::{Error, Result};
