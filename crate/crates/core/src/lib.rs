//! Single-tweet geolocation.
//!
//! Predicts the country or city a tweet was posted from using only the
//! fields of that one tweet: four free-text fields (content, user
//! description, user name, profile location), three categorical fields
//! (tweet language, user language, timezone) and the UTC posting time.
//!
//! Two classifiers are provided:
//!
//! * [`cnn`]: a convolutional text model whose filter banks run over every
//!   text field, max-pooled, concatenated with one-hot categorical features
//!   and fed to a softmax layer. Trained with hand-written backpropagation
//!   and Adam ([`nncore`], [`train`]).
//! * [`bayes`]: the stacked multinomial naive Bayes baseline, optionally
//!   with information-gain-ratio vocabulary selection.
//!
//! Supporting modules cover ingestion and splitting ([`ingest`]), the
//! city label space ([`geo`], [`labels`]), tokenization ([`textproc`]),
//! categorical encoding ([`encode`]), metrics ([`eval`]) and a synthetic
//! corpus generator ([`synth`]). The `tweetgeo` binary wraps them in
//! `prepare`, `train`, `eval` and `predict` subcommands ([`cli`]).

pub mod bayes;
pub mod bundle;
pub mod cli;
pub mod cnn;
pub mod encode;
mod error;
pub mod eval;
pub mod geo;
pub mod ingest;
pub mod labels;
pub mod nncore;
pub mod seed;
pub mod synth;
pub mod textproc;
pub mod train;

pub use error::{Error, Result};
