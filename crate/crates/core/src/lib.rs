//! Answer-trajectory analysis for reasoning models.
//!
//! Collect chain-of-thought traces from a completion endpoint, force an
//! answer after every reasoning step, measure when that answer stops
//! changing, and evaluate threshold gates that stop reasoning early.
//!
//! The pieces, in pipeline order:
//!
//! - [`segment`] splits reasoning text into steps aligned to tokens.
//! - [`client`] and [`engine`] sample traces and forced answers.
//! - [`metrics`] computes switch counts, transient flips, hold-for-k
//!   smoothing and tokens after the final switch.
//! - [`probe`] trains a linear probe on per-step hidden states.
//! - [`gating`] turns gate scores into stopping decisions and a
//!   tokens-saved vs. quality frontier.
//! - [`datastore`] and [`report`] read and write every file format.
//!
//! ```
//! use trajgate::metrics::{final_switch_index, hold_for_k, tokens_after, transient_flips};
//! use trajgate::{AnswerLabel, EquivalenceConfig};
//!
//! let eq = EquivalenceConfig::default();
//! let labels: Vec<AnswerLabel> = "ABAABB"
//!     .chars()
//!     .map(|c| AnswerLabel::Choice { label: c.to_string() })
//!     .collect();
//! let t = final_switch_index(&labels, &eq);
//! assert_eq!(t, 3);
//! assert_eq!(tokens_after(&[0, 2, 5, 9, 14, 20], t).unwrap(), 6);
//! assert_eq!(transient_flips(&labels, &eq, 3), 2);
//! let smooth: String = hold_for_k(&labels, &eq, 2).iter().map(|l| l.text()).collect();
//! assert_eq!(smooth, "AAAAAB");
//! ```

pub mod cli;
pub mod client;
pub mod datastore;
pub mod engine;
pub mod error;
pub mod gating;
pub mod metrics;
pub mod mock;
pub mod probe;
pub mod report;
pub mod seeds;
pub mod segment;
pub mod synthetic;
pub mod trace;

mod parallel;

pub use error::{Error, ErrorClass, Result};
pub use trace::{AnswerLabel, AnswerTrajectory, ByteSpan, EquivalenceConfig, TaskKind, TraceRecord};
