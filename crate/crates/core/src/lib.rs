//! Data preparation and model selection toolkit for chat translation.
//!
//! - [`corpus`]: bitext / chat data model and TSV / JSONL I/O
//! - [`filter`]: punctuation normalization, length, dedup and ratio rules
//! - [`chatprep`]: `<BT>` tagging, speaker tags, prompt-style context
//! - [`denoise`]: seeded target-side token noising
//! - [`bsce`]: diversity-aware greedy ensemble selection
//! - [`attention`]: average-attention and talking-heads reference kernels
//! - `cli`: the `chatmt` command line (feature `cli`)

pub mod attention;
pub mod bsce;
pub mod chatprep;
pub mod corpus;
pub mod denoise;
pub mod filter;
mod par;

#[cfg(feature = "cli")]
pub mod cli;
