//! Model querying, answer extraction, scoring and run comparison.

mod client;
mod eval;
pub mod mock;
mod parse;
mod report;
mod store;

pub use client::{
    build_request_body, extract_response_text, png_data_url, query_model, ChatBackend, EndpointConfig,
    HttpBackend,
};
pub use eval::{evaluate, score, BucketScore, EvalOptions, EvalResult, ItemInputs, ItemRequest, ManifestIndex};
pub use parse::{parse_choice, PARSER_VERSION};
pub use report::{compare_runs, format_signed, ComparisonReport, DeltaRow, Flip};
pub use store::{Prediction, PredictionStore};
