//! Shared inputs for the benchmarks.

use nasforge_core::{parse_spec, SearchSpaceSpec};

pub const CONV_CLASSIFIER: &str = include_str!("../../core/tests/fixtures/conv_classifier.yaml");

pub fn conv_classifier() -> SearchSpaceSpec {
    parse_spec(CONV_CLASSIFIER).expect("fixture parses")
}

pub fn conv_classifier_depths(depths: &str) -> SearchSpaceSpec {
    parse_spec(&CONV_CLASSIFIER.replace("[1, 2, 3, 4, 5, 6]", depths)).expect("fixture parses")
}
