//! Fixtures shared by the benchmarks.

use misbehave::dataio::{binarize, clean, stratified_split};
use misbehave::stacking::Preprocessor;
use misbehave::synth::{self, SynthConfig};
use misbehave::{CleanPolicy, Dataset, PipelineConfig};

/// Raw binary train/test split of the default synthetic corpus.
pub fn raw_binary() -> (Dataset, Dataset) {
    let raw = synth::generate(&SynthConfig::default()).expect("synth");
    let cleaned = clean(&raw, CleanPolicy::Median).expect("clean");
    let split = stratified_split(&binarize(&cleaned).expect("binarize"), 0.8, 0).expect("split");
    (split.train, split.test)
}

/// Prepared (scaled and selected) binary train/test split.
pub fn prepared_binary() -> (Dataset, Dataset) {
    let (train, test) = raw_binary();
    let (pre, prepared) = Preprocessor::fit(&train, &PipelineConfig::default()).expect("preprocess");
    let test = pre.transform(&test).expect("transform");
    (prepared, test)
}
