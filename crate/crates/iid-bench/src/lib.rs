//! Shared fixtures for the benchmark targets.

use iid_core::synth::{gen_scene, ShadingKind, SyntheticScene};

/// Deterministic scene used across benchmarks.
pub fn bench_scene(width: usize, height: usize) -> SyntheticScene {
    gen_scene(width, height, 5, ShadingKind::Mixed, [1.0, 0.95, 0.9], 7)
        .expect("bench scene generation")
}
