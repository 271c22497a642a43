#![allow(dead_code)]

use viewfuse::synth::{generate_scene, random_scene, Scene, SceneSpec};

pub const SUITE_SEEDS: std::ops::Range<u64> = 0..10;

pub fn suite_scene(seed: u64, size: usize) -> (SceneSpec, Scene) {
    let spec = random_scene(seed, size);
    let scene = generate_scene(&spec).expect("suite scene renders");
    (spec, scene)
}
