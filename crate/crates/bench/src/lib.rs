//! Shared fixtures for the benchmark targets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sdlab_core::schedule::{NoiseSchedule, ScheduleKind};
use sdlab_core::world::{make_scene, Scene, SceneSize};
use sdlab_core::ImageTensor;

pub fn schedule() -> NoiseSchedule {
    NoiseSchedule::build(ScheduleKind::Linear, 1000, 1e-4, 0.02).expect("schedule")
}

pub fn scene() -> Scene {
    make_scene("two-blobs", SceneSize::Small).expect("scene")
}

pub fn random_image(seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(16, 16, 1, |_, _, _| StandardNormal.sample(&mut rng))
}
