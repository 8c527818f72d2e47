//! Deterministic fixtures shared by the benchmarks.

use longtraj_core::{Point, SceneMap};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

pub fn scene(channels: usize, side: usize) -> SceneMap {
    let grid = Array3::from_shape_fn((channels, side, side), |(c, i, j)| {
        ((c * 7 + i * 3 + j) % 5) as f64 / 4.0
    });
    SceneMap::new("bench", grid, 1.0).expect("valid scene")
}

/// A noisy straight track of `len` points inside a `side`-pixel map.
pub fn track(rng: &mut impl Rng, len: usize, side: usize) -> Vec<Point> {
    let start = Point::new(side as f64 * 0.25, side as f64 * 0.25);
    let v = Point::new(rng.random_range(0.2..0.5), rng.random_range(0.2..0.5));
    (0..len)
        .map(|t| {
            start.add(v.scale(t as f64)).add(Point::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            ))
        })
        .collect()
}
