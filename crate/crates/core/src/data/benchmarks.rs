//! The seven two-dimensional toy distributions of the FFJORD benchmark suite.
//!
//! Formulas follow the suite's reference generators; `u` is uniform on
//! `[0, 1)` and `z` standard normal, drawn independently everywhere.
//!
//! * `swissroll`: `t = 1.5 pi (1 + 2u)`, point `(t cos t, t sin t) + z`, scaled by `1/5`.
//! * `circles`: half the points on the unit circle and half on the circle of
//!   radius `0.5` at equispaced angles, shuffled, plus `0.08 z`, scaled by `3`.
//! * `moons`: the two interleaved half circles `(cos a, sin a)` and
//!   `(1 - cos a, 0.5 - sin a)` with `a` equispaced on `[0, pi]`, shuffled,
//!   plus `0.1 z`, then mapped by `p -> 2p + (-1, -0.2)`.
//! * `8gaussians`: a center `4 (cos k pi/4, sin k pi/4)` chosen uniformly,
//!   plus `0.5 z`, all divided by `1.414`.
//! * `pinwheel`: five arms; a point of arm `k` is `(1 + 0.3 z1, 0.1 z2)`
//!   rotated by `2 pi k / 5 + 0.25 exp(1 + 0.3 z1)` and doubled.
//! * `2spirals`: `r = 3 pi sqrt(u)`, point `(-r cos r + u', r sin r + u'')` with
//!   `u', u''` uniform on `[0, 0.5)`, half the points mirrored through the
//!   origin, divided by `3`, plus `0.1 z`.
//! * `checkerboard`: `x = 4u - 2`, `y = u' - 2b + (floor(x) mod 2)` with a fair
//!   bit `b`, both doubled; the support is the set of 2x2 cells of
//!   `[-4, 4]^2` whose index sum is even.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Pinwheel,
    TwoSpirals,
    Moons,
    EightGaussians,
    Circles,
    Swissroll,
    Checkerboard,
}

impl Benchmark {
    pub const ALL: [Benchmark; 7] = [
        Self::Pinwheel,
        Self::TwoSpirals,
        Self::Moons,
        Self::EightGaussians,
        Self::Circles,
        Self::Swissroll,
        Self::Checkerboard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pinwheel => "pinwheel",
            Self::TwoSpirals => "2spirals",
            Self::Moons => "moons",
            Self::EightGaussians => "8gaussians",
            Self::Circles => "circles",
            Self::Swissroll => "swissroll",
            Self::Checkerboard => "checkerboard",
        }
    }

    /// Training-set size used for this benchmark.
    pub fn train_size(self) -> usize {
        match self {
            Self::Checkerboard => 10_000,
            _ => 5_000,
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Ok(match key.as_str() {
            "pinwheel" => Self::Pinwheel,
            "2spirals" | "twospirals" => Self::TwoSpirals,
            "moons" => Self::Moons,
            "8gaussians" | "eightgaussians" => Self::EightGaussians,
            "circles" => Self::Circles,
            "swissroll" => Self::Swissroll,
            "checkerboard" => Self::Checkerboard,
            _ => return Err(invalid(format!("unknown benchmark `{s}`"))),
        })
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn from_rows(rows: Vec<[f64; 2]>) -> Array2<f64> {
    let n = rows.len();
    Array2::from_shape_vec((n, 2), rows.into_iter().flatten().collect()).expect("two columns")
}

fn linspace(start: f64, stop: f64, n: usize, endpoint: bool) -> impl Iterator<Item = f64> {
    let denom = if endpoint { n.saturating_sub(1).max(1) } else { n.max(1) } as f64;
    (0..n).map(move |i| start + (stop - start) * i as f64 / denom)
}

/// Draws `n` points of a benchmark distribution.
pub fn generate_benchmark(which: Benchmark, n: usize, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(invalid("benchmark size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let rows: Vec<[f64; 2]> = match which {
        Benchmark::Swissroll => (0..n)
            .map(|_| {
                let t = 1.5 * PI * (1.0 + 2.0 * rng.random::<f64>());
                let x = t * t.cos() + normal(rng);
                let y = t * t.sin() + normal(rng);
                [x / 5.0, y / 5.0]
            })
            .collect(),
        Benchmark::Circles => {
            let n_out = n / 2;
            let n_in = n - n_out;
            let mut pts: Vec<[f64; 2]> = linspace(0.0, 2.0 * PI, n_out, false)
                .map(|a| [a.cos(), a.sin()])
                .chain(linspace(0.0, 2.0 * PI, n_in, false).map(|a| [0.5 * a.cos(), 0.5 * a.sin()]))
                .collect();
            pts.shuffle(rng);
            pts.into_iter()
                .map(|[x, y]| [3.0 * (x + 0.08 * normal(rng)), 3.0 * (y + 0.08 * normal(rng))])
                .collect()
        }
        Benchmark::Moons => {
            let n_out = n / 2;
            let n_in = n - n_out;
            let mut pts: Vec<[f64; 2]> = linspace(0.0, PI, n_out, true)
                .map(|a| [a.cos(), a.sin()])
                .chain(linspace(0.0, PI, n_in, true).map(|a| [1.0 - a.cos(), 0.5 - a.sin()]))
                .collect();
            pts.shuffle(rng);
            pts.into_iter()
                .map(|[x, y]| {
                    let x = x + 0.1 * normal(rng);
                    let y = y + 0.1 * normal(rng);
                    [2.0 * x - 1.0, 2.0 * y - 0.2]
                })
                .collect()
        }
        Benchmark::EightGaussians => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let centers = [
                (1.0, 0.0),
                (-1.0, 0.0),
                (0.0, 1.0),
                (0.0, -1.0),
                (s, s),
                (s, -s),
                (-s, s),
                (-s, -s),
            ];
            (0..n)
                .map(|_| {
                    let (cx, cy) = centers[rng.random_range(0..8)];
                    let x = 0.5 * normal(rng) + 4.0 * cx;
                    let y = 0.5 * normal(rng) + 4.0 * cy;
                    [x / 1.414, y / 1.414]
                })
                .collect()
        }
        Benchmark::Pinwheel => {
            let classes = 5;
            let mut pts: Vec<[f64; 2]> = (0..n)
                .map(|i| {
                    let label = i * classes / n;
                    let f0 = 1.0 + 0.3 * normal(rng);
                    let f1 = 0.1 * normal(rng);
                    let angle = 2.0 * PI * label as f64 / classes as f64 + 0.25 * f0.exp();
                    let (sn, cs) = angle.sin_cos();
                    [2.0 * (f0 * cs + f1 * sn), 2.0 * (-f0 * sn + f1 * cs)]
                })
                .collect();
            pts.shuffle(rng);
            pts
        }
        Benchmark::TwoSpirals => {
            let half = n.div_ceil(2);
            let arm: Vec<[f64; 2]> = (0..half)
                .map(|_| {
                    let r = rng.random::<f64>().sqrt() * 540.0 * (2.0 * PI) / 360.0;
                    let x = -r.cos() * r + 0.5 * rng.random::<f64>();
                    let y = r.sin() * r + 0.5 * rng.random::<f64>();
                    [x, y]
                })
                .collect();
            let mirrored = arm.iter().take(n - half).map(|&[x, y]| [-x, -y]);
            let pts: Vec<[f64; 2]> = arm.iter().copied().chain(mirrored).collect();
            pts.into_iter()
                .map(|[x, y]| [x / 3.0 + 0.1 * normal(rng), y / 3.0 + 0.1 * normal(rng)])
                .collect()
        }
        Benchmark::Checkerboard => (0..n)
            .map(|_| {
                let x = 4.0 * rng.random::<f64>() - 2.0;
                let y = rng.random::<f64>() - 2.0 * rng.random_range(0..2) as f64 + x.floor().rem_euclid(2.0);
                [2.0 * x, 2.0 * y]
            })
            .collect(),
    };
    Ok(from_rows(rows))
}
