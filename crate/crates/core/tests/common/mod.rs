#![allow(dead_code)]

use ordibench::align::{Point, SimilarityTransform};
use ordibench::data::LabelSet;
use rand::Rng;

/// Finite-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(&x);
            x[i] = orig - FD_STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, 1e-8)` in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

/// Random label set: contiguous or with gaps, `k` values, starting in `0..30`.
pub fn random_labels(rng: &mut impl Rng, k: usize) -> LabelSet {
    let mut v = rng.random_range(0..30i64);
    let gaps = rng.random_bool(0.5);
    let mut values = Vec::with_capacity(k);
    for _ in 0..k {
        values.push(v);
        v += if gaps { rng.random_range(1..4) } else { 1 };
    }
    LabelSet::new(values).unwrap()
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; keeps the helpers free of distribution crates
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Sum of squared distances after mapping `src` with scale `s`, rotation
/// `theta` and translation `t`.
pub fn sq_residual(src: &[Point], dst: &[Point], s: f64, theta: f64, t: [f64; 2]) -> f64 {
    let (sn, cs) = theta.sin_cos();
    src.iter()
        .zip(dst)
        .map(|(p, q)| {
            let x = s * (cs * p[0] - sn * p[1]) + t[0];
            let y = s * (sn * p[0] + cs * p[1]) + t[1];
            (x - q[0]).powi(2) + (y - q[1]).powi(2)
        })
        .sum()
}

/// Translation minimizing the residual for fixed scale and rotation.
fn best_translation(src: &[Point], dst: &[Point], s: f64, theta: f64) -> [f64; 2] {
    let n = src.len() as f64;
    let (sn, cs) = theta.sin_cos();
    let mut t = [0.0, 0.0];
    for (p, q) in src.iter().zip(dst) {
        t[0] += q[0] - s * (cs * p[0] - sn * p[1]);
        t[1] += q[1] - s * (sn * p[0] + cs * p[1]);
    }
    [t[0] / n, t[1] / n]
}

/// Coarse-to-fine grid search over scale and rotation down to a step of
/// `resolution`, with the translation solved exactly at every grid point.
/// Returns the best residual found.
pub fn grid_search_similarity(src: &[Point], dst: &[Point], scale_range: (f64, f64), resolution: f64) -> f64 {
    let eval = |s: f64, th: f64| sq_residual(src, dst, s, th, best_translation(src, dst, s, th));
    let mut step = 0.01;
    let (mut best_s, mut best_th, mut best) = (1.0, 0.0, f64::INFINITY);
    let mut s = scale_range.0;
    while s <= scale_range.1 {
        let mut th = -std::f64::consts::PI;
        while th <= std::f64::consts::PI {
            let r = eval(s, th);
            if r < best {
                (best_s, best_th, best) = (s, th, r);
            }
            th += step;
        }
        s += step;
    }
    while step > resolution * 1.000001 {
        let fine = (step / 10.0).max(resolution);
        let (cs, cth) = (best_s, best_th);
        let span = (2.0 * step / fine).ceil() as i64;
        for i in -span..=span {
            for j in -span..=span {
                let (s, th) = (cs + i as f64 * fine, cth + j as f64 * fine);
                if s <= 0.0 {
                    continue;
                }
                let r = eval(s, th);
                if r < best {
                    (best_s, best_th, best) = (s, th, r);
                }
            }
        }
        step = fine;
    }
    best
}

pub fn transform_points(t: &SimilarityTransform, pts: &[Point]) -> Vec<Point> {
    pts.iter().map(|p| t.apply(*p)).collect()
}
