//! Shared instance builders for the integration tests.

#![allow(dead_code)]

use dctmc_core::linalg::{c64, CMatrix, CVector};
use dctmc_core::operators::{
    forward_solve, make_phantom, Geometry, GeometryConfig, Layout, OperatorSet, PhantomShape, PhantomSpec, Potential,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Circular complex Gaussian entries with unit variance.
pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c64(s * re, s * im)
    })
}

pub fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> CVector {
    gaussian(n, 1, rng).column(0).into_owned()
}

/// Random complex symmetric matrix with zero diagonal, entries of size `scale`.
pub fn symmetric(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> CMatrix {
    let g = gaussian(n, n, rng);
    let mut s = (&g + g.transpose()) * c64(scale * 0.5, 0.0);
    s.fill_diagonal(c64(0.0, 0.0));
    s
}

/// Well-conditioned square matrix: Gaussian plus a dominant identity.
pub fn invertible(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    gaussian(n, n, rng) * c64(1.0 / (n as f64).sqrt(), 0.0) + CMatrix::identity(n, n) * c64(2.0, 0.0)
}

/// Random potential with every entry active; `|Re| ∈ [0.5, 1.5] scale`.
pub fn dense_potential(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Potential {
    Potential::from_values(CVector::from_fn(n, |_, _| {
        c64(scale * rng.random_range(0.5..1.5), scale * rng.random_range(-0.3..0.3))
    }))
}

pub fn geometry(l: usize, k: f64) -> Geometry {
    Geometry::new(GeometryConfig {
        grid_size: l,
        wavenumber: c64(k, 0.0),
        ..GeometryConfig::default()
    })
    .unwrap()
}

pub fn random_geometry(rng: &mut ChaCha8Rng) -> Geometry {
    let l = if rng.random_bool(0.5) { 3 } else { 4 };
    let pitch = rng.random_range(0.5..1.5);
    let kh = rng.random_range(0.2..6.0);
    Geometry::new(GeometryConfig {
        grid_size: l,
        pitch,
        wavenumber: c64(kh / pitch, rng.random_range(0.0..0.1)),
        source_standoff: rng.random_range(1.0..3.0),
        detector_standoff: rng.random_range(1.0..3.0),
        layout: if rng.random_bool(0.7) {
            Layout::Transmission
        } else {
            Layout::Reflection
        },
        ..GeometryConfig::default()
    })
    .unwrap()
}

/// Sparse phantom on a sampled geometry together with its noiseless data.
pub fn sparse_instance(l: usize, k: f64, count: usize, contrast: f64, seed: u64) -> (OperatorSet, Potential, CMatrix) {
    let g = geometry(l, k);
    let ops = g.sample_operators();
    let truth = make_phantom(
        &PhantomSpec {
            shape: PhantomShape::Sparse { count },
            contrast: c64(contrast, 0.1 * contrast),
            seed,
            ..PhantomSpec::default()
        },
        &g,
    )
    .unwrap();
    let phi = forward_solve(&truth, &ops).unwrap();
    (ops, truth, phi)
}

/// Largest entrywise difference relative to the largest reference entry.
pub fn entrywise_relative(x: &CMatrix, reference: &CMatrix) -> f64 {
    let scale = reference.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let diff = x
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Spectral norm.
pub fn norm_2(m: &CMatrix) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}
