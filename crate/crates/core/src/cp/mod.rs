//! CP decomposition by alternating least squares over chunked COO data.
//!
//! The kernels read a [`TensorView`]: the tensor's shape plus an ordered list
//! of `(coords, values)` chunks. A chunk may live on the heap or in shared
//! memory; the arithmetic and its order are the same either way, so the same
//! data in the same chunk order yields bit-identical results.

mod kruskal;

pub use kruskal::{KruskalModel, Matrix};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand::rngs::StdRng;
use thiserror::Error;

/// Relative cutoff for singular values when pseudo-inverting a Gram product.
pub const PINV_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CpError {
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("need at least one iteration")]
    ZeroIterations,
    #[error("mode {mode} out of range for an order-{order} tensor")]
    BadMode { mode: usize, order: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Borrowed COO data split into chunks.
#[derive(Debug, Clone)]
pub struct TensorView<'a> {
    dims: &'a [usize],
    chunks: Vec<(&'a [u64], &'a [f64])>,
}

impl<'a> TensorView<'a> {
    /// Each chunk holds element-major coordinates and the matching values.
    pub fn new(dims: &'a [usize], chunks: Vec<(&'a [u64], &'a [f64])>) -> Self {
        for (coords, values) in &chunks {
            assert_eq!(coords.len(), values.len() * dims.len(), "chunk lengths disagree");
        }
        Self { dims, chunks }
    }

    pub fn dims(&self) -> &[usize] {
        self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn nnz(&self) -> usize {
        self.chunks.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn chunks(&self) -> &[(&'a [u64], &'a [f64])] {
        &self.chunks
    }

    /// `‖X‖²`, summed in chunk order.
    pub fn norm_squared(&self) -> f64 {
        self.chunks
            .iter()
            .flat_map(|(_, v)| v.iter())
            .fold(0.0, |acc, &v| acc + v * v)
    }

    pub fn value_sum(&self) -> f64 {
        self.chunks
            .iter()
            .flat_map(|(_, v)| v.iter())
            .fold(0.0, |acc, &v| acc + v)
    }
}

fn check_factors(view: &TensorView<'_>, factors: &[Matrix]) -> Result<usize, CpError> {
    if factors.len() != view.order() {
        return Err(CpError::Shape(format!(
            "{} factors for an order-{} tensor",
            factors.len(),
            view.order()
        )));
    }
    let rank = factors.first().map_or(0, Matrix::cols);
    for (m, (f, &n)) in factors.iter().zip(view.dims()).enumerate() {
        if f.rows() != n || f.cols() != rank {
            return Err(CpError::Shape(format!(
                "factor {m} is {}x{}, expected {n}x{rank}",
                f.rows(),
                f.cols()
            )));
        }
    }
    Ok(rank)
}

/// Matricized tensor times Khatri-Rao product for `mode`.
///
/// Row `i` of the result is the sum, over elements whose mode-`mode`
/// coordinate is `i`, of the value times the elementwise product of the
/// other modes' factor rows.
pub fn mttkrp(view: &TensorView<'_>, factors: &[Matrix], mode: usize) -> Result<Matrix, CpError> {
    let d = view.order();
    if mode >= d {
        return Err(CpError::BadMode { mode, order: d });
    }
    let rank = check_factors(view, factors)?;
    let mut out = Matrix::zeros(view.dims()[mode], rank);
    let mut scratch = vec![0.0; rank];
    for (coords, values) in view.chunks() {
        for (coord, &v) in coords.chunks_exact(d).zip(values.iter()) {
            scratch.fill(v);
            for (q, f) in factors.iter().enumerate() {
                if q == mode {
                    continue;
                }
                for (s, &x) in scratch.iter_mut().zip(f.row(coord[q] as usize)) {
                    *s *= x;
                }
            }
            for (o, &s) in out.row_mut(coord[mode] as usize).iter_mut().zip(&scratch) {
                *o += s;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpOptions {
    pub rank: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for CpOptions {
    fn default() -> Self {
        Self {
            rank: 16,
            iterations: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpResult {
    pub model: KruskalModel,
    /// `1 - ‖X - model‖ / ‖X‖` after the last iteration.
    pub fit: f64,
    /// Fit after every iteration.
    pub fit_history: Vec<f64>,
    /// Whether any Gram product was numerically singular.
    pub rank_deficient: bool,
}

/// Uniform(0, 1) starting factors drawn mode by mode, row-major.
pub fn random_factors(dims: &[usize], rank: usize, seed: u64) -> Vec<Matrix> {
    let mut rng = StdRng::seed_from_u64(seed);
    dims.iter()
        .map(|&n| Matrix::from_row_major(n, rank, (0..n * rank).map(|_| rng.gen::<f64>()).collect()))
        .collect()
}

/// Pseudo-inverse of a square matrix through its SVD. The flag reports
/// whether any singular value fell below the relative cutoff.
fn pseudo_inverse(g: &Matrix) -> (Matrix, bool) {
    let r = g.rows();
    let svd = DMatrix::from_row_slice(r, r, g.as_slice()).svd(true, true);
    let max_sv = svd.singular_values.max();
    let cutoff = PINV_TOLERANCE * max_sv;
    let deficient = max_sv == 0.0 || svd.singular_values.iter().any(|&s| s <= cutoff);
    let inv = svd
        .pseudo_inverse(cutoff.max(f64::MIN_POSITIVE))
        .expect("both singular vector sets were computed");
    let mut out = Matrix::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            out[(i, j)] = inv[(i, j)];
        }
    }
    (out, deficient)
}

/// Divides every column by its 2-norm and returns the norms. Zero columns
/// are left alone with weight zero.
fn normalize_columns(f: &mut Matrix) -> Vec<f64> {
    let norms = f.column_norms();
    let cols = f.cols();
    for i in 0..f.rows() {
        let row = f.row_mut(i);
        for (x, &n) in row.iter_mut().zip(&norms) {
            if n > 0.0 {
                *x /= n;
            }
        }
    }
    debug_assert_eq!(norms.len(), cols);
    norms
}

/// Rank-`R` CP decomposition by alternating least squares.
///
/// Each iteration updates every mode in order: the new factor is the
/// MTTKRP times the pseudo-inverse of the Hadamard product of the other
/// modes' Gram matrices, then its columns are normalized into the weights.
/// The fit uses `‖X‖²` from the values, `⟨X, model⟩` from the last mode's
/// MTTKRP, and `‖model‖²` from the Gram matrices, so the tensor is never
/// densified, which assumes the coordinates are distinct.
pub fn cp_als(view: &TensorView<'_>, opts: &CpOptions) -> Result<CpResult, CpError> {
    if opts.rank == 0 {
        return Err(CpError::ZeroRank);
    }
    if opts.iterations == 0 {
        return Err(CpError::ZeroIterations);
    }
    let d = view.order();
    let rank = opts.rank;
    let mut factors = random_factors(view.dims(), rank, opts.seed);
    let mut grams: Vec<Matrix> = factors.iter().map(Matrix::gram).collect();
    let mut weights = vec![1.0; rank];
    let norm_x2 = view.norm_squared();
    let mut fit_history = Vec::with_capacity(opts.iterations);
    let mut rank_deficient = false;

    for _ in 0..opts.iterations {
        let mut last_mttkrp = None;
        for m in 0..d {
            let mt = mttkrp(view, &factors, m)?;
            let mut g = Matrix::filled(rank, rank, 1.0);
            for (q, gram) in grams.iter().enumerate() {
                if q != m {
                    g.hadamard_assign(gram);
                }
            }
            let (pinv, deficient) = pseudo_inverse(&g);
            if deficient && !rank_deficient {
                log::warn!("Gram product for mode {m} is numerically singular; using pseudo-inverse");
            }
            rank_deficient |= deficient;
            let mut updated = mt.matmul(&pinv);
            weights = normalize_columns(&mut updated);
            grams[m] = updated.gram();
            factors[m] = updated;
            if m == d - 1 {
                last_mttkrp = Some(mt);
            }
        }
        let mt = last_mttkrp.expect("order is at least 1");
        let last = &factors[d - 1];
        let mut inner = 0.0;
        for i in 0..last.rows() {
            for ((&a, &b), &w) in mt.row(i).iter().zip(last.row(i)).zip(&weights) {
                inner += a * b * w;
            }
        }
        let mut h = Matrix::filled(rank, rank, 1.0);
        for g in &grams {
            h.hadamard_assign(g);
        }
        let mut norm_m2 = 0.0;
        for a in 0..rank {
            for b in 0..rank {
                norm_m2 += weights[a] * weights[b] * h[(a, b)];
            }
        }
        let residual2 = (norm_x2 + norm_m2 - 2.0 * inner).max(0.0);
        let fit = if norm_x2 > 0.0 {
            1.0 - residual2.sqrt() / norm_x2.sqrt()
        } else if norm_m2 == 0.0 {
            1.0
        } else {
            0.0
        };
        fit_history.push(fit);
    }

    Ok(CpResult {
        model: KruskalModel { weights, factors },
        fit: *fit_history.last().expect("at least one iteration"),
        fit_history,
        rank_deficient,
    })
}
