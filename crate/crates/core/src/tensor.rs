//! Third-order tensors and the n-mode product.
//!
//! Dense tensors are stored row-major over `(i, j, k)`, i.e. the flat offset
//! of entry `(i, j, k)` in a `(n1, n2, n3)` tensor is `(i * n2 + j) * n3 + k`.
//! The mode-`n` product `t ×ₙ M` contracts mode `n` of `t` against the
//! columns of `M`, so the result's extent along mode `n` is `M.rows()`.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, MatrixOperand};

pub type Dims = (usize, usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    pub fn extent(self, dims: Dims) -> usize {
        match self {
            Mode::One => dims.0,
            Mode::Two => dims.1,
            Mode::Three => dims.2,
        }
    }

    fn with_extent(self, dims: Dims, n: usize) -> Dims {
        match self {
            Mode::One => (n, dims.1, dims.2),
            Mode::Two => (dims.0, n, dims.2),
            Mode::Three => (dims.0, dims.1, n),
        }
    }

    /// Parse the 1-based mode number used in the notation `×₁`, `×₂`, `×₃`.
    pub fn from_number(n: usize) -> Option<Mode> {
        match n {
            1 => Some(Mode::One),
            2 => Some(Mode::Two),
            3 => Some(Mode::Three),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = match self {
            Mode::One => 1,
            Mode::Two => 2,
            Mode::Three => 3,
        };
        write!(f, "{n}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor3 {
    dims: Dims,
    values: Vec<f64>,
}

impl DenseTensor3 {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn filled(dims: Dims, v: f64) -> Self {
        Self {
            dims,
            values: vec![v; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_vec(dims: Dims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::InvalidInput(format!(
                "tensor of dims {dims:?} needs {} values, got {}",
                dims.0 * dims.1 * dims.2,
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                for k in 0..dims.2 {
                    values.push(f(i, j, k));
                }
            }
        }
        Self { dims, values }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims.1 + j) * self.dims.2 + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.values[o] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &DenseTensor3) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &DenseTensor3) {
        assert_eq!(self.dims, other.dims);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn scaled(&self, c: f64) -> DenseTensor3 {
        DenseTensor3 {
            dims: self.dims,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn sub(&self, other: &DenseTensor3) -> DenseTensor3 {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Largest `|a - b| / max(|a|, |b|, floor)` over all entries.
    pub fn max_rel_diff(&self, other: &DenseTensor3, floor: f64) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    pub fn mode_product<M: MatrixOperand>(&self, m: &M, mode: Mode) -> Result<DenseTensor3> {
        mode_product(self, m, mode)
    }

    /// Entries stored as a sparse tensor (exact zeros dropped).
    pub fn to_sparse(&self) -> Result<SparseTensor3> {
        let mut entries = Vec::new();
        for i in 0..self.dims.0 {
            for j in 0..self.dims.1 {
                for k in 0..self.dims.2 {
                    let v = self.get(i, j, k);
                    if v != 0.0 {
                        entries.push((i, j, k, v));
                    }
                }
            }
        }
        SparseTensor3::from_entries(self.dims, entries)
    }
}

/// Coordinate-format nonnegative tensor. Entries are kept sorted by `(i, j, k)`
/// with no duplicates and every stored value strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor3 {
    dims: Dims,
    entries: Vec<(usize, usize, usize, f64)>,
}

impl SparseTensor3 {
    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            entries: Vec::new(),
        }
    }

    /// Duplicate coordinates are summed; zero values are dropped.
    pub fn from_entries(
        dims: Dims,
        entries: impl IntoIterator<Item = (usize, usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<_> = entries.into_iter().collect();
        for &(i, j, k, v) in &entries {
            if i >= dims.0 || j >= dims.1 || k >= dims.2 {
                return Err(Error::OutOfBounds {
                    index: (i, j, k),
                    dims,
                });
            }
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::NegativeValue { value: v });
            }
        }
        entries.sort_by_key(|&(i, j, k, _)| (i, j, k));
        let mut merged: Vec<(usize, usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (i, j, k, v) in entries {
            match merged.last_mut() {
                Some(last) if (last.0, last.1, last.2) == (i, j, k) => last.3 += v,
                _ => merged.push((i, j, k, v)),
            }
        }
        merged.retain(|e| e.3 != 0.0);
        Ok(Self {
            dims,
            entries: merged,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn entries(&self) -> &[(usize, usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.entries.iter().map(|e| e.3 * e.3).sum()
    }

    pub fn to_dense(&self) -> DenseTensor3 {
        let mut out = DenseTensor3::zeros(self.dims);
        for &(i, j, k, v) in &self.entries {
            out.set(i, j, k, v);
        }
        out
    }

    pub fn mode_product<M: MatrixOperand>(&self, m: &M, mode: Mode) -> Result<DenseTensor3> {
        mode_product_sparse(self, m, mode)
    }
}

fn check_conformant<M: MatrixOperand>(dims: Dims, m: &M, mode: Mode) -> Result<()> {
    let expected = mode.extent(dims);
    if m.cols() != expected {
        return Err(Error::ModeMismatch {
            mode,
            expected,
            found: m.cols(),
        });
    }
    Ok(())
}

/// `t ×ₙ m`: `result[.., r, ..] = Σ_c m[r, c] · t[.., c, ..]`.
///
/// Every output entry is reduced in increasing `c` order, so the result does
/// not depend on the thread count.
pub fn mode_product<M: MatrixOperand>(t: &DenseTensor3, m: &M, mode: Mode) -> Result<DenseTensor3> {
    check_conformant(t.dims, m, mode)?;
    let (_, n2, n3) = t.dims;
    let rows = m.rows();
    let out_dims = mode.with_extent(t.dims, rows);
    let mut out = DenseTensor3::zeros(out_dims);
    if out.is_empty() {
        return Ok(out);
    }
    let src = &t.values;
    match mode {
        Mode::One => {
            let slab = n2 * n3;
            out.values.par_chunks_mut(slab).enumerate().for_each(|(r, dst)| {
                m.for_each_in_row(r, |c, w| {
                    for (d, s) in dst.iter_mut().zip(&src[c * slab..(c + 1) * slab]) {
                        *d += w * s;
                    }
                });
            });
        }
        Mode::Two => {
            out.values.par_chunks_mut(rows * n3).enumerate().for_each(|(i, dst)| {
                let base = i * n2 * n3;
                for r in 0..rows {
                    let dst_row = &mut dst[r * n3..(r + 1) * n3];
                    m.for_each_in_row(r, |c, w| {
                        let s = &src[base + c * n3..base + (c + 1) * n3];
                        for (d, x) in dst_row.iter_mut().zip(s) {
                            *d += w * x;
                        }
                    });
                }
            });
        }
        Mode::Three => {
            out.values.par_chunks_mut(rows).enumerate().for_each(|(fiber, dst)| {
                let s = &src[fiber * n3..(fiber + 1) * n3];
                for (r, d) in dst.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    m.for_each_in_row(r, |c, w| acc += w * s[c]);
                    *d = acc;
                }
            });
        }
    }
    Ok(out)
}

/// `t ×ₙ m` for a sparse tensor, without densifying the input.
pub fn mode_product_sparse<M: MatrixOperand>(
    t: &SparseTensor3,
    m: &M,
    mode: Mode,
) -> Result<DenseTensor3> {
    check_conformant(t.dims, m, mode)?;
    let out_dims = mode.with_extent(t.dims, m.rows());
    let mut out = DenseTensor3::zeros(out_dims);
    if out.is_empty() || t.entries.is_empty() {
        return Ok(out);
    }
    // Column-wise access: for each contracted index c, the rows r with m[r, c] != 0.
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m.cols()];
    for r in 0..m.rows() {
        m.for_each_in_row(r, |c, w| by_col[c].push((r, w)));
    }
    for &(i, j, k, v) in &t.entries {
        match mode {
            Mode::One => {
                for &(r, w) in &by_col[i] {
                    let o = out.offset(r, j, k);
                    out.values[o] += w * v;
                }
            }
            Mode::Two => {
                for &(r, w) in &by_col[j] {
                    let o = out.offset(i, r, k);
                    out.values[o] += w * v;
                }
            }
            Mode::Three => {
                for &(r, w) in &by_col[k] {
                    let o = out.offset(i, j, r);
                    out.values[o] += w * v;
                }
            }
        }
    }
    Ok(out)
}

/// Sum out one axis. Mode 3 sums over `k` giving an `(n1, n2)` matrix, mode 2
/// sums over `j` giving `(n1, n3)`, mode 1 sums over `i` giving `(n2, n3)`.
pub fn accumulate_mode(t: &DenseTensor3, mode: Mode) -> DenseMatrix {
    let (n1, n2, n3) = t.dims;
    let (rows, cols) = match mode {
        Mode::One => (n2, n3),
        Mode::Two => (n1, n3),
        Mode::Three => (n1, n2),
    };
    let mut out = vec![0.0; rows * cols];
    for i in 0..n1 {
        for j in 0..n2 {
            for k in 0..n3 {
                let v = t.get(i, j, k);
                let idx = match mode {
                    Mode::One => j * cols + k,
                    Mode::Two => i * cols + k,
                    Mode::Three => i * cols + j,
                };
                out[idx] += v;
            }
        }
    }
    DenseMatrix::from_vec(rows, cols, out).expect("shape computed above")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::SparseMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent triple-loop evaluation of `t ×ₙ m` on dense inputs.
    fn brute_mode_product(t: &DenseTensor3, m: &DenseMatrix, mode: Mode) -> DenseTensor3 {
        let (n1, n2, n3) = t.dims();
        let (rows, cols) = m.shape();
        let dims = match mode {
            Mode::One => (rows, n2, n3),
            Mode::Two => (n1, rows, n3),
            Mode::Three => (n1, n2, rows),
        };
        DenseTensor3::from_fn(dims, |a, b, c| {
            let mut acc = 0.0;
            for x in 0..cols {
                let (r, v) = match mode {
                    Mode::One => (a, t.get(x, b, c)),
                    Mode::Two => (b, t.get(a, x, c)),
                    Mode::Three => (c, t.get(a, b, x)),
                };
                acc += m.get(r, x) * v;
            }
            acc
        })
    }

    fn random_tensor(rng: &mut ChaCha8Rng, dims: Dims) -> DenseTensor3 {
        DenseTensor3::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_mode_two_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_tensor(&mut rng, (2, 2, 2));
        let out = mode_product(&t, &DenseMatrix::identity(2), Mode::Two).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn all_ones_row_sums_mode_two() {
        let t = DenseTensor3::filled((2, 3, 2), 1.0);
        let row = DenseMatrix::from_rows(&[vec![1.0, 1.0, 1.0]]);
        let out = mode_product(&t, &row, Mode::Two).unwrap();
        assert_eq!(out.dims(), (2, 1, 2));
        // Triple-loop oracle: every output entry sums three ones.
        assert_eq!(out, brute_mode_product(&t, &row, Mode::Two));
        assert!(out.values().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn random_mode_two_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = random_tensor(&mut rng, (4, 5, 6));
        let m = random_matrix(&mut rng, 3, 5);
        let fast = mode_product(&t, &m, Mode::Two).unwrap();
        let slow = brute_mode_product(&t, &m, Mode::Two);
        assert!(fast.max_rel_diff(&slow, 1e-300) <= 1e-12);
    }

    #[test]
    fn mismatch_names_mode_and_extents() {
        let t = DenseTensor3::zeros((2, 3, 4));
        let err = mode_product(&t, &DenseMatrix::zeros(2, 2), Mode::Three).unwrap_err();
        match err {
            Error::ModeMismatch {
                mode,
                expected,
                found,
            } => {
                assert_eq!((mode, expected, found), (Mode::Three, 4, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
        let s = SparseTensor3::empty((2, 3, 4));
        assert!(mode_product_sparse(&s, &DenseMatrix::zeros(1, 5), Mode::One).is_err());
    }

    #[test]
    fn sparse_empty_and_single_entry() {
        let s = SparseTensor3::empty((3, 2, 2));
        let out = mode_product_sparse(&s, &DenseMatrix::identity(2), Mode::Three).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));

        let s = SparseTensor3::from_entries((2, 2, 2), [(0, 0, 0, 1.0)]).unwrap();
        let out = mode_product_sparse(&s, &SparseMatrix::identity(2), Mode::One).unwrap();
        assert_eq!(out.get(0, 0, 0), 1.0);
        assert_eq!(out.sum(), 1.0);
    }

    #[test]
    fn sparse_five_percent_matches_dense_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = (6, 7, 8);
        let mut entries = Vec::new();
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                for k in 0..dims.2 {
                    if rng.random_bool(0.05) {
                        entries.push((i, j, k, rng.random_range(0.1..2.0)));
                    }
                }
            }
        }
        let s = SparseTensor3::from_entries(dims, entries).unwrap();
        let d = s.to_dense();
        for mode in Mode::ALL {
            let m = random_matrix(&mut rng, 4, mode.extent(dims));
            let a = mode_product_sparse(&s, &m, mode).unwrap();
            let b = mode_product(&d, &m, mode).unwrap();
            assert!(a.max_rel_diff(&b, 1e-300) <= 1e-12, "mode {mode}");
        }
    }

    #[test]
    fn accumulate_examples() {
        assert!(accumulate_mode(&DenseTensor3::zeros((2, 3, 4)), Mode::Three)
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
        let ones = DenseTensor3::filled((2, 3, 4), 1.0);
        let m3 = accumulate_mode(&ones, Mode::Three);
        assert_eq!(m3.shape(), (2, 3));
        assert!(m3.as_slice().iter().all(|&v| v == 4.0));
        let m2 = accumulate_mode(&ones, Mode::Two);
        assert_eq!(m2.shape(), (2, 4));
        assert!(m2.as_slice().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn frob_norm_examples() {
        assert_eq!(DenseTensor3::zeros((2, 2, 2)).frob_norm_sq(), 0.0);
        let s = SparseTensor3::from_entries((2, 2, 2), [(1, 0, 1, 3.0)]).unwrap();
        assert_eq!(s.frob_norm_sq(), 9.0);
        assert_eq!(s.to_dense().frob_norm_sq(), 9.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&mut rng, (3, 4, 5));
        let (n1, n2, n3) = t.dims();
        let mut oracle = 0.0;
        for i in 0..n1 {
            for j in 0..n2 {
                for k in 0..n3 {
                    oracle += t.get(i, j, k) * t.get(i, j, k);
                }
            }
        }
        assert!((t.frob_norm_sq() - oracle).abs() <= 1e-12 * oracle);
    }

    #[test]
    fn duplicate_coordinates_are_summed() {
        let s = SparseTensor3::from_entries((1, 1, 2), [(0, 0, 1, 1.0), (0, 0, 1, 2.0)]).unwrap();
        assert_eq!(s.entries(), &[(0, 0, 1, 3.0)]);
        assert!(SparseTensor3::from_entries((1, 1, 1), [(0, 0, 1, 1.0)]).is_err());
        assert!(SparseTensor3::from_entries((1, 1, 1), [(0, 0, 0, -1.0)]).is_err());
    }

    fn dims_strategy() -> impl Strategy<Value = Dims> {
        (1usize..7, 1usize..7, 1usize..7)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn linearity_in_the_matrix(dims in dims_strategy(), rows in 1usize..5, seed in any::<u64>(), mode_n in 1usize..4) {
            let mode = Mode::from_number(mode_n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(&mut rng, dims);
            let a = random_matrix(&mut rng, rows, mode.extent(dims));
            let b = random_matrix(&mut rng, rows, mode.extent(dims));
            let lhs = mode_product(&t, &a.add(&b), mode).unwrap();
            let mut rhs = mode_product(&t, &a, mode).unwrap();
            rhs.axpy(1.0, &mode_product(&t, &b, mode).unwrap());
            prop_assert!(lhs.max_rel_diff(&rhs, 1.0) <= 1e-10);
        }

        #[test]
        fn distinct_modes_commute(dims in dims_strategy(), r2 in 1usize..5, r3 in 1usize..5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(&mut rng, dims);
            let m = random_matrix(&mut rng, r2, dims.1);
            let n = random_matrix(&mut rng, r3, dims.2);
            let a = t.mode_product(&m, Mode::Two).unwrap().mode_product(&n, Mode::Three).unwrap();
            let b = t.mode_product(&n, Mode::Three).unwrap().mode_product(&m, Mode::Two).unwrap();
            prop_assert!(a.max_rel_diff(&b, 1.0) <= 1e-10);
        }

        #[test]
        fn accumulation_conserves_mass(dims in dims_strategy(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = DenseTensor3::from_fn(dims, |_, _, _| rng.random_range(0.0..1.0));
            for mode in Mode::ALL {
                let s = accumulate_mode(&t, mode).sum();
                prop_assert!((s - t.sum()).abs() <= 1e-10 * t.sum().max(1.0));
            }
        }

        #[test]
        fn sparse_dense_equivalence(n1 in 1usize..21, n2 in 1usize..21, n3 in 1usize..21, rows in 1usize..6, seed in any::<u64>()) {
            let dims = (n1, n2, n3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut entries = Vec::new();
            for i in 0..n1 { for j in 0..n2 { for k in 0..n3 {
                if rng.random_bool(0.05) { entries.push((i, j, k, rng.random_range(0.1..1.0))); }
            }}}
            let s = SparseTensor3::from_entries(dims, entries).unwrap();
            let d = s.to_dense();
            prop_assert!((s.frob_norm_sq() - d.frob_norm_sq()).abs() <= 1e-12 * d.frob_norm_sq().max(1.0));
            for mode in Mode::ALL {
                let m = random_matrix(&mut rng, rows, mode.extent(dims));
                let a = mode_product_sparse(&s, &m, mode).unwrap();
                let b = mode_product(&d, &m, mode).unwrap();
                prop_assert!(a.max_rel_diff(&b, 1.0) <= 1e-10);
            }
        }
    }
}
