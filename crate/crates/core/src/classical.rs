//! Binary linear block codes and their products over GF(2).
//!
//! Used as an exact reference for the product construction: parameters
//! multiply across components, the product generator is the Kronecker
//! product of the component generators, and row-then-column encoding
//! commutes with column-then-row encoding.
//!
//! # Vectorization
//!
//! A 2D message `U` is stored as a `k2 x k1` matrix whose rows are encoded
//! by `C1` (length `k1 -> n1`) and whose columns are encoded by `C2`. With
//! the column-major vectorization `vec(U)[i1 * k2 + i2] = U[i2][i1]` (and
//! likewise for the `n2 x n1` codeword), the product codeword satisfies
//! `vec(X) = vec(U) * (G1 ⊗ G2)`. Row-major vectorization instead pairs
//! with `G2 ⊗ G1`.
//!
//! For `M` dimensions, [`ProductArray`] stores axis `m - 1` for dimension
//! `m`, row-major, so its flat data is already the vectorization that
//! pairs with `G1 ⊗ G2 ⊗ ... ⊗ GM`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense binary matrix, entries 0/1, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1);
        }
        m
    }

    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("bit matrix", "ragged rows"));
        }
        let data: Vec<u8> = rows.iter().flat_map(|r| r.iter().map(|&b| b & 1)).collect();
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, bit: u8) {
        self.data[r * self.cols + c] = bit & 1;
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// Row vector times matrix over GF(2).
    pub fn mul_vec(&self, v: &[u8]) -> Result<Vec<u8>> {
        if v.len() != self.rows {
            return Err(Error::dim(
                "gf2 vector-matrix product",
                format!(
                    "vector of length {} against {}x{}",
                    v.len(),
                    self.rows,
                    self.cols
                ),
            ));
        }
        let mut out = vec![0u8; self.cols];
        for (r, &bit) in v.iter().enumerate() {
            if bit & 1 == 1 {
                for (o, &g) in out.iter_mut().zip(self.row(r)) {
                    *o ^= g;
                }
            }
        }
        Ok(out)
    }

    /// Rank over GF(2) by Gaussian elimination.
    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        let mut rank = 0;
        for c in 0..m.cols {
            let Some(pivot) = (rank..m.rows).find(|&r| m.get(r, c) == 1) else {
                continue;
            };
            if pivot != rank {
                for j in 0..m.cols {
                    m.data.swap(pivot * m.cols + j, rank * m.cols + j);
                }
            }
            for r in 0..m.rows {
                if r != rank && m.get(r, c) == 1 {
                    for j in 0..m.cols {
                        let b = m.get(rank, j);
                        m.data[r * m.cols + j] ^= b;
                    }
                }
            }
            rank += 1;
            if rank == m.rows {
                break;
            }
        }
        rank
    }
}

/// Kronecker product `a ⊗ b`; entry `((i_a, i_b), (j_a, j_b))` is
/// `a[i_a][j_a] * b[i_b][j_b]` with `a`'s index most significant.
pub fn kronecker(a: &BitMatrix, b: &BitMatrix) -> BitMatrix {
    let mut out = BitMatrix::zeros(a.rows * b.rows, a.cols * b.cols);
    for ia in 0..a.rows {
        for ja in 0..a.cols {
            if a.get(ia, ja) == 0 {
                continue;
            }
            for ib in 0..b.rows {
                for jb in 0..b.cols {
                    out.set(ia * b.rows + ib, ja * b.cols + jb, b.get(ib, jb));
                }
            }
        }
    }
    out
}

/// An `(n, k)` binary linear code given by a full-rank `k x n` generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearCode {
    generator: BitMatrix,
}

impl LinearCode {
    pub fn new(generator: BitMatrix) -> Result<Self> {
        let (k, n) = (generator.rows(), generator.cols());
        if k == 0 || k > n {
            return Err(Error::Config(format!(
                "generator must be k x n with 0 < k <= n, got {k}x{n}"
            )));
        }
        if generator.rank() != k {
            return Err(Error::Config(
                "generator matrix is not full row rank over GF(2)".into(),
            ));
        }
        Ok(Self { generator })
    }

    pub fn repetition(n: usize) -> Result<Self> {
        Self::new(BitMatrix::from_rows(&[&vec![1u8; n]])?)
    }

    /// Systematic single parity check code `(n, n - 1)`.
    pub fn single_parity_check(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("single parity check needs n >= 2".into()));
        }
        let mut g = BitMatrix::zeros(n - 1, n);
        for i in 0..n - 1 {
            g.set(i, i, 1);
            g.set(i, n - 1, 1);
        }
        Self::new(g)
    }

    /// Systematic `(7, 4)` Hamming code.
    pub fn hamming_7_4() -> Self {
        let g = BitMatrix::from_rows(&[
            &[1, 0, 0, 0, 1, 1, 0],
            &[0, 1, 0, 0, 1, 0, 1],
            &[0, 0, 1, 0, 0, 1, 1],
            &[0, 0, 0, 1, 1, 1, 1],
        ])
        .expect("rectangular");
        Self::new(g).expect("full rank")
    }

    pub fn n(&self) -> usize {
        self.generator.cols()
    }

    pub fn k(&self) -> usize {
        self.generator.rows()
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.n() as f64
    }

    pub fn generator(&self) -> &BitMatrix {
        &self.generator
    }

    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>> {
        self.generator.mul_vec(message)
    }

    /// Product code with generator `self ⊗ other`.
    pub fn product(&self, other: &LinearCode) -> LinearCode {
        LinearCode {
            generator: kronecker(&self.generator, &other.generator),
        }
    }

    pub fn params(&self) -> ComponentParams {
        ComponentParams {
            n: self.n(),
            k: self.k(),
        }
    }
}

pub const MAX_ENUMERATION_K: usize = 20;

/// Minimum Hamming weight over all `2^k - 1` nonzero codewords.
pub fn min_distance_bruteforce(code: &LinearCode) -> Result<usize> {
    let k = code.k();
    if k > MAX_ENUMERATION_K {
        return Err(Error::Config(format!(
            "brute-force distance limited to k <= {MAX_ENUMERATION_K}, got k = {k}"
        )));
    }
    // Gray-code walk: each step XORs one generator row into the codeword.
    let g = code.generator();
    let mut word = vec![0u8; code.n()];
    let mut best = usize::MAX;
    for step in 1u64..(1u64 << k) {
        let row = step.trailing_zeros() as usize;
        for (w, &b) in word.iter_mut().zip(g.row(row)) {
            *w ^= b;
        }
        let weight = word.iter().filter(|&&b| b == 1).count();
        best = best.min(weight);
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub n: usize,
    pub k: usize,
}

/// Per-dimension `(n_m, k_m)` of an `M`-dimensional product code, with the
/// derived `n`, `k`, `R` (and `d` when every component distance is known).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductCodeParams {
    pub components: Vec<ComponentParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<usize>>,
}

impl ProductCodeParams {
    pub fn new(components: Vec<ComponentParams>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config(
                "product code needs at least one component".into(),
            ));
        }
        if let Some(bad) = components.iter().find(|c| c.k == 0 || c.k > c.n) {
            return Err(Error::Config(format!(
                "component needs 0 < k <= n, got {bad:?}"
            )));
        }
        Ok(Self {
            components,
            distances: None,
        })
    }

    /// The 2D geometry `(n1, k1) x (n2, k2)`.
    pub fn two_d(n1: usize, k1: usize, n2: usize, k2: usize) -> Result<Self> {
        Self::new(vec![
            ComponentParams { n: n1, k: k1 },
            ComponentParams { n: n2, k: k2 },
        ])
    }

    pub fn with_distances(mut self, distances: Vec<usize>) -> Result<Self> {
        if distances.len() != self.components.len() {
            return Err(Error::Config("one distance per component required".into()));
        }
        self.distances = Some(distances);
        Ok(self)
    }

    pub fn dims(&self) -> usize {
        self.components.len()
    }

    pub fn n(&self) -> usize {
        self.components.iter().map(|c| c.n).product()
    }

    pub fn k(&self) -> usize {
        self.components.iter().map(|c| c.k).product()
    }

    /// `R = k / n`, equal to the product of the component rates.
    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.n() as f64
    }

    pub fn d(&self) -> Option<usize> {
        self.distances.as_ref().map(|d| d.iter().product())
    }

    pub fn component(&self, m: usize) -> ComponentParams {
        self.components[m]
    }
}

/// `M`-dimensional binary array; axis `m` holds dimension `m + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProductArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl ProductArray {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::dim(
                "product array",
                format!("{dims:?} vs {} values", data.len()),
            ));
        }
        Ok(Self { dims, data })
    }
}

/// Encode each dimension in turn: every fiber along axis `m` is multiplied
/// by `G_{m+1}`.
pub fn encode_product_nd(codes: &[LinearCode], message: &ProductArray) -> Result<ProductArray> {
    if codes.len() != message.dims.len() {
        return Err(Error::dim(
            "encode_product",
            format!(
                "{} component codes for a {}-dimensional message",
                codes.len(),
                message.dims.len()
            ),
        ));
    }
    for (m, (code, &len)) in codes.iter().zip(&message.dims).enumerate() {
        if code.k() != len {
            return Err(Error::dim(
                "encode_product",
                format!(
                    "dimension {} has length {len}, code C{} expects k = {}",
                    m + 1,
                    m + 1,
                    code.k()
                ),
            ));
        }
    }
    let mut current = message.clone();
    for (axis, code) in codes.iter().enumerate() {
        current = encode_axis(code, &current, axis)?;
    }
    Ok(current)
}

fn encode_axis(code: &LinearCode, array: &ProductArray, axis: usize) -> Result<ProductArray> {
    let outer: usize = array.dims[..axis].iter().product();
    let inner: usize = array.dims[axis + 1..].iter().product();
    let (k, n) = (code.k(), code.n());
    let mut dims = array.dims.clone();
    dims[axis] = n;
    let mut data = vec![0u8; outer * n * inner];
    let mut fiber = vec![0u8; k];
    for o in 0..outer {
        for i in 0..inner {
            for (j, f) in fiber.iter_mut().enumerate() {
                *f = array.data[(o * k + j) * inner + i];
            }
            let encoded = code.encode(&fiber)?;
            for (j, &b) in encoded.iter().enumerate() {
                data[(o * n + j) * inner + i] = b;
            }
        }
    }
    ProductArray::new(dims, data)
}

/// Rows of the `k2 x k1` message by `c1`, then columns by `c2`.
pub fn encode_product(c1: &LinearCode, c2: &LinearCode, u: &BitMatrix) -> Result<BitMatrix> {
    check_message(c1, c2, u)?;
    let mut rows_done = BitMatrix::zeros(u.rows(), c1.n());
    for r in 0..u.rows() {
        for (c, b) in c1.encode(u.row(r))?.into_iter().enumerate() {
            rows_done.set(r, c, b);
        }
    }
    encode_columns(c2, &rows_done)
}

/// Columns by `c2` first, then rows by `c1`.
pub fn encode_product_columns_first(
    c1: &LinearCode,
    c2: &LinearCode,
    u: &BitMatrix,
) -> Result<BitMatrix> {
    check_message(c1, c2, u)?;
    let cols_done = encode_columns(c2, u)?;
    let mut out = BitMatrix::zeros(c2.n(), c1.n());
    for r in 0..c2.n() {
        for (c, b) in c1.encode(cols_done.row(r))?.into_iter().enumerate() {
            out.set(r, c, b);
        }
    }
    Ok(out)
}

fn check_message(c1: &LinearCode, c2: &LinearCode, u: &BitMatrix) -> Result<()> {
    if u.rows() != c2.k() || u.cols() != c1.k() {
        return Err(Error::dim(
            "encode_product",
            format!(
                "message is {}x{}, expected {}x{}",
                u.rows(),
                u.cols(),
                c2.k(),
                c1.k()
            ),
        ));
    }
    Ok(())
}

fn encode_columns(code: &LinearCode, m: &BitMatrix) -> Result<BitMatrix> {
    let t = m.transpose();
    let mut out_t = BitMatrix::zeros(t.rows(), code.n());
    for r in 0..t.rows() {
        for (c, b) in code.encode(t.row(r))?.into_iter().enumerate() {
            out_t.set(r, c, b);
        }
    }
    Ok(out_t.transpose())
}

/// Column-major vectorization: entry `(r, c)` lands at `c * rows + r`.
pub fn vec_column_major(m: &BitMatrix) -> Vec<u8> {
    m.transpose().data
}

pub fn vec_row_major(m: &BitMatrix) -> Vec<u8> {
    m.data.clone()
}

/// The `k2 x k1` message whose row-major bits are the low `k1*k2` bits of
/// `index`, most significant first.
pub fn message_from_index(index: u64, k2: usize, k1: usize) -> BitMatrix {
    let total = k1 * k2;
    let mut m = BitMatrix::zeros(k2, k1);
    for i in 0..total {
        let bit = ((index >> (total - 1 - i)) & 1) as u8;
        m.set(i / k1, i % k1, bit);
    }
    m
}

/// Exhaustive check of a two-dimensional product code `C1 x C2`.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub params: ProductCodeParams,
    /// Distances found by enumeration: `[d1, d2, d]`.
    pub distances: [usize; 3],
    pub messages: u64,
    /// `n`, `k`, `R` and `d` equal the products of the component values.
    pub params_ok: bool,
    /// Every codeword equals `vec(U) (G1 ⊗ G2)` (column-major) and
    /// `vec(U) (G2 ⊗ G1)` (row-major).
    pub kronecker_ok: bool,
    /// Rows-then-columns equals columns-then-rows for every message.
    pub commutes: bool,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.params_ok && self.kronecker_ok && self.commutes
    }
}

/// Enumerate every message of `C1 x C2` (rows by `c1`, columns by `c2`).
pub fn verify_product(c1: &LinearCode, c2: &LinearCode) -> Result<OracleReport> {
    let (k1, k2) = (c1.k(), c2.k());
    if k1 * k2 > MAX_ENUMERATION_K {
        return Err(Error::Config(format!(
            "product dimension {} exceeds the enumeration bound {MAX_ENUMERATION_K}",
            k1 * k2
        )));
    }
    let d1 = min_distance_bruteforce(c1)?;
    let d2 = min_distance_bruteforce(c2)?;
    let product = c1.product(c2);
    let d = min_distance_bruteforce(&product)?;
    let params = ProductCodeParams::two_d(c1.n(), k1, c2.n(), k2)?.with_distances(vec![d1, d2])?;
    let params_ok = params.n() == product.n()
        && params.k() == product.k()
        && (params.rate() - c1.rate() * c2.rate()).abs() < 1e-15
        && (params.rate() - product.rate()).abs() < 1e-15
        && params.d() == Some(d);

    let g12 = product.generator();
    let g21 = kronecker(c2.generator(), c1.generator());
    let messages = 1u64 << (k1 * k2);
    let (mut kronecker_ok, mut commutes) = (true, true);
    for idx in 0..messages {
        let u = message_from_index(idx, k2, k1);
        let x = encode_product(c1, c2, &u)?;
        commutes &= x == encode_product_columns_first(c1, c2, &u)?;
        kronecker_ok &= g12.mul_vec(&vec_column_major(&u))? == vec_column_major(&x);
        kronecker_ok &= g21.mul_vec(&vec_row_major(&u))? == vec_row_major(&x);
    }
    Ok(OracleReport {
        params,
        distances: [d1, d2, d],
        messages,
        params_ok,
        kronecker_ok,
        commutes,
    })
}
