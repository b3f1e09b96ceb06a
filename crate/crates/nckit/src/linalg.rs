//! Dense complex linear algebra: gap-aware rank and nullspace, minimum-norm
//! least squares, subspace comparison, row-operator norms, and the
//! `MatSpaceElement` container for elements of `H^{m×m}`.
//!
//! Matrices are `nalgebra` dense matrices over `Complex64`. Anything that is
//! serialized uses row-major order.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, NcError, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Tolerance used by [`RELATE_TOL`]-style subspace classification.
pub const RELATE_TOL: f64 = 1e-8;

/// Minimum `σ_rank/σ_{rank+1}` for a dimension claim to be trusted.
pub const GAP_THRESHOLD: f64 = 1e3;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Rank cut-off rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tol {
    /// `max(rows, cols) · ε · σ_max`.
    Auto,
    /// Absolute threshold on singular values.
    Abs(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    /// Descending; one entry per column of the input (padded with zeros).
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// `σ_rank / σ_{rank+1}`; infinite when either side of the cut is empty or exactly zero.
    pub gap_ratio: f64,
    pub tol: f64,
}

impl RankReport {
    pub fn nullity(&self) -> usize {
        self.singular_values.len() - self.rank
    }

    /// Whether the cut is separated by at least [`GAP_THRESHOLD`].
    pub fn gap_ok(&self) -> bool {
        self.gap_ratio >= GAP_THRESHOLD
    }

    /// Smallest singular value kept above the cut, if any.
    pub fn sigma_min_nonzero(&self) -> Option<f64> {
        if self.rank == 0 {
            None
        } else {
            Some(self.singular_values[self.rank - 1])
        }
    }
}

/// A subspace of `ℂ^ambient_dim` carried by orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    pub ambient_dim: usize,
    pub basis: CMatrix,
}

impl Subspace {
    /// Wraps columns that the caller guarantees to be orthonormal.
    pub fn from_orthonormal(basis: CMatrix) -> Self {
        Subspace {
            ambient_dim: basis.nrows(),
            basis,
        }
    }

    pub fn zero(ambient_dim: usize) -> Self {
        Subspace {
            ambient_dim,
            basis: CMatrix::zeros(ambient_dim, 0),
        }
    }

    pub fn full(ambient_dim: usize) -> Self {
        Subspace {
            ambient_dim,
            basis: CMatrix::identity(ambient_dim, ambient_dim),
        }
    }

    /// Column span of `vectors`, cut with `tol`.
    pub fn span_of(vectors: &CMatrix, tol: Tol) -> (Subspace, RankReport) {
        let (u, report) = range_with_gap(vectors, tol);
        (Subspace::from_orthonormal(u), report)
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn projector(&self) -> CMatrix {
        &self.basis * self.basis.adjoint()
    }

    /// `P x` for a matrix of column vectors.
    pub fn project(&self, x: &CMatrix) -> CMatrix {
        &self.basis * (self.basis.adjoint() * x)
    }

    /// `(I − P) x`.
    pub fn reject(&self, x: &CMatrix) -> CMatrix {
        x - self.project(x)
    }

    /// Largest column norm of `(I − P) x`.
    pub fn max_rejection(&self, x: &CMatrix) -> f64 {
        let r = self.reject(x);
        (0..r.ncols())
            .map(|j| r.column(j).norm())
            .fold(0.0, f64::max)
    }

    /// Orthonormal basis of the sum `self + other`.
    pub fn sum(&self, other: &Subspace, tol: Tol) -> Result<Subspace> {
        check_dim("Subspace::sum", self.ambient_dim, other.ambient_dim)?;
        let mut cols = CMatrix::zeros(self.ambient_dim, self.dim() + other.dim());
        cols.columns_mut(0, self.dim()).copy_from(&self.basis);
        cols.columns_mut(self.dim(), other.dim())
            .copy_from(&other.basis);
        Ok(Subspace::span_of(&cols, tol).0)
    }
}

/// Singular values (descending, length `cols`) and a full `cols × cols` right factor.
fn svd_full_v(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    if rows == 0 {
        return (vec![0.0; cols], CMatrix::identity(cols, cols));
    }
    let square = if rows > cols {
        m.clone().qr().r()
    } else if rows < cols {
        let mut padded = CMatrix::zeros(cols, cols);
        padded.rows_mut(0, rows).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = CMatrix::zeros(cols, cols);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..cols {
            v[(r, dst)] = v_t[(src, r)].conj();
        }
    }
    (sv, v)
}

fn resolve_tol(tol: Tol, shape: (usize, usize), smax: f64) -> f64 {
    match tol {
        Tol::Auto => shape.0.max(shape.1) as f64 * f64::EPSILON * smax,
        Tol::Abs(t) => t,
    }
}

fn rank_cut(sv: Vec<f64>, tol: f64) -> RankReport {
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let gap_ratio = if rank == 0 || rank == sv.len() || sv[rank] == 0.0 {
        f64::INFINITY
    } else {
        sv[rank - 1] / sv[rank]
    };
    RankReport {
        singular_values: sv,
        rank,
        gap_ratio,
        tol,
    }
}

/// Rank report without forming any basis.
pub fn rank_report(m: &CMatrix, tol: Tol) -> RankReport {
    let (rows, cols) = m.shape();
    let mut sv: Vec<f64> = if rows == 0 || cols == 0 {
        vec![0.0; cols]
    } else {
        let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
        s.resize(cols, 0.0);
        s
    };
    sv.sort_by(|a, b| b.total_cmp(a));
    let smax = sv.first().copied().unwrap_or(0.0);
    let t = resolve_tol(tol, m.shape(), smax);
    rank_cut(sv, t)
}

/// Right nullspace of `m` together with the rank diagnostics.
///
/// The basis spans the right singular vectors whose singular value is `≤ tol`.
pub fn nullspace_with_gap(m: &CMatrix, tol: Tol) -> (Subspace, RankReport) {
    let cols = m.ncols();
    let (sv, v) = svd_full_v(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    let t = resolve_tol(tol, m.shape(), smax);
    let report = rank_cut(sv, t);
    let basis = v.columns(report.rank, cols - report.rank).into_owned();
    (Subspace::from_orthonormal(basis), report)
}

/// Orthonormal basis of the column space of `m`, with rank diagnostics.
///
/// The report lists one singular value per row of `m`.
pub fn range_with_gap(m: &CMatrix, tol: Tol) -> (CMatrix, RankReport) {
    let (sv, u) = svd_full_v(&m.adjoint());
    let smax = sv.first().copied().unwrap_or(0.0);
    let t = resolve_tol(tol, m.shape(), smax);
    let report = rank_cut(sv, t);
    (u.columns(0, report.rank).into_owned(), report)
}

/// Minimum-norm least-squares solution of `A x ≈ b`.
pub fn lstsq_min_norm(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    check_dim("lstsq_min_norm rows", a.nrows(), b.nrows())?;
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok(CMatrix::zeros(cols, b.ncols()));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = rows.max(cols) as f64 * f64::EPSILON * smax;
    if smax == 0.0 {
        return Ok(CMatrix::zeros(cols, b.ncols()));
    }
    svd.solve(b, tol)
        .map_err(|e| NcError::InvalidArgument(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Equal,
    /// The first subspace strictly contains the second.
    Contains,
    /// The first subspace is strictly contained in the second.
    Contained,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubspaceRelation {
    pub relation: Relation,
    /// Largest principal-angle sine over the `min(dim U, dim V)` angles.
    pub distance: f64,
}

/// Compares two subspaces of the same ambient space by principal angles.
pub fn subspace_relate(u: &Subspace, v: &Subspace) -> Result<SubspaceRelation> {
    check_dim("subspace_relate ambient", u.ambient_dim, v.ambient_dim)?;
    let sine = |a: &Subspace, b: &Subspace| -> f64 {
        if a.dim() == 0 {
            0.0
        } else {
            spectral_norm(&b.reject(&a.basis))
        }
    };
    let u_in_v = sine(u, v);
    let v_in_u = sine(v, u);
    let distance = if u.dim() <= v.dim() { u_in_v } else { v_in_u };
    let relation = match u.dim().cmp(&v.dim()) {
        std::cmp::Ordering::Equal if u_in_v <= RELATE_TOL => Relation::Equal,
        std::cmp::Ordering::Less if u_in_v <= RELATE_TOL => Relation::Contained,
        std::cmp::Ordering::Greater if v_in_u <= RELATE_TOL => Relation::Contains,
        _ => Relation::Other,
    };
    Ok(SubspaceRelation { relation, distance })
}

/// Spectral norm of `h` flattened to the `m × (m·K)` row operator.
pub fn row_op_norm(h: &MatSpaceElement) -> f64 {
    spectral_norm(&h.flatten_rows())
}

/// An element of `H^{m×m}` with `H = ℂ^K`.
///
/// Coordinate `k` of slot `(p, q)` lives at `((p·m) + q)·K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatSpaceElement {
    pub m: usize,
    pub dim_h: usize,
    pub data: CVector,
}

impl MatSpaceElement {
    pub fn zeros(m: usize, dim_h: usize) -> Self {
        MatSpaceElement {
            m,
            dim_h,
            data: CVector::zeros(m * m * dim_h),
        }
    }

    pub fn from_fn(m: usize, dim_h: usize, mut f: impl FnMut(usize, usize, usize) -> C64) -> Self {
        let mut out = Self::zeros(m, dim_h);
        for p in 0..m {
            for q in 0..m {
                for k in 0..dim_h {
                    let i = out.idx(p, q, k);
                    out.data[i] = f(p, q, k);
                }
            }
        }
        out
    }

    pub fn from_vector(m: usize, dim_h: usize, data: CVector) -> Result<Self> {
        check_dim("MatSpaceElement data", m * m * dim_h, data.len())?;
        Ok(MatSpaceElement { m, dim_h, data })
    }

    #[inline]
    pub fn idx(&self, p: usize, q: usize, k: usize) -> usize {
        (p * self.m + q) * self.dim_h + k
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize, k: usize) -> C64 {
        self.data[self.idx(p, q, k)]
    }

    /// The `H`-coordinates of slot `(p, q)`.
    pub fn entry(&self, p: usize, q: usize) -> CVector {
        let start = self.idx(p, q, 0);
        self.data.rows(start, self.dim_h).into_owned()
    }

    pub fn set_entry(&mut self, p: usize, q: usize, v: &CVector) {
        let start = self.idx(p, q, 0);
        let len = self.dim_h;
        self.data.rows_mut(start, len).copy_from(v);
    }

    /// `(A h)_{pq} = Σ_t A_{pt} h_{tq}`.
    pub fn left_mul(&self, a: &CMatrix) -> Self {
        let m = self.m;
        Self::from_fn(m, self.dim_h, |p, q, k| {
            (0..m).map(|t| a[(p, t)] * self.get(t, q, k)).sum()
        })
    }

    /// `(h B)_{pq} = Σ_t h_{pt} B_{tq}`.
    pub fn right_mul(&self, b: &CMatrix) -> Self {
        let m = self.m;
        Self::from_fn(m, self.dim_h, |p, q, k| {
            (0..m).map(|t| self.get(p, t, k) * b[(t, q)]).sum()
        })
    }

    /// `(T ⊗ I) h`: applies `t` to every slot.
    pub fn apply_op(&self, t: &CMatrix) -> Self {
        let mut out = Self::zeros(self.m, t.nrows());
        for p in 0..self.m {
            for q in 0..self.m {
                out.set_entry(p, q, &(t * self.entry(p, q)));
            }
        }
        out
    }

    /// Hilbert–Schmidt inner product, linear in `self`.
    pub fn hs_inner(&self, other: &Self) -> C64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b.conj())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    /// Row `p` is the concatenation of the slots `(p, 0), …, (p, m−1)`.
    pub fn flatten_rows(&self) -> CMatrix {
        let w = self.m * self.dim_h;
        CMatrix::from_fn(self.m, w, |p, c| self.data[p * w + c])
    }

    pub fn scale(&self, s: C64) -> Self {
        MatSpaceElement {
            m: self.m,
            dim_h: self.dim_h,
            data: self.data.map(|x| x * s),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        MatSpaceElement {
            m: self.m,
            dim_h: self.dim_h,
            data: &self.data + &other.data,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        MatSpaceElement {
            m: self.m,
            dim_h: self.dim_h,
            data: &self.data - &other.data,
        }
    }

    /// `h^{⊕k}`: block-diagonal amplification.
    pub fn amplify(&self, k: usize) -> Self {
        let m = self.m;
        Self::from_fn(m * k, self.dim_h, |p, q, c| {
            if p / m == q / m {
                self.get(p % m, q % m, c)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// `diag(a, b)`.
pub fn direct_sum(a: &CMatrix, b: &CMatrix) -> CMatrix {
    block_diag(&[a.clone(), b.clone()])
}

pub fn block_diag(blocks: &[CMatrix]) -> CMatrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Elementary matrix `E_{ij}` of shape `rows × cols`.
pub fn elementary(rows: usize, cols: usize, i: usize, j: usize) -> CMatrix {
    let mut e = CMatrix::zeros(rows, cols);
    e[(i, j)] = C64::new(1.0, 0.0);
    e
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// `⟨A, B⟩ = tr(A B*)`.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum()
}

/// Smallest eigenvalue of the Hermitian part `(M + M*)/2`.
pub fn min_eig_hermitian(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let h = (m + m.adjoint()).scale(0.5);
    h.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Entries with real and imaginary parts uniform in `[−1, 1]`.
pub fn random_cmatrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

pub fn random_cvector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> CVector {
    CVector::from_fn(len, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

/// Unitary factor of the QR decomposition of a random matrix.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    random_cmatrix(rng, n, n).qr().q()
}

/// Random Hermitian positive definite matrix with spectrum in `[1, 2]`-ish.
pub fn random_positive<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    let a = random_cmatrix(rng, n, n);
    let g = &a * a.adjoint();
    let scale = spectral_norm(&g).max(1.0);
    g.scale(1.0 / scale) + CMatrix::identity(n, n)
}

/// Serializable row-major complex matrix (`[re, im]` pairs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<[f64; 2]>,
}

impl From<&CMatrix> for MatrixJson {
    fn from(m: &CMatrix) -> Self {
        let mut entries = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push([m[(i, j)].re, m[(i, j)].im]);
            }
        }
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            entries,
        }
    }
}

impl TryFrom<&MatrixJson> for CMatrix {
    type Error = NcError;
    fn try_from(j: &MatrixJson) -> Result<Self> {
        check_dim("MatrixJson entries", j.rows * j.cols, j.entries.len())?;
        if j.entries.iter().any(|e| !e[0].is_finite() || !e[1].is_finite()) {
            return Err(NcError::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(CMatrix::from_fn(j.rows, j.cols, |r, c| {
            let e = j.entries[r * j.cols + c];
            C64::new(e[0], e[1])
        }))
    }
}
