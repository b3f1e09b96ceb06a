//! Full Fock space over `d` letters truncated at word length `N`, its creation
//! operators, generalized kernel vectors and the truncated Hardy kernel.
//!
//! Creation operators are stored as index maps; words of length `N` are sent to 0.

use crate::error::{NcError, Result};
use crate::linalg::{c64, row_op_norm, CMatrix, CVector, MatSpaceElement};
use crate::ncpoly::{word_at, word_count, word_index, MatTuple, Word};

/// Default cap on `D_N`.
pub const FOCK_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FockSpace {
    pub d: usize,
    pub n_max: usize,
    pub dim: usize,
}

impl FockSpace {
    pub fn word(&self, k: usize) -> Word {
        word_at(self.d, k)
    }

    pub fn index(&self, w: &Word) -> Option<usize> {
        (w.len() <= self.n_max && w.0.iter().all(|&l| l < self.d)).then(|| word_index(self.d, w))
    }

    /// Indices of the words of length exactly `l`.
    pub fn level(&self, l: usize) -> std::ops::Range<usize> {
        let start = if l == 0 { 0 } else { word_count(self.d, l - 1) };
        start..word_count(self.d, l)
    }
}

/// Which creation operator (or adjoint) to apply; letters are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shift {
    /// `R_j e_α = e_{αj}`.
    Right(usize),
    RightAdj(usize),
    /// `L_j e_α = e_{jα}`.
    Left(usize),
    LeftAdj(usize),
}

/// Creation operators as index maps: `right[j][k]` is the image index of `e_k` under `R_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOps {
    pub d: usize,
    pub dim: usize,
    right: Vec<Vec<Option<usize>>>,
    left: Vec<Vec<Option<usize>>>,
}

impl ShiftOps {
    fn map(&self, op: Shift) -> (&[Option<usize>], bool) {
        match op {
            Shift::Right(j) => (&self.right[j], false),
            Shift::RightAdj(j) => (&self.right[j], true),
            Shift::Left(j) => (&self.left[j], false),
            Shift::LeftAdj(j) => (&self.left[j], true),
        }
    }

    pub fn apply(&self, op: Shift, v: &CVector) -> CVector {
        let (map, adjoint) = self.map(op);
        let mut out = CVector::zeros(self.dim);
        for (k, target) in map.iter().enumerate() {
            if let Some(t) = *target {
                if adjoint {
                    out[k] += v[t];
                } else {
                    out[t] += v[k];
                }
            }
        }
        out
    }

    /// `(op ⊗ I) h` on an element of `H^{m×m}`.
    pub fn apply_elem(&self, op: Shift, h: &MatSpaceElement) -> MatSpaceElement {
        let mut out = MatSpaceElement::zeros(h.m, self.dim);
        for p in 0..h.m {
            for q in 0..h.m {
                out.set_entry(p, q, &self.apply(op, &h.entry(p, q)));
            }
        }
        out
    }

    /// Dense real 0/1 matrix of `op`.
    pub fn dense(&self, op: Shift) -> CMatrix {
        let (map, adjoint) = self.map(op);
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for (k, target) in map.iter().enumerate() {
            if let Some(t) = *target {
                if adjoint {
                    m[(k, t)] = c64(1.0, 0.0);
                } else {
                    m[(t, k)] = c64(1.0, 0.0);
                }
            }
        }
        m
    }

    /// Dense adjoint tuple `(R₁*, …, R_d*)`.
    pub fn right_adjoints(&self) -> Vec<CMatrix> {
        (0..self.d).map(|j| self.dense(Shift::RightAdj(j))).collect()
    }
}

pub fn build_fock(d: usize, n_max: usize) -> Result<(FockSpace, ShiftOps)> {
    build_fock_with_cap(d, n_max, FOCK_CAP)
}

pub fn build_fock_with_cap(d: usize, n_max: usize, cap: usize) -> Result<(FockSpace, ShiftOps)> {
    if d == 0 {
        return Err(NcError::InvalidArgument("d must be at least 1".into()));
    }
    let dim = (0..=n_max).fold(0usize, |acc, l| acc.saturating_add(d.saturating_pow(l as u32)));
    if dim > cap {
        return Err(NcError::BudgetExceeded { needed: dim, cap });
    }
    let space = FockSpace { d, n_max, dim };
    let mut right = vec![vec![None; dim]; d];
    let mut left = vec![vec![None; dim]; d];
    for k in 0..dim {
        let w = word_at(d, k);
        if w.len() < n_max {
            for j in 0..d {
                right[j][k] = Some(word_index(d, &w.push(j)));
                left[j][k] = Some(word_index(d, &Word(vec![j]).concat(&w)));
            }
        }
    }
    Ok((space, ShiftOps { d, dim, right, left }))
}

/// All `X^α` for `|α| ≤ N`, indexed as in the Fock basis.
pub fn monomials(f: &FockSpace, x: &MatTuple) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(f.dim);
    out.push(CMatrix::identity(x.n, x.n));
    for k in 1..f.dim {
        // Parent of word k drops the last letter; it precedes k in length-lex order.
        let w = f.word(k);
        let parent = word_index(f.d, &Word(w.0[..w.len() - 1].to_vec()));
        let last = *w.0.last().unwrap();
        let next = &out[parent] * &x.mats[last];
        out.push(next);
    }
    out
}

/// `v_X = Σ_{|α|≤N} e_α ⊗ X^α`.
pub fn gen_kernel_vector(f: &FockSpace, x: &MatTuple) -> Result<MatSpaceElement> {
    if x.d() != f.d {
        return Err(NcError::ArityMismatch { expected: f.d, got: x.d() });
    }
    let mons = monomials(f, x);
    Ok(MatSpaceElement::from_fn(x.n, f.dim, |p, q, k| mons[k][(p, q)]))
}

/// `max_j ‖(R_j* ⊗ I − I ⊗ X_j) v_X‖` in the row-operator norm; only length-`N` words contribute.
pub fn kernel_vector_residual(f: &FockSpace, ops: &ShiftOps, x: &MatTuple) -> Result<f64> {
    let v = gen_kernel_vector(f, x)?;
    Ok((0..f.d)
        .map(|j| row_op_norm(&ops.apply_elem(Shift::RightAdj(j), &v).sub(&v.right_mul(&x.mats[j]))))
        .fold(0.0, f64::max))
}

/// `√(d^N) · ‖X‖_row^{N+1}`.
pub fn kernel_vector_bound(f: &FockSpace, x: &MatTuple) -> f64 {
    (f.d as f64).powi(f.n_max as i32).sqrt() * x.row_norm().powi(f.n_max as i32 + 1)
}

/// `Σ_{|α|≤N} Z^α P (W^α)*`.
pub fn hardy_kernel(f: &FockSpace, z: &MatTuple, w: &MatTuple, p: &CMatrix) -> Result<CMatrix> {
    for t in [z, w] {
        if t.d() != f.d {
            return Err(NcError::ArityMismatch { expected: f.d, got: t.d() });
        }
    }
    crate::error::check_dim("hardy_kernel P rows", z.n, p.nrows())?;
    crate::error::check_dim("hardy_kernel P cols", w.n, p.ncols())?;
    let zm = monomials(f, z);
    let wm = monomials(f, w);
    let mut out = CMatrix::zeros(z.n, w.n);
    for (a, b) in zm.iter().zip(&wm) {
        out += a * p * b.adjoint();
    }
    Ok(out)
}

/// `Σ_k v_Z(p, a)_k · conj(v_W(q, b)_k)` as an `(n·n) × (m·m)` matrix indexed by `(p, a), (q, b)`.
pub fn kernel_vector_gram(z: &MatSpaceElement, w: &MatSpaceElement) -> CMatrix {
    let (n, m) = (z.m, w.m);
    CMatrix::from_fn(n * n, m * m, |row, col| {
        let (p, a, q, b) = (row / n, row % n, col / m, col % m);
        w.entry(q, b).dotc(&z.entry(p, a))
    })
}
