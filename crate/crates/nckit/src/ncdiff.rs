//! Nc difference-differential operators by block-bidiagonal evaluation,
//! Taylor–Taylor expansion about a centre `Y` of level `s`, reconstruction,
//! and the canonical intertwining conditions.
//!
//! A direction in `(ℂ^d)^{s×s}` is a vector of length `d·s²` with index
//! `k·s² + a·s + b` (coordinate `k`, entry `(a, b)`). A value in `(ℂ^r)^{s×s}`
//! is a vector of length `r·s²` with index `t·s² + a·s + b`. The `ℓ`-th
//! coefficient tensor is a `(d·s²)^ℓ × (r·s²)` matrix whose row index is the
//! mixed-radix number of the slot indices, slot 1 most significant.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, NcError, Result};
use crate::linalg::{
    c64, elementary, nullspace_with_gap, random_cmatrix, spectral_norm, Tol, C64, CMatrix,
    CVector, MatrixJson,
};
use crate::ncpoly::{poly_eval, MatTuple, NcPoly, NcValue, TupleJson, Word};

/// Default cap on the number of basis-direction evaluations at the top order.
pub const TT_BUDGET: usize = 200_000;

/// Anything that can be evaluated on matrix tuples of every level and respects
/// direct sums and similarities.
pub trait NcFunction: Sync {
    fn d(&self) -> usize;
    fn r(&self) -> usize;
    fn eval(&self, x: &MatTuple) -> Result<NcValue>;
}

impl NcFunction for NcPoly {
    fn d(&self) -> usize {
        self.d
    }
    fn r(&self) -> usize {
        self.r
    }
    fn eval(&self, x: &MatTuple) -> Result<NcValue> {
        poly_eval(self, x)
    }
}

/// Wraps a closure as an [`NcFunction`]; the caller vouches for the nc axioms.
pub struct NcClosure<F> {
    pub d: usize,
    pub r: usize,
    pub f: F,
}

impl<F> NcFunction for NcClosure<F>
where
    F: Fn(&MatTuple) -> Result<NcValue> + Sync,
{
    fn d(&self) -> usize {
        self.d
    }
    fn r(&self) -> usize {
        self.r
    }
    fn eval(&self, x: &MatTuple) -> Result<NcValue> {
        (self.f)(x)
    }
}

fn check_arity(f: &dyn NcFunction, d: usize) -> Result<()> {
    if f.d() == d {
        Ok(())
    } else {
        Err(NcError::ArityMismatch {
            expected: f.d(),
            got: d,
        })
    }
}

/// Base points `X⁰ … X^ℓ` and directions `Z¹ … Z^ℓ`.
///
/// For [`delta_r`], `Z^i` is a `d`-tuple of `n_{i−1} × n_i` matrices; for
/// [`delta_l`] it is a `d`-tuple of `n_i × n_{i−1}` matrices.
#[derive(Debug, Clone)]
pub struct DeltaRequest {
    pub bases: Vec<MatTuple>,
    pub dirs: Vec<Vec<CMatrix>>,
}

impl DeltaRequest {
    pub fn new(bases: Vec<MatTuple>, dirs: Vec<Vec<CMatrix>>) -> Self {
        DeltaRequest { bases, dirs }
    }

    pub fn order(&self) -> usize {
        self.dirs.len()
    }

    fn validate(&self, upper: bool) -> Result<usize> {
        if self.bases.is_empty() {
            return Err(NcError::InvalidArgument("at least one base point".into()));
        }
        check_dim("DeltaRequest directions", self.bases.len() - 1, self.dirs.len())?;
        let d = self.bases[0].d();
        for b in &self.bases {
            check_dim("DeltaRequest base arity", d, b.d())?;
        }
        for (i, z) in self.dirs.iter().enumerate() {
            check_dim("DeltaRequest direction arity", d, z.len())?;
            let (prev, next) = (self.bases[i].n, self.bases[i + 1].n);
            let (rows, cols) = if upper { (prev, next) } else { (next, prev) };
            for m in z {
                check_dim("DeltaRequest direction rows", rows, m.nrows())?;
                check_dim("DeltaRequest direction cols", cols, m.ncols())?;
            }
        }
        Ok(d)
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for b in &self.bases {
            off.push(off.last().unwrap() + b.n);
        }
        off
    }

    /// The block bidiagonal point; directions sit above the diagonal when `upper`.
    pub fn assemble(&self, upper: bool) -> Result<MatTuple> {
        let d = self.validate(upper)?;
        let off = self.offsets();
        let total = *off.last().unwrap();
        let mats = (0..d)
            .map(|j| {
                let mut m = CMatrix::zeros(total, total);
                for (i, b) in self.bases.iter().enumerate() {
                    m.view_mut((off[i], off[i]), (b.n, b.n)).copy_from(&b.mats[j]);
                }
                for (i, z) in self.dirs.iter().enumerate() {
                    let zj = &z[j];
                    let at = if upper { (off[i], off[i + 1]) } else { (off[i + 1], off[i]) };
                    m.view_mut(at, (zj.nrows(), zj.ncols())).copy_from(zj);
                }
                m
            })
            .collect();
        Ok(MatTuple { n: total, mats })
    }
}

/// `Δ^ℓ_R f(X⁰, …, X^ℓ)(Z¹, …, Z^ℓ)`: the top-right `n₀ × n_ℓ` block of `f` at the
/// upper-bidiagonal point.
pub fn delta_r(f: &dyn NcFunction, req: &DeltaRequest) -> Result<NcValue> {
    let x = req.assemble(true)?;
    check_arity(f, x.d())?;
    let off = req.offsets();
    let (n0, nl) = (req.bases[0].n, req.bases.last().unwrap().n);
    let v = f.eval(&x)?;
    Ok(v.map(|c| c.view((0, off[req.order()]), (n0, nl)).into_owned()))
}

/// `Δ^ℓ_L f(X⁰, …, X^ℓ)(Z¹, …, Z^ℓ)`: the bottom-left `n_ℓ × n₀` block of `f` at the
/// lower-bidiagonal point.
pub fn delta_l(f: &dyn NcFunction, req: &DeltaRequest) -> Result<NcValue> {
    let x = req.assemble(false)?;
    check_arity(f, x.d())?;
    let off = req.offsets();
    let (n0, nl) = (req.bases[0].n, req.bases.last().unwrap().n);
    let v = f.eval(&x)?;
    Ok(v.map(|c| c.view((off[req.order()], 0), (nl, n0)).into_owned()))
}

/// `Δ_{R,j} f(X, Y)(Z)`: first-order difference along coordinate `j` (zero-based).
pub fn delta_partial(f: &dyn NcFunction, j: usize, x: &MatTuple, y: &MatTuple, z: &CMatrix) -> Result<NcValue> {
    if j >= x.d() {
        return Err(NcError::InvalidArgument(format!("coordinate {} outside 1..={}", j + 1, x.d())));
    }
    let mut dir = vec![CMatrix::zeros(x.n, y.n); x.d()];
    dir[j] = z.clone();
    delta_r(f, &DeltaRequest::new(vec![x.clone(), y.clone()], vec![dir]))
}

/// `S f(X) − f(Y) S − Σ_j Δ_{R,j} f(Y, X)(S X_j − Y_j S)` for `X` of level `n`,
/// `Y` of level `m` and `S: m × n`; returns the largest entry modulus.
pub fn finite_difference_check(f: &dyn NcFunction, x: &MatTuple, y: &MatTuple, s: &CMatrix) -> Result<f64> {
    check_dim("finite_difference_check S rows", y.n, s.nrows())?;
    check_dim("finite_difference_check S cols", x.n, s.ncols())?;
    check_dim("finite_difference_check arity", x.d(), y.d())?;
    let fx = f.eval(x)?;
    let fy = f.eval(y)?;
    let dir: Vec<CMatrix> = x
        .mats
        .iter()
        .zip(&y.mats)
        .map(|(xj, yj)| s * xj - yj * s)
        .collect();
    let delta = delta_r(f, &DeltaRequest::new(vec![y.clone(), x.clone()], vec![dir]))?;
    let mut worst: f64 = 0.0;
    for t in 0..fx.r() {
        let res = s * &fx.comps[t] - &fy.comps[t] * s - &delta.comps[t];
        worst = worst.max(crate::linalg::max_abs(&res));
    }
    Ok(worst)
}

/// Taylor–Taylor coefficients of an nc function about a centre `Y` of level `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct TTSeries {
    pub center: MatTuple,
    pub r: usize,
    /// `coeffs[ℓ]` has shape `(d·s²)^ℓ × (r·s²)`.
    pub coeffs: Vec<CMatrix>,
}

impl TTSeries {
    pub fn d(&self) -> usize {
        self.center.d()
    }

    pub fn s(&self) -> usize {
        self.center.n
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// `d·s²`.
    pub fn dir_dim(&self) -> usize {
        self.d() * self.s() * self.s()
    }

    /// `r·s²`.
    pub fn out_dim(&self) -> usize {
        self.r * self.s() * self.s()
    }

    pub fn new(center: MatTuple, r: usize, coeffs: Vec<CMatrix>) -> Result<Self> {
        let t = TTSeries { center, r, coeffs };
        if t.coeffs.is_empty() {
            return Err(NcError::InvalidArgument("a series needs the order-0 coefficient".into()));
        }
        for (l, c) in t.coeffs.iter().enumerate() {
            check_dim("TTSeries coefficient rows", t.dir_dim().pow(l as u32), c.nrows())?;
            check_dim("TTSeries coefficient cols", t.out_dim(), c.ncols())?;
        }
        Ok(t)
    }

    /// Word-indexed coefficient for a scalar centre.
    pub fn word_coef(&self, w: &Word) -> Result<Vec<C64>> {
        if self.s() != 1 {
            return Err(NcError::Unsupported("word coefficients need a scalar centre".into()));
        }
        if w.len() > self.order() {
            return Ok(vec![C64::new(0.0, 0.0); self.r]);
        }
        let row = w.0.iter().fold(0, |acc, &l| acc * self.d() + l);
        Ok(self.coeffs[w.len()].row(row).iter().copied().collect())
    }

    /// For a scalar centre, the polynomial in the shifted variables `X − y` with
    /// the series coefficients; at `y = 0` this is `f` truncated.
    pub fn to_poly(&self) -> Result<NcPoly> {
        if self.s() != 1 {
            return Err(NcError::Unsupported("word coefficients need a scalar centre".into()));
        }
        let mut p = NcPoly::zero(self.d(), self.r);
        for l in 0..=self.order() {
            for w in crate::ncpoly::word_enumerate(self.d(), l).into_iter().filter(|w| w.len() == l) {
                p.add_term(w.clone(), &self.word_coef(&w)?)?;
            }
        }
        Ok(p)
    }

    /// `f_ℓ(Z¹, …, Z^ℓ)` for directions of length `d·s²`; output of length `r·s²`.
    pub fn apply(&self, l: usize, dirs: &[CVector]) -> Result<CVector> {
        check_dim("TTSeries::apply slots", l, dirs.len())?;
        let n = self.dir_dim();
        let mut cur = if l < self.coeffs.len() {
            self.coeffs[l].clone()
        } else {
            return Ok(CVector::zeros(self.out_dim()));
        };
        for z in dirs {
            check_dim("TTSeries::apply direction", n, z.len())?;
            let rest = cur.nrows() / n;
            let mut next = CMatrix::zeros(rest, cur.ncols());
            for (i, zi) in z.iter().enumerate() {
                if *zi != C64::new(0.0, 0.0) {
                    next += cur.rows(i * rest, rest).map(|v| v * zi);
                }
            }
            cur = next;
        }
        Ok(cur.row(0).transpose())
    }

    /// The `ℓ`-linear map amplified to level `m·s`: directions are `d`-tuples of
    /// `ms × ms` matrices, contracted along block paths.
    pub fn apply_amplified(&self, l: usize, dirs: &[MatTuple], m: usize) -> Result<NcValue> {
        check_dim("apply_amplified slots", l, dirs.len())?;
        let s = self.s();
        let level = m * s;
        let (n, out) = (self.dir_dim(), self.out_dim());
        let mut value = NcValue::zeros(self.r, level, level);
        if l >= self.coeffs.len() {
            return Ok(value);
        }
        if l == 0 {
            let c0 = self.out_to_value(&self.coeffs[0].row(0).transpose());
            return Ok(c0.map(|c| crate::linalg::block_diag(&vec![c.clone(); m])));
        }
        for z in dirs {
            check_dim("apply_amplified direction arity", self.d(), z.d())?;
            check_dim("apply_amplified direction level", level, z.n)?;
        }
        let block_dir = |z: &MatTuple, p: usize, q: usize| -> CVector {
            CVector::from_fn(n, |i, _| {
                let (k, a, b) = (i / (s * s), (i / s) % s, i % s);
                z.mats[k][(p * s + a, q * s + b)]
            })
        };
        for p in 0..m {
            // state[t]: remaining tensor after contracting slots along a path from p to t.
            let mut state: Vec<Option<CMatrix>> = vec![None; m];
            let rows = self.coeffs[l].nrows() / n;
            for t in 0..m {
                let zt = block_dir(&dirs[0], p, t);
                let mut acc = CMatrix::zeros(rows, out);
                for (i, zi) in zt.iter().enumerate() {
                    if *zi != C64::new(0.0, 0.0) {
                        acc += self.coeffs[l].rows(i * rows, rows).map(|v| v * zi);
                    }
                }
                state[t] = Some(acc);
            }
            for z in &dirs[1..] {
                let rows = state[0].as_ref().unwrap().nrows() / n;
                let mut next = vec![CMatrix::zeros(rows, out); m];
                for (t, st) in state.iter().enumerate() {
                    let st = st.as_ref().unwrap();
                    for (t2, nx) in next.iter_mut().enumerate() {
                        let zt = block_dir(z, t, t2);
                        for (i, zi) in zt.iter().enumerate() {
                            if *zi != C64::new(0.0, 0.0) {
                                *nx += st.rows(i * rows, rows).map(|v| v * zi);
                            }
                        }
                    }
                }
                state = next.into_iter().map(Some).collect();
            }
            for (q, st) in state.iter().enumerate() {
                let blk = self.out_to_value(&st.as_ref().unwrap().row(0).transpose());
                for (t, c) in blk.comps.iter().enumerate() {
                    value.comps[t].view_mut((p * s, q * s), (s, s)).copy_from(c);
                }
            }
        }
        Ok(value)
    }

    /// Splits an output vector of length `r·s²` into `r` matrices of size `s × s`.
    pub fn out_to_value(&self, v: &CVector) -> NcValue {
        let s = self.s();
        NcValue {
            comps: (0..self.r)
                .map(|t| CMatrix::from_fn(s, s, |a, b| v[t * s * s + a * s + b]))
                .collect(),
        }
    }

    pub fn value_to_out(&self, v: &NcValue) -> CVector {
        let s = self.s();
        CVector::from_fn(self.out_dim(), |i, _| {
            let (t, a, b) = (i / (s * s), (i / s) % s, i % s);
            v.comps[t][(a, b)]
        })
    }

    pub fn dir_from_tuple(&self, z: &[CMatrix]) -> CVector {
        dir_vector(z, self.s())
    }

    /// `Σ_ℓ f_ℓ(X − Y^{⊕m}, …, X − Y^{⊕m})`.
    pub fn eval_at(&self, x: &MatTuple) -> Result<NcValue> {
        tt_eval(self, x)
    }

    /// Sampled sup over amplification levels `m ≤ max_amp` of
    /// `‖f_ℓ(Z¹, …, Z^ℓ)‖ / Π ‖Z^i‖_row`.
    pub fn cb_norm_surrogate<R: Rng + ?Sized>(&self, l: usize, max_amp: usize, samples: usize, rng: &mut R) -> Result<f64> {
        let mut best: f64 = 0.0;
        for m in 1..=max_amp.max(1) {
            for _ in 0..samples.max(1) {
                let dirs: Vec<MatTuple> = (0..l)
                    .map(|_| MatTuple::random(rng, self.d(), m * self.s(), 1.0))
                    .collect();
                let denom: f64 = dirs.iter().map(MatTuple::row_norm).product();
                let v = self.apply_amplified(l, &dirs, m)?;
                let row = MatTuple { n: v.comps[0].nrows(), mats: v.comps };
                best = best.max(spectral_norm(&row.row()) / denom);
            }
        }
        Ok(best)
    }
}

impl NcFunction for TTSeries {
    fn d(&self) -> usize {
        self.center.d()
    }
    fn r(&self) -> usize {
        self.r
    }
    fn eval(&self, x: &MatTuple) -> Result<NcValue> {
        tt_eval(self, x)
    }
}

/// Direction vector of an `s × s` `d`-tuple.
pub fn dir_vector(z: &[CMatrix], s: usize) -> CVector {
    let d = z.len();
    CVector::from_fn(d * s * s, |i, _| {
        let (k, a, b) = (i / (s * s), (i / s) % s, i % s);
        z[k][(a, b)]
    })
}

fn basis_direction(d: usize, s: usize, i: usize) -> Vec<CMatrix> {
    let (k, a, b) = (i / (s * s), (i / s) % s, i % s);
    (0..d)
        .map(|j| if j == k { elementary(s, s, a, b) } else { CMatrix::zeros(s, s) })
        .collect()
}

/// Taylor–Taylor expansion to order `k` with the default budget.
pub fn tt_expand(f: &dyn NcFunction, y: &MatTuple, k: usize) -> Result<TTSeries> {
    tt_expand_with_budget(f, y, k, TT_BUDGET)
}

/// Fills `coeffs[ℓ]` by evaluating `Δ^ℓ_R f(Y, …, Y)` on every tuple of basis directions.
pub fn tt_expand_with_budget(f: &dyn NcFunction, y: &MatTuple, k: usize, budget: usize) -> Result<TTSeries> {
    check_arity(f, y.d())?;
    let (d, s, r) = (y.d(), y.n, f.r());
    let n = d * s * s;
    let needed = n.checked_pow(k as u32).unwrap_or(usize::MAX);
    if needed > budget {
        return Err(NcError::BudgetExceeded { needed, cap: budget });
    }
    let mut coeffs = Vec::with_capacity(k + 1);
    for l in 0..=k {
        let rows = n.pow(l as u32);
        let computed: Vec<Result<Vec<C64>>> = (0..rows)
            .into_par_iter()
            .map(|row| {
                let mut idx = vec![0; l];
                let mut rem = row;
                for slot in idx.iter_mut().rev() {
                    *slot = rem % n;
                    rem /= n;
                }
                let req = DeltaRequest::new(
                    vec![y.clone(); l + 1],
                    idx.iter().map(|&i| basis_direction(d, s, i)).collect(),
                );
                let v = delta_r(f, &req)?;
                Ok((0..r * s * s)
                    .map(|o| {
                        let (t, a, b) = (o / (s * s), (o / s) % s, o % s);
                        v.comps[t][(a, b)]
                    })
                    .collect())
            })
            .collect();
        let mut c = CMatrix::zeros(rows, r * s * s);
        for (row, vals) in computed.into_iter().enumerate() {
            for (o, v) in vals?.into_iter().enumerate() {
                c[(row, o)] = v;
            }
        }
        coeffs.push(c);
    }
    TTSeries::new(y.clone(), r, coeffs)
}

/// `Σ_ℓ (X − Y^{⊕m})^{⊙_s ℓ} f_ℓ` at `X` of level `m·s`.
pub fn tt_eval(t: &TTSeries, x: &MatTuple) -> Result<NcValue> {
    let s = t.s();
    if !x.n.is_multiple_of(s) {
        return Err(NcError::LevelNotMultiple { level: x.n, s });
    }
    check_dim("tt_eval arity", t.d(), x.d())?;
    let m = x.n / s;
    let z = x.sub(&t.center.amplify(m));
    let mut total = NcValue::zeros(t.r, x.n, x.n);
    for l in 0..=t.order() {
        let v = t.apply_amplified(l, &vec![z.clone(); l], m)?;
        for (acc, c) in total.comps.iter_mut().zip(&v.comps) {
            *acc += c;
        }
    }
    Ok(total)
}

/// Largest residual of the canonical intertwining conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CicReport {
    pub residual: f64,
    /// Dimension of the commutant `{S : S Y = Y S}` used for the top-order relations.
    pub commutant_dim: usize,
    pub relations_checked: usize,
}

/// Commutant of a tuple: orthonormal basis of `{S : S Y_j = Y_j S ∀j}` as `s × s` matrices.
pub fn commutant(y: &MatTuple) -> Vec<CMatrix> {
    let s = y.n;
    let mut m = CMatrix::zeros(y.d() * s * s, s * s);
    for (j, yj) in y.mats.iter().enumerate() {
        for a in 0..s {
            for b in 0..s {
                let row = j * s * s + a * s + b;
                for t in 0..s {
                    // (S Y)_{ab} − (Y S)_{ab}
                    m[(row, a * s + t)] += yj[(t, b)];
                    m[(row, t * s + b)] -= yj[(a, t)];
                }
            }
        }
    }
    let (ker, _) = nullspace_with_gap(&m, Tol::Auto);
    (0..ker.dim())
        .map(|c| CMatrix::from_fn(s, s, |a, b| ker.basis[(a * s + b, c)]))
        .collect()
}

fn left_mul_dir(sm: &CMatrix, z: &CVector, d: usize, s: usize) -> CVector {
    let mats: Vec<CMatrix> = (0..d).map(|k| sm * dir_mat(z, k, s)).collect();
    dir_vector(&mats, s)
}

fn right_mul_dir(sm: &CMatrix, z: &CVector, d: usize, s: usize) -> CVector {
    let mats: Vec<CMatrix> = (0..d).map(|k| dir_mat(z, k, s) * sm).collect();
    dir_vector(&mats, s)
}

fn dir_mat(z: &CVector, k: usize, s: usize) -> CMatrix {
    CMatrix::from_fn(s, s, |a, b| z[k * s * s + a * s + b])
}

fn out_left(t: &TTSeries, sm: &CMatrix, v: &CVector) -> CVector {
    t.value_to_out(&t.out_to_value(v).map(|c| sm * c))
}

fn out_right(t: &TTSeries, sm: &CMatrix, v: &CVector) -> CVector {
    t.value_to_out(&t.out_to_value(v).map(|c| c * sm))
}

fn unit_dir(n: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(n);
    v[i] = c64(1.0, 0.0);
    v
}

fn all_index_tuples(n: usize, len: usize) -> Vec<Vec<usize>> {
    let total = n.pow(len as u32);
    (0..total)
        .map(|mut row| {
            let mut idx = vec![0; len];
            for slot in idx.iter_mut().rev() {
                *slot = row % n;
                row /= n;
            }
            idx
        })
        .collect()
}

/// Checks `CIC_k(Y)` for `k = order`: the commutator relations for every
/// `1 ≤ ℓ ≤ k` with `S` over the matrix units, and the commutant relations for
/// `f_k` (or `[f₀, S] = 0` when `k = 0`).
pub fn cic_check(t: &TTSeries) -> Result<CicReport> {
    let (d, s) = (t.d(), t.s());
    let n = t.dir_dim();
    let k = t.order();
    let units: Vec<CMatrix> = (0..s * s).map(|i| elementary(s, s, i / s, i % s)).collect();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let norm = |v: &CVector| v.iter().map(|z| z.norm()).fold(0.0, f64::max);

    for sm in &units {
        let comm: Vec<CMatrix> = t.center.mats.iter().map(|y| sm * y - y * sm).collect();
        let cz = dir_vector(&comm, s);
        for l in 1..=k {
            for idx in all_index_tuples(n, l - 1) {
                let zs: Vec<CVector> = idx.iter().map(|&i| unit_dir(n, i)).collect();
                for pos in 0..l {
                    // [S, Y] placed at slot `pos`; the others are zs in order.
                    let mut args = zs.clone();
                    args.insert(pos, cz.clone());
                    let lhs = t.apply(l, &args)?;
                    let rhs = if l == 1 {
                        let f0 = t.coeffs[0].row(0).transpose();
                        out_left(t, sm, &f0) - out_right(t, sm, &f0)
                    } else if pos == 0 {
                        let mut shifted = zs.clone();
                        shifted[0] = left_mul_dir(sm, &zs[0], d, s);
                        out_left(t, sm, &t.apply(l - 1, &zs)?) - t.apply(l - 1, &shifted)?
                    } else if pos == l - 1 {
                        let mut shifted = zs.clone();
                        shifted[l - 2] = right_mul_dir(sm, &zs[l - 2], d, s);
                        t.apply(l - 1, &shifted)? - out_right(t, sm, &t.apply(l - 1, &zs)?)
                    } else {
                        let mut a = zs.clone();
                        a[pos - 1] = right_mul_dir(sm, &zs[pos - 1], d, s);
                        let mut b = zs.clone();
                        b[pos] = left_mul_dir(sm, &zs[pos], d, s);
                        t.apply(l - 1, &a)? - t.apply(l - 1, &b)?
                    };
                    worst = worst.max(norm(&(lhs - rhs)));
                    count += 1;
                }
            }
        }
    }

    let comm_basis = commutant(&t.center);
    for sm in &comm_basis {
        if k == 0 {
            let f0 = t.coeffs[0].row(0).transpose();
            worst = worst.max(norm(&(out_left(t, sm, &f0) - out_right(t, sm, &f0))));
            count += 1;
            continue;
        }
        for idx in all_index_tuples(n, k) {
            let zs: Vec<CVector> = idx.iter().map(|&i| unit_dir(n, i)).collect();
            let base = t.apply(k, &zs)?;
            let mut first = zs.clone();
            first[0] = left_mul_dir(sm, &zs[0], d, s);
            worst = worst.max(norm(&(out_left(t, sm, &base) - t.apply(k, &first)?)));
            let mut last = zs.clone();
            last[k - 1] = right_mul_dir(sm, &zs[k - 1], d, s);
            worst = worst.max(norm(&(t.apply(k, &last)? - out_right(t, sm, &base))));
            count += 2;
            for j in 1..k {
                let mut a = zs.clone();
                a[j - 1] = right_mul_dir(sm, &zs[j - 1], d, s);
                let mut b = zs.clone();
                b[j] = left_mul_dir(sm, &zs[j], d, s);
                worst = worst.max(norm(&(t.apply(k, &a)? - t.apply(k, &b)?)));
                count += 1;
            }
        }
    }
    Ok(CicReport {
        residual: worst,
        commutant_dim: comm_basis.len(),
        relations_checked: count,
    })
}

/// Adds `scale ×` a random tensor to coefficient `l`.
pub fn perturb_coefficient<R: Rng + ?Sized>(t: &TTSeries, l: usize, scale: f64, rng: &mut R) -> TTSeries {
    let mut out = t.clone();
    let c = &mut out.coeffs[l];
    *c += random_cmatrix(rng, c.nrows(), c.ncols()).map(|z| z * scale);
    out
}

/// Serialized form: centre tuple, `r`, and each coefficient tensor row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TTSeriesJson {
    pub center: TupleJson,
    pub order: usize,
    pub r: usize,
    pub coeffs: Vec<MatrixJson>,
}

impl From<&TTSeries> for TTSeriesJson {
    fn from(t: &TTSeries) -> Self {
        TTSeriesJson {
            center: TupleJson::from(&t.center),
            order: t.order(),
            r: t.r,
            coeffs: t.coeffs.iter().map(MatrixJson::from).collect(),
        }
    }
}

impl TryFrom<&TTSeriesJson> for TTSeries {
    type Error = NcError;
    fn try_from(j: &TTSeriesJson) -> Result<Self> {
        let center = MatTuple::try_from(&j.center)?;
        let coeffs = j
            .coeffs
            .iter()
            .map(CMatrix::try_from)
            .collect::<Result<Vec<_>>>()?;
        check_dim("TTSeriesJson order", j.order + 1, coeffs.len())?;
        TTSeries::new(center, j.r, coeffs)
    }
}
