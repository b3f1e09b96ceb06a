//! Completely positive nc kernels on a concrete finite-dimensional carrier.
//!
//! A carrier [`RkhsSpace`] has an orthonormal basis of `ℂ^r`-valued nc functions
//! `φ_k`; its kernel is `K(Z,W)(P)_{st} = Σ_k φ_{k,s}(Z) P φ_{k,t}(W)*`. Functions
//! and kernel elements are coordinate vectors in `ℂ^D`, and elements of
//! `ℋ_m = ℋ ⊗ ℂ^{m×m}` are [`MatSpaceElement`]s.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, NcError, Result};
use crate::fock::{build_fock, monomials, FockSpace};
use crate::linalg::{
    c64, elementary, lstsq_min_norm, min_eig_hermitian, nullspace_with_gap, random_positive,
    rank_report, spectral_norm, Tol, C64, CMatrix, CVector, MatSpaceElement,
};
use crate::ncdiff::{delta_l, DeltaRequest, NcFunction};
use crate::ncpoly::{poly_eval, MatTuple, NcPoly, Word};

/// `K(Z,W)(P)` as an `r × r` array of `n × m` blocks; block `(s, t)` at `s·r + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelValue {
    pub r: usize,
    pub blocks: Vec<CMatrix>,
}

impl KernelValue {
    pub fn block(&self, s: usize, t: usize) -> &CMatrix {
        &self.blocks[s * self.r + t]
    }

    /// The `(r·n) × (r·m)` block matrix.
    pub fn to_matrix(&self) -> CMatrix {
        let (n, m) = (self.blocks[0].nrows(), self.blocks[0].ncols());
        CMatrix::from_fn(self.r * n, self.r * m, |i, j| self.block(i / n, j / m)[(i % n, j % m)])
    }
}

/// An nc kernel `K(Z,W): ℂ^{n×m} → (ℂ^{n×m})^{r×r}`.
pub trait NcKernel: Sync {
    fn d(&self) -> usize;
    fn r(&self) -> usize;
    fn eval(&self, z: &MatTuple, w: &MatTuple, p: &CMatrix) -> Result<KernelValue>;
}

/// Truncated Hardy kernel `Σ_{|α|≤N} Z^α P (W^α)*`.
#[derive(Debug, Clone)]
pub struct HardyKernel {
    pub space: FockSpace,
}

impl HardyKernel {
    pub fn new(d: usize, n_max: usize) -> Result<Self> {
        Ok(HardyKernel { space: build_fock(d, n_max)?.0 })
    }
}

impl NcKernel for HardyKernel {
    fn d(&self) -> usize {
        self.space.d
    }
    fn r(&self) -> usize {
        1
    }
    fn eval(&self, z: &MatTuple, w: &MatTuple, p: &CMatrix) -> Result<KernelValue> {
        Ok(KernelValue {
            r: 1,
            blocks: vec![crate::fock::hardy_kernel(&self.space, z, w, p)?],
        })
    }
}

/// Wraps a closure `(Z, W, P) ↦ K(Z,W)(P)`.
pub struct KernelFn<F> {
    pub d: usize,
    pub r: usize,
    pub f: F,
}

impl<F> NcKernel for KernelFn<F>
where
    F: Fn(&MatTuple, &MatTuple, &CMatrix) -> Result<KernelValue> + Sync,
{
    fn d(&self) -> usize {
        self.d
    }
    fn r(&self) -> usize {
        self.r
    }
    fn eval(&self, z: &MatTuple, w: &MatTuple, p: &CMatrix) -> Result<KernelValue> {
        (self.f)(z, w, p)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Features {
    /// `φ_α = X^α`, `|α| ≤ N`, scalar valued.
    Fock(FockSpace),
    Polys(Vec<NcPoly>),
}

/// A finite-dimensional nc reproducing kernel Hilbert space with an orthonormal feature basis.
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsSpace {
    pub d: usize,
    pub r: usize,
    features: Features,
}

/// `K(·,W)σ_t` as an element of `ℋ_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenKernelElement {
    pub w: MatTuple,
    pub t: usize,
    pub value: MatSpaceElement,
}

impl RkhsSpace {
    /// The nc polynomials of degree `≤ N` with the Fock inner product.
    pub fn fock(d: usize, n_max: usize) -> Result<Self> {
        Ok(RkhsSpace {
            d,
            r: 1,
            features: Features::Fock(build_fock(d, n_max)?.0),
        })
    }

    /// Carrier spanned by the given features, declared orthonormal.
    pub fn from_features(features: Vec<NcPoly>) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| NcError::InvalidArgument("at least one feature".into()))?;
        let (d, r) = (first.d, first.r);
        for f in &features {
            check_dim("feature arity", d, f.d)?;
            check_dim("feature components", r, f.r)?;
        }
        Ok(RkhsSpace {
            d,
            r,
            features: Features::Polys(features),
        })
    }

    pub fn dim(&self) -> usize {
        match &self.features {
            Features::Fock(f) => f.dim,
            Features::Polys(p) => p.len(),
        }
    }

    pub fn fock_space(&self) -> Option<&FockSpace> {
        match &self.features {
            Features::Fock(f) => Some(f),
            Features::Polys(_) => None,
        }
    }

    /// Feature `k` as a polynomial.
    pub fn feature(&self, k: usize) -> NcPoly {
        match &self.features {
            Features::Fock(f) => NcPoly::monomial(self.d, f.word(k), c64(1.0, 0.0)).expect("word in range"),
            Features::Polys(p) => p[k].clone(),
        }
    }

    fn check_point(&self, w: &MatTuple) -> Result<()> {
        if w.d() == self.d {
            Ok(())
        } else {
            Err(NcError::ArityMismatch { expected: self.d, got: w.d() })
        }
    }

    /// `values[k][t] = φ_{k,t}(W)`.
    pub fn feature_values(&self, w: &MatTuple) -> Result<Vec<Vec<CMatrix>>> {
        self.check_point(w)?;
        match &self.features {
            Features::Fock(f) => Ok(monomials(f, w).into_iter().map(|m| vec![m]).collect()),
            Features::Polys(p) => p.iter().map(|f| poly_eval(f, w).map(|v| v.comps)).collect(),
        }
    }

    /// `f(W)` for `f = Σ_k c_k φ_k`.
    pub fn eval_function(&self, coords: &CVector, w: &MatTuple) -> Result<Vec<CMatrix>> {
        check_dim("eval_function coordinates", self.dim(), coords.len())?;
        let vals = self.feature_values(w)?;
        let mut out = vec![CMatrix::zeros(w.n, w.n); self.r];
        for (c, phi) in coords.iter().zip(&vals) {
            for (o, p) in out.iter_mut().zip(phi) {
                *o += p.map(|z| z * c);
            }
        }
        Ok(out)
    }

    /// Coordinates of `K_{W,v,y}`: `c_k = Σ_t v φ_{k,t}(W)* y_t` with `v ∈ ℂ^{1×m}` and
    /// `y ∈ ℂ^{rm}` stored component-major.
    pub fn kernel_element(&self, w: &MatTuple, v: &CMatrix, y: &CVector) -> Result<CVector> {
        let m = w.n;
        check_dim("kernel_element v rows", 1, v.nrows())?;
        check_dim("kernel_element v cols", m, v.ncols())?;
        check_dim("kernel_element y", self.r * m, y.len())?;
        let vals = self.feature_values(w)?;
        Ok(CVector::from_fn(self.dim(), |k, _| {
            (0..self.r)
                .map(|t| (v * vals[k][t].adjoint() * y.rows(t * m, m))[(0, 0)])
                .sum()
        }))
    }

    /// `K(·,W)σ_t`: entry `(i, j)` has coordinates `conj(φ_{k,t}(W)_{ji})`.
    pub fn gen_kernel(&self, w: &MatTuple, t: usize) -> Result<GenKernelElement> {
        if t >= self.r {
            return Err(NcError::InvalidArgument(format!("component {} outside 1..={}", t + 1, self.r)));
        }
        let vals = self.feature_values(w)?;
        let value = MatSpaceElement::from_fn(w.n, self.dim(), |i, j, k| vals[k][t][(j, i)].conj());
        Ok(GenKernelElement { w: w.clone(), t, value })
    }

    /// `F_{pq,t}` evaluated at `x`, for every slot `(p, q)` of `F ∈ ℋ_m`.
    fn slot_values(&self, f: &MatSpaceElement, x: &MatTuple, t: usize) -> Result<Vec<CMatrix>> {
        check_dim("element dimension", self.dim(), f.dim_h)?;
        let vals = self.feature_values(x)?;
        let m = f.m;
        let mut out = vec![CMatrix::zeros(x.n, x.n); m * m];
        for p in 0..m {
            for q in 0..m {
                for (k, phi) in vals.iter().enumerate() {
                    let c = f.get(p, q, k);
                    if c != C64::new(0.0, 0.0) {
                        out[p * m + q] += phi[t].map(|z| z * c);
                    }
                }
            }
        }
        Ok(out)
    }

    /// `F_t(W)(A) = Σ_{p,q} F_{pq,t}(W) A E_{pq}`.
    pub fn apply_at(&self, f: &MatSpaceElement, w: &MatTuple, t: usize, a: &CMatrix) -> Result<CMatrix> {
        let m = f.m;
        check_dim("apply_at level", m, w.n)?;
        let slots = self.slot_values(f, w, t)?;
        let mut out = CMatrix::zeros(m, m);
        for p in 0..m {
            for q in 0..m {
                out += &slots[p * m + q] * a * elementary(m, m, p, q);
            }
        }
        Ok(out)
    }

    /// `EV^L_W(F)_t = Σ_{p,q} E_{pq} F_{pq,t}(W)`.
    pub fn ev_left(&self, f: &MatSpaceElement, w: &MatTuple) -> Result<Vec<CMatrix>> {
        let m = f.m;
        check_dim("ev_left level", m, w.n)?;
        (0..self.r)
            .map(|t| {
                let slots = self.slot_values(f, w, t)?;
                let mut out = CMatrix::zeros(m, m);
                for p in 0..m {
                    for q in 0..m {
                        out += elementary(m, m, p, q) * &slots[p * m + q];
                    }
                }
                Ok(out)
            })
            .collect()
    }

    /// `EV^R_W(F)_t = Σ_{p,q} F_{pq,t}(W) E_{pq}`.
    pub fn ev_right(&self, f: &MatSpaceElement, w: &MatTuple) -> Result<Vec<CMatrix>> {
        (0..self.r).map(|t| self.apply_at(f, w, t, &CMatrix::identity(w.n, w.n))).collect()
    }

    /// `(EV^L_W)*(𝐀) = Σ_s A_s [K(·,W)σ_s]`.
    pub fn ev_left_adjoint(&self, a: &[CMatrix], w: &MatTuple) -> Result<MatSpaceElement> {
        check_dim("ev_left_adjoint components", self.r, a.len())?;
        let mut out = MatSpaceElement::zeros(w.n, self.dim());
        for (s, a_s) in a.iter().enumerate() {
            out = out.add(&self.gen_kernel(w, s)?.value.left_mul(a_s));
        }
        Ok(out)
    }

    /// `(EV^R_W)*(𝐀) = Σ_s [K(·,W)σ_s] A_s`.
    pub fn ev_right_adjoint(&self, a: &[CMatrix], w: &MatTuple) -> Result<MatSpaceElement> {
        check_dim("ev_right_adjoint components", self.r, a.len())?;
        let mut out = MatSpaceElement::zeros(w.n, self.dim());
        for (s, a_s) in a.iter().enumerate() {
            out = out.add(&self.gen_kernel(w, s)?.value.right_mul(a_s));
        }
        Ok(out)
    }

    /// Matrix of `EV^L_W` (`left`) or `EV^R_W`: rows `t·m² + a·m + b`, columns the
    /// coordinates of `ℋ_m`.
    pub fn ev_matrix(&self, w: &MatTuple, left: bool) -> Result<CMatrix> {
        let (m, dim) = (w.n, self.dim());
        let vals = self.feature_values(w)?;
        let mut out = CMatrix::zeros(self.r * m * m, m * m * dim);
        for p in 0..m {
            for q in 0..m {
                for (k, phi) in vals.iter().enumerate() {
                    let col = (p * m + q) * dim + k;
                    for (t, v) in phi.iter().enumerate() {
                        for c in 0..m {
                            if left {
                                // E_pq φ: row p holds row q of φ.
                                out[(t * m * m + p * m + c, col)] = v[(q, c)];
                            } else {
                                // φ E_pq: column q holds column p of φ.
                                out[(t * m * m + c * m + q, col)] = v[(c, p)];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// `⟨F, G⟩_L(i, j) = Σ_l ⟨f_il, g_jl⟩`.
    pub fn inner_left(&self, f: &MatSpaceElement, g: &MatSpaceElement) -> CMatrix {
        let m = f.m;
        CMatrix::from_fn(m, m, |i, j| (0..m).map(|l| g.entry(j, l).dotc(&f.entry(i, l))).sum())
    }

    /// `⟨F, G⟩_R(i, j) = Σ_l ⟨f_lj, g_li⟩`.
    pub fn inner_right(&self, f: &MatSpaceElement, g: &MatSpaceElement) -> CMatrix {
        let m = f.m;
        CMatrix::from_fn(m, m, |i, j| (0..m).map(|l| g.entry(l, i).dotc(&f.entry(l, j))).sum())
    }

    /// The derivative `Δ^ℓ K(·,W,…,W)σ_t (X¹,…,X^ℓ)`: the generalized kernel element at the
    /// lower-bidiagonal point with `X^i` at block `(i, i−1)`, selecting block `0` on the
    /// left and block `ℓ` on the right.
    pub fn kernel_derivative(&self, w: &MatTuple, dirs: &[MatTuple], t: usize) -> Result<MatSpaceElement> {
        if t >= self.r {
            return Err(NcError::InvalidArgument(format!("component {} outside 1..={}", t + 1, self.r)));
        }
        let m = w.n;
        for x in dirs {
            check_dim("kernel_derivative direction level", m, x.n)?;
            check_dim("kernel_derivative direction arity", w.d(), x.d())?;
        }
        let l = dirs.len();
        let req = DeltaRequest::new(vec![w.clone(); l + 1], dirs.iter().map(|x| x.mats.clone()).collect());
        let point = req.assemble(false)?;
        let vals = self.feature_values(&point)?;
        Ok(MatSpaceElement::from_fn(m, self.dim(), |i, j, k| vals[k][t][(l * m + j, i)].conj()))
    }

    /// Matrix of `M_{Z_k}` compressed to the carrier (coefficient projection onto the feature span).
    pub fn mult_op(&self, k: usize) -> Result<CMatrix> {
        if k >= self.d {
            return Err(NcError::InvalidArgument(format!("coordinate {} outside 1..={}", k + 1, self.d)));
        }
        if let Features::Fock(f) = &self.features {
            let (_, ops) = build_fock(f.d, f.n_max)?;
            return Ok(ops.dense(crate::fock::Shift::Left(k)));
        }
        let dim = self.dim();
        let words: Vec<Word> = {
            let mut ws: Vec<Word> = (0..dim)
                .flat_map(|j| {
                    let f = self.feature(j);
                    let g = NcPoly::coordinate(self.d, k).expect("valid coordinate").mul(&f).expect("scalar factor");
                    f.terms().chain(g.terms()).map(|(w, _)| w.clone()).collect::<Vec<_>>()
                })
                .collect();
            ws.sort();
            ws.dedup();
            ws
        };
        let coeff_matrix = |polys: &[NcPoly]| {
            let rows = words.len() * self.r;
            CMatrix::from_fn(rows, polys.len(), |row, col| {
                polys[col]
                    .coef(&words[row / self.r])
                    .map(|c| c[row % self.r])
                    .unwrap_or(C64::new(0.0, 0.0))
            })
        };
        let feats: Vec<NcPoly> = (0..dim).map(|j| self.feature(j)).collect();
        let shifted: Vec<NcPoly> = feats
            .iter()
            .map(|f| NcPoly::coordinate(self.d, k).expect("valid coordinate").mul(f).expect("scalar factor"))
            .collect();
        lstsq_min_norm(&coeff_matrix(&feats), &coeff_matrix(&shifted))
    }

    /// Kernel of this carrier at `(Z, W)`.
    pub fn kernel(&self, z: &MatTuple, w: &MatTuple, p: &CMatrix) -> Result<KernelValue> {
        NcKernel::eval(self, z, w, p)
    }

    /// Rank of the coordinate vectors of `{A K(·,W)σ_t B}` over the sample points.
    pub fn density_rank(&self, points: &[MatTuple]) -> Result<usize> {
        let mut cols = Vec::new();
        for w in points {
            for t in 0..self.r {
                let g = self.gen_kernel(w, t)?.value;
                for i in 0..w.n {
                    for j in 0..w.n {
                        cols.push(g.entry(i, j));
                    }
                }
            }
        }
        if cols.is_empty() {
            return Ok(0);
        }
        let mat = CMatrix::from_columns(&cols);
        Ok(rank_report(&mat, Tol::Auto).rank)
    }
}

impl NcKernel for RkhsSpace {
    fn d(&self) -> usize {
        self.d
    }
    fn r(&self) -> usize {
        self.r
    }
    fn eval(&self, z: &MatTuple, w: &MatTuple, p: &CMatrix) -> Result<KernelValue> {
        check_dim("kernel P rows", z.n, p.nrows())?;
        check_dim("kernel P cols", w.n, p.ncols())?;
        let fz = self.feature_values(z)?;
        let fw = self.feature_values(w)?;
        let r = self.r;
        let mut blocks = vec![CMatrix::zeros(z.n, w.n); r * r];
        for (a, b) in fz.iter().zip(&fw) {
            for s in 0..r {
                let left = &a[s] * p;
                for t in 0..r {
                    blocks[s * r + t] += &left * b[t].adjoint();
                }
            }
        }
        Ok(KernelValue { r, blocks })
    }
}

/// Matrix of `P ↦ K(Z,W)(P)`: columns indexed by `vec(P)` row-major, rows by the
/// row-major entries of the `(r·n) × (r·m)` block matrix.
pub fn kernel_map_matrix(k: &dyn NcKernel, z: &MatTuple, w: &MatTuple) -> Result<CMatrix> {
    let (n, m, r) = (z.n, w.n, k.r());
    let mut out = CMatrix::zeros(r * n * r * m, n * m);
    for a in 0..n {
        for b in 0..m {
            let v = k.eval(z, w, &elementary(n, m, a, b))?.to_matrix();
            for i in 0..r * n {
                for j in 0..r * m {
                    out[(i * r * m + j, a * m + b)] = v[(i, j)];
                }
            }
        }
    }
    Ok(out)
}

/// `𝖤(W)_{st}(i, j) = trace K_{st}(W,W)(E_{ij}*)`, computed from the kernel alone.
pub fn e_matrix(k: &dyn NcKernel, w: &MatTuple, s: usize, t: usize) -> Result<CMatrix> {
    let m = w.n;
    let mut out = CMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = k.eval(w, w, &elementary(m, m, j, i))?.block(s, t).trace();
        }
    }
    Ok(out)
}

/// `K_{ts}(W,W)*(Q)` with respect to the Hilbert–Schmidt pairing.
pub fn kernel_block_adjoint(k: &dyn NcKernel, w: &MatTuple, t: usize, s: usize, q: &CMatrix) -> Result<CMatrix> {
    let m = w.n;
    let mut out = CMatrix::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            // ⟨E_ab, K*(Q)⟩ = ⟨K(E_ab), Q⟩, so K*(Q)_{ab} = conj(⟨K(E_ab), Q⟩).
            let v = k.eval(w, w, &elementary(m, m, a, b))?;
            out[(a, b)] = crate::linalg::hs_inner(v.block(t, s), q).conj();
        }
    }
    Ok(out)
}

/// One criterion of a nondegeneracy or strict-positivity test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion: bool,
    pub witness: Option<String>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub criteria: Vec<CriterionResult>,
    pub agree: bool,
}

impl CriteriaReport {
    fn new(criteria: Vec<CriterionResult>) -> Self {
        let first = criteria[0].criterion;
        let agree = criteria.iter().all(|c| c.criterion == first);
        CriteriaReport { criteria, agree }
    }

    pub fn flags(&self) -> Vec<bool> {
        self.criteria.iter().map(|c| c.criterion).collect()
    }
}

fn rank_criterion(m: &CMatrix, expected: usize, what: &str) -> CriterionResult {
    let rep = rank_report(m, Tol::Auto);
    let full = rep.rank == expected;
    CriterionResult {
        criterion: full,
        witness: (!full).then(|| format!("{what}: rank {} < {expected}", rep.rank)),
        residual: if rep.rank == 0 {
            0.0
        } else {
            rep.singular_values.get(expected.saturating_sub(1)).copied().unwrap_or(0.0)
        },
    }
}

/// The four equivalent nondegeneracy conditions at `W`.
pub fn nondegeneracy_report(space: &RkhsSpace, w: &MatTuple) -> Result<CriteriaReport> {
    let (m, r) = (w.n, space.r);
    let c1 = rank_criterion(&space.ev_matrix(w, true)?, r * m * m, "left evaluation");

    let mut blocks = CMatrix::zeros(r * m, r * m);
    for s in 0..r {
        for t in 0..r {
            let b = kernel_block_adjoint(space, w, t, s, &CMatrix::identity(m, m))?;
            blocks.view_mut((s * m, t * m), (m, m)).copy_from(&b);
        }
    }
    let c2 = rank_criterion(&blocks, r * m, "adjoint block matrix");

    let kmap = kernel_map_matrix(space, w, w)?;
    let scale = spectral_norm(&kmap).max(f64::MIN_POSITIVE);
    let (null, _) = nullspace_with_gap(&kmap, Tol::Auto);
    let mut witness = None;
    let mut worst = f64::INFINITY;
    if null.dim() > 0 {
        let p = psd_in_subspace(&null, m);
        let eig_min = min_eig_hermitian(&p) / spectral_norm(&p).max(f64::MIN_POSITIVE);
        let res = spectral_norm(&space.kernel(w, w, &p)?.to_matrix()) / scale / spectral_norm(&p).max(f64::MIN_POSITIVE);
        worst = eig_min;
        if eig_min >= -1e-8 && res <= 1e-10 {
            witness = Some(format!("P >= 0, P != 0 with K(W,W)(P) = 0, relative residual {res:.2e}"));
        }
    }
    let c3 = CriterionResult {
        criterion: witness.is_none(),
        witness,
        residual: worst,
    };

    // ∩_f ker f(W): stack every φ_{k,t}(W).
    let vals = space.feature_values(w)?;
    let rows: Vec<CMatrix> = vals.iter().flatten().cloned().collect();
    let stacked = vstack(&rows, m);
    let c4 = rank_criterion(&stacked, m, "common kernel of f(W)");
    Ok(CriteriaReport::new(vec![c1, c2, c3, c4]))
}

/// The four equivalent strict-positivity conditions at `W`, with `probes` random `P > 0`.
pub fn strict_positivity_report<R: Rng + ?Sized>(space: &RkhsSpace, w: &MatTuple, probes: usize, rng: &mut R) -> Result<CriteriaReport> {
    let (m, r) = (w.n, space.r);
    let c1 = rank_criterion(&space.ev_matrix(w, false)?, r * m * m, "right evaluation");
    let k_id = space.kernel(w, w, &CMatrix::identity(m, m))?.to_matrix();
    let c2 = rank_criterion(&k_id, r * m, "K(W,W)(I)");

    let mut worst = f64::INFINITY;
    for _ in 0..probes.max(1) {
        let p = random_positive(rng, m);
        let kp = space.kernel(w, w, &p)?.to_matrix();
        let kp = (&kp + kp.adjoint()).map(|z| z * 0.5);
        worst = worst.min(min_eig_hermitian(&kp) / spectral_norm(&kp).max(f64::MIN_POSITIVE));
    }
    let ok3 = worst > 1e-10;
    let c3 = CriterionResult {
        criterion: ok3,
        witness: (!ok3).then(|| format!("P > 0 with relative min eigenvalue {worst:.2e} of K(W,W)(P)")),
        residual: worst,
    };

    // ∩_f ker f(W)*: the ranges of all f(W): ℂ^m → ℂ^{rm} must span.
    let vals = space.feature_values(w)?;
    let cols: Vec<CMatrix> = vals.iter().map(|phi| vstack(phi, m)).collect();
    let wide = hstack(&cols, r * m);
    let c4 = rank_criterion(&wide, r * m, "joint range of f(W)");
    Ok(CriteriaReport::new(vec![c1, c2, c3, c4]))
}

/// Alternating projections between the Hermitian trace-one slice of `null` (matrices stored
/// as row-major `vec`) and the positive cone. The result lies in `null`.
fn psd_in_subspace(null: &crate::linalg::Subspace, m: usize) -> CMatrix {
    let to_vec = |p: &CMatrix| CMatrix::from_fn(m * m, 1, |i, _| p[(i / m, i % m)]);
    let from_vec = |v: &CMatrix| CMatrix::from_fn(m, m, |a, b| v[(a * m + b, 0)]);
    let project = |p: &CMatrix| {
        let q = from_vec(&null.project(&to_vec(p)));
        (&q + q.adjoint()).map(|z| z * 0.5)
    };
    let mut p = project(&CMatrix::identity(m, m));
    for _ in 0..500 {
        let eig = p.clone().symmetric_eigen();
        let mut pos = CMatrix::zeros(m, m);
        for (i, lam) in eig.eigenvalues.iter().enumerate() {
            if *lam > 0.0 {
                let q = eig.eigenvectors.column(i);
                pos += (q * q.adjoint()).map(|z| z * *lam);
            }
        }
        let next = project(&pos);
        let tr = next.trace().re;
        if tr.abs() < 1e-14 {
            return next;
        }
        let next = next.map(|z| z / tr);
        let done = crate::linalg::max_abs(&(&next - &p)) < 1e-14;
        p = next;
        if done {
            break;
        }
    }
    p
}

fn vstack(blocks: &[CMatrix], cols: usize) -> CMatrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), (b.nrows(), cols)).copy_from(b);
        at += b.nrows();
    }
    out
}

fn hstack(blocks: &[CMatrix], rows: usize) -> CMatrix {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), (rows, b.ncols())).copy_from(b);
        at += b.ncols();
    }
    out
}

/// A sample `(Z, P, Q)` for the positivity test.
#[derive(Debug, Clone)]
pub struct CpSample {
    pub z: MatTuple,
    /// `k × n` with `n` the level of `z`; `k` is common to all samples.
    pub p: CMatrix,
    /// `(r·n) × q`; `q` is common to all samples.
    pub q: CMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpReport {
    pub min_eig: f64,
    pub cp: bool,
}

/// Smallest eigenvalue of `Σ_{i,j} Q_i* K(Z^i, Z^j)(P_i* P_j) Q_j`.
pub fn cp_check_sampled(k: &dyn NcKernel, samples: &[CpSample]) -> Result<CpReport> {
    let q = samples
        .first()
        .ok_or_else(|| NcError::InvalidArgument("at least one sample".into()))?
        .q
        .ncols();
    let mut total = CMatrix::zeros(q, q);
    for si in samples {
        for sj in samples {
            let kv = k.eval(&si.z, &sj.z, &(si.p.adjoint() * &sj.p))?.to_matrix();
            total += si.q.adjoint() * kv * &sj.q;
        }
    }
    let herm = (&total + total.adjoint()).map(|z| z * 0.5);
    let min_eig = min_eig_hermitian(&herm);
    Ok(CpReport { min_eig, cp: min_eig >= -1e-10 })
}

/// Random samples at levels `1..=max_level`.
pub fn random_cp_samples<R: Rng + ?Sized>(rng: &mut R, d: usize, r: usize, count: usize, max_level: usize, scale: f64) -> Vec<CpSample> {
    (0..count)
        .map(|i| {
            let n = 1 + i % max_level.max(1);
            CpSample {
                z: MatTuple::random(rng, d, n, scale),
                p: crate::linalg::random_cmatrix(rng, 2, n),
                q: crate::linalg::random_cmatrix(rng, r * n, 2),
            }
        })
        .collect()
}

/// `C·K₁(Z,W)(P) − S(Z) K₂(Z,W)(P) S(W)*` for a scalar-valued multiplier `S`.
pub struct MultiplierKernel<'a> {
    pub k1: &'a dyn NcKernel,
    pub k2: &'a dyn NcKernel,
    pub s: &'a dyn NcFunction,
    pub c: f64,
}

impl NcKernel for MultiplierKernel<'_> {
    fn d(&self) -> usize {
        self.k1.d()
    }
    fn r(&self) -> usize {
        self.k1.r()
    }
    fn eval(&self, z: &MatTuple, w: &MatTuple, p: &CMatrix) -> Result<KernelValue> {
        let a = self.k1.eval(z, w, p)?;
        let b = self.k2.eval(z, w, p)?;
        let sz = &self.s.eval(z)?.comps[0];
        let sw = &self.s.eval(w)?.comps[0];
        Ok(KernelValue {
            r: a.r,
            blocks: a
                .blocks
                .iter()
                .zip(&b.blocks)
                .map(|(x, y)| x.map(|v| v * self.c) - sz * y * sw.adjoint())
                .collect(),
        })
    }
}

/// Sampled positivity of `C·K₁ − S K₂ S*`.
pub fn multiplier_check(k1: &dyn NcKernel, k2: &dyn NcKernel, s: &dyn NcFunction, c: f64, samples: &[CpSample]) -> Result<CpReport> {
    cp_check_sampled(&MultiplierKernel { k1, k2, s, c }, samples)
}

/// `Δ^ℓ_L F_t(W,…,W)(X¹,…,X^ℓ)` for every slot of `F`, computed by block evaluation
/// of the slot polynomials.
pub fn derivative_values(space: &RkhsSpace, f: &MatSpaceElement, w: &MatTuple, dirs: &[MatTuple], t: usize) -> Result<Vec<CMatrix>> {
    let m = f.m;
    let mut out = Vec::with_capacity(m * m);
    for p in 0..m {
        for q in 0..m {
            let mut poly = NcPoly::zero(space.d, 1);
            for k in 0..space.dim() {
                let c = f.get(p, q, k);
                if c != C64::new(0.0, 0.0) {
                    poly = poly.add(&space.feature(k).component(t).scale(c))?;
                }
            }
            let req = DeltaRequest::new(vec![w.clone(); dirs.len() + 1], dirs.iter().map(|x| x.mats.clone()).collect());
            out.push(delta_l(&poly, &req)?.comps.remove(0));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hs_inner, max_abs, random_cmatrix, random_cvector};
    use crate::ncdiff::NcClosure;
    use crate::ncpoly::NcValue;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_element(rng: &mut ChaCha8Rng, m: usize, dim: usize) -> MatSpaceElement {
        MatSpaceElement::from_vector(m, dim, random_cvector(rng, m * m * dim)).unwrap()
    }

    fn degenerate(m: usize, rng: &mut ChaCha8Rng) -> (RkhsSpace, MatTuple) {
        let space = RkhsSpace::from_features(vec![NcPoly::coordinate(2, 0).unwrap()]).unwrap();
        let mut w = MatTuple::random(rng, 2, m, 0.5);
        let u = random_cmatrix(rng, m, m);
        let mut proj = CMatrix::identity(m, m);
        proj[(0, 0)] = c64(0.0, 0.0);
        w.mats[0] = &u * proj * u.adjoint().map(|z| z * 0.2);
        (space, w)
    }

    #[test]
    fn kernel_element_examples() {
        let fock = RkhsSpace::fock(2, 3).unwrap();
        let one = CMatrix::identity(1, 1);
        let y = CVector::from_element(1, c64(1.0, 0.0));
        let e = fock.kernel_element(&MatTuple::zeros(2, 1), &one, &y).unwrap();
        assert_eq!(e[0], c64(1.0, 0.0));
        assert!(e.rows(1, e.len() - 1).iter().all(|z| z.norm() == 0.0));

        let unary = RkhsSpace::fock(1, 2).unwrap();
        let w = c64(0.3, 0.6);
        let e = unary.kernel_element(&MatTuple::scalar(&[w]), &one, &y).unwrap();
        for k in 0..3 {
            assert!((e[k] - w.conj().powi(k as i32)).norm() < 1e-15);
        }
        let z = unary.kernel_element(&MatTuple::scalar(&[w]), &one, &CVector::zeros(1)).unwrap();
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn gen_kernel_matches_kernel_vector_up_to_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fock = RkhsSpace::fock(2, 3).unwrap();
        let w = MatTuple::random(&mut rng, 2, 2, 0.5);
        let g = fock.gen_kernel(&w, 0).unwrap().value;
        let v = crate::fock::gen_kernel_vector(fock.fock_space().unwrap(), &w).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..fock.dim() {
                    assert_eq!(g.get(i, j, k), v.get(j, i, k).conj());
                }
            }
        }
        let g0 = fock.gen_kernel(&MatTuple::zeros(2, 2), 0).unwrap().value;
        assert_eq!(g0.entry(0, 0)[0], c64(1.0, 0.0));
        assert_eq!(g0.entry(0, 1)[0], c64(0.0, 0.0));
        assert_eq!(g0.norm(), 2f64.sqrt());
    }

    #[test]
    fn reproducing_property_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fock = RkhsSpace::fock(2, 4).unwrap();
        for m in 1..=3 {
            let w = MatTuple::random(&mut rng, 2, m, 0.6);
            let f = random_cvector(&mut rng, fock.dim());
            let v = random_cmatrix(&mut rng, 1, m);
            let y = random_cvector(&mut rng, m);
            let k = fock.kernel_element(&w, &v, &y).unwrap();
            let lhs = k.dotc(&f);
            let fw = &fock.eval_function(&f, &w).unwrap()[0];
            let rhs = y.dotc(&(fw * v.adjoint()).column(0).into_owned());
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn evaluation_of_constant_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fock = RkhsSpace::fock(2, 3).unwrap();
        let w = MatTuple::random(&mut rng, 2, 2, 0.5);
        let f = random_cvector(&mut rng, fock.dim());
        let big = MatSpaceElement::from_fn(2, fock.dim(), |p, q, k| if p == q { f[k] } else { c64(0.0, 0.0) });
        let fw = fock.eval_function(&f, &w).unwrap();
        assert!(max_abs(&(&fock.ev_left(&big, &w).unwrap()[0] - &fw[0])) < 1e-13);
        assert!(max_abs(&(&fock.ev_right(&big, &w).unwrap()[0] - &fw[0])) < 1e-13);
        let g = fock.gen_kernel(&w, 0).unwrap().value;
        let ident = CMatrix::identity(2, 2);
        let lhs = big.hs_inner(&g);
        let rhs = hs_inner(&fock.apply_at(&big, &w, 0, &ident).unwrap(), &ident);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn ev_matrix_matches_functional() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let space = RkhsSpace::from_features(vec![
            NcPoly::random(&mut rng, 2, 2, 2, 4),
            NcPoly::random(&mut rng, 2, 2, 2, 4),
        ])
        .unwrap();
        let w = MatTuple::random(&mut rng, 2, 2, 0.5);
        let f = random_element(&mut rng, 2, space.dim());
        for left in [true, false] {
            let mat = space.ev_matrix(&w, left).unwrap();
            let direct = if left { space.ev_left(&f, &w).unwrap() } else { space.ev_right(&f, &w).unwrap() };
            let flat = &mat * &f.data;
            for t in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        assert!((flat[t * 4 + a * 2 + b] - direct[t][(a, b)]).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_kernel_fails_every_criterion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in 1..=3 {
            let (space, w) = degenerate(m, &mut rng);
            let nd = nondegeneracy_report(&space, &w).unwrap();
            let sp = strict_positivity_report(&space, &w, 8, &mut rng).unwrap();
            assert_eq!(nd.flags(), vec![false; 4], "{nd:?}");
            assert_eq!(sp.flags(), vec![false; 4], "{sp:?}");
        }
    }

    #[test]
    fn fock_kernel_passes_every_criterion() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fock = RkhsSpace::fock(2, 3).unwrap();
        for m in 1..=3 {
            for w in [MatTuple::zeros(2, m), MatTuple::random_with_row_norm(&mut rng, 2, m, 0.7)] {
                let nd = nondegeneracy_report(&fock, &w).unwrap();
                let sp = strict_positivity_report(&fock, &w, 8, &mut rng).unwrap();
                assert_eq!(nd.flags(), vec![true; 4]);
                assert_eq!(sp.flags(), vec![true; 4]);
            }
        }
        let scalar = RkhsSpace::from_features(vec![NcPoly::constant(1, vec![c64(0.5, 0.0)])]).unwrap();
        let w = MatTuple::scalar(&[c64(0.2, 0.0)]);
        assert!(nondegeneracy_report(&scalar, &w).unwrap().flags().iter().all(|&b| b));
    }

    #[test]
    fn cp_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let hardy = HardyKernel::new(2, 3).unwrap();
        let samples = random_cp_samples(&mut rng, 2, 1, 6, 3, 0.5);
        assert!(cp_check_sampled(&hardy, &samples).unwrap().cp);
        let neg = KernelFn {
            d: 2,
            r: 1,
            f: |_: &MatTuple, _: &MatTuple, p: &CMatrix| Ok(KernelValue { r: 1, blocks: vec![-p.clone()] }),
        };
        assert!(!cp_check_sampled(&neg, &samples).unwrap().cp);
        let single = &samples[..1];
        let direct = hardy.eval(&single[0].z, &single[0].z, &(single[0].p.adjoint() * &single[0].p)).unwrap().to_matrix();
        let expect = min_eig_hermitian(&(single[0].q.adjoint() * direct * &single[0].q));
        assert!((cp_check_sampled(&hardy, single).unwrap().min_eig - expect).abs() < 1e-12);
    }

    #[test]
    fn multiplier_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples = random_cp_samples(&mut rng, 2, 1, 6, 3, 0.5);
        let k = HardyKernel::new(2, 4).unwrap();
        let k_lower = HardyKernel::new(2, 3).unwrap();
        let ident = NcClosure { d: 2, r: 1, f: |x: &MatTuple| Ok(NcValue { comps: vec![CMatrix::identity(x.n, x.n)] }) };
        let ident_rep = multiplier_check(&k, &k, &ident, 1.0, &samples).unwrap();
        assert!(ident_rep.cp && ident_rep.min_eig.abs() < 1e-10);
        let z1 = NcPoly::coordinate(2, 0).unwrap();
        assert!(multiplier_check(&k, &k_lower, &z1, 1.0, &samples).unwrap().cp);
        assert!(!multiplier_check(&k, &k, &z1, 0.0, &samples).unwrap().cp);
    }

    #[test]
    fn e_matrix_and_adjoint_blocks_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let space = RkhsSpace::from_features(vec![
            NcPoly::random(&mut rng, 2, 2, 2, 4),
            NcPoly::random(&mut rng, 2, 2, 2, 4),
            NcPoly::random(&mut rng, 2, 2, 1, 3),
        ])
        .unwrap();
        let w = MatTuple::random(&mut rng, 2, 2, 0.5);
        for s in 0..2 {
            for t in 0..2 {
                let e = e_matrix(&space, &w, s, t).unwrap();
                let adj = kernel_block_adjoint(&space, &w, t, s, &CMatrix::identity(2, 2)).unwrap();
                assert!(max_abs(&(e - adj)) < 1e-12);
            }
        }
    }

    #[test]
    fn density_reaches_carrier_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let fock = RkhsSpace::fock(2, 3).unwrap();
        let points: Vec<MatTuple> = (0..6).map(|_| MatTuple::random(&mut rng, 2, 2, 0.6)).collect();
        assert_eq!(fock.density_rank(&points).unwrap(), fock.dim());
    }

    #[test]
    fn derivative_of_order_zero_is_gen_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fock = RkhsSpace::fock(2, 3).unwrap();
        let w = MatTuple::random(&mut rng, 2, 2, 0.5);
        assert_eq!(fock.kernel_derivative(&w, &[], 0).unwrap(), fock.gen_kernel(&w, 0).unwrap().value);
        assert!(fock.kernel_derivative(&w, &[MatTuple::zeros(2, 3)], 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn generalized_reproducing(seed in any::<u64>(), m in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let space = RkhsSpace::from_features(vec![
                NcPoly::random(&mut rng, 2, 2, 3, 5),
                NcPoly::random(&mut rng, 2, 2, 2, 5),
                NcPoly::random(&mut rng, 2, 2, 1, 3),
            ]).unwrap();
            let w = MatTuple::random(&mut rng, 2, m, 0.6);
            let f = random_element(&mut rng, m, space.dim());
            let (a, b) = (random_cmatrix(&mut rng, m, m), random_cmatrix(&mut rng, m, m));
            for t in 0..2 {
                let g = space.gen_kernel(&w, t).unwrap().value.left_mul(&a).right_mul(&b);
                let lhs = f.hs_inner(&g);
                let rhs = hs_inner(&space.apply_at(&f, &w, t, &a.adjoint()).unwrap(), &b);
                prop_assert!((lhs - rhs).norm() < 1e-10);
            }
        }

        #[test]
        fn evaluation_compositions(seed in any::<u64>(), m in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let space = RkhsSpace::from_features(vec![
                NcPoly::random(&mut rng, 2, 2, 2, 5),
                NcPoly::random(&mut rng, 2, 2, 2, 5),
            ]).unwrap();
            let w = MatTuple::random(&mut rng, 2, m, 0.6);
            let a: Vec<CMatrix> = (0..2).map(|_| random_cmatrix(&mut rng, m, m)).collect();
            let right = space.ev_right(&space.ev_right_adjoint(&a, &w).unwrap(), &w).unwrap();
            let left = space.ev_left(&space.ev_left_adjoint(&a, &w).unwrap(), &w).unwrap();
            let kid = space.kernel(&w, &w, &CMatrix::identity(m, m)).unwrap();
            for u in 0..2 {
                let mut r_expect = CMatrix::zeros(m, m);
                let mut l_expect = CMatrix::zeros(m, m);
                for s in 0..2 {
                    r_expect += kid.block(u, s) * &a[s];
                    l_expect += &a[s] * e_matrix(&space, &w, u, s).unwrap();
                }
                prop_assert!(max_abs(&(&right[u] - r_expect)) < 1e-10);
                prop_assert!(max_abs(&(&left[u] - l_expect)) < 1e-10);
            }
        }

        #[test]
        fn gram_identities_and_traces(seed in any::<u64>(), m in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let space = RkhsSpace::from_features(vec![
                NcPoly::random(&mut rng, 2, 2, 2, 5),
                NcPoly::random(&mut rng, 2, 2, 2, 5),
                NcPoly::random(&mut rng, 2, 2, 1, 4),
            ]).unwrap();
            let w = MatTuple::random(&mut rng, 2, m, 0.6);
            let (a, b) = (random_cmatrix(&mut rng, m, m), random_cmatrix(&mut rng, m, m));
            for s in 0..2 {
                for t in 0..2 {
                    let f = space.gen_kernel(&w, s).unwrap().value.left_mul(&a);
                    let g = space.gen_kernel(&w, t).unwrap().value.left_mul(&b);
                    let l = space.inner_left(&f, &g);
                    prop_assert!(max_abs(&(l - &a * e_matrix(&space, &w, t, s).unwrap() * b.adjoint())) < 1e-10);
                    let r = space.inner_right(&f, &g);
                    prop_assert!(max_abs(&(r - space.kernel(&w, &w, &(b.adjoint() * &a)).unwrap().block(t, s).clone())) < 1e-10);
                }
            }
            let f = random_element(&mut rng, m, space.dim());
            let g = random_element(&mut rng, m, space.dim());
            let hs = f.hs_inner(&g);
            prop_assert!((space.inner_left(&f, &g).trace() - hs).norm() < 1e-11);
            prop_assert!((space.inner_right(&f, &g).trace() - hs).norm() < 1e-11);
        }

        #[test]
        fn derivative_reproducing(seed in any::<u64>(), m in 1usize..3, l in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fock = RkhsSpace::fock(2, 4).unwrap();
            let w = MatTuple::random(&mut rng, 2, m, 0.5);
            let dirs: Vec<MatTuple> = (0..l).map(|_| MatTuple::random(&mut rng, 2, m, 0.5)).collect();
            let f = random_element(&mut rng, m, fock.dim());
            let (a, b) = (random_cmatrix(&mut rng, m, m), random_cmatrix(&mut rng, m, m));
            let dk = fock.kernel_derivative(&w, &dirs, 0).unwrap().left_mul(&a).right_mul(&b);
            let lhs = f.hs_inner(&dk);
            let slots = derivative_values(&fock, &f, &w, &dirs, 0).unwrap();
            let mut acted = CMatrix::zeros(m, m);
            for p in 0..m {
                for q in 0..m {
                    acted += &slots[p * m + q] * a.adjoint() * elementary(m, m, p, q);
                }
            }
            prop_assert!((lhs - hs_inner(&acted, &b)).norm() < 1e-9);
        }
    }
}
