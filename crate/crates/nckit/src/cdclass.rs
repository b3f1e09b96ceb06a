//! Matricial joint eigenspaces of operator tuples: the maps `D_{T−W}`, their kernels,
//! free left-module bases, class-membership sampling, Gram kernels of frames,
//! unitary-equivalence testing and the local generalized eigenspaces.
//!
//! Elements of `H^{m×m}` use the [`MatSpaceElement`] layout, so `h` is vectorized
//! as `((p·m) + q)·K + k`. Under this layout block `j` of `D_{T−W}` is
//! `I_{m²} ⊗ T_j − I_m ⊗ W_jᵀ ⊗ I_K`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, NcError, Result};
use crate::fock::{build_fock, Shift};
use crate::linalg::{
    c64, elementary, kron, lstsq_min_norm, max_abs, nullspace_with_gap, random_cvector, random_unitary, rank_report,
    spectral_norm, CMatrix, CVector, MatSpaceElement, RankReport, Subspace, Tol, C64,
};
use crate::ncpoly::MatTuple;
use crate::ncrkhs::{KernelValue, RkhsSpace};

/// Retries allowed in [`flanders_basis`].
pub const FLANDERS_RETRIES: usize = 32;

/// A `d`-tuple of `K × K` operators.
#[derive(Debug, Clone, PartialEq)]
pub struct OpTuple {
    pub k: usize,
    pub ops: Vec<CMatrix>,
}

impl OpTuple {
    pub fn new(ops: Vec<CMatrix>) -> Result<Self> {
        let k = ops
            .first()
            .ok_or_else(|| NcError::InvalidArgument("operator tuple needs at least one operator".into()))?
            .nrows();
        for t in &ops {
            check_dim("operator rows", k, t.nrows())?;
            check_dim("operator cols", k, t.ncols())?;
        }
        Ok(OpTuple { k, ops })
    }

    pub fn d(&self) -> usize {
        self.ops.len()
    }

    pub fn zeros(d: usize, k: usize) -> Self {
        OpTuple { k, ops: vec![CMatrix::zeros(k, k); d] }
    }

    /// `(R_1*, …, R_d*)` on the Fock space truncated at length `N`.
    pub fn fock_right_adjoint(d: usize, n_max: usize) -> Result<Self> {
        let (_, ops) = build_fock(d, n_max)?;
        OpTuple::new((0..d).map(|j| ops.dense(Shift::RightAdj(j))).collect())
    }

    /// `(L_1*, …, L_d*)`, the adjoints of left multiplication by the coordinates.
    pub fn fock_left_adjoint(d: usize, n_max: usize) -> Result<Self> {
        let (_, ops) = build_fock(d, n_max)?;
        OpTuple::new((0..d).map(|j| ops.dense(Shift::LeftAdj(j))).collect())
    }

    /// `V T_j V*` for every `j`.
    pub fn conjugate(&self, v: &CMatrix) -> Self {
        OpTuple {
            k: v.nrows(),
            ops: self.ops.iter().map(|t| v * t * v.adjoint()).collect(),
        }
    }

    fn check_point(&self, w: &MatTuple) -> Result<()> {
        if w.d() != self.d() {
            return Err(NcError::ArityMismatch { expected: self.d(), got: w.d() });
        }
        Ok(())
    }
}

/// `D_{T−W}(h)_j = (T_j ⊗ I)h − h W_j`, computed slot by slot.
pub fn apply_d(t: &OpTuple, w: &MatTuple, h: &MatSpaceElement) -> Result<Vec<MatSpaceElement>> {
    t.check_point(w)?;
    check_dim("apply_d level", w.n, h.m)?;
    check_dim("apply_d space", t.k, h.dim_h)?;
    Ok(t.ops.iter().zip(&w.mats).map(|(tj, wj)| h.apply_op(tj).sub(&h.right_mul(wj))).collect())
}

/// The stacked `(d·K·m²) × (K·m²)` matrix of `D_{T−W}`.
pub fn assemble_d(t: &OpTuple, w: &MatTuple) -> Result<CMatrix> {
    t.check_point(w)?;
    let (k, m) = (t.k, w.n);
    let n = k * m * m;
    let mut out = CMatrix::zeros(t.d() * n, n);
    let id_m = CMatrix::identity(m, m);
    for (j, (tj, wj)) in t.ops.iter().zip(&w.mats).enumerate() {
        let block = kron(&CMatrix::identity(m * m, m * m), tj) - kron(&kron(&id_m, &wj.transpose()), &CMatrix::identity(k, k));
        out.view_mut((j * n, 0), (n, n)).copy_from(&block);
    }
    Ok(out)
}

/// `D_{T−W}` restricted to one row `g ∈ H^{1×m}`; every row of `h` evolves independently.
pub fn reduced_d(t: &OpTuple, w: &MatTuple) -> Result<CMatrix> {
    t.check_point(w)?;
    let (k, m) = (t.k, w.n);
    let n = k * m;
    let mut out = CMatrix::zeros(t.d() * n, n);
    for (j, (tj, wj)) in t.ops.iter().zip(&w.mats).enumerate() {
        let block = kron(&CMatrix::identity(m, m), tj) - kron(&wj.transpose(), &CMatrix::identity(k, k));
        out.view_mut((j * n, 0), (n, n)).copy_from(&block);
    }
    Ok(out)
}

/// Reduced problems with more columns than this go through the Gram matrix.
pub const DIRECT_SVD_MAX: usize = 256;

/// Precomputed data for repeated joint-kernel solves of one tuple.
#[derive(Debug, Clone)]
pub struct JointKernelSolver<'a> {
    t: &'a OpTuple,
    /// `T_j* T_j`.
    tt: Vec<CMatrix>,
}

impl<'a> JointKernelSolver<'a> {
    pub fn new(t: &'a OpTuple) -> Self {
        JointKernelSolver { t, tt: t.ops.iter().map(|x| x.adjoint() * x).collect() }
    }

    /// `Σ_j D'_j* D'_j` for the reduced map of [`reduced_d`].
    pub fn reduced_gram(&self, w: &MatTuple) -> Result<CMatrix> {
        self.t.check_point(w)?;
        let (k, m) = (self.t.k, w.n);
        let id_k = CMatrix::identity(k, k);
        let id_m = CMatrix::identity(m, m);
        let mut g = CMatrix::zeros(k * m, k * m);
        for ((tj, ttj), wj) in self.t.ops.iter().zip(&self.tt).zip(&w.mats) {
            let wc = wj.map(|z| z.conj());
            g += kron(&id_m, ttj) - kron(&wj.transpose(), &tj.adjoint()) - kron(&wc, tj) + kron(&(&wc * wj.transpose()), &id_k);
        }
        Ok(g)
    }

    /// `ker D_{T−W}` with the rank diagnostics of the full map.
    ///
    /// Above [`DIRECT_SVD_MAX`] columns the singular values come from the Gram matrix and
    /// carry an absolute error of order `√(n·ε)·σ_max`; the cut-off never goes below that.
    pub fn kernel(&self, w: &MatTuple, tol: Tol) -> Result<(Subspace, RankReport)> {
        let (k, m) = (self.t.k, w.n);
        let n = k * m;
        let (row_null, row_rep) = if n <= DIRECT_SVD_MAX {
            nullspace_with_gap(&reduced_d(self.t, w)?, tol)
        } else {
            let eig = self.reduced_gram(w)?.symmetric_eigen();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let sv: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
            let smax = sv[0];
            let floor = ((n as f64) * f64::EPSILON).sqrt() * smax;
            let cut = match tol {
                Tol::Auto => floor,
                Tol::Abs(t) => t.max(floor),
            };
            let rank = sv.iter().filter(|&&x| x > cut).count();
            let gap_ratio = if rank == 0 || rank == n || sv[rank] == 0.0 { f64::INFINITY } else { sv[rank - 1] / sv[rank] };
            let cols: Vec<CVector> = order[rank..].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
            let basis = columns_or_empty(&cols, n);
            (
                Subspace::from_orthonormal(basis),
                RankReport { singular_values: sv, rank, gap_ratio, tol: cut },
            )
        };
        let mut basis = CMatrix::zeros(k * m * m, m * row_null.dim());
        for p in 0..m {
            for c in 0..row_null.dim() {
                basis.view_mut((p * n, p * row_null.dim() + c), (n, 1)).copy_from(&row_null.basis.column(c));
            }
        }
        let mut sv: Vec<f64> = row_rep.singular_values.iter().flat_map(|&s| std::iter::repeat_n(s, m)).collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let report = RankReport {
            singular_values: sv,
            rank: row_rep.rank * m,
            gap_ratio: row_rep.gap_ratio,
            tol: row_rep.tol,
        };
        Ok((Subspace::from_orthonormal(basis), report))
    }
}

/// `ker D_{T−W}` with the rank diagnostics of the full map.
pub fn joint_kernel(t: &OpTuple, w: &MatTuple, tol: Tol) -> Result<(Subspace, RankReport)> {
    JointKernelSolver::new(t).kernel(w, tol)
}

/// The basis vectors of `s` as elements of `H^{m×m}`.
pub fn subspace_elements(s: &Subspace, m: usize, k: usize) -> Result<Vec<MatSpaceElement>> {
    (0..s.dim())
        .map(|c| MatSpaceElement::from_vector(m, k, s.basis.column(c).into_owned()))
        .collect()
}

/// Columns `E_ab · h` over all `a, b` and generators.
pub fn left_module_span(gens: &[MatSpaceElement]) -> CMatrix {
    let cols: Vec<CVector> = gens
        .iter()
        .flat_map(|h| {
            let m = h.m;
            (0..m * m).map(move |ab| h.left_mul(&elementary(m, m, ab / m, ab % m)).data)
        })
        .collect();
    columns_or_empty(&cols, gens.first().map_or(0, |h| h.data.len()))
}

/// Columns `E_ab · h · E_ce` over all index choices and generators.
pub fn bimodule_span(gens: &[MatSpaceElement]) -> CMatrix {
    let mut cols = Vec::new();
    for h in gens {
        let m = h.m;
        for ab in 0..m * m {
            let left = h.left_mul(&elementary(m, m, ab / m, ab % m));
            for ce in 0..m * m {
                cols.push(left.right_mul(&elementary(m, m, ce / m, ce % m)).data);
            }
        }
    }
    columns_or_empty(&cols, gens.first().map_or(0, |h| h.data.len()))
}

fn columns_or_empty(cols: &[CVector], rows: usize) -> CMatrix {
    if cols.is_empty() {
        CMatrix::zeros(rows, 0)
    } else {
        CMatrix::from_columns(cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlandersBasis {
    pub generators: Vec<MatSpaceElement>,
    /// Random picks rejected before success.
    pub retries: usize,
    /// Rank of the left-module span of the generators; equals `r·m²`.
    pub span_rank: usize,
}

/// `r` free generators of the left `ℂ^{m×m}`-module `s ⊆ H^{m×m}`.
///
/// Generators are random elements of `s`, accepted once every `E_ab · H_i` lies in `s`,
/// the rows of all `H_i` are independent and the left span has rank `r·m²`.
pub fn flanders_basis<R: Rng + ?Sized>(s: &Subspace, m: usize, k: usize, r: usize, rng: &mut R) -> Result<FlandersBasis> {
    check_dim("flanders ambient", k * m * m, s.ambient_dim)?;
    if s.dim() != r * m * m {
        return Err(NcError::NotFreeRank { found: s.dim(), expected: r * m * m });
    }
    for retries in 0..FLANDERS_RETRIES {
        let generators: Vec<MatSpaceElement> = (0..r)
            .map(|_| MatSpaceElement::from_vector(m, k, &s.basis * random_cvector(rng, s.dim())))
            .collect::<Result<_>>()?;
        let span = left_module_span(&generators);
        let scale = span.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        if s.max_rejection(&span) > 1e-8 * scale.max(1.0) {
            return Err(NcError::InvalidArgument("subspace is not a left module".into()));
        }
        let stacked = stack_rows(&generators);
        if rank_report(&stacked, Tol::Auto).rank != r * m {
            continue;
        }
        let span_rank = rank_report(&span, Tol::Auto).rank;
        if span_rank == r * m * m {
            return Ok(FlandersBasis { generators, retries, span_rank });
        }
    }
    Err(NcError::FlandersExhausted { retries: FLANDERS_RETRIES })
}

/// All rows of all generators, each flattened to length `m·K`.
pub fn stack_rows(gens: &[MatSpaceElement]) -> CMatrix {
    let rows: Vec<CMatrix> = gens.iter().map(|h| h.flatten_rows()).collect();
    let width = rows.first().map_or(0, |r| r.ncols());
    let mut out = CMatrix::zeros(rows.iter().map(|r| r.nrows()).sum(), width);
    let mut at = 0;
    for r in &rows {
        out.view_mut((at, 0), (r.nrows(), width)).copy_from(r);
        at += r.nrows();
    }
    out
}

/// One sampled point of a membership report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipPoint {
    pub level: usize,
    pub point_id: usize,
    pub dim_found: usize,
    pub dim_expected: usize,
    pub gap_ratio: f64,
    pub sigma_min_nonzero: Option<f64>,
    /// Rank of all kernel entries accumulated through this point.
    pub density_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub points: Vec<MembershipPoint>,
    pub dim_h: usize,
    pub density_rank: usize,
}

impl MembershipReport {
    pub fn dims_match(&self) -> bool {
        self.points.iter().all(|p| p.dim_found == p.dim_expected)
    }

    pub fn gaps_ok(&self) -> bool {
        self.points.iter().all(|p| p.gap_ratio >= crate::linalg::GAP_THRESHOLD)
    }

    /// Density over the sampled points only.
    pub fn dense(&self) -> bool {
        self.density_rank == self.dim_h
    }
}

/// Samples the class conditions at each point with the tolerance chosen by `tol`.
pub fn membership_report(t: &OpTuple, r: usize, points: &[MatTuple], tol: impl Fn(&MatTuple) -> Tol) -> Result<MembershipReport> {
    let solver = JointKernelSolver::new(t);
    let kernels: Vec<(Subspace, RankReport)> = points.iter().map(|w| solver.kernel(w, tol(w))).collect::<Result<_>>()?;
    let mut entries: Vec<CVector> = Vec::new();
    let mut out = Vec::with_capacity(points.len());
    for (id, (w, (s, rep))) in points.iter().zip(&kernels).enumerate() {
        let m = w.n;
        for h in subspace_elements(s, m, t.k)? {
            for p in 0..m {
                for q in 0..m {
                    entries.push(h.entry(p, q));
                }
            }
        }
        let density_rank = if entries.is_empty() {
            0
        } else {
            rank_report(&CMatrix::from_columns(&entries), Tol::Auto).rank
        };
        out.push(MembershipPoint {
            level: m,
            point_id: id,
            dim_found: s.dim(),
            dim_expected: r * m * m,
            gap_ratio: rep.gap_ratio,
            sigma_min_nonzero: rep.sigma_min_nonzero(),
            density_rank,
        });
    }
    let density_rank = out.last().map_or(0, |p| p.density_rank);
    Ok(MembershipReport { points: out, dim_h: t.k, density_rank })
}

/// `K_Her(Z,W)(P)`: entry `(a, b)` of block `(i, j)` is `Σ_{c,e} ⟨γ_i(Z)_{ac}, γ_j(W)_{be}⟩ P_{ce}`.
pub fn gram_kernel(gz: &[MatSpaceElement], gw: &[MatSpaceElement], p: &CMatrix) -> Result<KernelValue> {
    check_dim("gram_kernel frame size", gz.len(), gw.len())?;
    let r = gz.len();
    let (n, m) = (gz.first().map_or(0, |g| g.m), gw.first().map_or(0, |g| g.m));
    check_dim("gram_kernel P rows", n, p.nrows())?;
    check_dim("gram_kernel P cols", m, p.ncols())?;
    let mut blocks = Vec::with_capacity(r * r);
    for gi in gz {
        for gj in gw {
            check_dim("gram_kernel space", gi.dim_h, gj.dim_h)?;
            blocks.push(CMatrix::from_fn(n, m, |a, b| {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..n {
                    for e in 0..m {
                        if p[(c, e)] != C64::new(0.0, 0.0) {
                            acc += gj.entry(b, e).dotc(&gi.entry(a, c)) * p[(c, e)];
                        }
                    }
                }
                acc
            }));
        }
    }
    Ok(KernelValue { r, blocks })
}

/// Location of the largest disagreement between two sampled Gram forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramWitness {
    pub sample_a: usize,
    pub sample_b: usize,
    pub frame_i: usize,
    pub frame_j: usize,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EquivOutcome {
    Equivalent { unitarity: f64, intertwining: f64, fit: f64 },
    Inequivalent { unitarity: f64, intertwining: f64, fit: f64, witness: GramWitness },
    /// The sampled frame entries do not span `H`.
    Inconclusive { rank: usize, needed: usize },
}

/// Tolerance for unitarity, intertwining and fit in [`unitary_equiv_test`].
pub const EQUIV_TOL: f64 = 1e-8;

/// Fits `U γ_t(W)_{ij} = γ̃_t(W)_{ij}` over all samples and checks that `U` is unitary
/// and intertwines the tuples. `frames[s]` and `frames2[s]` hold the `r` frame values at
/// sample `s`. Returns the fitted `U` alongside the outcome.
pub fn unitary_equiv_test(
    t: &OpTuple,
    t2: &OpTuple,
    frames: &[Vec<MatSpaceElement>],
    frames2: &[Vec<MatSpaceElement>],
) -> Result<(EquivOutcome, CMatrix)> {
    check_dim("unitary_equiv_test arity", t.d(), t2.d())?;
    check_dim("unitary_equiv_test samples", frames.len(), frames2.len())?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (f, g) in frames.iter().zip(frames2) {
        check_dim("unitary_equiv_test rank", f.len(), g.len())?;
        for (a, b) in f.iter().zip(g) {
            check_dim("unitary_equiv_test level", a.m, b.m)?;
            for p in 0..a.m {
                for q in 0..a.m {
                    xs.push(a.entry(p, q));
                    ys.push(b.entry(p, q));
                }
            }
        }
    }
    if xs.is_empty() {
        return Ok((EquivOutcome::Inconclusive { rank: 0, needed: t.k }, CMatrix::zeros(t2.k, t.k)));
    }
    let x = CMatrix::from_columns(&xs);
    let y = CMatrix::from_columns(&ys);
    let rank = rank_report(&x, Tol::Auto).rank;
    if rank < t.k {
        return Ok((EquivOutcome::Inconclusive { rank, needed: t.k }, CMatrix::zeros(t2.k, t.k)));
    }
    let u = lstsq_min_norm(&x.transpose(), &y.transpose())?.transpose();
    let fit = max_abs(&(&u * &x - &y)) / max_abs(&y).max(f64::MIN_POSITIVE);
    let unitarity = if t.k == t2.k {
        spectral_norm(&(u.adjoint() * &u - CMatrix::identity(t.k, t.k)))
    } else {
        f64::INFINITY
    };
    let intertwining = t
        .ops
        .iter()
        .zip(&t2.ops)
        .map(|(a, b)| spectral_norm(&(&u * a - b * &u)))
        .fold(0.0, f64::max);
    if unitarity <= EQUIV_TOL && intertwining <= EQUIV_TOL && fit <= EQUIV_TOL {
        return Ok((EquivOutcome::Equivalent { unitarity, intertwining, fit }, u));
    }
    let witness = gram_witness(frames, frames2)?;
    Ok((EquivOutcome::Inequivalent { unitarity, intertwining, fit, witness }, u))
}

fn gram_witness(frames: &[Vec<MatSpaceElement>], frames2: &[Vec<MatSpaceElement>]) -> Result<GramWitness> {
    let mut best = GramWitness { sample_a: 0, sample_b: 0, frame_i: 0, frame_j: 0, deviation: 0.0 };
    for (a, (fa, ga)) in frames.iter().zip(frames2).enumerate() {
        for (b, (fb, gb)) in frames.iter().zip(frames2).enumerate() {
            for i in 0..fa.len() {
                for j in 0..fb.len() {
                    let dev = max_abs(
                        &(crate::fock::kernel_vector_gram(&fa[i], &fb[j]) - crate::fock::kernel_vector_gram(&ga[i], &gb[j])),
                    );
                    if dev > best.deviation {
                        best = GramWitness { sample_a: a, sample_b: b, frame_i: i, frame_j: j, deviation: dev };
                    }
                }
            }
        }
    }
    Ok(best)
}

/// A random unitary `V` and the conjugated tuple `V T V*`.
pub fn conjugated_pair<R: Rng + ?Sized>(t: &OpTuple, rng: &mut R) -> (CMatrix, OpTuple) {
    let v = random_unitary(rng, t.k);
    let t2 = t.conjugate(&v);
    (v, t2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalReport {
    /// `dim N_{ℓ,W}` for `ℓ = 1, …, ℓ_max + 1`.
    pub dims: Vec<usize>,
    pub gap_ratios: Vec<f64>,
    /// `max_j max_x ‖(I − P_{N_ℓ}) D_j x‖` over an orthonormal basis of each `N_ℓ`.
    pub invariance: Vec<f64>,
}

/// The chain `N_{1,W} ⊆ N_{2,W} ⊆ …`: `N_1` is the bimodule generated by `ker D_{T−W}` and
/// `N_{p+1}` the bimodule generated by `D_{T−W}^{-1}(N_p^{⊕d})`.
pub fn local_subspaces(t: &OpTuple, w: &MatTuple, l_max: usize, tol: f64) -> Result<(Vec<Subspace>, LocalReport)> {
    let (k, m) = (t.k, w.n);
    let full = assemble_d(t, w)?;
    let n = k * m * m;
    let blocks: Vec<CMatrix> = (0..t.d()).map(|j| full.rows(j * n, n).into_owned()).collect();

    let mut chain = Vec::new();
    let mut gaps = Vec::new();
    let (ker, rep) = joint_kernel(t, w, Tol::Abs(tol))?;
    gaps.push(rep.gap_ratio);
    chain.push(bimodule_closure(&ker, m, k)?);
    for _ in 0..l_max {
        let prev = chain.last().expect("chain is non-empty");
        let comp = CMatrix::identity(n, n) - prev.projector();
        let mut stacked = CMatrix::zeros(t.d() * n, n);
        for (j, b) in blocks.iter().enumerate() {
            stacked.view_mut((j * n, 0), (n, n)).copy_from(&(&comp * b));
        }
        let (pre, rep) = nullspace_with_gap(&stacked, Tol::Abs(tol));
        gaps.push(rep.gap_ratio);
        chain.push(bimodule_closure(&pre, m, k)?);
    }
    let invariance = chain
        .iter()
        .map(|s| {
            let comp = CMatrix::identity(n, n) - s.projector();
            blocks
                .iter()
                .map(|b| {
                    let img = &comp * b * &s.basis;
                    img.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let dims = chain.iter().map(Subspace::dim).collect();
    Ok((chain, LocalReport { dims, gap_ratios: gaps, invariance }))
}

fn bimodule_closure(s: &Subspace, m: usize, k: usize) -> Result<Subspace> {
    if m == 1 || s.dim() == 0 {
        return Ok(s.clone());
    }
    let span = bimodule_span(&subspace_elements(s, m, k)?);
    Ok(Subspace::span_of(&span, Tol::Auto).0)
}

/// Dimensions of the left module `𝔏_ℓ` and bimodule `𝔅_ℓ` generated over `ℂ^{m×m}` by the
/// generalized kernel elements at `W` and their derivatives of order `1..=ℓ` in all
/// directions.
pub fn kernel_modules(space: &RkhsSpace, w: &MatTuple, l: usize) -> Result<(usize, usize)> {
    let (m, d) = (w.n, space.d);
    let n_dirs = d * m * m;
    let basis_dir = |idx: usize| {
        let (j, ab) = (idx / (m * m), idx % (m * m));
        let mut x = MatTuple::zeros(d, m);
        x.mats[j] = elementary(m, m, ab / m, ab % m);
        x
    };
    let mut gens = Vec::new();
    for t in 0..space.r {
        gens.push(space.gen_kernel(w, t)?.value);
        for order in 1..=l {
            let combos = n_dirs.pow(order as u32);
            for mut c in 0..combos {
                let mut dirs = Vec::with_capacity(order);
                for _ in 0..order {
                    dirs.push(basis_dir(c % n_dirs));
                    c /= n_dirs;
                }
                gens.push(space.kernel_derivative(w, &dirs, t)?);
            }
        }
    }
    let left = rank_report(&left_module_span(&gens), Tol::Auto).rank;
    let bi = rank_report(&bimodule_span(&gens), Tol::Auto).rank;
    Ok((left, bi))
}

/// A constructed free module `⊕_i ℂ^{m×m} H_i` with random generators.
pub fn random_free_module<R: Rng + ?Sized>(rng: &mut R, m: usize, k: usize, r: usize) -> Result<(Vec<MatSpaceElement>, Subspace)> {
    let gens: Vec<MatSpaceElement> = (0..r)
        .map(|_| MatSpaceElement::from_vector(m, k, random_cvector(rng, m * m * k)))
        .collect::<Result<_>>()?;
    let (s, _) = Subspace::span_of(&left_module_span(&gens), Tol::Auto);
    Ok((gens, s))
}

/// Bumps coordinate `coord` of slot `(0, 0)` of the first frame at every sample by `delta`.
pub fn perturb_frames(frames: &[Vec<MatSpaceElement>], coord: usize, delta: f64) -> Vec<Vec<MatSpaceElement>> {
    frames
        .iter()
        .map(|f| {
            let mut f = f.clone();
            let i = f[0].idx(0, 0, coord);
            f[0].data[i] += c64(delta, 0.0);
            f
        })
        .collect()
}
