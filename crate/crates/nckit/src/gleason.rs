//! The nc Gleason problem for polynomial instances
//! `F = Σ_i f^i ⊗ A^i` with `f^i` valued in `ℂ^{1×p}` and `A^i ∈ ℂ^{s×s}`.
//!
//! At a point `Z` of level `n`, component `c` of `F(Z)` is the `(n·s) × (n·s)`
//! matrix `Σ_i f^i_c(Z) ⊗ A^i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, NcError, Result};
use crate::linalg::{elementary, kron, lstsq_min_norm, max_abs, random_cmatrix, rank_report, CMatrix, Tol, C64};
use crate::ncdiff::{delta_partial, tt_expand, NcClosure};
use crate::ncpoly::{word_enumerate, MatTuple, NcPoly, NcValue, Word};

/// Largest `ev_W` entry accepted as vanishing.
pub const VANISH_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct GleasonInstance {
    pub d: usize,
    pub p: usize,
    pub s: usize,
    pub terms: Vec<(NcPoly, CMatrix)>,
    pub center: MatTuple,
}

impl GleasonInstance {
    pub fn new(d: usize, p: usize, terms: Vec<(NcPoly, CMatrix)>, center: MatTuple) -> Result<Self> {
        check_dim("GleasonInstance centre arity", d, center.d())?;
        let s = center.n;
        for (f, a) in &terms {
            check_dim("GleasonInstance polynomial arity", d, f.d)?;
            check_dim("GleasonInstance polynomial values", p, f.r)?;
            check_dim("GleasonInstance coefficient rows", s, a.nrows())?;
            check_dim("GleasonInstance coefficient cols", s, a.ncols())?;
        }
        Ok(GleasonInstance { d, p, s, terms, center })
    }

    pub fn zero(d: usize, p: usize, center: MatTuple) -> Self {
        GleasonInstance {
            d,
            p,
            s: center.n,
            terms: Vec::new(),
            center,
        }
    }

    pub fn degree(&self) -> usize {
        self.terms
            .iter()
            .filter(|(f, a)| !f.is_zero() && max_abs(a) > 0.0)
            .map(|(f, _)| f.degree())
            .max()
            .unwrap_or(0)
    }

    /// `F(Z)` as `p` matrices of size `(n·s) × (n·s)`.
    pub fn eval(&self, z: &MatTuple) -> Result<Vec<CMatrix>> {
        check_dim("GleasonInstance::eval arity", self.d, z.d())?;
        let size = z.n * self.s;
        let mut out = vec![CMatrix::zeros(size, size); self.p];
        for (f, a) in &self.terms {
            let v = f.eval(z)?;
            for (acc, fc) in out.iter_mut().zip(&v.comps) {
                *acc += kron(fc, a);
            }
        }
        Ok(out)
    }

    /// `Σ_i coef(f^i, γ)_c A^i` for every component `c`.
    pub fn monomial_coef(&self, w: &Word) -> Vec<CMatrix> {
        let mut out = vec![CMatrix::zeros(self.s, self.s); self.p];
        for (f, a) in &self.terms {
            if let Some(c) = f.coef(w) {
                for (acc, ci) in out.iter_mut().zip(c) {
                    *acc += a * *ci;
                }
            }
        }
        out
    }
}

/// `ev_W(F) = Σ_i A^i f^i(W)`, one `s × s` matrix per component of `ℂ^{1×p}`.
pub fn ev_w(inst: &GleasonInstance) -> Result<Vec<CMatrix>> {
    let mut out = vec![CMatrix::zeros(inst.s, inst.s); inst.p];
    for (f, a) in &inst.terms {
        let v = f.eval(&inst.center)?;
        for (acc, fc) in out.iter_mut().zip(&v.comps) {
            *acc += a * fc;
        }
    }
    Ok(out)
}

/// `trace F(W)(X)` over the basis `X = E_{ab} ⊗ e_c` of `V^{s×s}`, where
/// `F(W)(X) = Σ_i f^i(W) X A^i`.
pub fn trace_probes(inst: &GleasonInstance) -> Result<Vec<C64>> {
    let s = inst.s;
    let values: Vec<NcValue> = inst.terms.iter().map(|(f, _)| f.eval(&inst.center)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(inst.p * s * s);
    for c in 0..inst.p {
        for a in 0..s {
            for b in 0..s {
                let x = elementary(s, s, a, b);
                let mut tr = C64::new(0.0, 0.0);
                for ((_, ai), v) in inst.terms.iter().zip(&values) {
                    tr += (&v.comps[c] * &x * ai).trace();
                }
                out.push(tr);
            }
        }
    }
    Ok(out)
}

/// Factors `F_1, …, F_d` and the size of the order-`deg F` coefficients found
/// while recovering them, which vanish when the degree drops.
#[derive(Debug, Clone)]
pub struct GleasonSolution {
    pub factors: Vec<GleasonInstance>,
    pub degree_drop_residual: f64,
}

/// `Z ↦ (f_{ℓk}(Z))_{ℓ,k}` with `f_{ℓk}(Z) = (ε_ℓ* ⊗ I) Δ_{R,j} f(W, Z) (ε_k ⊗ I)`:
/// row `q` of `f_{ℓk}(Z)` is row `ℓ` of `Δ_{R,j} f(W, Z)(E_{kq})`.
/// Output component `(ℓ·s + k)·p + c`.
fn corner_slices(f: &NcPoly, j: usize, w: &MatTuple, z: &MatTuple) -> Result<NcValue> {
    let (s, t, p) = (w.n, z.n, f.r);
    let mut comps = vec![CMatrix::zeros(t, t); s * s * p];
    for k in 0..s {
        for q in 0..t {
            let v = delta_partial(f, j, w, z, &elementary(s, t, k, q))?;
            for l in 0..s {
                for (c, vc) in v.comps.iter().enumerate() {
                    comps[(l * s + k) * p + c].row_mut(q).copy_from(&vc.row(l));
                }
            }
        }
    }
    Ok(NcValue { comps })
}

/// `F_j = Σ_i Σ_{ℓk} f^i_{ℓk} ⊗ A^i E_{ℓk}` with the entry functions recovered
/// as polynomials by expanding the corner slices about `0`.
pub fn gleason_solve(inst: &GleasonInstance) -> Result<GleasonSolution> {
    let ev = ev_w(inst)?;
    let residual = ev.iter().map(max_abs).fold(0.0, f64::max);
    if residual > VANISH_TOL {
        return Err(NcError::NonVanishing { residual });
    }
    let (d, s, p) = (inst.d, inst.s, inst.p);
    let origin = MatTuple::zeros(d, 1);
    let mut drop: f64 = 0.0;
    let mut factors = Vec::with_capacity(d);
    for j in 0..d {
        let mut terms = Vec::new();
        for (f, a) in &inst.terms {
            if f.is_zero() {
                continue;
            }
            let deg = f.degree();
            let slices = NcClosure {
                d,
                r: s * s * p,
                f: |z: &MatTuple| corner_slices(f, j, &inst.center, z),
            };
            let series = tt_expand(&slices, &origin, deg)?;
            drop = drop.max(max_abs(&series.coeffs[deg]));
            let mut trimmed = series;
            trimmed.coeffs.truncate(deg.max(1));
            let all = trimmed.to_poly()?;
            for l in 0..s {
                for k in 0..s {
                    let mut poly = NcPoly::zero(d, p);
                    for (w, coef) in all.terms() {
                        poly.add_term(w.clone(), &coef[(l * s + k) * p..(l * s + k + 1) * p])?;
                    }
                    let poly = poly.pruned(1e-14);
                    if !poly.is_zero() {
                        terms.push((poly, a * elementary(s, s, l, k)));
                    }
                }
            }
        }
        factors.push(GleasonInstance::new(d, p, terms, inst.center.clone())?);
    }
    Ok(GleasonSolution {
        factors,
        degree_drop_residual: drop,
    })
}

/// `Σ_j (Z_j ⊗ I_s) F_j(Z) − F_j(Z)(I_n ⊗ W_j)` at `Z` of level `n`.
pub fn gleason_combination(inst: &GleasonInstance, factors: &[GleasonInstance], z: &MatTuple) -> Result<Vec<CMatrix>> {
    check_dim("gleason factors", inst.d, factors.len())?;
    let s = inst.s;
    let size = z.n * s;
    let mut out = vec![CMatrix::zeros(size, size); inst.p];
    for (j, fj) in factors.iter().enumerate() {
        let left = kron(&z.mats[j], &CMatrix::identity(s, s));
        let right = kron(&CMatrix::identity(z.n, z.n), &inst.center.mats[j]);
        for (acc, v) in out.iter_mut().zip(fj.eval(z)?) {
            *acc += &left * &v - &v * &right;
        }
    }
    Ok(out)
}

/// Largest entry of `F(Z) − Σ_j (L_{Z_j} ⊗ I_s − I ⊗ R_{W_j}) F_j(Z)` over the probes.
pub fn gleason_verify(inst: &GleasonInstance, factors: &[GleasonInstance], probes: &[MatTuple]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for z in probes {
        let lhs = inst.eval(z)?;
        let rhs = gleason_combination(inst, factors, z)?;
        for (a, b) in lhs.iter().zip(&rhs) {
            worst = worst.max(max_abs(&(a - b)));
        }
    }
    Ok(worst)
}

/// The identity at `Z = W`: `F(W) = Σ_j (W_j ⊗ I) F_j(W) − F_j(W)(I ⊗ W_j)`.
pub fn order_zero_residual(inst: &GleasonInstance, factors: &[GleasonInstance]) -> Result<f64> {
    gleason_verify(inst, factors, std::slice::from_ref(&inst.center))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    /// Largest difference between the oracle coefficients and those of the factors.
    pub deviation: f64,
    /// Residual of the empty-word equation, which the oracle does not use.
    pub consistency: f64,
    /// Whether every per-degree system had full column rank.
    pub unique: bool,
}

/// Solves the monomial-coefficient equations
/// `C_γ(F) = Σ_{γ = jγ'} C_{j,γ'} − Σ_j C_{j,γ} W_j`
/// by least squares from the top degree down, and compares with `factors`.
pub fn gleason_uniqueness(inst: &GleasonInstance, factors: &[GleasonInstance]) -> Result<UniquenessReport> {
    let (d, s, p) = (inst.d, inst.s, inst.p);
    let top = inst.degree();
    let block = p * s * s;
    let mut known: std::collections::BTreeMap<(usize, Word), Vec<CMatrix>> = std::collections::BTreeMap::new();
    let mut unique = true;
    let words_by_len = |l: usize| -> Vec<Word> { word_enumerate(d, l).into_iter().filter(|w| w.len() == l).collect() };
    let flatten = |m: &[CMatrix]| -> Vec<C64> { m.iter().flat_map(|c| (0..s * s).map(move |i| c[(i / s, i % s)])).collect() };
    for l in (1..=top).rev() {
        let eq_words = words_by_len(l);
        let unk_words = words_by_len(l - 1);
        let n_unk = d * unk_words.len();
        let mut a = CMatrix::zeros(eq_words.len() * block, n_unk * block);
        let mut b = CMatrix::zeros(eq_words.len() * block, 1);
        for (e, gamma) in eq_words.iter().enumerate() {
            let mut rhs = inst.monomial_coef(gamma);
            for (i, wi) in inst.center.mats.iter().enumerate() {
                if let Some(ci) = known.get(&(i, gamma.clone())) {
                    for (r, c) in rhs.iter_mut().zip(ci) {
                        *r += c * wi;
                    }
                }
            }
            for (x, v) in flatten(&rhs).into_iter().enumerate() {
                b[(e * block + x, 0)] = v;
            }
            let j = gamma.0[0];
            let tail = Word(gamma.0[1..].to_vec());
            let u = j * unk_words.len() + unk_words.iter().position(|w| *w == tail).unwrap();
            for x in 0..block {
                a[(e * block + x, u * block + x)] = C64::new(1.0, 0.0);
            }
        }
        unique &= rank_report(&a, Tol::Auto).rank == n_unk * block;
        let x = lstsq_min_norm(&a, &b)?;
        for j in 0..d {
            for (wi, w) in unk_words.iter().enumerate() {
                let u = j * unk_words.len() + wi;
                let comps = (0..p)
                    .map(|c| CMatrix::from_fn(s, s, |r, q| x[(u * block + c * s * s + r * s + q, 0)]))
                    .collect();
                known.insert((j, w.clone()), comps);
            }
        }
    }
    let zero = vec![CMatrix::zeros(s, s); p];
    let mut res = inst.monomial_coef(&Word::empty());
    for (i, wi) in inst.center.mats.iter().enumerate() {
        for (r, c) in res.iter_mut().zip(known.get(&(i, Word::empty())).unwrap_or(&zero)) {
            *r += c * wi;
        }
    }
    let consistency = res.iter().map(max_abs).fold(0.0, f64::max);
    let span = factors.iter().map(GleasonInstance::degree).max().unwrap_or(0).max(top);
    let mut deviation: f64 = 0.0;
    for (j, fj) in factors.iter().enumerate() {
        for w in word_enumerate(d, span) {
            let got = fj.monomial_coef(&w);
            let want = known.get(&(j, w)).unwrap_or(&zero);
            for (g, x) in got.iter().zip(want) {
                deviation = deviation.max(max_abs(&(g - x)));
            }
        }
    }
    Ok(UniquenessReport {
        deviation,
        consistency,
        unique,
    })
}

/// A vanishing instance `F = Σ_j (L_{Z_j} ⊗ I − I ⊗ R_{W_j}) G_j` built from
/// random `G_j` of degree `deg − 1`; returns `F` and the `G_j`.
pub fn random_vanishing<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    s: usize,
    p: usize,
    deg: usize,
    center_scale: f64,
) -> Result<(GleasonInstance, Vec<GleasonInstance>)> {
    let deg = deg.max(1);
    let center = MatTuple::random(rng, d, s, center_scale);
    let mut gs = Vec::with_capacity(d);
    let mut terms = Vec::new();
    for j in 0..d {
        let mut gterms = Vec::new();
        for _ in 0..2 {
            let g = NcPoly::random(rng, d, p, deg - 1, 3);
            let b = random_cmatrix(rng, s, s);
            let zg = NcPoly::from_terms(
                d,
                p,
                g.terms().map(|(w, c)| (Word([vec![j], w.0.clone()].concat()), c.clone())),
            )?;
            terms.push((zg, b.clone()));
            terms.push((g.clone(), -(&b * &center.mats[j])));
            gterms.push((g, b));
        }
        gs.push(GleasonInstance::new(d, p, gterms, center.clone())?);
    }
    Ok((GleasonInstance::new(d, p, terms, center)?, gs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c64;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one() -> CMatrix {
        CMatrix::identity(1, 1)
    }

    fn probes(rng: &mut ChaCha8Rng, d: usize, s: usize) -> Vec<MatTuple> {
        (1..=3).map(|m| MatTuple::random(rng, d, m * s, 0.4)).collect()
    }

    #[test]
    fn evaluation_examples() {
        let w = MatTuple::scalar(&[c64(0.5, 0.0), c64(0.0, 0.0)]);
        let f = NcPoly::from_terms(2, 1, [(Word(vec![0]), vec![c64(1.0, 0.0)]), (Word::empty(), vec![c64(-0.5, 0.0)])]).unwrap();
        let inst = GleasonInstance::new(2, 1, vec![(f, one())], w.clone()).unwrap();
        assert!(max_abs(&ev_w(&inst).unwrap()[0]) < 1e-15);

        let c = NcPoly::constant(2, vec![c64(1.0, 0.0)]);
        let e12 = elementary(2, 2, 0, 1);
        let w2 = MatTuple::random(&mut ChaCha8Rng::seed_from_u64(1), 2, 2, 0.5);
        let cancel = GleasonInstance::new(2, 1, vec![(c.clone(), e12.clone()), (c.scale(c64(-1.0, 0.0)), e12)], w2).unwrap();
        assert_eq!(max_abs(&ev_w(&cancel).unwrap()[0]), 0.0);
    }

    #[test]
    fn trace_probes_read_off_the_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let center = MatTuple::random(&mut rng, 2, 2, 0.5);
        let terms = (0..3)
            .map(|_| (NcPoly::random(&mut rng, 2, 2, 2, 3), random_cmatrix(&mut rng, 2, 2)))
            .collect();
        let inst = GleasonInstance::new(2, 2, terms, center).unwrap();
        let ev = ev_w(&inst).unwrap();
        let tr = trace_probes(&inst).unwrap();
        for c in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    assert!((tr[(c * 2 + a) * 2 + b] - ev[c][(b, a)]).norm() < 1e-12);
                }
            }
        }
        let (vanishing, _) = random_vanishing(&mut rng, 2, 2, 2, 3, 0.5).unwrap();
        assert!(trace_probes(&vanishing).unwrap().iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn linear_and_quadratic_monomials_at_origin() {
        let origin = MatTuple::zeros(2, 1);
        let z1 = NcPoly::coordinate(2, 0).unwrap();
        let inst = GleasonInstance::new(2, 1, vec![(z1, one())], origin.clone()).unwrap();
        let sol = gleason_solve(&inst).unwrap();
        assert_eq!(sol.factors[0].monomial_coef(&Word::empty())[0][(0, 0)], c64(1.0, 0.0));
        assert!(sol.factors[1].terms.is_empty());

        let z1z2 = NcPoly::monomial(2, Word(vec![0, 1]), c64(1.0, 0.0)).unwrap();
        let inst = GleasonInstance::new(2, 1, vec![(z1z2, one())], origin.clone()).unwrap();
        let sol = gleason_solve(&inst).unwrap();
        assert!((sol.factors[0].monomial_coef(&Word(vec![1]))[0][(0, 0)] - c64(1.0, 0.0)).norm() < 1e-12);
        assert!(sol.factors[0].monomial_coef(&Word::empty())[0][(0, 0)].norm() < 1e-12);
        assert!(sol.factors[1].terms.is_empty());

        let z2z1 = NcPoly::monomial(2, Word(vec![1, 0]), c64(1.0, 0.0)).unwrap();
        let inst = GleasonInstance::new(2, 1, vec![(z2z1, one())], origin).unwrap();
        let sol = gleason_solve(&inst).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(gleason_verify(&inst, &sol.factors, &probes(&mut rng, 2, 1)).unwrap() < 1e-12);
        assert!(gleason_uniqueness(&inst, &sol.factors).unwrap().deviation < 1e-12);
    }

    #[test]
    fn random_vanishing_instances_factor_uniquely() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (d, s, p, deg) in [(2, 1, 1, 3), (3, 2, 2, 2), (2, 2, 1, 4)] {
            let (inst, gs) = random_vanishing(&mut rng, d, s, p, deg, 0.5).unwrap();
            let sol = gleason_solve(&inst).unwrap();
            let pr = probes(&mut rng, d, s);
            assert!(gleason_verify(&inst, &sol.factors, &pr).unwrap() < 1e-9);
            assert!(sol.degree_drop_residual < 1e-10);
            assert!(sol.factors.iter().all(|f| f.degree() < inst.degree()));
            assert!(order_zero_residual(&inst, &sol.factors).unwrap() < 1e-10);
            let u = gleason_uniqueness(&inst, &sol.factors).unwrap();
            assert!(u.unique && u.deviation < 1e-9 && u.consistency < 1e-10, "{u:?}");
            for (fj, gj) in sol.factors.iter().zip(&gs) {
                for z in &pr {
                    for (a, b) in fj.eval(z).unwrap().iter().zip(gj.eval(z).unwrap()) {
                        assert!(max_abs(&(a - b)) < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn diagonal_centre_with_distinct_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut inst, _) = random_vanishing(&mut rng, 2, 2, 1, 3, 0.5).unwrap();
        let diag = |a: f64, b: f64| CMatrix::from_diagonal(&crate::linalg::CVector::from_vec(vec![c64(a, 0.0), c64(b, 0.0)]));
        let center = MatTuple::new(vec![diag(0.2, -0.3), diag(0.1, 0.4)]).unwrap();
        // Rebuild so that the instance vanishes at the diagonal centre.
        let gs: Vec<GleasonInstance> = (0..2)
            .map(|_| {
                GleasonInstance::new(
                    2,
                    1,
                    vec![(NcPoly::random(&mut rng, 2, 1, 2, 3), random_cmatrix(&mut rng, 2, 2))],
                    center.clone(),
                )
                .unwrap()
            })
            .collect();
        inst.center = center.clone();
        inst.terms.clear();
        for (j, g) in gs.iter().enumerate() {
            for (poly, b) in &g.terms {
                let shifted = NcPoly::from_terms(2, 1, poly.terms().map(|(w, c)| (Word([vec![j], w.0.clone()].concat()), c.clone()))).unwrap();
                inst.terms.push((shifted, b.clone()));
                inst.terms.push((poly.clone(), -(b * &center.mats[j])));
            }
        }
        let sol = gleason_solve(&inst).unwrap();
        assert!(gleason_uniqueness(&inst, &sol.factors).unwrap().deviation < 1e-8);
    }

    #[test]
    fn non_vanishing_is_rejected_and_zero_is_trivial() {
        let origin = MatTuple::zeros(2, 1);
        let c = NcPoly::constant(2, vec![c64(1.0, 0.0)]);
        let inst = GleasonInstance::new(2, 1, vec![(c, one())], origin.clone()).unwrap();
        assert!(matches!(gleason_solve(&inst), Err(NcError::NonVanishing { .. })));

        let zero = GleasonInstance::zero(2, 1, origin.clone());
        let factors = vec![GleasonInstance::zero(2, 1, origin.clone()), GleasonInstance::zero(2, 1, origin)];
        let pr = probes(&mut ChaCha8Rng::seed_from_u64(6), 2, 1);
        assert_eq!(gleason_verify(&zero, &factors, &pr).unwrap(), 0.0);
    }

    #[test]
    fn perturbed_factor_shows_in_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (inst, _) = random_vanishing(&mut rng, 2, 1, 1, 3, 0.5).unwrap();
        let mut sol = gleason_solve(&inst).unwrap();
        let bump = NcPoly::constant(2, vec![c64(1e-3, 0.0)]);
        sol.factors[0].terms.push((bump, one()));
        let z = MatTuple::random(&mut rng, 2, 1, 0.4);
        let res = gleason_verify(&inst, &sol.factors, std::slice::from_ref(&z)).unwrap();
        let expected = 1e-3 * (z.mats[0][(0, 0)] - inst.center.mats[0][(0, 0)]).norm();
        assert!((res - expected).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]

        #[test]
        fn solve_then_verify(seed in any::<u64>(), d in 1usize..4, s in 1usize..3, p in 1usize..3, deg in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (inst, _) = random_vanishing(&mut rng, d, s, p, deg, 0.5).unwrap();
            let sol = gleason_solve(&inst).unwrap();
            prop_assert!(gleason_verify(&inst, &sol.factors, &probes(&mut rng, d, s)).unwrap() < 1e-9);
            prop_assert!(sol.factors.iter().all(|f| f.degree() < inst.degree().max(1)));
        }
    }
}
