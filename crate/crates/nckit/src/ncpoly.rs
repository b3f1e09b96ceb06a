//! Words over `d` letters, free nc polynomials with `ℂ^r` coefficients, and
//! their evaluation on matrix tuples.
//!
//! Letters are stored zero-based (`0..d`); JSON fixtures use one-based letters.
//! A `ℂ^r`-valued value at level `n` is stored component-major as `r` matrices
//! of size `n × n`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, NcError, Result};
use crate::linalg::{
    block_diag, max_abs, random_cmatrix, spectral_norm, C64, CMatrix, MatrixJson,
};

/// A word `α = α₁⋯α_ℓ`; the empty word is the unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Word(pub Vec<usize>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    pub fn push(&self, letter: usize) -> Word {
        let mut v = self.0.clone();
        v.push(letter);
        Word(v)
    }

    pub fn reversed(&self) -> Word {
        Word(self.0.iter().rev().copied().collect())
    }

    /// One-based rendering, `∅` for the empty word.
    pub fn display(&self) -> String {
        if self.0.is_empty() {
            "∅".to_string()
        } else {
            self.0
                .iter()
                .map(|l| (l + 1).to_string())
                .collect::<Vec<_>>()
                .join(".")
        }
    }
}

impl Ord for Word {
    /// Length first, then lexicographic.
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Number of words of length `≤ n_max` over `d` letters.
pub fn word_count(d: usize, n_max: usize) -> usize {
    (0..=n_max).map(|l| d.pow(l as u32)).sum()
}

/// All words of length `≤ n_max`, length-then-lexicographic.
pub fn word_enumerate(d: usize, n_max: usize) -> Vec<Word> {
    let mut out = vec![Word::empty()];
    let mut layer = vec![Word::empty()];
    for _ in 0..n_max {
        let next: Vec<Word> = layer
            .iter()
            .flat_map(|w| (0..d).map(move |j| w.push(j)))
            .collect();
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Position of `w` in [`word_enumerate`].
pub fn word_index(d: usize, w: &Word) -> usize {
    let shorter = if w.is_empty() { 0 } else { word_count(d, w.len() - 1) };
    shorter + w.0.iter().fold(0, |acc, &l| acc * d + l)
}

/// Inverse of [`word_index`].
pub fn word_at(d: usize, mut idx: usize) -> Word {
    let mut len = 0;
    loop {
        let layer = d.pow(len as u32);
        if idx < layer {
            break;
        }
        idx -= layer;
        len += 1;
    }
    let mut letters = vec![0; len];
    for slot in letters.iter_mut().rev() {
        *slot = idx % d;
        idx /= d;
    }
    Word(letters)
}

/// A point of the nc space: `d` square matrices of a common size `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatTuple {
    pub n: usize,
    pub mats: Vec<CMatrix>,
}

impl MatTuple {
    pub fn new(mats: Vec<CMatrix>) -> Result<Self> {
        let n = mats.first().map(|m| m.nrows()).unwrap_or(0);
        for m in &mats {
            check_dim("MatTuple rows", n, m.nrows())?;
            check_dim("MatTuple cols", n, m.ncols())?;
        }
        Ok(MatTuple { n, mats })
    }

    pub fn d(&self) -> usize {
        self.mats.len()
    }

    pub fn zeros(d: usize, n: usize) -> Self {
        MatTuple {
            n,
            mats: vec![CMatrix::zeros(n, n); d],
        }
    }

    /// Level-one point with the given coordinates.
    pub fn scalar(coords: &[C64]) -> Self {
        MatTuple {
            n: 1,
            mats: coords.iter().map(|&c| CMatrix::from_element(1, 1, c)).collect(),
        }
    }

    /// Scalar point repeated at level `n`: `y_j I_n`.
    pub fn scalar_at_level(coords: &[C64], n: usize) -> Self {
        MatTuple {
            n,
            mats: coords
                .iter()
                .map(|&c| CMatrix::identity(n, n).map(|x| x * c))
                .collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, n: usize, scale: f64) -> Self {
        MatTuple {
            n,
            mats: (0..d)
                .map(|_| random_cmatrix(rng, n, n).map(|x| x * scale))
                .collect(),
        }
    }

    /// Random tuple rescaled so that `‖X‖_row = rho`.
    pub fn random_with_row_norm<R: Rng + ?Sized>(rng: &mut R, d: usize, n: usize, rho: f64) -> Self {
        let x = Self::random(rng, d, n, 1.0);
        let s = rho / x.row_norm();
        x.scale(s)
    }

    /// Spectral norm of the row `[X₁ ⋯ X_d]`.
    pub fn row_norm(&self) -> f64 {
        spectral_norm(&self.row())
    }

    pub fn row(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.n, self.n * self.d());
        for (j, m) in self.mats.iter().enumerate() {
            out.view_mut((0, j * self.n), (self.n, self.n)).copy_from(m);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        MatTuple {
            n: self.n,
            mats: self.mats.iter().map(|m| m.map(|x| x * s)).collect(),
        }
    }

    pub fn direct_sum(&self, other: &MatTuple) -> Result<Self> {
        check_dim("direct_sum arity", self.d(), other.d())?;
        Ok(MatTuple {
            n: self.n + other.n,
            mats: self
                .mats
                .iter()
                .zip(&other.mats)
                .map(|(a, b)| block_diag(&[a.clone(), b.clone()]))
                .collect(),
        })
    }

    /// `X^{⊕m}`.
    pub fn amplify(&self, m: usize) -> Self {
        MatTuple {
            n: self.n * m,
            mats: self
                .mats
                .iter()
                .map(|a| block_diag(&vec![a.clone(); m]))
                .collect(),
        }
    }

    /// `(S X_j S⁻¹)_j`.
    pub fn conjugate(&self, s: &CMatrix, s_inv: &CMatrix) -> Self {
        MatTuple {
            n: self.n,
            mats: self.mats.iter().map(|x| s * x * s_inv).collect(),
        }
    }

    /// `(X_j^*)_j`.
    pub fn adjoint(&self) -> Self {
        MatTuple {
            n: self.n,
            mats: self.mats.iter().map(|x| x.adjoint()).collect(),
        }
    }

    pub fn sub(&self, other: &MatTuple) -> Self {
        MatTuple {
            n: self.n,
            mats: self.mats.iter().zip(&other.mats).map(|(a, b)| a - b).collect(),
        }
    }

    /// `X^α` (identity for the empty word).
    pub fn monomial(&self, w: &Word) -> CMatrix {
        w.0.iter()
            .fold(CMatrix::identity(self.n, self.n), |acc, &l| acc * &self.mats[l])
    }
}

/// `r` component matrices of a common size.
#[derive(Debug, Clone, PartialEq)]
pub struct NcValue {
    pub comps: Vec<CMatrix>,
}

impl NcValue {
    pub fn zeros(r: usize, rows: usize, cols: usize) -> Self {
        NcValue {
            comps: vec![CMatrix::zeros(rows, cols); r],
        }
    }

    pub fn r(&self) -> usize {
        self.comps.len()
    }

    /// Largest entry modulus of `self − other` over all components.
    pub fn max_diff(&self, other: &NcValue) -> f64 {
        self.comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| max_abs(&(a - b)))
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(max_abs).fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(&CMatrix) -> CMatrix) -> NcValue {
        NcValue {
            comps: self.comps.iter().map(f).collect(),
        }
    }
}

/// A free nc polynomial `Σ_α p_α X^α` with `p_α ∈ ℂ^r`.
#[derive(Debug, Clone, PartialEq)]
pub struct NcPoly {
    pub d: usize,
    pub r: usize,
    coeffs: BTreeMap<Word, Vec<C64>>,
}

impl NcPoly {
    pub fn zero(d: usize, r: usize) -> Self {
        NcPoly {
            d,
            r,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn from_terms(d: usize, r: usize, terms: impl IntoIterator<Item = (Word, Vec<C64>)>) -> Result<Self> {
        let mut p = Self::zero(d, r);
        for (w, c) in terms {
            p.add_term(w, &c)?;
        }
        Ok(p)
    }

    /// The constant `c ∈ ℂ^r`.
    pub fn constant(d: usize, coef: Vec<C64>) -> Self {
        let r = coef.len();
        Self::from_terms(d, r, [(Word::empty(), coef)]).expect("well-formed constant")
    }

    /// Scalar monomial `c·X^w`.
    pub fn monomial(d: usize, w: Word, c: C64) -> Result<Self> {
        Self::from_terms(d, 1, [(w, vec![c])])
    }

    /// Scalar coordinate function `X_j` (zero-based `j`).
    pub fn coordinate(d: usize, j: usize) -> Result<Self> {
        Self::monomial(d, Word(vec![j]), C64::new(1.0, 0.0))
    }

    pub fn add_term(&mut self, w: Word, coef: &[C64]) -> Result<()> {
        check_dim("NcPoly coefficient", self.r, coef.len())?;
        if let Some(&l) = w.0.iter().find(|&&l| l >= self.d) {
            return Err(NcError::InvalidArgument(format!(
                "letter {} outside 1..={}",
                l + 1,
                self.d
            )));
        }
        if coef.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(NcError::InvalidArgument("non-finite coefficient".into()));
        }
        let entry = self
            .coeffs
            .entry(w.clone())
            .or_insert_with(|| vec![C64::new(0.0, 0.0); self.r]);
        for (e, c) in entry.iter_mut().zip(coef) {
            *e += c;
        }
        if entry.iter().all(|c| *c == C64::new(0.0, 0.0)) {
            self.coeffs.remove(&w);
        }
        Ok(())
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, &Vec<C64>)> {
        self.coeffs.iter()
    }

    pub fn coef(&self, w: &Word) -> Option<&Vec<C64>> {
        self.coeffs.get(w)
    }

    pub fn num_terms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Longest stored word; `0` for the zero polynomial.
    pub fn degree(&self) -> usize {
        self.coeffs.keys().map(Word::len).max().unwrap_or(0)
    }

    /// Drops coefficients whose entries are all below `tol` in modulus.
    pub fn pruned(&self, tol: f64) -> Self {
        NcPoly {
            d: self.d,
            r: self.r,
            coeffs: self
                .coeffs
                .iter()
                .filter(|(_, c)| c.iter().any(|z| z.norm() > tol))
                .map(|(w, c)| (w.clone(), c.clone()))
                .collect(),
        }
    }

    /// Scalar polynomial of component `t`.
    pub fn component(&self, t: usize) -> NcPoly {
        let terms = self
            .coeffs
            .iter()
            .map(|(w, c)| (w.clone(), vec![c[t]]));
        Self::from_terms(self.d, 1, terms).expect("component of a valid poly")
    }

    pub fn add(&self, other: &NcPoly) -> Result<NcPoly> {
        check_dim("NcPoly::add arity", self.d, other.d)?;
        let mut out = self.clone();
        for (w, c) in other.terms() {
            out.add_term(w.clone(), c)?;
        }
        Ok(out)
    }

    pub fn scale(&self, s: C64) -> NcPoly {
        let terms = self
            .coeffs
            .iter()
            .map(|(w, c)| (w.clone(), c.iter().map(|x| x * s).collect()));
        Self::from_terms(self.d, self.r, terms).expect("scaling keeps shape")
    }

    /// Product `self · other` where at least one factor is scalar-valued.
    pub fn mul(&self, other: &NcPoly) -> Result<NcPoly> {
        check_dim("NcPoly::mul arity", self.d, other.d)?;
        if self.r != 1 && other.r != 1 {
            return Err(NcError::InvalidArgument(
                "product needs a scalar-valued factor".into(),
            ));
        }
        let r = self.r.max(other.r);
        let mut out = NcPoly::zero(self.d, r);
        for (a, ca) in self.terms() {
            for (b, cb) in other.terms() {
                let coef: Vec<C64> = (0..r)
                    .map(|t| ca[if self.r == 1 { 0 } else { t }] * cb[if other.r == 1 { 0 } else { t }])
                    .collect();
                out.add_term(a.concat(b), &coef)?;
            }
        }
        Ok(out)
    }

    /// Random polynomial with `n_terms` random words of length `≤ deg`; one word has length `deg`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, r: usize, deg: usize, n_terms: usize) -> Self {
        let mut p = NcPoly::zero(d, r);
        for i in 0..n_terms.max(1) {
            let len = if i == 0 { deg } else { rng.gen_range(0..=deg) };
            let w = Word((0..len).map(|_| rng.gen_range(0..d)).collect());
            let c: Vec<C64> = (0..r)
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            p.add_term(w, &c).expect("random term is valid");
        }
        p
    }

    pub fn eval(&self, x: &MatTuple) -> Result<NcValue> {
        poly_eval(self, x)
    }

    pub fn to_json(&self) -> PolyJson {
        PolyJson {
            d: self.d,
            r: self.r,
            terms: self
                .coeffs
                .iter()
                .map(|(w, c)| TermJson {
                    word: w.0.iter().map(|l| l + 1).collect(),
                    coef: c.iter().map(|z| [z.re, z.im]).collect(),
                })
                .collect(),
        }
    }

    pub fn from_json(j: &PolyJson) -> Result<Self> {
        let mut p = NcPoly::zero(j.d, j.r);
        for t in &j.terms {
            if t.word.contains(&0) {
                return Err(NcError::InvalidArgument("fixture letters are one-based".into()));
            }
            let w = Word(t.word.iter().map(|l| l - 1).collect());
            let c: Vec<C64> = t.coef.iter().map(|e| C64::new(e[0], e[1])).collect();
            p.add_term(w, &c)?;
        }
        Ok(p)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_json(&serde_json::from_str(s)?)
    }
}

/// JSON fixture `{"d", "r", "terms": [{"word": [1, 2], "coef": [[re, im], ...]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyJson {
    pub d: usize,
    pub r: usize,
    pub terms: Vec<TermJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermJson {
    pub word: Vec<usize>,
    pub coef: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TupleJson {
    pub n: usize,
    pub mats: Vec<MatrixJson>,
}

impl From<&MatTuple> for TupleJson {
    fn from(x: &MatTuple) -> Self {
        TupleJson {
            n: x.n,
            mats: x.mats.iter().map(MatrixJson::from).collect(),
        }
    }
}

impl TryFrom<&TupleJson> for MatTuple {
    type Error = NcError;
    fn try_from(j: &TupleJson) -> Result<Self> {
        let mats = j
            .mats
            .iter()
            .map(CMatrix::try_from)
            .collect::<Result<Vec<_>>>()?;
        let t = MatTuple::new(mats)?;
        if !t.mats.is_empty() {
            check_dim("TupleJson level", j.n, t.n)?;
        }
        Ok(MatTuple { n: j.n, mats: t.mats })
    }
}

/// Monomial cache keyed by word; prefixes are reused.
struct MonomialCache<'a> {
    x: &'a MatTuple,
    memo: HashMap<Word, CMatrix>,
}

impl<'a> MonomialCache<'a> {
    fn new(x: &'a MatTuple) -> Self {
        let mut memo = HashMap::new();
        memo.insert(Word::empty(), CMatrix::identity(x.n, x.n));
        MonomialCache { x, memo }
    }

    fn get(&mut self, w: &Word) -> &CMatrix {
        if !self.memo.contains_key(w) {
            let prefix = Word(w.0[..w.len() - 1].to_vec());
            let last = *w.0.last().expect("non-empty word");
            let p = self.get(&prefix).clone();
            let v = p * &self.x.mats[last];
            self.memo.insert(w.clone(), v);
        }
        &self.memo[w]
    }
}

/// `p(X) = Σ_α p_α X^α`, component-major.
pub fn poly_eval(p: &NcPoly, x: &MatTuple) -> Result<NcValue> {
    if p.d != x.d() {
        return Err(NcError::ArityMismatch {
            expected: p.d,
            got: x.d(),
        });
    }
    let mut out = NcValue::zeros(p.r, x.n, x.n);
    let mut cache = MonomialCache::new(x);
    for (w, c) in p.terms() {
        let m = cache.get(w);
        for (t, ct) in c.iter().enumerate() {
            if *ct != C64::new(0.0, 0.0) {
                out.comps[t] += m.map(|z| z * ct);
            }
        }
    }
    Ok(out)
}

/// Residuals of the nc-function axioms for a polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    /// `p(X ⊕ Y) − p(X) ⊕ p(Y)`.
    pub direct_sum: f64,
    /// `p(X) S − S p(Y)`.
    pub intertwining: f64,
    /// `max_j ‖X_j S − S Y_j‖`; the intertwining residual is meaningful when this vanishes.
    pub intertwining_hypothesis: f64,
    /// `p(S Y S⁻¹) − S p(Y) S⁻¹`, when `S` is square and invertible.
    pub similarity: Option<f64>,
}

/// Checks direct sums, intertwining and similarity for `p` at `X` (level `n`), `Y` (level `m`), `S: n × m`.
pub fn check_nc_axioms(p: &NcPoly, x: &MatTuple, y: &MatTuple, s: &CMatrix) -> Result<AxiomReport> {
    check_dim("check_nc_axioms S rows", x.n, s.nrows())?;
    check_dim("check_nc_axioms S cols", y.n, s.ncols())?;
    let px = poly_eval(p, x)?;
    let py = poly_eval(p, y)?;
    let pxy = poly_eval(p, &x.direct_sum(y)?)?;
    let sum = NcValue {
        comps: px
            .comps
            .iter()
            .zip(&py.comps)
            .map(|(a, b)| block_diag(&[a.clone(), b.clone()]))
            .collect(),
    };
    let direct_sum = pxy.max_diff(&sum);
    let intertwining = px
        .comps
        .iter()
        .zip(&py.comps)
        .map(|(a, b)| max_abs(&(a * s - s * b)))
        .fold(0.0, f64::max);
    let intertwining_hypothesis = x
        .mats
        .iter()
        .zip(&y.mats)
        .map(|(a, b)| max_abs(&(a * s - s * b)))
        .fold(0.0, f64::max);
    let similarity = if s.is_square() && s.nrows() > 0 {
        match s.clone().try_inverse() {
            Some(s_inv) => {
                let conj = y.conjugate(s, &s_inv);
                let lhs = poly_eval(p, &conj)?;
                Some(
                    lhs.comps
                        .iter()
                        .zip(&py.comps)
                        .map(|(a, b)| max_abs(&(a - s * b * &s_inv)))
                        .fold(0.0, f64::max),
                )
            }
            None => None,
        }
    } else {
        None
    };
    Ok(AxiomReport {
        direct_sum,
        intertwining,
        intertwining_hypothesis,
        similarity,
    })
}

/// An `S ≠ 0` with `X S = S Y` when one exists, from the nullspace of the Sylvester map.
pub fn intertwiner(x: &MatTuple, y: &MatTuple) -> Result<Option<CMatrix>> {
    check_dim("intertwiner arity", x.d(), y.d())?;
    let (n, m) = (x.n, y.n);
    // vec(S) row-major: column index a·m + b.
    let mut rows = CMatrix::zeros(x.d() * n * m, n * m);
    for j in 0..x.d() {
        for a in 0..n {
            for b in 0..m {
                let row = j * n * m + a * m + b;
                for t in 0..n {
                    rows[(row, t * m + b)] += x.mats[j][(a, t)];
                }
                for t in 0..m {
                    rows[(row, a * m + t)] -= y.mats[j][(t, b)];
                }
            }
        }
    }
    let (ker, report) = crate::linalg::nullspace_with_gap(&rows, crate::linalg::Tol::Auto);
    if ker.dim() == 0 || !report.gap_ok() {
        return Ok(None);
    }
    let v = ker.basis.column(0);
    Ok(Some(CMatrix::from_fn(n, m, |a, b| v[a * m + b])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, random_cmatrix};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m2(v: [f64; 4]) -> CMatrix {
        CMatrix::from_row_slice(2, 2, &v.map(|x| c64(x, 0.0)))
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(word_enumerate(2, 0), vec![Word::empty()]);
        assert_eq!(word_enumerate(2, 3).len(), 15);
        assert_eq!(word_enumerate(1, 4).len(), 5);
        assert_eq!(word_count(2, 3), 15);
        let ws = word_enumerate(2, 2);
        assert_eq!(ws[1], Word(vec![0]));
        assert_eq!(ws[3], Word(vec![0, 0]));
        assert_eq!(ws[6], Word(vec![1, 1]));
    }

    #[test]
    fn commutator_example() {
        let x = MatTuple::new(vec![m2([0.0, 1.0, 0.0, 0.0]), m2([0.0, 0.0, 1.0, 0.0])]).unwrap();
        let one = c64(1.0, 0.0);
        let p = NcPoly::from_terms(2, 1, [(Word(vec![0, 1]), vec![one]), (Word(vec![1, 0]), vec![-one])]).unwrap();
        let v = poly_eval(&p, &x).unwrap();
        assert!(max_abs(&(&v.comps[0] - m2([1.0, 0.0, 0.0, -1.0]))) < 1e-15);
    }

    #[test]
    fn constant_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = MatTuple::random(&mut rng, 2, 3, 1.0);
        let one = NcPoly::constant(2, vec![c64(1.0, 0.0)]);
        assert_eq!(poly_eval(&one, &x).unwrap().comps[0], CMatrix::identity(3, 3));
        let x1 = NcPoly::coordinate(2, 0).unwrap();
        assert_eq!(poly_eval(&x1, &x).unwrap().comps[0], x.mats[0]);
        assert!(poly_eval(&x1, &MatTuple::zeros(3, 2)).is_err());
    }

    #[test]
    fn zero_coefficients_are_not_stored() {
        let one = c64(1.0, 0.0);
        let mut p = NcPoly::from_terms(2, 1, [(Word(vec![1]), vec![one])]).unwrap();
        p.add_term(Word(vec![1]), &[-one]).unwrap();
        assert!(p.is_zero());
        assert!(NcPoly::from_terms(2, 1, [(Word(vec![2]), vec![one])]).is_err());
    }

    #[test]
    fn axioms_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = NcPoly::random(&mut rng, 2, 2, 4, 8);
        let x = MatTuple::random(&mut rng, 2, 2, 0.6);
        let y = MatTuple::random(&mut rng, 2, 3, 0.6);
        let rep = check_nc_axioms(&p, &x, &y, &CMatrix::zeros(2, 3)).unwrap();
        assert!(rep.direct_sum < 1e-12);
        assert_eq!(rep.intertwining, 0.0);

        let s = random_cmatrix(&mut rng, 3, 3) + CMatrix::identity(3, 3).map(|z| z * 3.0);
        let s_inv = s.clone().try_inverse().unwrap();
        let xx = y.conjugate(&s, &s_inv);
        let rep = check_nc_axioms(&p, &xx, &y, &s).unwrap();
        let cond = spectral_norm(&s) * spectral_norm(&s_inv);
        assert!(rep.intertwining_hypothesis < 1e-12);
        assert!(rep.intertwining < 1e-10 * cond);
        assert!(rep.similarity.unwrap() < 1e-10 * cond);
    }

    #[test]
    fn intertwiner_of_amplification() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = MatTuple::random(&mut rng, 2, 2, 0.5);
        let s = intertwiner(&x.amplify(2), &x).unwrap().unwrap();
        let rep = check_nc_axioms(&NcPoly::random(&mut rng, 2, 1, 3, 5), &x.amplify(2), &x, &s).unwrap();
        assert!(rep.intertwining_hypothesis < 1e-12);
        assert!(rep.intertwining < 1e-12);
    }

    #[test]
    fn json_fixture_round_trip() {
        let src = r#"{"d":2,"r":2,"terms":[{"word":[],"coef":[[1,0],[0,0]]},{"word":[1,2],"coef":[[0.5,-1],[2,0]]}]}"#;
        let p = NcPoly::from_json_str(src).unwrap();
        assert_eq!(p.degree(), 2);
        assert_eq!(p.coef(&Word(vec![0, 1])).unwrap()[0], c64(0.5, -1.0));
        let back = NcPoly::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        assert!(NcPoly::from_json_str(r#"{"d":1,"r":1,"terms":[],"extra":1}"#).is_err());
        assert!(NcPoly::from_json_str(r#"{"d":1,"r":1,"terms":[{"word":[0],"coef":[[1,0]]}]}"#).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn index_word_bijection(d in 1usize..4, n in 0usize..5) {
            let ws = word_enumerate(d, n);
            prop_assert_eq!(ws.len(), word_count(d, n));
            for (i, w) in ws.iter().enumerate() {
                prop_assert_eq!(word_index(d, w), i);
                prop_assert_eq!(&word_at(d, i), w);
            }
            let mut sorted = ws.clone();
            sorted.sort();
            prop_assert_eq!(sorted, ws);
        }

        #[test]
        fn amplification_commutes_with_evaluation(seed in any::<u64>(), d in 1usize..4, deg in 0usize..5, n in 1usize..4, m in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = NcPoly::random(&mut rng, d, 2, deg, 6);
            let x = MatTuple::random(&mut rng, d, n, 0.5);
            let lhs = poly_eval(&p, &x.amplify(m)).unwrap();
            let rhs = poly_eval(&p, &x).unwrap().map(|c| block_diag(&vec![c.clone(); m]));
            prop_assert!(lhs.max_diff(&rhs) < 1e-12);
        }

        #[test]
        fn monomials_match_fold_left_oracle(seed in any::<u64>(), d in 1usize..4, len in 0usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = MatTuple::random(&mut rng, d, 3, 0.5);
            let w = Word((0..len).map(|_| rng.gen_range(0..d)).collect());
            let p = NcPoly::monomial(d, w.clone(), c64(1.0, 0.0)).unwrap();
            let mut acc = CMatrix::identity(3, 3);
            for &l in &w.0 {
                let mut next = CMatrix::zeros(3, 3);
                for i in 0..3 {
                    for j in 0..3 {
                        for k in 0..3 {
                            next[(i, j)] += acc[(i, k)] * x.mats[l][(k, j)];
                        }
                    }
                }
                acc = next;
            }
            prop_assert!(max_abs(&(poly_eval(&p, &x).unwrap().comps[0].clone() - acc)) < 1e-12);
        }
    }
}
