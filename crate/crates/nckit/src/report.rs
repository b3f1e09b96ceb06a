//! Verification suites and their JSON reports.

use crate::cdclass::{
    conjugated_pair, flanders_basis, kernel_modules, left_module_span, local_subspaces, membership_report, perturb_frames,
    random_free_module, unitary_equiv_test, EquivOutcome, JointKernelSolver, OpTuple,
};
use crate::error::{NcError, Result};
use crate::fock::{build_fock, gen_kernel_vector, kernel_vector_bound};
use crate::gleason::{gleason_solve, gleason_uniqueness, gleason_verify, order_zero_residual, random_vanishing};
use crate::linalg::{
    c64, elementary, hs_inner, max_abs, random_cmatrix, random_cvector, subspace_relate, CMatrix, MatSpaceElement, Subspace, Tol,
    GAP_THRESHOLD,
};
use crate::ncdiff::{cic_check, delta_r, finite_difference_check, tt_eval, tt_expand, DeltaRequest};
use crate::ncpoly::{check_nc_axioms, poly_eval, word_enumerate, MatTuple, NcPoly};
use crate::ncrkhs::{
    cp_check_sampled, derivative_values, e_matrix, nondegeneracy_report, random_cp_samples, strict_positivity_report, HardyKernel,
    RkhsSpace,
};
use crate::solver::{equation_residuals, global_oracle, local_frame, model_build, random_star_instance, star_solve, StarOrder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Ncpoly,
    Ncdiff,
    Ncrkhs,
    Cdclass,
    Solver,
    Gleason,
    All,
}

impl Suite {
    pub const MODULES: [Suite; 6] = [Suite::Ncpoly, Suite::Ncdiff, Suite::Ncrkhs, Suite::Cdclass, Suite::Solver, Suite::Gleason];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Ncpoly => "ncpoly",
            Suite::Ncdiff => "ncdiff",
            Suite::Ncrkhs => "ncrkhs",
            Suite::Cdclass => "cdclass",
            Suite::Solver => "solver",
            Suite::Gleason => "gleason",
            Suite::All => "all",
        }
    }

    fn stream(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = NcError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::MODULES
            .iter()
            .chain(std::iter::once(&Suite::All))
            .find(|x| x.name() == s)
            .copied()
            .ok_or_else(|| NcError::InvalidArgument(format!("unknown suite `{s}`")))
    }
}

/// Run parameters. `None` selects the per-suite default.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub suite: Suite,
    pub seed: u64,
    /// Overrides every residual tolerance.
    pub tol: Option<f64>,
    pub d: Option<usize>,
    /// Fock truncation degree.
    pub n_max: Option<usize>,
    pub levels: Option<Vec<usize>>,
    /// Jet order for the solver suite.
    pub order: Option<usize>,
    pub deg: Option<usize>,
    /// Random instances per check, or sample points per level for `cdclass`.
    pub trials: Option<usize>,
}

impl SuiteConfig {
    pub fn new(suite: Suite, seed: u64) -> Self {
        SuiteConfig {
            suite,
            seed,
            tol: None,
            d: None,
            n_max: None,
            levels: None,
            order: None,
            deg: None,
            trials: None,
        }
    }

    /// Size caps: `d ≤ 3`, `N ≤ 8`, levels `≤ 3`, order `≤ 6`, degree `≤ 6`, trials `≤ 200`.
    pub fn validate(&self) -> Result<()> {
        let cap = |what: &str, v: Option<usize>, lo: usize, hi: usize| -> Result<()> {
            match v {
                Some(x) if x < lo || x > hi => Err(NcError::InvalidArgument(format!("{what} = {x} outside {lo}..={hi}"))),
                _ => Ok(()),
            }
        };
        cap("d", self.d, 1, 3)?;
        cap("N", self.n_max, 1, 8)?;
        cap("order", self.order, 0, 6)?;
        cap("deg", self.deg, 1, 6)?;
        cap("trials", self.trials, 1, 200)?;
        if let Some(levels) = &self.levels {
            if levels.is_empty() {
                return Err(NcError::InvalidArgument("levels must be non-empty".into()));
            }
            for &l in levels {
                cap("level", Some(l), 1, 3)?;
            }
        }
        match self.tol {
            Some(t) if !(t.is_finite() && t > 0.0) => Err(NcError::InvalidArgument(format!("tol = {t} must be positive"))),
            _ => Ok(()),
        }
    }

    fn levels_or(&self, default: &[usize]) -> Vec<usize> {
        self.levels.clone().unwrap_or_else(|| default.to_vec())
    }

    fn tol_or(&self, default: f64) -> f64 {
        self.tol.unwrap_or(default)
    }

    fn rng(&self, suite: Suite, trial: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((suite.stream() << 32) | trial as u64);
        rng
    }
}

/// One verified property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub name: String,
    /// The identity or bound being checked.
    pub anchor: String,
    pub residual: f64,
    pub tol: f64,
    pub dims: Vec<usize>,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `residual ≤ tol`; a non-finite residual is stored as `f64::MAX` and fails.
    pub fn residual(name: &str, anchor: &str, residual: f64, tol: f64, dims: Vec<usize>, detail: String) -> Self {
        let finite = residual.is_finite();
        Check {
            name: name.into(),
            anchor: anchor.into(),
            residual: if finite { residual } else { f64::MAX },
            tol,
            dims,
            pass: finite && residual <= tol,
            detail: if finite { detail } else { format!("non-finite residual; {detail}") },
        }
    }

    /// A check decided by `pass`; the residual is informational.
    pub fn flag(name: &str, anchor: &str, pass: bool, residual: f64, dims: Vec<usize>, detail: String) -> Self {
        let mut c = Check::residual(name, anchor, residual, f64::INFINITY, dims, detail);
        c.tol = f64::MAX;
        c.pass = pass && residual.is_finite();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema_version: u32,
    pub suite: String,
    pub seed: u64,
    /// Sorted by name.
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl Report {
    pub fn new(suite: Suite, seed: u64, mut checks: Vec<Check>) -> Self {
        checks.sort_by(|a, b| a.name.cmp(&b.name));
        let pass = checks.iter().all(|c| c.pass);
        Report {
            schema_version: SCHEMA_VERSION,
            suite: suite.name().into(),
            seed,
            checks,
            pass,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a report, rejecting unknown fields and other schema versions.
    pub fn from_json(s: &str) -> Result<Self> {
        let r: Report = serde_json::from_str(s)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(NcError::InvalidArgument(format!(
                "schema version {} is not {SCHEMA_VERSION}",
                r.schema_version
            )));
        }
        Ok(r)
    }
}

/// JSON Schema of [`Report`].
pub fn report_schema() -> serde_json::Value {
    serde_json::json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "nckit verification report",
        "type": "object",
        "additionalProperties": false,
        "required": ["schema_version", "suite", "seed", "checks", "pass"],
        "properties": {
            "schema_version": { "const": SCHEMA_VERSION },
            "suite": { "enum": ["ncpoly", "ncdiff", "ncrkhs", "cdclass", "solver", "gleason", "all"] },
            "seed": { "type": "integer", "minimum": 0 },
            "pass": { "type": "boolean" },
            "checks": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": false,
                    "required": ["name", "anchor", "residual", "tol", "dims", "pass", "detail"],
                    "properties": {
                        "name": { "type": "string" },
                        "anchor": { "type": "string" },
                        "residual": { "type": "number" },
                        "tol": { "type": "number" },
                        "dims": { "type": "array", "items": { "type": "integer", "minimum": 0 } },
                        "pass": { "type": "boolean" },
                        "detail": { "type": "string" }
                    }
                }
            }
        }
    })
}

/// Runs the configured suite. Identical configs give identical reports.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Report> {
    cfg.validate()?;
    let checks = match cfg.suite {
        Suite::All => {
            let parts: Vec<Vec<Check>> = Suite::MODULES.par_iter().map(|&s| module_checks(s, cfg)).collect::<Result<_>>()?;
            parts.into_iter().flatten().collect()
        }
        s => module_checks(s, cfg)?,
    };
    Ok(Report::new(cfg.suite, cfg.seed, checks))
}

fn module_checks(suite: Suite, cfg: &SuiteConfig) -> Result<Vec<Check>> {
    match suite {
        Suite::Ncpoly => ncpoly_checks(cfg),
        Suite::Ncdiff => ncdiff_checks(cfg),
        Suite::Ncrkhs => ncrkhs_checks(cfg),
        Suite::Cdclass => cdclass_checks(cfg),
        Suite::Solver => solver_checks(cfg),
        Suite::Gleason => gleason_checks(cfg),
        Suite::All => unreachable!("expanded by run_suite"),
    }
}

fn fold_max(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) })
}

/// Runs `f` for each trial index on its own random stream, in parallel, keeping order.
fn trials<T: Send>(cfg: &SuiteConfig, suite: Suite, n: usize, f: impl Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = cfg.rng(suite, i);
            f(i, &mut rng)
        })
        .collect()
}

fn ncpoly_checks(cfg: &SuiteConfig) -> Result<Vec<Check>> {
    let (d, deg, n) = (cfg.d.unwrap_or(3), cfg.deg.unwrap_or(5), cfg.trials.unwrap_or(50));
    let levels = cfg.levels_or(&[1, 2, 3]);
    let tol = cfg.tol_or(1e-10);
    let rows = trials(cfg, Suite::Ncpoly, n, |i, rng| {
        let p = NcPoly::random(rng, d, 1 + i % 2, deg, 8);
        let (a, b) = (levels[i % levels.len()], levels[(i + 1) % levels.len()]);
        let y = MatTuple::random(rng, d, a, 0.5);
        let x = y.direct_sum(&MatTuple::random(rng, d, b, 0.5))?;
        let inclusion = CMatrix::identity(a + b, a);
        let inter = check_nc_axioms(&p, &x, &y, &inclusion)?;
        let s = CMatrix::identity(a, a) + random_cmatrix(rng, a, a).map(|z| z * 0.2);
        let sim = check_nc_axioms(&p, &y, &y, &s)?;
        Ok([inter.direct_sum, inter.intertwining, sim.similarity.unwrap_or(f64::INFINITY)])
    })?;
    let col = |k: usize| fold_max(rows.iter().map(|r| r[k]));
    let dims = vec![n, d, deg];
    let detail = format!("{n} random polynomials, d = {d}, deg <= {deg}, levels {levels:?}");
    Ok(vec![
        Check::residual("ncpoly.direct_sum", "p(X ⊕ Y) = p(X) ⊕ p(Y)", col(0), tol, dims.clone(), detail.clone()),
        Check::residual("ncpoly.intertwining", "X S = S Y ⇒ p(X) S = S p(Y)", col(1), tol, dims.clone(), detail.clone()),
        Check::residual("ncpoly.similarity", "p(S Y S⁻¹) = S p(Y) S⁻¹", col(2), tol, dims, detail),
    ])
}

fn rand_dirs(rng: &mut ChaCha8Rng, d: usize, rows: usize, cols: usize) -> Vec<CMatrix> {
    (0..d).map(|_| random_cmatrix(rng, rows, cols).map(|z| z * 0.5)).collect()
}

fn ncdiff_checks(cfg: &SuiteConfig) -> Result<Vec<Check>> {
    let (d, deg, n) = (cfg.d.unwrap_or(2), cfg.deg.unwrap_or(4), cfg.trials.unwrap_or(20));
    let levels = cfg.levels_or(&[1, 2, 3]);
    let tol = cfg.tol_or(1e-10);
    let rows = trials(cfg, Suite::Ncdiff, n, |i, rng| {
        let p = NcPoly::random(rng, d, 1 + i % 2, deg, 8);
        let (a, b) = (levels[i % levels.len()], levels[(i + 1) % levels.len()]);
        let x = MatTuple::random(rng, d, a, 0.5);
        let y = MatTuple::random(rng, d, b, 0.5);
        let fd = finite_difference_check(&p, &x, &y, &random_cmatrix(rng, b, a))?;

        let s = if a % 2 == 0 && i % 2 == 1 { 2 } else { 1 };
        let centre = MatTuple::random(rng, d, s, 0.3);
        let tt = tt_expand(&p, &centre, deg)?;
        let tt_res = tt_eval(&tt, &x)?.max_diff(&poly_eval(&p, &x)?);
        let cic = cic_check(&tt)?.residual;

        let bases: Vec<MatTuple> = (0..deg + 2).map(|k| MatTuple::random(rng, d, levels[(i + k) % levels.len()], 0.5)).collect();
        let dirs: Vec<Vec<CMatrix>> = (0..=deg).map(|k| rand_dirs(rng, d, bases[k].n, bases[k + 1].n)).collect();
        let high = delta_r(&p, &DeltaRequest::new(bases, dirs))?.max_abs();
        Ok([fd, tt_res, cic, high])
    })?;
    let col = |k: usize| fold_max(rows.iter().map(|r| r[k]));
    let dims = vec![n, d, deg];
    let detail = format!("{n} random polynomials, d = {d}, deg <= {deg}, levels {levels:?}");
    Ok(vec![
        Check::residual(
            "ncdiff.finite_difference",
            "S f(X) − f(Y) S = Σ_j Δ_{R,j} f(Y, X)(S X_j − Y_j S)",
            col(0),
            tol,
            dims.clone(),
            detail.clone(),
        ),
        Check::residual(
            "ncdiff.tt_exactness",
            "f(X) = Σ_ℓ Δ^ℓ_R f(Y, …, Y)(X − Y, …, X − Y) for deg f < ∞",
            col(1),
            tol,
            dims.clone(),
            detail.clone(),
        ),
        Check::residual("ncdiff.tt_cic", "canonical intertwining conditions on Δ^ℓ_R f(Y, …, Y)", col(2), tol, dims.clone(), detail.clone()),
        Check::residual("ncdiff.order_above_degree", "Δ^{deg f + 1}_R f = 0", col(3), tol, dims, detail),
    ])
}

fn ncrkhs_checks(cfg: &SuiteConfig) -> Result<Vec<Check>> {
    let (d, n_max) = (cfg.d.unwrap_or(2), cfg.n_max.unwrap_or(5));
    let levels = cfg.levels_or(&[1, 2, 3]);
    let n = cfg.trials.unwrap_or(5) * levels.len();
    let fock = RkhsSpace::fock(d, n_max)?;
    let dim = fock.dim();
    let rows = trials(cfg, Suite::Ncrkhs, n, |i, rng| {
        let m = levels[i % levels.len()];
        let w = MatTuple::random_with_row_norm(rng, d, m, 0.6);

        let coords = random_cvector(rng, dim);
        let v = random_cmatrix(rng, 1, m);
        let y = random_cvector(rng, m);
        let lhs = fock.kernel_element(&w, &v, &y)?.dotc(&coords);
        let fw = &fock.eval_function(&coords, &w)?[0];
        let reproducing = (lhs - y.dotc(&(fw * v.adjoint()).column(0).into_owned())).norm();

        let f = MatSpaceElement::from_vector(m, dim, random_cvector(rng, m * m * dim))?;
        let (a, b) = (random_cmatrix(rng, m, m), random_cmatrix(rng, m, m));
        let g = fock.gen_kernel(&w, 0)?.value.left_mul(&a).right_mul(&b);
        let generalized = (f.hs_inner(&g) - hs_inner(&fock.apply_at(&f, &w, 0, &a.adjoint())?, &b)).norm();

        let mut derivative: f64 = 0.0;
        for l in 1..=2 {
            let dirs: Vec<MatTuple> = (0..l).map(|_| MatTuple::random(rng, d, m, 0.5)).collect();
            let dk = fock.kernel_derivative(&w, &dirs, 0)?.left_mul(&a).right_mul(&b);
            let slots = derivative_values(&fock, &f, &w, &dirs, 0)?;
            let mut acted = CMatrix::zeros(m, m);
            for p in 0..m {
                for q in 0..m {
                    acted += &slots[p * m + q] * a.adjoint() * elementary(m, m, p, q);
                }
            }
            derivative = derivative.max((f.hs_inner(&dk) - hs_inner(&acted, &b)).norm());
        }

        let amats = vec![random_cmatrix(rng, m, m)];
        let right = fock.ev_right(&fock.ev_right_adjoint(&amats, &w)?, &w)?;
        let kid = fock.kernel(&w, &w, &CMatrix::identity(m, m))?;
        let right_res = max_abs(&(&right[0] - kid.block(0, 0) * &amats[0]));
        let left = fock.ev_left(&fock.ev_left_adjoint(&amats, &w)?, &w)?;
        let left_res = max_abs(&(&left[0] - &amats[0] * e_matrix(&fock, &w, 0, 0)?));

        let nd = nondegeneracy_report(&fock, &w)?;
        let sp = strict_positivity_report(&fock, &w, 8, rng)?;
        let fock_false = nd.flags().iter().chain(&sp.flags()).filter(|&&x| !x).count();
        let (deg_space, deg_w) = degenerate_model(rng, m)?;
        let nd = nondegeneracy_report(&deg_space, &deg_w)?;
        let sp = strict_positivity_report(&deg_space, &deg_w, 8, rng)?;
        let deg_true = nd.flags().iter().chain(&sp.flags()).filter(|&&x| x).count();
        Ok([reproducing, generalized, derivative, right_res, left_res, fock_false as f64, deg_true as f64])
    })?;
    let col = |k: usize| fold_max(rows.iter().map(|r| r[k]));
    let dims = vec![d, n_max, dim];
    let detail = format!("Fock model d = {d}, N = {n_max}; {n} points over levels {levels:?}");
    let mut rng = cfg.rng(Suite::Ncrkhs, n);
    let cp = cp_check_sampled(&HardyKernel::new(d, n_max)?, &random_cp_samples(&mut rng, d, 1, 6, 3, 0.5))?;
    Ok(vec![
        Check::residual("ncrkhs.reproducing", "⟨f, K_{W,v,y}⟩ = ⟨f(W) v*, y⟩", col(0), cfg.tol_or(1e-11), dims.clone(), detail.clone()),
        Check::residual(
            "ncrkhs.generalized_reproducing",
            "⟨f, A K(·,W) B⟩ = ⟨f(W) A*, B⟩",
            col(1),
            cfg.tol_or(1e-9),
            dims.clone(),
            detail.clone(),
        ),
        Check::residual(
            "ncrkhs.derivative_reproducing",
            "⟨f, A ∂^ℓ K(·,W) B⟩ = ⟨Σ_pq ∂^ℓ f(W)_pq A* E_pq, B⟩, ℓ ≤ 2",
            col(2),
            cfg.tol_or(1e-9),
            dims.clone(),
            detail.clone(),
        ),
        Check::residual(
            "ncrkhs.right_evaluation",
            "EV^R_W (EV^R_W)* = K(W,W)(I_m)",
            col(3),
            cfg.tol_or(1e-10),
            dims.clone(),
            detail.clone(),
        ),
        Check::residual("ncrkhs.left_evaluation", "EV^L_W (EV^L_W)* = 𝖤(W)", col(4), cfg.tol_or(1e-10), dims.clone(), detail.clone()),
        Check::flag(
            "ncrkhs.criteria.fock",
            "nondegeneracy and strict positivity conditions all hold",
            col(5) == 0.0,
            col(5),
            dims.clone(),
            "residual counts conditions reported false".into(),
        ),
        Check::flag(
            "ncrkhs.criteria.degenerate",
            "nondegeneracy and strict positivity conditions all fail on a rank-deficient kernel",
            col(6) == 0.0,
            col(6),
            vec![1],
            "residual counts conditions reported true".into(),
        ),
        Check::flag(
            "ncrkhs.cp_hardy",
            "Σ Q_i* K(Z_i, Z_j)(P_i* P_j) Q_j ⪰ 0",
            cp.cp,
            (-cp.min_eig).max(0.0),
            dims,
            format!("min eigenvalue {:.3e}", cp.min_eig),
        ),
    ])
}

/// The one-feature space spanned by `Z₁` at a point whose `W₁` has a kernel.
fn degenerate_model(rng: &mut ChaCha8Rng, m: usize) -> Result<(RkhsSpace, MatTuple)> {
    let space = RkhsSpace::from_features(vec![NcPoly::coordinate(2, 0)?])?;
    let mut w = MatTuple::random(rng, 2, m, 0.5);
    let u = random_cmatrix(rng, m, m);
    let mut proj = CMatrix::identity(m, m);
    proj[(0, 0)] = c64(0.0, 0.0);
    w.mats[0] = &u * proj * u.adjoint().map(|z| z * 0.2);
    Ok((space, w))
}

fn cdclass_checks(cfg: &SuiteConfig) -> Result<Vec<Check>> {
    let (d, n_max) = (cfg.d.unwrap_or(2), cfg.n_max.unwrap_or(8));
    let levels = cfg.levels_or(&[1, 2]);
    let per_level = cfg.trials.unwrap_or(3);
    let rho = 0.4;
    let mut out = Vec::new();

    let (fock, _) = build_fock(d, n_max)?;
    let t = OpTuple::fock_right_adjoint(d, n_max)?;
    let mut rng = cfg.rng(Suite::Cdclass, 0);
    let points: Vec<MatTuple> = levels
        .iter()
        .flat_map(|&m| (0..per_level).map(move |_| m))
        .map(|m| MatTuple::random_with_row_norm(&mut rng, d, m, rho))
        .collect();
    let membership = membership_report(&t, 1, &points, |w| Tol::Abs(kernel_vector_bound(&fock, w)))?;
    let dims: Vec<usize> = membership.points.iter().map(|p| p.dim_found).collect();
    let min_gap = membership.points.iter().map(|p| p.gap_ratio).fold(f64::INFINITY, f64::min);
    out.push(Check::flag(
        "cdclass.membership.dims",
        "dim ker D_{T−W} = n² at level n",
        membership.dims_match(),
        0.0,
        dims.clone(),
        format!("levels {levels:?}, {per_level} points each, ‖W‖_row = {rho}, d = {d}, N = {n_max}"),
    ));
    out.push(Check::flag(
        "cdclass.membership.gap",
        "σ_{rank} / σ_{rank+1} ≥ 10³ at every point",
        membership.gaps_ok(),
        min_gap,
        dims,
        format!("threshold {GAP_THRESHOLD:.0e}; residual is the smallest gap ratio"),
    ));

    let solver = JointKernelSolver::new(&t);
    let mut angle: f64 = 0.0;
    for w in &points {
        let (s, _) = solver.kernel(w, Tol::Abs(kernel_vector_bound(&fock, w)))?;
        let v = gen_kernel_vector(&fock, w)?;
        let (span, _) = Subspace::span_of(&left_module_span(&[v]), Tol::Auto);
        angle = angle.max(subspace_relate(&s, &span)?.distance);
    }
    out.push(Check::residual(
        "cdclass.membership.angle",
        "ker D_{T−W} = span{A · v_W}",
        angle,
        cfg.tol_or(1e-6),
        vec![points.len()],
        format!("largest principal-angle distance; truncation scale ρ^(N+1) = {:.1e}", rho.powi(n_max as i32 + 1)),
    ));

    let n_flanders = 30;
    let flanders = trials(cfg, Suite::Cdclass, n_flanders, |i, rng| {
        let (r, m) = (1 + i % 3, 2 + (i / 3) % 2);
        let k = r * m + 2;
        let (_, s) = random_free_module(rng, m, k, r)?;
        Ok(match flanders_basis(&s, m, k, r, rng) {
            Ok(b) => b.generators.len() == r && b.span_rank == r * m * m,
            Err(NcError::FlandersExhausted { .. }) => false,
            Err(e) => return Err(e),
        })
    })?;
    let failures = flanders.iter().filter(|&&ok| !ok).count();
    out.push(Check::flag(
        "cdclass.flanders",
        "r free generators with left-span rank r·m²",
        failures == 0,
        failures as f64,
        vec![n_flanders - failures, n_flanders],
        "r ∈ {1,2,3}, m ∈ {2,3}; residual counts failed extractions".into(),
    ));

    let (small, _) = build_fock(2, 2)?;
    let t_small = OpTuple::fock_right_adjoint(2, 2)?;
    let pairs = trials(cfg, Suite::Cdclass, 10, |i, rng| {
        let pts: Vec<MatTuple> = (0..4).map(|_| MatTuple::random(rng, 2, 2, 0.5)).collect();
        let frames: Vec<Vec<MatSpaceElement>> = pts.iter().map(|w| Ok(vec![gen_kernel_vector(&small, w)?])).collect::<Result<_>>()?;
        let (v, t2) = conjugated_pair(&t_small, rng);
        let frames2: Vec<Vec<MatSpaceElement>> = frames.iter().map(|f| f.iter().map(|h| h.apply_op(&v)).collect()).collect();
        let accept = match unitary_equiv_test(&t_small, &t2, &frames, &frames2)?.0 {
            EquivOutcome::Equivalent { unitarity, intertwining, .. } => unitarity.max(intertwining),
            _ => f64::INFINITY,
        };
        let bumped = perturb_frames(&frames2, i % small.dim, 0.1);
        let reject = match unitary_equiv_test(&t_small, &t2, &frames, &bumped)?.0 {
            EquivOutcome::Inequivalent { witness, .. } => witness.deviation,
            _ => 0.0,
        };
        Ok((accept, reject))
    })?;
    let accept = fold_max(pairs.iter().map(|p| p.0));
    let reject = pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    out.push(Check::residual(
        "cdclass.unitary_equivalence.accept",
        "U unitary with U T_j = T̃_j U and U γ(W) = γ̃(W)",
        accept,
        cfg.tol_or(1e-8),
        vec![pairs.len()],
        "conjugated pairs; residual is the worst unitarity or intertwining defect".into(),
    ));
    out.push(Check::flag(
        "cdclass.unitary_equivalence.reject",
        "perturbed frames are rejected with a Gram-form witness",
        reject > 0.0,
        reject,
        vec![pairs.len()],
        "residual is the smallest witness deviation".into(),
    ));

    out.extend(local_dimension_checks(cfg, n_max)?);
    Ok(out)
}

/// Local module dimensions and invariance at a level-1 point of the left-shift model.
fn local_dimension_checks(cfg: &SuiteConfig, n_max: usize) -> Result<Vec<Check>> {
    let w = MatTuple::scalar(&[c64(0.08, 0.03), c64(-0.04, 0.05)]);
    let space = RkhsSpace::fock(2, n_max.min(5))?;
    let mut found = Vec::new();
    let mut expected = Vec::new();
    for l in 1..=2 {
        let (left, bi) = kernel_modules(&space, &w, l)?;
        found.extend([left, bi]);
        expected.extend([(l + 1) * (l + 2) / 2, l * (l + 3) / 2]);
    }
    let t = OpTuple::fock_left_adjoint(2, n_max)?;
    let (_, rep) = local_subspaces(&t, &w, 2, 1e-4)?;
    let invariance = fold_max(rep.invariance[1..].iter().copied());
    Ok(vec![
        Check::flag(
            "cdclass.local.dims",
            "dim 𝔏_ℓ = (ℓ+1)(ℓ+2)/2, dim 𝔅_ℓ = ℓ(ℓ+3)/2 for ℓ = 1, 2",
            found == expected,
            0.0,
            found.clone(),
            format!("found (𝔏₁, 𝔅₁, 𝔏₂, 𝔅₂) = {found:?}, formulas give {expected:?}"),
        ),
        Check::residual(
            "cdclass.local.invariance",
            "D_j 𝔅_ℓ ⊆ 𝔅_ℓ",
            invariance,
            cfg.tol_or(1e-8),
            rep.dims.clone(),
            format!("chain dims {:?}, per-step invariance {:?}, N = {n_max}", rep.dims, rep.invariance),
        ),
    ])
}

fn solver_checks(cfg: &SuiteConfig) -> Result<Vec<Check>> {
    let (d, order, n) = (cfg.d.unwrap_or(2), cfg.order.unwrap_or(4), cfg.trials.unwrap_or(20));
    let rows = trials(cfg, Suite::Solver, n, |i, rng| {
        let star = if i % 2 == 0 { StarOrder::TFirst } else { StarOrder::GFirst };
        let dims = (2 + i % 2, 2 + (i / 2) % 2, 2 + (i / 4) % 3);
        let (input, _) = random_star_instance(rng, d, dims, 1 + i % order.max(1), star)?;
        let sol = star_solve(&input)?;
        let eq = fold_max(equation_residuals(&input, &sol.series)?);
        let oracle = global_oracle(&input)?;
        let diff = fold_max(sol.series.coeffs.iter().zip(&oracle.coeffs).map(|(a, b)| max_abs(&(a - b))));
        Ok([eq, diff])
    })?;
    let col = |k: usize| fold_max(rows.iter().map(|r| r[k]));
    let detail = format!("{n} random solvable instances, d = {d}, orders ≤ {order}");
    let mut out = vec![
        Check::residual(
            "solver.star_solve.equation",
            "(𝒯 ⋆ 𝒢)_γ = ℱ_γ for |γ| ≤ K",
            col(0),
            cfg.tol_or(1e-9),
            vec![n, order],
            detail.clone(),
        ),
        Check::residual(
            "solver.star_solve.oracle",
            "order-by-order solution = global least-squares solution",
            col(1),
            cfg.tol_or(1e-8),
            vec![n, order],
            detail,
        ),
    ];

    let (fd, fn_) = (2, cfg.n_max.unwrap_or(6).max(order));
    let t = OpTuple::fock_right_adjoint(fd, fn_)?;
    let (fock, _) = build_fock(fd, fn_)?;
    let jet = local_frame(&t, &MatTuple::zeros(fd, 1), 1, order, Tol::Auto)?[0].series.clone();
    let c = jet.coeffs[0][(0, 0)];
    let mut frame_dev: f64 = 0.0;
    for w in word_enumerate(fd, order) {
        let got = jet.word_coef(&w)?;
        let at = fock.index(&w).expect("word within truncation");
        for (k, z) in got.iter().enumerate() {
            let want = if k == at { c } else { c64(0.0, 0.0) };
            frame_dev = frame_dev.max(((*z - want) / c).norm());
        }
    }
    out.push(Check::residual(
        "solver.local_frame.fock",
        "frame jet of R* at 0 = coefficients of v_W",
        frame_dev,
        cfg.tol_or(1e-10),
        vec![fock.dim, order],
        format!("d = {fd}, N = {fn_}, order {order}, normalized by the empty-word coefficient"),
    ));

    let rho = 0.3;
    let model_jet = local_frame(&t, &MatTuple::zeros(fd, 1), 1, fn_, Tol::Auto)?[0].series.clone();
    let mut rng = cfg.rng(Suite::Solver, n);
    let points: Vec<MatTuple> = (0..4).map(|i| MatTuple::random_with_row_norm(&mut rng, fd, 1 + i % 2, rho)).collect();
    let model = model_build(&t, std::slice::from_ref(&model_jet), &points, &mut rng)?;
    let (e, i, k) = model.worst();
    let bound = cfg.tol_or(1e-8) + 2.0 * rho.powi(fn_ as i32);
    let detail = format!("4 points at ‖W‖_row = {rho}, N = {fn_}; bound 1e-8 + 2ρ^N");
    out.push(Check::residual("solver.model.eigen", "(T_j ⊗ I) γ(W*) = γ(W*) W_j*", e, bound, vec![4], detail.clone()));
    out.push(Check::residual(
        "solver.model.intertwining",
        "U_Γ(T_j* h)(W) = W_j U_Γ(h)(W)",
        i,
        bound,
        vec![4],
        detail.clone(),
    ));
    out.push(Check::residual("solver.model.kernel", "K^Γ = Gram kernel of the frame", k, bound, vec![4], detail));
    out.push(Check::flag(
        "solver.model.cp",
        "K^Γ is completely positive on samples",
        model.cp.cp,
        (-model.cp.min_eig).max(0.0),
        vec![6],
        format!("min eigenvalue {:.3e}", model.cp.min_eig),
    ));
    Ok(out)
}

fn gleason_checks(cfg: &SuiteConfig) -> Result<Vec<Check>> {
    let (deg, n) = (cfg.deg.unwrap_or(4), cfg.trials.unwrap_or(20));
    let d_cap = cfg.d.unwrap_or(3);
    let rows = trials(cfg, Suite::Gleason, n, |i, rng| {
        let (d, s, p) = (1 + i % d_cap, 1 + (i / 3) % 2, 1 + (i / 2) % 2);
        let (inst, _) = random_vanishing(rng, d, s, p, deg, 0.5)?;
        let sol = gleason_solve(&inst)?;
        let probes: Vec<MatTuple> = (1..=3).map(|m| MatTuple::random(rng, d, m * s, 0.4)).collect();
        let verify = gleason_verify(&inst, &sol.factors, &probes)?;
        let u = gleason_uniqueness(&inst, &sol.factors)?;
        let dropped = sol.factors.iter().all(|f| f.degree() < inst.degree().max(1));
        let zero = order_zero_residual(&inst, &sol.factors)?;
        Ok((verify, u.deviation, dropped, sol.degree_drop_residual, zero))
    })?;
    let verified = rows.iter().filter(|r| r.0 <= cfg.tol_or(1e-9)).count();
    let dropped = rows.iter().filter(|r| r.2).count();
    let detail = format!("{n} vanishing instances, deg ≤ {deg}, d ≤ {d_cap}, s ≤ 2, p ≤ 2, probe levels m·s with m ≤ 3");
    Ok(vec![
        Check::residual(
            "gleason.verify",
            "F(Z) = Σ_j (L_{Z_j} ⊗ I − I ⊗ R_{W_j}) F_j(Z)",
            fold_max(rows.iter().map(|r| r.0)),
            cfg.tol_or(1e-9),
            vec![verified, n],
            detail.clone(),
        ),
        Check::residual(
            "gleason.uniqueness",
            "factors agree with the coefficient-system solution",
            fold_max(rows.iter().map(|r| r.1)),
            cfg.tol_or(1e-8),
            vec![n],
            detail.clone(),
        ),
        Check::flag(
            "gleason.degree_drop",
            "deg F_j ≤ deg F − 1",
            dropped == n,
            fold_max(rows.iter().map(|r| r.3)),
            vec![dropped, n],
            "residual is the largest discarded top-order coefficient".into(),
        ),
        Check::residual(
            "gleason.order_zero",
            "F_∅ = Σ_i (W_i ⊗ I − I ⊗ W_i) F_{i,∅}",
            fold_max(rows.iter().map(|r| r.4)),
            cfg.tol_or(1e-10),
            vec![n],
            detail,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(suite: Suite) -> SuiteConfig {
        SuiteConfig {
            trials: Some(3),
            deg: Some(3),
            ..SuiteConfig::new(suite, 7)
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::MODULES.iter().chain([Suite::All].iter()) {
            assert_eq!(s.name().parse::<Suite>().unwrap(), *s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn reports_are_sorted_deterministic_and_round_trip() {
        let cfg = small(Suite::Ncdiff);
        let a = run_suite(&cfg).unwrap();
        let b = run_suite(&cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!(a.pass, "{a:?}");
        assert!(a.checks.windows(2).all(|w| w[0].name < w[1].name));
        assert_eq!(Report::from_json(&a.to_json().unwrap()).unwrap(), a);
        let other = run_suite(&SuiteConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn unknown_fields_and_versions_are_rejected() {
        let rep = Report::new(Suite::Ncpoly, 1, vec![Check::residual("x", "a = b", 0.5, 1.0, vec![1], String::new())]);
        let mut v: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(matches!(Report::from_json(&v.to_string()), Err(NcError::Json(_))));
        let mut v: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        v["checks"][0]["source"] = serde_json::json!("x");
        assert!(Report::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        v["schema_version"] = serde_json::json!(2);
        assert!(matches!(Report::from_json(&v.to_string()), Err(NcError::InvalidArgument(_))));
    }

    #[test]
    fn schema_pins_version_and_fields() {
        let s = report_schema();
        assert_eq!(s["properties"]["schema_version"]["const"], SCHEMA_VERSION);
        let rep = Report::new(Suite::Gleason, 3, vec![Check::residual("x", "a", 0.0, 1.0, vec![], String::new())]);
        let v = serde_json::to_value(&rep).unwrap();
        let required = s["required"].as_array().unwrap();
        assert_eq!(v.as_object().unwrap().len(), required.len());
        let check_fields = s["properties"]["checks"]["items"]["required"].as_array().unwrap();
        assert_eq!(v["checks"][0].as_object().unwrap().len(), check_fields.len());
    }

    #[test]
    fn check_outcomes() {
        assert!(Check::residual("a", "", 1e-12, 1e-10, vec![], String::new()).pass);
        assert!(!Check::residual("a", "", 1e-9, 1e-10, vec![], String::new()).pass);
        let nan = Check::residual("a", "", f64::NAN, 1.0, vec![], String::new());
        assert!(!nan.pass);
        assert_eq!(nan.residual, f64::MAX);
        assert!(serde_json::to_string(&nan).is_ok());
        assert!(!Check::flag("a", "", false, 0.0, vec![], String::new()).pass);
    }

    #[test]
    fn config_caps_are_enforced() {
        let bad = SuiteConfig { d: Some(4), ..SuiteConfig::new(Suite::Ncpoly, 0) };
        assert!(run_suite(&bad).is_err());
        let bad = SuiteConfig { levels: Some(vec![]), ..SuiteConfig::new(Suite::Ncpoly, 0) };
        assert!(bad.validate().is_err());
        let bad = SuiteConfig { tol: Some(-1.0), ..SuiteConfig::new(Suite::Ncpoly, 0) };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn small_module_suites_pass() {
        for suite in [Suite::Ncpoly, Suite::Gleason] {
            let rep = run_suite(&small(suite)).unwrap();
            assert!(rep.pass, "{rep:?}");
        }
    }
}
