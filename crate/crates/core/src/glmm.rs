//! Bernoulli-logit mixed model with one random intercept per segment,
//! fitted by maximising the Laplace approximation of the marginal
//! likelihood.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aggregate::SegmentObservation;
use crate::error::{Diagnostic, Error, Result};
use crate::features::{DesignMatrix, FeatureTransform, ModelSpec};
use crate::ingest::{DayType, Season, Weather};
use crate::linalg::{inverse_spd, solve_spd};
use crate::math::{bernoulli_loglik, logistic, normal_quantile, two_sided_p};

pub const INTERCEPT_LABEL: &str = "(Intercept)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlmmOptions {
    pub include_intercept: bool,
    /// Pins the random-intercept variance; 0 removes the random effect.
    pub fixed_sigma2: Option<f64>,
    pub inner_tol: f64,
    pub max_inner: usize,
    /// Tolerance on log σ².
    pub outer_tol: f64,
    pub max_outer: usize,
    pub log_sigma2_bounds: (f64, f64),
}

impl Default for GlmmOptions {
    fn default() -> Self {
        Self {
            include_intercept: true,
            fixed_sigma2: None,
            inner_tol: 1e-8,
            max_inner: 200,
            outer_tol: 1e-4,
            max_outer: 50,
            log_sigma2_bounds: (-15.0, 5.0),
        }
    }
}

/// Borrowed model inputs: row-major `x` without an intercept column.
#[derive(Clone, Copy, Debug)]
pub struct GlmmData<'a> {
    pub x: &'a [f64],
    pub n_cols: usize,
    pub y: &'a [f64],
    pub groups: &'a [u16],
    pub offset: Option<&'a [f64]>,
}

impl<'a> GlmmData<'a> {
    pub fn from_design(d: &'a DesignMatrix) -> Self {
        Self {
            x: &d.x,
            n_cols: d.n_cols,
            y: &d.response,
            groups: &d.groups,
            offset: None,
        }
    }

    fn n_rows(&self) -> usize {
        self.y.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Iterations {
    /// Laplace objective evaluations.
    pub outer: usize,
    /// Newton steps summed over all evaluations.
    pub inner: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmmFit {
    pub terms: Vec<String>,
    pub include_intercept: bool,
    pub beta: Vec<f64>,
    pub beta_cov: Vec<Vec<f64>>,
    pub sigma_z2: f64,
    /// Segment ids, ascending; `z[k]` belongs to `groups[k]`.
    pub groups: Vec<u16>,
    pub z: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: Iterations,
    /// Accepted (log σ², Laplace log-likelihood) pairs in evaluation order.
    pub outer_trace: Vec<(f64, f64)>,
    pub diagnostics: Vec<Diagnostic>,
}

impl GlmmFit {
    /// Random intercept of `group`; 0 for a segment not seen in training.
    pub fn z_for(&self, group: u16) -> f64 {
        self.groups
            .binary_search(&group)
            .map(|k| self.z[k])
            .unwrap_or(0.0)
    }

    /// Fixed part `xᵀβ` (intercept added when the model has one).
    pub fn fixed_predictor(&self, row: &[f64]) -> f64 {
        let (b0, b) = if self.include_intercept {
            (self.beta[0], &self.beta[1..])
        } else {
            (0.0, &self.beta[..])
        };
        b0 + row.iter().zip(b).map(|(x, b)| x * b).sum::<f64>()
    }

    pub fn linear_predictor(&self, row: &[f64], group: u16) -> f64 {
        self.fixed_predictor(row) + self.z_for(group)
    }

    pub fn predict(&self, design: &DesignMatrix) -> Vec<f64> {
        (0..design.n_rows)
            .map(|i| logistic(self.linear_predictor(design.row(i), design.groups[i])))
            .collect()
    }

    pub fn pvre(&self) -> f64 {
        crate::math::pvre(self.sigma_z2)
    }

    /// Variance of `xᵀβ` for a full row (intercept included).
    pub fn fixed_variance(&self, full_row: &[f64]) -> f64 {
        let mut v = 0.0;
        for (i, xi) in full_row.iter().enumerate() {
            for (j, xj) in full_row.iter().enumerate() {
                v += xi * self.beta_cov[i][j] * xj;
            }
        }
        v.max(0.0)
    }

    fn full_row(&self, row: &[f64]) -> Vec<f64> {
        let mut r = Vec::with_capacity(row.len() + 1);
        if self.include_intercept {
            r.push(1.0);
        }
        r.extend_from_slice(row);
        r
    }
}

/// Precomputed structure: consecutive rows with identical covariates share
/// one pattern, so cross-products cost O(patterns·p²) instead of O(n·p²).
struct Problem<'a> {
    data: GlmmData<'a>,
    p: usize,
    /// Full covariate rows (intercept first) per pattern.
    xp: Vec<f64>,
    /// Row range of each pattern.
    spans: Vec<(usize, usize)>,
    gidx: Vec<usize>,
    levels: Vec<u16>,
}

impl<'a> Problem<'a> {
    fn new(data: GlmmData<'a>, intercept: bool) -> Result<Self> {
        let n = data.n_rows();
        let k = data.n_cols;
        if data.x.len() != n * k || data.groups.len() != n {
            return Err(Error::InvalidInput(String::from("design dimensions disagree")));
        }
        if let Some(o) = data.offset {
            if o.len() != n {
                return Err(Error::InvalidInput(String::from("offset length disagrees")));
            }
        }
        if n == 0 {
            return Err(Error::InvalidInput(String::from("no rows")));
        }
        if data.y.iter().any(|y| *y != 0.0 && *y != 1.0) {
            return Err(Error::InvalidInput(String::from("response must be 0 or 1")));
        }
        if data.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(String::from("non-finite covariate")));
        }
        let levels: Vec<u16> = {
            let mut l = data.groups.to_vec();
            l.sort_unstable();
            l.dedup();
            l
        };
        let gidx = data
            .groups
            .iter()
            .map(|g| levels.binary_search(g).unwrap_or(0))
            .collect();
        let p = k + usize::from(intercept);
        let mut xp = Vec::new();
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for i in 0..n {
            let row = &data.x[i * k..(i + 1) * k];
            let same = match spans.last() {
                Some(&(s, _)) => &data.x[s * k..(s + 1) * k] == row,
                None => false,
            };
            if same {
                spans.last_mut().unwrap().1 = i + 1;
            } else {
                spans.push((i, i + 1));
                if intercept {
                    xp.push(1.0);
                }
                xp.extend_from_slice(row);
            }
        }
        Ok(Self {
            data,
            p,
            xp,
            spans,
            gidx,
            levels,
        })
    }

    fn g(&self) -> usize {
        self.levels.len()
    }

    fn xrow(&self, pat: usize) -> &[f64] {
        &self.xp[pat * self.p..(pat + 1) * self.p]
    }

    fn eta(&self, beta: &[f64], z: &[f64]) -> Vec<f64> {
        let mut eta = vec![0.0; self.data.n_rows()];
        for (pat, &(s, e)) in self.spans.iter().enumerate() {
            let xb: f64 = self.xrow(pat).iter().zip(beta).map(|(x, b)| x * b).sum();
            for i in s..e {
                let off = self.data.offset.map_or(0.0, |o| o[i]);
                let zi = if z.is_empty() { 0.0 } else { z[self.gidx[i]] };
                eta[i] = off + xb + zi;
            }
        }
        eta
    }

    fn loglik(&self, eta: &[f64]) -> f64 {
        eta.iter()
            .zip(self.data.y)
            .map(|(e, y)| bernoulli_loglik(*y, *e))
            .sum()
    }

    fn penalty(z: &[f64], sigma2: f64) -> f64 {
        if z.is_empty() {
            0.0
        } else {
            z.iter().map(|v| v * v).sum::<f64>() / (2.0 * sigma2)
        }
    }
}

struct Mode {
    beta: Vec<f64>,
    z: Vec<f64>,
    loglik: f64,
    penalized: f64,
    /// Σ μ(1-μ) per group at the mode.
    wg: Vec<f64>,
    /// Negative Hessian of the penalized log-likelihood at the mode.
    info: DMatrix<f64>,
    iterations: usize,
    converged: bool,
    max_abs_eta: f64,
}

/// Newton-Raphson with step halving on the penalized log-likelihood
/// `ℓ(β, z) − zᵀz/(2σ²)`. With `sigma2 == 0` the random effect is absent.
fn inner_solve(pr: &Problem, sigma2: f64, beta0: &[f64], z0: &[f64], opts: &GlmmOptions) -> Mode {
    let p = pr.p;
    let g = if sigma2 > 0.0 { pr.g() } else { 0 };
    let m = p + g;
    let mut beta = beta0.to_vec();
    let mut z = if g > 0 { z0.to_vec() } else { Vec::new() };
    let mut eta = pr.eta(&beta, &z);
    let mut pen = pr.loglik(&eta) - Problem::penalty(&z, sigma2);
    let mut iterations = 0;
    let mut converged = false;
    let mut info = DMatrix::zeros(m, m);
    let n = pr.data.n_rows();
    let mut w = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut cross = vec![0.0; g * p];

    loop {
        // Gradient and information at the current point.
        for i in 0..n {
            let mu = logistic(eta[i]);
            w[i] = mu * (1.0 - mu);
            r[i] = pr.data.y[i] - mu;
        }
        let mut grad = DVector::zeros(m);
        info.fill(0.0);
        // β-z cross products, group-major.
        cross.fill(0.0);
        for (pat, &(s, e)) in pr.spans.iter().enumerate() {
            let x = pr.xrow(pat);
            let (mut ws, mut rs) = (0.0, 0.0);
            for i in s..e {
                ws += w[i];
                rs += r[i];
                if g > 0 {
                    let k = pr.gidx[i];
                    grad[p + k] += r[i];
                    info[(p + k, p + k)] += w[i];
                    for (c, xa) in cross[k * p..(k + 1) * p].iter_mut().zip(x) {
                        *c += xa * w[i];
                    }
                }
            }
            for (a, xa) in x.iter().enumerate() {
                grad[a] += xa * rs;
                let wxa = ws * xa;
                for (b, xb) in x.iter().enumerate().take(a + 1) {
                    info[(a, b)] += wxa * xb;
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
            for k in 0..g {
                info[(a, p + k)] = cross[k * p + a];
                info[(p + k, a)] = cross[k * p + a];
            }
        }
        for k in 0..g {
            grad[p + k] -= z[k] / sigma2;
            info[(p + k, p + k)] += 1.0 / sigma2;
        }
        if converged || iterations >= opts.max_inner {
            break;
        }

        let step = match solve_spd(&info, &grad) {
            Some(s) => s,
            None => {
                let ridge = &info + DMatrix::<f64>::identity(m, m) * 1e-8;
                match solve_spd(&ridge, &grad) {
                    Some(s) => s,
                    None => break,
                }
            }
        };
        let mut t = 1.0;
        let (mut nb, mut nz, mut neta, mut npen);
        let mut halvings = 0;
        loop {
            nb = beta.iter().enumerate().map(|(a, b)| b + t * step[a]).collect::<Vec<_>>();
            nz = z.iter().enumerate().map(|(k, v)| v + t * step[p + k]).collect::<Vec<_>>();
            neta = pr.eta(&nb, &nz);
            npen = pr.loglik(&neta) - Problem::penalty(&nz, sigma2);
            if npen >= pen - 1e-12 * pen.abs() || halvings >= 30 {
                break;
            }
            t *= 0.5;
            halvings += 1;
        }
        iterations += 1;
        let max_step = step.iter().fold(0.0f64, |a, s| a.max(libm::fabs(t * s)));
        let rel = libm::fabs(npen - pen) / (libm::fabs(npen) + 0.1);
        beta = nb;
        z = nz;
        eta = neta;
        pen = npen;
        // Newton decrement: in ill-conditioned directions the step can stay
        // around 1e-5 long after the objective has stopped moving.
        let decrement = grad.dot(&step);
        if rel < opts.inner_tol && (max_step < 1e-6 || decrement < 1e-16 * (libm::fabs(npen) + 1.0)) {
            converged = true;
        }
    }

    let mut wg = vec![0.0; pr.g()];
    if g > 0 {
        for i in 0..n {
            wg[pr.gidx[i]] += w[i];
        }
    }
    let loglik = pr.loglik(&eta);
    Mode {
        max_abs_eta: eta.iter().fold(0.0f64, |a, e| a.max(libm::fabs(*e))),
        beta,
        z,
        loglik,
        penalized: pen,
        wg,
        info,
        iterations,
        converged,
    }
}

/// Laplace approximation of the marginal log-likelihood at the mode.
fn laplace(mode: &Mode, sigma2: f64) -> f64 {
    if sigma2 <= 0.0 {
        return mode.loglik;
    }
    mode.penalized - 0.5 * mode.wg.iter().map(|w| libm::log1p(sigma2 * w)).sum::<f64>()
}

struct Outer<'p, 'a> {
    pr: &'p Problem<'a>,
    opts: &'p GlmmOptions,
    iters: Iterations,
    trace: Vec<(f64, f64)>,
    /// (log σ², objective, mode) of the best evaluation; log σ² = -∞ means σ² = 0.
    best: Option<(f64, f64, Mode)>,
    warm: (Vec<f64>, Vec<f64>),
    any_unconverged: bool,
}

impl Outer<'_, '_> {
    fn eval(&mut self, theta: f64) -> f64 {
        self.run(libm::exp(theta), theta)
    }

    fn eval_zero(&mut self) -> f64 {
        self.run(0.0, f64::NEG_INFINITY)
    }

    fn run(&mut self, sigma2: f64, theta: f64) -> f64 {
        let mode = inner_solve(self.pr, sigma2, &self.warm.0, &self.warm.1, self.opts);
        self.iters.outer += 1;
        self.iters.inner += mode.iterations;
        self.any_unconverged |= !mode.converged;
        let value = laplace(&mode, sigma2);
        self.warm.0.clone_from(&mode.beta);
        if !mode.z.is_empty() {
            self.warm.1.clone_from(&mode.z);
        }
        if self.best.as_ref().is_none_or(|b| value > b.1) {
            self.trace.push((theta, value));
            self.best = Some((theta, value, mode));
        }
        value
    }
}

/// Brent's minimiser (golden section with parabolic steps) applied to the
/// negated Laplace objective on `bracket`, starting from an evaluated
/// point. Returns the final bracket width.
fn brent_max(st: &mut Outer, bracket: (f64, f64), start: (f64, f64)) -> f64 {
    const GOLD: f64 = 0.381_966_011_250_105;
    let (mut a, mut b) = bracket;
    let (mut x, mut fx) = (start.0, -start.1);
    let (mut w, mut fw, mut v, mut fv) = (x, fx, x, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let tol = st.opts.outer_tol;
    while st.iters.outer < st.opts.max_outer {
        let m = 0.5 * (a + b);
        let tol1 = 1e-10 * libm::fabs(x) + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if libm::fabs(x - m) <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if libm::fabs(e) > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let last = e;
            if libm::fabs(p) < libm::fabs(0.5 * q * last) && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = libm::copysign(tol1, m - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = GOLD * e;
        }
        let u = if libm::fabs(d) >= tol1 { x + d } else { x + libm::copysign(tol1, d) };
        let fu = -st.eval(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    b - a
}

/// Penalized log-likelihood `ℓ(β, z) − zᵀz/(2σ²)`. `z` follows the sorted
/// distinct group ids; `beta` starts with the intercept when requested.
pub fn penalized_loglik(data: &GlmmData, intercept: bool, beta: &[f64], z: &[f64], sigma2: f64) -> Result<f64> {
    let pr = Problem::new(*data, intercept)?;
    let eta = pr.eta(beta, z);
    Ok(pr.loglik(&eta) - Problem::penalty(z, sigma2))
}

/// Analytic gradient of [`penalized_loglik`] with respect to `(beta, z)`.
pub fn penalized_score(
    data: &GlmmData,
    intercept: bool,
    beta: &[f64],
    z: &[f64],
    sigma2: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let pr = Problem::new(*data, intercept)?;
    let eta = pr.eta(beta, z);
    let mut gb = vec![0.0; pr.p];
    let mut gz: Vec<f64> = z.iter().map(|v| -v / sigma2).collect();
    for (pat, &(s, e)) in pr.spans.iter().enumerate() {
        let x = pr.xrow(pat);
        for i in s..e {
            let r = data.y[i] - logistic(eta[i]);
            for (a, xa) in x.iter().enumerate() {
                gb[a] += xa * r;
            }
            if !gz.is_empty() {
                gz[pr.gidx[i]] += r;
            }
        }
    }
    Ok((gb, gz))
}

/// Fits the model on a design built by the features module.
pub fn fit_glmm(design: &DesignMatrix) -> Result<GlmmFit> {
    fit_glmm_with(&GlmmData::from_design(design), &design.labels(), &GlmmOptions::default())
}

/// Fits the model. The inner loop finds the joint mode of (β, z) for a
/// given σ²; the outer loop maximises the Laplace objective over log σ²
/// (coarse scan, then Brent's method inside the bracket).
pub fn fit_glmm_with(data: &GlmmData, labels: &[String], opts: &GlmmOptions) -> Result<GlmmFit> {
    let pr = Problem::new(*data, opts.include_intercept)?;
    let ybar = data.y.iter().sum::<f64>() / data.n_rows() as f64;
    if ybar == 0.0 || ybar == 1.0 {
        return Err(Error::DegenerateResponse);
    }
    let mut diagnostics = Vec::new();
    if pr.g() < 2 && opts.fixed_sigma2.is_none() {
        diagnostics.push(Diagnostic::new(
            "single_group",
            "only one group; the random-intercept variance is weakly identified",
        ));
    }

    let mut beta0 = vec![0.0; pr.p];
    if opts.include_intercept {
        let off = data.offset.map_or(0.0, |o| o.iter().sum::<f64>() / o.len() as f64);
        beta0[0] = crate::math::logit(ybar) - off;
    }
    let mut st = Outer {
        pr: &pr,
        opts,
        iters: Iterations::default(),
        trace: Vec::new(),
        best: None,
        warm: (beta0, vec![0.0; pr.g()]),
        any_unconverged: false,
    };

    if let Some(s2) = opts.fixed_sigma2 {
        if !(s2 >= 0.0 && s2.is_finite()) {
            return Err(Error::InvalidConfig(format!("fixed σ² {s2} must be non-negative")));
        }
        if s2 > 0.0 {
            st.eval(libm::log(s2));
        } else {
            st.eval_zero();
        }
    } else {
        let (lo, hi) = opts.log_sigma2_bounds;
        let grid: Vec<f64> = (0..6).map(|k| lo + (hi - lo) * k as f64 / 5.0).collect();
        // Scan from the top so warm starts move towards stronger shrinkage.
        let mut values = vec![0.0; 6];
        for k in (0..6).rev() {
            values[k] = st.eval(grid[k]);
        }
        let k = (0..6).fold(0, |b, i| if values[i] > values[b] { i } else { b });
        if let Some(b) = st.best.as_ref() {
            st.warm = (b.2.beta.clone(), b.2.z.clone());
        }
        let width = brent_max(
            &mut st,
            (grid[k.saturating_sub(1)], grid[(k + 1).min(5)]),
            (grid[k], values[k]),
        );
        if width > opts.outer_tol {
            diagnostics.push(Diagnostic::new(
                "outer_budget",
                format!("log σ² bracket width {width:.3e} after {} evaluations", st.iters.outer),
            ));
        }
        // Optimum on the lower bound: compare with the model without z.
        if st.best.as_ref().is_some_and(|b| b.0 <= lo + opts.outer_tol) {
            st.eval_zero();
        }
    }
    let Outer {
        iters,
        trace,
        best,
        any_unconverged,
        ..
    } = st;
    let (theta, value, mode) = best.expect("at least one evaluation");
    let sigma2 = if theta == f64::NEG_INFINITY { 0.0 } else { libm::exp(theta) };
    let p = pr.p;
    let (cov, ridged) = match inverse_spd(&mode.info, 1e-8) {
        Some(v) => v,
        None => {
            return Err(Error::InvalidInput(String::from(
                "information matrix is not positive definite",
            )))
        }
    };
    if ridged {
        diagnostics.push(Diagnostic::new(
            "ridge",
            "information matrix ill-conditioned; added 1e-8 ridge before inversion",
        ));
    }
    if mode.max_abs_eta > 30.0 {
        diagnostics.push(Diagnostic::new(
            "quasi_separation",
            format!("linear predictor reaches {:.1} in absolute value", mode.max_abs_eta),
        ));
    }
    let beta_cov = (0..p).map(|a| (0..p).map(|b| cov[(a, b)]).collect()).collect();
    let mut terms = Vec::with_capacity(p);
    if opts.include_intercept {
        terms.push(String::from(INTERCEPT_LABEL));
    }
    for k in 0..data.n_cols {
        terms.push(labels.get(k).cloned().unwrap_or_else(|| format!("x{}", k + 1)));
    }
    let z = if mode.z.is_empty() { vec![0.0; pr.g()] } else { mode.z.clone() };
    let converged = mode.converged && !any_unconverged;
    let fit = GlmmFit {
        terms,
        include_intercept: opts.include_intercept,
        beta: mode.beta.clone(),
        beta_cov,
        sigma_z2: sigma2,
        groups: pr.levels.clone(),
        z,
        loglik: value,
        converged,
        iterations: iters,
        outer_trace: trace,
        diagnostics,
    };
    if !mode.converged {
        return Err(Error::NotConverged(alloc::boxed::Box::new(fit)));
    }
    Ok(fit)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaldRow {
    pub term: String,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub se: f64,
    pub z_stat: f64,
    pub p_value: f64,
}

/// Wald table with confidence limits at the given normal quantiles.
pub fn wald_summary(fit: &GlmmFit, q_low: f64, q_high: f64) -> Vec<WaldRow> {
    let (zl, zh) = (normal_quantile(q_low), normal_quantile(q_high));
    fit.beta
        .iter()
        .enumerate()
        .map(|(k, &est)| {
            let se = libm::sqrt(fit.beta_cov[k][k].max(0.0));
            let z = if se > 0.0 { est / se } else { 0.0 };
            WaldRow {
                term: fit.terms[k].clone(),
                estimate: est,
                ci_low: est + zl * se,
                ci_high: est + zh * se,
                se,
                z_stat: z,
                p_value: if est == 0.0 { 1.0 } else { two_sided_p(z) },
            }
        })
        .collect()
}

/// Random intercepts sorted by segment id.
pub fn export_random_effects(fit: &GlmmFit) -> Vec<(u16, f64)> {
    fit.groups.iter().copied().zip(fit.z.iter().copied()).collect()
}

/// A fit together with the feature transform it was trained with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmmModel {
    pub transform: FeatureTransform,
    pub fit: GlmmFit,
}

impl GlmmModel {
    pub fn fit(obs: &[SegmentObservation], spec: &ModelSpec, opts: &GlmmOptions) -> Result<Self> {
        let transform = FeatureTransform::fit(obs, spec)?;
        let design = transform.transform(obs)?;
        let fit = fit_glmm_with(&GlmmData::from_design(&design), &design.labels(), opts)?;
        Ok(Self { transform, fit })
    }

    pub fn predict_latent(&self, obs: &[SegmentObservation]) -> Result<Vec<f64>> {
        let d = self.transform.transform(obs)?;
        Ok((0..d.n_rows)
            .map(|i| self.fit.linear_predictor(d.row(i), d.groups[i]))
            .collect())
    }

    pub fn predict(&self, obs: &[SegmentObservation]) -> Result<Vec<f64>> {
        Ok(self.predict_latent(obs)?.into_iter().map(logistic).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Focal {
    TimeSlot,
    Week,
}

/// Values held fixed while the focal variable moves. `None` fields default
/// to the midpoint of the training range and the training weather means.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub time_slot: Option<u8>,
    pub week: Option<u32>,
    pub weather: Option<Weather>,
    pub season: Option<Season>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: u32,
    pub p: f64,
    pub p_low: f64,
    pub p_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalCurve {
    pub day_type: DayType,
    pub points: Vec<CurvePoint>,
}

/// Population-level probability curves over `grid` for every day type the
/// design can represent, with pointwise 95% delta-method bands.
pub fn marginal_effects(
    model: &GlmmModel,
    focal: Focal,
    grid: &[u32],
    reference: &Reference,
) -> Result<(Vec<MarginalCurve>, Vec<Diagnostic>)> {
    let t = &model.transform;
    let mid = |r: crate::features::Range| libm::round((r.min + r.max) / 2.0);
    let slot = reference.time_slot.unwrap_or(mid(t.slot_range) as u8);
    let week = reference.week.unwrap_or(mid(t.week_range) as u32);
    let weather = reference.weather.unwrap_or_else(|| t.reference_weather());
    let season = reference.season.unwrap_or(Season::Summer);
    let zq = normal_quantile(0.975);
    let mut diags = Vec::new();
    let range = match focal {
        Focal::TimeSlot => t.slot_range,
        Focal::Week => t.week_range,
    };
    let outside = grid.iter().filter(|g| !range.contains(f64::from(**g))).count();
    if outside > 0 {
        diags.push(Diagnostic::new(
            "extrapolation",
            format!("{outside} grid values outside the training range"),
        ));
    }
    let mut curves = Vec::new();
    for day in DayType::ALL {
        if day != t.spec.baseline && !t.columns.contains(&crate::features::Term::Day { level: day }) {
            continue;
        }
        let mut points = Vec::with_capacity(grid.len());
        for &g in grid {
            let (s, w) = match focal {
                Focal::TimeSlot => (g as u8, week),
                Focal::Week => (slot, g),
            };
            let o = SegmentObservation {
                ride_id: 0,
                date: chrono::NaiveDate::default(),
                time_slot: s,
                segment: 0,
                y: 0,
                load_factor: 0.0,
                occupancy: 0,
                capacity: 0,
                week_number: w,
                day_type: day,
                season,
                weather,
            };
            let row = t.encode_row(&o)?;
            let eta = model.fit.fixed_predictor(&row);
            let se = libm::sqrt(model.fit.fixed_variance(&model.fit.full_row(&row)));
            points.push(CurvePoint {
                x: g,
                p: logistic(eta),
                p_low: logistic(eta - zq * se),
                p_high: logistic(eta + zq * se),
            });
        }
        curves.push(MarginalCurve { day_type: day, points });
    }
    Ok((curves, diags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain logistic regression by undamped Newton on the normal equations.
    fn newton_logistic(x: &[f64], k: usize, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        let p = k + 1;
        let mut b = vec![0.0; p];
        for _ in 0..100 {
            let mut h = DMatrix::<f64>::zeros(p, p);
            let mut g = DVector::<f64>::zeros(p);
            for i in 0..n {
                let mut row = vec![1.0];
                row.extend_from_slice(&x[i * k..(i + 1) * k]);
                let eta: f64 = row.iter().zip(&b).map(|(a, c)| a * c).sum();
                let mu = 1.0 / (1.0 + (-eta).exp());
                for a in 0..p {
                    g[a] += row[a] * (y[i] - mu);
                    for c in 0..p {
                        h[(a, c)] += row[a] * row[c] * mu * (1.0 - mu);
                    }
                }
            }
            let d = h.lu().solve(&g).unwrap();
            for a in 0..p {
                b[a] += d[a];
            }
            if d.amax() < 1e-13 {
                break;
            }
        }
        b
    }

    fn instance(seed: u64, n: usize, k: usize, groups: u16) -> (Vec<f64>, Vec<f64>, Vec<u16>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..groups).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<u16> = (0..n).map(|i| (i % groups as usize) as u16 + 1).collect();
        let y = (0..n)
            .map(|i| {
                let eta = 0.3 + x[i * k..(i + 1) * k].iter().sum::<f64>() + z[usize::from(g[i] - 1)];
                f64::from(u8::from(rng.random::<f64>() < logistic(eta)))
            })
            .collect();
        (x, y, g)
    }

    #[test]
    fn pinned_zero_variance_matches_plain_logistic() {
        let (x, y, _) = instance(1, 600, 3, 1);
        let groups = vec![1u16; 600];
        let data = GlmmData { x: &x, n_cols: 3, y: &y, groups: &groups, offset: None };
        let opts = GlmmOptions { fixed_sigma2: Some(0.0), ..Default::default() };
        let fit = fit_glmm_with(&data, &[], &opts).unwrap();
        let oracle = newton_logistic(&x, 3, &y);
        for (a, b) in fit.beta.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn score_matches_finite_differences() {
        let (x, y, g) = instance(2, 200, 2, 4);
        let data = GlmmData { x: &x, n_cols: 2, y: &y, groups: &g, offset: None };
        let beta = [0.1, -0.4, 0.7];
        let z = [0.2, -0.1, 0.05, 0.3];
        let (gb, gz) = penalized_score(&data, true, &beta, &z, 0.8).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut up = beta;
            let mut dn = beta;
            up[k] += h;
            dn[k] -= h;
            let fd = (penalized_loglik(&data, true, &up, &z, 0.8).unwrap()
                - penalized_loglik(&data, true, &dn, &z, 0.8).unwrap())
                / (2.0 * h);
            assert!((fd - gb[k]).abs() < 1e-6 * (1.0 + gb[k].abs()));
        }
        let mut up = z;
        up[2] += h;
        let mut dn = z;
        dn[2] -= h;
        let fd = (penalized_loglik(&data, true, &beta, &up, 0.8).unwrap()
            - penalized_loglik(&data, true, &beta, &dn, 0.8).unwrap())
            / (2.0 * h);
        assert!((fd - gz[2]).abs() < 1e-6 * (1.0 + gz[2].abs()));
    }

    #[test]
    fn balanced_single_group_has_zero_intercept_and_variance() {
        let y: Vec<f64> = (0..40).map(|i| f64::from(i % 2)).collect();
        let g = vec![3u16; 40];
        let data = GlmmData { x: &[], n_cols: 0, y: &y, groups: &g, offset: None };
        let fit = fit_glmm_with(&data, &[], &GlmmOptions::default()).unwrap();
        assert!(fit.beta[0].abs() < 1e-8);
        assert!(fit.sigma_z2 < 1e-3);
        assert_eq!(fit.z.len(), 1);
    }

    #[test]
    fn recovers_group_variance_and_orders_effects() {
        let (x, y, g) = instance(3, 4000, 2, 12);
        let data = GlmmData { x: &x, n_cols: 2, y: &y, groups: &g, offset: None };
        let fit = fit_glmm_with(&data, &[], &GlmmOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.sigma_z2 > 0.05 && fit.sigma_z2 < 1.5, "{}", fit.sigma_z2);
        assert!((fit.beta[1] - 1.0).abs() < 0.3);
        for w in fit.outer_trace.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        let cov = &fit.beta_cov;
        for a in 0..3 {
            assert!(cov[a][a] > 0.0);
            for b in 0..3 {
                assert!((cov[a][b] - cov[b][a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_response_is_rejected() {
        let y = vec![1.0; 10];
        let g = vec![1u16; 10];
        let data = GlmmData { x: &[], n_cols: 0, y: &y, groups: &g, offset: None };
        assert!(matches!(
            fit_glmm_with(&data, &[], &GlmmOptions::default()),
            Err(Error::DegenerateResponse)
        ));
    }

    #[test]
    fn wald_arithmetic() {
        let fit = GlmmFit {
            terms: vec!["a".into(), "b".into()],
            include_intercept: false,
            beta: vec![2.0, 0.0],
            beta_cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            sigma_z2: 0.0,
            groups: vec![1],
            z: vec![0.0],
            loglik: 0.0,
            converged: true,
            iterations: Iterations::default(),
            outer_trace: vec![],
            diagnostics: vec![],
        };
        let rows = wald_summary(&fit, 0.05, 0.95);
        assert_eq!(rows[0].z_stat, 2.0);
        assert!((rows[0].p_value - 0.0455).abs() < 1e-4);
        assert_eq!(rows[1].p_value, 1.0);
        assert!((rows[0].ci_high - rows[0].ci_low - 3.2897).abs() < 1e-3);
        assert_eq!(fit.z_for(9), 0.0);
        assert_eq!(logistic(fit.linear_predictor(&[0.0, 0.0], 9)), 0.5);
    }
}
