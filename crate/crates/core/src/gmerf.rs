//! Generalized mixed-effects random forest: a forest for the fixed part of
//! the logit, alternating with random-intercept updates.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::aggregate::SegmentObservation;
use crate::error::{Diagnostic, Error, Result};
use crate::features::{DesignMatrix, FeatureTransform};
use crate::forest::{fit_forest, ForestModel, ForestParams};
use crate::glmm::{fit_glmm_with, GlmmData, GlmmModel, GlmmOptions};
use crate::math::logistic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmerfParams {
    pub forest: ForestParams,
    /// Stop when the log-likelihood changes by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Stop after this many iterations without a new best.
    pub patience: usize,
}

impl Default for GmerfParams {
    fn default() -> Self {
        Self {
            forest: ForestParams::default(),
            tol: 1e-4,
            max_iter: 50,
            patience: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmerfFit {
    pub forest: ForestModel,
    pub sigma_z2: f64,
    /// Segment ids, ascending; `z[k]` belongs to `groups[k]`.
    pub groups: Vec<u16>,
    pub z: Vec<f64>,
    /// Laplace log-likelihood after each iteration.
    pub trace: Vec<f64>,
    /// Index into `trace` of the returned iterate.
    pub best_iteration: usize,
    pub converged: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl GmerfFit {
    pub fn z_for(&self, group: u16) -> f64 {
        self.groups
            .binary_search(&group)
            .map(|k| self.z[k])
            .unwrap_or(0.0)
    }

    /// Running maxima of the trace: the log-likelihood of each accepted
    /// iterate.
    pub fn accepted_trace(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &v in &self.trace {
            if out.last().is_none_or(|l| v > *l) {
                out.push(v);
            }
        }
        out
    }

    pub fn predict_latent(&self, x: &[f64], n_cols: usize, groups: &[u16]) -> Vec<f64> {
        self.forest
            .predict(x, n_cols)
            .into_iter()
            .zip(groups)
            .map(|(f, g)| f + self.z_for(*g))
            .collect()
    }

    pub fn predict(&self, design: &DesignMatrix) -> Vec<f64> {
        self.predict_latent(&design.x, design.n_cols, &design.groups)
            .into_iter()
            .map(logistic)
            .collect()
    }

    pub fn pvre(&self) -> f64 {
        crate::math::pvre(self.sigma_z2)
    }
}

const MU_CLAMP: f64 = 1e-6;

/// Fits the model on forest inputs `x` (row-major, `n_cols` wide).
///
/// `init_eta` and `init_z` come from a mixed model fitted on
/// the same rows and groups. Each iteration forms working responses
/// `w = η + (y − μ)/(μ(1 − μ))` with weights `μ(1 − μ)`, fits the forest to
/// `w − z`, then refits an intercept, the random intercepts and σ² with the
/// forest output as an offset. The intercept is folded into the leaves.
pub fn fit_gmerf(
    x: &[f64],
    n_cols: usize,
    y: &[f64],
    groups: &[u16],
    init_eta: &[f64],
    init_z: impl Fn(u16) -> f64,
    params: &GmerfParams,
) -> Result<GmerfFit> {
    let n = y.len();
    if init_eta.len() != n || groups.len() != n || x.len() != n * n_cols {
        return Err(Error::InvalidInput(String::from("GMERF inputs disagree in length")));
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    if n == 0 || ybar == 0.0 || ybar == 1.0 {
        return Err(Error::DegenerateResponse);
    }
    let mut eta = init_eta.to_vec();
    let mut zrow: Vec<f64> = groups.iter().map(|g| init_z(*g)).collect();
    let mut trace = Vec::new();
    let mut diagnostics = Vec::new();
    let mut best: Option<(f64, usize, ForestModel, Vec<u16>, Vec<f64>, f64)> = None;
    let mut since_best = 0;
    let mut converged = false;
    let glmm_opts = GlmmOptions::default();

    for iter in 0..params.max_iter {
        let mut target = Vec::with_capacity(n);
        let mut weight = Vec::with_capacity(n);
        for i in 0..n {
            let mu = logistic(eta[i]).clamp(MU_CLAMP, 1.0 - MU_CLAMP);
            let w = mu * (1.0 - mu);
            target.push(eta[i] + (y[i] - mu) / w - zrow[i]);
            weight.push(w);
        }
        let mut fp = params.forest.clone();
        fp.seed = params.forest.seed.wrapping_add(iter as u64);
        let mut forest = fit_forest(x, n_cols, &target, &weight, &fp)?;
        let f = forest.predict(x, n_cols);

        let data = GlmmData {
            x: &[],
            n_cols: 0,
            y,
            groups,
            offset: Some(&f),
        };
        let re = match fit_glmm_with(&data, &[], &glmm_opts) {
            Ok(fit) => fit,
            Err(Error::NotConverged(fit)) => {
                diagnostics.push(Diagnostic::new(
                    "random_part_not_converged",
                    format!("iteration {iter}: random-intercept update did not converge"),
                ));
                *fit
            }
            Err(e) => return Err(e),
        };
        forest.shift(re.beta[0]);
        for i in 0..n {
            zrow[i] = re.z_for(groups[i]);
            eta[i] = f[i] + re.beta[0] + zrow[i];
        }
        let ll = re.loglik;
        let prev = trace.last().copied();
        trace.push(ll);

        if best.as_ref().is_none_or(|b| ll > b.0) {
            best = Some((ll, iter, forest, re.groups.clone(), re.z.clone(), re.sigma_z2));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if prev.is_some_and(|p| libm::fabs(ll - p) < params.tol) {
            converged = true;
            break;
        }
        if since_best >= params.patience {
            diagnostics.push(Diagnostic::new(
                "no_improvement",
                format!("no improvement in {} iterations; returning best iterate", params.patience),
            ));
            break;
        }
    }
    let (_, best_iteration, forest, groups, z, sigma_z2) = best.expect("max_iter >= 1");
    if !converged && diagnostics.iter().all(|d| d.code != "no_improvement") {
        diagnostics.push(Diagnostic::new(
            "max_iter",
            format!("stopped after {} iterations", params.max_iter),
        ));
    }
    Ok(GmerfFit {
        forest,
        sigma_z2,
        groups,
        z,
        trace,
        best_iteration,
        converged,
        diagnostics,
    })
}

/// A fit together with the feature transform it was trained with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmerfModel {
    pub transform: FeatureTransform,
    pub fit: GmerfFit,
}

impl GmerfModel {
    /// Fits on `obs`, initialised from a GLMM trained on the same rows.
    pub fn fit(obs: &[SegmentObservation], init: &GlmmModel, params: &GmerfParams) -> Result<Self> {
        let transform = init.transform.clone();
        let design = transform.forest_design(obs)?;
        let eta = init.predict_latent(obs)?;
        let fit = fit_gmerf(
            &design.x,
            design.n_cols,
            &design.response,
            &design.groups,
            &eta,
            |g| init.fit.z_for(g),
            params,
        )?;
        Ok(Self { transform, fit })
    }

    pub fn predict_latent(&self, obs: &[SegmentObservation]) -> Result<Vec<f64>> {
        let d = self.transform.forest_design(obs)?;
        Ok(self.fit.predict_latent(&d.x, d.n_cols, &d.groups))
    }

    pub fn predict(&self, obs: &[SegmentObservation]) -> Result<Vec<f64>> {
        Ok(self.predict_latent(obs)?.into_iter().map(logistic).collect())
    }
}

pub fn pvre_gmerf(fit: &GmerfFit) -> f64 {
    fit.pvre()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<u16>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = [-1.0, -0.3, 0.2, 1.1];
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut g = Vec::new();
        for i in 0..n {
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..1.0);
            let grp = (i % 4) as u16;
            let eta = if (a > 0.5) != (b > 0.5) { 1.5 } else { -1.5 } + z[grp as usize];
            x.extend_from_slice(&[a, b]);
            y.push(f64::from(u8::from(rng.random::<f64>() < logistic(eta))));
            g.push(grp + 1);
        }
        (x, y, g)
    }

    #[test]
    fn root_only_forest_reduces_to_intercept_model() {
        let (x, y, g) = data(1, 1200);
        let intercept_only = fit_glmm_with(
            &GlmmData { x: &[], n_cols: 0, y: &y, groups: &g, offset: None },
            &[],
            &GlmmOptions::default(),
        )
        .unwrap();
        let eta: Vec<f64> = g.iter().map(|k| intercept_only.beta[0] + intercept_only.z_for(*k)).collect();
        let params = GmerfParams {
            forest: ForestParams {
                n_trees: 1,
                min_leaf: usize::MAX / 4,
                bootstrap: false,
                ..Default::default()
            },
            ..Default::default()
        };
        let fit = fit_gmerf(&x, 2, &y, &g, &eta, |k| intercept_only.z_for(k), &params)
            .unwrap();
        assert!((fit.sigma_z2 - intercept_only.sigma_z2).abs() < 1e-3);
        assert_eq!(fit.forest.trees[0].n_leaves(), 1);
    }

    #[test]
    fn learns_an_interaction_and_keeps_accepted_trace_monotone() {
        let (x, y, g) = data(2, 3000);
        let eta = vec![0.0; y.len()];
        let params = GmerfParams {
            forest: ForestParams { n_trees: 40, min_leaf: 10, ..Default::default() },
            ..Default::default()
        };
        let fit = fit_gmerf(&x, 2, &y, &g, &eta, |_| 0.0, &params).unwrap();
        let acc = fit.accepted_trace();
        assert!(acc.windows(2).all(|w| w[1] >= w[0] - 1e-6));
        let hi = fit.forest.predict_row(&[0.8, 0.2]);
        let lo = fit.forest.predict_row(&[0.8, 0.8]);
        assert!(hi - lo > 1.5, "{hi} {lo}");
        assert!(fit.z_for(4) > fit.z_for(1));
        assert_eq!(fit.z_for(99), 0.0);
    }

    #[test]
    fn prediction_is_additive_in_z() {
        let (x, y, g) = data(3, 800);
        let params = GmerfParams {
            forest: ForestParams { n_trees: 10, ..Default::default() },
            max_iter: 3,
            ..Default::default()
        };
        let fit = fit_gmerf(&x, 2, &y, &g, &vec![0.0; y.len()], |_| 0.0, &params).unwrap();
        let with = fit.predict_latent(&x[..2], 2, &[3]);
        let without = fit.predict_latent(&x[..2], 2, &[77]);
        assert!((with[0] - without[0] - fit.z_for(3)).abs() < 1e-12);
    }
}
