//! Full-covariance Gaussian mixtures fitted by EM, with BIC model selection.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, FldError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Ridge added to every covariance.
    pub reg: f64,
    /// Seeds the k-means++ initialization.
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            reg: 1e-6,
            seed: 0,
        }
    }
}

/// Mixture of full-covariance Gaussians. Cholesky factors are cached.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    chol: Vec<Cholesky<f64, Dyn>>,
}

/// Outcome of one EM run.
#[derive(Clone, Debug)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    /// Objective after every iteration; non-decreasing.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl GaussianMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return shape_err(format!(
                "{} weights, {} means, {} covariances",
                k,
                means.len(),
                covariances.len()
            ));
        }
        let dim = means[0].len();
        if means.iter().any(|m| m.len() != dim)
            || covariances.iter().any(|c| c.shape() != (dim, dim))
        {
            return shape_err("components disagree on dimension");
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return invalid(format!("weights must form a simplex, sum is {total}"));
        }
        let chol = covariances
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Cholesky::new(c.clone()).ok_or_else(|| {
                    FldError::Numerical(format!("covariance {i} is not positive definite"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            weights,
            means,
            covariances,
            chol,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Free parameters: `k−1 + k·D + k·D(D+1)/2`.
    pub fn param_count(&self) -> usize {
        param_count(self.k(), self.dim())
    }

    /// `ln N(x | μ_j, Σ_j)`.
    pub fn component_log_pdf(&self, j: usize, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.means[j];
        let l = self.chol[j].l_dirty();
        let z = l
            .solve_lower_triangular(&d)
            .expect("cholesky factor has a positive diagonal");
        let log_det: f64 = (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
        -0.5 * (self.dim() as f64 * LN_2PI + log_det + z.norm_squared())
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.k())
            .map(|j| self.weights[j].ln() + self.component_log_pdf(j, x))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn log_likelihood(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().map(|p| self.log_pdf(p)).sum()
    }

    /// Posterior component probabilities of `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let terms: Vec<f64> = (0..self.k())
            .map(|j| self.weights[j].ln() + self.component_log_pdf(j, x))
            .collect();
        let lse = log_sum_exp(&terms);
        terms.iter().map(|t| (t - lse).exp()).collect()
    }

    pub fn sample_component(&self, j: usize, rng: &mut impl Rng) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        (&self.means[j] + self.chol[j].l_dirty().lower_triangle() * z)
            .iter()
            .copied()
            .collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let j = pick_weighted(&self.weights, rng);
        self.sample_component(j, rng)
    }

    /// Mixture over the leading `dims` coordinates.
    pub fn marginal(&self, dims: usize) -> Result<Self> {
        if dims == 0 || dims > self.dim() {
            return invalid(format!("cannot take {dims} of {} dimensions", self.dim()));
        }
        Self::new(
            self.weights.clone(),
            self.means
                .iter()
                .map(|m| m.rows(0, dims).into_owned())
                .collect(),
            self.covariances
                .iter()
                .map(|c| c.view((0, 0), (dims, dims)).into_owned())
                .collect(),
        )
    }
}

pub(crate) fn param_count(k: usize, dim: usize) -> usize {
    k - 1 + k * dim + k * dim * (dim + 1) / 2
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Index drawn with probability proportional to `weights`.
pub(crate) fn pick_weighted(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights
        .iter()
        .rposition(|w| *w > 0.0)
        .unwrap_or(weights.len() - 1)
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map(|p| p.len()).unwrap_or(0);
    if dim == 0 {
        return Err(FldError::Empty("no points to fit".into()));
    }
    if points.iter().any(|p| p.len() != dim) {
        return shape_err("points disagree on dimension");
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(FldError::NonFinite("mixture input".into()));
    }
    Ok(dim)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by one hard assignment.
fn kmeanspp_labels(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.len();
    let mut centres = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < k {
        let next = if d2.iter().sum::<f64>() > 0.0 {
            pick_weighted(&d2, rng)
        } else {
            rng.gen_range(0..n)
        };
        centres.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centres[centres.len() - 1]));
        }
    }
    points
        .iter()
        .map(|p| {
            (0..k)
                .min_by(|&a, &b| sq_dist(p, &centres[a]).total_cmp(&sq_dist(p, &centres[b])))
                .expect("k > 0")
        })
        .collect()
}

/// Weighted mean and `S/N_k + reg·I` for one component.
fn weighted_moments(points: &[Vec<f64>], w: &[f64], reg: f64) -> (f64, DVector<f64>, DMatrix<f64>) {
    let dim = points[0].len();
    let nk: f64 = w.iter().sum();
    let mut mean = DVector::zeros(dim);
    for (p, wi) in points.iter().zip(w) {
        mean.axpy(*wi, &DVector::from_column_slice(p), 1.0);
    }
    mean /= nk;
    let mut cov = DMatrix::zeros(dim, dim);
    for (p, wi) in points.iter().zip(w) {
        let d = DVector::from_column_slice(p) - &mean;
        cov.ger(*wi, &d, &d, 1.0);
    }
    cov /= nk;
    cov = (&cov + cov.transpose()) * 0.5;
    for i in 0..dim {
        cov[(i, i)] += reg;
    }
    (nk, mean, cov)
}

/// Penalized component log density `ln N(x|μ,Σ) − reg·tr(Σ⁻¹)/2`. EM on
/// this objective has `Σ = S/N_k + reg·I` as its exact M-step, so the
/// monitored objective cannot decrease.
fn penalized_terms(m: &GaussianMixture, points: &[Vec<f64>], reg: f64) -> Vec<Vec<f64>> {
    let pen: Vec<f64> = m
        .chol
        .iter()
        .map(|c| 0.5 * reg * c.inverse().trace())
        .collect();
    points
        .iter()
        .map(|p| {
            (0..m.k())
                .map(|j| m.weights[j].ln() + m.component_log_pdf(j, p) - pen[j])
                .collect()
        })
        .collect()
}

fn objective(terms: &[Vec<f64>]) -> f64 {
    terms.iter().map(|t| log_sum_exp(t)).sum()
}

/// Fits a `k`-component mixture by EM from a k-means++ start.
pub fn gmm_fit_em(points: &[Vec<f64>], k: usize, cfg: &EmConfig) -> Result<EmFit> {
    let dim = check_points(points)?;
    if k == 0 {
        return invalid("a mixture needs at least one component");
    }
    if k > points.len() {
        return invalid(format!("{k} components for {} points", points.len()));
    }
    if !(cfg.reg > 0.0) {
        return invalid(format!(
            "covariance regularization must be positive, got {}",
            cfg.reg
        ));
    }
    let n = points.len();
    let mut warnings = Vec::new();
    if k > 1 && points.iter().all(|p| p == &points[0]) {
        let msg =
            format!("all {n} points are identical; {k} components collapse onto one location");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels = kmeanspp_labels(points, k, &mut rng);
    let all = vec![1.0; n];
    let (_, _, global_cov) = weighted_moments(points, &all, cfg.reg);
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for j in 0..k {
        let w: Vec<f64> = labels.iter().map(|&l| (l == j) as u8 as f64).collect();
        let count: f64 = w.iter().sum();
        if count == 0.0 {
            let (_, m, _) = weighted_moments(points, &all, cfg.reg);
            weights.push(1e-3);
            means.push(m);
            covs.push(global_cov.clone());
            continue;
        }
        let (nk, m, c) = weighted_moments(points, &w, cfg.reg);
        weights.push(nk);
        means.push(m);
        covs.push(if count < 2.0 { global_cov.clone() } else { c });
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mut mix = GaussianMixture::new(weights, means, covs)?;

    let mut history = Vec::new();
    let mut terms = penalized_terms(&mix, points, cfg.reg);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        // E-step
        let resp: Vec<Vec<f64>> = terms
            .iter()
            .map(|t| {
                let lse = log_sum_exp(t);
                t.iter().map(|v| (v - lse).exp()).collect()
            })
            .collect();
        // M-step
        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for j in 0..k {
            let w: Vec<f64> = resp.iter().map(|r| r[j]).collect();
            if w.iter().sum::<f64>() <= f64::MIN_POSITIVE {
                // starved component: keep it where it was with a tiny weight
                weights.push(f64::MIN_POSITIVE);
                means.push(mix.means[j].clone());
                covs.push(mix.covariances[j].clone());
                continue;
            }
            let (nk, m, c) = weighted_moments(points, &w, cfg.reg);
            weights.push(nk / n as f64);
            means.push(m);
            covs.push(c);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        mix = GaussianMixture::new(weights, means, covs)?;
        iterations += 1;
        terms = penalized_terms(&mix, points, cfg.reg);
        let ll = objective(&terms);
        if !ll.is_finite() {
            return Err(FldError::NonFinite("mixture log-likelihood".into()));
        }
        let prev = history.last().copied();
        history.push(ll);
        if let Some(p) = prev {
            if ll - p <= cfg.tol * ll.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }
    debug_assert!(dim > 0);
    Ok(EmFit {
        mixture: mix,
        log_likelihood: history,
        iterations,
        converged,
        warnings,
    })
}

/// Model chosen by BIC over a range of component counts.
#[derive(Clone, Debug)]
pub struct BicSelection {
    pub fit: EmFit,
    /// `(k, BIC)` for every candidate that could be fitted.
    pub scores: Vec<(usize, f64)>,
}

/// `BIC = −2·ln L + p·ln n` with the unpenalized likelihood; ties go to the
/// smaller `k`.
pub fn bic(mix: &GaussianMixture, points: &[Vec<f64>]) -> f64 {
    -2.0 * mix.log_likelihood(points) + mix.param_count() as f64 * (points.len() as f64).ln()
}

pub fn gmm_bic_select(
    points: &[Vec<f64>],
    ks: std::ops::RangeInclusive<usize>,
    cfg: &EmConfig,
) -> Result<BicSelection> {
    let (lo, hi) = (*ks.start(), *ks.end());
    if lo == 0 || lo > hi {
        return invalid(format!("bad component range {lo}..={hi}"));
    }
    if points.len() < lo {
        return invalid(format!(
            "{} points cannot support {lo} components",
            points.len()
        ));
    }
    let mut best: Option<(f64, EmFit)> = None;
    let mut scores = Vec::new();
    for k in lo..=hi.min(points.len()) {
        let fit = gmm_fit_em(points, k, cfg)?;
        let score = bic(&fit.mixture, points);
        scores.push((k, score));
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, fit));
        }
    }
    let (_, fit) = best.expect("at least one candidate");
    Ok(BicSelection { fit, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn blob(rng: &mut ChaCha8Rng, centre: &[f64], sd: f64, n: usize) -> Vec<Vec<f64>> {
        let nd = Normal::new(0.0, sd).unwrap();
        (0..n)
            .map(|_| centre.iter().map(|c| c + nd.sample(rng)).collect())
            .collect()
    }

    #[test]
    fn single_component_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = blob(&mut rng, &[1.0, -2.0, 0.5], 1.3, 200);
        let fit = gmm_fit_em(&pts, 1, &EmConfig::default()).unwrap();
        let m = &fit.mixture;
        let n = pts.len() as f64;
        for a in 0..3 {
            let mean_a: f64 = pts.iter().map(|p| p[a]).sum::<f64>() / n;
            assert!((m.means[0][a] - mean_a).abs() < 1e-9);
            for b in 0..3 {
                let mean_b: f64 = pts.iter().map(|p| p[b]).sum::<f64>() / n;
                let cov: f64 = pts
                    .iter()
                    .map(|p| (p[a] - mean_a) * (p[b] - mean_b))
                    .sum::<f64>()
                    / n;
                let expect = cov + if a == b { 1e-6 } else { 0.0 };
                assert!((m.covariances[0][(a, b)] - expect).abs() < 1e-9);
            }
        }
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = blob(&mut rng, &[-10.0, -10.0], 1.0, 150);
        pts.extend(blob(&mut rng, &[10.0, 10.0], 1.0, 150));
        let fit = gmm_fit_em(&pts, 2, &EmConfig::default()).unwrap();
        let m = &fit.mixture;
        let own = |x: &[f64]| {
            let j = if x[0] < 0.0 { 0 } else { 1 };
            let near = (0..2)
                .min_by(|&a, &b| {
                    sq_dist(m.means[a].as_slice(), &[-10.0, -10.0][..])
                        .total_cmp(&sq_dist(m.means[b].as_slice(), &[-10.0, -10.0][..]))
                })
                .unwrap();
            if j == 0 {
                near
            } else {
                1 - near
            }
        };
        for p in &pts {
            assert!(m.responsibilities(p)[own(p)] > 0.99);
        }
    }

    #[test]
    fn objective_never_decreases() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
            let pts: Vec<Vec<f64>> = (0..120)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            for k in 1..=4 {
                let fit = gmm_fit_em(
                    &pts,
                    k,
                    &EmConfig {
                        seed,
                        ..EmConfig::default()
                    },
                )
                .unwrap();
                for w in fit.log_likelihood.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9, "k={k}: {} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn degenerate_points_stay_spd() {
        let pts = vec![vec![0.3, 0.3]; 20];
        let fit = gmm_fit_em(&pts, 3, &EmConfig::default()).unwrap();
        assert_eq!(fit.warnings.len(), 1);
        for c in &fit.mixture.covariances {
            assert!(c.clone().cholesky().is_some());
        }
        assert!((fit.mixture.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(gmm_fit_em(&pts, 21, &EmConfig::default()).is_err());
    }

    #[test]
    fn bic_prefers_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = blob(&mut rng, &[-5.0, 0.0], 1.0, 100);
        pts.extend(blob(&mut rng, &[5.0, 0.0], 1.0, 100));
        let sel = gmm_bic_select(&pts, 2..=4, &EmConfig::default()).unwrap();
        assert_eq!(sel.fit.mixture.k(), 2);
        assert_eq!(sel.scores.len(), 3);
    }

    #[test]
    fn bic_penalty_wins_with_few_points() {
        // 3-d data: k=2 has 19 parameters, k=3 has 29; 12 points
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = blob(&mut rng, &[0.0, 0.0, 0.0], 1.0, 12);
        let sel = gmm_bic_select(&pts, 2..=3, &EmConfig::default()).unwrap();
        let (s2, s3) = (sel.scores[0].1, sel.scores[1].1);
        let pen = |k| param_count(k, 3) as f64 * 12f64.ln();
        assert!((pen(3) - pen(2) - 10.0 * 12f64.ln()).abs() < 1e-12);
        if s2 <= s3 {
            assert_eq!(sel.fit.mixture.k(), 2);
        }
        assert!(gmm_bic_select(&pts[..1], 2..=3, &EmConfig::default()).is_err());
    }

    #[test]
    fn bic_tie_goes_to_smaller_k() {
        // identical points: every k collapses onto the same density
        let pts = vec![vec![1.0, 2.0]; 30];
        let sel = gmm_bic_select(&pts, 2..=4, &EmConfig::default()).unwrap();
        let min = sel.scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let first = sel.scores.iter().find(|s| s.1 == min).unwrap().0;
        assert_eq!(sel.fit.mixture.k(), first);
    }

    #[test]
    fn sampling_matches_moments() {
        let mix = GaussianMixture::new(
            vec![0.25, 0.75],
            vec![
                DVector::from_vec(vec![0.0, 0.0]),
                DVector::from_vec(vec![4.0, 1.0]),
            ],
            vec![
                DMatrix::identity(2, 2),
                DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40_000;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| mix.sample(&mut rng)).collect();
        let mx = xs.iter().map(|x| x[0]).sum::<f64>() / n as f64;
        assert!((mx - 3.0).abs() < 0.05, "{mx}");
        let marg = mix.marginal(1).unwrap();
        assert_eq!(marg.dim(), 1);
        assert!((marg.covariances[1][(0, 0)] - 2.0).abs() < 1e-12);
        // log_pdf integrates the two components
        let x = [0.0, 0.0];
        let direct =
            0.25 * mix.component_log_pdf(0, &x).exp() + 0.75 * mix.component_log_pdf(1, &x).exp();
        assert!((mix.log_pdf(&x) - direct.ln()).abs() < 1e-12);
        assert!((mix.component_log_pdf(0, &x) - (-LN_2PI)).abs() < 1e-12);
    }
}
