//! Differentiable Monte-Carlo approximation of Bayesian regret as a function
//! of the exploration schedule.
//!
//! Given the belief `(beta_t, Sigma_t)` at the start of period `t` and a
//! candidate schedule `eps_t..eps_T`, future covariances follow the
//! deterministic path
//!
//! ```text
//! inv(Sigma_bar_s) = inv(Sigma_t) + sum_{l=t}^{s-1} eps_l n_l I_pop
//! ```
//!
//! and future means are drawn from their marginals
//! `beta_s = beta_t + (Sigma_t - Sigma_bar_s + tau)^{1/2} Z_s`. The objective
//! is the negated expected reward of the uniform-exploration policy with
//! greedy exploitation, summed over the remaining periods:
//!
//! ```text
//! J = -sum_s n_s (1/m) sum_i [ eps_s x_i^T beta_bar + (1 - eps_s) max_a x_i^T beta_{s,a} ]
//! ```
//!
//! In diagonal mode the gradient with respect to the schedule is computed in
//! closed form on the same draws as the value.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::posterior::{CovarianceMode, DesignMatrix, GaussianPosterior};
use crate::rng::{std_normal, stream, StreamRng};
use crate::scalar::{dot, Real};

/// Default `tau` added under the square root.
pub const DEFAULT_SQRT_FLOOR: f64 = 1e-12;

/// Paths at or above this count are evaluated on the rayon pool.
const PARALLEL_PATHS: usize = 32;

/// Feasible box `[lower, upper]` applied to every rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBox<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Real> RateBox<T> {
    pub fn new(lower: T, upper: T) -> Result<Self> {
        if !(T::zero() <= lower && lower <= upper && upper <= T::one()) {
            return Err(invalid(format!(
                "rate box [{lower}, {upper}] must satisfy 0 <= lower <= upper <= 1"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit() -> Self {
        Self {
            lower: T::zero(),
            upper: T::one(),
        }
    }

    pub fn contains(&self, v: T) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn clamp(&self, v: T) -> T {
        v.max(self.lower).min(self.upper)
    }
}

/// Per-period exploration rates for periods `start_period..start_period + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationSchedule<T> {
    pub rates: Vec<T>,
    pub start_period: usize,
}

impl<T: Real> ExplorationSchedule<T> {
    pub fn new(rates: Vec<T>, start_period: usize, bounds: &RateBox<T>) -> Result<Self> {
        if let Some((i, r)) = rates
            .iter()
            .enumerate()
            .find(|(_, r)| !bounds.contains(**r))
        {
            return Err(invalid(format!(
                "rate {r} at offset {i} outside [{}, {}]",
                bounds.lower, bounds.upper
            )));
        }
        Ok(Self {
            rates,
            start_period,
        })
    }

    pub fn horizon(&self) -> usize {
        self.rates.len()
    }
}

/// Inputs to the objective besides the schedule and the current belief.
#[derive(Debug, Clone)]
pub struct ObjectiveConfig<T> {
    /// User embeddings the expectation over `X` is taken against.
    pub user_sample: Vec<Vec<T>>,
    /// Forecast batch size for each remaining period.
    pub batch_sizes: Vec<T>,
    /// Population design matrix.
    pub design: DesignMatrix<T>,
    /// Monte-Carlo paths per evaluation.
    pub paths: usize,
    pub sqrt_floor: T,
    pub seed: u64,
}

impl<T: Real> ObjectiveConfig<T> {
    pub fn validate(
        &self,
        post: &GaussianPosterior<T>,
        sched: &ExplorationSchedule<T>,
    ) -> Result<()> {
        if self.user_sample.is_empty() {
            return Err(invalid("objective needs at least one user sample"));
        }
        if let Some(u) = self.user_sample.iter().find(|u| u.len() != post.dim()) {
            return Err(Error::DimensionMismatch {
                expected: post.dim(),
                got: u.len(),
            });
        }
        if self
            .batch_sizes
            .iter()
            .any(|n| !(*n >= T::zero()) || !n.is_finite())
        {
            return Err(invalid("batch sizes must be finite and >= 0"));
        }
        if self.batch_sizes.len() != sched.horizon() {
            return Err(invalid(format!(
                "schedule covers {} periods but {} batch sizes were given",
                sched.horizon(),
                self.batch_sizes.len()
            )));
        }
        if self.design.dim != post.dim() {
            return Err(Error::DimensionMismatch {
                expected: post.dim(),
                got: self.design.dim,
            });
        }
        if self.paths == 0 {
            return Err(invalid("need at least one Monte-Carlo path"));
        }
        if !(self.sqrt_floor > T::zero()) {
            return Err(invalid("sqrt floor must be > 0"));
        }
        Ok(())
    }

    pub fn total_batch(&self) -> T {
        self.batch_sizes.iter().copied().sum()
    }
}

/// Standard-normal draws `Z[path][s][a][j]`.
#[derive(Debug, Clone)]
pub struct NoiseDraws<T> {
    paths: usize,
    horizon: usize,
    items: usize,
    dim: usize,
    z: Vec<T>,
}

impl<T: Real> NoiseDraws<T> {
    /// Each path is drawn from its own sub-stream of `seed`, so the draws do
    /// not depend on how paths are scheduled.
    pub fn sample(seed: u64, paths: usize, horizon: usize, items: usize, dim: usize) -> Self {
        let per_path = horizon * items * dim;
        let mut z = Vec::with_capacity(paths * per_path);
        for p in 0..paths {
            let mut rng = stream(seed, &[p as u64]);
            z.extend((0..per_path).map(|_| std_normal::<T, _>(&mut rng)));
        }
        Self {
            paths,
            horizon,
            items,
            dim,
            z,
        }
    }

    pub fn from_values(
        paths: usize,
        horizon: usize,
        items: usize,
        dim: usize,
        z: Vec<T>,
    ) -> Result<Self> {
        if z.len() != paths * horizon * items * dim {
            return Err(Error::DimensionMismatch {
                expected: paths * horizon * items * dim,
                got: z.len(),
            });
        }
        Ok(Self {
            paths,
            horizon,
            items,
            dim,
            z,
        })
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn path(&self, p: usize) -> &[T] {
        let len = self.horizon * self.items * self.dim;
        &self.z[p * len..(p + 1) * len]
    }

    /// `Z` for path `p`, horizon offset `s`, item `a`.
    pub fn at(&self, p: usize, s: usize, a: usize) -> &[T] {
        let start = ((p * self.horizon + s) * self.items + a) * self.dim;
        &self.z[start..start + self.dim]
    }

    fn check(&self, horizon: usize, items: usize, dim: usize) -> Result<()> {
        if self.horizon != horizon || self.items != items || self.dim != dim {
            return Err(invalid(format!(
                "noise shaped ({}, {}, {}) but evaluation needs ({horizon}, {items}, {dim})",
                self.horizon, self.items, self.dim
            )));
        }
        Ok(())
    }
}

/// Approximate covariances `Sigma_bar_{s,a}` along the remaining horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePath<T> {
    mode: CovarianceMode,
    horizon: usize,
    items: usize,
    dim: usize,
    /// `[s][a]` blocks of `d` variances (diagonal) or `d*d` covariances (full).
    blocks: Vec<T>,
    /// Covariance at the conditioning period, same layout per item.
    start: Vec<T>,
}

impl<T: Real> CovariancePath<T> {
    fn block_len(&self) -> usize {
        match self.mode {
            CovarianceMode::Diagonal => self.dim,
            CovarianceMode::Full => self.dim * self.dim,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn mode(&self) -> CovarianceMode {
        self.mode
    }

    /// Block for horizon offset `s` and item `a`.
    pub fn block(&self, s: usize, a: usize) -> &[T] {
        let b = self.block_len();
        let start = (s * self.items + a) * b;
        &self.blocks[start..start + b]
    }

    pub fn start_block(&self, a: usize) -> &[T] {
        let b = self.block_len();
        &self.start[a * b..(a + 1) * b]
    }

    /// Marginal variances for offset `s`, item `a`.
    pub fn variances(&self, s: usize, a: usize) -> Vec<T> {
        let blk = self.block(s, a);
        match self.mode {
            CovarianceMode::Diagonal => blk.to_vec(),
            CovarianceMode::Full => (0..self.dim).map(|j| blk[j * self.dim + j]).collect(),
        }
    }
}

/// Covariance path under the population design. Diagonal posteriors use
/// the design's diagonal; full posteriors use the full design.
pub fn covariance_path<T: Real>(
    post: &GaussianPosterior<T>,
    sched: &ExplorationSchedule<T>,
    cfg: &ObjectiveConfig<T>,
) -> Result<CovariancePath<T>> {
    cfg.validate(post, sched)?;
    let (k, d, h) = (post.items(), post.dim(), sched.horizon());
    let mode = post.mode();
    let design = match mode {
        CovarianceMode::Diagonal => cfg.design.diagonal(),
        CovarianceMode::Full => cfg.design.to_full(),
    };

    // Cumulative information added before each offset: c_s = sum_{l<s} eps_l n_l.
    let mut cumulative = Vec::with_capacity(h);
    let mut acc = T::zero();
    for s in 0..h {
        cumulative.push(acc);
        acc += sched.rates[s] * cfg.batch_sizes[s];
    }

    let mut start = Vec::new();
    let mut blocks = vec![T::zero(); h * k * design.len()];
    for a in 0..k {
        let prec = post.precision(a);
        match mode {
            CovarianceMode::Diagonal => start.extend(prec.iter().map(|p| p.recip())),
            CovarianceMode::Full => start.extend(post.covariance(a)?),
        }
        for (s, c) in cumulative.iter().enumerate() {
            let off = (s * k + a) * design.len();
            let out = &mut blocks[off..off + design.len()];
            match mode {
                CovarianceMode::Diagonal => {
                    for j in 0..d {
                        out[j] = (prec[j] + *c * design[j]).recip();
                    }
                }
                CovarianceMode::Full => {
                    let p: Vec<T> = prec
                        .iter()
                        .zip(&design)
                        .map(|(p, i)| *p + *c * *i)
                        .collect();
                    let cov =
                        linalg::spd_inverse(&p, d).ok_or(Error::NotPositiveDefinite { item: a })?;
                    out.copy_from_slice(&cov);
                }
            }
        }
    }
    Ok(CovariancePath {
        mode,
        horizon: h,
        items: k,
        dim: d,
        blocks,
        start,
    })
}

/// Square-root factors of `Sigma_t - Sigma_bar_s + tau I` for every `(s, a)`:
/// elementwise roots in diagonal mode, lower Cholesky factors in full mode.
fn gap_roots<T: Real>(path: &CovariancePath<T>, tau: T) -> Result<Vec<T>> {
    let b = path.block_len();
    let d = path.dim;
    let mut roots = vec![T::zero(); path.blocks.len()];
    for s in 0..path.horizon {
        for a in 0..path.items {
            let bar = path.block(s, a);
            let start = path.start_block(a);
            let off = (s * path.items + a) * b;
            match path.mode {
                CovarianceMode::Diagonal => {
                    for j in 0..d {
                        let gap = start[j] - bar[j];
                        if gap < -tau {
                            return Err(Error::NegativeGap {
                                item: a,
                                offset: s,
                                gap: gap.as_f64(),
                            });
                        }
                        roots[off + j] = (gap + tau).max(T::zero()).sqrt();
                    }
                }
                CovarianceMode::Full => {
                    let mut gap: Vec<T> = start.iter().zip(bar).map(|(x, y)| *x - *y).collect();
                    for j in 0..d {
                        gap[j * d + j] += tau;
                    }
                    let l = linalg::cholesky(&gap, d).ok_or_else(|| Error::NegativeGap {
                        item: a,
                        offset: s,
                        gap: linalg::sym_eigenvalues(&gap, d)[0].as_f64(),
                    })?;
                    roots[off..off + b].copy_from_slice(&l);
                }
            }
        }
    }
    Ok(roots)
}

/// `beta_{s,a} = beta_{t,a} + root_{s,a} z_{s,a}` for one path.
fn path_means<T: Real>(
    post: &GaussianPosterior<T>,
    mode: CovarianceMode,
    horizon: usize,
    roots: &[T],
    z: &[T],
) -> Vec<T> {
    let (k, d) = (post.items(), post.dim());
    let b = if mode == CovarianceMode::Full {
        d * d
    } else {
        d
    };
    let mut means = vec![T::zero(); horizon * k * d];
    for s in 0..horizon {
        for a in 0..k {
            let zz = &z[(s * k + a) * d..(s * k + a + 1) * d];
            let root = &roots[(s * k + a) * b..(s * k + a + 1) * b];
            let out = &mut means[(s * k + a) * d..(s * k + a + 1) * d];
            let mu = post.mean(a);
            match mode {
                CovarianceMode::Diagonal => {
                    for j in 0..d {
                        out[j] = mu[j] + root[j] * zz[j];
                    }
                }
                CovarianceMode::Full => {
                    let shift = linalg::lower_mat_vec(root, d, zz);
                    for j in 0..d {
                        out[j] = mu[j] + shift[j];
                    }
                }
            }
        }
    }
    means
}

/// A sampled trajectory of future beliefs.
#[derive(Debug, Clone)]
pub struct PosteriorPath<T> {
    pub covariances: CovariancePath<T>,
    /// `[s][a][j]`.
    pub means: Vec<T>,
    /// The `Z` draws used, same layout as `means`.
    pub noise: Vec<T>,
    items: usize,
    dim: usize,
    start_period: usize,
}

impl<T: Real> PosteriorPath<T> {
    pub fn mean(&self, s: usize, a: usize) -> &[T] {
        let start = (s * self.items + a) * self.dim;
        &self.means[start..start + self.dim]
    }

    /// Debug dump: one posterior snapshot per period, concatenated.
    pub fn to_snapshots(&self) -> Result<String> {
        let mut out = String::new();
        let (k, d) = (self.items, self.dim);
        for s in 0..self.covariances.horizon {
            let mut precisions = Vec::new();
            for a in 0..k {
                let blk = self.covariances.block(s, a);
                match self.covariances.mode {
                    CovarianceMode::Diagonal => precisions.extend(blk.iter().map(|v| v.recip())),
                    CovarianceMode::Full => precisions.extend(
                        linalg::spd_inverse(blk, d)
                            .ok_or(Error::NotPositiveDefinite { item: a })?,
                    ),
                }
            }
            let snap = GaussianPosterior::from_precisions(
                self.covariances.mode,
                k,
                d,
                self.start_period + s,
                self.means[s * k * d..(s + 1) * k * d].to_vec(),
                precisions,
            )?;
            out.push_str(&snap.to_snapshot()?);
        }
        Ok(out)
    }
}

/// Draws one posterior path with fresh `Z` from `rng`.
pub fn sample_posterior_path<T: Real, R: Rng + ?Sized>(
    post: &GaussianPosterior<T>,
    sched: &ExplorationSchedule<T>,
    cfg: &ObjectiveConfig<T>,
    rng: &mut R,
) -> Result<PosteriorPath<T>> {
    let covariances = covariance_path(post, sched, cfg)?;
    let roots = gap_roots(&covariances, cfg.sqrt_floor)?;
    let len = sched.horizon() * post.items() * post.dim();
    let noise: Vec<T> = (0..len).map(|_| std_normal(rng)).collect();
    let means = path_means(post, post.mode(), sched.horizon(), &roots, &noise);
    Ok(PosteriorPath {
        covariances,
        means,
        noise,
        items: post.items(),
        dim: post.dim(),
        start_period: sched.start_period,
    })
}

/// Monte-Carlo mean with its standard error (absent for a single path).
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate<T> {
    pub mean: T,
    pub std_error: Option<T>,
    pub paths: usize,
}

impl<T: Real> Estimate<T> {
    pub fn from_samples(samples: &[T]) -> Self {
        let n = samples.len();
        let mean = samples.iter().copied().sum::<T>() / T::of_usize(n.max(1));
        let std_error = (n >= 2).then(|| {
            let ss: T = samples.iter().map(|v| (*v - mean) * (*v - mean)).sum();
            (ss / T::of_usize(n - 1) / T::of_usize(n)).sqrt()
        });
        Self {
            mean,
            std_error,
            paths: n,
        }
    }
}

/// Value (and, in diagonal mode, gradient) of the objective on fixed draws.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub value: Estimate<T>,
    pub gradient: Option<Vec<T>>,
}

/// Reward terms shared by every path: `u = xbar^T beta_bar`.
fn uniform_reward<T: Real>(post: &GaussianPosterior<T>, users: &[Vec<T>]) -> T {
    let (k, d) = (post.items(), post.dim());
    let mut beta_bar = vec![T::zero(); d];
    for a in 0..k {
        for (b, m) in beta_bar.iter_mut().zip(post.mean(a)) {
            *b += *m;
        }
    }
    let kk = T::of_usize(k);
    beta_bar.iter_mut().for_each(|b| *b /= kk);
    let mut xbar = vec![T::zero(); d];
    for u in users {
        for (x, v) in xbar.iter_mut().zip(u) {
            *x += *v;
        }
    }
    let m = T::of_usize(users.len());
    xbar.iter_mut().for_each(|x| *x /= m);
    dot(&xbar, &beta_bar)
}

/// Per-path workspace output of the greedy max term at one offset.
struct MaxTerm<T> {
    /// `(1/m) sum_i max_a x_i^T beta_{s,a}`.
    mean_max: T,
    /// `sum_{i: argmax = a} x_i`, laid out `[a][j]`; only filled when requested.
    winner_sums: Vec<T>,
}

fn max_term<T: Real>(
    users: &[Vec<T>],
    means: &[T],
    k: usize,
    d: usize,
    want_winners: bool,
) -> MaxTerm<T> {
    let mut total = T::zero();
    let mut winner_sums = if want_winners {
        vec![T::zero(); k * d]
    } else {
        Vec::new()
    };
    for x in users {
        let mut best = 0;
        let mut best_v = dot(x, &means[..d]);
        for a in 1..k {
            let v = dot(x, &means[a * d..(a + 1) * d]);
            if v > best_v {
                best = a;
                best_v = v;
            }
        }
        total += best_v;
        if want_winners {
            for (w, xv) in winner_sums[best * d..(best + 1) * d].iter_mut().zip(x) {
                *w += *xv;
            }
        }
    }
    MaxTerm {
        mean_max: total / T::of_usize(users.len()),
        winner_sums,
    }
}

fn map_paths<T: Real, F>(paths: usize, f: F) -> Vec<(T, Vec<T>)>
where
    F: Fn(usize) -> (T, Vec<T>) + Sync + Send,
{
    if paths >= PARALLEL_PATHS {
        (0..paths).into_par_iter().map(f).collect()
    } else {
        (0..paths).map(f).collect()
    }
}

/// How [`evaluate_with`] estimates the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientEstimator {
    /// Exact derivative of the per-path values.
    #[default]
    Pathwise,
    /// Pathwise minus `x^T Z_{a0}` terms, where `a0` is each user's greedy
    /// item under the starting means. The subtracted terms have mean zero, so
    /// the estimate stays unbiased, but it no longer blows up like
    /// `1/sqrt(tau)` when a future covariance gap is near zero.
    Baseline,
}

/// Evaluates the objective on the given draws. The gradient is returned in
/// diagonal mode only.
pub fn evaluate<T: Real>(
    sched: &ExplorationSchedule<T>,
    post: &GaussianPosterior<T>,
    cfg: &ObjectiveConfig<T>,
    noise: &NoiseDraws<T>,
) -> Result<Evaluation<T>> {
    evaluate_with(sched, post, cfg, noise, GradientEstimator::Pathwise)
}

/// [`evaluate`] with a choice of gradient estimator. Values are identical.
pub fn evaluate_with<T: Real>(
    sched: &ExplorationSchedule<T>,
    post: &GaussianPosterior<T>,
    cfg: &ObjectiveConfig<T>,
    noise: &NoiseDraws<T>,
    estimator: GradientEstimator,
) -> Result<Evaluation<T>> {
    let path = covariance_path(post, sched, cfg)?;
    let (k, d, h) = (post.items(), post.dim(), sched.horizon());
    noise.check(h, k, d)?;
    let roots = gap_roots(&path, cfg.sqrt_floor)?;
    let users = &cfg.user_sample;
    let m = T::of_usize(users.len());
    let u = uniform_reward(post, users);
    let diagonal = post.mode() == CovarianceMode::Diagonal;
    let design = cfg.design.diagonal();
    let two = T::of(2.0);

    // d beta_{s,a,j} / d c_s where c_s = sum_{l<s} eps_l n_l, divided by z:
    // I_jj * sigma_bar^4 / (2 root).
    let chain: Vec<T> = if diagonal {
        (0..h * k * d)
            .map(|idx| {
                let j = idx % d;
                let v = path.blocks[idx];
                design[j] * v * v / (two * roots[idx])
            })
            .collect()
    } else {
        Vec::new()
    };
    let baseline = if diagonal && estimator == GradientEstimator::Baseline {
        let start: Vec<T> = (0..k).flat_map(|a| post.mean(a).to_vec()).collect();
        max_term(users, &start, k, d, true).winner_sums
    } else {
        vec![T::zero(); k * d]
    };

    let per_path = map_paths(noise.paths(), |p| {
        let z = noise.path(p);
        let means = path_means(post, post.mode(), h, &roots, z);
        let mut value = T::zero();
        let mut direct = vec![T::zero(); h];
        // G_s: derivative of this path's value through c_s.
        let mut through_info = vec![T::zero(); h];
        for s in 0..h {
            let n_s = cfg.batch_sizes[s];
            let eps = sched.rates[s];
            let term = max_term(users, &means[s * k * d..(s + 1) * k * d], k, d, diagonal);
            value -= n_s * (eps * u + (T::one() - eps) * term.mean_max);
            if diagonal {
                direct[s] = n_s * (term.mean_max - u);
                let scale = -n_s * (T::one() - eps) / m;
                let mut g = T::zero();
                let off = s * k * d;
                for (idx, (won, base)) in term.winner_sums.iter().zip(&baseline).enumerate() {
                    let w = *won - *base;
                    if w != T::zero() {
                        g += scale * w * z[off + idx] * chain[off + idx];
                    }
                }
                through_info[s] = g;
            }
        }
        if !diagonal {
            return (value, Vec::new());
        }
        // dJ/d eps_l = direct_l + n_l * sum_{s>l} G_s
        let mut grad = direct;
        let mut suffix = T::zero();
        for l in (0..h).rev() {
            grad[l] += cfg.batch_sizes[l] * suffix;
            suffix += through_info[l];
        }
        (value, grad)
    });

    let values: Vec<T> = per_path.iter().map(|(v, _)| *v).collect();
    let gradient = diagonal.then(|| {
        let mut g = vec![T::zero(); h];
        for (_, pg) in &per_path {
            for (acc, v) in g.iter_mut().zip(pg) {
                *acc += *v;
            }
        }
        let n = T::of_usize(per_path.len());
        g.iter_mut().for_each(|v| *v /= n);
        g
    });
    Ok(Evaluation {
        value: Estimate::from_samples(&values),
        gradient,
    })
}

fn draws_for<T: Real>(
    cfg: &ObjectiveConfig<T>,
    post: &GaussianPosterior<T>,
    horizon: usize,
) -> NoiseDraws<T> {
    NoiseDraws::sample(cfg.seed, cfg.paths, horizon, post.items(), post.dim())
}

/// Monte-Carlo objective value on the draws selected by `cfg.seed`.
pub fn objective_value<T: Real>(
    sched: &ExplorationSchedule<T>,
    post: &GaussianPosterior<T>,
    cfg: &ObjectiveConfig<T>,
) -> Result<Estimate<T>> {
    let noise = draws_for(cfg, post, sched.horizon());
    Ok(evaluate(sched, post, cfg, &noise)?.value)
}

/// Exact gradient of the `cfg.paths`-path estimate on the same draws as
/// [`objective_value`]. Diagonal posteriors only.
pub fn objective_gradient<T: Real>(
    sched: &ExplorationSchedule<T>,
    post: &GaussianPosterior<T>,
    cfg: &ObjectiveConfig<T>,
) -> Result<Vec<T>> {
    if post.mode() != CovarianceMode::Diagonal {
        return Err(invalid(
            "gradients are only available for diagonal posteriors",
        ));
    }
    let noise = draws_for(cfg, post, sched.horizon());
    Ok(evaluate(sched, post, cfg, &noise)?
        .gradient
        .expect("diagonal mode yields a gradient"))
}

/// How future designs are formed when estimating Bayesian regret.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignSampling {
    /// `eps_l n_l I_pop`, the differentiable approximation.
    Deterministic,
    /// Realized empirical designs: Bernoulli explore flags, uniform items and
    /// users resampled from the user sample, `round(n_l)` arrivals.
    Stochastic,
}

/// Objective value with realized empirical designs in place of the
/// population approximation. `Z` draws are shared with [`evaluate`] when the
/// same `noise` is passed; design randomness comes from `design_seed`.
pub fn evaluate_stochastic<T: Real>(
    sched: &ExplorationSchedule<T>,
    post: &GaussianPosterior<T>,
    cfg: &ObjectiveConfig<T>,
    noise: &NoiseDraws<T>,
    noise_std: T,
    design_seed: u64,
) -> Result<Estimate<T>> {
    cfg.validate(post, sched)?;
    let (k, d, h) = (post.items(), post.dim(), sched.horizon());
    noise.check(h, k, d)?;
    let users = &cfg.user_sample;
    let u = uniform_reward(post, users);
    let values: Vec<T> = map_paths(noise.paths(), |p| {
        let mut rng = stream(design_seed, &[p as u64]);
        let value = stochastic_path_value(sched, post, cfg, noise.path(p), noise_std, u, &mut rng);
        (value, Vec::new())
    })
    .into_iter()
    .map(|(v, _)| v)
    .collect::<Vec<T>>();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("stochastic design produced a non-finite value"));
    }
    Ok(Estimate::from_samples(&values))
}

/// Adds one period's realized empirical designs to `precisions` (layout of
/// the posterior's precision blocks).
#[allow(clippy::too_many_arguments)]
fn accumulate_realized_design<T: Real>(
    precisions: &mut [T],
    users: &[Vec<T>],
    items: usize,
    mode: CovarianceMode,
    arrivals: usize,
    eps: T,
    weight: T,
    rng: &mut StreamRng,
) {
    let d = users[0].len();
    let b = if mode == CovarianceMode::Full {
        d * d
    } else {
        d
    };
    let p = eps.as_f64().clamp(0.0, 1.0);
    for _ in 0..arrivals {
        if !rng.random_bool(p) {
            continue;
        }
        let a = rng.random_range(0..items);
        let x = &users[rng.random_range(0..users.len())];
        let blk = &mut precisions[a * b..(a + 1) * b];
        match mode {
            CovarianceMode::Diagonal => {
                for j in 0..d {
                    blk[j] += weight * x[j] * x[j];
                }
            }
            CovarianceMode::Full => {
                for i in 0..d {
                    for j in 0..d {
                        blk[i * d + j] += weight * x[i] * x[j];
                    }
                }
            }
        }
    }
}

fn stochastic_path_value<T: Real>(
    sched: &ExplorationSchedule<T>,
    post: &GaussianPosterior<T>,
    cfg: &ObjectiveConfig<T>,
    z: &[T],
    noise_std: T,
    u: T,
    rng: &mut StreamRng,
) -> T {
    let (k, d, h) = (post.items(), post.dim(), sched.horizon());
    let mode = post.mode();
    let b = if mode == CovarianceMode::Full {
        d * d
    } else {
        d
    };
    let weight = (noise_std * noise_std).recip();
    let mut precisions: Vec<T> = (0..k).flat_map(|a| post.precision(a).to_vec()).collect();
    let start: Vec<Vec<T>> = (0..k)
        .map(|a| match mode {
            CovarianceMode::Diagonal => post.precision(a).iter().map(|p| p.recip()).collect(),
            CovarianceMode::Full => post.covariance(a).expect("valid posterior"),
        })
        .collect();
    let tau = cfg.sqrt_floor;
    let mut value = T::zero();
    let mut means = vec![T::zero(); k * d];
    for s in 0..h {
        for a in 0..k {
            let prec = &precisions[a * b..(a + 1) * b];
            let zz = &z[(s * k + a) * d..(s * k + a + 1) * d];
            let mu = post.mean(a);
            let out = &mut means[a * d..(a + 1) * d];
            match mode {
                CovarianceMode::Diagonal => {
                    for j in 0..d {
                        let gap = (start[a][j] - prec[j].recip()).max(T::zero());
                        out[j] = mu[j] + (gap + tau).sqrt() * zz[j];
                    }
                }
                CovarianceMode::Full => {
                    let cov = linalg::spd_inverse(prec, d).expect("precision stays PD");
                    let mut gap: Vec<T> = start[a].iter().zip(&cov).map(|(x, y)| *x - *y).collect();
                    for j in 0..d {
                        gap[j * d + j] += tau;
                    }
                    let l = linalg::cholesky(&gap, d).unwrap_or_else(|| {
                        // Rounding can leave a tiny negative eigenvalue; lift it.
                        let lift = -linalg::sym_eigenvalues(&gap, d)[0] + tau;
                        for j in 0..d {
                            gap[j * d + j] += lift;
                        }
                        linalg::cholesky(&gap, d).expect("lifted gap is PD")
                    });
                    let shift = linalg::lower_mat_vec(&l, d, zz);
                    for j in 0..d {
                        out[j] = mu[j] + shift[j];
                    }
                }
            }
        }
        let eps = sched.rates[s];
        let n_s = cfg.batch_sizes[s];
        let term = max_term(&cfg.user_sample, &means, k, d, false);
        value -= n_s * (eps * u + (T::one() - eps) * term.mean_max);
        let arrivals = n_s.round().as_f64().max(0.0) as usize;
        accumulate_realized_design(
            &mut precisions,
            &cfg.user_sample,
            k,
            mode,
            arrivals,
            eps,
            weight,
            rng,
        );
    }
    value
}

/// Full Bayesian-regret estimate: the objective plus the schedule-free
/// oracle term `sum_s n_s E[max_a x^T theta_a]` with `theta` drawn from the
/// conditioning belief. Returns per-path regret statistics.
pub fn bayes_regret<T: Real>(
    sched: &ExplorationSchedule<T>,
    post: &GaussianPosterior<T>,
    cfg: &ObjectiveConfig<T>,
    sampling: DesignSampling,
    noise_std: T,
) -> Result<Estimate<T>> {
    cfg.validate(post, sched)?;
    let (k, d, h) = (post.items(), post.dim(), sched.horizon());
    let noise = NoiseDraws::<T>::sample(cfg.seed, cfg.paths, h, k, d);
    let theta_noise = NoiseDraws::<T>::sample(
        crate::rng::derive_seed(cfg.seed, &[0x7e7a]),
        cfg.paths,
        1,
        k,
        d,
    );
    let design_seed = crate::rng::derive_seed(cfg.seed, &[0xde51]);

    let objective_paths: Vec<T> = match sampling {
        DesignSampling::Deterministic => {
            let path = covariance_path(post, sched, cfg)?;
            let roots = gap_roots(&path, cfg.sqrt_floor)?;
            let u = uniform_reward(post, &cfg.user_sample);
            map_paths(noise.paths(), |p| {
                let means = path_means(post, post.mode(), h, &roots, noise.path(p));
                let mut v = T::zero();
                for s in 0..h {
                    let term = max_term(
                        &cfg.user_sample,
                        &means[s * k * d..(s + 1) * k * d],
                        k,
                        d,
                        false,
                    );
                    let eps = sched.rates[s];
                    v -= cfg.batch_sizes[s] * (eps * u + (T::one() - eps) * term.mean_max);
                }
                (v, Vec::new())
            })
            .into_iter()
            .map(|(v, _)| v)
            .collect()
        }
        DesignSampling::Stochastic => {
            let u = uniform_reward(post, &cfg.user_sample);
            map_paths(noise.paths(), |p| {
                let mut rng = stream(design_seed, &[p as u64]);
                (
                    stochastic_path_value(sched, post, cfg, noise.path(p), noise_std, u, &mut rng),
                    Vec::new(),
                )
            })
            .into_iter()
            .map(|(v, _)| v)
            .collect()
        }
    };

    // theta ~ N(beta_t, Sigma_t): the full-gap limit of the mean path.
    let factors: Vec<Vec<T>> = (0..k)
        .map(|a| match post.mode() {
            CovarianceMode::Diagonal => {
                Ok(post.precision(a).iter().map(|p| p.recip().sqrt()).collect())
            }
            CovarianceMode::Full => linalg::cholesky(&post.covariance(a)?, d)
                .ok_or(Error::NotPositiveDefinite { item: a }),
        })
        .collect::<Result<_>>()?;
    let total = cfg.total_batch();
    let regrets: Vec<T> = objective_paths
        .iter()
        .enumerate()
        .map(|(p, obj)| {
            let z = theta_noise.path(p);
            let mut theta = vec![T::zero(); k * d];
            for a in 0..k {
                let zz = &z[a * d..(a + 1) * d];
                let shift = match post.mode() {
                    CovarianceMode::Diagonal => {
                        factors[a].iter().zip(zz).map(|(f, z)| *f * *z).collect()
                    }
                    CovarianceMode::Full => linalg::lower_mat_vec(&factors[a], d, zz),
                };
                for j in 0..d {
                    theta[a * d + j] = post.mean(a)[j] + shift[j];
                }
            }
            let oracle = max_term(&cfg.user_sample, &theta, k, d, false).mean_max;
            total * oracle + *obj
        })
        .collect();
    Ok(Estimate::from_samples(&regrets))
}
