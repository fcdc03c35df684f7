//! Gaussian belief over item embeddings with per-item independent blocks.
//!
//! Each block is kept in precision form: updates add design matrices to the
//! precision, and the covariance is only materialized on request. Diagonal
//! mode keeps the `d` diagonal precisions and drops every off-diagonal term
//! of the designs it absorbs.

use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::InteractionRecord;
use crate::scalar::{dot, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMode {
    Diagonal,
    Full,
}

impl CovarianceMode {
    fn as_str(self) -> &'static str {
        match self {
            CovarianceMode::Diagonal => "diagonal",
            CovarianceMode::Full => "full",
        }
    }
}

/// Prior variance: one value for every coordinate or one per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorVariance<T> {
    Scalar(T),
    PerCoordinate(Vec<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior<T> {
    mode: CovarianceMode,
    items: usize,
    dim: usize,
    period: usize,
    means: Vec<T>,
    precisions: Vec<T>,
}

/// `N(mean0, diag(variance0))` for every item, at period 1.
pub fn make_prior<T: Real>(
    items: usize,
    dim: usize,
    mean0: &[T],
    variance0: &PriorVariance<T>,
    mode: CovarianceMode,
) -> Result<GaussianPosterior<T>> {
    if items == 0 || dim == 0 {
        return Err(invalid("prior needs K >= 1 and d >= 1"));
    }
    if mean0.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: mean0.len(),
        });
    }
    let variances = match variance0 {
        PriorVariance::Scalar(v) => vec![*v; dim],
        PriorVariance::PerCoordinate(v) => {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            v.clone()
        }
    };
    if variances
        .iter()
        .any(|v| !(*v > T::zero()) || !v.is_finite())
    {
        return Err(invalid("prior variance must be finite and > 0"));
    }
    let block: Vec<T> = match mode {
        CovarianceMode::Diagonal => variances.iter().map(|v| v.recip()).collect(),
        CovarianceMode::Full => {
            let mut m = vec![T::zero(); dim * dim];
            for (j, v) in variances.iter().enumerate() {
                m[j * dim + j] = v.recip();
            }
            m
        }
    };
    Ok(GaussianPosterior {
        mode,
        items,
        dim,
        period: 1,
        means: mean0.repeat(items),
        precisions: block.repeat(items),
    })
}

impl<T: Real> GaussianPosterior<T> {
    /// Assembles a posterior from per-item means and precision blocks.
    pub fn from_precisions(
        mode: CovarianceMode,
        items: usize,
        dim: usize,
        period: usize,
        means: Vec<T>,
        precisions: Vec<T>,
    ) -> Result<Self> {
        let block = if mode == CovarianceMode::Full {
            dim * dim
        } else {
            dim
        };
        if items == 0 || dim == 0 || period == 0 {
            return Err(invalid("items, dim and period must be >= 1"));
        }
        if means.len() != items * dim {
            return Err(Error::DimensionMismatch {
                expected: items * dim,
                got: means.len(),
            });
        }
        if precisions.len() != items * block {
            return Err(Error::DimensionMismatch {
                expected: items * block,
                got: precisions.len(),
            });
        }
        Ok(Self {
            mode,
            items,
            dim,
            period,
            means,
            precisions,
        })
    }

    pub fn mode(&self) -> CovarianceMode {
        self.mode
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> usize {
        self.period
    }

    fn block_len(&self) -> usize {
        match self.mode {
            CovarianceMode::Diagonal => self.dim,
            CovarianceMode::Full => self.dim * self.dim,
        }
    }

    pub fn mean(&self, a: usize) -> &[T] {
        &self.means[a * self.dim..(a + 1) * self.dim]
    }

    /// Precision block for item `a`: `d` entries (diagonal) or `d*d` row-major (full).
    pub fn precision(&self, a: usize) -> &[T] {
        let b = self.block_len();
        &self.precisions[a * b..(a + 1) * b]
    }

    /// Full `d x d` covariance of item `a`.
    pub fn covariance(&self, a: usize) -> Result<Vec<T>> {
        let d = self.dim;
        match self.mode {
            CovarianceMode::Diagonal => {
                let mut m = vec![T::zero(); d * d];
                for (j, p) in self.precision(a).iter().enumerate() {
                    m[j * d + j] = p.recip();
                }
                Ok(m)
            }
            CovarianceMode::Full => linalg::spd_inverse(self.precision(a), d)
                .ok_or(Error::NotPositiveDefinite { item: a }),
        }
    }

    /// Diagonal of the covariance of item `a`.
    pub fn variances(&self, a: usize) -> Result<Vec<T>> {
        match self.mode {
            CovarianceMode::Diagonal => Ok(self.precision(a).iter().map(|p| p.recip()).collect()),
            CovarianceMode::Full => {
                let c = self.covariance(a)?;
                Ok((0..self.dim).map(|j| c[j * self.dim + j]).collect())
            }
        }
    }

    /// Diagonal-mode copy that keeps the means and the marginal variances.
    pub fn to_diagonal(&self) -> Result<Self> {
        if self.mode == CovarianceMode::Diagonal {
            return Ok(self.clone());
        }
        let mut precisions = Vec::with_capacity(self.items * self.dim);
        for a in 0..self.items {
            precisions.extend(self.variances(a)?.into_iter().map(|v| v.recip()));
        }
        Ok(Self {
            mode: CovarianceMode::Diagonal,
            precisions,
            ..self.clone()
        })
    }

    /// `x^T beta_a`.
    pub fn predictive_mean(&self, x: &[T], a: usize) -> Result<T> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if a >= self.items {
            return Err(Error::ItemOutOfRange {
                index: a,
                items: self.items,
            });
        }
        Ok(dot(x, self.mean(a)))
    }

    /// Conjugate update on the explore-group records of one period.
    pub fn update(&self, batch: &[InteractionRecord<T>], noise_std: T) -> Result<Self> {
        self.update_filtered(batch, noise_std, |r| r.explored)
    }

    /// Conjugate update on every record in the batch, explored or not.
    pub fn update_all(&self, batch: &[InteractionRecord<T>], noise_std: T) -> Result<Self> {
        self.update_filtered(batch, noise_std, |_| true)
    }

    fn update_filtered(
        &self,
        batch: &[InteractionRecord<T>],
        noise_std: T,
        keep: impl Fn(&InteractionRecord<T>) -> bool,
    ) -> Result<Self> {
        if !(noise_std > T::zero()) {
            return Err(invalid("noise standard deviation must be > 0"));
        }
        let d = self.dim;
        let inv_var = (noise_std * noise_std).recip();
        let mut design = vec![T::zero(); self.precisions.len()];
        let mut rhs = vec![T::zero(); self.means.len()];
        for r in batch.iter().filter(|r| keep(r)) {
            if r.x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.x.len(),
                });
            }
            if r.action >= self.items {
                return Err(Error::ItemOutOfRange {
                    index: r.action,
                    items: self.items,
                });
            }
            let a = r.action;
            for j in 0..d {
                rhs[a * d + j] += inv_var * r.reward * r.x[j];
            }
            match self.mode {
                CovarianceMode::Diagonal => {
                    for j in 0..d {
                        design[a * d + j] += inv_var * r.x[j] * r.x[j];
                    }
                }
                CovarianceMode::Full => {
                    let base = a * d * d;
                    for i in 0..d {
                        for j in 0..d {
                            design[base + i * d + j] += inv_var * r.x[i] * r.x[j];
                        }
                    }
                }
            }
        }

        let mut next = self.clone();
        next.period += 1;
        let b = self.block_len();
        for a in 0..self.items {
            let old_p = self.precision(a);
            let new_p: Vec<T> = old_p
                .iter()
                .zip(&design[a * b..(a + 1) * b])
                .map(|(p, i)| *p + *i)
                .collect();
            let mean = self.mean(a);
            let new_mean: Vec<T> = match self.mode {
                CovarianceMode::Diagonal => (0..d)
                    .map(|j| {
                        if !(new_p[j] > T::zero()) {
                            return Err(Error::NotPositiveDefinite { item: a });
                        }
                        Ok((old_p[j] * mean[j] + rhs[a * d + j]) / new_p[j])
                    })
                    .collect::<Result<_>>()?,
                CovarianceMode::Full => {
                    let mut target = linalg::mat_vec(old_p, d, mean);
                    for j in 0..d {
                        target[j] += rhs[a * d + j];
                    }
                    let l = linalg::cholesky(&new_p, d)
                        .ok_or(Error::NotPositiveDefinite { item: a })?;
                    linalg::cholesky_solve(&l, d, &target)
                }
            };
            next.precisions[a * b..(a + 1) * b].copy_from_slice(&new_p);
            next.means[a * d..(a + 1) * d].copy_from_slice(&new_mean);
        }
        Ok(next)
    }

    /// Versioned text snapshot: header lines, then one `mean` and one `cov`
    /// row per item (`d` variances in diagonal mode, `d*d` row-major in full).
    pub fn to_snapshot(&self) -> Result<String> {
        let mut out = String::new();
        writeln!(out, "{SNAPSHOT_MAGIC}").unwrap();
        writeln!(out, "mode {}", self.mode.as_str()).unwrap();
        writeln!(out, "items {}", self.items).unwrap();
        writeln!(out, "dim {}", self.dim).unwrap();
        writeln!(out, "period {}", self.period).unwrap();
        for a in 0..self.items {
            write!(out, "mean {a}").unwrap();
            for v in self.mean(a) {
                write!(out, " {v:e}").unwrap();
            }
            out.push('\n');
            let cov = match self.mode {
                CovarianceMode::Diagonal => self.variances(a)?,
                CovarianceMode::Full => self.covariance(a)?,
            };
            write!(out, "cov {a}").unwrap();
            for v in cov {
                write!(out, " {v:e}").unwrap();
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let perr = |line: usize, message: String| Error::Parse { line, message };

        match lines.next() {
            Some((_, SNAPSHOT_MAGIC)) => {}
            Some((line, other)) => {
                return Err(perr(line, format!("unsupported snapshot header `{other}`")))
            }
            None => return Err(perr(1, "empty snapshot".into())),
        }
        let mut field = |name: &str| -> Result<(usize, String)> {
            let (line, l) = lines
                .next()
                .ok_or_else(|| perr(0, format!("missing `{name}` line")))?;
            match l.split_once(' ') {
                Some((k, v)) if k == name => Ok((line, v.trim().to_string())),
                _ => Err(perr(line, format!("expected `{name} <value>`"))),
            }
        };
        let (line, mode) = field("mode")?;
        let mode = match mode.as_str() {
            "diagonal" => CovarianceMode::Diagonal,
            "full" => CovarianceMode::Full,
            other => return Err(perr(line, format!("unknown mode `{other}`"))),
        };
        let mut int = |name: &str| -> Result<usize> {
            let (line, v) = field(name)?;
            v.parse()
                .map_err(|_| perr(line, format!("`{v}` is not an integer")))
        };
        let items = int("items")?;
        let dim = int("dim")?;
        let period = int("period")?;
        if items == 0 || dim == 0 || period == 0 {
            return Err(perr(0, "items, dim and period must be >= 1".into()));
        }

        let mut means = Vec::with_capacity(items * dim);
        let mut precisions = Vec::new();
        for a in 0..items {
            for (tag, len) in [
                ("mean", dim),
                (
                    "cov",
                    if mode == CovarianceMode::Full {
                        dim * dim
                    } else {
                        dim
                    },
                ),
            ] {
                let (line, l) = lines
                    .next()
                    .ok_or_else(|| perr(0, format!("missing `{tag} {a}` row")))?;
                let mut toks = l.split_whitespace();
                if toks.next() != Some(tag) || toks.next() != Some(a.to_string().as_str()) {
                    return Err(perr(line, format!("expected `{tag} {a}` row")));
                }
                let vals = toks
                    .map(|t| {
                        t.parse::<T>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| perr(line, format!("bad number `{t}`")))
                    })
                    .collect::<Result<Vec<T>>>()?;
                if vals.len() != len {
                    return Err(perr(
                        line,
                        format!("expected {len} values, got {}", vals.len()),
                    ));
                }
                if tag == "mean" {
                    means.extend(vals);
                } else {
                    let block = match mode {
                        CovarianceMode::Diagonal => {
                            if vals.iter().any(|v| !(*v > T::zero())) {
                                return Err(Error::NotPositiveDefinite { item: a });
                            }
                            vals.iter().map(|v| v.recip()).collect()
                        }
                        CovarianceMode::Full => linalg::spd_inverse(&vals, dim)
                            .ok_or(Error::NotPositiveDefinite { item: a })?,
                    };
                    precisions.extend(block);
                }
            }
        }
        Ok(Self {
            mode,
            items,
            dim,
            period,
            means,
            precisions,
        })
    }
}

const SNAPSHOT_MAGIC: &str = "posterior-snapshot v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    Population,
    Empirical,
}

/// Symmetric PSD information matrix (population or per-item empirical).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    pub kind: DesignKind,
    pub mode: CovarianceMode,
    pub dim: usize,
    /// `d` diagonal entries, or `d*d` row-major.
    pub entries: Vec<T>,
}

impl<T: Real> DesignMatrix<T> {
    pub fn diagonal(&self) -> Vec<T> {
        match self.mode {
            CovarianceMode::Diagonal => self.entries.clone(),
            CovarianceMode::Full => (0..self.dim)
                .map(|j| self.entries[j * self.dim + j])
                .collect(),
        }
    }

    pub fn to_full(&self) -> Vec<T> {
        match self.mode {
            CovarianceMode::Full => self.entries.clone(),
            CovarianceMode::Diagonal => {
                let d = self.dim;
                let mut m = vec![T::zero(); d * d];
                for j in 0..d {
                    m[j * d + j] = self.entries[j];
                }
                m
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|v| *v == T::zero())
    }
}

fn outer_accumulate<T: Real>(acc: &mut [T], x: &[T], w: T, mode: CovarianceMode) {
    let d = x.len();
    match mode {
        CovarianceMode::Diagonal => {
            for j in 0..d {
                acc[j] += w * x[j] * x[j];
            }
        }
        CovarianceMode::Full => {
            for i in 0..d {
                for j in 0..d {
                    acc[i * d + j] += w * x[i] * x[j];
                }
            }
        }
    }
}

/// `s^-2 * sum_i xi_i 1{A_i = a} x_i x_i^T` over explore-group records.
pub fn empirical_design<T: Real>(
    batch: &[InteractionRecord<T>],
    a: usize,
    noise_std: T,
    dim: usize,
    mode: CovarianceMode,
) -> Result<DesignMatrix<T>> {
    let len = if mode == CovarianceMode::Full {
        dim * dim
    } else {
        dim
    };
    let mut entries = vec![T::zero(); len];
    let w = (noise_std * noise_std).recip();
    for r in batch.iter().filter(|r| r.explored && r.action == a) {
        if r.x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.x.len(),
            });
        }
        outer_accumulate(&mut entries, &r.x, w, mode);
    }
    Ok(DesignMatrix {
        kind: DesignKind::Empirical,
        mode,
        dim,
        entries,
    })
}

/// `s^-2 K^-1 (1/m) sum_i x_i x_i^T` over a user sample.
pub fn population_design<T: Real, U: AsRef<[T]>>(
    users: &[U],
    items: usize,
    noise_std: T,
    mode: CovarianceMode,
) -> Result<DesignMatrix<T>> {
    let first = users
        .first()
        .ok_or_else(|| invalid("population design needs a non-empty user sample"))?;
    if items == 0 {
        return Err(invalid("population design needs K >= 1"));
    }
    let dim = first.as_ref().len();
    let len = if mode == CovarianceMode::Full {
        dim * dim
    } else {
        dim
    };
    let mut entries = vec![T::zero(); len];
    let w = (noise_std * noise_std * T::of_usize(items) * T::of_usize(users.len())).recip();
    for u in users {
        let x = u.as_ref();
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        outer_accumulate(&mut entries, x, w, mode);
    }
    Ok(DesignMatrix {
        kind: DesignKind::Population,
        mode,
        dim,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(x: &[f64], action: usize, reward: f64, explored: bool) -> InteractionRecord<f64> {
        InteractionRecord {
            user: 0,
            x: x.to_vec(),
            action,
            reward,
            explored,
        }
    }

    fn std_prior(k: usize, d: usize, mode: CovarianceMode) -> GaussianPosterior<f64> {
        make_prior(k, d, &vec![0.0; d], &PriorVariance::Scalar(1.0), mode).unwrap()
    }

    #[test]
    fn prior_examples() {
        let p = std_prior(2, 2, CovarianceMode::Full);
        assert_eq!(p.period(), 1);
        assert_eq!(p.mean(1), &[0.0, 0.0]);
        assert_eq!(p.covariance(0).unwrap(), vec![1.0, 0.0, 0.0, 1.0]);
        let p = make_prior(
            2,
            2,
            &[0.0, 0.0],
            &PriorVariance::Scalar(4.0),
            CovarianceMode::Diagonal,
        )
        .unwrap();
        assert_eq!(p.covariance(1).unwrap(), vec![4.0, 0.0, 0.0, 4.0]);
        assert!(make_prior(
            2,
            2,
            &[0.0, 0.0],
            &PriorVariance::Scalar(0.0),
            CovarianceMode::Full
        )
        .is_err());
        assert!(make_prior(
            2,
            2,
            &[0.0, 0.0],
            &PriorVariance::PerCoordinate(vec![1.0, -1.0]),
            CovarianceMode::Full
        )
        .is_err());
    }

    #[test]
    fn empirical_design_examples() {
        let d = empirical_design::<f64>(&[], 0, 1.0, 2, CovarianceMode::Full).unwrap();
        assert!(d.is_zero());
        let d = empirical_design(
            &[rec(&[1.0, 0.0], 0, 1.0, true)],
            0,
            1.0,
            2,
            CovarianceMode::Full,
        )
        .unwrap();
        assert_eq!(d.entries, vec![1.0, 0.0, 0.0, 0.0]);
        let d = empirical_design(
            &[rec(&[1.0, 0.0], 0, 1.0, false)],
            0,
            1.0,
            2,
            CovarianceMode::Full,
        )
        .unwrap();
        assert!(d.is_zero());
        let d = empirical_design(
            &[rec(&[1.0, 0.0], 1, 1.0, true)],
            0,
            1.0,
            2,
            CovarianceMode::Full,
        )
        .unwrap();
        assert!(d.is_zero());
    }

    #[test]
    fn population_design_examples() {
        let users = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let d = population_design(&users, 2, 1.0, CovarianceMode::Full).unwrap();
        assert_eq!(d.entries, vec![0.25, 0.0, 0.0, 0.25]);
        let d = population_design(&[vec![1.0, 0.0]], 1, 1.0, CovarianceMode::Full).unwrap();
        assert_eq!(d.entries, vec![1.0, 0.0, 0.0, 0.0]);
        let d2 = population_design(&users, 2, 2.0, CovarianceMode::Diagonal).unwrap();
        assert_eq!(d2.entries, vec![0.0625, 0.0625]);
        assert!(population_design::<f64, Vec<f64>>(&[], 2, 1.0, CovarianceMode::Full).is_err());
    }

    #[test]
    fn update_examples_match_conjugate_oracle() {
        for mode in [CovarianceMode::Full, CovarianceMode::Diagonal] {
            let p = std_prior(1, 2, mode);
            let empty = p.update(&[], 1.0).unwrap();
            assert_eq!(empty.period(), 2);
            assert_eq!(empty.mean(0), p.mean(0));
            assert_eq!(empty.precision(0), p.precision(0));

            let one = p.update(&[rec(&[1.0, 0.0], 0, 1.0, true)], 1.0).unwrap();
            let v = one.variances(0).unwrap();
            assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
            assert!((one.mean(0)[0] - 0.5).abs() < 1e-15);
            assert_eq!(one.mean(0)[1], 0.0);
            assert!((one.predictive_mean(&[1.0, 0.0], 0).unwrap() - 0.5).abs() < 1e-15);

            let two = p
                .update(
                    &[
                        rec(&[1.0, 0.0], 0, 1.0, true),
                        rec(&[1.0, 0.0], 0, 1.0, true),
                    ],
                    1.0,
                )
                .unwrap();
            let v = two.variances(0).unwrap();
            assert!((v[0] - 1.0 / 3.0).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
            assert!((two.mean(0)[0] - 2.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn exploit_records_do_not_move_the_posterior() {
        let p = std_prior(2, 2, CovarianceMode::Full);
        let q = p.update(&[rec(&[1.0, 2.0], 1, 5.0, false)], 1.0).unwrap();
        assert_eq!(q.mean(1), p.mean(1));
        assert_eq!(q.precision(1), p.precision(1));
        let r = p
            .update_all(&[rec(&[1.0, 2.0], 1, 5.0, false)], 1.0)
            .unwrap();
        assert_ne!(r.mean(1), p.mean(1));
    }

    #[test]
    fn predictive_mean_examples() {
        let p = make_prior(
            1,
            2,
            &[3.0, -1.0],
            &PriorVariance::Scalar(1.0),
            CovarianceMode::Full,
        )
        .unwrap();
        assert_eq!(p.predictive_mean(&[1.0, 0.0], 0).unwrap(), 3.0);
        assert_eq!(
            std_prior(1, 2, CovarianceMode::Full)
                .predictive_mean(&[1.0, 1.0], 0)
                .unwrap(),
            0.0
        );
        assert!(p.predictive_mean(&[1.0], 0).is_err());
    }

    fn random_batch(
        rng: &mut ChaCha8Rng,
        k: usize,
        d: usize,
        n: usize,
    ) -> Vec<InteractionRecord<f64>> {
        (0..n)
            .map(|i| InteractionRecord {
                user: i,
                x: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: rng.random_range(0..k),
                reward: rng.random_range(-2.0..2.0),
                explored: rng.random_bool(0.7),
            })
            .collect()
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mode in [CovarianceMode::Full, CovarianceMode::Diagonal] {
            let p = std_prior(3, 3, mode)
                .update(&random_batch(&mut rng, 3, 3, 40), 1.0)
                .unwrap();
            let text = p.to_snapshot().unwrap();
            let q = GaussianPosterior::<f64>::from_snapshot(&text).unwrap();
            assert_eq!(q.period(), p.period());
            assert_eq!(q.mode(), p.mode());
            assert_eq!(q.means, p.means);
            for (a, b) in q.precisions.iter().zip(&p.precisions) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
        assert!(GaussianPosterior::<f64>::from_snapshot("posterior-snapshot v9\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sequential_updates_equal_combined(seed in any::<u64>(), k in 1usize..4, d in 1usize..5, n in 0usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch = random_batch(&mut rng, k, d, n);
            let split = rng.random_range(0..=n);
            for mode in [CovarianceMode::Full, CovarianceMode::Diagonal] {
                let p = std_prior(k, d, mode);
                let seq = p.update(&batch[..split], 1.3).unwrap().update(&batch[split..], 1.3).unwrap();
                let once = p.update(&batch, 1.3).unwrap();
                for (a, b) in seq.means.iter().zip(&once.means) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
                for (a, b) in seq.precisions.iter().zip(&once.precisions) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn covariance_shrinks_in_loewner_order_and_ignores_rewards(seed in any::<u64>(), d in 1usize..5, n in 0usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch = random_batch(&mut rng, 2, d, n);
            let p = std_prior(2, d, CovarianceMode::Full);
            let q = p.update(&batch, 1.0).unwrap();
            let mut flipped = batch.clone();
            flipped.iter_mut().for_each(|r| r.reward = -3.0 * r.reward + 1.0);
            let q2 = p.update(&flipped, 1.0).unwrap();
            for a in 0..2 {
                let before = p.covariance(a).unwrap();
                let after = q.covariance(a).unwrap();
                let diff: Vec<f64> = before.iter().zip(&after).map(|(x, y)| x - y).collect();
                let eig = linalg::sym_eigenvalues(&diff, d);
                prop_assert!(eig[0] > -1e-12, "min eigenvalue {}", eig[0]);
                prop_assert_eq!(q.precision(a), q2.precision(a));
            }
            let pd = std_prior(2, d, CovarianceMode::Diagonal);
            let qd = pd.update(&batch, 1.0).unwrap();
            for a in 0..2 {
                for (x, y) in pd.variances(a).unwrap().iter().zip(qd.variances(a).unwrap()) {
                    prop_assert!(y <= *x);
                }
            }
        }
    }
}
