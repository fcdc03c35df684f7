//! Ground-truth linear reward model, embeddings and per-user regret.
//!
//! Items are addressed by zero-based index `0..K`. Every argmax in the crate
//! breaks ties toward the lowest index.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::rng::std_normal;
use crate::scalar::{argmax, dot, Real};

/// Tolerance on `sum(p) == 1` for action distributions.
pub const PROBABILITY_TOL: f64 = 1e-9;

/// A user feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UserEmbedding<T>(Vec<T>);

impl<T: Real> UserEmbedding<T> {
    /// Rejects non-finite entries and, when `norm_bound` is given, vectors
    /// whose squared norm exceeds it.
    pub fn new(values: Vec<T>, norm_bound: Option<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("user embedding must have dimension >= 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("user embedding has non-finite entries"));
        }
        if let Some(c) = norm_bound {
            let sq = dot(&values, &values);
            if sq > c {
                return Err(invalid(format!(
                    "user embedding squared norm {sq} exceeds bound {c}"
                )));
            }
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn squared_norm(&self) -> T {
        dot(&self.0, &self.0)
    }
}

impl<T> AsRef<[T]> for UserEmbedding<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

/// The `K` item vectors `theta_a`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEmbeddings<T> {
    items: usize,
    dim: usize,
    theta: Vec<T>,
}

impl<T: Real> ItemEmbeddings<T> {
    pub fn new(rows: Vec<Vec<T>>) -> Result<Self> {
        let items = rows.len();
        if items == 0 {
            return Err(invalid("need at least one item"));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(invalid("item dimension must be >= 1"));
        }
        let mut theta = Vec::with_capacity(items * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(invalid("item embedding has non-finite entries"));
            }
            theta.extend(row);
        }
        Ok(Self { items, dim, theta })
    }

    pub fn from_flat(items: usize, dim: usize, theta: Vec<T>) -> Result<Self> {
        if items == 0 || dim == 0 {
            return Err(invalid("need K >= 1 and d >= 1"));
        }
        if theta.len() != items * dim {
            return Err(Error::DimensionMismatch {
                expected: items * dim,
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(invalid("item embedding has non-finite entries"));
        }
        Ok(Self { items, dim, theta })
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn item(&self, a: usize) -> &[T] {
        &self.theta[a * self.dim..(a + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[T] {
        &self.theta
    }

    /// `x^T theta_a` for every item.
    pub fn scores(&self, x: &[T]) -> Vec<T> {
        (0..self.items).map(|a| dot(x, self.item(a))).collect()
    }

    fn check(&self, x: &[T], a: usize) -> Result<()> {
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
        Ok(())
    }
}

/// Ground truth for one simulated world.
#[derive(Debug, Clone)]
pub struct BanditInstance<T> {
    pub items: ItemEmbeddings<T>,
    pub user_pool: Vec<UserEmbedding<T>>,
    pub noise_std: T,
}

impl<T: Real> BanditInstance<T> {
    pub fn new(
        items: ItemEmbeddings<T>,
        user_pool: Vec<UserEmbedding<T>>,
        noise_std: T,
    ) -> Result<Self> {
        if user_pool.is_empty() {
            return Err(invalid("user pool must be non-empty"));
        }
        if !(noise_std > T::zero()) {
            return Err(invalid("noise standard deviation must be > 0"));
        }
        if let Some(u) = user_pool.iter().find(|u| u.dim() != items.dim()) {
            return Err(Error::DimensionMismatch {
                expected: items.dim(),
                got: u.dim(),
            });
        }
        Ok(Self {
            items,
            user_pool,
            noise_std,
        })
    }

    pub fn num_items(&self) -> usize {
        self.items.items()
    }

    pub fn dim(&self) -> usize {
        self.items.dim()
    }
}

/// One assignment made by a policy and the reward it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord<T> {
    /// Index of the user in the pool it was drawn from.
    pub user: usize,
    pub x: Vec<T>,
    pub action: usize,
    pub reward: T,
    /// Whether the user was in the explore group.
    pub explored: bool,
}

/// `x^T theta_a`.
pub fn expected_reward<T: Real>(x: &[T], a: usize, items: &ItemEmbeddings<T>) -> Result<T> {
    items.check(x, a)?;
    Ok(dot(x, items.item(a)))
}

/// `x^T theta_a + eta`, `eta ~ N(0, s^2)`.
pub fn sample_reward<T: Real, R: Rng + ?Sized>(
    x: &[T],
    a: usize,
    instance: &BanditInstance<T>,
    rng: &mut R,
) -> Result<T> {
    let mean = expected_reward(x, a, &instance.items)?;
    let eta: T = std_normal(rng);
    Ok(mean + instance.noise_std * eta)
}

/// `max_a x^T theta_a`.
pub fn oracle_value<T: Real>(x: &[T], items: &ItemEmbeddings<T>) -> Result<T> {
    items.check(x, 0)?;
    let scores = items.scores(x);
    Ok(scores[argmax(&scores).expect("K >= 1")])
}

/// Best item for `x` (lowest index on ties).
pub fn oracle_action<T: Real>(x: &[T], items: &ItemEmbeddings<T>) -> usize {
    argmax(&items.scores(x)).expect("K >= 1")
}

/// `max_a x^T theta_a - sum_a p(a) x^T theta_a`.
pub fn per_user_regret<T: Real>(
    x: &[T],
    distribution: &[T],
    items: &ItemEmbeddings<T>,
) -> Result<T> {
    items.check(x, 0)?;
    if distribution.len() != items.items() {
        return Err(Error::DimensionMismatch {
            expected: items.items(),
            got: distribution.len(),
        });
    }
    if distribution.iter().any(|p| !(*p >= T::zero())) {
        return Err(invalid("action probabilities must be nonnegative"));
    }
    let total: T = distribution.iter().copied().sum();
    if (total - T::one()).abs().as_f64() > PROBABILITY_TOL {
        return Err(invalid(format!(
            "action distribution sums to {total}, expected 1"
        )));
    }
    let scores = items.scores(x);
    let best = scores[argmax(&scores).expect("K >= 1")];
    let achieved = dot(distribution, &scores);
    // Rounding can produce a tiny negative value when p is a point mass on the argmax.
    Ok((best - achieved).max(T::zero()))
}

/// Parsed contents of an embedding file.
#[derive(Debug, Clone)]
pub struct EmbeddingFile<T> {
    pub items: ItemEmbeddings<T>,
    pub users: Vec<UserEmbedding<T>>,
}

/// Parses the text embedding format: a `d=<int> K=<int>` header, `K` item
/// rows of `d` reals, then one row per user. Blank lines and `#` comments are
/// skipped. `norm_bound` is checked against every user row.
pub fn parse_embeddings<T: Real>(text: &str, norm_bound: Option<T>) -> Result<EmbeddingFile<T>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let mut dim = None;
    let mut items = None;
    for tok in header.split_whitespace() {
        let (key, value) = tok.split_once('=').ok_or_else(|| Error::Parse {
            line: hline,
            message: format!("expected key=value, got `{tok}`"),
        })?;
        let parsed: usize = value.parse().map_err(|_| Error::Parse {
            line: hline,
            message: format!("`{value}` is not a non-negative integer"),
        })?;
        match key {
            "d" => dim = Some(parsed),
            "K" => items = Some(parsed),
            other => {
                return Err(Error::Parse {
                    line: hline,
                    message: format!("unknown header key `{other}`"),
                })
            }
        }
    }
    let (dim, items) = match (dim, items) {
        (Some(d), Some(k)) if d >= 1 && k >= 1 => (d, k),
        _ => {
            return Err(Error::Parse {
                line: hline,
                message: "header needs d>=1 and K>=1".into(),
            })
        }
    };

    let parse_row = |line: usize, row: &str| -> Result<Vec<T>> {
        let vals = row
            .split_whitespace()
            .map(|tok| {
                let v: T = tok.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("`{tok}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("non-finite value `{tok}`"),
                    });
                }
                Ok(v)
            })
            .collect::<Result<Vec<T>>>()?;
        if vals.len() != dim {
            return Err(Error::Parse {
                line,
                message: format!("expected {dim} values, got {}", vals.len()),
            });
        }
        Ok(vals)
    };

    let mut theta = Vec::with_capacity(items * dim);
    for k in 0..items {
        let (line, row) = lines.next().ok_or(Error::Parse {
            line: hline,
            message: format!("expected {items} item rows, found {k}"),
        })?;
        theta.extend(parse_row(line, row)?);
    }
    let mut users = Vec::new();
    for (line, row) in lines {
        let x = parse_row(line, row)?;
        users.push(UserEmbedding::new(x, norm_bound).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?);
    }
    Ok(EmbeddingFile {
        items: ItemEmbeddings::from_flat(items, dim, theta)?,
        users,
    })
}
