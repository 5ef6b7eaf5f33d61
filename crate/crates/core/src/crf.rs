//! First-order linear-chain CRF over per-position emission scores and a
//! tag-to-tag transition matrix. There are no start or stop transitions.
//!
//! All dynamic programs run in log space.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Emission scores `S` (`L x K`) and transitions `T` (`K x K`), where
/// `T[[a, b]]` scores tag `a` followed by tag `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLattice {
    pub emissions: Array2<f64>,
    pub transitions: Array2<f64>,
}

/// A decoded tag path and its score.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tags: Vec<usize>,
    pub score: f64,
}

/// Loss of one sentence together with its gradients w.r.t. `S` and `T`.
#[derive(Debug, Clone)]
pub struct CrfGradient {
    pub nll: f64,
    pub d_emissions: Array2<f64>,
    pub d_transitions: Array2<f64>,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl ScoreLattice {
    pub fn new(emissions: Array2<f64>, transitions: Array2<f64>) -> Result<Self> {
        let k = emissions.ncols();
        if transitions.dim() != (k, k) {
            return Err(Error::ShapeMismatch(format!(
                "transitions {:?} for {k} tags",
                transitions.dim()
            )));
        }
        Ok(ScoreLattice {
            emissions,
            transitions,
        })
    }

    pub fn len(&self) -> usize {
        self.emissions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_tags(&self) -> usize {
        self.emissions.ncols()
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyLattice)
        } else {
            Ok(())
        }
    }

    /// Unnormalised score of one tag path.
    pub fn path_score(&self, tags: &[usize]) -> f64 {
        let mut score = 0.0;
        for (i, &y) in tags.iter().enumerate() {
            score += self.emissions[[i, y]];
            if i > 0 {
                score += self.transitions[[tags[i - 1], y]];
            }
        }
        score
    }

    /// Forward log-potentials, `alpha[[i, k]]` = log-sum of all prefixes ending in `k` at `i`.
    fn forward(&self) -> Array2<f64> {
        let (l, k) = self.emissions.dim();
        let mut alpha = Array2::zeros((l, k));
        alpha.row_mut(0).assign(&self.emissions.row(0));
        for i in 1..l {
            for b in 0..k {
                let prev = alpha.row(i - 1);
                let lse = log_sum_exp((0..k).map(|a| prev[a] + self.transitions[[a, b]]));
                alpha[[i, b]] = lse + self.emissions[[i, b]];
            }
        }
        alpha
    }

    /// Backward log-potentials, excluding the emission at the position itself.
    fn backward(&self) -> Array2<f64> {
        let (l, k) = self.emissions.dim();
        let mut beta = Array2::zeros((l, k));
        for i in (0..l.saturating_sub(1)).rev() {
            for a in 0..k {
                let lse = log_sum_exp((0..k).map(|b| {
                    self.transitions[[a, b]] + self.emissions[[i + 1, b]] + beta[[i + 1, b]]
                }));
                beta[[i, a]] = lse;
            }
        }
        beta
    }

    pub fn log_partition(&self) -> Result<f64> {
        self.check_nonempty()?;
        let alpha = self.forward();
        Ok(log_sum_exp(alpha.row(self.len() - 1).iter().copied()))
    }

    fn check_gold(&self, gold: &[usize]) -> Result<()> {
        if gold.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: gold.len(),
            });
        }
        if let Some(&y) = gold.iter().find(|&&y| y >= self.num_tags()) {
            return Err(Error::ShapeMismatch(format!(
                "gold tag {y} with {} tags",
                self.num_tags()
            )));
        }
        Ok(())
    }

    pub fn nll(&self, gold: &[usize]) -> Result<f64> {
        self.check_gold(gold)?;
        Ok(self.log_partition()? - self.path_score(gold))
    }

    /// Per-position tag marginals `p(y_i = k)`.
    pub fn marginals(&self) -> Result<Array2<f64>> {
        self.check_nonempty()?;
        let alpha = self.forward();
        let beta = self.backward();
        let log_z = log_sum_exp(alpha.row(self.len() - 1).iter().copied());
        Ok((alpha + beta).mapv(|x| (x - log_z).exp()))
    }

    /// NLL and its exact gradients: `dS = p(y_i = k) - 1{gold}`,
    /// `dT = expected transition counts - gold transition counts`.
    pub fn nll_with_gradients(&self, gold: &[usize]) -> Result<CrfGradient> {
        self.check_nonempty()?;
        self.check_gold(gold)?;
        let (l, k) = self.emissions.dim();
        let alpha = self.forward();
        let beta = self.backward();
        let log_z = log_sum_exp(alpha.row(l - 1).iter().copied());
        let mut d_emissions = (&alpha + &beta).mapv(|x| (x - log_z).exp());
        let mut d_transitions = Array2::zeros((k, k));
        for i in 0..l - 1 {
            for a in 0..k {
                for b in 0..k {
                    let lp = alpha[[i, a]]
                        + self.transitions[[a, b]]
                        + self.emissions[[i + 1, b]]
                        + beta[[i + 1, b]]
                        - log_z;
                    d_transitions[[a, b]] += lp.exp();
                }
            }
        }
        for (i, &y) in gold.iter().enumerate() {
            d_emissions[[i, y]] -= 1.0;
            if i > 0 {
                d_transitions[[gold[i - 1], y]] -= 1.0;
            }
        }
        Ok(CrfGradient {
            nll: log_z - self.path_score(gold),
            d_emissions,
            d_transitions,
        })
    }

    /// Highest-scoring path. Ties go to the lowest tag index, both for the
    /// final tag and at every backtracking step.
    pub fn viterbi(&self) -> Result<Decoded> {
        self.check_nonempty()?;
        let (l, k) = self.emissions.dim();
        let mut delta = Array2::zeros((l, k));
        let mut back = Array2::<usize>::zeros((l, k));
        delta.row_mut(0).assign(&self.emissions.row(0));
        for i in 1..l {
            for b in 0..k {
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for a in 0..k {
                    let s = delta[[i - 1, a]] + self.transitions[[a, b]];
                    if s > best_score {
                        best_score = s;
                        best = a;
                    }
                }
                delta[[i, b]] = best_score + self.emissions[[i, b]];
                back[[i, b]] = best;
            }
        }
        let mut last = 0;
        for b in 1..k {
            if delta[[l - 1, b]] > delta[[l - 1, last]] {
                last = b;
            }
        }
        let score = delta[[l - 1, last]];
        let mut tags = vec![0; l];
        tags[l - 1] = last;
        for i in (1..l).rev() {
            tags[i - 1] = back[[i, tags[i]]];
        }
        Ok(Decoded { tags, score })
    }
}

pub fn log_partition(lattice: &ScoreLattice) -> Result<f64> {
    lattice.log_partition()
}

pub fn nll(lattice: &ScoreLattice, gold: &[usize]) -> Result<f64> {
    lattice.nll(gold)
}

pub fn viterbi(lattice: &ScoreLattice) -> Result<Decoded> {
    lattice.viterbi()
}

/// Element-wise mean of the emission and transition scores of several
/// lattices over the same sentence.
pub fn average_lattices(lattices: &[ScoreLattice]) -> Result<ScoreLattice> {
    let first = lattices.first().ok_or(Error::EmptyInput)?;
    let mut emissions = Array2::zeros(first.emissions.raw_dim());
    let mut transitions = Array2::zeros(first.transitions.raw_dim());
    for lat in lattices {
        if lat.emissions.dim() != first.emissions.dim()
            || lat.transitions.dim() != first.transitions.dim()
        {
            return Err(Error::ShapeMismatch(format!(
                "lattice {:?}/{:?} vs {:?}/{:?}",
                lat.emissions.dim(),
                lat.transitions.dim(),
                first.emissions.dim(),
                first.transitions.dim()
            )));
        }
        emissions += &lat.emissions;
        transitions += &lat.transitions;
    }
    let n = lattices.len() as f64;
    emissions /= n;
    transitions /= n;
    ScoreLattice::new(emissions, transitions)
}

/// Viterbi over the averaged scores of independently trained models.
pub fn ensemble_decode(lattices: &[ScoreLattice]) -> Result<Decoded> {
    average_lattices(lattices)?.viterbi()
}

/// Column sums, the gradient of a bias broadcast over rows.
pub(crate) fn column_sums(m: &Array2<f64>) -> Array2<f64> {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}
