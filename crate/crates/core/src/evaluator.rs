//! Subsumption ranking.
//!
//! For a held-out `C ⊑ D`, every candidate class X is scored against D and
//! the rank of C in increasing cost order is recorded. Ties are broken by
//! class index so ranks are deterministic.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::EmbeddingState;
use crate::normalizer::{ClassId, ClassInfo};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no test cases to evaluate")]
    EmptyTests,
    #[error("class {0:?} is not among the ranking candidates")]
    MissingCandidate(ClassId),
}

/// Which side of the held-out pair is ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    /// Rank candidates by closeness to D and look for C.
    #[default]
    SubFromSuper,
    /// Rank candidates by closeness to C and look for D.
    SuperFromSub,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::SubFromSuper => "sub-from-super",
            Direction::SuperFromSub => "super-from-sub",
        })
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sub-from-super" | "d2c" => Ok(Direction::SubFromSuper),
            "super-from-sub" | "c2d" => Ok(Direction::SuperFromSub),
            _ => Err(format!(
                "unknown direction `{s}` (expected sub-from-super or super-from-sub)"
            )),
        }
    }
}

/// How implausible `sub ⊑ sup` is; lower ranks first.
pub trait SubsumptionCost: Sync {
    fn cost(&self, sub: ClassId, sup: ClassId) -> f64;
}

/// Euclidean distance between class centers.
pub struct CenterDistance<'a>(pub &'a EmbeddingState);

impl SubsumptionCost for CenterDistance<'_> {
    fn cost(&self, sub: ClassId, sup: ClassId) -> f64 {
        distance(self.0.center(sub), self.0.center(sup))
    }
}

/// `‖f(sub) − f(sup)‖ + r(sub) − r(sup)`, the containment slack of the balls.
pub struct RadiusAdjusted<'a>(pub &'a EmbeddingState);

impl SubsumptionCost for RadiusAdjusted<'_> {
    fn cost(&self, sub: ClassId, sup: ClassId) -> f64 {
        distance(self.0.center(sub), self.0.center(sup)) + self.0.radius(sub) - self.0.radius(sup)
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Classes eligible as ranking answers: everything except fresh and nominal classes.
pub fn candidate_set(classes: &[ClassInfo]) -> Vec<ClassId> {
    classes
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_fresh() && !c.is_nominal())
        .map(|(i, _)| ClassId(i))
        .collect()
}

/// 1 + number of candidates strictly better than `target`, plus equally good
/// candidates with a smaller class index.
pub fn rank_by_key(
    target: ClassId,
    candidates: &[ClassId],
    key: impl Fn(ClassId) -> f64,
) -> Result<usize, EvalError> {
    if !candidates.contains(&target) {
        return Err(EvalError::MissingCandidate(target));
    }
    let kt = key(target);
    let mut rank = 1;
    for &x in candidates {
        if x == target {
            continue;
        }
        let kx = key(x);
        if kx < kt || (kx == kt && x < target) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Known partners removed from the candidate list when ranking (filtered setting).
#[derive(Debug, Clone, Default)]
pub struct KnownPairs {
    subs_of: HashMap<ClassId, HashSet<ClassId>>,
    sups_of: HashMap<ClassId, HashSet<ClassId>>,
}

impl KnownPairs {
    pub fn new(pairs: impl IntoIterator<Item = (ClassId, ClassId)>) -> Self {
        let mut k = KnownPairs::default();
        for (c, d) in pairs {
            k.subs_of.entry(d).or_default().insert(c);
            k.sups_of.entry(c).or_default().insert(d);
        }
        k
    }

    fn partners(&self, source: ClassId, direction: Direction) -> Option<&HashSet<ClassId>> {
        match direction {
            Direction::SubFromSuper => self.subs_of.get(&source),
            Direction::SuperFromSub => self.sups_of.get(&source),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RankOptions<'a> {
    pub direction: Direction,
    pub filter: Option<&'a KnownPairs>,
}

/// Rank of the answer for held-out `sub ⊑ sup`. The source class itself is
/// never a candidate.
pub fn rank_pair(
    sub: ClassId,
    sup: ClassId,
    cost: &dyn SubsumptionCost,
    candidates: &[ClassId],
    opts: &RankOptions<'_>,
) -> Result<usize, EvalError> {
    let (source, target) = match opts.direction {
        Direction::SubFromSuper => (sup, sub),
        Direction::SuperFromSub => (sub, sup),
    };
    let excluded = opts.filter.and_then(|f| f.partners(source, opts.direction));
    let pool: Vec<ClassId> = candidates
        .iter()
        .copied()
        .filter(|&x| x != source)
        .filter(|x| *x == target || !excluded.is_some_and(|e| e.contains(x)))
        .collect();
    match opts.direction {
        Direction::SubFromSuper => rank_by_key(target, &pool, |x| cost.cost(x, source)),
        Direction::SuperFromSub => rank_by_key(target, &pool, |x| cost.cost(source, x)),
    }
}

/// Rank of C among `candidates` ordered by center distance from D.
pub fn rank_one(
    c: ClassId,
    d: ClassId,
    state: &EmbeddingState,
    candidates: &[ClassId],
) -> Result<usize, EvalError> {
    rank_pair(c, d, &CenterDistance(state), candidates, &RankOptions::default())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub ranks: Vec<usize>,
    pub hits1: f64,
    pub hits10: f64,
    pub hits100: f64,
    pub median_rank: usize,
    pub p90_rank: usize,
    pub candidate_count: usize,
}

impl RankReport {
    pub fn from_ranks(ranks: Vec<usize>, candidate_count: usize) -> Result<Self, EvalError> {
        if ranks.is_empty() {
            return Err(EvalError::EmptyTests);
        }
        let n = ranks.len();
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        // ceil(q·n)-th order statistic, 1-based
        let median_rank = sorted[n.div_ceil(2) - 1];
        let p90_rank = sorted[(9 * n).div_ceil(10) - 1];
        Ok(RankReport {
            hits1: hits(1),
            hits10: hits(10),
            hits100: hits(100),
            median_rank,
            p90_rank,
            candidate_count,
            ranks,
        })
    }

    pub fn metrics(&self) -> Vec<(&'static str, String)> {
        vec![
            ("hits@1", format!("{}", self.hits1)),
            ("hits@10", format!("{}", self.hits10)),
            ("hits@100", format!("{}", self.hits100)),
            ("median_rank", self.median_rank.to_string()),
            ("p90_rank", self.p90_rank.to_string()),
            ("test_count", self.ranks.len().to_string()),
            ("candidate_count", self.candidate_count.to_string()),
        ]
    }

    /// `metric<TAB>value` rows, preceded by `#` comment lines for `notes`.
    pub fn to_tsv(&self, notes: &[(&str, String)]) -> String {
        let mut s = String::new();
        for (k, v) in notes {
            s.push_str(&format!("# {k}={v}\n"));
        }
        s.push_str("metric\tvalue\n");
        for (k, v) in self.metrics() {
            s.push_str(&format!("{k}\t{v}\n"));
        }
        s
    }

    pub fn ranks_text(&self) -> String {
        let mut s = String::with_capacity(self.ranks.len() * 6);
        for r in &self.ranks {
            s.push_str(&r.to_string());
            s.push('\n');
        }
        s
    }
}

/// Ranks every held-out pair in parallel; rank order follows `tests`.
pub fn evaluate_with(
    tests: &[(ClassId, ClassId)],
    cost: &dyn SubsumptionCost,
    candidates: &[ClassId],
    opts: &RankOptions<'_>,
) -> Result<RankReport, EvalError> {
    if tests.is_empty() {
        return Err(EvalError::EmptyTests);
    }
    let ranks = tests
        .par_iter()
        .map(|&(c, d)| rank_pair(c, d, cost, candidates, opts))
        .collect::<Result<Vec<_>, _>>()?;
    RankReport::from_ranks(ranks, candidates.len())
}

/// Center-distance ranking of the geometric model.
pub fn evaluate(
    tests: &[(ClassId, ClassId)],
    state: &EmbeddingState,
    candidates: &[ClassId],
) -> Result<RankReport, EvalError> {
    evaluate_with(tests, &CenterDistance(state), candidates, &RankOptions::default())
}
