//! Triple-based baselines: TransE, TransH and DistMult.
//!
//! Subsumption `C ⊑ D` becomes the triple `(C, subClassOf, D)` and existential
//! axioms become `(C, R, D)`. Every score is "higher is better".

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::evaluator::SubsumptionCost;
use crate::geometry::{fmt_f64, parse_header_fields, Matrix, ModelIoError};
use crate::normalizer::{ClassId, NormalAxiom, NormalizedOntology, RelationId};

/// Name of the distinguished subsumption relation in persisted models.
pub const SUBCLASS_RELATION: &str = "subClassOf";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    TransE,
    TransH,
    DistMult,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::TransE => "transe",
            BaselineKind::TransH => "transh",
            BaselineKind::DistMult => "distmult",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(BaselineKind::TransE),
            "transh" => Ok(BaselineKind::TransH),
            "distmult" => Ok(BaselineKind::DistMult),
            _ => Err(format!(
                "unknown baseline `{s}` (expected transe, transh or distmult)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TripleRelation {
    SubClassOf,
    Role(RelationId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: ClassId,
    pub relation: TripleRelation,
    pub tail: ClassId,
    /// Extracted from `∃R.C ⊑ D` (same orientation as `C ⊑ ∃R.D`).
    pub from_nf4: bool,
}

pub fn extract_triples(onto: &NormalizedOntology) -> Vec<Triple> {
    onto.axioms
        .iter()
        .filter_map(|ax| match *ax {
            NormalAxiom::Nf1(c, d) => Some(Triple {
                head: c,
                relation: TripleRelation::SubClassOf,
                tail: d,
                from_nf4: false,
            }),
            NormalAxiom::Nf3(c, r, d) => Some(Triple {
                head: c,
                relation: TripleRelation::Role(r),
                tail: d,
                from_nf4: false,
            }),
            NormalAxiom::Nf4(r, c, d) => Some(Triple {
                head: c,
                relation: TripleRelation::Role(r),
                tail: d,
                from_nf4: true,
            }),
            _ => None,
        })
        .collect()
}

pub fn score_transe(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    let mut sq = 0.0;
    for i in 0..h.len() {
        let v = h[i] + r[i] - t[i];
        sq += v * v;
    }
    -sq.sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `w` must be a unit normal of the relation hyperplane.
pub fn score_transh(h: &[f64], d: &[f64], w: &[f64], t: &[f64]) -> f64 {
    let wh = dot(w, h);
    let wt = dot(w, t);
    let mut sq = 0.0;
    for i in 0..h.len() {
        let v = (h[i] - wh * w[i]) + d[i] - (t[i] - wt * w[i]);
        sq += v * v;
    }
    -sq.sqrt()
}

pub fn score_distmult(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..h.len() {
        s += h[i] * r[i] * t[i];
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub kind: BaselineKind,
    pub dim: usize,
    pub entities: Matrix,
    /// One row per ontology relation, then the subsumption relation last.
    pub relations: Matrix,
    /// TransH hyperplane normals, same rows as `relations`.
    pub normals: Option<Matrix>,
}

impl BaselineState {
    pub fn relation_row(&self, r: TripleRelation) -> usize {
        match r {
            TripleRelation::Role(id) => id.0,
            TripleRelation::SubClassOf => self.relations.rows() - 1,
        }
    }

    pub fn score(&self, h: ClassId, r: TripleRelation, t: ClassId) -> f64 {
        self.score_rows(h.0, self.relation_row(r), t.0)
    }

    fn score_rows(&self, h: usize, r: usize, t: usize) -> f64 {
        let (eh, er, et) = (self.entities.row(h), self.relations.row(r), self.entities.row(t));
        match self.kind {
            BaselineKind::TransE => score_transe(eh, er, et),
            BaselineKind::TransH => {
                let w = self.normals.as_ref().expect("TransH normals").row(r);
                score_transh(eh, er, w, et)
            }
            BaselineKind::DistMult => score_distmult(eh, er, et),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entities.as_slice().iter().all(|x| x.is_finite())
            && self.relations.as_slice().iter().all(|x| x.is_finite())
            && self
                .normals
                .as_ref()
                .is_none_or(|n| n.as_slice().iter().all(|x| x.is_finite()))
    }

    /// Adds `scale · ∂score/∂θ` to the parameters of one triple.
    fn ascend(&mut self, h: usize, r: usize, t: usize, scale: f64) {
        let dim = self.dim;
        let eh = self.entities.row(h).to_vec();
        let et = self.entities.row(t).to_vec();
        let er = self.relations.row(r).to_vec();
        let mut gh = vec![0.0; dim];
        let mut gt = vec![0.0; dim];
        let mut gr = vec![0.0; dim];
        let mut gw = vec![0.0; dim];
        match self.kind {
            BaselineKind::TransE => {
                let v: Vec<f64> = (0..dim).map(|i| eh[i] + er[i] - et[i]).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    for i in 0..dim {
                        let u = v[i] / n;
                        gh[i] = -u;
                        gr[i] = -u;
                        gt[i] = u;
                    }
                }
            }
            BaselineKind::TransH => {
                let w = self.normals.as_ref().expect("TransH normals").row(r).to_vec();
                let a: Vec<f64> = (0..dim).map(|i| eh[i] - et[i]).collect();
                let wa = dot(&w, &a);
                let v: Vec<f64> = (0..dim).map(|i| a[i] + er[i] - wa * w[i]).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    let u: Vec<f64> = v.iter().map(|x| x / n).collect();
                    let wu = dot(&w, &u);
                    for i in 0..dim {
                        let proj = u[i] - wu * w[i];
                        gh[i] = -proj;
                        gt[i] = proj;
                        gr[i] = -u[i];
                        gw[i] = wa * u[i] + wu * a[i];
                    }
                }
            }
            BaselineKind::DistMult => {
                for i in 0..dim {
                    gh[i] = er[i] * et[i];
                    gr[i] = eh[i] * et[i];
                    gt[i] = eh[i] * er[i];
                }
            }
        }
        for (p, g) in self.entities.row_mut(h).iter_mut().zip(&gh) {
            *p += scale * g;
        }
        for (p, g) in self.entities.row_mut(t).iter_mut().zip(&gt) {
            *p += scale * g;
        }
        for (p, g) in self.relations.row_mut(r).iter_mut().zip(&gr) {
            *p += scale * g;
        }
        if let Some(normals) = self.normals.as_mut() {
            let row = normals.row_mut(r);
            for (p, g) in row.iter_mut().zip(&gw) {
                *p += scale * g;
            }
            normalize_row(row);
        }
    }
}

fn normalize_row(row: &mut [f64]) {
    let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in row.iter_mut() {
            *x /= n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub dim: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            dim: 50,
            margin: 1.0,
            lr: 0.01,
            epochs: 100,
            seed: 42,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("no training triples")]
    NoTriples,
    #[error("invalid baseline config: {0}")]
    Config(String),
    #[error("parameters became non-finite in epoch {0}")]
    NonFinite(usize),
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.dim < 2 {
            return Err(BaselineError::Config("dim must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(BaselineError::Config("lr must be positive".into()));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(BaselineError::Config("margin must be non-negative".into()));
        }
        Ok(())
    }
}

fn init_state(
    kind: BaselineKind,
    num_entities: usize,
    num_relations: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> BaselineState {
    let bound = 1.0 / (dim as f64).sqrt();
    let mut uniform = |rows: usize| {
        let mut m = Matrix::zeros(rows, dim);
        for x in m.as_mut_slice() {
            *x = rng.gen_range(-bound..bound);
        }
        m
    };
    let entities = uniform(num_entities);
    let relations = uniform(num_relations + 1);
    let normals = (kind == BaselineKind::TransH).then(|| {
        let mut w = uniform(num_relations + 1);
        for i in 0..w.rows() {
            normalize_row(w.row_mut(i));
        }
        w
    });
    BaselineState {
        kind,
        dim,
        entities,
        relations,
        normals,
    }
}

/// Margin ranking with one head-or-tail corruption per positive per epoch,
/// optimized by plain SGD in a fixed, seeded order.
pub fn train_baseline(
    kind: BaselineKind,
    triples: &[Triple],
    num_entities: usize,
    num_relations: usize,
    config: &BaselineConfig,
) -> Result<BaselineState, BaselineError> {
    config.validate()?;
    if triples.is_empty() {
        return Err(BaselineError::NoTriples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = init_state(kind, num_entities, num_relations, config.dim, &mut rng);
    let rows: Vec<(usize, usize, usize)> = triples
        .iter()
        .map(|t| (t.head.0, state.relation_row(t.relation), t.tail.0))
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (h, r, t) = rows[i];
            let corrupt_head = rng.gen_bool(0.5);
            let mut e = rng.gen_range(0..num_entities);
            if num_entities > 1 {
                let orig = if corrupt_head { h } else { t };
                while e == orig {
                    e = rng.gen_range(0..num_entities);
                }
            }
            let (nh, nt) = if corrupt_head { (e, t) } else { (h, e) };
            let pos = state.score_rows(h, r, t);
            let neg = state.score_rows(nh, r, nt);
            if config.margin + neg - pos > 0.0 {
                state.ascend(h, r, t, config.lr);
                state.ascend(nh, r, nt, -config.lr);
            }
        }
        if !state.is_finite() {
            return Err(BaselineError::NonFinite(epoch + 1));
        }
    }
    Ok(state)
}

/// Ranks candidates X for `X ⊑ D` by descending `score(X, subClassOf, D)`.
pub struct BaselineCost<'a>(pub &'a BaselineState);

impl SubsumptionCost for BaselineCost<'_> {
    fn cost(&self, sub: ClassId, sup: ClassId) -> f64 {
        -self.0.score(sub, TripleRelation::SubClassOf, sup)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedBaseline {
    pub entity_names: Vec<String>,
    /// Ontology relation names, without the trailing subsumption relation.
    pub relation_names: Vec<String>,
    pub state: BaselineState,
}

impl SavedBaseline {
    pub fn to_tsv(&self) -> String {
        let st = &self.state;
        let mut s = format!("#geodl-baseline v1 model={} dim={}\n", st.kind, st.dim);
        let mut row = |tag: &str, name: &str, v: &[f64]| {
            s.push_str(tag);
            s.push('\t');
            s.push_str(name);
            for x in v {
                s.push('\t');
                s.push_str(&fmt_f64(*x));
            }
            s.push('\n');
        };
        for (i, n) in self.entity_names.iter().enumerate() {
            row("E", n, st.entities.row(i));
        }
        let rel_names = self
            .relation_names
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(SUBCLASS_RELATION));
        for (i, n) in rel_names.clone().enumerate() {
            row("R", n, st.relations.row(i));
        }
        if let Some(w) = &st.normals {
            for (i, n) in rel_names.enumerate() {
                row("W", n, w.row(i));
            }
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self, ModelIoError> {
        let err = |line: usize, msg: String| ModelIoError::Format { line, msg };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty model file".into()))?;
        if !header.starts_with("#geodl-baseline v1 ") {
            return Err(err(1, "missing `#geodl-baseline v1` header".into()));
        }
        let fields: HashMap<&str, &str> = parse_header_fields(header).into_iter().collect();
        let kind: BaselineKind = fields
            .get("model")
            .ok_or_else(|| err(1, "header lacks model=".into()))?
            .parse()
            .map_err(|e: String| err(1, e))?;
        let dim: usize = fields
            .get("dim")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| err(1, "header lacks a valid dim=".into()))?;
        let mut names: [Vec<String>; 3] = Default::default();
        let mut rows: [Vec<Vec<f64>>; 3] = Default::default();
        for (i, line) in lines {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != dim + 2 {
                return Err(err(i + 1, format!("expected {} fields, found {}", dim + 2, f.len())));
            }
            let slot = match f[0] {
                "E" => 0,
                "R" => 1,
                "W" => 2,
                other => return Err(err(i + 1, format!("unknown row tag `{other}`"))),
            };
            let v = f[2..]
                .iter()
                .map(|x| x.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(i + 1, format!("bad number: {e}")))?;
            names[slot].push(f[1].to_string());
            rows[slot].push(v);
        }
        let [entity_names, mut relation_names, _] = names;
        let [e, r, w] = rows;
        if r.is_empty() {
            return Err(err(1, "model has no relation rows".into()));
        }
        relation_names.pop();
        let normals = match kind {
            BaselineKind::TransH => {
                if w.len() != r.len() {
                    return Err(err(1, "TransH model needs one W row per relation".into()));
                }
                Some(Matrix::from_rows(w, dim))
            }
            _ => None,
        };
        Ok(SavedBaseline {
            entity_names,
            relation_names,
            state: BaselineState {
                kind,
                dim,
                entities: Matrix::from_rows(e, dim),
                relations: Matrix::from_rows(r, dim),
                normals,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalizer::normalize;
    use crate::parser::parse_str;

    #[test]
    fn triples_from_normal_forms() {
        let onto = normalize(&parse_str("subClassOf(A,B)").unwrap().0);
        let t = extract_triples(&onto);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].relation, TripleRelation::SubClassOf);
        assert_eq!((t[0].head, t[0].tail), (ClassId(0), ClassId(1)));

        let onto = normalize(
            &parse_str("subClassOf(A,some(R,B))\nsubClassOf(and(A,B),C)\nsubClassOf(some(R,B),C)")
                .unwrap()
                .0,
        );
        let t = extract_triples(&onto);
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].relation, TripleRelation::Role(RelationId(0)));
        assert!(!t[0].from_nf4);
        assert!(t[1].from_nf4);
        assert_eq!((t[1].head, t[1].tail), (ClassId(1), ClassId(2)));
    }

    #[test]
    fn score_examples() {
        assert_eq!(score_transe(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]), 0.0);
        assert_eq!(score_transe(&[0.3, 0.4], &[0.0, 0.0], &[0.3, 0.4]), 0.0);
        // normal orthogonal to everything: plain TransE
        let (h, d, t) = ([1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.5, 0.5, 0.0]);
        let w = [0.0, 0.0, 1.0];
        assert_eq!(score_transh(&h, &d, &w, &t), score_transe(&h, &d, &t));
        // both entities parallel to the normal project to the origin
        let w = [0.6, 0.8, 0.0];
        assert!(score_transh(&[1.2, 1.6, 0.0], &[0.0; 3], &w, &[0.3, 0.4, 0.0]).abs() < 1e-12);
        assert_eq!(score_distmult(&[1.0, 2.0], &[1.0, 1.0], &[3.0, 4.0]), 11.0);
        assert_eq!(score_distmult(&[0.0, 0.0], &[1.0, 5.0], &[3.0, 4.0]), 0.0);
    }

    fn two_entity_triple() -> Vec<Triple> {
        vec![Triple {
            head: ClassId(0),
            relation: TripleRelation::SubClassOf,
            tail: ClassId(1),
            from_nf4: false,
        }]
    }

    #[test]
    fn single_triple_is_separated_from_corruptions() {
        let triples = two_entity_triple();
        let cfg = BaselineConfig {
            dim: 4,
            margin: 0.5,
            lr: 0.05,
            epochs: 2000,
            seed: 3,
        };
        for kind in [BaselineKind::TransE, BaselineKind::TransH, BaselineKind::DistMult] {
            let st = train_baseline(kind, &triples, 2, 0, &cfg).unwrap();
            let sub = TripleRelation::SubClassOf;
            let pos = st.score(ClassId(0), sub, ClassId(1));
            for (h, t) in [(1, 1), (0, 0)] {
                let neg = st.score(ClassId(h), sub, ClassId(t));
                assert!(pos - neg >= cfg.margin - 1e-9, "{kind}: {pos} vs {neg}");
            }
        }
    }

    #[test]
    fn empty_triples_rejected() {
        let cfg = BaselineConfig::default();
        assert_eq!(
            train_baseline(BaselineKind::TransE, &[], 2, 0, &cfg),
            Err(BaselineError::NoTriples)
        );
        let bad = BaselineConfig { lr: 0.0, ..cfg };
        assert!(matches!(
            train_baseline(BaselineKind::TransE, &two_entity_triple(), 2, 0, &bad),
            Err(BaselineError::Config(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = BaselineConfig {
            dim: 8,
            epochs: 50,
            ..Default::default()
        };
        let triples = two_entity_triple();
        let a = train_baseline(BaselineKind::TransH, &triples, 2, 0, &cfg).unwrap();
        let b = train_baseline(BaselineKind::TransH, &triples, 2, 0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn baseline_tsv_round_trip() {
        let cfg = BaselineConfig {
            dim: 3,
            epochs: 5,
            ..Default::default()
        };
        let onto = normalize(&parse_str("subClassOf(A,some(R,B))\nsubClassOf(B,C)").unwrap().0);
        let triples = extract_triples(&onto);
        let st = train_baseline(BaselineKind::TransH, &triples, 3, 1, &cfg).unwrap();
        let saved = SavedBaseline {
            entity_names: onto.classes.iter().map(|c| c.name.clone()).collect(),
            relation_names: onto.relations.clone(),
            state: st,
        };
        let text = saved.to_tsv();
        assert!(text.starts_with("#geodl-baseline v1 model=transh dim=3\n"));
        assert_eq!(text.lines().filter(|l| l.starts_with("W\t")).count(), 2);
        assert_eq!(SavedBaseline::from_tsv(&text).unwrap(), saved);
    }
}
