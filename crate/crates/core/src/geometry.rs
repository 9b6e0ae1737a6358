//! n-ball embeddings of classes, translation vectors of relations, and the
//! margin losses that tie them to normal-form axioms.
//!
//! A class is a ball with center `f(c)` and radius `r(c) = |raw|`. A relation
//! is a translation vector `f(r)` and, for [`Variant::EmElVar`], a slack
//! `σ(r) = |raw|` that widens the region reachable by the translation.
//! Every loss adds the unit-sphere penalty `P(x) = |‖f(x)‖ − 1|` for each
//! class center it touches.
//!
//! Loss functions take a [`GradSink`], so the same code path produces the
//! bare value ([`NoGrad`]), a sparse per-term gradient ([`LossTerm`]), or a
//! dense batch accumulation ([`Gradient`]).

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::normalizer::{ClassId, ClassInfo, NormalAxiom, RelationId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    EmEl,
    EmElVar,
}

impl Variant {
    pub fn uses_sigma(self) -> bool {
        self == Variant::EmElVar
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::EmEl => "EmEl",
            Variant::EmElVar => "EmElVar",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "emel" => Ok(Variant::EmEl),
            "emelvar" | "emel-var" | "emel(var)" | "emel_var" => Ok(Variant::EmElVar),
            _ => Err(format!("unknown variant `{s}` (expected emel or emel-var)")),
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, cols: usize) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "row length mismatch");
            data.extend(r);
        }
        Matrix { rows: n, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    pub dim: usize,
    pub class_centers: Matrix,
    pub class_radii_raw: Vec<f64>,
    pub relation_vectors: Matrix,
    pub relation_sigmas_raw: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Center,
    Radius,
    Relation,
    Sigma,
}

pub trait GradSink {
    fn add_center(&mut self, row: usize, scale: f64, dir: &[f64]);
    fn add_relation(&mut self, row: usize, scale: f64, dir: &[f64]);
    fn add_radius(&mut self, row: usize, value: f64);
    fn add_sigma(&mut self, row: usize, value: f64);
}

/// Discards gradients.
pub struct NoGrad;

impl GradSink for NoGrad {
    fn add_center(&mut self, _: usize, _: f64, _: &[f64]) {}
    fn add_relation(&mut self, _: usize, _: f64, _: &[f64]) {}
    fn add_radius(&mut self, _: usize, _: f64) {}
    fn add_sigma(&mut self, _: usize, _: f64) {}
}

/// Dense gradient with the same layout as [`EmbeddingState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub centers: Matrix,
    pub radii: Vec<f64>,
    pub relations: Matrix,
    pub sigmas: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(state: &EmbeddingState) -> Self {
        Gradient {
            centers: Matrix::zeros(state.num_classes(), state.dim),
            radii: vec![0.0; state.num_classes()],
            relations: Matrix::zeros(state.num_relations(), state.dim),
            sigmas: vec![0.0; state.num_relations()],
        }
    }

    pub fn clear(&mut self) {
        self.centers.as_mut_slice().fill(0.0);
        self.radii.fill(0.0);
        self.relations.as_mut_slice().fill(0.0);
        self.sigmas.fill(0.0);
    }

    pub fn merge(&mut self, other: &Gradient) {
        add_into(self.centers.as_mut_slice(), other.centers.as_slice());
        add_into(&mut self.radii, &other.radii);
        add_into(self.relations.as_mut_slice(), other.relations.as_slice());
        add_into(&mut self.sigmas, &other.sigmas);
    }

    pub fn is_zero(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|&x| x == 0.0))
    }

    /// Blocks in the order centers, radii, relations, sigmas.
    pub fn blocks(&self) -> [&[f64]; 4] {
        [
            self.centers.as_slice(),
            &self.radii,
            self.relations.as_slice(),
            &self.sigmas,
        ]
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl GradSink for Gradient {
    fn add_center(&mut self, row: usize, scale: f64, dir: &[f64]) {
        for (g, d) in self.centers.row_mut(row).iter_mut().zip(dir) {
            *g += scale * d;
        }
    }

    fn add_relation(&mut self, row: usize, scale: f64, dir: &[f64]) {
        for (g, d) in self.relations.row_mut(row).iter_mut().zip(dir) {
            *g += scale * d;
        }
    }

    fn add_radius(&mut self, row: usize, value: f64) {
        self.radii[row] += value;
    }

    fn add_sigma(&mut self, row: usize, value: f64) {
        self.sigmas[row] += value;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub block: Block,
    pub row: usize,
    /// One value per coordinate for vector blocks, a single value for scalars.
    pub values: Vec<f64>,
}

/// One loss value with its gradient contributions keyed by parameter block and row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    /// Sum of the hinge parts only (no penalties or σ regularizer).
    pub hinge: f64,
    pub grads: Vec<GradEntry>,
}

impl LossTerm {
    fn entry(&mut self, block: Block, row: usize, len: usize) -> &mut Vec<f64> {
        let pos = self
            .grads
            .iter()
            .position(|e| e.block == block && e.row == row);
        let i = match pos {
            Some(i) => i,
            None => {
                self.grads.push(GradEntry {
                    block,
                    row,
                    values: vec![0.0; len],
                });
                self.grads.len() - 1
            }
        };
        &mut self.grads[i].values
    }

    pub fn gradient(&self, block: Block, row: usize) -> Option<&[f64]> {
        self.grads
            .iter()
            .find(|e| e.block == block && e.row == row)
            .map(|e| e.values.as_slice())
    }
}

impl GradSink for LossTerm {
    fn add_center(&mut self, row: usize, scale: f64, dir: &[f64]) {
        for (g, d) in self.entry(Block::Center, row, dir.len()).iter_mut().zip(dir) {
            *g += scale * d;
        }
    }

    fn add_relation(&mut self, row: usize, scale: f64, dir: &[f64]) {
        for (g, d) in self.entry(Block::Relation, row, dir.len()).iter_mut().zip(dir) {
            *g += scale * d;
        }
    }

    fn add_radius(&mut self, row: usize, value: f64) {
        self.entry(Block::Radius, row, 1)[0] += value;
    }

    fn add_sigma(&mut self, row: usize, value: f64) {
        self.entry(Block::Sigma, row, 1)[0] += value;
    }
}

/// Hyperparameters shared by every loss term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub margin: f64,
    pub variant: Variant,
    /// Multiplier on the σ regularizer of the existential losses.
    pub sigma_weight: f64,
}

impl LossParams {
    pub fn new(margin: f64, variant: Variant) -> Self {
        LossParams {
            margin,
            variant,
            sigma_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub hinge: f64,
}

/// A training signal: a positive axiom, a corrupted existential, or a
/// nominal class pulled toward zero radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Positive(NormalAxiom),
    NegativeNf3(ClassId, RelationId, ClassId),
    NominalPoint(ClassId),
}

/// Per-kind loss sums over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub nf1: f64,
    pub nf2: f64,
    pub nf3: f64,
    pub nf4: f64,
    pub disjoint: f64,
    pub bottom: f64,
    pub negative: f64,
    pub nominal: f64,
    pub nf3_hinge: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.nf1
            + self.nf2
            + self.nf3
            + self.nf4
            + self.disjoint
            + self.bottom
            + self.negative
            + self.nominal
    }

    pub fn add(&mut self, other: &LossBreakdown) {
        self.nf1 += other.nf1;
        self.nf2 += other.nf2;
        self.nf3 += other.nf3;
        self.nf4 += other.nf4;
        self.disjoint += other.disjoint;
        self.bottom += other.bottom;
        self.negative += other.negative;
        self.nominal += other.nominal;
        self.nf3_hinge += other.nf3_hinge;
    }

    fn record(&mut self, term: &Term, loss: LossValue) {
        let slot = match term {
            Term::Positive(NormalAxiom::Nf1(..)) => &mut self.nf1,
            Term::Positive(NormalAxiom::Nf2(..)) => &mut self.nf2,
            Term::Positive(NormalAxiom::Nf3(..)) => {
                self.nf3_hinge += loss.hinge;
                &mut self.nf3
            }
            Term::Positive(NormalAxiom::Nf4(..)) => &mut self.nf4,
            Term::Positive(NormalAxiom::Disjoint(..)) => &mut self.disjoint,
            Term::Positive(NormalAxiom::BottomSub(..)) => &mut self.bottom,
            Term::NegativeNf3(..) => &mut self.negative,
            Term::NominalPoint(..) => &mut self.nominal,
        };
        *slot += loss.value;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Derivative of |x|, taken as 0 at the kink.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

enum Offset {
    None,
    Plus(usize),
    Minus(usize),
}

impl EmbeddingState {
    pub fn zeros(num_classes: usize, num_relations: usize, dim: usize) -> Self {
        EmbeddingState {
            dim,
            class_centers: Matrix::zeros(num_classes, dim),
            class_radii_raw: vec![0.0; num_classes],
            relation_vectors: Matrix::zeros(num_relations, dim),
            relation_sigmas_raw: vec![0.0; num_relations],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_radii_raw.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_sigmas_raw.len()
    }

    pub fn center(&self, c: ClassId) -> &[f64] {
        self.class_centers.row(c.0)
    }

    pub fn relation(&self, r: RelationId) -> &[f64] {
        self.relation_vectors.row(r.0)
    }

    pub fn radius(&self, c: ClassId) -> f64 {
        self.class_radii_raw[c.0].abs()
    }

    pub fn sigma(&self, r: RelationId, variant: Variant) -> f64 {
        if variant.uses_sigma() {
            self.relation_sigmas_raw[r.0].abs()
        } else {
            0.0
        }
    }

    pub fn set_center(&mut self, c: ClassId, v: &[f64]) {
        self.class_centers.row_mut(c.0).copy_from_slice(v);
    }

    pub fn set_relation(&mut self, r: RelationId, v: &[f64]) {
        self.relation_vectors.row_mut(r.0).copy_from_slice(v);
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Blocks in the order centers, radii, relations, sigmas.
    pub fn blocks(&self) -> [&[f64]; 4] {
        [
            self.class_centers.as_slice(),
            &self.class_radii_raw,
            self.relation_vectors.as_slice(),
            &self.relation_sigmas_raw,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.class_centers.as_mut_slice(),
            &mut self.class_radii_raw,
            self.relation_vectors.as_mut_slice(),
            &mut self.relation_sigmas_raw,
        ]
    }

    fn penalty(&self, c: ClassId, sink: &mut impl GradSink) -> f64 {
        let x = self.center(c);
        let n = norm(x);
        if n > 0.0 {
            sink.add_center(c.0, sign(n - 1.0) / n, x);
        }
        (n - 1.0).abs()
    }

    fn radius_grad(&self, c: ClassId, scale: f64, sink: &mut impl GradSink) {
        sink.add_radius(c.0, scale * sign(self.class_radii_raw[c.0]));
    }

    fn sigma_grad(&self, r: RelationId, scale: f64, p: &LossParams, sink: &mut impl GradSink) {
        if p.variant.uses_sigma() {
            sink.add_sigma(r.0, scale * sign(self.relation_sigmas_raw[r.0]));
        }
    }

    /// `v = f(a) ± f(r) − f(b)` and `‖v‖`.
    fn displacement(&self, a: ClassId, offset: Offset, b: ClassId) -> (Vec<f64>, f64) {
        let (ca, cb) = (self.center(a), self.center(b));
        let v: Vec<f64> = match offset {
            Offset::None => ca.iter().zip(cb).map(|(x, y)| x - y).collect(),
            Offset::Plus(r) => {
                let rv = self.relation_vectors.row(r);
                ca.iter().zip(rv).zip(cb).map(|((x, t), y)| x + t - y).collect()
            }
            Offset::Minus(r) => {
                let rv = self.relation_vectors.row(r);
                ca.iter().zip(rv).zip(cb).map(|((x, t), y)| x - t - y).collect()
            }
        };
        let n = norm(&v);
        (v, n)
    }

    /// Pushes `scale · ∂‖v‖/∂θ` where `v = f(a) ± f(r) − f(b)`.
    fn distance_grad(
        &self,
        v: &[f64],
        n: f64,
        a: ClassId,
        offset: Offset,
        b: ClassId,
        scale: f64,
        sink: &mut impl GradSink,
    ) {
        if n == 0.0 {
            return;
        }
        let s = scale / n;
        sink.add_center(a.0, s, v);
        sink.add_center(b.0, -s, v);
        match offset {
            Offset::None => {}
            Offset::Plus(r) => sink.add_relation(r, s, v),
            Offset::Minus(r) => sink.add_relation(r, -s, v),
        }
    }

    /// `C ⊑ D`: ball of C inside ball of D.
    pub fn nf1(&self, c: ClassId, d: ClassId, p: &LossParams, sink: &mut impl GradSink) -> LossValue {
        let (v, n) = self.displacement(c, Offset::None, d);
        let arg = n + self.radius(c) - self.radius(d) - p.margin;
        let hinge = arg.max(0.0);
        if arg > 0.0 {
            self.distance_grad(&v, n, c, Offset::None, d, 1.0, sink);
            self.radius_grad(c, 1.0, sink);
            self.radius_grad(d, -1.0, sink);
        }
        let value = hinge + self.penalty(c, sink) + self.penalty(d, sink);
        LossValue { value, hinge }
    }

    /// `C ⊓ D ⊑ E`.
    pub fn nf2(
        &self,
        c: ClassId,
        d: ClassId,
        e: ClassId,
        p: &LossParams,
        sink: &mut impl GradSink,
    ) -> LossValue {
        let (rc, rd) = (self.radius(c), self.radius(d));

        let (v1, n1) = self.displacement(c, Offset::None, d);
        let a1 = n1 - rc - rd - p.margin;
        if a1 > 0.0 {
            self.distance_grad(&v1, n1, c, Offset::None, d, 1.0, sink);
            self.radius_grad(c, -1.0, sink);
            self.radius_grad(d, -1.0, sink);
        }

        let (v2, n2) = self.displacement(c, Offset::None, e);
        let a2 = n2 - rc - p.margin;
        if a2 > 0.0 {
            self.distance_grad(&v2, n2, c, Offset::None, e, 1.0, sink);
            self.radius_grad(c, -1.0, sink);
        }

        let (v3, n3) = self.displacement(d, Offset::None, e);
        let a3 = n3 - rd - p.margin;
        if a3 > 0.0 {
            self.distance_grad(&v3, n3, d, Offset::None, e, 1.0, sink);
            self.radius_grad(d, -1.0, sink);
        }

        let hinge = a1.max(0.0) + a2.max(0.0) + a3.max(0.0);
        let value = hinge + self.penalty(c, sink) + self.penalty(d, sink) + self.penalty(e, sink);
        LossValue { value, hinge }
    }

    /// `C ⊑ ∃R.D`: the translated ball of C lands within σ(R) of the ball of D.
    pub fn nf3(
        &self,
        c: ClassId,
        r: RelationId,
        d: ClassId,
        p: &LossParams,
        sink: &mut impl GradSink,
    ) -> LossValue {
        let sigma = self.sigma(r, p.variant);
        let (v, n) = self.displacement(c, Offset::Plus(r.0), d);
        let arg = n + self.radius(c) - self.radius(d) - sigma - p.margin;
        let hinge = arg.max(0.0);
        if arg > 0.0 {
            self.distance_grad(&v, n, c, Offset::Plus(r.0), d, 1.0, sink);
            self.radius_grad(c, 1.0, sink);
            self.radius_grad(d, -1.0, sink);
            self.sigma_grad(r, -1.0, p, sink);
        }
        let reg = self.sigma_regularizer(r, p, sink);
        let value = hinge + self.penalty(c, sink) + self.penalty(d, sink) + reg;
        LossValue { value, hinge }
    }

    /// `∃R.C ⊑ D`: the reverse translation of C's ball meets D's ball.
    pub fn nf4(
        &self,
        r: RelationId,
        c: ClassId,
        d: ClassId,
        p: &LossParams,
        sink: &mut impl GradSink,
    ) -> LossValue {
        let sigma = self.sigma(r, p.variant);
        let (v, n) = self.displacement(c, Offset::Minus(r.0), d);
        let arg = n - self.radius(c) - self.radius(d) - sigma - p.margin;
        let hinge = arg.max(0.0);
        if arg > 0.0 {
            self.distance_grad(&v, n, c, Offset::Minus(r.0), d, 1.0, sink);
            self.radius_grad(c, -1.0, sink);
            self.radius_grad(d, -1.0, sink);
            self.sigma_grad(r, -1.0, p, sink);
        }
        let reg = self.sigma_regularizer(r, p, sink);
        let value = hinge + self.penalty(c, sink) + self.penalty(d, sink) + reg;
        LossValue { value, hinge }
    }

    // Zero (not skipped) under EmEl so both variants run the same additions.
    fn sigma_regularizer(&self, r: RelationId, p: &LossParams, sink: &mut impl GradSink) -> f64 {
        if p.variant.uses_sigma() {
            self.sigma_grad(r, p.sigma_weight, p, sink);
            p.sigma_weight * self.sigma(r, p.variant)
        } else {
            0.0
        }
    }

    /// `C ⊓ D ⊑ ⊥`: the two balls are separated by at least the margin.
    pub fn disjoint(&self, c: ClassId, d: ClassId, p: &LossParams, sink: &mut impl GradSink) -> LossValue {
        let (v, n) = self.displacement(c, Offset::None, d);
        let arg = self.radius(c) + self.radius(d) - n + p.margin;
        let hinge = arg.max(0.0);
        if arg > 0.0 {
            self.distance_grad(&v, n, c, Offset::None, d, -1.0, sink);
            self.radius_grad(c, 1.0, sink);
            self.radius_grad(d, 1.0, sink);
        }
        let value = hinge + self.penalty(c, sink) + self.penalty(d, sink);
        LossValue { value, hinge }
    }

    /// `C ⊑ ⊥`: radius driven to zero.
    pub fn bottom(&self, c: ClassId, sink: &mut impl GradSink) -> LossValue {
        self.radius_grad(c, 1.0, sink);
        let value = self.radius(c);
        LossValue { value, hinge: value }
    }

    /// Corrupted existential `(C, R, D′)`: push the translated ball away from D′.
    pub fn nf3_negative(
        &self,
        c: ClassId,
        r: RelationId,
        d: ClassId,
        p: &LossParams,
        sink: &mut impl GradSink,
    ) -> LossValue {
        let sigma = self.sigma(r, p.variant);
        let (v, n) = self.displacement(c, Offset::Plus(r.0), d);
        let arg = self.radius(c) + self.radius(d) + sigma + p.margin - n;
        let hinge = arg.max(0.0);
        if arg > 0.0 {
            self.distance_grad(&v, n, c, Offset::Plus(r.0), d, -1.0, sink);
            self.radius_grad(c, 1.0, sink);
            self.radius_grad(d, 1.0, sink);
            self.sigma_grad(r, 1.0, p, sink);
        }
        let value = hinge + self.penalty(c, sink) + self.penalty(d, sink);
        LossValue { value, hinge }
    }

    pub fn axiom_loss(&self, ax: &NormalAxiom, p: &LossParams, sink: &mut impl GradSink) -> LossValue {
        match *ax {
            NormalAxiom::Nf1(c, d) => self.nf1(c, d, p, sink),
            NormalAxiom::Nf2(c, d, e) => self.nf2(c, d, e, p, sink),
            NormalAxiom::Nf3(c, r, d) => self.nf3(c, r, d, p, sink),
            NormalAxiom::Nf4(r, c, d) => self.nf4(r, c, d, p, sink),
            NormalAxiom::Disjoint(c, d) => self.disjoint(c, d, p, sink),
            NormalAxiom::BottomSub(c) => self.bottom(c, sink),
        }
    }

    pub fn term_loss(&self, term: &Term, p: &LossParams, sink: &mut impl GradSink) -> LossValue {
        match *term {
            Term::Positive(ref ax) => self.axiom_loss(ax, p, sink),
            Term::NegativeNf3(c, r, d) => self.nf3_negative(c, r, d, p, sink),
            Term::NominalPoint(c) => self.bottom(c, sink),
        }
    }

    /// Loss value and sparse gradient of one term.
    pub fn term(&self, term: &Term, p: &LossParams) -> LossTerm {
        let mut out = LossTerm::default();
        let v = self.term_loss(term, p, &mut out);
        out.value = v.value;
        out.hinge = v.hinge;
        out
    }
}

/// Sums the analytic gradients of a batch into `grad` (which is not cleared).
pub fn accumulate(
    terms: &[Term],
    state: &EmbeddingState,
    p: &LossParams,
    grad: &mut Gradient,
) -> LossBreakdown {
    let mut sums = LossBreakdown::default();
    for t in terms {
        let v = state.term_loss(t, p, grad);
        sums.record(t, v);
    }
    sums
}

/// Loss sums for a batch without gradients.
pub fn evaluate_terms(terms: &[Term], state: &EmbeddingState, p: &LossParams) -> LossBreakdown {
    let mut sums = LossBreakdown::default();
    for t in terms {
        let v = state.term_loss(t, p, &mut NoGrad);
        sums.record(t, v);
    }
    sums
}

/// Fresh accumulator holding the summed gradient of `terms`.
pub fn gradients(terms: &[Term], state: &EmbeddingState, p: &LossParams) -> (Gradient, LossBreakdown) {
    let mut g = Gradient::zeros_like(state);
    let sums = accumulate(terms, state, p, &mut g);
    (g, sums)
}

/// Splits the batch into `chunks` contiguous pieces, accumulates each on the
/// rayon pool, then merges in chunk order.
pub fn gradients_parallel(
    terms: &[Term],
    state: &EmbeddingState,
    p: &LossParams,
    chunks: usize,
) -> (Gradient, LossBreakdown) {
    use rayon::prelude::*;
    if chunks <= 1 || terms.len() < 2 * chunks {
        return gradients(terms, state, p);
    }
    let size = terms.len().div_ceil(chunks);
    let parts: Vec<(Gradient, LossBreakdown)> = terms
        .par_chunks(size)
        .map(|chunk| gradients(chunk, state, p))
        .collect();
    let mut iter = parts.into_iter();
    let (mut g, mut sums) = iter.next().expect("at least one chunk");
    for (pg, ps) in iter {
        g.merge(&pg);
        sums.add(&ps);
    }
    (g, sums)
}

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_err(line: usize, msg: impl Into<String>) -> ModelIoError {
    ModelIoError::Format {
        line,
        msg: msg.into(),
    }
}

/// Trained geometric model with the symbol names needed to persist it.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub variant: Variant,
    pub margin: f64,
    pub classes: Vec<ClassInfo>,
    pub relations: Vec<String>,
    pub state: EmbeddingState,
    /// Free-form provenance written as `# key=value` lines after the header.
    pub provenance: Vec<(String, String)>,
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse_header_fields(header: &str) -> Vec<(&str, &str)> {
    header
        .split_whitespace()
        .skip(2)
        .filter_map(|kv| kv.split_once('='))
        .collect()
}

impl SavedModel {
    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "#geodl v1 dim={} variant={} margin={}\n",
            self.state.dim, self.variant, self.margin
        );
        for (k, v) in &self.provenance {
            s.push_str(&format!("# {k}={v}\n"));
        }
        let mut row = |tag: &str, name: &str, scalar: f64, v: &[f64]| {
            s.push_str(tag);
            s.push('\t');
            s.push_str(name);
            s.push('\t');
            s.push_str(&fmt_f64(scalar));
            for x in v {
                s.push('\t');
                s.push_str(&fmt_f64(*x));
            }
            s.push('\n');
        };
        for (i, c) in self.classes.iter().enumerate() {
            row(
                "C",
                &c.name,
                self.state.class_radii_raw[i],
                self.state.class_centers.row(i),
            );
        }
        for (i, r) in self.relations.iter().enumerate() {
            row(
                "R",
                r,
                self.state.relation_sigmas_raw[i],
                self.state.relation_vectors.row(i),
            );
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self, ModelIoError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| format_err(1, "empty model file"))?;
        if !header.starts_with("#geodl v1 ") {
            return Err(format_err(1, "missing `#geodl v1` header"));
        }
        let mut dim = None;
        let mut variant = None;
        let mut margin = None;
        for (k, v) in parse_header_fields(header) {
            match k {
                "dim" => dim = v.parse::<usize>().ok(),
                "variant" => variant = v.parse::<Variant>().ok(),
                "margin" => margin = v.parse::<f64>().ok(),
                _ => {}
            }
        }
        let dim = dim.ok_or_else(|| format_err(1, "header lacks a valid dim="))?;
        let variant = variant.ok_or_else(|| format_err(1, "header lacks a valid variant="))?;
        let margin = margin.ok_or_else(|| format_err(1, "header lacks a valid margin="))?;

        let mut classes = Vec::new();
        let mut relations = Vec::new();
        let mut radii = Vec::new();
        let mut sigmas = Vec::new();
        let mut centers = Vec::new();
        let mut vectors = Vec::new();
        let mut provenance = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    provenance.push((k.to_string(), v.to_string()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != dim + 3 {
                return Err(format_err(
                    lineno,
                    format!("expected {} fields, found {}", dim + 3, fields.len()),
                ));
            }
            let nums = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| format_err(lineno, format!("bad number: {e}")))?;
            match fields[0] {
                "C" => {
                    classes.push(ClassInfo::from_name(fields[1]));
                    radii.push(nums[0]);
                    centers.push(nums[1..].to_vec());
                }
                "R" => {
                    relations.push(fields[1].to_string());
                    sigmas.push(nums[0]);
                    vectors.push(nums[1..].to_vec());
                }
                other => return Err(format_err(lineno, format!("unknown row tag `{other}`"))),
            }
        }
        Ok(SavedModel {
            variant,
            margin,
            classes,
            relations,
            state: EmbeddingState {
                dim,
                class_centers: Matrix::from_rows(centers, dim),
                class_radii_raw: radii,
                relation_vectors: Matrix::from_rows(vectors, dim),
                relation_sigmas_raw: sigmas,
            },
            provenance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EMEL: LossParams = LossParams {
        margin: 0.0,
        variant: Variant::EmEl,
        sigma_weight: 1.0,
    };
    const VAR: LossParams = LossParams {
        margin: 0.0,
        variant: Variant::EmElVar,
        sigma_weight: 1.0,
    };

    const C: ClassId = ClassId(0);
    const D: ClassId = ClassId(1);
    const E: ClassId = ClassId(2);
    const R: RelationId = RelationId(0);

    fn state(centers: &[[f64; 2]], radii: &[f64], rel: [f64; 2], sigma: f64) -> EmbeddingState {
        let mut s = EmbeddingState::zeros(centers.len(), 1, 2);
        for (i, c) in centers.iter().enumerate() {
            s.set_center(ClassId(i), c);
            s.class_radii_raw[i] = radii[i];
        }
        s.set_relation(R, &rel);
        s.relation_sigmas_raw[0] = sigma;
        s
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-8
    }

    #[test]
    fn nf1_examples() {
        let s = state(&[[1.0, 0.0], [1.0, 0.0]], &[0.1, 0.2], [0.0, 0.0], 0.0);
        assert_eq!(s.nf1(C, D, &EMEL, &mut NoGrad).value, 0.0);
        let s = state(&[[1.0, 0.0], [0.0, 1.0]], &[0.3, 0.1], [0.0, 0.0], 0.0);
        assert!(close(s.nf1(C, D, &EMEL, &mut NoGrad).value, 1.614_213_56));
        let s = state(&[[0.5, 0.0], [0.5, 0.0]], &[0.2, 0.2], [0.0, 0.0], 0.0);
        assert!(close(s.nf1(C, D, &EMEL, &mut NoGrad).value, 1.0));
    }

    #[test]
    fn nf2_examples() {
        let s = state(&[[0.0, 1.0]; 3], &[0.0; 3], [0.0, 0.0], 0.0);
        assert_eq!(s.nf2(C, D, E, &EMEL, &mut NoGrad).value, 0.0);
        let s = state(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], &[0.1; 3], [0.0, 0.0], 0.0);
        assert!(close(s.nf2(C, D, E, &EMEL, &mut NoGrad).value, 2.528_427_12));
    }

    #[test]
    fn nf3_examples() {
        let s = state(&[[1.0, 0.0], [0.0, 1.0]], &[0.1, 0.2], [-1.0, 1.0], 0.05);
        let v = s.nf3(C, R, D, &VAR, &mut NoGrad);
        assert_eq!(v.hinge, 0.0);
        assert!(close(v.value, 0.05));
        assert_eq!(s.nf3(C, R, D, &EMEL, &mut NoGrad).value, 0.0);

        // translation lands 0.1 away from D's center; σ covers it
        let s = state(&[[1.0, 0.0], [0.0, 1.0]], &[0.1, 0.1], [-1.0, 1.1], 0.2);
        let v = s.nf3(C, R, D, &VAR, &mut NoGrad);
        assert_eq!(v.hinge, 0.0);
        assert!(close(v.value, 0.2));
    }

    #[test]
    fn nf4_examples() {
        // f(c) − f(r) = f(d)
        let s = state(&[[0.0, 1.0], [1.0, 0.0]], &[0.3, 0.0], [-1.0, 1.0], 0.0);
        assert!(close(s.nf4(R, C, D, &EMEL, &mut NoGrad).value, 0.0));
        // f(c) − f(r) − f(d) = (−1, 0): hinge 1 − 0.2
        let s = state(&[[0.0, 1.0], [1.0, 0.0]], &[0.1, 0.1], [0.0, 1.0], 0.0);
        assert!(close(s.nf4(R, C, D, &EMEL, &mut NoGrad).value, 0.8));
        let s = state(&[[0.0, 1.0], [1.0, 0.0]], &[0.1, 0.1], [0.0, 1.0], 0.3);
        let v = s.nf4(R, C, D, &VAR, &mut NoGrad);
        assert!(close(v.hinge, 0.5));
        assert!(close(v.value, 0.8));
    }

    #[test]
    fn disjoint_examples() {
        let s = state(&[[1.0, 0.0], [-1.0, 0.0]], &[0.1, 0.1], [0.0, 0.0], 0.0);
        assert_eq!(s.disjoint(C, D, &EMEL, &mut NoGrad).value, 0.0);
        let s = state(&[[1.0, 0.0], [1.0, 0.0]], &[0.5, 0.5], [0.0, 0.0], 0.0);
        assert!(close(s.disjoint(C, D, &EMEL, &mut NoGrad).value, 1.0));
        let s = state(&[[1.0, 0.0], [1.0, 0.0]], &[0.0, 0.0], [0.0, 0.0], 0.0);
        assert_eq!(s.disjoint(C, D, &EMEL, &mut NoGrad).value, 0.0);
    }

    #[test]
    fn bottom_examples() {
        for (raw, want, g) in [(0.3, 0.3, 1.0), (-0.3, 0.3, -1.0), (0.0, 0.0, 0.0)] {
            let s = state(&[[1.0, 0.0]], &[raw], [0.0, 0.0], 0.0);
            let t = s.term(&Term::Positive(NormalAxiom::BottomSub(C)), &EMEL);
            assert_eq!(t.value, want);
            assert_eq!(t.gradient(Block::Radius, 0), Some(&[g][..]));
        }
    }

    #[test]
    fn negative_examples() {
        let s = state(&[[1.0, 0.0], [-1.0, 0.0]], &[0.1, 0.1], [1.0, 0.0], 0.01);
        assert_eq!(s.nf3_negative(C, R, D, &VAR, &mut NoGrad).value, 0.0);
        let s = state(&[[1.0, 0.0], [0.0, 1.0]], &[0.1, 0.1], [-1.0, 1.0], 0.0);
        assert!(close(s.nf3_negative(C, R, D, &VAR, &mut NoGrad).value, 0.2));
        let s = state(&[[1.0, 0.0], [0.0, 1.0]], &[0.1, 0.1], [-1.0, 1.0], 0.3);
        assert!(close(s.nf3_negative(C, R, D, &VAR, &mut NoGrad).value, 0.5));
    }

    #[test]
    fn inactive_hinge_has_zero_gradient() {
        let s = state(&[[1.0, 0.0], [1.0, 0.0]], &[0.1, 0.2], [0.0, 0.0], 0.0);
        let (g, _) = gradients(&[Term::Positive(NormalAxiom::Nf1(C, D))], &s, &EMEL);
        assert!(g.is_zero());
        let (g, sums) = gradients(&[], &s, &EMEL);
        assert!(g.is_zero());
        assert_eq!(sums.total(), 0.0);
    }

    #[test]
    fn emel_ignores_sigma() {
        let s = state(&[[1.0, 0.0], [0.0, 1.0]], &[0.1, 0.1], [0.5, 0.5], 0.4);
        let t = s.term(&Term::Positive(NormalAxiom::Nf3(C, R, D)), &EMEL);
        assert!(t.gradient(Block::Sigma, 0).is_none());
    }

    #[test]
    fn tsv_round_trip_is_bit_exact() {
        let mut s = state(&[[0.1, 1.0 / 3.0], [-2e-300, 7.0]], &[0.1, -0.2], [1e10, -0.0], 0.123);
        s.class_radii_raw[0] = std::f64::consts::PI;
        let model = SavedModel {
            variant: Variant::EmElVar,
            margin: 0.1,
            classes: vec![ClassInfo::from_name("A"), ClassInfo::from_name("nominal(x)")],
            relations: vec!["R".into()],
            state: s,
            provenance: vec![("seed".into(), "42".into())],
        };
        let text = model.to_tsv();
        assert!(text.starts_with("#geodl v1 dim=2 variant=EmElVar margin=0.1\n"));
        let back = SavedModel::from_tsv(&text).unwrap();
        assert_eq!(back, model);
        for (a, b) in back.state.blocks().iter().zip(model.state.blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert!(back.classes[1].is_nominal());
    }

    #[test]
    fn malformed_model_rejected() {
        assert!(SavedModel::from_tsv("").is_err());
        assert!(SavedModel::from_tsv("#geodl v1 dim=2 variant=EmEl margin=0.1\nC A 0.1 1.0\n").is_err());
        assert!(SavedModel::from_tsv("#geodl v1 dim=2 variant=Foo margin=0.1\n").is_err());
    }

    #[test]
    fn unit_sigma_weight_gives_no_net_sigma_gradient() {
        // active hinge: slack slope −1 meets regularizer slope +1
        let s = state(&[[1.0, 0.0], [0.0, 1.0]], &[0.1, 0.1], [0.0, 0.0], 0.05);
        let t = s.term(&Term::Positive(NormalAxiom::Nf3(C, R, D)), &VAR);
        assert!(t.hinge > 0.0);
        assert_eq!(t.gradient(Block::Sigma, 0).map_or(0.0, |g| g[0]), 0.0);
        // satisfied hinge: only the regularizer remains
        let s = state(&[[1.0, 0.0], [0.0, 1.0]], &[0.1, 0.1], [-1.0, 1.0], 0.05);
        let t = s.term(&Term::Positive(NormalAxiom::Nf3(C, R, D)), &VAR);
        assert_eq!(t.hinge, 0.0);
        assert_eq!(t.gradient(Block::Sigma, 0).unwrap()[0], 1.0);
    }
}
