//! Rewriting of EL axioms into normal forms over atomic classes.
//!
//! Every output axiom has one of the shapes `C ⊑ D`, `C ⊓ D ⊑ E`, `C ⊑ ∃R.D`,
//! `∃R.C ⊑ D`, `C ⊓ D ⊑ ⊥` or `C ⊑ ⊥`. Complex sub-expressions are replaced
//! by fresh classes named `__nf_<k>`; identical sub-expressions share one
//! fresh class.

use std::collections::HashMap;
use std::fmt;

use crate::parser::{ConceptExpr, RawAxiom};

pub const FRESH_PREFIX: &str = "__nf_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassKind {
    Named,
    Top,
    Nominal,
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    /// Printable name: the atomic name, `top`, `nominal(a)`, or `__nf_<k>`.
    pub name: String,
    pub kind: ClassKind,
}

impl ClassInfo {
    pub fn is_fresh(&self) -> bool {
        self.kind == ClassKind::Fresh
    }

    pub fn is_nominal(&self) -> bool {
        self.kind == ClassKind::Nominal
    }

    /// Classifies a printed class name the way the normalizer would have produced it.
    pub fn from_name(name: &str) -> Self {
        let kind = if name == "top" {
            ClassKind::Top
        } else if name.starts_with("nominal(") {
            ClassKind::Nominal
        } else if name.starts_with(FRESH_PREFIX) {
            ClassKind::Fresh
        } else {
            ClassKind::Named
        };
        ClassInfo {
            name: name.to_string(),
            kind,
        }
    }

    fn to_concept(&self) -> ConceptExpr {
        match self.kind {
            ClassKind::Top => ConceptExpr::Top,
            ClassKind::Nominal => {
                let inner = &self.name["nominal(".len()..self.name.len() - 1];
                ConceptExpr::Nominal(inner.to_string())
            }
            _ => ConceptExpr::Atomic(self.name.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormalAxiom {
    /// C ⊑ D
    Nf1(ClassId, ClassId),
    /// C ⊓ D ⊑ E
    Nf2(ClassId, ClassId, ClassId),
    /// C ⊑ ∃R.D
    Nf3(ClassId, RelationId, ClassId),
    /// ∃R.C ⊑ D
    Nf4(RelationId, ClassId, ClassId),
    /// C ⊓ D ⊑ ⊥
    Disjoint(ClassId, ClassId),
    /// C ⊑ ⊥
    BottomSub(ClassId),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AxiomCensus {
    pub nf1: usize,
    pub nf2: usize,
    pub nf3: usize,
    pub nf4: usize,
    pub disjoint: usize,
    pub bottom: usize,
}

impl AxiomCensus {
    pub fn total(&self) -> usize {
        self.nf1 + self.nf2 + self.nf3 + self.nf4 + self.disjoint + self.bottom
    }
}

/// Symbol tables plus axioms in normal form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormalizedOntology {
    pub axioms: Vec<NormalAxiom>,
    pub classes: Vec<ClassInfo>,
    pub relations: Vec<String>,
    /// Fresh class → canonical text of the sub-expression it names.
    pub fresh_origin: Vec<(ClassId, String)>,
}

impl NormalizedOntology {
    pub fn class(&self, id: ClassId) -> &ClassInfo {
        &self.classes[id.0]
    }

    pub fn class_name(&self, id: ClassId) -> &str {
        &self.classes[id.0].name
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations[id.0]
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.classes.iter().position(|c| c.name == name).map(ClassId)
    }

    pub fn fresh_count(&self) -> usize {
        self.classes.iter().filter(|c| c.is_fresh()).count()
    }

    pub fn census(&self) -> AxiomCensus {
        let mut c = AxiomCensus::default();
        for ax in &self.axioms {
            match ax {
                NormalAxiom::Nf1(..) => c.nf1 += 1,
                NormalAxiom::Nf2(..) => c.nf2 += 1,
                NormalAxiom::Nf3(..) => c.nf3 += 1,
                NormalAxiom::Nf4(..) => c.nf4 += 1,
                NormalAxiom::Disjoint(..) => c.disjoint += 1,
                NormalAxiom::BottomSub(..) => c.bottom += 1,
            }
        }
        c
    }

    /// Same symbol tables, different axiom list (used for train/valid/test views).
    pub fn with_axioms(&self, axioms: Vec<NormalAxiom>) -> Self {
        NormalizedOntology {
            axioms,
            classes: self.classes.clone(),
            relations: self.relations.clone(),
            fresh_origin: self.fresh_origin.clone(),
        }
    }

    pub fn to_raw(&self, ax: &NormalAxiom) -> RawAxiom {
        let c = |id: &ClassId| self.classes[id.0].to_concept();
        let r = |id: &RelationId| self.relations[id.0].clone();
        match ax {
            NormalAxiom::Nf1(a, b) => RawAxiom::SubClassOf(c(a), c(b)),
            NormalAxiom::Nf2(a, b, e) => {
                RawAxiom::SubClassOf(ConceptExpr::and(c(a), c(b)), c(e))
            }
            NormalAxiom::Nf3(a, rel, b) => {
                RawAxiom::SubClassOf(c(a), ConceptExpr::some(r(rel), c(b)))
            }
            NormalAxiom::Nf4(rel, a, b) => {
                RawAxiom::SubClassOf(ConceptExpr::some(r(rel), c(a)), c(b))
            }
            NormalAxiom::Disjoint(a, b) => {
                RawAxiom::SubClassOf(ConceptExpr::and(c(a), c(b)), ConceptExpr::Bottom)
            }
            NormalAxiom::BottomSub(a) => RawAxiom::SubClassOf(c(a), ConceptExpr::Bottom),
        }
    }

    /// One line in the axiom grammar; disjointness uses the `disjointWith` sugar.
    pub fn format_axiom(&self, ax: &NormalAxiom) -> String {
        match ax {
            NormalAxiom::Disjoint(a, b) => {
                format!("disjointWith({},{})", self.class_name(*a), self.class_name(*b))
            }
            other => self.to_raw(other).to_string(),
        }
    }

    /// Human-readable form of an axiom for diagnostics.
    pub fn describe(&self, ax: &NormalAxiom) -> String {
        self.format_axiom(ax)
    }
}

impl fmt::Display for NormalizedOntology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for ax in &self.axioms {
            writeln!(f, "{}", self.format_axiom(ax))?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct FreshName {
    id: usize,
    /// `expr ⊑ fresh` has been emitted.
    below: bool,
    /// `fresh ⊑ expr` has been emitted.
    above: bool,
}

#[derive(Default)]
struct Normalizer {
    classes: Vec<ClassInfo>,
    class_index: HashMap<String, usize>,
    relations: Vec<String>,
    relation_index: HashMap<String, usize>,
    fresh: HashMap<String, FreshName>,
    fresh_origin: Vec<(ClassId, String)>,
    next_fresh: usize,
    out: Vec<NormalAxiom>,
}

impl Normalizer {
    fn intern_class(&mut self, info: ClassInfo) -> ClassId {
        if let Some(&i) = self.class_index.get(&info.name) {
            return ClassId(i);
        }
        let id = self.classes.len();
        self.class_index.insert(info.name.clone(), id);
        self.classes.push(info);
        ClassId(id)
    }

    fn relation(&mut self, name: &str) -> RelationId {
        if let Some(&i) = self.relation_index.get(name) {
            return RelationId(i);
        }
        let id = self.relations.len();
        self.relation_index.insert(name.to_string(), id);
        self.relations.push(name.to_string());
        RelationId(id)
    }

    /// Class id of an atomic expression (named, top or nominal).
    fn atom(&mut self, expr: &ConceptExpr) -> Option<ClassId> {
        let info = match expr {
            ConceptExpr::Atomic(n) => ClassInfo::from_name(n),
            ConceptExpr::Top => ClassInfo {
                name: "top".into(),
                kind: ClassKind::Top,
            },
            ConceptExpr::Nominal(n) => ClassInfo {
                name: format!("nominal({n})"),
                kind: ClassKind::Nominal,
            },
            _ => return None,
        };
        Some(self.intern_class(info))
    }

    fn pre_register(&mut self, expr: &ConceptExpr) {
        match expr {
            ConceptExpr::Intersection(l, r) => {
                self.pre_register(l);
                self.pre_register(r);
            }
            ConceptExpr::Existential(role, f) => {
                self.relation(role);
                self.pre_register(f);
            }
            ConceptExpr::Bottom => {}
            atomic => {
                self.atom(atomic);
            }
        }
    }

    fn fresh_for(&mut self, expr: &ConceptExpr) -> usize {
        let key = expr.to_string();
        if let Some(f) = self.fresh.get(&key) {
            return f.id;
        }
        let name = loop {
            let candidate = format!("{FRESH_PREFIX}{}", self.next_fresh);
            self.next_fresh += 1;
            if !self.class_index.contains_key(&candidate) {
                break candidate;
            }
        };
        let id = self.intern_class(ClassInfo {
            name,
            kind: ClassKind::Fresh,
        });
        self.fresh_origin.push((id, key.clone()));
        self.fresh.insert(
            key,
            FreshName {
                id: id.0,
                ..Default::default()
            },
        );
        id.0
    }

    /// Returns a class A with `expr ⊑ A`, or `None` when `expr` is ⊥.
    fn name_below(&mut self, expr: &ConceptExpr) -> Option<ClassId> {
        if let Some(id) = self.atom(expr) {
            return Some(id);
        }
        if is_empty(expr) {
            return None;
        }
        let id = self.fresh_for(expr);
        let key = expr.to_string();
        let entry = self.fresh.get_mut(&key).expect("fresh entry");
        if !entry.below {
            entry.below = true;
            self.gci(expr, &ConceptExpr::Atomic(self.classes[id].name.clone()));
        }
        Some(ClassId(id))
    }

    /// Returns a class A with `A ⊑ expr`, or `None` when `expr` is ⊥.
    fn name_above(&mut self, expr: &ConceptExpr) -> Option<ClassId> {
        if let Some(id) = self.atom(expr) {
            return Some(id);
        }
        if is_empty(expr) {
            return None;
        }
        let id = self.fresh_for(expr);
        let key = expr.to_string();
        let entry = self.fresh.get_mut(&key).expect("fresh entry");
        if !entry.above {
            entry.above = true;
            self.right(ClassId(id), expr);
        }
        Some(ClassId(id))
    }

    /// Normalizes `sub ⊑ sup` where `sub` is a single class.
    fn right(&mut self, sub: ClassId, sup: &ConceptExpr) {
        if is_empty(sup) {
            self.out.push(NormalAxiom::BottomSub(sub));
            return;
        }
        match sup {
            ConceptExpr::Intersection(l, r) => {
                self.right(sub, l);
                self.right(sub, r);
            }
            ConceptExpr::Existential(role, filler) => {
                let rel = self.relation(role);
                let d = self.name_above(filler).expect("non-empty filler");
                self.out.push(NormalAxiom::Nf3(sub, rel, d));
            }
            atomic => {
                let d = self.atom(atomic).expect("atomic");
                self.out.push(NormalAxiom::Nf1(sub, d));
            }
        }
    }

    /// Normalizes an arbitrary general concept inclusion.
    fn gci(&mut self, sub: &ConceptExpr, sup: &ConceptExpr) {
        if is_empty(sub) {
            return;
        }
        match sub {
            ConceptExpr::Intersection(l, r) => {
                let (Some(a), Some(b)) = (self.name_below(l), self.name_below(r)) else {
                    return;
                };
                if is_empty(sup) {
                    self.out.push(NormalAxiom::Disjoint(a, b));
                } else if let Some(e) = self.atom(sup) {
                    self.out.push(NormalAxiom::Nf2(a, b, e));
                } else {
                    let mid = self.name_below(sub).expect("non-bottom");
                    self.right(mid, sup);
                }
            }
            ConceptExpr::Existential(role, filler) => {
                let rel = self.relation(role);
                let Some(a) = self.name_below(filler) else {
                    return;
                };
                if let Some(d) = self.atom(sup) {
                    self.out.push(NormalAxiom::Nf4(rel, a, d));
                } else {
                    let mid = self.name_below(sub).expect("non-bottom");
                    self.right(mid, sup);
                }
            }
            atomic => {
                let c = self.atom(atomic).expect("atomic");
                self.right(c, sup);
            }
        }
    }
}

/// Whether `expr` is ⊥ or contains ⊥ in a position that makes it empty.
fn is_empty(expr: &ConceptExpr) -> bool {
    match expr {
        ConceptExpr::Bottom => true,
        ConceptExpr::Intersection(l, r) => is_empty(l) || is_empty(r),
        ConceptExpr::Existential(_, f) => is_empty(f),
        _ => false,
    }
}

/// Rewrites raw axioms into normal form. Class ids follow first appearance in
/// the input; fresh classes are appended as they are introduced.
pub fn normalize(axioms: &[RawAxiom]) -> NormalizedOntology {
    let mut n = Normalizer::default();
    for ax in axioms {
        let (a, b) = match ax {
            RawAxiom::SubClassOf(a, b) | RawAxiom::EquivalentClasses(a, b) => (a, b),
        };
        n.pre_register(a);
        n.pre_register(b);
    }
    for ax in axioms {
        match ax {
            RawAxiom::SubClassOf(a, b) => n.gci(a, b),
            RawAxiom::EquivalentClasses(a, b) => {
                n.gci(a, b);
                n.gci(b, a);
            }
        }
    }
    NormalizedOntology {
        axioms: n.out,
        classes: n.classes,
        relations: n.relations,
        fresh_origin: n.fresh_origin,
    }
}

/// Whether a raw axiom already has one of the normal shapes over atomic operands.
pub fn is_normal_axiom(ax: &RawAxiom) -> bool {
    use ConceptExpr::*;
    let RawAxiom::SubClassOf(sub, sup) = ax else {
        return false;
    };
    match (sub, sup) {
        (s, Bottom) if s.is_atomic() => true,
        (s, t) if s.is_atomic() && t.is_atomic() => true,
        (Intersection(l, r), t) if l.is_atomic() && r.is_atomic() => {
            t.is_atomic() || *t == Bottom
        }
        (s, Existential(_, f)) if s.is_atomic() => f.is_atomic(),
        (Existential(_, f), t) if f.is_atomic() => t.is_atomic(),
        _ => false,
    }
}

/// Checks that every axiom references valid ids and prints as a normal-shaped axiom.
pub fn verify_normal(onto: &NormalizedOntology) -> bool {
    let nc = onto.classes.len();
    let nr = onto.relations.len();
    let ok_c = |c: &ClassId| c.0 < nc;
    let ok_r = |r: &RelationId| r.0 < nr;
    onto.axioms.iter().all(|ax| {
        let ids_ok = match ax {
            NormalAxiom::Nf1(a, b) | NormalAxiom::Disjoint(a, b) => ok_c(a) && ok_c(b),
            NormalAxiom::Nf2(a, b, e) => ok_c(a) && ok_c(b) && ok_c(e),
            NormalAxiom::Nf3(a, r, b) | NormalAxiom::Nf4(r, a, b) => {
                ok_c(a) && ok_c(b) && ok_r(r)
            }
            NormalAxiom::BottomSub(a) => ok_c(a),
        };
        ids_ok && is_normal_axiom(&onto.to_raw(ax))
    })
}

/// Checks a list of raw axioms for normal shape (before interning).
pub fn verify_normal_raw(axioms: &[RawAxiom]) -> bool {
    axioms.iter().all(is_normal_axiom)
}

/// Tab-separated `fresh name → sub-expression` table.
pub fn fresh_table_tsv(onto: &NormalizedOntology) -> String {
    let mut s = String::from("fresh_class\texpression\n");
    for (id, text) in &onto.fresh_origin {
        s.push_str(onto.class_name(*id));
        s.push('\t');
        s.push_str(text);
        s.push('\n');
    }
    s
}
