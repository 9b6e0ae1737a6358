mod common;

use std::collections::{BTreeSet, HashSet};

use common::{oracle, random_instance, term, Kind, KINDS};
use geodl::geometry::{EmbeddingState, Gradient, LossParams, NoGrad, Term, Variant};
use geodl::normalizer::{normalize, verify_normal, ClassId, NormalAxiom, NormalizedOntology};
use geodl::parser::{parse_concept, parse_str, ConceptExpr, RawAxiom};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn concept() -> impl Strategy<Value = ConceptExpr> {
    let leaf = prop_oneof![
        6 => "[A-Z][A-Za-z0-9_]{0,5}".prop_map(ConceptExpr::Atomic),
        1 => Just(ConceptExpr::Top),
        1 => Just(ConceptExpr::Bottom),
        1 => "i[0-9]{1,3}".prop_map(ConceptExpr::Nominal),
    ];
    leaf.prop_recursive(5, 40, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| ConceptExpr::and(a, b)),
            ("R[0-9]{0,2}", inner).prop_map(|(r, f)| ConceptExpr::some(r, f)),
        ]
    })
}

fn axiom() -> impl Strategy<Value = RawAxiom> {
    (concept(), concept(), 0..10u8).prop_map(|(a, b, k)| {
        if k == 0 {
            RawAxiom::EquivalentClasses(a, b)
        } else {
            RawAxiom::SubClassOf(a, b)
        }
    })
}

/// Inserts blanks after every comma and opening parenthesis.
fn spaced(text: &str) -> String {
    text.replace(',', " ,  ").replace('(', "( ")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parse_of_print_is_identity(e in concept()) {
        let text = e.to_string();
        let back = parse_concept(&text).unwrap();
        prop_assert_eq!(&back, &e);
        prop_assert_eq!(back.to_string(), text.clone());
        prop_assert_eq!(parse_concept(&spaced(&text)).unwrap(), e);
    }

    #[test]
    fn axiom_lines_round_trip(axs in prop::collection::vec(axiom(), 1..20)) {
        let text: String = axs.iter().map(|a| format!("{a}\n")).collect();
        let (back, stats) = parse_str(&text).unwrap();
        prop_assert_eq!(&back, &axs);
        prop_assert_eq!(stats.axiom_count, axs.len());
        // parsing is a pure function of the text
        prop_assert_eq!(parse_str(&text).unwrap().0, back);
    }

    #[test]
    fn normalization_invariants(axs in prop::collection::vec(axiom(), 1..40)) {
        let onto = normalize(&axs);
        prop_assert!(verify_normal(&onto));

        let compound: usize = axs.iter().map(|a| match a {
            RawAxiom::SubClassOf(l, r) | RawAxiom::EquivalentClasses(l, r) => compound(l) + compound(r),
        }).sum();
        prop_assert!(onto.fresh_count() <= compound);

        let reparsed = parse_str(&onto.to_string()).unwrap().0;
        let again = normalize(&reparsed);
        prop_assert_eq!(again.fresh_count(), onto.fresh_count());
        prop_assert_eq!(again.to_string(), onto.to_string());

        let (classes, relations) = names(&axs);
        let have: HashSet<&str> = onto.classes.iter().map(|c| c.name.as_str()).collect();
        for c in &classes {
            prop_assert!(have.contains(c.as_str()), "class {} lost", c);
        }
        for r in &relations {
            prop_assert!(onto.relations.contains(r), "relation {} lost", r);
        }
    }
}

fn compound(e: &ConceptExpr) -> usize {
    match e {
        ConceptExpr::Intersection(l, r) => 1 + compound(l) + compound(r),
        ConceptExpr::Existential(_, f) => 1 + compound(f),
        _ => 0,
    }
}

fn collect(e: &ConceptExpr, classes: &mut BTreeSet<String>, relations: &mut BTreeSet<String>) {
    match e {
        ConceptExpr::Atomic(n) => {
            classes.insert(n.clone());
        }
        ConceptExpr::Nominal(i) => {
            classes.insert(format!("nominal({i})"));
        }
        ConceptExpr::Intersection(l, r) => {
            collect(l, classes, relations);
            collect(r, classes, relations);
        }
        ConceptExpr::Existential(role, f) => {
            relations.insert(role.clone());
            collect(f, classes, relations);
        }
        ConceptExpr::Top | ConceptExpr::Bottom => {}
    }
}

fn names(axs: &[RawAxiom]) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut c = BTreeSet::new();
    let mut r = BTreeSet::new();
    for a in axs {
        let (RawAxiom::SubClassOf(l, rr) | RawAxiom::EquivalentClasses(l, rr)) = a;
        collect(l, &mut c, &mut r);
        collect(rr, &mut c, &mut r);
    }
    (c, r)
}

/// Subsumptions derivable from NF1 and NF2 axioms by a naive saturation:
/// reflexivity, transitivity, and `X ⊑ C, X ⊑ D, C ⊓ D ⊑ E ⟹ X ⊑ E`.
fn closure(onto: &NormalizedOntology) -> HashSet<(ClassId, ClassId)> {
    let n = onto.classes.len();
    let mut sups: Vec<HashSet<usize>> = (0..n).map(|i| HashSet::from([i])).collect();
    loop {
        let mut changed = false;
        for x in 0..n {
            let mut add = Vec::new();
            for ax in &onto.axioms {
                match *ax {
                    NormalAxiom::Nf1(c, d) if sups[x].contains(&c.0) => add.push(d.0),
                    NormalAxiom::Nf2(c, d, e) if sups[x].contains(&c.0) && sups[x].contains(&d.0) => {
                        add.push(e.0)
                    }
                    _ => {}
                }
            }
            for a in add {
                changed |= sups[x].insert(a);
            }
        }
        if !changed {
            break;
        }
    }
    sups.iter()
        .enumerate()
        .flat_map(|(x, s)| s.iter().map(move |&y| (ClassId(x), ClassId(y))))
        .collect()
}

#[test]
fn normalization_preserves_named_entailments() {
    let cases: [(&str, &[(&str, &str)]); 5] = [
        ("equivalentClasses(A, and(B, C))", &[("A", "B"), ("A", "C")]),
        ("subClassOf(A, and(B, and(C, D)))", &[("A", "B"), ("A", "C"), ("A", "D")]),
        ("subClassOf(A, B)\nsubClassOf(B, and(C, some(R, D)))", &[("A", "B"), ("A", "C")]),
        (
            "subClassOf(X, A)\nsubClassOf(X, B)\nsubClassOf(and(A, B), and(C, E))",
            &[("X", "C"), ("X", "E")],
        ),
        (
            "equivalentClasses(P, and(Q, some(R, S)))\nsubClassOf(T, P)",
            &[("P", "Q"), ("T", "Q")],
        ),
    ];
    for (text, expected) in cases {
        let onto = normalize(&parse_str(text).unwrap().0);
        let cl = closure(&onto);
        for (c, d) in expected {
            let pair = (onto.class_id(c).unwrap(), onto.class_id(d).unwrap());
            assert!(cl.contains(&pair), "{c} ⊑ {d} lost in\n{onto}");
        }
    }
}

fn instance_from(seed: u64) -> common::Instance {
    random_instance(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Random orthogonal matrix from Gram–Schmidt on a random square matrix.
fn rotation(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for b in &q {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1e-6 {
            q.push(v.into_iter().map(|x| x / len).collect());
        }
    }
    q
}

fn apply(q: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    q.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn sparse_matches_dense(state: &EmbeddingState, t: &Term, p: &LossParams) -> bool {
    use geodl::geometry::Block;
    let mut dense = Gradient::zeros_like(state);
    state.term_loss(t, p, &mut dense);
    let sparse = state.term(t, p);
    let dim = state.dim;
    let blocks = dense.blocks();
    for i in 0..state.num_classes() {
        let c = sparse.gradient(Block::Center, i).map(|g| g.to_vec()).unwrap_or(vec![0.0; dim]);
        let r = sparse.gradient(Block::Radius, i).map_or(0.0, |g| g[0]);
        if c != blocks[0][i * dim..(i + 1) * dim] || r != blocks[1][i] {
            return false;
        }
    }
    let rv = sparse.gradient(Block::Relation, 0).map(|g| g.to_vec()).unwrap_or(vec![0.0; dim]);
    let sg = sparse.gradient(Block::Sigma, 0).map_or(0.0, |g| g[0]);
    rv == blocks[2][..dim] && sg == blocks[3][0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn losses_are_non_negative(seed in any::<u64>()) {
        let inst = instance_from(seed);
        let s = inst.state();
        for k in KINDS {
            let v = s.term_loss(&term(k), &inst.params(), &mut NoGrad);
            prop_assert!(v.value >= 0.0 && v.hinge >= 0.0, "{:?}: {:?}", k, v);
        }
    }

    #[test]
    fn sigma_monotonicity(seed in any::<u64>(), lo in 0.0f64..1.0, step in 1e-3f64..1.0) {
        let mut inst = instance_from(seed);
        inst.variant = Variant::EmElVar;
        for k in [Kind::Nf3, Kind::Nf4] {
            inst.sigma = lo;
            let a = inst.state().term_loss(&term(k), &inst.params(), &mut NoGrad);
            inst.sigma = lo + step;
            let b = inst.state().term_loss(&term(k), &inst.params(), &mut NoGrad);
            prop_assert!(b.hinge <= a.hinge);
            // value minus hinge is the penalties plus the regularizer
            prop_assert!(b.value - b.hinge > a.value - a.hinge);
        }
    }

    #[test]
    fn emel_reduction_term_by_term(seed in any::<u64>()) {
        let mut inst = instance_from(seed);
        inst.sigma = 0.0;
        let s = inst.state();
        for k in KINDS {
            let a = s.term_loss(&term(k), &LossParams::new(inst.margin, Variant::EmElVar), &mut NoGrad);
            let b = s.term_loss(&term(k), &LossParams::new(inst.margin, Variant::EmEl), &mut NoGrad);
            prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
            prop_assert_eq!((a.value - b.value).to_bits(), 0.0f64.to_bits());
        }
    }

    #[test]
    fn rotation_invariance(seed in any::<u64>()) {
        let inst = instance_from(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let q = rotation(inst.dim, &mut rng);
        let mut rot = inst.clone();
        for c in rot.centers.iter_mut() {
            *c = apply(&q, c);
        }
        rot.rel = apply(&q, &rot.rel);
        let (s, sr) = (inst.state(), rot.state());
        for k in KINDS {
            let a = s.term_loss(&term(k), &inst.params(), &mut NoGrad).value;
            let b = sr.term_loss(&term(k), &inst.params(), &mut NoGrad).value;
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE), "{:?}: {} vs {}", k, a, b);
        }
    }

    #[test]
    fn zero_nf1_loss_means_containment(
        i in 0usize..3, j in 0usize..3, si in any::<bool>(), sj in any::<bool>(),
        rc in -1.0f64..1.0, rd in -2.5f64..2.5, scale in prop::sample::select(vec![1.0, 1.0, 0.5, 2.0]),
    ) {
        let mut s = EmbeddingState::zeros(2, 0, 3);
        let mut c = [0.0; 3];
        let mut d = [0.0; 3];
        c[i] = if si { scale } else { -scale };
        d[j] = if sj { 1.0 } else { -1.0 };
        s.set_center(ClassId(0), &c);
        s.set_center(ClassId(1), &d);
        s.class_radii_raw = vec![rc, rd];
        let loss = s.nf1(ClassId(0), ClassId(1), &LossParams::new(0.0, Variant::EmEl), &mut NoGrad).value;
        let dist = c.iter().zip(&d).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let unit = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt() == 1.0;
        let contained = dist + rc.abs() <= rd.abs();
        if loss == 0.0 {
            prop_assert!(contained && unit(&c) && unit(&d));
        }
        if contained && unit(&c) && unit(&d) {
            prop_assert_eq!(loss, 0.0);
        }
    }

    #[test]
    fn sparse_and_dense_gradients_agree(seed in any::<u64>()) {
        let inst = instance_from(seed);
        let s = inst.state();
        for k in KINDS {
            prop_assert!(sparse_matches_dense(&s, &term(k), &inst.params()), "{:?}", k);
        }
    }

    #[test]
    fn oracle_agrees_with_shared_ids(seed in any::<u64>()) {
        // repeated ids: the loss of C ⊑ C etc. still matches the scalar formula
        let mut inst = instance_from(seed);
        inst.centers[1] = inst.centers[0].clone();
        inst.radii[1] = inst.radii[0];
        let s = inst.state();
        for k in KINDS {
            let want = oracle(k, &inst).0;
            let got = s.term_loss(&term(k), &inst.params(), &mut NoGrad).value;
            prop_assert!((want - got).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}

#[test]
fn nominal_term_drives_radius_only() {
    let mut s = EmbeddingState::zeros(1, 0, 2);
    s.set_center(ClassId(0), &[3.0, 4.0]);
    s.class_radii_raw[0] = -0.25;
    let p = LossParams::new(0.1, Variant::EmElVar);
    let t = s.term(&Term::NominalPoint(ClassId(0)), &p);
    assert_eq!(t.value, 0.25);
    assert_eq!(t.gradient(geodl::geometry::Block::Radius, 0).unwrap()[0], -1.0);
    assert!(t.gradient(geodl::geometry::Block::Center, 0).is_none());
}
