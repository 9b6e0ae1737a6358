//! Seeded synthetic ontologies for experiments and tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::parser::{ConceptExpr, RawAxiom};

fn sub(a: ConceptExpr, b: ConceptExpr) -> RawAxiom {
    RawAxiom::SubClassOf(a, b)
}

fn atom(name: &str) -> ConceptExpr {
    ConceptExpr::atomic(name)
}

/// `Hub ⊑ ∃R.Ti` for i = 1..=k with the fillers pairwise disjoint.
pub fn many_to_many(k: usize) -> Vec<RawAxiom> {
    let mut out: Vec<RawAxiom> = (1..=k)
        .map(|i| sub(atom("Hub"), ConceptExpr::some("R", atom(&format!("T{i}")))))
        .collect();
    for i in 1..=k {
        for j in i + 1..=k {
            out.push(sub(
                ConceptExpr::and(atom(&format!("T{i}")), atom(&format!("T{j}"))),
                ConceptExpr::Bottom,
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateSpec {
    pub classes: usize,
    pub relations: usize,
    /// Probability that a class introduces a new role restriction.
    pub restriction_rate: f64,
    /// Probability that a child restates an inherited restriction with a more specific filler.
    pub inherit_rate: f64,
    /// Classes restricted to many fillers along one role.
    pub hubs: usize,
    pub hub_fillers: usize,
    /// Classes given an `equivalentClasses(C, and(P, some(R, F)))` definition.
    pub definitions: usize,
    pub domain_axioms: usize,
    pub disjoint_pairs: usize,
    pub seed: u64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec {
            classes: 2000,
            relations: 12,
            restriction_rate: 0.3,
            inherit_rate: 0.6,
            hubs: 40,
            hub_fillers: 8,
            definitions: 150,
            domain_axioms: 60,
            disjoint_pairs: 100,
            seed: 42,
        }
    }
}

/// A connected GALEN-like ontology over `C0..`: a random taxonomy, role
/// restrictions that children inherit with specialized fillers, hub classes
/// with many fillers along one role, conjunctive definitions, role domains
/// and sibling disjointness.
pub fn galen_like(spec: &SurrogateSpec) -> Vec<RawAxiom> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.classes.max(2);
    let name = |i: usize| atom(&format!("C{i}"));
    let role = |r: usize| format!("R{r}");
    let relations = spec.relations.max(1);
    let mut out = Vec::new();

    // taxonomy with a few multiple-inheritance edges; parents precede children
    let mut parent = vec![0usize; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 1..n {
        let lo = i.saturating_sub(1 + i / 4);
        parent[i] = rng.gen_range(lo..i);
        children[parent[i]].push(i);
        out.push(sub(name(i), name(parent[i])));
        if i > 10 && rng.gen_bool(0.05) {
            let q = rng.gen_range(0..i);
            if q != parent[i] {
                out.push(sub(name(i), name(q)));
            }
        }
    }

    // effective restrictions per class, in generation order
    let mut restrictions: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for i in 1..n {
        let inherited = restrictions[parent[i]].clone();
        for (r, f) in inherited {
            let specific = if rng.gen_bool(spec.inherit_rate) {
                match children[f].choose(&mut rng) {
                    Some(&g) if g != i => Some(g),
                    _ => None,
                }
            } else {
                None
            };
            match specific {
                Some(g) => {
                    out.push(sub(name(i), ConceptExpr::some(role(r), name(g))));
                    restrictions[i].push((r, g));
                }
                None => restrictions[i].push((r, f)),
            }
        }
        if rng.gen_bool(spec.restriction_rate) {
            let r = rng.gen_range(0..relations);
            let f = rng.gen_range(0..n);
            if f != i {
                out.push(sub(name(i), ConceptExpr::some(role(r), name(f))));
                restrictions[i].push((r, f));
            }
        }
        restrictions[i].truncate(4);
    }

    for _ in 0..spec.hubs {
        let h = rng.gen_range(0..n);
        let r = rng.gen_range(0..relations);
        for _ in 0..spec.hub_fillers {
            let f = rng.gen_range(0..n);
            if f != h {
                out.push(sub(name(h), ConceptExpr::some(role(r), name(f))));
            }
        }
    }

    for _ in 0..spec.definitions {
        let c = rng.gen_range(1..n);
        let Some(&(r, f)) = restrictions[c].first() else {
            continue;
        };
        out.push(RawAxiom::EquivalentClasses(
            name(c),
            ConceptExpr::and(name(parent[c]), ConceptExpr::some(role(r), name(f))),
        ));
    }

    for _ in 0..spec.domain_axioms {
        let r = rng.gen_range(0..relations);
        let filler = rng.gen_range(0..n);
        out.push(sub(ConceptExpr::some(role(r), name(filler)), name(rng.gen_range(0..n.min(50)))));
    }

    let mut siblings: Vec<(usize, usize)> = Vec::new();
    for kids in &children {
        for (a, &i) in kids.iter().enumerate() {
            for &j in &kids[a + 1..] {
                siblings.push((i, j));
            }
        }
    }
    siblings.shuffle(&mut rng);
    for &(i, j) in siblings.iter().take(spec.disjoint_pairs) {
        out.push(sub(ConceptExpr::and(name(i), name(j)), ConceptExpr::Bottom));
    }
    out
}

pub fn to_text(axioms: &[RawAxiom]) -> String {
    let mut s = String::new();
    for a in axioms {
        s.push_str(&a.to_string());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalizer::{normalize, NormalAxiom};
    use crate::parser::parse_str;

    #[test]
    fn many_to_many_shape() {
        let axs = many_to_many(8);
        assert_eq!(axs.len(), 8 + 28);
        let census = normalize(&axs).census();
        assert_eq!(census.nf3, 8);
        assert_eq!(census.disjoint, 28);
    }

    #[test]
    fn surrogate_is_seeded_and_parseable() {
        let spec = SurrogateSpec {
            classes: 300,
            ..Default::default()
        };
        let a = galen_like(&spec);
        assert_eq!(a, galen_like(&spec));
        assert_ne!(a, galen_like(&SurrogateSpec { seed: 1, ..spec }));
        let (parsed, stats) = parse_str(&to_text(&a)).unwrap();
        assert_eq!(parsed, a);
        assert_eq!(stats.class_count, 300);
        let onto = normalize(&a);
        assert!(onto.axioms.iter().any(|x| matches!(x, NormalAxiom::Nf4(..))));
        assert!(onto.axioms.iter().any(|x| matches!(x, NormalAxiom::Nf2(..))));
    }
}
