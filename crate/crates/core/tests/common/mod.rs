//! Straight-line scalar oracles shared by the integration tests.
#![allow(dead_code)]

use geodl::geometry::{EmbeddingState, LossParams, Variant};
use geodl::normalizer::{ClassId, RelationId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Nf1,
    Nf2,
    Nf3,
    Nf4,
    Disjoint,
    Bottom,
    Negative,
}

pub const KINDS: [Kind; 7] = [
    Kind::Nf1,
    Kind::Nf2,
    Kind::Nf3,
    Kind::Nf4,
    Kind::Disjoint,
    Kind::Bottom,
    Kind::Negative,
];

/// Flat parameters of one instance: three classes (c, d, e) and one relation.
#[derive(Debug, Clone)]
pub struct Instance {
    pub dim: usize,
    pub centers: [Vec<f64>; 3],
    pub radii: [f64; 3],
    pub rel: Vec<f64>,
    pub sigma: f64,
    pub margin: f64,
    pub variant: Variant,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let dim = rng.gen_range(1..=10);
    let mut vec = |s: f64| (0..dim).map(|_| rng.gen_range(-s..s)).collect::<Vec<f64>>();
    let centers = [vec(1.5), vec(1.5), vec(1.5)];
    let rel = vec(1.0);
    Instance {
        dim,
        centers,
        radii: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        rel,
        sigma: rng.gen_range(-0.5..0.5),
        margin: rng.gen_range(0.0..0.5),
        variant: if rng.gen_bool(0.5) { Variant::EmEl } else { Variant::EmElVar },
    }
}

impl Instance {
    pub fn state(&self) -> EmbeddingState {
        let mut s = EmbeddingState::zeros(3, 1, self.dim);
        for i in 0..3 {
            s.set_center(ClassId(i), &self.centers[i]);
            s.class_radii_raw[i] = self.radii[i];
        }
        s.set_relation(RelationId(0), &self.rel);
        s.relation_sigmas_raw[0] = self.sigma;
        s
    }

    pub fn params(&self) -> LossParams {
        LossParams::new(self.margin, self.variant)
    }

    /// Parameters in state block order: centers, radii, relation, sigma.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for c in &self.centers {
            v.extend_from_slice(c);
        }
        v.extend_from_slice(&self.radii);
        v.extend_from_slice(&self.rel);
        v.push(self.sigma);
        v
    }

    pub fn from_flat(&self, v: &[f64]) -> Instance {
        let n = self.dim;
        let mut out = self.clone();
        for i in 0..3 {
            out.centers[i] = v[i * n..(i + 1) * n].to_vec();
        }
        out.radii = [v[3 * n], v[3 * n + 1], v[3 * n + 2]];
        out.rel = v[3 * n + 3..4 * n + 3].to_vec();
        out.sigma = v[4 * n + 3];
        out
    }
}

fn len(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x * x;
    }
    s.sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let t = a[i] - b[i];
        s += t * t;
    }
    s.sqrt()
}

fn dist_shift(a: &[f64], r: &[f64], sign: f64, b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let t = a[i] + sign * r[i] - b[i];
        s += t * t;
    }
    s.sqrt()
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Loss value, hinge part, and every argument at which the loss has a kink.
pub fn oracle(kind: Kind, inst: &Instance) -> (f64, f64, Vec<f64>) {
    let [c, d, e] = &inst.centers;
    let rc = inst.radii[0].abs();
    let rd = inst.radii[1].abs();
    let var = inst.variant == Variant::EmElVar;
    let sg = if var { inst.sigma.abs() } else { 0.0 };
    let g = inst.margin;
    let r = &inst.rel;
    let pc = (len(c) - 1.0).abs();
    let pd = (len(d) - 1.0).abs();
    let pe = (len(e) - 1.0).abs();
    let mut kinks = vec![len(c) - 1.0, len(d) - 1.0, inst.radii[0], inst.radii[1]];
    let reg = if var { sg } else { 0.0 };
    if var {
        kinks.push(inst.sigma);
    }
    match kind {
        Kind::Nf1 => {
            let a = dist(c, d) + rc - rd - g;
            kinks.extend([a, dist(c, d)]);
            (relu(a) + pc + pd, relu(a), kinks)
        }
        Kind::Nf2 => {
            let a1 = dist(c, d) - rc - rd - g;
            let a2 = dist(c, e) - rc - g;
            let a3 = dist(d, e) - rd - g;
            let h = relu(a1) + relu(a2) + relu(a3);
            kinks.extend([a1, a2, a3, len(e) - 1.0, dist(c, d), dist(c, e), dist(d, e)]);
            (h + pc + pd + pe, h, kinks)
        }
        Kind::Nf3 => {
            let n = dist_shift(c, r, 1.0, d);
            let a = n + rc - rd - sg - g;
            kinks.extend([a, n]);
            (relu(a) + pc + pd + reg, relu(a), kinks)
        }
        Kind::Nf4 => {
            let n = dist_shift(c, r, -1.0, d);
            let a = n - rc - rd - sg - g;
            kinks.extend([a, n]);
            (relu(a) + pc + pd + reg, relu(a), kinks)
        }
        Kind::Disjoint => {
            let a = rc + rd - dist(c, d) + g;
            kinks.extend([a, dist(c, d)]);
            (relu(a) + pc + pd, relu(a), kinks)
        }
        Kind::Bottom => (rc, rc, vec![inst.radii[0]]),
        Kind::Negative => {
            let n = dist_shift(c, r, 1.0, d);
            let a = rc + rd + sg + g - n;
            kinks.extend([a, n]);
            (relu(a) + pc + pd, relu(a), kinks)
        }
    }
}

pub fn term(kind: Kind) -> geodl::geometry::Term {
    use geodl::geometry::Term;
    use geodl::normalizer::NormalAxiom::*;
    let (c, d, e, r) = (ClassId(0), ClassId(1), ClassId(2), RelationId(0));
    match kind {
        Kind::Nf1 => Term::Positive(Nf1(c, d)),
        Kind::Nf2 => Term::Positive(Nf2(c, d, e)),
        Kind::Nf3 => Term::Positive(Nf3(c, r, d)),
        Kind::Nf4 => Term::Positive(Nf4(r, c, d)),
        Kind::Disjoint => Term::Positive(Disjoint(c, d)),
        Kind::Bottom => Term::Positive(BottomSub(c)),
        Kind::Negative => Term::NegativeNf3(c, r, d),
    }
}

/// Gradient error measure: |a − n| / max(1, |a|, |n|).
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}
