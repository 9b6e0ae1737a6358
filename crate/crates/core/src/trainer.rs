//! Dataset splitting and mini-batch training of the geometric models.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::evaluator::{self, candidate_set};
use crate::geometry::{
    evaluate_terms, gradients, gradients_parallel, EmbeddingState, Gradient, LossBreakdown,
    LossParams, Term, Variant,
};
use crate::normalizer::{ClassId, ClassKind, NormalAxiom, NormalizedOntology, RelationId};

/// Validation Hits@10 is computed every this many epochs.
pub const VALIDATION_INTERVAL: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Optimizer::Sgd => f.write_str("sgd"),
            Optimizer::Adam { .. } => f.write_str("adam"),
        }
    }
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::ADAM),
            _ => Err(format!("unknown optimizer `{s}` (expected sgd or adam)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub margin: f64,
    pub variant: Variant,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives: bool,
    pub seed: u64,
    pub threads: usize,
    /// Validation rounds without improvement before stopping.
    pub patience: usize,
    pub sigma_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 50,
            margin: 0.1,
            variant: Variant::EmElVar,
            lr: 0.01,
            optimizer: Optimizer::ADAM,
            epochs: 1000,
            batch_size: 512,
            negatives: true,
            seed: 42,
            threads: 1,
            patience: 10,
            sigma_weight: 1.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: bad value for `{key}`: {msg}")]
    BadValue { line: usize, key: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 11] = [
        "dim",
        "margin",
        "variant",
        "lr",
        "optimizer",
        "epochs",
        "batch_size",
        "negatives",
        "seed",
        "threads",
        "patience",
    ];

    /// Applies flat `key=value` lines on top of `self`. `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or(ConfigError::Syntax { line })?;
            let bad = |msg: String| ConfigError::BadValue {
                line,
                key: key.to_string(),
                msg,
            };
            let num_err = |e: &dyn fmt::Display| bad(e.to_string());
            match key {
                "dim" => self.dim = value.parse().map_err(|e| num_err(&e))?,
                "margin" => self.margin = value.parse().map_err(|e| num_err(&e))?,
                "variant" => self.variant = value.parse().map_err(bad)?,
                "lr" => self.lr = value.parse().map_err(|e| num_err(&e))?,
                "optimizer" => self.optimizer = value.parse().map_err(bad)?,
                "epochs" => self.epochs = value.parse().map_err(|e| num_err(&e))?,
                "batch_size" => self.batch_size = value.parse().map_err(|e| num_err(&e))?,
                "negatives" => self.negatives = parse_bool(value).map_err(bad)?,
                "seed" => self.seed = value.parse().map_err(|e| num_err(&e))?,
                "threads" => self.threads = value.parse().map_err(|e| num_err(&e))?,
                "patience" => self.patience = value.parse().map_err(|e| num_err(&e))?,
                other => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: other.to_string(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut c = TrainConfig::default();
        c.apply_kv(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.dim < 2 {
            return invalid("dim must be at least 2");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid("lr must be positive");
        }
        if !(self.margin.is_finite()) {
            return invalid("margin must be finite");
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be at least 1");
        }
        if self.threads == 0 {
            return invalid("threads must be at least 1");
        }
        if !(self.sigma_weight >= 0.0 && self.sigma_weight.is_finite()) {
            return invalid("sigma weight must be non-negative");
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return invalid("adam needs 0 <= beta < 1 and eps > 0");
            }
        }
        Ok(())
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            margin: self.margin,
            variant: self.variant,
            sigma_weight: self.sigma_weight,
        }
    }

    pub fn to_kv(&self) -> String {
        format!(
            "dim={}\nmargin={}\nvariant={}\nlr={}\noptimizer={}\nepochs={}\nbatch_size={}\nnegatives={}\nseed={}\nthreads={}\npatience={}\n",
            self.dim,
            self.margin,
            self.variant,
            self.lr,
            self.optimizer,
            self.epochs,
            self.batch_size,
            self.negatives,
            self.seed,
            self.threads,
            self.patience
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            valid: 0.2,
            test: 0.1,
            seed: 42,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("need at least {needed} eligible subclass axioms to split, found {found}")]
    TooFew { needed: usize, found: usize },
    #[error("split fractions must be non-negative and sum to 1 (got {0}, {1}, {2})")]
    BadFractions(f64, f64, f64),
}

pub const MIN_SPLIT_AXIOMS: usize = 10;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitReport {
    pub eligible: usize,
    /// Held-out pairs moved back to training because a class would otherwise be unseen.
    pub swapped: usize,
    /// Slots that could not be refilled after a swap.
    pub shortfall: usize,
    pub train_pairs: usize,
    pub valid_pairs: usize,
    pub test_pairs: usize,
    pub candidate_count: usize,
}

impl SplitReport {
    pub fn to_tsv(&self, spec: &SplitSpec) -> String {
        format!(
            "key\tvalue\nseed\t{}\nfractions\t{},{},{}\neligible_nf1\t{}\ntrain_nf1\t{}\nvalid_nf1\t{}\ntest_nf1\t{}\nswapped_into_train\t{}\nunfilled_slots\t{}\ncandidate_count\t{}\n",
            spec.seed,
            spec.train,
            spec.valid,
            spec.test,
            self.eligible,
            self.train_pairs,
            self.valid_pairs,
            self.test_pairs,
            self.swapped,
            self.shortfall,
            self.candidate_count
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<NormalAxiom>,
    pub valid: Vec<(ClassId, ClassId)>,
    pub test: Vec<(ClassId, ClassId)>,
    pub report: SplitReport,
}

fn is_eligible(onto: &NormalizedOntology, ax: &NormalAxiom) -> Option<(ClassId, ClassId)> {
    match *ax {
        NormalAxiom::Nf1(c, d)
            if c != d
                && onto.class(c).kind == ClassKind::Named
                && onto.class(d).kind == ClassKind::Named =>
        {
            Some((c, d))
        }
        _ => None,
    }
}

fn axiom_classes(ax: &NormalAxiom) -> Vec<ClassId> {
    let mut v = match *ax {
        NormalAxiom::Nf1(a, b) | NormalAxiom::Disjoint(a, b) => vec![a, b],
        NormalAxiom::Nf2(a, b, c) => vec![a, b, c],
        NormalAxiom::Nf3(a, _, b) | NormalAxiom::Nf4(_, a, b) => vec![a, b],
        NormalAxiom::BottomSub(a) => vec![a],
    };
    v.sort_unstable();
    v.dedup();
    v
}

/// Partitions the eligible subclass axioms (between named, non-fresh,
/// non-nominal classes) into train/valid/test. Everything else trains.
pub fn split(onto: &NormalizedOntology, spec: &SplitSpec) -> Result<Split, SplitError> {
    let fr = [spec.train, spec.valid, spec.test];
    if fr.iter().any(|f| !(*f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SplitError::BadFractions(spec.train, spec.valid, spec.test));
    }
    let mut eligible = Vec::new();
    let mut fixed = Vec::new();
    for ax in &onto.axioms {
        match is_eligible(onto, ax) {
            Some(p) => eligible.push(p),
            None => fixed.push(*ax),
        }
    }
    if eligible.len() < MIN_SPLIT_AXIOMS {
        return Err(SplitError::TooFew {
            needed: MIN_SPLIT_AXIOMS,
            found: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    eligible.shuffle(&mut rng);
    let n = eligible.len();
    let n_valid = ((n as f64) * spec.valid).round() as usize;
    let n_test = (((n as f64) * spec.test).round() as usize).min(n - n_valid);
    let n_held = n_valid + n_test;

    // classes covered by training, counted once per axiom
    let mut count = vec![0usize; onto.classes.len()];
    let bump = |count: &mut Vec<usize>, ax: &NormalAxiom, delta: isize| {
        for c in axiom_classes(ax) {
            count[c.0] = (count[c.0] as isize + delta) as usize;
        }
    };
    for ax in &fixed {
        bump(&mut count, ax, 1);
    }
    let mut pool: Vec<(ClassId, ClassId)> = eligible[n_held..].to_vec();
    for &(c, d) in &pool {
        bump(&mut count, &NormalAxiom::Nf1(c, d), 1);
    }
    let mut in_train = vec![true; pool.len()];
    let mut held = Vec::with_capacity(n_held);
    let mut swapped = 0;
    let mut shortfall = 0;
    let mut next = 0;
    for &(c, d) in &eligible[..n_held] {
        if count[c.0] > 0 && count[d.0] > 0 {
            held.push(Some((c, d)));
            continue;
        }
        swapped += 1;
        bump(&mut count, &NormalAxiom::Nf1(c, d), 1);
        pool.push((c, d));
        in_train.push(false); // just swapped in; never drawn back out
        let mut found = None;
        while next < pool.len() {
            let i = next;
            next += 1;
            if !in_train[i] {
                continue;
            }
            let (a, b) = pool[i];
            if count[a.0] >= 2 && count[b.0] >= 2 {
                found = Some(i);
                break;
            }
        }
        match found {
            Some(i) => {
                in_train[i] = false;
                let (a, b) = pool[i];
                bump(&mut count, &NormalAxiom::Nf1(a, b), -1);
                held.push(Some((a, b)));
            }
            None => {
                shortfall += 1;
                held.push(None);
            }
        }
    }
    // swapped-in pairs are training pairs even though marked as not drawable
    let originally_pool = n - n_held;
    let mut train: Vec<NormalAxiom> = fixed;
    let mut train_pairs = 0;
    for (i, &(c, d)) in pool.iter().enumerate() {
        let keep = if i < originally_pool { in_train[i] } else { true };
        if keep {
            train.push(NormalAxiom::Nf1(c, d));
            train_pairs += 1;
        }
    }
    let valid: Vec<_> = held[..n_valid].iter().flatten().copied().collect();
    let test: Vec<_> = held[n_valid..].iter().flatten().copied().collect();
    let report = SplitReport {
        eligible: n,
        swapped,
        shortfall,
        train_pairs,
        valid_pairs: valid.len(),
        test_pairs: test.len(),
        candidate_count: candidate_set(&onto.classes).len(),
    };
    Ok(Split {
        train,
        valid,
        test,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub valid_hits10: Option<f64>,
}

pub fn log_tsv(log: &[EpochLog]) -> String {
    let mut s = String::from(
        "epoch\ttotal_loss\tnf1_loss\tnf2_loss\tnf3_loss\tnf4_loss\tdisjoint_loss\tneg_loss\tvalid_hits10\n",
    );
    for e in log {
        let l = &e.losses;
        let hits = e.valid_hits10.map(|h| h.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            e.epoch,
            l.total(),
            l.nf1,
            l.nf2,
            l.nf3,
            l.nf4,
            l.disjoint,
            l.negative,
            hits
        ));
    }
    s
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("ontology has no classes")]
    Empty,
    #[error("non-finite loss in epoch {epoch} at `{axiom}`: {params}")]
    NonFinite {
        epoch: usize,
        axiom: String,
        params: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: EmbeddingState,
    pub log: Vec<EpochLog>,
    /// Epoch of the returned checkpoint.
    pub best_epoch: usize,
    pub best_valid_hits10: Option<f64>,
}

/// Initial parameters: unit-norm random centers, radii 0.1, relation vectors
/// uniform in [−0.5, 0.5], sigmas 0.01 (0 for EmEl).
pub fn init_state(
    num_classes: usize,
    num_relations: usize,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> EmbeddingState {
    let dim = config.dim;
    let mut s = EmbeddingState::zeros(num_classes, num_relations, dim);
    for i in 0..num_classes {
        let row = s.class_centers.row_mut(i);
        loop {
            for x in row.iter_mut() {
                *x = rng.gen_range(-1.0..1.0);
            }
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                row.iter_mut().for_each(|x| *x /= n);
                break;
            }
        }
    }
    s.class_radii_raw.fill(0.1);
    for x in s.relation_vectors.as_mut_slice() {
        *x = rng.gen_range(-0.5..0.5);
    }
    let sigma0 = if config.variant.uses_sigma() { 0.01 } else { 0.0 };
    s.relation_sigmas_raw.fill(sigma0);
    s
}

enum OptState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: [Vec<f64>; 4],
        v: [Vec<f64>; 4],
        t: i32,
    },
}

impl OptState {
    fn new(opt: Optimizer, state: &EmbeddingState) -> Self {
        match opt {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam { beta1, beta2, eps } => {
                let zeros = || state.blocks().map(|b| vec![0.0; b.len()]);
                OptState::Adam {
                    beta1,
                    beta2,
                    eps,
                    m: zeros(),
                    v: zeros(),
                    t: 0,
                }
            }
        }
    }

    /// One descent step on `scale · grad`.
    fn step(&mut self, state: &mut EmbeddingState, grad: &Gradient, lr: f64, scale: f64, sigma: bool) {
        let gblocks = grad.blocks();
        let mut pblocks = state.blocks_mut();
        match self {
            OptState::Sgd => {
                for (b, (p, g)) in pblocks.iter_mut().zip(gblocks).enumerate() {
                    if b == 3 && !sigma {
                        continue;
                    }
                    for (x, gx) in p.iter_mut().zip(g) {
                        *x -= lr * scale * gx;
                    }
                }
            }
            OptState::Adam {
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t);
                let bc2 = 1.0 - beta2.powi(*t);
                for (b, (p, g)) in pblocks.iter_mut().zip(gblocks).enumerate() {
                    if b == 3 && !sigma {
                        continue;
                    }
                    let (mb, vb) = (&mut m[b], &mut v[b]);
                    for i in 0..p.len() {
                        let gi = scale * g[i];
                        mb[i] = *beta1 * mb[i] + (1.0 - *beta1) * gi;
                        vb[i] = *beta2 * vb[i] + (1.0 - *beta2) * gi * gi;
                        let mhat = mb[i] / bc1;
                        let vhat = vb[i] / bc2;
                        p[i] -= lr * mhat / (vhat.sqrt() + *eps);
                    }
                }
            }
        }
    }
}

fn positive_terms(onto: &NormalizedOntology) -> Vec<Term> {
    let mut terms: Vec<Term> = onto.axioms.iter().map(|a| Term::Positive(*a)).collect();
    terms.extend(
        onto.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_nominal())
            .map(|(i, _)| Term::NominalPoint(ClassId(i))),
    );
    terms
}

/// Known existential triples; corrupted tails that hit one are redrawn.
struct NegativeSampler {
    positives: HashSet<(ClassId, RelationId, ClassId)>,
    num_classes: usize,
}

const MAX_NEGATIVE_DRAWS: usize = 16;

impl NegativeSampler {
    fn new(onto: &NormalizedOntology) -> Self {
        let positives = onto
            .axioms
            .iter()
            .filter_map(|a| match *a {
                NormalAxiom::Nf3(c, r, d) => Some((c, r, d)),
                _ => None,
            })
            .collect();
        NegativeSampler {
            positives,
            num_classes: onto.classes.len(),
        }
    }

    fn corrupt(&self, c: ClassId, r: RelationId, rng: &mut ChaCha8Rng) -> Option<Term> {
        for _ in 0..MAX_NEGATIVE_DRAWS {
            let d = ClassId(rng.gen_range(0..self.num_classes));
            if !self.positives.contains(&(c, r, d)) {
                return Some(Term::NegativeNf3(c, r, d));
            }
        }
        None
    }
}

fn describe_term(onto: &NormalizedOntology, term: &Term) -> String {
    match term {
        Term::Positive(ax) => onto.describe(ax),
        Term::NegativeNf3(c, r, d) => format!(
            "negative subClassOf({},some({},{}))",
            onto.class_name(*c),
            onto.relation_name(*r),
            onto.class_name(*d)
        ),
        Term::NominalPoint(c) => format!("nominal radius of {}", onto.class_name(*c)),
    }
}

fn term_params(state: &EmbeddingState, term: &Term) -> String {
    let (classes, rel) = match *term {
        Term::Positive(ax) => (
            axiom_classes(&ax),
            match ax {
                NormalAxiom::Nf3(_, r, _) | NormalAxiom::Nf4(r, _, _) => Some(r),
                _ => None,
            },
        ),
        Term::NegativeNf3(c, r, d) => (vec![c, d], Some(r)),
        Term::NominalPoint(c) => (vec![c], None),
    };
    let mut parts: Vec<String> = classes
        .iter()
        .map(|c| {
            format!(
                "class {} radius_raw={} center={:?}",
                c.0,
                state.class_radii_raw[c.0],
                state.center(*c)
            )
        })
        .collect();
    if let Some(r) = rel {
        parts.push(format!(
            "relation {} sigma_raw={} vector={:?}",
            r.0,
            state.relation_sigmas_raw[r.0],
            state.relation(r)
        ));
    }
    parts.join("; ")
}

/// Trains without validation; the final state is returned.
pub fn train(onto: &NormalizedOntology, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with_validation(onto, &[], config)
}

/// Trains on every axiom of `onto`. When `valid` is non-empty the state with
/// the best validation Hits@10 is kept and training stops after `patience`
/// validation rounds without improvement.
pub fn train_with_validation(
    onto: &NormalizedOntology,
    valid: &[(ClassId, ClassId)],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if onto.classes.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = init_state(onto.classes.len(), onto.relations.len(), config, &mut rng);
    let params = config.loss_params();
    let mut items = positive_terms(onto);
    let sampler = NegativeSampler::new(onto);
    let candidates = candidate_set(&onto.classes);
    let pool = (config.threads > 1)
        .then(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .ok()
        })
        .flatten();

    let mut opt = OptState::new(config.optimizer, &state);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, EmbeddingState)> = None;
    let mut stale = 0;
    let mut batch: Vec<Term> = Vec::with_capacity(2 * config.batch_size);

    for epoch in 1..=config.epochs {
        items.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        for chunk in items.chunks(config.batch_size) {
            batch.clear();
            batch.extend_from_slice(chunk);
            if config.negatives {
                for t in chunk {
                    if let Term::Positive(NormalAxiom::Nf3(c, r, _)) = *t {
                        if let Some(neg) = sampler.corrupt(c, r, &mut rng) {
                            batch.push(neg);
                        }
                    }
                }
            }
            let (grad, part) = match &pool {
                Some(p) => p.install(|| gradients_parallel(&batch, &state, &params, config.threads)),
                None => gradients(&batch, &state, &params),
            };
            if !part.total().is_finite() {
                let bad = batch
                    .iter()
                    .find(|t| !evaluate_terms(std::slice::from_ref(t), &state, &params).total().is_finite())
                    .unwrap_or(&batch[0]);
                return Err(TrainError::NonFinite {
                    epoch,
                    axiom: describe_term(onto, bad),
                    params: term_params(&state, bad),
                });
            }
            sums.add(&part);
            opt.step(
                &mut state,
                &grad,
                config.lr,
                1.0 / batch.len() as f64,
                config.variant.uses_sigma(),
            );
        }
        if !state.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                axiom: "parameter update".into(),
                params: "a parameter overflowed after the optimizer step".into(),
            });
        }

        let mut valid_hits10 = None;
        if !valid.is_empty() && epoch % VALIDATION_INTERVAL == 0 {
            let hits = evaluator::evaluate(valid, &state, &candidates)
                .map(|r| r.hits10)
                .unwrap_or(0.0);
            valid_hits10 = Some(hits);
            match &best {
                Some((b, _, _)) if hits <= *b => stale += 1,
                _ => {
                    best = Some((hits, epoch, state.clone()));
                    stale = 0;
                }
            }
        }
        log.push(EpochLog {
            epoch,
            losses: sums,
            valid_hits10,
        });
        if config.patience > 0 && stale >= config.patience {
            break;
        }
    }

    Ok(match best {
        Some((hits, epoch, s)) => TrainOutcome {
            state: s,
            log,
            best_epoch: epoch,
            best_valid_hits10: Some(hits),
        },
        None => TrainOutcome {
            best_epoch: log.len(),
            state,
            log,
            best_valid_hits10: None,
        },
    })
}

/// Loss sums of the positive axioms at `state` (no negatives, no updates).
pub fn final_losses(onto: &NormalizedOntology, state: &EmbeddingState, params: &LossParams) -> LossBreakdown {
    evaluate_terms(&positive_terms(onto), state, params)
}
