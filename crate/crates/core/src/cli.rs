//! The `geodl` command line.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::baselines::{
    extract_triples, train_baseline, BaselineConfig, BaselineCost, BaselineError, BaselineKind,
    SavedBaseline,
};
use crate::evaluator::{
    candidate_set, evaluate_with, CenterDistance, Direction, KnownPairs, RankOptions,
    SubsumptionCost,
};
use crate::geometry::{SavedModel, Variant};
use crate::normalizer::{fresh_table_tsv, normalize, ClassId, ClassInfo, NormalizedOntology};
use crate::parser::{parse_str, ConceptExpr, RawAxiom};
use crate::trainer::{self, log_tsv, split, SplitSpec, TrainConfig, TrainError};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "geodl", version, about = "n-ball embeddings for EL++ ontologies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print axiom, class, relation and individual counts.
    Stats { input: PathBuf },
    /// Rewrite an ontology into normal form.
    Normalize { input: PathBuf, output: PathBuf },
    /// Split subclass axioms into train/valid/test files.
    Split {
        #[arg(long)]
        seed: Option<u64>,
        /// Train, valid and test fractions.
        #[arg(long, value_delimiter = ',', num_args = 1)]
        fractions: Option<Vec<f64>>,
        input: PathBuf,
        out_dir: PathBuf,
    },
    /// Train a model on a (normalized or raw) ontology.
    Train(TrainArgs),
    /// Rank held-out subclass pairs with a trained model.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train a translation baseline instead (transe, transh, distmult).
    #[arg(long)]
    model: Option<BaselineKind>,
    train_file: PathBuf,
    model_out: PathBuf,
    log_out: Option<PathBuf>,
    /// Held-out pairs for early stopping.
    valid_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Drop other known subclasses from the candidates (needs the train file).
    #[arg(long)]
    filtered: bool,
    #[arg(long, default_value = "sub-from-super")]
    direction: Direction,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    model_in: PathBuf,
    test_file: PathBuf,
    report_out: PathBuf,
    train_file: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Numeric(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

type CliResult<T> = Result<T, Failure>;

/// Runs one command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            1
        }
        Err(Failure::Numeric(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Stats { input } => stats(&input),
        Command::Normalize { input, output } => normalize_cmd(&input, &output),
        Command::Split {
            seed,
            fractions,
            input,
            out_dir,
        } => split_cmd(seed, fractions, &input, &out_dir),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_axioms(path: &Path) -> anyhow::Result<Vec<RawAxiom>> {
    let text = read(path)?;
    let (axioms, _) = parse_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok(axioms)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn stats(input: &Path) -> CliResult<()> {
    let text = read(input)?;
    let (axioms, st) = parse_str(&text).map_err(|e| anyhow!("{}: {e}", input.display()))?;
    let onto = normalize(&axioms);
    let c = onto.census();
    println!("axioms\t{}", st.axiom_count);
    println!("classes\t{}", st.class_count);
    println!("relations\t{}", st.relation_count);
    println!("individuals\t{}", st.individual_count);
    println!("normalized_axioms\t{}", c.total());
    println!("normalized_classes\t{}", onto.classes.len());
    println!("fresh_classes\t{}", onto.fresh_count());
    println!(
        "nf1\t{}\nnf2\t{}\nnf3\t{}\nnf4\t{}\ndisjoint\t{}\nbottom\t{}",
        c.nf1, c.nf2, c.nf3, c.nf4, c.disjoint, c.bottom
    );
    Ok(())
}

fn normalize_cmd(input: &Path, output: &Path) -> CliResult<()> {
    let onto = normalize(&load_axioms(input)?);
    write(output, &onto.to_string())?;
    write(&sidecar(output, ".fresh.tsv"), &fresh_table_tsv(&onto))?;
    Ok(())
}

fn split_cmd(
    seed: Option<u64>,
    fractions: Option<Vec<f64>>,
    input: &Path,
    out_dir: &Path,
) -> CliResult<()> {
    let mut spec = SplitSpec {
        seed: seed.unwrap_or(DEFAULT_SEED),
        ..Default::default()
    };
    if let Some(f) = fractions {
        if f.len() != 3 {
            return Err(anyhow!("--fractions takes three comma-separated numbers, got {}", f.len()).into());
        }
        (spec.train, spec.valid, spec.test) = (f[0], f[1], f[2]);
    }
    let onto = normalize(&load_axioms(input)?);
    let s = split(&onto, &spec).map_err(anyhow::Error::from)?;
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let header = format!(
        "# geodl split seed={} fractions={},{},{}\n",
        spec.seed, spec.train, spec.valid, spec.test
    );
    let mut train = header.clone();
    for ax in &s.train {
        train.push_str(&onto.format_axiom(ax));
        train.push('\n');
    }
    let pairs = |ps: &[(ClassId, ClassId)]| {
        let mut t = header.clone();
        for &(c, d) in ps {
            t.push_str(&format!("subClassOf({},{})\n", onto.class_name(c), onto.class_name(d)));
        }
        t
    };
    write(&out_dir.join("train.el"), &train)?;
    write(&out_dir.join("valid.el"), &pairs(&s.valid))?;
    write(&out_dir.join("test.el"), &pairs(&s.test))?;
    write(&out_dir.join("split_report.tsv"), &s.report.to_tsv(&spec))?;
    Ok(())
}

/// Reads `subClassOf(C,D)` lines between atomic names and resolves them.
fn load_pairs(path: &Path, index: &HashMap<&str, ClassId>) -> anyhow::Result<Vec<(ClassId, ClassId)>> {
    let mut out = Vec::new();
    for ax in load_axioms(path)? {
        let RawAxiom::SubClassOf(ConceptExpr::Atomic(c), ConceptExpr::Atomic(d)) = &ax else {
            bail!("{}: `{ax}` is not a subclass axiom between named classes", path.display());
        };
        let id = |n: &str| {
            index
                .get(n)
                .copied()
                .ok_or_else(|| anyhow!("{}: class `{n}` is unknown to the model", path.display()))
        };
        out.push((id(c)?, id(d)?));
    }
    Ok(out)
}

fn name_index(classes: &[ClassInfo]) -> HashMap<&str, ClassId> {
    classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.as_str(), ClassId(i)))
        .collect()
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()?;
    Ok(pool.install(f))
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        cfg.apply_kv(&read(path)?)
            .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    } else {
        cfg.seed = DEFAULT_SEED;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    cfg.validate().map_err(anyhow::Error::from)?;
    let onto = normalize(&load_axioms(&a.train_file)?);

    if let Some(kind) = a.model {
        return train_baseline_cmd(kind, &onto, &cfg, &a.model_out);
    }

    let valid = match &a.valid_file {
        Some(p) => load_pairs(p, &name_index(&onto.classes))?,
        None => Vec::new(),
    };
    let outcome = with_threads(cfg.threads, || trainer::train_with_validation(&onto, &valid, &cfg))?
        .map_err(|e| match e {
            TrainError::NonFinite { .. } => Failure::Numeric(e.into()),
            other => Failure::Input(other.into()),
        })?;
    let mut provenance = vec![
        ("seed".to_string(), cfg.seed.to_string()),
        ("threads".to_string(), cfg.threads.to_string()),
        ("epochs_run".to_string(), outcome.log.len().to_string()),
        ("best_epoch".to_string(), outcome.best_epoch.to_string()),
    ];
    for line in cfg.to_kv().lines() {
        if let Some((k, v)) = line.split_once('=') {
            if k != "seed" && k != "threads" {
                provenance.push((format!("config.{k}"), v.to_string()));
            }
        }
    }
    let model = SavedModel {
        variant: cfg.variant,
        margin: cfg.margin,
        classes: onto.classes.clone(),
        relations: onto.relations.clone(),
        state: outcome.state,
        provenance,
    };
    write(&a.model_out, &model.to_tsv())?;
    if let Some(log) = &a.log_out {
        write(log, &log_tsv(&outcome.log))?;
    }
    Ok(())
}

fn train_baseline_cmd(
    kind: BaselineKind,
    onto: &NormalizedOntology,
    cfg: &TrainConfig,
    out: &Path,
) -> CliResult<()> {
    let bc = BaselineConfig {
        dim: cfg.dim,
        margin: cfg.margin,
        lr: cfg.lr,
        epochs: cfg.epochs,
        seed: cfg.seed,
    };
    let state = train_baseline(
        kind,
        &extract_triples(onto),
        onto.classes.len(),
        onto.relations.len(),
        &bc,
    )
    .map_err(|e| match e {
        BaselineError::NonFinite(_) => Failure::Numeric(e.into()),
        other => Failure::Input(other.into()),
    })?;
    let saved = SavedBaseline {
        entity_names: onto.classes.iter().map(|c| c.name.clone()).collect(),
        relation_names: onto.relations.clone(),
        state,
    };
    write(out, &saved.to_tsv())?;
    Ok(())
}

enum LoadedModel {
    Geometric(SavedModel),
    Baseline(SavedBaseline),
}

fn load_model(path: &Path) -> anyhow::Result<LoadedModel> {
    let text = read(path)?;
    let ctx = |e| anyhow!("{}: {e}", path.display());
    if text.starts_with("#geodl-baseline") {
        Ok(LoadedModel::Baseline(SavedBaseline::from_tsv(&text).map_err(ctx)?))
    } else {
        Ok(LoadedModel::Geometric(SavedModel::from_tsv(&text).map_err(ctx)?))
    }
}

fn eval_cmd(a: EvalArgs) -> CliResult<()> {
    if a.filtered && a.train_file.is_none() {
        return Err(anyhow!("--filtered needs the training file as the fourth positional argument").into());
    }
    let model = load_model(&a.model_in)?;
    let (classes, label): (Vec<ClassInfo>, String) = match &model {
        LoadedModel::Geometric(m) => (m.classes.clone(), m.variant.to_string()),
        LoadedModel::Baseline(b) => (
            b.entity_names.iter().map(|n| ClassInfo::from_name(n)).collect(),
            b.state.kind.to_string(),
        ),
    };
    let index = name_index(&classes);
    let tests = load_pairs(&a.test_file, &index)?;
    let known = match &a.train_file {
        Some(p) if a.filtered => {
            let onto = normalize(&load_axioms(p)?);
            let pairs = onto
                .axioms
                .iter()
                .filter_map(|ax| match *ax {
                    crate::normalizer::NormalAxiom::Nf1(c, d) => Some((c, d)),
                    _ => None,
                })
                .map(|(c, d)| {
                    let id = |x: ClassId| {
                        index.get(onto.class_name(x)).copied().ok_or_else(|| {
                            anyhow!("{}: class `{}` is unknown to the model", p.display(), onto.class_name(x))
                        })
                    };
                    Ok((id(c)?, id(d)?))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            Some(KnownPairs::new(pairs))
        }
        _ => None,
    };
    let candidates = candidate_set(&classes);
    let opts = RankOptions {
        direction: a.direction,
        filter: known.as_ref(),
    };
    let threads = a.threads.unwrap_or(1);
    let report = with_threads(threads, || {
        let cost: Box<dyn SubsumptionCost + '_> = match &model {
            LoadedModel::Geometric(m) => Box::new(CenterDistance(&m.state)),
            LoadedModel::Baseline(b) => Box::new(BaselineCost(&b.state)),
        };
        evaluate_with(&tests, cost.as_ref(), &candidates, &opts)
    })?
    .map_err(anyhow::Error::from)?;
    let notes = [
        ("model", label),
        ("direction", a.direction.to_string()),
        ("filtered", a.filtered.to_string()),
        ("seed", a.seed.unwrap_or(DEFAULT_SEED).to_string()),
    ];
    write(&a.report_out, &report.to_tsv(&notes))?;
    write(&sidecar(&a.report_out, ".ranks"), &report.ranks_text())?;
    Ok(())
}
