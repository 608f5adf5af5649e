use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use locco_core::data::{write_pairs, write_texts, Pair};
use locco_core::models::{ModelHandle, OptimizerKind, Role, Seq2Seq};
use locco_core::run_config::{ConfigError, RunConfig};
use locco_core::toy_domain::ToyDomain;
use locco_core::training::{
    annotate_stage, build_vocabulary, evaluate, generator_input, pretrain_denoising,
    pretraining_sequences, run_from_warmup, train_generator_from_annotations, update_stage,
    warmup_stage, Artifacts, Evaluation, Method, TrainingError,
};

const GENERATOR_FLIP: &str = "generator-flip.ckpt";
const ABLATE_DIR: &str = "ablate";

#[derive(Parser)]
#[command(name = "locco", version, about = "Semi-supervised semantic parser training")]
struct Cli {
    /// Run configuration file.
    #[arg(short, long, global = true, default_value = "locco.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/unlabeled/validation/test files to the configured paths.
    GenToy {
        #[arg(long)]
        overwrite: bool,
    },
    /// Supervised warm-up of parser and generator (iteration 0).
    Warmup {
        #[arg(long)]
        overwrite: bool,
    },
    /// One annotation + parser update round from iteration i-1's artifacts.
    Iterate {
        #[arg(long)]
        iteration: u32,
        #[arg(long)]
        overwrite: bool,
    },
    /// Warm-up followed by every iteration.
    Run {
        #[arg(long)]
        overwrite: bool,
    },
    /// Exact match and F1 of a parser checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Train a generator on the final parser's flipped annotations.
    TrainGenerator {
        #[arg(long)]
        overwrite: bool,
    },
    /// Every method from one shared warm-up, scored on the test split.
    Ablate {
        #[arg(long)]
        overwrite: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Supervised,
    Validation,
    Test,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 1;
        }
        if let Some(t) = cause.downcast_ref::<TrainingError>() {
            return match t {
                TrainingError::Config(_) => 1,
                TrainingError::MissingArtifact(_) => 2,
                _ => 3,
            };
        }
    }
    3
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(&cli.config)?;
    let art = Artifacts::new(&cfg.artifact_dir);
    match &cli.command {
        Command::GenToy { overwrite } => gen_toy(&cfg, *overwrite),
        Command::Warmup { overwrite } => {
            clear_run(&art, *overwrite)?;
            warmup(&cfg, &art)
        }
        Command::Iterate { iteration, overwrite } => iterate(&cfg, &art, *iteration, *overwrite),
        Command::Run { overwrite } => {
            clear_run(&art, *overwrite)?;
            warmup(&cfg, &art)?;
            if cfg.training.method.is_semi_supervised() {
                for i in 1..=cfg.training.iterations {
                    iterate(&cfg, &art, i, false)?;
                }
            }
            Ok(())
        }
        Command::Eval { checkpoint, split } => eval(&cfg, &art, checkpoint, *split),
        Command::TrainGenerator { overwrite } => train_generator(&cfg, &art, *overwrite),
        Command::Ablate { overwrite } => ablate(&cfg, *overwrite),
    }
}

fn refuse(path: &Path) -> anyhow::Error {
    ConfigError::Invalid(format!("{} exists; pass --overwrite to replace it", path.display())).into()
}

fn remove(path: &Path) -> Result<()> {
    if path.is_dir() {
        std::fs::remove_dir_all(path)
    } else {
        std::fs::remove_file(path)
    }
    .with_context(|| format!("removing {}", path.display()))
}

/// Removes every artifact of a previous run in the artifact directory.
fn clear_run(art: &Artifacts, overwrite: bool) -> Result<()> {
    let mut stale = Vec::new();
    if let Ok(entries) = std::fs::read_dir(art.root()) {
        for entry in entries {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let is_iteration = name
                .strip_prefix("iter-")
                .is_some_and(|n| n.parse::<u32>().is_ok());
            if is_iteration || path == art.initial() || name == GENERATOR_FLIP {
                stale.push(path);
            }
        }
    }
    stale.sort();
    if let Some(first) = stale.first() {
        if !overwrite {
            return Err(refuse(first));
        }
    }
    for path in stale {
        remove(&path)?;
    }
    Ok(())
}

fn gen_toy(cfg: &RunConfig, overwrite: bool) -> Result<()> {
    let domain = ToyDomain::new(cfg.toy.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let s = cfg.sizes;
    let splits = domain
        .generate(s.supervised, s.unlabeled, s.validation, s.test)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let mut labeled: Vec<(&PathBuf, &[Pair])> = vec![(&cfg.supervised, &splits.corpus.supervised)];
    labeled.extend(cfg.validation.iter().map(|p| (p, splits.validation.as_slice())));
    labeled.extend(cfg.test.iter().map(|p| (p, splits.test.as_slice())));
    let mut targets: Vec<&PathBuf> = labeled.iter().map(|(p, _)| *p).collect();
    targets.push(&cfg.unlabeled);
    for path in &targets {
        if path.exists() && !overwrite {
            return Err(refuse(path));
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    for (path, pairs) in labeled {
        write_pairs(path, pairs)?;
    }
    write_texts(&cfg.unlabeled, &splits.corpus.unlabeled)?;
    eprintln!(
        "wrote {} supervised, {} unlabeled, {} validation, {} test examples",
        splits.corpus.supervised.len(),
        splits.corpus.unlabeled.len(),
        splits.validation.len(),
        splits.test.len()
    );
    Ok(())
}

fn initial_model(cfg: &RunConfig) -> Result<ModelHandle> {
    let corpus = cfg.corpus()?;
    let val = cfg.validation_pairs()?;
    let test = cfg.test_pairs()?;
    let vocab = build_vocabulary(&corpus, &[&val, &test]);
    let mut model = ModelHandle::new(vocab, cfg.model, Role::Parser, cfg.training.seed)?;
    if cfg.pretrain.epochs > 0 {
        eprintln!("pretraining for {} epochs", cfg.pretrain.epochs);
        model = pretrain_denoising(model, &pretraining_sequences(&corpus), OptimizerKind::Adam, &cfg.pretrain)?;
    }
    Ok(model)
}

fn report(label: &str, e: &Evaluation) {
    eprintln!(
        "{label}: exact match {:.4}, F1 {:.4}, mean log q(gold) {:.3}",
        e.accuracy, e.f1, e.loglik
    );
}

fn warmup(cfg: &RunConfig, art: &Artifacts) -> Result<()> {
    let initial = initial_model(cfg)?;
    let corpus = cfg.corpus()?;
    let val = cfg.validation_pairs()?;
    let out = warmup_stage(&initial, &corpus, &val, &cfg.training, art)?;
    if !val.is_empty() {
        report("warm-up validation", &evaluate(&out.parser, &val, cfg.training.kind));
    }
    Ok(())
}

fn iterate(cfg: &RunConfig, art: &Artifacts, iteration: u32, overwrite: bool) -> Result<()> {
    if iteration == 0 {
        return Err(ConfigError::Invalid("iterations are numbered from 1; use `warmup` for 0".into()).into());
    }
    let dir = art.iteration_dir(iteration);
    if dir.exists() {
        if !overwrite {
            return Err(refuse(&dir));
        }
        remove(&dir)?;
    }
    let corpus = cfg.corpus()?;
    let val = cfg.validation_pairs()?;
    let prior = annotate_stage::<ModelHandle>(iteration, &corpus, &cfg.training, art)?;
    let out = update_stage::<ModelHandle>(iteration, &corpus, &val, &cfg.training, art)?;
    eprintln!(
        "iteration {iteration}: {} prior parts, {} update steps",
        prior.len(),
        out.steps
    );
    if !val.is_empty() {
        report(&format!("iteration {iteration} validation"), &evaluate(&out.parser, &val, cfg.training.kind));
    }
    Ok(())
}

fn split_pairs(cfg: &RunConfig, split: Split) -> Result<Vec<Pair>> {
    let (pairs, name) = match split {
        Split::Supervised => (cfg.corpus()?.supervised, "supervised"),
        Split::Validation => (cfg.validation_pairs()?, "validation"),
        Split::Test => (cfg.test_pairs()?, "test"),
    };
    if pairs.is_empty() {
        return Err(ConfigError::Invalid(format!("no {name} examples configured")).into());
    }
    Ok(pairs)
}

fn eval(cfg: &RunConfig, art: &Artifacts, checkpoint: &Path, split: Split) -> Result<()> {
    let pairs = split_pairs(cfg, split)?;
    let parser: ModelHandle = art.load_model(checkpoint.to_path_buf())?;
    let e = evaluate(&parser, &pairs, cfg.training.kind);
    let out = serde_json::json!({
        "checkpoint": checkpoint.display().to_string(),
        "examples": pairs.len(),
        "exact_match": e.accuracy,
        "f1": e.f1,
        "precision": e.precision,
        "recall": e.recall,
        "loglik": e.loglik,
    });
    println!("{out}");
    Ok(())
}

fn final_iteration(cfg: &RunConfig) -> u32 {
    if cfg.training.method.is_semi_supervised() {
        cfg.training.iterations
    } else {
        0
    }
}

fn train_generator(cfg: &RunConfig, art: &Artifacts, overwrite: bool) -> Result<()> {
    let target = art.root().join(GENERATOR_FLIP);
    if target.exists() && !overwrite {
        return Err(refuse(&target));
    }
    let parser: ModelHandle = art.load_model(art.parser(final_iteration(cfg)))?;
    let initial: ModelHandle = art.load_model(art.initial())?;
    let corpus = cfg.corpus()?;
    let val = cfg.validation_pairs()?;
    let generator =
        train_generator_from_annotations(&parser, &initial, &corpus.unlabeled, &corpus.supervised, &val, &cfg.training)?;
    generator.save(&target)?;
    let test = cfg.test_pairs()?;
    if !test.is_empty() {
        let hits = test
            .iter()
            .filter(|p| generator.greedy(&generator_input(&p.form.linearize())).text() == p.text)
            .count();
        eprintln!("test text reconstruction: {hits}/{}", test.len());
    }
    eprintln!("wrote {}", target.display());
    Ok(())
}

fn ablate(cfg: &RunConfig, overwrite: bool) -> Result<()> {
    let root = cfg.artifact_dir.join(ABLATE_DIR);
    if root.exists() {
        if !overwrite {
            return Err(refuse(&root));
        }
        remove(&root)?;
    }
    let corpus = cfg.corpus()?;
    let val = cfg.validation_pairs()?;
    let test = split_pairs(cfg, Split::Test)?;
    let shared = Artifacts::new(root.join("warmup"));
    let initial = initial_model(cfg)?;
    let warm = warmup_stage(&initial, &corpus, &val, &cfg.training, &shared)?;

    let mut rows = Vec::new();
    for method in Method::ALL {
        let e = if method == Method::GoldOnly {
            evaluate(&warm.parser, &test, cfg.training.kind)
        } else {
            let art = Artifacts::new(root.join(method.name()));
            shared.copy_warmup_to(&art)?;
            let run_cfg = locco_core::training::IterationConfig {
                method,
                ..cfg.training.clone()
            };
            let out = run_from_warmup(art.load_warmup::<ModelHandle>()?, &corpus, &val, &run_cfg, &art)?;
            evaluate(&out.parser, &test, cfg.training.kind)
        };
        report(method.name(), &e);
        rows.push((method, e));
    }

    let table_path = root.join("results.tsv");
    let mut out = std::fs::File::create(&table_path).with_context(|| format!("creating {}", table_path.display()))?;
    let mut stdout = std::io::stdout().lock();
    for sink in [&mut out as &mut dyn Write, &mut stdout] {
        writeln!(sink, "method\texact_match\tf1\tprecision\trecall")?;
        for (m, e) in &rows {
            writeln!(sink, "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}", m.name(), e.accuracy, e.f1, e.precision, e.recall)?;
        }
    }
    Ok(())
}
