use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use delexpara::corpus::{read_skills, DataFormat};
use delexpara::fst::{normalize, read_rules, Matcher, RuleSet};
use delexpara::pipeline::{self, RunConfig};
use delexpara::synth::{synth_corpus, SynthConfig};
use serde_json::json;
use std::fs;
use std::path::PathBuf;

/// Paraphrase generation for delexicalized utterances.
#[derive(Parser, Debug)]
#[command(name = "delexpara", version)]
struct Cli {
    #[command(flatten)]
    run: RunArgs,

    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the JSON run config.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    skills: Option<PathBuf>,
    /// Annotated test utterances (JSONL).
    #[arg(long, global = true)]
    test: Option<PathBuf>,
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// O, AS, ASP, S2P or S3P.
    #[arg(long, global = true)]
    format: Option<DataFormat>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    beam: Option<usize>,
    #[arg(long, global = true)]
    nbest: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample and reformat training pairs, write the vocabulary.
    Prepare,
    /// Train the paraphrase model on prepared pairs.
    Train,
    /// Decode n-best paraphrases for every sample utterance.
    Generate,
    /// Slot copy rate, novelty and diversity of the generated paraphrases.
    EvalIntrinsic,
    /// FST new matches and NLU error rates before and after augmentation.
    EvalExtrinsic,
    /// Every stage in order.
    Run,
    /// Exact-match acceptor over a skill's rules.
    #[command(subcommand)]
    Fst(FstCommand),
    /// Write the synthetic skill corpus and its held-out test set.
    Synth(SynthArgs),
}

#[derive(Subcommand, Debug)]
enum FstCommand {
    /// Write a skill's rules, optionally with extra rules from a paraphrase file.
    Build {
        #[arg(long)]
        skill: String,
        /// Paraphrase JSONL whose entries for `skill` are added as rules.
        #[arg(long)]
        paraphrases: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match utterances (one per line) against a rules file.
    Match {
        #[arg(long)]
        skill: String,
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    count: usize,
    #[arg(long, default_value_t = 5)]
    samples_per_intent: usize,
    #[arg(long, default_value_t = 2)]
    test_fillings: usize,
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(p) = &args.skills {
        cfg.skills = p.clone();
    }
    if let Some(p) = &args.test {
        cfg.test = Some(p.clone());
    }
    if let Some(p) = &args.work_dir {
        cfg.work_dir = p.clone();
    }
    if let Some(f) = args.format {
        cfg.format = f;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = args.beam {
        cfg.beam.beam = b;
    }
    if let Some(n) = args.nbest {
        cfg.beam.nbest = n;
    }
    Ok(cfg)
}

fn print(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let summary = pipeline::train_stage(cfg, |epoch, loss| eprintln!("epoch {epoch}: loss {loss:.4}"))?;
    print(&summary)
}

fn fst(cfg: &RunConfig, cmd: &FstCommand) -> Result<()> {
    let skills = read_skills(&fs::read_to_string(&cfg.skills).with_context(|| format!("reading {}", cfg.skills.display()))?)?;
    let name = match cmd {
        FstCommand::Build { skill, .. } | FstCommand::Match { skill, .. } => skill,
    };
    let Some(skill) = skills.iter().find(|s| &s.skill_name == name) else {
        bail!("no skill named `{name}` in {}", cfg.skills.display());
    };
    match cmd {
        FstCommand::Build { paraphrases, out, .. } => {
            let mut set = RuleSet::with_rules(skill.slots.clone(), skill.sample_utterances.iter().map(|s| s.text.clone()));
            let base = set.len();
            if let Some(path) = paraphrases {
                for r in pipeline::read_paraphrases(path)? {
                    if r.skill == *name {
                        set.insert(r.paraphrase);
                    }
                }
            }
            Matcher::build(&set)?;
            let text: String = set.rules.iter().map(|r| format!("{r}\n")).collect();
            fs::write(out, text)?;
            print(&json!({ "rules": set.len(), "added": set.len() - base }))
        }
        FstCommand::Match { rules, input, .. } => {
            let path = rules.display().to_string();
            let set = RuleSet::with_rules(skill.slots.clone(), read_rules(&fs::read_to_string(rules)?, &path)?);
            let matcher = Matcher::build(&set)?;
            let mut accepted = 0;
            let mut total = 0;
            for line in fs::read_to_string(input)?.lines().filter(|l| !l.trim().is_empty()) {
                total += 1;
                let hit = matcher.find(&normalize(line));
                accepted += usize::from(hit.is_some());
                println!(
                    "{}",
                    json!({ "utterance": line, "rule": hit.as_ref().map(|m| m.rule.to_string()), "spans": hit.map(|m| m.spans) })
                );
            }
            eprintln!("{accepted} of {total} accepted");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli.run)?;
    match &cli.command {
        Command::Prepare => print(&pipeline::prepare(&cfg)?),
        Command::Train => train(&cfg),
        Command::Generate => print(&pipeline::generate_stage(&cfg)?),
        Command::EvalIntrinsic => print(&pipeline::eval_intrinsic(&cfg)?),
        Command::EvalExtrinsic => print(&pipeline::eval_extrinsic(&cfg)?.totals),
        Command::Run => {
            print(&pipeline::prepare(&cfg)?)?;
            train(&cfg)?;
            print(&pipeline::generate_stage(&cfg)?)?;
            print(&pipeline::eval_intrinsic(&cfg)?)?;
            print(&pipeline::eval_extrinsic(&cfg)?.totals)
        }
        Command::Fst(cmd) => fst(&cfg, cmd),
        Command::Synth(a) => {
            let corpus = synth_corpus(&SynthConfig {
                skills: a.count,
                samples_per_intent: a.samples_per_intent,
                test_fillings: a.test_fillings,
                seed: cfg.seed,
            })?;
            let (skills, test) = pipeline::write_synth(&a.out, &corpus)?;
            print(&json!({
                "skills": skills,
                "test": test,
                "sample_utterances": corpus.skills.iter().map(|s| s.sample_utterances.len()).sum::<usize>(),
                "test_utterances": corpus.test.len(),
            }))
        }
    }
}
