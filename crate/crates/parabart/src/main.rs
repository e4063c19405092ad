//! Command-line interface: corpus generation, training, embedding, and the
//! evaluation protocols, one verb per stage.
//!
//! Every artifact-producing run writes a `manifest.json` beside its outputs
//! recording the verb, resolved configuration, seed, `git describe`, and
//! SHA-256 digests of the inputs, so paired ablation runs stay auditable.
//! Commands are referentially transparent: same inputs, flags, and seed —
//! same bytes out. The `PARABART_THREADS` environment variable caps
//! intra-op parallelism; the compute kernels are single-threaded today, so
//! any cap ≥ 1 is simply validated and recorded.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use parabart::check;
use parabart::data::{self, synth};
use parabart::eval::{self, ProbeData, PROBE_HIDDEN};
use parabart::model::Checkpoint;
use parabart::training::{self, Mode, TrainConfig};

#[derive(Parser)]
#[command(
    name = "parabart",
    version,
    about = "Syntax-guided paraphrase model: synthetic data, adversarial training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic paraphrase corpus plus evaluation artifacts.
    GenSynth(GenSynthArgs),
    /// Train a model on a paraphrase corpus.
    Train(TrainArgs),
    /// Embed sentences (one per line) with a trained model.
    Embed(EmbedArgs),
    /// Score similarity files by embedding cosine vs. gold, Pearson's r.
    EvalSts(EvalStsArgs),
    /// Train a probing classifier on frozen sentence embeddings.
    Probe(ProbeArgs),
    /// Split labeled pairs into Easy/Hard files with shared negatives.
    QqpSplit(QqpSplitArgs),
    /// Threshold-search paraphrase classification with a trained model.
    QqpEval(QqpEvalArgs),
    /// Finite-difference checks of every op and the training objective.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// Output directory for the corpus and companion files.
    #[arg(long)]
    out: PathBuf,
    /// Number of paraphrase pairs in the main corpus.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (JSONL paraphrase pairs with parses).
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Architecture/objective variant.
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Learning rate for the semantic encoder and the discriminator.
    #[arg(long, default_value_t = 2e-5)]
    lr_enc: f32,
    /// Learning rate for everything else.
    #[arg(long, default_value_t = 1e-4)]
    lr_rest: f32,
    #[arg(long, default_value_t = 0.1)]
    lambda_adv: f32,
    /// Probability of masking a source content token per step.
    #[arg(long, default_value_t = 0.2)]
    word_dropout: f32,
    #[arg(long, default_value_t = 40)]
    max_sent_len: usize,
    #[arg(long, default_value_t = 160)]
    max_parse_len: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    layers_sem: usize,
    #[arg(long, default_value_t = 1)]
    layers_syn: usize,
    #[arg(long, default_value_t = 1)]
    layers_dec: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Full,
    NoAdv,
    NoAdvNoSyntax,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::NoAdv => Mode::NoAdv,
            ModeArg::NoAdvNoSyntax => Mode::NoAdvNoSyntax,
        }
    }
}

#[derive(Args)]
struct EmbedArgs {
    /// Checkpoint directory (model.pbt + model.json).
    #[arg(long)]
    model: PathBuf,
    /// Text file, one sentence per line; blank lines are skipped.
    #[arg(long)]
    data: PathBuf,
    /// Optional output directory (embeddings.tsv + manifest); without it
    /// the vectors go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalStsArgs {
    #[arg(long)]
    model: PathBuf,
    /// One or more similarity TSV files; the summary is the unweighted
    /// mean of the per-file correlations.
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Probing TSV: split, label, sentence.
    #[arg(long)]
    data: PathBuf,
    /// Hidden-layer width of the probing MLP.
    #[arg(long, default_value_t = PROBE_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QqpSplitArgs {
    /// Labeled-pair TSV pool to split.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for easy.tsv and hard.tsv.
    #[arg(long)]
    out: PathBuf,
    /// Positives per class (and shared negatives).
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct QqpEvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled-pair TSV to score.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    /// First seed of the sweep.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 10)]
    n: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

// ---- manifest and report plumbing ---------------------------------------

#[derive(serde::Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(serde::Serialize)]
struct Manifest {
    command: String,
    argv: Vec<String>,
    config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    git_describe: String,
    inputs: Vec<FileDigest>,
    outputs: Vec<String>,
}

/// Evaluation report written next to (and printed for) every eval verb.
#[derive(serde::Serialize)]
struct Report {
    task: String,
    metric: String,
    value: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    checkpoint_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<serde_json::Value>,
}

fn sha256_file(path: &Path) -> anyhow::Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex,
    })
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_manifest(
    dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[String],
) -> anyhow::Result<()> {
    let manifest = Manifest {
        command: command.to_string(),
        argv: std::env::args().collect(),
        config,
        seed,
        git_describe: git_describe(),
        inputs: inputs
            .iter()
            .map(|p| sha256_file(p))
            .collect::<anyhow::Result<_>>()?,
        outputs: outputs.to_vec(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn checkpoint_hash(model_dir: &Path) -> anyhow::Result<String> {
    Ok(sha256_file(&model_dir.join("model.pbt"))?.sha256)
}

/// Print the report and, when an output directory was requested, persist
/// it with a manifest.
fn emit_report(
    report: &Report,
    out: Option<&Path>,
    command: &str,
    config: serde_json::Value,
    inputs: &[&Path],
) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), report)?;
        write_manifest(
            dir,
            command,
            config,
            report.seed,
            inputs,
            &["report.json".to_string()],
        )?;
    }
    Ok(())
}

fn thread_cap() -> anyhow::Result<usize> {
    match std::env::var("PARABART_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(e) => bail!("PARABART_THREADS is not valid UTF-8: {e}"),
        Ok(v) => {
            let n: usize = v
                .parse()
                .with_context(|| format!("PARABART_THREADS must be a positive integer, got {v:?}"))?;
            if n == 0 {
                bail!("PARABART_THREADS must be at least 1");
            }
            Ok(n)
        }
    }
}

// ---- verbs --------------------------------------------------------------

/// Sizes of the companion artifacts emitted next to the main corpus.
const HELDOUT_PAIRS: usize = 200;
const PROBE_SPLIT: (usize, usize, usize) = (600, 200, 200);
const STS_PAIRS: usize = 200;
const POOL_POSITIVES: usize = 400;
const POOL_NEGATIVES: usize = 200;

fn run_gen_synth(args: &GenSynthArgs) -> anyhow::Result<()> {
    let cfg = synth::SynthConfig::new(args.n, args.seed);
    let corpus = synth::gen_synthetic(&cfg)?;
    fs::create_dir_all(&args.out)?;
    data::save_corpus(&args.out.join("corpus.jsonl"), &corpus.pairs)?;
    let heldout = synth::gen_heldout(&cfg, HELDOUT_PAIRS)?;
    data::save_corpus(&args.out.join("heldout.jsonl"), &heldout)?;
    corpus.tagset.to_file(&args.out.join("tagset.txt"))?;
    let probe = synth::gen_probe(&cfg, PROBE_SPLIT.0, PROBE_SPLIT.1, PROBE_SPLIT.2)?;
    data::save_probe(&args.out.join("probe.tsv"), &probe)?;
    let sts = synth::gen_sts(&cfg, STS_PAIRS)?;
    data::save_sts(&args.out.join("sts.tsv"), &sts)?;
    let pool = synth::gen_labeled_pool(&cfg, POOL_POSITIVES, POOL_NEGATIVES)?;
    data::save_labeled_pairs(&args.out.join("qqp.tsv"), &pool)?;

    let outputs: Vec<String> = [
        "corpus.jsonl",
        "heldout.jsonl",
        "tagset.txt",
        "probe.tsv",
        "sts.tsv",
        "qqp.tsv",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    let config = json!({
        "n_pairs": cfg.n_pairs,
        "n_content_words": cfg.n_content_words,
        "n_templates": cfg.n_templates,
        "heldout_pairs": HELDOUT_PAIRS,
        "probe_split": PROBE_SPLIT,
        "sts_pairs": STS_PAIRS,
        "pool_positives": POOL_POSITIVES,
        "pool_negatives": POOL_NEGATIVES,
    });
    write_manifest(&args.out, "gen-synth", config, Some(args.seed), &[], &outputs)?;
    println!(
        "wrote {} pairs ({} held out) to {}",
        corpus.pairs.len(),
        HELDOUT_PAIRS,
        args.out.display()
    );
    Ok(())
}

fn train_config(args: &TrainArgs) -> TrainConfig {
    let mut cfg = TrainConfig::new(args.seed, args.mode.into());
    cfg.epochs = args.epochs;
    cfg.batch_size = args.batch_size;
    cfg.lr_encoder_and_disc = args.lr_enc;
    cfg.lr_rest = args.lr_rest;
    cfg.lambda_adv = args.lambda_adv;
    cfg.word_dropout_p = args.word_dropout;
    cfg.max_sent_len = args.max_sent_len;
    cfg.max_parse_len = args.max_parse_len;
    cfg.d_model = args.d_model;
    cfg.n_heads = args.heads;
    cfg.layers_sem = args.layers_sem;
    cfg.layers_syn = args.layers_syn;
    cfg.layers_dec = args.layers_dec;
    cfg.d_ff = 4 * args.d_model;
    cfg
}

fn run_train(args: &TrainArgs) -> anyhow::Result<()> {
    let report = data::load_corpus(&args.corpus, true)?;
    let cfg = train_config(args);
    fs::create_dir_all(&args.out)?;
    let outcome = training::train(&report.pairs, &cfg, Some(&args.out))?;
    let outputs = vec![
        "model.pbt".to_string(),
        "model.json".to_string(),
        "train_log.csv".to_string(),
        "val_log.csv".to_string(),
        format!("epoch-001 .. epoch-{:03}", cfg.epochs),
    ];
    write_manifest(
        &args.out,
        "train",
        serde_json::to_value(&cfg)?,
        Some(args.seed),
        &[args.corpus.as_path()],
        &outputs,
    )?;
    println!(
        "trained {} epochs on {} pairs: val L_para {:.4} -> {:.4} (best); checkpoint {}",
        cfg.epochs,
        report.pairs.len(),
        outcome.initial_val,
        outcome.best_val,
        checkpoint_hash(&args.out)?
    );
    Ok(())
}

fn run_embed(args: &EmbedArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&args.model)?;
    let text = fs::read_to_string(&args.data)
        .with_context(|| format!("reading {}", args.data.display()))?;
    let sentences: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if sentences.is_empty() {
        bail!("{} has no sentences", args.data.display());
    }
    let embeddings = eval::embed_sentences(&ckpt, &sentences)?;
    let mut body = String::new();
    for e in &embeddings {
        let row: Vec<String> = e.iter().map(|v| v.to_string()).collect();
        body.push_str(&row.join(" "));
        body.push('\n');
    }
    match &args.out {
        None => print!("{body}"),
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("embeddings.tsv"), &body)?;
            write_manifest(
                dir,
                "embed",
                json!({"d_model": ckpt.params.config.d_model, "sentences": sentences.len()}),
                None,
                &[args.model.join("model.pbt").as_path(), args.data.as_path()],
                &["embeddings.tsv".to_string()],
            )?;
            println!(
                "embedded {} sentences into {}",
                sentences.len(),
                dir.display()
            );
        }
    }
    Ok(())
}

fn run_eval_sts(args: &EvalStsArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&args.model)?;
    let mut files = Vec::with_capacity(args.data.len());
    for path in &args.data {
        files.push(data::load_sts(path)?);
    }
    let (results, mean) = eval::sts_eval_files(&ckpt, &files)?;
    let per_file: Vec<serde_json::Value> = args
        .data
        .iter()
        .zip(&results)
        .map(|(p, r)| json!({"file": p.display().to_string(), "pearson_r": r.pearson_r, "pairs": r.cosines.len()}))
        .collect();
    let report = Report {
        task: "sts".to_string(),
        metric: "pearson_r".to_string(),
        value: mean,
        threshold: None,
        seed: None,
        checkpoint_hash: checkpoint_hash(&args.model)?,
        detail: Some(json!({ "files": per_file })),
    };
    let mut inputs: Vec<&Path> = vec![];
    let model_file = args.model.join("model.pbt");
    inputs.push(model_file.as_path());
    inputs.extend(args.data.iter().map(PathBuf::as_path));
    emit_report(
        &report,
        args.out.as_deref(),
        "eval-sts",
        json!({"files": args.data.len()}),
        &inputs,
    )
}

fn run_probe(args: &ProbeArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&args.model)?;
    let examples = data::load_probe(&args.data)?;
    let pdata = ProbeData::from_examples(&ckpt, &examples)?;
    let task = args
        .data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "probe".to_string());
    let result = eval::probe(&task, &pdata, args.hidden, args.seed)?;
    let report = Report {
        task: format!("probe:{task}"),
        metric: "test_accuracy".to_string(),
        value: result.test_acc,
        threshold: None,
        seed: Some(args.seed),
        checkpoint_hash: checkpoint_hash(&args.model)?,
        detail: Some(json!({
            "train_accuracy": result.train_acc,
            "val_accuracy": result.val_acc,
            "hidden": args.hidden,
        })),
    };
    let model_file = args.model.join("model.pbt");
    emit_report(
        &report,
        args.out.as_deref(),
        "probe",
        json!({"hidden": args.hidden}),
        &[model_file.as_path(), args.data.as_path()],
    )
}

fn run_qqp_split(args: &QqpSplitArgs) -> anyhow::Result<()> {
    let pairs = data::load_labeled_pairs(&args.data)?;
    let (easy, hard) = eval::split_easy_hard(&pairs, args.n, args.seed)?;
    fs::create_dir_all(&args.out)?;
    data::save_labeled_pairs(&args.out.join("easy.tsv"), &easy)?;
    data::save_labeled_pairs(&args.out.join("hard.tsv"), &hard)?;
    write_manifest(
        &args.out,
        "qqp-split",
        json!({"n_per_class": args.n}),
        Some(args.seed),
        &[args.data.as_path()],
        &["easy.tsv".to_string(), "hard.tsv".to_string()],
    )?;
    println!(
        "split {} pairs into easy.tsv and hard.tsv ({} positives + {} shared negatives each) in {}",
        pairs.len(),
        args.n,
        args.n,
        args.out.display()
    );
    Ok(())
}

fn run_qqp_eval(args: &QqpEvalArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&args.model)?;
    let pairs = data::load_labeled_pairs(&args.data)?;
    let result = eval::classify_pairs(&ckpt, &pairs)?;
    let report = Report {
        task: format!(
            "pair-classification:{}",
            args.data
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        ),
        metric: "accuracy".to_string(),
        value: result.accuracy,
        threshold: Some(result.threshold),
        seed: None,
        checkpoint_hash: checkpoint_hash(&args.model)?,
        detail: Some(json!({"pairs": pairs.len()})),
    };
    let model_file = args.model.join("model.pbt");
    emit_report(
        &report,
        args.out.as_deref(),
        "qqp-eval",
        json!({}),
        &[model_file.as_path(), args.data.as_path()],
    )
}

fn run_grad_check(args: &GradCheckArgs) -> anyhow::Result<()> {
    let mut checks = Vec::new();
    let mut worst_op = 0f64;
    let mut worst_composite = 0f64;
    let mut all_pass = true;
    for seed in args.seed..args.seed + args.n {
        for report in check::full_suite(seed) {
            all_pass &= report.pass;
            if report.name == "composite objective" {
                worst_composite = worst_composite.max(report.max_rel_err);
            } else {
                worst_op = worst_op.max(report.max_rel_err);
            }
            checks.push(json!({
                "seed": seed,
                "name": report.name,
                "max_rel_err": report.max_rel_err,
                "checked": report.checked,
                "tolerance": report.tolerance,
                "pass": report.pass,
            }));
        }
    }
    let summary = json!({
        "task": "grad-check",
        "seeds": args.n,
        "first_seed": args.seed,
        "op_tolerance": check::OP_TOL,
        "composite_tolerance": check::COMPOSITE_TOL,
        "worst_op_rel_err": worst_op,
        "worst_composite_rel_err": worst_composite,
        "pass": all_pass,
        "checks": checks,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), &summary)?;
        write_manifest(
            dir,
            "grad-check",
            json!({"seeds": args.n}),
            Some(args.seed),
            &[],
            &["report.json".to_string()],
        )?;
    }
    if !all_pass {
        bail!("gradient checks failed (see report above)");
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let _threads = thread_cap()?;
    match &cli.command {
        Cmd::GenSynth(a) => run_gen_synth(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Embed(a) => run_embed(a),
        Cmd::EvalSts(a) => run_eval_sts(a),
        Cmd::Probe(a) => run_probe(a),
        Cmd::QqpSplit(a) => run_qqp_split(a),
        Cmd::QqpEval(a) => run_qqp_eval(a),
        Cmd::GradCheck(a) => run_grad_check(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
