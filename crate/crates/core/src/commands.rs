//! Subcommand implementations behind the CLI.
//!
//! Each `cmd_*` function is directly callable from tests; `main` only parses
//! arguments, forwards here, and prints whatever the command returns. All
//! output files are deterministic functions of the inputs named in the run
//! manifest. Floats in CSV output use Rust's shortest round-trip rendering,
//! so re-running a command reproduces its files byte for byte.

use std::fs;
use std::path::Path;

use crate::augment::PlanBuilder;
use crate::checkpoint::{
    load_model_checkpoint, load_neighbor_checkpoint, save_model_checkpoint,
    save_neighbor_checkpoint, RunManifest,
};
use crate::config::{Mode, RunConfig};
use crate::corpus::{
    self, build_vocab, load_corpus, load_generated, save_generated, tokenize, CorpusSplit,
    SplitTag, Vocabulary, EOS,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_responses, MetricsReport};
use crate::neighbors::{export_vectors, import_vectors, train_cbow, NeighborModel};
use crate::seeding;
use crate::seq2seq::beam::beam_search;
use crate::seq2seq::Seq2SeqParams;
use crate::training::{self, TrainConfig, TrainOutcome};

/// Missing input files are usage errors (exit code 2), not I/O failures.
fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}

fn write_string(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

/// Decode one response per sample and render it as space-joined tokens. The
/// trailing `<eos>` of a completed hypothesis is stripped; any other
/// reserved token a model emits is rendered literally.
pub fn generate_responses(
    params: &Seq2SeqParams,
    vocab: &Vocabulary,
    split: &CorpusSplit,
    beam: usize,
    max_len: usize,
) -> Result<Vec<String>> {
    split
        .samples
        .iter()
        .map(|sample| {
            let mut ids = beam_search(params, &sample.history, beam, max_len)?;
            if ids.last() == Some(&EOS) {
                ids.pop();
            }
            let words: Vec<&str> = ids.iter().map(|&id| vocab.token(id)).collect();
            Ok(words.join(" "))
        })
        .collect()
}

/// Everything a finished training run leaves on disk: the best-epoch model
/// checkpoint (with optimizer state), the manifest, per-epoch and per-step
/// CSV traces, and the augmentation logs as JSONL.
fn write_train_outputs(
    out_dir: &Path,
    vocab: &Vocabulary,
    outcome: &TrainOutcome,
    manifest: &RunManifest,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    save_model_checkpoint(
        &out_dir.join("model.ckpt"),
        vocab,
        &outcome.params,
        Some(&outcome.adam),
        manifest,
    )?;
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    write_string(&out_dir.join("manifest.json"), &json)?;

    let mut csv = String::from("epoch,step_count,augmented_steps,train_loss,valid_ppl\n");
    for e in &outcome.epochs {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.step_count, e.augmented_steps, e.train_loss, e.valid_ppl
        ));
    }
    write_string(&out_dir.join("epochs.csv"), &csv)?;

    let mut csv = String::from("epoch,step,augmented,loss,grad_norm\n");
    for s in &outcome.steps {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            s.epoch, s.step, s.augmented, s.loss, s.grad_norm
        ));
    }
    write_string(&out_dir.join("steps.csv"), &csv)?;

    let mut jsonl = String::new();
    for entry in &outcome.plan_log {
        jsonl.push_str(&serde_json::to_string(entry)?);
        jsonl.push('\n');
    }
    write_string(&out_dir.join("plans.jsonl"), &jsonl)?;

    let mut jsonl = String::new();
    for entry in &outcome.replacement_log {
        jsonl.push_str(&serde_json::to_string(entry)?);
        jsonl.push('\n');
    }
    write_string(&out_dir.join("replacements.jsonl"), &jsonl)?;
    Ok(())
}

/// Train neighbor vectors on a training corpus. Writes `neighbors.ckpt`,
/// `manifest.json`, a per-epoch loss trace, and the vectors in word2vec text
/// format (`vectors.txt`, loadable via `--init-vectors`).
pub fn cmd_train_neighbors(cfg: &RunConfig, corpus_path: &Path, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    require_file(corpus_path, "corpus")?;
    let raw = load_corpus(corpus_path, SplitTag::Train)?;
    let vocab = build_vocab(&raw, cfg.min_count)?;
    let split = corpus::encode(&raw, &vocab);
    let (model, stats) = train_cbow(&split, &vocab, &cfg.neighbor.to_cbow(), cfg.seed)?;

    fs::create_dir_all(out_dir)?;
    let manifest = RunManifest::new(cfg, &[corpus_path], &vocab, out_dir);
    save_neighbor_checkpoint(&out_dir.join("neighbors.ckpt"), &vocab, &model, &manifest)?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_string(&out_dir.join("manifest.json"), &json)?;

    let mut csv = String::from("epoch,loss\n");
    for (epoch, loss) in stats.epoch_loss.iter().enumerate() {
        csv.push_str(&format!("{epoch},{loss}\n"));
    }
    write_string(&out_dir.join("neighbor_epochs.csv"), &csv)?;
    export_vectors(&model, &vocab, &out_dir.join("vectors.txt"))
}

fn load_neighbors_for(
    cfg: &RunConfig,
    neighbors: Option<&Path>,
    vocab: &Vocabulary,
) -> Result<Option<NeighborModel>> {
    match (cfg.mode.augments(), neighbors) {
        (true, None) => Err(Error::Config(format!(
            "mode {} needs --neighbors (a neighbor checkpoint)",
            cfg.mode
        ))),
        (_, Some(path)) => {
            require_file(path, "neighbor checkpoint")?;
            let ckpt = load_neighbor_checkpoint(path)?;
            ckpt.require_vocab(vocab)?;
            Ok(Some(ckpt.model))
        }
        (false, None) => Ok(None),
    }
}

/// Train a dialogue model and keep the best-validation-perplexity epoch.
///
/// The vocabulary always comes from the train split. `init_vectors`
/// optionally seeds the embedding from a word2vec text file whose dimension
/// must equal `d`; rows for tokens the file lacks fall back to the uniform
/// init, drawn from the same stream as full random initialization.
pub fn cmd_train(
    cfg: &RunConfig,
    train_path: &Path,
    valid_path: &Path,
    neighbors: Option<&Path>,
    init_vectors: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    cfg.validate()?;
    require_file(train_path, "train corpus")?;
    require_file(valid_path, "validation corpus")?;
    let raw_train = load_corpus(train_path, SplitTag::Train)?;
    let raw_valid = load_corpus(valid_path, SplitTag::Valid)?;
    let vocab = build_vocab(&raw_train, cfg.min_count)?;
    let train_split = corpus::encode(&raw_train, &vocab);
    let valid_split = corpus::encode(&raw_valid, &vocab);
    let model = load_neighbors_for(cfg, neighbors, &vocab)?;

    let mut init_rng = seeding::stream(cfg.seed, seeding::STREAM_INIT);
    let init = match init_vectors {
        Some(path) => {
            require_file(path, "embedding vectors")?;
            let embedding = import_vectors(path, &vocab, cfg.d, &mut init_rng)?;
            Seq2SeqParams::init_with_embedding(embedding, cfg.hidden, &mut init_rng)
        }
        None => Seq2SeqParams::init(vocab.len(), cfg.d, cfg.hidden, &mut init_rng),
    };

    let outcome = training::train(
        init,
        &train_split,
        &valid_split,
        &vocab,
        model.as_ref(),
        &TrainConfig::from(cfg),
    )?;
    let manifest = RunManifest::new(cfg, &[train_path, valid_path], &vocab, out_dir);
    write_train_outputs(out_dir, &vocab, &outcome, &manifest)
}

/// Beam-decode a response for every sample in `corpus_path` and write them
/// one per line to `out`.
pub fn cmd_generate(
    model_path: &Path,
    corpus_path: &Path,
    beam: usize,
    max_len: usize,
    out: &Path,
) -> Result<()> {
    require_file(model_path, "model checkpoint")?;
    require_file(corpus_path, "corpus")?;
    let ckpt = load_model_checkpoint(model_path)?;
    let raw = load_corpus(corpus_path, SplitTag::Test)?;
    let split = corpus::encode(&raw, &ckpt.vocab);
    let responses = generate_responses(&ckpt.params, &ckpt.vocab, &split, beam, max_len)?;
    save_generated(out, &responses)
}

/// Score a generated-responses file against the responses of `corpus_path`.
///
/// Perplexity needs a model, so it only appears when `model_path` is given;
/// it is teacher-forced over the reference responses, independent of the
/// candidate file. The report is returned for the caller to print and
/// optionally written to `json_out`.
pub fn cmd_evaluate(
    responses_path: &Path,
    corpus_path: &Path,
    model_path: Option<&Path>,
    json_out: Option<&Path>,
) -> Result<MetricsReport> {
    require_file(responses_path, "responses file")?;
    require_file(corpus_path, "corpus")?;
    let lines = load_generated(responses_path)?;
    if lines.is_empty() {
        return Err(Error::Invalid(format!(
            "no responses in {}",
            responses_path.display()
        )));
    }
    let raw = load_corpus(corpus_path, SplitTag::Test)?;
    let references: Vec<Vec<String>> = raw.samples.iter().map(|s| s.response.clone()).collect();
    if lines.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} has {} responses but {} has {} samples",
            responses_path.display(),
            lines.len(),
            corpus_path.display(),
            references.len()
        )));
    }
    let candidates: Vec<Vec<String>> = lines.iter().map(|l| tokenize(l)).collect();
    let ppl = match model_path {
        Some(path) => {
            require_file(path, "model checkpoint")?;
            let ckpt = load_model_checkpoint(path)?;
            let split = corpus::encode(&raw, &ckpt.vocab);
            Some(training::perplexity(&ckpt.params, &split)?)
        }
        None => None,
    };
    let report = evaluate_responses(&candidates, &references, ppl)?;
    if let Some(path) = json_out {
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        write_string(path, &json)?;
    }
    Ok(report)
}

/// Render which positions of the first `n_samples` samples would be
/// augmented, with each target's full soft word set. Uses the epoch-0
/// selection streams, so the dump previews exactly what the first training
/// epoch would select at this seed.
pub fn cmd_augment_preview(
    cfg: &RunConfig,
    neighbors_path: &Path,
    corpus_path: &Path,
    n_samples: usize,
    out: Option<&Path>,
) -> Result<String> {
    cfg.validate()?;
    require_file(neighbors_path, "neighbor checkpoint")?;
    require_file(corpus_path, "corpus")?;
    let ckpt = load_neighbor_checkpoint(neighbors_path)?;
    let raw = load_corpus(corpus_path, SplitTag::Train)?;
    let split = corpus::encode(&raw, &ckpt.vocab);
    let mut builder = PlanBuilder::new(&ckpt.model, &ckpt.vocab, cfg.k, cfg.tau);

    let mut dump = String::new();
    let render = |buf: &mut String, side: &str, pos: usize, set: &crate::augment::SoftWordSet| {
        buf.push_str(&format!(
            "  {side}[{pos}] {} ->",
            ckpt.vocab.token(set.original())
        ));
        for (tok, p) in set.members() {
            buf.push_str(&format!(" {}:{p:.6}", ckpt.vocab.token(tok)));
        }
        buf.push('\n');
    };
    for (idx, sample) in split.samples.iter().take(n_samples).enumerate() {
        let mut rng = seeding::selection_stream(cfg.seed, 0, idx);
        let plan = builder.plan(sample, cfg.rho, true, &mut rng)?;
        dump.push_str(&format!("sample {idx}\n"));
        if plan.is_empty() {
            dump.push_str("  no targets\n");
            continue;
        }
        for (pos, set) in &plan.history_targets {
            render(&mut dump, "history", *pos, set);
        }
        for (pos, set) in &plan.response_targets {
            render(&mut dump, "response", *pos, set);
        }
    }
    if let Some(path) = out {
        write_string(path, &dump)?;
    }
    Ok(dump)
}

struct EvalWorld {
    vocab: Vocabulary,
    neighbors: NeighborModel,
    train_split: CorpusSplit,
    valid_split: CorpusSplit,
    test_split: CorpusSplit,
    references: Vec<Vec<String>>,
}

fn load_eval_world(
    cfg: &RunConfig,
    train_path: &Path,
    valid_path: &Path,
    test_path: &Path,
    neighbors_path: &Path,
) -> Result<EvalWorld> {
    require_file(train_path, "train corpus")?;
    require_file(valid_path, "validation corpus")?;
    require_file(test_path, "test corpus")?;
    require_file(neighbors_path, "neighbor checkpoint")?;
    let raw_train = load_corpus(train_path, SplitTag::Train)?;
    let raw_valid = load_corpus(valid_path, SplitTag::Valid)?;
    let raw_test = load_corpus(test_path, SplitTag::Test)?;
    let vocab = build_vocab(&raw_train, cfg.min_count)?;
    let ckpt = load_neighbor_checkpoint(neighbors_path)?;
    ckpt.require_vocab(&vocab)?;
    let references = raw_test.samples.iter().map(|s| s.response.clone()).collect();
    Ok(EvalWorld {
        train_split: corpus::encode(&raw_train, &vocab),
        valid_split: corpus::encode(&raw_valid, &vocab),
        test_split: corpus::encode(&raw_test, &vocab),
        neighbors: ckpt.model,
        vocab,
        references,
    })
}

/// Train, decode the test split, and score one run of `run_cfg`.
fn train_and_score(run_cfg: &RunConfig, world: &EvalWorld) -> Result<(TrainOutcome, MetricsReport, Vec<String>)> {
    let mut init_rng = seeding::stream(run_cfg.seed, seeding::STREAM_INIT);
    let init = Seq2SeqParams::init(world.vocab.len(), run_cfg.d, run_cfg.hidden, &mut init_rng);
    let outcome = training::train(
        init,
        &world.train_split,
        &world.valid_split,
        &world.vocab,
        Some(&world.neighbors),
        &TrainConfig::from(run_cfg),
    )?;
    let responses = generate_responses(
        &outcome.params,
        &world.vocab,
        &world.test_split,
        run_cfg.beam,
        run_cfg.max_len,
    )?;
    let candidates: Vec<Vec<String>> = responses.iter().map(|l| tokenize(l)).collect();
    let report = evaluate_responses(&candidates, &world.references, Some(outcome.best_ppl))?;
    Ok((outcome, report, responses))
}

/// Train one model per augmentation ratio, all from the same seed and
/// initialization, and tabulate text metrics on the test split. Returns the
/// CSV, which is also written to `out_csv`.
pub fn cmd_sweep_rho(
    cfg: &RunConfig,
    rhos: &[f64],
    train_path: &Path,
    valid_path: &Path,
    test_path: &Path,
    neighbors_path: &Path,
    out_csv: &Path,
) -> Result<String> {
    cfg.validate()?;
    if !cfg.mode.augments() {
        return Err(Error::Config(format!(
            "sweeping rho needs an augmenting mode, got {}",
            cfg.mode
        )));
    }
    if rhos.is_empty() {
        return Err(Error::Config("rho list is empty".into()));
    }
    for &rho in rhos {
        if !rho.is_finite() || !(0.0..=1.0).contains(&rho) {
            return Err(Error::Config(format!("rho must be in [0, 1], got {rho}")));
        }
    }
    let world = load_eval_world(cfg, train_path, valid_path, test_path, neighbors_path)?;

    let mut csv = String::from("rho,bleu,dist2,sen2\n");
    for &rho in rhos {
        let mut run_cfg = cfg.clone();
        run_cfg.rho = rho;
        let (_, report, _) = train_and_score(&run_cfg, &world)?;
        csv.push_str(&format!(
            "{rho},{},{},{}\n",
            report.bleu, report.dist2, report.sen2
        ));
    }
    write_string(out_csv, &csv)?;
    Ok(csv)
}

/// Train every mode with a shared seed, leaving each run's full outputs in
/// `out_dir/<mode>/`, and tabulate all metrics in `out_dir/ablation.csv`.
/// The `ppl` column is the best epoch's validation perplexity.
pub fn cmd_ablation(
    cfg: &RunConfig,
    train_path: &Path,
    valid_path: &Path,
    test_path: &Path,
    neighbors_path: &Path,
    out_dir: &Path,
) -> Result<String> {
    cfg.validate()?;
    let world = load_eval_world(cfg, train_path, valid_path, test_path, neighbors_path)?;
    fs::create_dir_all(out_dir)?;

    let mut csv = String::from(
        "mode,ppl,bleu,nist4,dist1,dist2,dist3,ent1,ent2,ent3,sen1,sen2,sen3,avg_len\n",
    );
    for mode in Mode::ALL {
        let mut run_cfg = cfg.clone();
        run_cfg.mode = mode;
        let (outcome, report, responses) = train_and_score(&run_cfg, &world)?;
        let mode_dir = out_dir.join(mode.as_str());
        let manifest = RunManifest::new(
            &run_cfg,
            &[train_path, valid_path, test_path],
            &world.vocab,
            &mode_dir,
        );
        write_train_outputs(&mode_dir, &world.vocab, &outcome, &manifest)?;
        save_generated(&mode_dir.join("generated.txt"), &responses)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            mode.as_str(),
            outcome.best_ppl,
            report.bleu,
            report.nist4,
            report.dist1,
            report.dist2,
            report.dist3,
            report.ent1,
            report.ent2,
            report.ent3,
            report.sen1,
            report.sen2,
            report.sen3,
            report.avg_len
        ));
    }
    write_string(&out_dir.join("ablation.csv"), &csv)?;
    Ok(csv)
}
