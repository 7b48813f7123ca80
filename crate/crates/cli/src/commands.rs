use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use coins_core::coins::{
    baseline_sequence, csi_sequences, enrich_with_silver, joint_item, run as run_mode, run_baseline, run_seg,
    seg_joint_item, seg_sequence, sentence_sequences, Completion, GenerationTrace, Models, RunMode,
};
use coins_core::data::import::{import_records, ImportOptions};
use coins_core::data::rules::{aggregate_rules, GlucoseRecord, RelationType};
use coins_core::data::serialize::SentenceInput;
use coins_core::data::synthetic::{generate, SyntheticConfig};
use coins_core::data::tasks::{
    attach_annotated_rules, build_nsc_corpus, build_seg_corpus, csi_examples, index_records, split_by_story,
};
use coins_core::data::{jsonl, NscExample, SegExample, Story};
use coins_core::lm::{
    perplexity, EpochReport, JointItem, JointObjective, LanguageModel, MaskedSequence, ModelRole, SequenceObjective,
    Trainer,
};
use coins_core::metrics::{evaluate_corpus, fleiss_kappa, MetricReport, RatingMatrix, Scores};
use coins_core::Vocab;
use serde::{Deserialize, Serialize};

use crate::artifacts::{OutDir, MANIFEST};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::{Cli, Command};

/// Parameter type of every model the CLI trains or loads.
type Model = LanguageModel<f32>;

/// One completed story: the generated sentences only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub id: String,
    pub sentences: Vec<String>,
}

#[derive(Serialize)]
struct EvaluationReport {
    #[serde(flatten)]
    metrics: MetricReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    fleiss_kappa: Option<f64>,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth { .. } => "synth",
        Command::ImportGlucose { .. } => "import-glucose",
        Command::BuildNsc { .. } => "build-nsc",
        Command::BuildSeg { .. } => "build-seg",
        Command::TrainVocab { .. } => "train-vocab",
        Command::TrainCsi { .. } => "train-csi",
        Command::Enrich { .. } => "enrich",
        Command::TrainCoins { .. } => "train-coins",
        Command::TrainBaseline { .. } => "train-baseline",
        Command::Complete { .. } => "complete",
        Command::Evaluate { .. } => "evaluate",
        Command::InspectTrace { .. } => "inspect-trace",
    }
}

/// Initialization seed of a freshly created model.
pub fn model_seed(seed: u64, role: ModelRole) -> u64 {
    let k = match role {
        ModelRole::Sentence => 1,
        ModelRole::CsiGen | ModelRole::CsiSpec => 2,
        ModelRole::Baseline => 3,
    };
    seed.wrapping_mul(3).wrapping_add(k)
}

fn csi_role(cfg: &RunConfig) -> ModelRole {
    match cfg.flavor {
        coins_core::data::RuleFlavor::General => ModelRole::CsiGen,
        coins_core::data::RuleFlavor::Specific => ModelRole::CsiSpec,
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    Ok(jsonl::read(path)?)
}

fn load_vocab(path: &Path) -> Result<Vocab, CliError> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    Ok(Vocab::load(path)?)
}

fn load_model(path: &Path, expect: &[ModelRole]) -> Result<Model, CliError> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    let (m, role) = Model::load(path)?;
    if !expect.contains(&role) {
        return Err(CliError::Schema(format!(
            "{} holds a {role:?} model, expected one of {expect:?}",
            path.display()
        )));
    }
    Ok(m)
}

fn fresh_model(cfg: &RunConfig, vocab: &Vocab, role: ModelRole) -> Result<Model, CliError> {
    Ok(Model::new_random(
        cfg.model.lm_config(vocab.len()),
        model_seed(cfg.seed, role),
    )?)
}

fn write_log(out: &OutDir, reports: &[EpochReport]) -> Result<(), CliError> {
    Ok(jsonl::write(&out.join("train_log.jsonl"), reports)?)
}

fn write_splits<T: Serialize + Clone>(
    out: &OutDir,
    items: &[T],
    id_of: impl Fn(&T) -> &str,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let (train, dev, test) = split_by_story(items, id_of, cfg.data.dev_fraction, cfg.data.test_fraction, cfg.seed)?;
    for (name, part) in [("train", &train), ("dev", &dev), ("test", &test)] {
        jsonl::write(&out.join(&format!("{name}.jsonl")), part)?;
    }
    log::info!(
        "split {} items: {} train, {} dev, {} test",
        items.len(),
        train.len(),
        dev.len(),
        test.len()
    );
    Ok(())
}

/// Input files named on the command line.
fn input_paths(c: &Command) -> Vec<&Path> {
    let mut v: Vec<&PathBuf> = Vec::new();
    match c {
        Command::Synth { .. } | Command::InspectTrace { .. } => {}
        Command::ImportGlucose { input, .. } => v.push(input),
        Command::BuildNsc { stories, records } => v.extend(std::iter::once(stories).chain(records)),
        Command::BuildSeg { stories } => v.push(stories),
        Command::TrainVocab { stories, records } => v.extend(stories.iter().chain(records)),
        Command::TrainCsi {
            vocab,
            stories,
            records,
        } => v.extend([vocab, stories, records]),
        Command::Enrich { vocab, csi, nsc } => v.extend([vocab, csi, nsc]),
        Command::TrainCoins {
            vocab,
            nsc,
            seg,
            records,
            csi,
        } => v.extend(std::iter::once(vocab).chain(nsc).chain(seg).chain(records).chain(csi)),
        Command::TrainBaseline { vocab, nsc } => v.extend([vocab, nsc]),
        Command::Complete {
            vocab,
            sentence,
            csi,
            baseline,
            nsc,
            seg,
        } => v.extend(
            std::iter::once(vocab)
                .chain(sentence)
                .chain(csi)
                .chain(baseline)
                .chain(nsc)
                .chain(seg),
        ),
        Command::Evaluate {
            gold,
            system,
            ppl_model,
            vocab,
            ratings,
        } => v.extend(gold.iter().chain(system).chain(ppl_model).chain(vocab).chain(ratings)),
    }
    v.into_iter().map(PathBuf::as_path).collect()
}

pub fn run(cli: &Cli, cfg: RunConfig) -> Result<(), CliError> {
    let name = command_name(&cli.command);
    if let Some(p) = input_paths(&cli.command).into_iter().find(|p| !p.exists()) {
        return Err(CliError::MissingFile(p.to_path_buf()));
    }
    if let Command::InspectTrace { trace } = &cli.command {
        return inspect_trace(trace);
    }
    let out = OutDir::create(&cli.global.out, cli.global.force, name, &cfg)?;
    match &cli.command {
        Command::Synth { stories, sentences } => {
            let corpus = generate(&SyntheticConfig {
                stories: stories.unwrap_or(cfg.data.synthetic_stories),
                sentences: sentences.unwrap_or(cfg.data.synthetic_sentences),
                seed: cfg.seed,
            })?;
            jsonl::write(&out.join("stories.jsonl"), &corpus.stories)?;
            jsonl::write(&out.join("records.jsonl"), &corpus.records)?;
        }
        Command::ImportGlucose { input, tsv } => {
            let file = std::fs::File::open(input).map_err(|e| CliError::io(input, e))?;
            let opts = ImportOptions {
                delimiter: if *tsv { b'\t' } else { b',' },
                ..ImportOptions::default()
            };
            let records = import_records(file, &opts)?;
            jsonl::write(&out.join("records.jsonl"), &records)?;
        }
        Command::BuildNsc { stories, records } => {
            let stories: Vec<Story> = read_jsonl(stories)?;
            let stories: Vec<Story> = stories.iter().map(Story::sanitized).collect();
            let mut corpus = build_nsc_corpus(&stories);
            if let Some(r) = records {
                let records: Vec<GlucoseRecord> = read_jsonl(r)?;
                attach_annotated_rules(&mut corpus, &records, cfg.flavor);
            }
            write_splits(&out, &corpus, |e: &NscExample| e.id.as_str(), &cfg)?;
        }
        Command::BuildSeg { stories } => {
            let stories: Vec<Story> = read_jsonl(stories)?;
            let stories: Vec<Story> = stories.iter().map(Story::sanitized).collect();
            let corpus = build_seg_corpus(&stories);
            write_splits(&out, &corpus, |e: &SegExample| e.id.as_str(), &cfg)?;
        }
        Command::TrainVocab { stories, records } => {
            let mut texts: Vec<String> = Vec::new();
            for p in stories {
                let s: Vec<Story> = read_jsonl(p)?;
                texts.extend(s.into_iter().flat_map(|s| s.sentences));
            }
            if let Some(r) = records {
                let records: Vec<GlucoseRecord> = read_jsonl(r)?;
                texts.extend(records.into_iter().flat_map(|r| [r.specific.raw, r.general.raw]));
            }
            let vocab = Vocab::train(
                texts.iter().map(String::as_str),
                cfg.data.max_vocab,
                cfg.data.min_freq,
                cfg.data.lowercase,
            )?;
            vocab.save(&out.join("vocab.json"))?;
        }
        Command::TrainCsi {
            vocab,
            stories,
            records,
        } => {
            let vocab = load_vocab(vocab)?;
            let stories: Vec<Story> = read_jsonl(stories)?;
            let records: Vec<GlucoseRecord> = read_jsonl(records)?;
            let index = index_records(&records);
            let examples: Vec<_> = stories
                .iter()
                .flat_map(|s| {
                    let recs = index.get(s.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                    csi_examples(&s.sanitized(), recs, cfg.flavor, cfg.train.csi_context)
                })
                .collect();
            let seqs = csi_sequences(&examples, &vocab, &cfg.limits())?;
            let items: Vec<Vec<MaskedSequence>> = seqs.into_iter().map(|s| vec![s]).collect();
            let role = csi_role(&cfg);
            let model = fresh_model(&cfg, &vocab, role)?;
            let mut trainer = Trainer::new(vec![model], cfg.train_config(), vec![1.0])?;
            let reports = trainer.fit(&SequenceObjective, &items)?;
            write_log(&out, &reports)?;
            trainer.models[0].save(&out.join("csi.ckpt"), role)?;
        }
        Command::Enrich { vocab, csi, nsc } => {
            let vocab = load_vocab(vocab)?;
            let csi = load_model(csi, &[ModelRole::CsiGen, ModelRole::CsiSpec])?;
            let corpus: Vec<NscExample> = read_jsonl(nsc)?;
            let enriched = enrich_with_silver(&csi, &vocab, &corpus, cfg.flavor, &cfg.enrich_decode());
            jsonl::write(&out.join("nsc.jsonl"), &enriched)?;
        }
        Command::TrainCoins {
            vocab,
            nsc,
            seg,
            records,
            csi,
        } => {
            let vocab = load_vocab(vocab)?;
            let role = csi_role(&cfg);
            let beta = match csi {
                Some(p) => load_model(p, &[role])?,
                None => fresh_model(&cfg, &vocab, role)?,
            };
            let theta = fresh_model(&cfg, &vocab, ModelRole::Sentence)?;
            let weights = vec![1.0, cfg.train.rule_loss_weight];
            let mut trainer = Trainer::new(vec![theta, beta], cfg.train_config(), weights)?;
            let reports = if cfg.mode == RunMode::Seg {
                let seg = seg
                    .as_deref()
                    .ok_or_else(|| CliError::Config("--mode seg needs --seg".into()))?;
                let records = records
                    .as_deref()
                    .ok_or_else(|| CliError::Config("--mode seg needs --records".into()))?;
                let items = seg_items(&vocab, seg, records, &cfg)?;
                trainer.fit(&JointObjective, &items)?
            } else {
                let nsc = nsc
                    .as_deref()
                    .ok_or_else(|| CliError::Config("train-coins needs --nsc".into()))?;
                let corpus: Vec<NscExample> = read_jsonl(nsc)?;
                train_coins_nsc(&mut trainer, &vocab, &corpus, &cfg)?
            };
            write_log(&out, &reports)?;
            trainer.models[0].save(&out.join("sentence.ckpt"), ModelRole::Sentence)?;
            trainer.models[1].save(&out.join("csi.ckpt"), role)?;
        }
        Command::TrainBaseline { vocab, nsc } => {
            let vocab = load_vocab(vocab)?;
            let corpus: Vec<NscExample> = read_jsonl(nsc)?;
            let limits = cfg.limits();
            let items = corpus
                .iter()
                .map(|e| Ok(vec![baseline_sequence(e, &vocab, &limits)?]))
                .collect::<Result<Vec<_>, CliError>>()?;
            let model = fresh_model(&cfg, &vocab, ModelRole::Baseline)?;
            let mut trainer = Trainer::new(vec![model], cfg.train_config(), vec![1.0])?;
            let reports = trainer.fit(&SequenceObjective, &items)?;
            write_log(&out, &reports)?;
            trainer.models[0].save(&out.join("baseline.ckpt"), ModelRole::Baseline)?;
        }
        Command::Complete {
            vocab,
            sentence,
            csi,
            baseline,
            nsc,
            seg,
        } => {
            let vocab = load_vocab(vocab)?;
            complete(&out, &vocab, sentence, csi, baseline, nsc, seg, &cfg)?;
        }
        Command::Evaluate {
            gold,
            system,
            ppl_model,
            vocab,
            ratings,
        } => evaluate(
            &out,
            gold.as_deref(),
            system,
            ppl_model,
            vocab.as_deref(),
            ratings.as_deref(),
            &cfg,
        )?,
        Command::InspectTrace { .. } => unreachable!("handled above"),
    }
    eprintln!("{name}: wrote {}", out.path.display());
    Ok(())
}

/// Joint training on completion stories. With `condition_on_decoded_rules`
/// the sentence model's rules are re-decoded by the current rule generator
/// before every epoch; the rule generator always learns the provided rules.
fn train_coins_nsc(
    trainer: &mut Trainer<f32>,
    vocab: &Vocab,
    corpus: &[NscExample],
    cfg: &RunConfig,
) -> Result<Vec<EpochReport>, CliError> {
    let limits = cfg.limits();
    let inputs = &cfg.train.inputs;
    if corpus.iter().any(|e| e.silver_rules.is_none()) && inputs.iter().any(|i| i.uses_rules()) {
        return Err(CliError::Schema(
            "training stories lack rules; run build-nsc with --records or enrich first".into(),
        ));
    }
    let provided = corpus
        .iter()
        .map(|e| joint_item(e, vocab, inputs, &limits))
        .collect::<Result<Vec<JointItem>, _>>()?;
    if !cfg.train.condition_on_decoded_rules {
        return Ok(trainer.fit(&JointObjective, &provided)?);
    }
    let mut reports = Vec::new();
    for epoch in 0..cfg.train.epochs {
        let decoded = enrich_with_silver(&trainer.models[1], vocab, corpus, cfg.flavor, &cfg.enrich_decode());
        let items = decoded
            .iter()
            .zip(&provided)
            .map(|(e, p)| {
                Ok(JointItem {
                    sentence: sentence_sequences(e, vocab, inputs, &limits)?,
                    rules: p.rules.clone(),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        match trainer.run_epoch(&JointObjective, &items, epoch)? {
            Some(r) => reports.push(r),
            None => break,
        }
    }
    Ok(reports)
}

fn seg_items(vocab: &Vocab, seg: &Path, records: &Path, cfg: &RunConfig) -> Result<Vec<JointItem>, CliError> {
    let corpus: Vec<SegExample> = read_jsonl(seg)?;
    let records: Vec<GlucoseRecord> = read_jsonl(records)?;
    let index = index_records(&records);
    let limits = cfg.limits();
    corpus
        .iter()
        .map(|e| {
            let recs = index.get(e.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let effect = aggregate_rules(recs, 4, RelationType::Effect, cfg.flavor);
            Ok(seg_joint_item(e, &effect, vocab, &limits)?)
        })
        .collect()
}

fn write_completion(out: &OutDir, c: &Completion) -> Result<(), CliError> {
    let traces = out.subdir("traces")?;
    c.trace.write(&traces, &c.story_id)?;
    let memory = out.subdir("memory")?;
    c.memory
        .to_checkpoint()
        .save(&memory.join(format!("{}.ckpt", c.story_id)))?;
    if let Some(e) = &c.trace.error {
        log::warn!("story {}: completion stopped early: {e}", c.story_id);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn complete(
    out: &OutDir,
    vocab: &Vocab,
    sentence: &Option<PathBuf>,
    csi: &Option<PathBuf>,
    baseline: &Option<PathBuf>,
    nsc: &Option<PathBuf>,
    seg: &Option<PathBuf>,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let controller = cfg.controller();
    let mut records = Vec::new();
    if let Some(b) = baseline {
        let model = load_model(b, &[ModelRole::Baseline])?;
        let nsc = nsc
            .as_deref()
            .ok_or_else(|| CliError::Config("--baseline needs --nsc".into()))?;
        for ex in read_jsonl::<NscExample>(nsc)? {
            let (sentences, _) = run_baseline(&model, vocab, &ex, &controller.sentence_decode)?;
            records.push(CompletionRecord { id: ex.id, sentences });
        }
        jsonl::write(&out.join("completions.jsonl"), &records)?;
        return Ok(());
    }
    let sentence = sentence
        .as_deref()
        .ok_or_else(|| CliError::Config("complete needs --sentence or --baseline".into()))?;
    let theta = load_model(sentence, &[ModelRole::Sentence])?;
    let beta = match csi {
        Some(p) => Some(load_model(p, &[ModelRole::CsiGen, ModelRole::CsiSpec])?),
        None if cfg.mode.decodes_rules() => {
            return Err(CliError::Config(format!("mode {:?} needs --csi", cfg.mode)));
        }
        None => None,
    };
    let models = Models {
        vocab,
        csi: beta.as_ref(),
        sentence: &theta,
    };
    if cfg.mode == RunMode::Seg {
        let seg = seg
            .as_deref()
            .ok_or_else(|| CliError::Config("--mode seg needs --seg".into()))?;
        for ex in read_jsonl::<SegExample>(seg)? {
            let c = run_seg(&models, &ex.id, &ex.context, &controller)?;
            write_completion(out, &c)?;
            records.push(CompletionRecord {
                id: c.story_id,
                sentences: c.generated,
            });
        }
    } else {
        let nsc = nsc
            .as_deref()
            .ok_or_else(|| CliError::Config("complete needs --nsc".into()))?;
        let corpus: Vec<NscExample> = read_jsonl(nsc)?;
        if cfg.mode == RunMode::Oracle {
            let missing = corpus
                .iter()
                .find(|e| e.silver_rules.is_none() || e.iterations().any(|i| e.silver(i).is_none()));
            if let Some(e) = missing {
                return Err(CliError::Schema(format!(
                    "{}: story {} has no provided rules; oracle mode needs them for every iteration",
                    nsc.display(),
                    e.id
                )));
            }
        }
        for ex in corpus {
            let c = run_mode(&models, &ex, cfg.mode, &controller)?;
            write_completion(out, &c)?;
            records.push(CompletionRecord {
                id: c.story_id,
                sentences: c.generated,
            });
        }
    }
    jsonl::write(&out.join("completions.jsonl"), &records)?;
    Ok(())
}

enum GoldCorpus {
    Nsc(Vec<NscExample>),
    Seg(Vec<SegExample>),
}

fn read_values(path: &Path) -> Result<Vec<serde_json::Value>, CliError> {
    read_jsonl(path)
}

fn read_gold(path: &Path) -> Result<GoldCorpus, CliError> {
    let values = read_values(path)?;
    let first = values
        .first()
        .ok_or_else(|| CliError::Schema(format!("{} is empty", path.display())))?;
    if first.get("targets").is_some() {
        let v = values
            .into_iter()
            .map(serde_json::from_value)
            .collect::<Result<_, _>>()?;
        Ok(GoldCorpus::Nsc(v))
    } else if first.get("target").is_some() {
        let v = values
            .into_iter()
            .map(serde_json::from_value)
            .collect::<Result<_, _>>()?;
        Ok(GoldCorpus::Seg(v))
    } else {
        Err(CliError::Schema(format!(
            "{}: gold records need `targets` (completion) or `target` (ending)",
            path.display()
        )))
    }
}

fn gold_texts(gold: &GoldCorpus) -> BTreeMap<String, String> {
    match gold {
        GoldCorpus::Nsc(v) => v.iter().map(|e| (e.id.clone(), e.targets.join(" "))).collect(),
        GoldCorpus::Seg(v) => v.iter().map(|e| (e.id.clone(), e.target.clone())).collect(),
    }
}

/// System text per story from completion (`sentences`), completion-corpus
/// (`targets`) or ending (`target`) records.
fn system_texts(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (k, v) in read_values(path)?.into_iter().enumerate() {
        let id = v.get("id").and_then(|x| x.as_str()).map(str::to_string);
        let strings = |key: &str| -> Option<String> {
            let arr = v.get(key)?.as_array()?;
            let s: Option<Vec<&str>> = arr.iter().map(|x| x.as_str()).collect();
            Some(s?.join(" "))
        };
        let text = strings("sentences")
            .or_else(|| strings("targets"))
            .or_else(|| v.get("target").and_then(|x| x.as_str()).map(str::to_string));
        match (id, text) {
            (Some(id), Some(text)) => {
                if out.insert(id.clone(), text).is_some() {
                    return Err(CliError::Schema(format!("{}: duplicate id {id}", path.display())));
                }
            }
            _ => {
                return Err(CliError::Schema(format!(
                    "{} line {}: expected `id` with `sentences`, `targets` or `target`",
                    path.display(),
                    k + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Seed recorded in the run manifest beside `path`, if any.
fn run_seed(path: &Path) -> Option<u64> {
    let manifest = path.parent()?.join(MANIFEST);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(manifest).ok()?).ok()?;
    v.get("config")?.get("seed")?.as_u64()
}

fn gold_sequences(
    gold: &GoldCorpus,
    role: ModelRole,
    vocab: &Vocab,
    cfg: &RunConfig,
) -> Result<Vec<MaskedSequence>, CliError> {
    let limits = cfg.limits();
    let mut out = Vec::new();
    match (gold, role) {
        (GoldCorpus::Nsc(v), ModelRole::Baseline) => {
            for e in v {
                out.push(baseline_sequence(e, vocab, &limits)?);
            }
        }
        (GoldCorpus::Nsc(v), ModelRole::Sentence) => {
            for e in v {
                out.extend(sentence_sequences(e, vocab, &[SentenceInput::Full], &limits)?);
            }
        }
        (GoldCorpus::Seg(v), ModelRole::Sentence) => {
            for e in v {
                out.push(seg_sequence(e, &[], vocab, &limits)?);
            }
        }
        (_, role) => {
            return Err(CliError::Config(format!(
                "perplexity of a {role:?} model on this gold corpus is undefined"
            )))
        }
    }
    Ok(out)
}

fn evaluate(
    out: &OutDir,
    gold: Option<&Path>,
    system: &[PathBuf],
    ppl_model: &[PathBuf],
    vocab: Option<&Path>,
    ratings: Option<&Path>,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let fleiss = match ratings {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| CliError::io(p, e))?;
            Some(fleiss_kappa(&RatingMatrix::from_csv(f)?)?)
        }
        None => None,
    };
    let Some(gold) = gold else {
        if !system.is_empty() {
            return Err(CliError::Config("--system needs --gold".into()));
        }
        let Some(k) = fleiss else {
            return Err(CliError::Config(
                "evaluate needs --gold with --system, or --ratings".into(),
            ));
        };
        out.write_json("report.json", &serde_json::json!({ "fleiss_kappa": k }))?;
        return Ok(());
    };
    let gold_corpus = read_gold(gold)?;
    let gold_map = gold_texts(&gold_corpus);
    let mut runs = Vec::new();
    for (k, p) in system.iter().enumerate() {
        runs.push((run_seed(p).unwrap_or(k as u64), system_texts(p)?));
    }
    let distinct: std::collections::BTreeSet<u64> = runs.iter().map(|r| r.0).collect();
    if distinct.len() != runs.len() {
        log::warn!("system runs share seeds; numbering them by position instead");
        for (k, r) in runs.iter_mut().enumerate() {
            r.0 = k as u64;
        }
    }
    let mut extra: Vec<(u64, Scores)> = Vec::new();
    if !ppl_model.is_empty() {
        if ppl_model.len() != system.len() {
            return Err(CliError::Config(format!(
                "{} --ppl-model checkpoints for {} --system files",
                ppl_model.len(),
                system.len()
            )));
        }
        let vocab = load_vocab(vocab.ok_or_else(|| CliError::Config("--ppl-model needs --vocab".into()))?)?;
        for (p, (seed, _)) in ppl_model.iter().zip(&runs) {
            if !p.exists() {
                return Err(CliError::MissingFile(p.clone()));
            }
            let (model, role) = Model::load(p)?;
            let seqs = gold_sequences(&gold_corpus, role, &vocab, cfg)?;
            let ppl = perplexity(&model, &seqs)?;
            extra.push((*seed, Scores::from([("perplexity".to_string(), ppl)])));
        }
    }
    let metrics = evaluate_corpus(&runs, &gold_map, &extra, &cfg.metrics)?;
    for (k, v) in &metrics.summary {
        println!("{k}\t{:.4}\t{:.4}", v.mean, v.sd);
    }
    if let Some(k) = fleiss {
        println!("fleiss_kappa\t{k:.4}");
    }
    out.write_json(
        "report.json",
        &EvaluationReport {
            metrics,
            fleiss_kappa: fleiss,
        },
    )
}

fn inspect_trace(path: &Path) -> Result<(), CliError> {
    let stem_path = if path.extension().is_some_and(|e| e == "json" || e == "jsonl") {
        path.with_extension("")
    } else {
        path.to_path_buf()
    };
    let dir = stem_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let stem = stem_path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::Config(format!("bad trace path {}", path.display())))?;
    let summary = dir.join(format!("{stem}.json"));
    if !summary.exists() {
        return Err(CliError::MissingFile(summary));
    }
    let trace = GenerationTrace::read(dir, stem)?;
    println!(
        "story {} mode {:?}, {} iterations",
        trace.story_id,
        trace.mode,
        trace.entries.len()
    );
    for e in &trace.entries {
        println!("iteration {}", e.iteration);
        for r in &e.effect_rules {
            println!("  effect: {r}");
        }
        for r in &e.cause_rules {
            println!("  cause:  {r}");
        }
        println!("  input:  {}", e.sentence_input);
        println!(
            "  output: {}  (score {:.3}, finished {})",
            e.sentence, e.sentence_score, e.sentence_finished
        );
    }
    if let Some(err) = &trace.error {
        println!("stopped early: {err}");
    }
    Ok(())
}
