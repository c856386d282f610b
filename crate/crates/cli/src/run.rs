//! Command implementations behind the argument parser.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use roofer_core::checkpoint;
use roofer_core::data::{load_cls, load_cls_inputs, load_qa, load_qa_inputs, ClsRecord, QaRecord};
use roofer_core::kb::{kb_stats, select_triples, KbStatsContext, KnowledgeBase};
use roofer_core::metrics::MetricKind;
use roofer_core::model::{HeadKind, RoofModel};
use roofer_core::pipeline::{
    cls_vocab_corpus, kb_vocab_corpus, prepare_cls_examples, prepare_cls_inputs,
    prepare_qa_examples, prepare_qa_inputs, qa_vocab_corpus,
};
use roofer_core::tokenize::{token_count, Vocabulary};
use roofer_core::train::{evaluate, predict, train, Prediction};
use roofer_core::verbalize::{expand, ExpansionType};
use roofer_core::SelectionMode;

use crate::config::{selection_name, RunConfig};
use crate::logging;

fn required<'a>(path: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| anyhow!("{what} is required: pass {flag} or set it in the config"))
}

fn load_kb(path: &Path) -> Result<KnowledgeBase> {
    KnowledgeBase::load(path)
        .with_context(|| format!("loading knowledge base {}", path.display()))
}

/// Prints selected triples and verbalized units per paragraph, with corpus
/// statistics, for one selection/expansion pair or the full six-way sweep.
pub fn kb_select(cfg: &RunConfig, sweep: bool) -> Result<()> {
    let kb_path = required(&cfg.kb, "a knowledge base", "--kb")?;
    let data_path = required(&cfg.data, "a paragraph file", "--data")?;
    let kb = load_kb(kb_path)?;
    let text = fs::read_to_string(data_path)
        .with_context(|| format!("reading paragraphs {}", data_path.display()))?;
    let paragraphs: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if paragraphs.is_empty() {
        bail!("paragraph file {} has no non-empty lines", data_path.display());
    }
    logging::info(format!(
        "{} paragraphs, {} knowledge records",
        paragraphs.len(),
        kb.len()
    ));

    let combos: Vec<(SelectionMode, ExpansionType)> = if sweep {
        let mut v = Vec::new();
        for sel in [SelectionMode::NoTail, SelectionMode::HasTail] {
            for exp in [ExpansionType::Exp0, ExpansionType::Exp1, ExpansionType::Exp2] {
                v.push((sel, exp));
            }
        }
        v
    } else {
        vec![(cfg.model.selection, cfg.model.expansion)]
    };

    let mut report = String::new();
    for (sel, exp) in combos {
        render_section(&mut report, cfg, &kb, &paragraphs, sel, exp)?;
    }
    print!("{report}");
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out)?;
        let path = out.join("kb_select.txt");
        fs::write(&path, &report)?;
        logging::info(format!("report written to {}", path.display()));
    }
    Ok(())
}

fn render_section(
    out: &mut String,
    cfg: &RunConfig,
    kb: &KnowledgeBase,
    paragraphs: &[String],
    sel: SelectionMode,
    exp: ExpansionType,
) -> Result<()> {
    writeln!(
        out,
        "== selection={} expansion={} ==",
        selection_name(sel),
        exp.name()
    )?;
    for (i, para) in paragraphs.iter().enumerate() {
        let triples = select_triples(kb, para, sel, cfg.model.max_triples);
        let units = expand(&triples, exp, &cfg.verbalizer);
        writeln!(out, "paragraph {}: {para}", i + 1)?;
        for t in &triples {
            writeln!(out, "  triple: {}\t{}\t{}", t.head, t.relation, t.tail)?;
        }
        for u in &units {
            writeln!(out, "  unit ({} tokens): {}", token_count(&u.text), u.text)?;
        }
    }
    let ctx = KbStatsContext {
        expansion: exp,
        verbalizer: cfg.verbalizer.clone(),
        mode: sel,
        max_triples: cfg.model.max_triples,
        max_total: cfg.model.kb_len,
    };
    let stats = kb_stats(kb, paragraphs, &ctx)?;
    writeln!(
        out,
        "stats: paragraphs {}, mean selected tokens {:.2}, mean triples {:.2}\n",
        paragraphs.len(),
        stats.mean_selected_tokens,
        stats.mean_triple_count
    )?;
    Ok(())
}

enum Loaded {
    Qa(Vec<QaRecord>),
    Cls(Vec<ClsRecord>),
}

/// Trains on the configured dataset and writes four artifacts into the
/// output directory: model.ckpt, vocab.txt, loss_log.tsv, config.resolved.
pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let data_path = required(&cfg.data, "a dataset", "--data")?;
    let kb_path = required(&cfg.kb, "a knowledge base", "--kb")?;
    let out = required(&cfg.out, "an output directory", "--out")?;
    cfg.train.validate()?;

    let kb = load_kb(kb_path)?;
    let loaded = match cfg.model.head {
        HeadKind::Qa => load_qa(data_path).map(Loaded::Qa),
        HeadKind::Classification { .. } => load_cls(data_path).map(Loaded::Cls),
    }
    .with_context(|| format!("loading dataset {}", data_path.display()))?;

    // The vocabulary covers the task text plus every knowledge record
    // verbalized under the configured expansion, so connector words embed.
    let mut corpus = match &loaded {
        Loaded::Qa(records) => qa_vocab_corpus(records),
        Loaded::Cls(records) => cls_vocab_corpus(records),
    };
    corpus.extend(kb_vocab_corpus(&kb, cfg.model.expansion, &cfg.verbalizer));
    let vocab = Vocabulary::build(&corpus, cfg.vocab_max)?;
    logging::info(format!("vocabulary size {}", vocab.len()));

    let mut mcfg = cfg.model.clone();
    mcfg.task_encoder.vocab_size = vocab.len();
    mcfg.kb_encoder.vocab_size = vocab.len();
    let model = RoofModel::init(mcfg, cfg.train.seed)?;

    let examples = match &loaded {
        Loaded::Qa(records) => {
            let (examples, stats) =
                prepare_qa_examples(&model, records, &kb, &vocab, &cfg.verbalizer)?;
            if stats.dropped_truncated_answers > 0 {
                logging::info(format!(
                    "dropped {} examples whose answer fell beyond the paragraph window",
                    stats.dropped_truncated_answers
                ));
            }
            examples
        }
        Loaded::Cls(records) => {
            prepare_cls_examples(&model, records, &kb, &vocab, &cfg.verbalizer)?.0
        }
    };
    if examples.is_empty() {
        bail!("no usable examples in {}", data_path.display());
    }
    logging::info(format!("training on {} examples", examples.len()));

    let log = train(&model, &examples, &cfg.train)?;

    fs::create_dir_all(out)?;
    let mut tsv = String::from("step\tepoch\tloss\tlr_task\tlr_kb\tlr_fusion\tlr_head\n");
    for r in &log {
        writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.step, r.epoch, r.loss, r.lr_task, r.lr_kb, r.lr_fusion, r.lr_head
        )?;
    }
    fs::write(out.join("loss_log.tsv"), tsv)?;
    checkpoint::save(&model, &out.join("model.ckpt"))?;
    vocab.save(&out.join("vocab.txt"))?;
    fs::write(out.join("config.resolved"), cfg.render_resolved())?;
    logging::info(format!("artifacts written to {}", out.display()));

    let last = log.last().expect("training logged at least one step");
    println!("trained {} steps, final loss {}", log.len(), last.loss);
    Ok(())
}

/// Loads the vocabulary and checkpoint that `train_cmd` wrote. The
/// vocabulary lives beside the checkpoint; its size completes the encoder
/// configs before the weight shapes are checked.
fn load_model(cfg: &RunConfig, ckpt_flag: Option<&Path>) -> Result<(RoofModel, Vocabulary)> {
    let ckpt = match ckpt_flag {
        Some(p) => p.to_path_buf(),
        None => required(&cfg.out, "a checkpoint", "--ckpt or --out")?.join("model.ckpt"),
    };
    let vocab_path = match ckpt.parent() {
        Some(dir) => dir.join("vocab.txt"),
        None => PathBuf::from("vocab.txt"),
    };
    let vocab = Vocabulary::load(&vocab_path)
        .with_context(|| format!("loading vocabulary {}", vocab_path.display()))?;
    let mut mcfg = cfg.model.clone();
    mcfg.task_encoder.vocab_size = vocab.len();
    mcfg.kb_encoder.vocab_size = vocab.len();
    let model = checkpoint::load(&ckpt, mcfg)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    logging::debug(format!("loaded checkpoint {}", ckpt.display()));
    Ok((model, vocab))
}

/// Scores a checkpoint on a labeled dataset and prints `metric<TAB>value`.
pub fn eval_cmd(cfg: &RunConfig, ckpt_flag: Option<&Path>) -> Result<()> {
    let data_path = required(&cfg.data, "a labeled dataset", "--data")?;
    let kb_path = required(&cfg.kb, "a knowledge base", "--kb")?;
    let (model, vocab) = load_model(cfg, ckpt_flag)?;
    let kb = load_kb(kb_path)?;

    let examples = match model.cfg.head {
        HeadKind::Qa => {
            let records =
                load_qa(data_path).with_context(|| format!("loading {}", data_path.display()))?;
            prepare_qa_examples(&model, &records, &kb, &vocab, &cfg.verbalizer)?.0
        }
        HeadKind::Classification { .. } => {
            let records =
                load_cls(data_path).with_context(|| format!("loading {}", data_path.display()))?;
            prepare_cls_examples(&model, &records, &kb, &vocab, &cfg.verbalizer)?.0
        }
    };
    let metric = cfg.metric.unwrap_or(match model.cfg.head {
        HeadKind::Qa => MetricKind::ExactMatch,
        HeadKind::Classification { .. } => MetricKind::Accuracy,
    });
    let value = evaluate(&model, &examples, metric)?;
    println!("{}\t{}", metric.name(), value);
    Ok(())
}

/// Decodes predictions for unlabeled inputs. QA lines carry the span in
/// paragraph-token coordinates plus its surface text; classification lines
/// carry the class index.
pub fn predict_cmd(cfg: &RunConfig, ckpt_flag: Option<&Path>) -> Result<()> {
    let data_path = required(&cfg.data, "an input file", "--data")?;
    let kb_path = required(&cfg.kb, "a knowledge base", "--kb")?;
    let (model, vocab) = load_model(cfg, ckpt_flag)?;
    let kb = load_kb(kb_path)?;

    let examples = match model.cfg.head {
        HeadKind::Qa => {
            let inputs = load_qa_inputs(data_path)
                .with_context(|| format!("loading {}", data_path.display()))?;
            prepare_qa_inputs(&model, &inputs, &kb, &vocab, &cfg.verbalizer)?
        }
        HeadKind::Classification { .. } => {
            let inputs = load_cls_inputs(data_path)
                .with_context(|| format!("loading {}", data_path.display()))?;
            prepare_cls_inputs(&model, &inputs, &kb, &vocab, &cfg.verbalizer)?
        }
    };
    let predictions = predict(&model, &examples)?;
    logging::info(format!("{} predictions", predictions.len()));

    let mut lines = String::new();
    for (example, p) in examples.iter().zip(&predictions) {
        match p {
            Prediction::Span { id, start, end, text } => {
                // Span positions index the paragraph's tokens, not the
                // internal task sequence.
                let base = example.window.map_or(0, |(lo, _)| lo);
                writeln!(lines, "{id}\t{}\t{}\t{text}", start - base, end - base)?;
            }
            Prediction::Class { id, class } => writeln!(lines, "{id}\t{class}")?,
        }
    }
    print!("{lines}");
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("predictions.tsv"), &lines)?;
    }
    Ok(())
}
