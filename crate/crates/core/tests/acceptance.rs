//! System-level acceptance checks. Each test covers one numbered criterion
//! and prints a single PASS/FAIL line (run with `-- --nocapture` to see the
//! lines for passing tests). Tolerances are pinned in the constants below.

use std::sync::OnceLock;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use roofer_core::checkpoint;
use roofer_core::encoder::EncoderConfig;
use roofer_core::kb::{select_triples, KnowledgeBase, SelectionMode, Triple};
use roofer_core::metrics::{score, Labels, MetricKind};
use roofer_core::model::{
    cls_loss, predict_span, qa_loss, FusionKind, Group, HeadKind, KbSource, ModelConfig, RoofModel,
};
use roofer_core::pipeline::{self, prepare_cls_examples, prepare_qa_examples};
use roofer_core::synth::{toy_classification, toy_qa};
use roofer_core::tensor::{grad_check, Graph, Tensor, TensorError};
use roofer_core::tokenize::{build_kb_input, build_task_input, SegScheme, Vocabulary};
use roofer_core::train::{
    evaluate, train, Optimizer, OptimizerKind, ParamGroup, ParamGroups, SchedulerKind, TrainConfig,
};
use roofer_core::verbalize::{
    assemble_knowledge, expand, ExpansionType, KnowledgeUnit, VerbalizerConfig,
};

const GRAD_TOL: f64 = 1e-3;
const GRAD_H: f64 = 1e-3;
const EQUIV_TOL: f64 = 1e-9;
const METRIC_TOL: f64 = 1e-12;
const LOSS_TARGET: f64 = 0.1;

fn report(num: &str, name: &str, pass: bool) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {num} ({name}): {verdict}");
    assert!(pass, "criterion {num} ({name}) failed");
}

fn small_vocab() -> Vocabulary {
    let corpus: Vec<String> = [
        "where does ada live",
        "who lives in oslo",
        "ada lives in oslo and sells tea",
        "bo lives in lima and sells ink",
        "ada is a resident of oslo",
        "bo is a vendor of ink",
        "tea kind drink salt rock iron wool corn",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    Vocabulary::build(&corpus, 64).unwrap()
}

fn encoder_cfg(d: usize, n_heads: usize, n_layers: usize, max_positions: usize, vocab: usize) -> EncoderConfig {
    EncoderConfig {
        d,
        n_heads,
        d_ff: 2 * d,
        n_layers,
        max_positions,
        vocab_size: vocab,
        n_segments: 2,
        dropout: 0.0,
    }
}

// ---------------------------------------------------------------------------
// Criterion 1: whole-model gradient integrity.
// ---------------------------------------------------------------------------

/// Grad-checks every parameter the loss reaches; returns the worst relative
/// error and the names of parameters the loss never touched.
fn grad_check_model<F>(model: &RoofModel, forward_loss: F) -> (f64, Vec<String>)
where
    F: Fn(&Graph) -> Result<Tensor, TensorError>,
{
    let probe = Graph::train();
    let loss = forward_loss(&probe).expect("probe forward");
    probe.backward(&loss).expect("probe backward");

    let mut max_err: f64 = 0.0;
    let mut unreached = Vec::new();
    for (name, _, tensor) in model.weights.named_tensors() {
        if !tensor.has_grad() {
            unreached.push(name);
            continue;
        }
        let rep = grad_check(&forward_loss, &tensor, GRAD_H, GRAD_TOL)
            .unwrap_or_else(|e| panic!("grad check failed on {name}: {e}"));
        if rep.max_rel_err > max_err {
            max_err = rep.max_rel_err;
        }
    }
    (max_err, unreached)
}

#[test]
fn criterion_01_gradient_integrity() {
    let started = Instant::now();
    let vocab = small_vocab();
    let base = ModelConfig {
        task_encoder: encoder_cfg(8, 2, 2, 10, vocab.len()),
        kb_encoder: encoder_cfg(8, 2, 2, 8, vocab.len()),
        task_len: 10,
        max_question: 4,
        kb_len: 8,
        fusion: FusionKind::TransformerEncoder,
        fusion_depth: 1,
        cached_kb: false,
        cached_triple_len: 8,
        cached_keep_specials: true,
        head: HeadKind::Qa,
        seg: SegScheme::Type1,
        expansion: ExpansionType::Exp1,
        selection: SelectionMode::NoTail,
        max_triples: 2,
    };
    let task = build_task_input(
        "where does ada live",
        "ada lives in oslo",
        &vocab,
        base.seg,
        base.max_question,
        base.task_len,
    );
    let unit = KnowledgeUnit {
        text: "ada is a resident of oslo".to_string(),
        source_triples: vec![],
    };
    let kbseq = build_kb_input(&assemble_knowledge(&[unit]), &vocab, base.seg, base.kb_len);

    // Span head: answer starts at 1 + max_question + 1 inside the window.
    let qa_model = RoofModel::init(base.clone(), 31).unwrap();
    let qa_forward = {
        let task = task.clone();
        let kbseq = kbseq.clone();
        let model = &qa_model;
        move |g: &Graph| -> Result<Tensor, TensorError> {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let out = model
                .forward(g, &task, KbSource::Online(&kbseq), &mut rng)
                .expect("forward");
            qa_loss(g, &out.logits, 6, 9)
        }
    };
    let (qa_err, qa_unreached) = grad_check_model(&qa_model, qa_forward);
    assert_eq!(qa_unreached, vec!["head.cls.w", "head.cls.b"]);

    // Classification head over the same trunk.
    let mut cls_cfg = base;
    cls_cfg.head = HeadKind::Classification { classes: 2 };
    let cls_model = RoofModel::init(cls_cfg, 31).unwrap();
    let cls_forward = {
        let task = task.clone();
        let kbseq = kbseq.clone();
        let model = &cls_model;
        move |g: &Graph| -> Result<Tensor, TensorError> {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let out = model
                .forward(g, &task, KbSource::Online(&kbseq), &mut rng)
                .expect("forward");
            cls_loss(g, &out.logits, 1)
        }
    };
    let (cls_err, cls_unreached) = grad_check_model(&cls_model, cls_forward);
    assert_eq!(cls_unreached, vec!["head.qa.w", "head.qa.b"]);

    let worst = qa_err.max(cls_err);
    let elapsed = started.elapsed().as_secs_f64();
    println!("criterion 1 detail: max relative error {worst:.3e}, {elapsed:.1}s");
    report(
        "1",
        "gradient integrity",
        worst <= GRAD_TOL && elapsed < 300.0,
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: shape contract over random configs.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_shape_contracts() {
    let vocab = small_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pass = true;
    for case in 0..20 {
        let n_heads = *[1, 2, 4].choose(&mut rng).unwrap();
        let d = n_heads * *[2, 4, 8].choose(&mut rng).unwrap();
        let task_layers = rng.gen_range(0..=3);
        let kb_layers = rng.gen_range(0..=3);
        let task_len = rng.gen_range(8..=20);
        let max_question = rng.gen_range(2..=task_len - 3);
        let kb_len = rng.gen_range(4..=12);
        let fusion = [
            FusionKind::Linear,
            FusionKind::Recurrent,
            FusionKind::TransformerEncoder,
        ][case % 3];
        let classes = rng.gen_range(2..=5);
        let head = if case % 2 == 0 {
            HeadKind::Qa
        } else {
            HeadKind::Classification { classes }
        };
        let cached = case % 4 == 3;
        let cfg = ModelConfig {
            task_encoder: encoder_cfg(d, n_heads, task_layers, 32, vocab.len()),
            kb_encoder: encoder_cfg(d, n_heads, kb_layers, 32, vocab.len()),
            task_len,
            max_question,
            kb_len,
            fusion,
            fusion_depth: rng.gen_range(1..=2),
            cached_kb: cached,
            cached_triple_len: rng.gen_range(3..=12),
            cached_keep_specials: rng.gen_bool(0.5),
            head,
            seg: if rng.gen_bool(0.5) { SegScheme::Type1 } else { SegScheme::Type2 },
            expansion: ExpansionType::Exp1,
            selection: SelectionMode::NoTail,
            max_triples: rng.gen_range(1..=4),
        };
        let model = RoofModel::init(cfg.clone(), 1000 + case as u64).unwrap();
        let task = build_task_input(
            "who lives in oslo",
            "ada lives in oslo and sells tea",
            &vocab,
            cfg.seg,
            cfg.max_question,
            cfg.task_len,
        );
        let unit = KnowledgeUnit {
            text: "ada is a resident of oslo".to_string(),
            source_triples: vec![],
        };
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(0);
        let g = Graph::eval();
        let out = if cached {
            let ck = model.encode_cached_units(&[unit], &vocab).unwrap();
            model
                .forward(&g, &task, KbSource::Cached(&ck), &mut dropout_rng)
                .unwrap()
        } else {
            let kbseq =
                build_kb_input(&assemble_knowledge(&[unit]), &vocab, cfg.seg, cfg.kb_len);
            model
                .forward(&g, &task, KbSource::Online(&kbseq), &mut dropout_rng)
                .unwrap()
        };
        let fused_ok = out.fused.shape() == (task_len + kb_len, d);
        let logits_ok = match head {
            HeadKind::Qa => out.logits.shape() == (task_len + kb_len, 2),
            HeadKind::Classification { classes } => out.logits.shape() == (1, classes),
        };
        let mask_ok = out.mask.len() == task_len + kb_len;
        if !(fused_ok && logits_ok && mask_ok) {
            println!("criterion 2 detail: case {case} violated the shape chain");
            pass = false;
        }
    }
    report("2", "shape contracts", pass);
}

// ---------------------------------------------------------------------------
// Criterion 3: selection matches a brute-force oracle.
// ---------------------------------------------------------------------------

fn naive_find(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || n.len() > h.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| &h[i..i + n.len()] == n)
}

fn oracle_select(
    triples: &[Triple],
    paragraph: &str,
    mode: SelectionMode,
    max_triples: usize,
) -> Vec<Triple> {
    let para = paragraph.to_lowercase();
    let mut hits: Vec<(usize, usize)> = Vec::new();
    for (i, t) in triples.iter().enumerate() {
        let Some(pos) = naive_find(&para, &t.head.to_lowercase()) else {
            continue;
        };
        if mode == SelectionMode::HasTail && naive_find(&para, &t.tail.to_lowercase()).is_none() {
            continue;
        }
        hits.push((pos, i));
    }
    hits.sort();
    hits.truncate(max_triples);
    hits.into_iter().map(|(_, i)| triples[i].clone()).collect()
}

#[test]
fn criterion_03_selection_oracle() {
    let words = [
        "ada", "bo", "cy", "dee", "oslo", "lima", "kyiv", "tea", "ink", "salt", "rock", "iron",
        "wool", "corn", "lives", "in", "and", "sells", "the", "a", "near", "old", "new", "york",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pass = true;
    for case in 0..1000 {
        // Small head pool so paragraphs hit several triples.
        let pool: Vec<String> = (0..rng.gen_range(1..=6))
            .map(|_| {
                let n = rng.gen_range(1..=2);
                (0..n)
                    .map(|_| *words.choose(&mut rng).unwrap())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let mut lines = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..rng.gen_range(1..=50) {
            let head = pool.choose(&mut rng).unwrap().clone();
            let relation = *words.choose(&mut rng).unwrap();
            let tail_n = rng.gen_range(1..=2);
            let tail: String = (0..tail_n)
                .map(|_| *words.choose(&mut rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ");
            let line = format!("{head}\t{relation}\t{tail}");
            if seen.insert(line.clone()) {
                lines.push(line);
            }
        }
        let kb = KnowledgeBase::from_lines(&lines.join("\n")).unwrap();

        let n_words = rng.gen_range(3..=40);
        let mut paragraph: String = (0..n_words)
            .map(|_| *words.choose(&mut rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ");
        paragraph.truncate(200);

        let mut no_tail_lines = Vec::new();
        for mode in [SelectionMode::NoTail, SelectionMode::HasTail] {
            let got = select_triples(&kb, &paragraph, mode, 50);
            let want = oracle_select(kb.triples(), &paragraph, mode, 50);
            if got != want {
                println!("criterion 3 detail: case {case} mode {mode:?} diverged");
                pass = false;
            }
            match mode {
                SelectionMode::NoTail => {
                    no_tail_lines = got.iter().map(|t| t.source_line).collect();
                }
                SelectionMode::HasTail => {
                    if !got.iter().all(|t| no_tail_lines.contains(&t.source_line)) {
                        println!("criterion 3 detail: case {case} broke the subset rule");
                        pass = false;
                    }
                }
            }
        }
    }
    report("3", "selection oracle", pass);
}

// ---------------------------------------------------------------------------
// Criterion 4: verbalization suite.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_expansion_suite() {
    let english = VerbalizerConfig::english();
    let t = Triple {
        head: "Bill Gates".to_string(),
        relation: "founder".to_string(),
        tail: "Microsoft".to_string(),
        source_line: 1,
    };
    let units = expand(std::slice::from_ref(&t), ExpansionType::Exp1, &english);
    let mut pass = units.len() == 1 && units[0].text == "Bill Gates is a founder of Microsoft";

    let heads = ["ada", "bo", "cy", "dee", "oslo"];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let len = rng.gen_range(0..=20);
        let triples: Vec<Triple> = (0..len)
            .map(|i| Triple {
                head: heads.choose(&mut rng).unwrap().to_string(),
                relation: "kind".to_string(),
                tail: format!("t{i}"),
                source_line: i + 1,
            })
            .collect();
        let runs = triples
            .iter()
            .zip(triples.iter().skip(1))
            .filter(|(a, b)| a.head != b.head)
            .count()
            + usize::from(!triples.is_empty());
        let units = expand(&triples, ExpansionType::Exp2, &english);
        if units.len() != runs {
            pass = false;
        }
        let covered: usize = units.iter().map(|u| u.source_triples.len()).sum();
        if covered != triples.len() {
            pass = false;
        }
    }
    report("4", "expansion suite", pass);
}

// ---------------------------------------------------------------------------
// Criteria 5, 7c, 10: reference overfit runs.
// ---------------------------------------------------------------------------

struct RunOut {
    loss_bits: Vec<u64>,
    final_loss: f64,
    em: f64,
    steps: usize,
    ckpt: Vec<u8>,
    elapsed: f64,
}

fn reference_qa_config(vocab_size: usize, cached: bool) -> ModelConfig {
    ModelConfig {
        task_encoder: EncoderConfig {
            d: 32,
            n_heads: 4,
            d_ff: 64,
            n_layers: 2,
            max_positions: 64,
            vocab_size,
            n_segments: 2,
            dropout: 0.0,
        },
        kb_encoder: EncoderConfig {
            d: 32,
            n_heads: 4,
            d_ff: 64,
            n_layers: 2,
            max_positions: 32,
            vocab_size,
            n_segments: 2,
            dropout: 0.0,
        },
        task_len: 64,
        max_question: 6,
        kb_len: 32,
        fusion: FusionKind::TransformerEncoder,
        fusion_depth: 2,
        cached_kb: cached,
        cached_triple_len: 16,
        cached_keep_specials: true,
        head: HeadKind::Qa,
        seg: SegScheme::Type1,
        expansion: ExpansionType::Exp1,
        selection: SelectionMode::NoTail,
        max_triples: 4,
    }
}

fn reference_qa_data() -> (Vec<roofer_core::data::QaRecord>, KnowledgeBase, Vocabulary) {
    let data = toy_qa(32, 17);
    let kb = KnowledgeBase::from_lines(&data.kb_text()).unwrap();
    let verb = VerbalizerConfig::english();
    let mut corpus = pipeline::qa_vocab_corpus(&data.records);
    corpus.extend(pipeline::kb_vocab_corpus(&kb, ExpansionType::Exp1, &verb));
    let vocab = Vocabulary::build(&corpus, 256).unwrap();
    assert!(vocab.len() <= 256);
    (data.records, kb, vocab)
}

fn run_reference_qa(cached: bool, epochs: usize, batch_size: usize) -> RunOut {
    let started = Instant::now();
    let (records, kb, vocab) = reference_qa_data();
    let model = RoofModel::init(reference_qa_config(vocab.len(), cached), 5).unwrap();
    let verb = VerbalizerConfig::english();
    let (examples, stats) = prepare_qa_examples(&model, &records, &kb, &vocab, &verb).unwrap();
    assert_eq!(stats.dropped_truncated_answers, 0);
    assert_eq!(examples.len(), 32);
    let cfg = TrainConfig {
        base_lr: 3e-4,
        fusion_lr_multiplier: 10.0,
        optimizer: OptimizerKind::adamw_default(),
        scheduler: SchedulerKind::LinearDecay,
        epochs,
        batch_size,
        seed: 5,
        grad_clip: None,
    };
    let log = train(&model, &examples, &cfg).unwrap();
    let em = evaluate(&model, &examples, MetricKind::ExactMatch).unwrap();
    RunOut {
        loss_bits: log.iter().map(|r| r.loss.to_bits()).collect(),
        final_loss: log.last().unwrap().loss,
        em,
        steps: log.len(),
        ckpt: checkpoint::encode(&model),
        elapsed: started.elapsed().as_secs_f64(),
    }
}

static FIRST_QA_RUN: OnceLock<RunOut> = OnceLock::new();

fn cached_first_run() -> &'static RunOut {
    FIRST_QA_RUN.get_or_init(|| run_reference_qa(false, 500, 32))
}

#[test]
fn criterion_05_overfit_reference_runs() {
    let qa = cached_first_run();
    println!(
        "criterion 5 detail: qa loss {:.4} em {:.2} in {} steps, {:.0}s",
        qa.final_loss, qa.em, qa.steps, qa.elapsed
    );
    let qa_ok =
        qa.final_loss < LOSS_TARGET && qa.em == 1.0 && qa.steps <= 500 && qa.elapsed < 600.0;

    // Classification analogue: binary labels, cosine decay.
    let data = toy_classification(64, 12);
    let kb = KnowledgeBase::from_lines(&data.kb_lines.join("\n")).unwrap();
    let verb = VerbalizerConfig::english();
    let mut corpus = pipeline::cls_vocab_corpus(&data.records);
    corpus.extend(pipeline::kb_vocab_corpus(&kb, ExpansionType::Exp1, &verb));
    let vocab = Vocabulary::build(&corpus, 256).unwrap();
    let mut cfg = reference_qa_config(vocab.len(), false);
    cfg.head = HeadKind::Classification { classes: 2 };
    let model = RoofModel::init(cfg, 6).unwrap();
    let (examples, _) = prepare_cls_examples(&model, &data.records, &kb, &vocab, &verb).unwrap();
    assert_eq!(examples.len(), 64);
    let tcfg = TrainConfig {
        base_lr: 3e-4,
        fusion_lr_multiplier: 10.0,
        optimizer: OptimizerKind::adamw_default(),
        scheduler: SchedulerKind::CosineDecay,
        epochs: 62,
        batch_size: 8,
        seed: 6,
        grad_clip: None,
    };
    let log = train(&model, &examples, &tcfg).unwrap();
    let acc = evaluate(&model, &examples, MetricKind::Accuracy).unwrap();
    println!(
        "criterion 5 detail: cls accuracy {:.2} in {} steps",
        acc,
        log.len()
    );
    let cls_ok = acc == 1.0 && log.len() <= 500;

    report("5", "overfit reference runs", qa_ok && cls_ok);
}

// ---------------------------------------------------------------------------
// Criterion 6: exact learning-rate group ratio.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_lr_group_ratio() {
    let task = Tensor::param(2, 3, vec![0.0; 6]).unwrap();
    let fusion = Tensor::param(2, 3, vec![0.0; 6]).unwrap();
    let groups = ParamGroups {
        groups: vec![
            ParamGroup {
                group: Group::Task,
                multiplier: 1.0,
                tensors: vec![task.clone()],
            },
            ParamGroup {
                group: Group::Fusion,
                multiplier: 10.0,
                tensors: vec![fusion.clone()],
            },
        ],
    };
    let mut opt = Optimizer::new(OptimizerKind::Sgd);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut pass = true;
    for step in 0..3 {
        let grad: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        task.zero_grad();
        fusion.zero_grad();
        task.set_data(&[0.0; 6]).unwrap();
        fusion.set_data(&[0.0; 6]).unwrap();
        let g = Graph::train();
        let shared = Tensor::from_vec(2, 3, grad.clone()).unwrap();
        let lt = g.sum(&g.mul(&task, &shared).unwrap()).unwrap();
        g.backward(&lt).unwrap();
        let lf = g.sum(&g.mul(&fusion, &shared).unwrap()).unwrap();
        g.backward(&lf).unwrap();
        opt.step(&groups, 0.0173 * (step + 1) as f64);
        let vt = task.to_vec();
        let vf = fusion.to_vec();
        for i in 0..6 {
            if vf[i].to_bits() != (10.0 * vt[i]).to_bits() {
                pass = false;
            }
        }
    }
    report("6", "lr group ratio", pass);
}

// ---------------------------------------------------------------------------
// Criterion 7: cached-mode checks.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_cached_mode() {
    // (a) kb tensors bit-identical across 50 steps of cached training.
    let vocab = small_vocab();
    let data = toy_qa(10, 13);
    let kb = KnowledgeBase::from_lines(&data.kb_text()).unwrap();
    let verb = VerbalizerConfig::english();
    let mut corpus = pipeline::qa_vocab_corpus(&data.records);
    corpus.extend(pipeline::kb_vocab_corpus(&kb, ExpansionType::Exp1, &verb));
    let vocab_big = Vocabulary::build(&corpus, 64).unwrap();
    let cfg = ModelConfig {
        task_encoder: encoder_cfg(8, 2, 1, 24, vocab_big.len()),
        kb_encoder: encoder_cfg(8, 2, 1, 16, vocab_big.len()),
        task_len: 20,
        max_question: 5,
        kb_len: 10,
        fusion: FusionKind::TransformerEncoder,
        fusion_depth: 1,
        cached_kb: true,
        cached_triple_len: 10,
        cached_keep_specials: true,
        head: HeadKind::Qa,
        seg: SegScheme::Type1,
        expansion: ExpansionType::Exp1,
        selection: SelectionMode::NoTail,
        max_triples: 2,
    };
    let model = RoofModel::init(cfg, 70).unwrap();
    let (examples, _) = prepare_qa_examples(&model, &data.records, &kb, &vocab_big, &verb).unwrap();
    let kb_bits = |m: &RoofModel| -> Vec<u64> {
        m.weights
            .named_tensors()
            .iter()
            .filter(|(_, g, _)| *g == Group::Kb)
            .flat_map(|(_, _, t)| t.to_vec().into_iter().map(f64::to_bits))
            .collect()
    };
    let before = kb_bits(&model);
    let tcfg = TrainConfig {
        base_lr: 1e-3,
        fusion_lr_multiplier: 10.0,
        optimizer: OptimizerKind::adamw_default(),
        scheduler: SchedulerKind::LinearDecay,
        epochs: 10,
        batch_size: 2,
        seed: 7,
        grad_clip: None,
    };
    let log = train(&model, &examples, &tcfg).unwrap();
    let frozen_ok = log.len() == 50 && before == kb_bits(&model);

    // (b) single-unit cached vs online equivalence. With the scheme that
    // tags whole encoders and the triple window equal to the knowledge
    // window, the two inputs are token-identical, so valid rows must agree.
    let mut equiv_ok = true;
    for fusion in [
        FusionKind::Linear,
        FusionKind::Recurrent,
        FusionKind::TransformerEncoder,
    ] {
        let base = ModelConfig {
            task_encoder: encoder_cfg(8, 2, 1, 16, vocab.len()),
            kb_encoder: encoder_cfg(8, 2, 1, 16, vocab.len()),
            task_len: 12,
            max_question: 4,
            kb_len: 10,
            fusion,
            fusion_depth: 1,
            cached_kb: false,
            cached_triple_len: 10,
            cached_keep_specials: true,
            head: HeadKind::Qa,
            seg: SegScheme::Type2,
            expansion: ExpansionType::Exp1,
            selection: SelectionMode::NoTail,
            max_triples: 2,
        };
        let mut cached_cfg = base.clone();
        cached_cfg.cached_kb = true;
        let online = RoofModel::init(base.clone(), 71).unwrap();
        let cached = RoofModel::init(cached_cfg, 71).unwrap();

        let task = build_task_input(
            "who lives in oslo",
            "ada lives in oslo",
            &vocab,
            base.seg,
            base.max_question,
            base.task_len,
        );
        let unit = KnowledgeUnit {
            text: "ada is a resident of oslo".to_string(),
            source_triples: vec![],
        };
        let kbseq =
            build_kb_input(&assemble_knowledge(&[unit.clone()]), &vocab, base.seg, base.kb_len);
        let ck = cached.encode_cached_units(&[unit], &vocab).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Graph::eval();
        let a = online
            .forward(&g, &task, KbSource::Online(&kbseq), &mut rng)
            .unwrap();
        let b = cached
            .forward(&g, &task, KbSource::Cached(&ck), &mut rng)
            .unwrap();
        let fa = a.fused.to_vec();
        let fb = b.fused.to_vec();
        let la = a.logits.to_vec();
        let lb = b.logits.to_vec();
        let d = 8;
        for (i, valid) in b.mask.iter().enumerate() {
            if !valid {
                continue;
            }
            for c in 0..d {
                if (fa[i * d + c] - fb[i * d + c]).abs() > EQUIV_TOL {
                    equiv_ok = false;
                }
            }
            for c in 0..2 {
                if (la[i * 2 + c] - lb[i * 2 + c]).abs() > EQUIV_TOL {
                    equiv_ok = false;
                }
            }
        }
        if a.mask != b.mask {
            equiv_ok = false;
        }
    }

    // (c) cached training still clears the loss bar within 2x the budget.
    let run = run_reference_qa(true, 1000, 32);
    println!(
        "criterion 7 detail: cached loss {:.4} in {} steps, {:.0}s",
        run.final_loss, run.steps, run.elapsed
    );
    let cached_train_ok = run.final_loss < LOSS_TARGET && run.steps <= 1000;

    println!(
        "criterion 7 detail: kb frozen {frozen_ok}, single-unit equivalence {equiv_ok}, \
         cached training {cached_train_ok}"
    );
    report(
        "7",
        "cached-mode checks",
        frozen_ok && equiv_ok && cached_train_ok,
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: PAD invariance.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_pad_invariance() {
    let vocab = small_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pass = true;
    for trial in 0..100 {
        let fusion = [
            FusionKind::Linear,
            FusionKind::Recurrent,
            FusionKind::TransformerEncoder,
        ][trial % 3];
        let head = if trial % 2 == 0 {
            HeadKind::Qa
        } else {
            HeadKind::Classification { classes: 3 }
        };
        let seg = if trial % 4 < 2 { SegScheme::Type1 } else { SegScheme::Type2 };
        let cfg = ModelConfig {
            task_encoder: encoder_cfg(8, 2, 1, 16, vocab.len()),
            kb_encoder: encoder_cfg(8, 2, 1, 16, vocab.len()),
            task_len: 14,
            max_question: 4,
            kb_len: 12,
            fusion,
            fusion_depth: 1,
            cached_kb: false,
            cached_triple_len: 8,
            cached_keep_specials: true,
            head,
            seg,
            expansion: ExpansionType::Exp1,
            selection: SelectionMode::NoTail,
            max_triples: 2,
        };
        let model = RoofModel::init(cfg.clone(), 800 + trial as u64).unwrap();
        let task = build_task_input(
            "where does ada live",
            "ada lives in oslo",
            &vocab,
            seg,
            cfg.max_question,
            cfg.task_len,
        );
        let unit = KnowledgeUnit {
            text: "ada is a resident of oslo".to_string(),
            source_triples: vec![],
        };
        let kbseq = build_kb_input(&assemble_knowledge(&[unit]), &vocab, seg, cfg.kb_len);

        let mut drng = ChaCha8Rng::seed_from_u64(0);
        let g = Graph::eval();
        let base = model
            .forward(&g, &task, KbSource::Online(&kbseq), &mut drng)
            .unwrap();

        // Scramble token ids wherever the attention mask is off.
        let mut task2 = task.clone();
        let mut kb2 = kbseq.clone();
        for (ids, mask) in [
            (&mut task2.token_ids, &task2.attention_mask),
            (&mut kb2.token_ids, &kb2.attention_mask),
        ] {
            for (i, on) in mask.iter().enumerate() {
                if !on {
                    ids[i] = rng.gen_range(0..vocab.len());
                }
            }
        }
        let perturbed = model
            .forward(&g, &task2, KbSource::Online(&kb2), &mut drng)
            .unwrap();

        let a = base.logits.to_vec();
        let b = perturbed.logits.to_vec();
        let cols = base.logits.cols();
        match head {
            HeadKind::Qa => {
                for (i, valid) in base.mask.iter().enumerate() {
                    if !valid {
                        continue;
                    }
                    for c in 0..cols {
                        if (a[i * cols + c] - b[i * cols + c]).abs() > EQUIV_TOL {
                            pass = false;
                        }
                    }
                }
            }
            HeadKind::Classification { .. } => {
                for c in 0..cols {
                    if (a[c] - b[c]).abs() > EQUIV_TOL {
                        pass = false;
                    }
                }
            }
        }
    }
    report("8", "pad invariance", pass);
}

// ---------------------------------------------------------------------------
// Criterion 9: metrics oracle.
// ---------------------------------------------------------------------------

fn naive_confusion(pred: &[usize], gold: &[usize]) -> (f64, f64, f64, f64) {
    let mut counts = [0.0f64; 4];
    for (&p, &g) in pred.iter().zip(gold) {
        let idx = match (p, g) {
            (1, 1) => 0,
            (1, 0) => 1,
            (0, 0) => 2,
            (0, 1) => 3,
            _ => unreachable!(),
        };
        counts[idx] += 1.0;
    }
    (counts[0], counts[1], counts[2], counts[3])
}

fn naive_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va.sqrt() * vb.sqrt())
    }
}

/// Counting-based average ranks: rank = #smaller + (#equal + 1) / 2.
fn naive_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let smaller = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            smaller + (equal + 1.0) / 2.0
        })
        .collect()
}

#[test]
fn criterion_09_metrics_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pass = true;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=40);

        let pred_spans: Vec<(usize, usize)> = (0..n)
            .map(|_| {
                let s = rng.gen_range(0..10);
                (s, s + rng.gen_range(0..4))
            })
            .collect();
        let gold_spans: Vec<(usize, usize)> = (0..n)
            .map(|i| {
                if rng.gen_bool(0.4) {
                    pred_spans[i]
                } else {
                    let s = rng.gen_range(0..10);
                    (s, s + rng.gen_range(0..4))
                }
            })
            .collect();
        let em = score(
            MetricKind::ExactMatch,
            Labels::Spans { pred: &pred_spans, gold: &gold_spans },
        )
        .unwrap();
        let em_naive = pred_spans
            .iter()
            .zip(&gold_spans)
            .filter(|(p, g)| p == g)
            .count() as f64
            / n as f64;
        pass &= (em - em_naive).abs() <= METRIC_TOL;

        let pred_cls: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let gold_cls: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();

        let acc = score(
            MetricKind::Accuracy,
            Labels::Classes { pred: &pred_cls, gold: &gold_cls },
        )
        .unwrap();
        let acc_naive = pred_cls.iter().zip(&gold_cls).filter(|(p, g)| p == g).count() as f64
            / n as f64;
        pass &= (acc - acc_naive).abs() <= METRIC_TOL;

        let (tp, fp, tn, fn_) = naive_confusion(&pred_cls, &gold_cls);
        let f1 = score(
            MetricKind::F1Binary,
            Labels::Classes { pred: &pred_cls, gold: &gold_cls },
        )
        .unwrap();
        let f1_naive = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        pass &= (f1 - f1_naive).abs() <= METRIC_TOL;

        let mcc = score(
            MetricKind::Matthews,
            Labels::Classes { pred: &pred_cls, gold: &gold_cls },
        )
        .unwrap();
        let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        let mcc_naive = if denom == 0.0 {
            0.0
        } else {
            (tp * tn - fp * fn_) / denom.sqrt()
        };
        pass &= (mcc - mcc_naive).abs() <= METRIC_TOL;

        // Reals on a coarse grid so rank ties actually occur.
        let pred_re: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 * 0.5).collect();
        let gold_re: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 * 0.5).collect();
        let ps = score(
            MetricKind::PearsonSpearman,
            Labels::Reals { pred: &pred_re, gold: &gold_re },
        )
        .unwrap();
        let ps_naive = 0.5
            * (naive_pearson(&pred_re, &gold_re)
                + naive_pearson(&naive_ranks(&pred_re), &naive_ranks(&gold_re)));
        pass &= (ps - ps_naive).abs() <= METRIC_TOL;
    }

    // Closed forms.
    let perfect = score(
        MetricKind::ExactMatch,
        Labels::Spans { pred: &[(1, 2), (3, 3)], gold: &[(1, 2), (3, 3)] },
    )
    .unwrap();
    pass &= perfect == 1.0;
    let mcc_ones = score(
        MetricKind::Matthews,
        Labels::Classes { pred: &[1, 1, 0, 0], gold: &[1, 0, 0, 1] },
    )
    .unwrap();
    pass &= mcc_ones == 0.0;
    let f1_half = score(
        MetricKind::F1Binary,
        Labels::Classes { pred: &[1, 1, 1, 1], gold: &[1, 1, 0, 0] },
    )
    .unwrap();
    pass &= (f1_half - 2.0 / 3.0).abs() <= METRIC_TOL;
    let mcc_complement = score(
        MetricKind::Matthews,
        Labels::Classes { pred: &[0, 1, 0, 1], gold: &[1, 0, 1, 0] },
    )
    .unwrap();
    pass &= mcc_complement == -1.0;

    report("9", "metrics oracle", pass);
}

// ---------------------------------------------------------------------------
// Criterion 10: determinism of the reference run.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_determinism() {
    let first = cached_first_run();
    let second = run_reference_qa(false, 500, 32);
    let pass = first.loss_bits == second.loss_bits && first.ckpt == second.ckpt;
    report("10", "determinism", pass);
}

// ---------------------------------------------------------------------------
// Auxiliary: span decode sanity retained alongside the numbered criteria.
// ---------------------------------------------------------------------------

#[test]
fn span_decode_stays_inside_the_window() {
    let vocab = small_vocab();
    let cfg = ModelConfig {
        task_encoder: encoder_cfg(8, 2, 1, 16, vocab.len()),
        kb_encoder: encoder_cfg(8, 2, 1, 16, vocab.len()),
        task_len: 14,
        max_question: 4,
        kb_len: 10,
        fusion: FusionKind::Linear,
        fusion_depth: 1,
        cached_kb: false,
        cached_triple_len: 8,
        cached_keep_specials: true,
        head: HeadKind::Qa,
        seg: SegScheme::Type1,
        expansion: ExpansionType::Exp1,
        selection: SelectionMode::NoTail,
        max_triples: 2,
    };
    let model = RoofModel::init(cfg.clone(), 99).unwrap();
    let task = build_task_input(
        "where does ada live",
        "ada lives in oslo",
        &vocab,
        cfg.seg,
        cfg.max_question,
        cfg.task_len,
    );
    let unit = KnowledgeUnit {
        text: "ada is a resident of oslo".to_string(),
        source_triples: vec![],
    };
    let kbseq = build_kb_input(&assemble_knowledge(&[unit]), &vocab, cfg.seg, cfg.kb_len);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = Graph::eval();
    let out = model
        .forward(&g, &task, KbSource::Online(&kbseq), &mut rng)
        .unwrap();
    let (lo, hi) = (6, 9);
    let (s, e) = predict_span(&out.logits, lo, hi).unwrap();
    assert!(lo <= s && s <= e && e <= hi);
}
