// SPDX-License-Identifier: MIT OR Apache-2.0

use std::time::Instant;

use anyhow::Context as _;
use cause_core::ccmr::{ccmr_score, CcmrReport};
use cause_core::config::FORMAT_VERSION;
use cause_core::interchange::coverage_repetitions;
use cause_core::metrics::{corpus_bleu, overlap_score};
use cause_core::models::Explainer;
use cause_core::synthdata::{generate_dataset, write_jsonl, DatasetHeader, MultimodalInput, TokenId};
use cause_core::training::{
    evaluate_simulation, filter_dataset, train_classifier as fit_classifier, train_explainer_with, AblationMode,
    ClassifierReport, ExplainerConfig, LossBreakdown,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{ensure_dir, Context};

pub fn coverage_bound(n: u64, delta: f64, ps: f64, batch_size: Option<u64>) -> anyhow::Result<()> {
    let reps = coverage_repetitions(n, delta, ps)?;
    println!("{reps}");
    if let Some(b) = batch_size {
        println!("training items at batch size {b}: {}", reps * b);
    }
    Ok(())
}

pub fn gen_data(ctx: &Context) -> anyhow::Result<()> {
    let sizes = ctx.cfg.sizes;
    let split = generate_dataset(&ctx.cfg.task, sizes.train, sizes.test, ctx.cfg.seed)?;
    ensure_dir(&ctx.data_dir)?;
    for (name, path, examples) in [
        ("train", ctx.train_path(), &split.train),
        ("test", ctx.test_path(), &split.test),
    ] {
        let header = DatasetHeader {
            format_version: FORMAT_VERSION,
            split: name.into(),
            seed: ctx.cfg.seed,
            config_hash: ctx.provenance.config_hash.clone(),
            task_spec: ctx.cfg.task.clone(),
        };
        write_jsonl(&path, &header, examples)?;
        println!("wrote {} ({} examples)", path.display(), examples.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct ClassifierSummary<'a> {
    train_examples: usize,
    test_accuracy: f64,
    fingerprint: String,
    training: &'a ClassifierReport,
}

pub fn train_classifier(ctx: &Context) -> anyhow::Result<()> {
    let train = ctx.load_split(&ctx.train_path(), "gen-data")?;
    let test = ctx.load_split(&ctx.test_path(), "gen-data")?;
    let start = Instant::now();
    let (m, report) = fit_classifier(ctx.dims, &train, &ctx.cfg.classifier_config())?;
    let correct = test
        .iter()
        .map(|ex| m.predict(&ex.input).map(|p| p == ex.gold_label))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|&ok| ok)
        .count();
    let test_accuracy = correct as f64 / test.len().max(1) as f64;

    ensure_dir(&ctx.checkpoint_dir)?;
    let path = ctx.classifier_path();
    ctx.stamp(m.to_checkpoint())
        .save(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    ctx.write_json(
        &ctx.report("classifier.json"),
        &ClassifierSummary {
            train_examples: train.len(),
            test_accuracy,
            fingerprint: format!("{:016x}", m.fingerprint()),
            training: &report,
        },
    )?;
    println!(
        "classifier: {} epochs, validation accuracy {:.4}, test accuracy {:.4} ({:.1}s)",
        report.epochs_run,
        report.val_accuracy,
        test_accuracy,
        start.elapsed().as_secs_f64()
    );
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct ExplainerSummary<'a> {
    mode: AblationMode,
    config: &'a ExplainerConfig,
    filtered_examples: usize,
    with_explanation: usize,
    steps: usize,
    final_loss: Option<LossBreakdown>,
    full_coverage_step: Option<usize>,
    fingerprint: String,
}

pub fn train_explainer(ctx: &Context, mode: AblationMode) -> anyhow::Result<()> {
    let train = ctx.load_split(&ctx.train_path(), "gen-data")?;
    let m = ctx.load_classifier()?;
    let filtered = filter_dataset(&train, &m, &ctx.lexicon)?;
    let with_explanation = filtered.iter().filter(|f| f.explanation.is_some()).count();
    let cfg = ExplainerConfig {
        mode,
        ..ctx.cfg.explainer.clone()
    };
    let start = Instant::now();
    let run = train_explainer_with(&m, &filtered, &ctx.lexicon, ctx.vocab.eos(), &cfg, |step, b| {
        if step % 200 == 0 {
            eprintln!(
                "step {step:>5}  total {:.4}  l_phi {:.4}  l_ts {:.4}  l_iit {:.4}  r_match {:.2e}",
                b.total, b.l_phi, b.l_ts, b.l_iit, b.r_match
            );
        }
    })?;

    ensure_dir(&ctx.checkpoint_dir)?;
    let path = ctx.explainer_path(mode);
    ctx.stamp(run.explainer.to_checkpoint())
        .with_meta("mode", mode.flag())
        .save(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    let flag = mode.flag();
    ctx.write_csv(&ctx.report(&format!("history-{flag}.csv")), |w| {
        cause_core::training::write_history_csv(&run.history, w)
    })?;
    ctx.write_csv(&ctx.report(&format!("coverage-{flag}.csv")), |w| run.coverage.write_csv(w))?;
    ctx.write_json(
        &ctx.report(&format!("train-explainer-{flag}.json")),
        &ExplainerSummary {
            mode,
            config: &cfg,
            filtered_examples: filtered.len(),
            with_explanation,
            steps: run.history.len(),
            final_loss: run.history.last().copied(),
            full_coverage_step: run.coverage.full_coverage_step(ctx.dims.head_hidden),
            fingerprint: format!("{:016x}", run.explainer.fingerprint()),
        },
    )?;
    println!(
        "explainer ({flag}): {} steps on {} items ({} with explanations) in {:.1}s",
        run.history.len(),
        filtered.len(),
        with_explanation,
        start.elapsed().as_secs_f64()
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// Contents of `eval-<mode>.json`, also read back by `report`.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mode: AblationMode,
    pub untrained: bool,
    pub items: usize,
    /// Macro-F1 of explanation labels against the classifier's predictions.
    pub simulation_macro_f1: f64,
    /// Macro-F1 of a uniform guess, `1 / L`.
    pub chance_macro_f1: f64,
    /// Corpus BLEU-1 through BLEU-4 against the gold explanations.
    pub bleu: [f64; 4],
    /// Token-bag F1 against the gold explanations.
    pub overlap_score: f64,
}

pub fn eval(ctx: &Context, mode: AblationMode, untrained: bool) -> anyhow::Result<()> {
    let test = ctx.load_split(&ctx.test_path(), "gen-data")?;
    let m = ctx.load_classifier()?;
    let explainer = if untrained {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.explainer.seed);
        Explainer::new(ctx.dims, m.head(), ctx.vocab.eos(), &mut rng)
    } else {
        ctx.load_explainer(mode)?
    };
    let inputs: Vec<MultimodalInput> = test.iter().map(|e| e.input.clone()).collect();
    let sim = evaluate_simulation(&m, &explainer, &inputs, &ctx.lexicon)?;
    let eos = ctx.vocab.eos();
    let candidates: Vec<Vec<TokenId>> = sim
        .explanations
        .iter()
        .map(|s| s.iter().copied().filter(|&t| t != eos).collect())
        .collect();
    let references: Vec<Vec<TokenId>> = test
        .iter()
        .map(|e| e.explanation.iter().copied().filter(|&t| t != eos).collect())
        .collect();
    let bleu = [1, 2, 3, 4].map(|n| corpus_bleu(&candidates, &references, n));
    let summary = EvalSummary {
        mode,
        untrained,
        items: inputs.len(),
        simulation_macro_f1: sim.macro_f1,
        chance_macro_f1: 1.0 / ctx.lexicon.num_classes() as f64,
        bleu,
        overlap_score: overlap_score(&candidates, &references),
    };
    let name = if untrained {
        "eval-untrained.json".to_string()
    } else {
        format!("eval-{}.json", mode.flag())
    };
    ctx.write_json(&ctx.report(&name), &summary)?;
    println!(
        "eval ({}): macro-F1 {:.4} (chance {:.4}), BLEU-1..4 {:.4}/{:.4}/{:.4}/{:.4}, overlap {:.4}",
        if untrained { "untrained" } else { mode.flag() },
        summary.simulation_macro_f1,
        summary.chance_macro_f1,
        bleu[0],
        bleu[1],
        bleu[2],
        bleu[3],
        summary.overlap_score
    );
    Ok(())
}

#[derive(Serialize)]
struct CcmrSummary<'a> {
    mode: AblationMode,
    #[serde(flatten)]
    report: &'a CcmrReport,
}

pub fn ccmr(ctx: &Context, mode: AblationMode) -> anyhow::Result<()> {
    let test = ctx.load_split(&ctx.test_path(), "gen-data")?;
    let m = ctx.load_classifier()?;
    let explainer = ctx.load_explainer(mode)?;
    let n = ctx.cfg.ccmr_items.unwrap_or(test.len()).min(test.len());
    let inputs: Vec<MultimodalInput> = test[..n].iter().map(|e| e.input.clone()).collect();
    let report = ccmr_score(&inputs, &m, &explainer, &ctx.lexicon, &ctx.cfg.ccmr)?;
    let flag = mode.flag();
    ctx.write_json(&ctx.report(&format!("ccmr-{flag}.json")), &CcmrSummary { mode, report: &report })?;
    ctx.write_csv(&ctx.report(&format!("ccmr-items-{flag}.csv")), |w| report.write_items_csv(w))?;
    println!(
        "ccmr ({flag}): CCMR {:.2}, % gen. {:.2}, composite {:.2} ({} attempted, {} skipped, {} converged)",
        report.ccmr, report.pct_gen, report.composite, report.attempted, report.skipped, report.converged
    );
    if report.empty_feasible_set {
        println!("warning: no feasible generations; scores are 0");
    }
    Ok(())
}
