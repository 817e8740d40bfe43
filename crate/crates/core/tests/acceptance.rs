//! Acceptance criteria. Runs as a plain binary so every criterion reports a
//! PASS/FAIL line regardless of output capture.

use std::path::Path;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use keystep::config::PipelineConfig;
use keystep::corpus::{parse_corpus, Corpus, ParseOptions, Question};
use keystep::difficulty::{
    assess_question, normalize_step_weights, step_difficulty, DifficultyTable,
};
use keystep::loss_shaping::{
    evaluate_loss, shape_stage_loss, simulate_student, train_plain, SimulateConfig,
};
use keystep::numeric::rng;
use keystep::pipeline;
use keystep::schedule::{BudgetCurve, Schedule, ScheduleParams, ScheduleState, StageRecord};
use keystep::selection::{Candidate, SelectionProblem};
use keystep::synthetic::keypoint_corpus;
use keystep::weighting::{
    gradient_check_with, train_weighting, GradCheckOptions, TokenWeightModel, WeightingConfig,
};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn manifest(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn bundled() -> Corpus {
    parse_corpus(
        &manifest("data/synthetic_corpus.jsonl"),
        &ParseOptions::default(),
    )
    .unwrap()
}

fn random_problem(r: &mut impl Rng) -> SelectionProblem {
    let n = r.random_range(5..=18);
    let k = r.random_range(1..=5);
    let beta = [0.0, 1.0, 12.0][r.random_range(0..3)];
    let cands: Vec<Candidate> = (0..n)
        .map(|i| Candidate {
            id: format!("q{i:02}"),
            increment: if r.random_bool(0.1) {
                0.0
            } else {
                r.random_range(0.01..10.0)
            },
            cluster: r.random_range(0..k),
        })
        .collect();
    let total: f64 = cands.iter().map(|c| c.increment).sum();
    let budget = r.random_range(0.0..1.2) * total;
    SelectionProblem::new(cands, budget, k, beta).unwrap()
}

fn approximation_guarantee() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst = f64::INFINITY;
    for i in 0..500 {
        let p = random_problem(&mut r);
        let s = p.select_ftgp(0.1).map_err(|e| e.to_string())?;
        check(p.cost(&s) <= p.budget, || {
            format!("instance {i} infeasible")
        })?;
        let opt = p.gain_of_indices(&p.select_bruteforce().map_err(|e| e.to_string())?);
        let got = p.gain_of_indices(&s);
        if opt > 0.0 {
            worst = worst.min(got / opt);
        }
        check(got >= 0.4 * opt - 1e-9, || {
            format!("instance {i}: gain {got} < 0.4 x {opt}")
        })?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(60), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("worst ratio {worst:.4}, {elapsed:.2?}"))
}

fn monotone_submodular() -> Outcome {
    let mut r = rng(102);
    let (mut mono, mut sub) = (0, 0);
    for _ in 0..1000 {
        let p = random_problem(&mut r);
        let n = p.len();
        let ids: Vec<&str> = p.candidates.iter().map(|c| c.id.as_str()).collect();
        let x = r.random_range(0..n);
        let big: Vec<usize> = (0..n).filter(|&i| i != x && r.random_bool(0.5)).collect();
        let small: Vec<usize> = big.iter().copied().filter(|_| r.random_bool(0.5)).collect();
        let names = |s: &[usize]| s.iter().map(|&i| ids[i]).collect::<Vec<_>>();
        let (a, b) = (names(&small), names(&big));
        let mut b_with_x = b.clone();
        b_with_x.push(ids[x]);
        if p.value_of(&a).unwrap() > p.value_of(&b_with_x).unwrap() + 1e-9 {
            mono += 1;
        }
        if p.marginal_gain(&a, ids[x]).unwrap() < p.marginal_gain(&b, ids[x]).unwrap() - 1e-9 {
            sub += 1;
        }
    }
    check(mono == 0 && sub == 0, || {
        format!("{mono} monotonicity, {sub} submodularity violations")
    })?;
    Ok("1000 + 1000 triples, no violations".into())
}

fn budget_curve() -> Outcome {
    let mut r = rng(103);
    for i in 0..100 {
        let b = r.random_range(0.0..1000.0);
        let c0 = r.random_range(0.0..=1.0) * b;
        let p = r.random_range(0.0..3.0);
        let t = r.random_range(1..=50usize);
        let curve = BudgetCurve::new(b, c0, p, t).map_err(|e| e.to_string())?;
        check(curve.budget_at(0.0) == c0, || {
            format!("tuple {i}: D(0) != C0")
        })?;
        let end = curve.budget_at(t as f64);
        check((end - b).abs() <= 1e-9 * b.max(f64::MIN_POSITIVE), || {
            format!("tuple {i}: D(T) = {end}, B = {b}")
        })?;
        let mut prev = c0;
        for g in 1..1000 {
            let d = curve.budget_at(t as f64 * g as f64 / 999.0);
            check(d >= prev, || {
                format!("tuple {i}: decreases at grid point {g}")
            })?;
            prev = d;
        }
    }
    Ok("100 tuples x 1000 grid points".into())
}

fn schedule_invariants() -> Outcome {
    let mut cfg =
        PipelineConfig::load(&manifest("data/keystep.toml")).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    cfg.out = Some(dir.path().to_path_buf());
    let corpus = pipeline::load_corpus(&cfg).map_err(|e| e.to_string())?;
    let w = pipeline::weigh(&cfg, &corpus, dir.path()).map_err(|e| e.to_string())?;
    let table =
        pipeline::assess(&cfg, &corpus, &w.weights, dir.path()).map_err(|e| e.to_string())?;
    let clusters = pipeline::cluster(&cfg, &corpus, dir.path()).map_err(|e| e.to_string())?;
    let plan =
        pipeline::schedule(&cfg, &table, &clusters, dir.path()).map_err(|e| e.to_string())?;
    let curve = plan.params.curve;
    let max_inc = table
        .rows
        .values()
        .flat_map(|r| r.step_difficulties.iter().copied())
        .fold(0.0, f64::max);
    for s in &plan.stages {
        check(s.delta_h <= s.delta_d + 1e-9, || {
            format!("stage {}: dH {} > dD {}", s.t, s.delta_h, s.delta_d)
        })?;
        let h = ScheduleState::generated_difficulty(&s.c, &table).map_err(|e| e.to_string())?;
        check(h <= curve.budget_at(s.t as f64) + max_inc, || {
            format!("stage {}: H {h} over budget", s.t)
        })?;
        if s.t >= curve.t_max {
            check(s.c.values().all(|&c| c == 0), || {
                format!("stage {}: nonzero c", s.t)
            })?;
        }
    }
    for pair in plan.stages.windows(2) {
        for (id, &c) in &pair[1].c {
            check(c <= pair[0].c[id], || {
                format!("c of `{id}` grows at stage {}", pair[1].t)
            })?;
        }
    }
    Ok(format!("{} stages, B = {:.3}", plan.stages.len(), curve.b))
}

fn gradient_correctness() -> Outcome {
    let (c, _) = keypoint_corpus(10, 104).unwrap();
    let m = TokenWeightModel::new(&c, WeightingConfig::default()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let opts = GradCheckOptions {
            seed,
            ..Default::default()
        };
        let rep = gradient_check_with(&m, &c.questions[seed as usize], &opts)
            .map_err(|e| e.to_string())?;
        check(rep.checked >= 100, || {
            format!("seed {seed}: only {} params", rep.checked)
        })?;
        worst = worst.max(rep.max_relative_error);
    }
    check(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    let opts = GradCheckOptions {
        seed: 7,
        zero_largest: true,
        ..Default::default()
    };
    let control = gradient_check_with(&m, &c.questions[5], &opts)
        .map_err(|e| e.to_string())?
        .max_relative_error;
    check(control >= 1e-2, || {
        format!("mutation went unnoticed: {control:e}")
    })?;
    Ok(format!("max error {worst:.2e}, mutation {control:.2e}"))
}

fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn keypoint_recovery() -> Outcome {
    let start = Instant::now();
    let (c, flags) = keypoint_corpus(120, 1).unwrap();
    let cfg = WeightingConfig {
        seed: 1,
        ..Default::default()
    };
    let out = train_weighting(&c, &cfg).map_err(|e| e.to_string())?;
    let (mut kp, mut fl) = (Vec::new(), Vec::new());
    for (q, f) in c.questions.iter().zip(&flags) {
        for (&w, &k) in out.weights[&q.id].iter().zip(f) {
            if k {
                kp.push(w)
            } else {
                fl.push(w)
            }
        }
    }
    let a = auc(&kp, &fl);
    let ratio = out.final_mask_ratio;
    let elapsed = start.elapsed();
    check(a >= 0.9, || format!("AUC {a:.4}"))?;
    check(ratio >= 0.3, || format!("hard-mask ratio {ratio:.4}"))?;
    check(elapsed < Duration::from_secs(300), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "AUC {a:.4}, hard-mask ratio {ratio:.3}, {elapsed:.2?}"
    ))
}

fn random_question(r: &mut impl Rng, i: usize) -> Question {
    let n = r.random_range(1..=30);
    let mut spans = Vec::new();
    let mut at = 0;
    while at < n {
        let len = r.random_range(1..=(n - at).min(8));
        spans.push((at, at + len));
        at += len;
    }
    Question {
        id: format!("r{i}"),
        question_text: "q".into(),
        answer_text: "a".into(),
        rationale_tokens: (0..n).map(|j| format!("t{}", (i + j) % 13)).collect(),
        token_logprobs: Some((0..n).map(|_| -r.random_range(0.0..12.0)).collect()),
        token_weights: Some((0..n).map(|_| r.random_range(0.0..=1.0)).collect()),
        step_spans: spans,
        embedding: vec![1.0],
    }
}

fn difficulty_correctness() -> Outcome {
    let mut r = rng(105);
    let mut worst_sum: f64 = 0.0;
    for i in 0..1000 {
        let q = random_question(&mut r, i);
        let w = q.token_weights.clone().unwrap();
        let lp = q.token_logprobs.clone().unwrap();
        for &span in &q.step_spans {
            let hat = normalize_step_weights(&w, span).map_err(|e| e.to_string())?;
            worst_sum = worst_sum.max((hat.iter().sum::<f64>() - 1.0).abs());
            let d = step_difficulty(&lp, &hat, span).map_err(|e| e.to_string())?;
            check(d >= 0.0, || format!("table {i}: negative difficulty {d}"))?;
        }
        let row = assess_question(&q, &w, &lp).map_err(|e| e.to_string())?;
        let table = DifficultyTable::from_rows(vec![row]).map_err(|e| e.to_string())?;
        let mut prev = f64::INFINITY;
        for c in 0..=q.n_steps() {
            let h = table
                .question_generation_difficulty(&q.id, c)
                .map_err(|e| e.to_string())?;
            check(h <= prev, || format!("table {i}: h grows at c = {c}"))?;
            prev = h;
        }
    }
    check(worst_sum <= 1e-6, || {
        format!("weights sum off by {worst_sum:e}")
    })?;
    Ok(format!("1000 tables, max |sum - 1| = {worst_sum:.1e}"))
}

fn loss_equivalence() -> Outcome {
    let mut r = rng(106);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let q = random_question(&mut r, i);
        let lp = q.token_logprobs.clone().unwrap();
        let spec = shape_stage_loss(&q, 1, 0, Some(&vec![1.0; q.n_tokens()]))
            .map_err(|e| e.to_string())?;
        let mut nll = 0.0;
        for x in &lp {
            nll -= x;
        }
        worst = worst.max((evaluate_loss(&spec, &lp).map_err(|e| e.to_string())? - nll).abs());
    }
    check(worst <= 1e-9, || format!("loss differs by {worst:e}"))?;

    let corpus = bundled();
    let epochs = 8;
    let zeros: IndexMap<String, usize> =
        corpus.questions.iter().map(|q| (q.id.clone(), 0)).collect();
    let plan = Schedule {
        stages: (0..=epochs)
            .map(|t| StageRecord {
                t,
                d_t: 0.0,
                delta_d: 0.0,
                selected: vec![],
                delta_h: 0.0,
                c: zeros.clone(),
            })
            .collect(),
        params: ScheduleParams {
            curve: BudgetCurve::new(1.0, 1.0, 0.5, 1).unwrap(),
            epochs,
            step_reduction: 1,
            k: 1,
            beta: 12.0,
            epsilon: 0.1,
        },
    };
    let ones: IndexMap<String, Vec<f64>> = corpus
        .questions
        .iter()
        .map(|q| (q.id.clone(), vec![1.0; q.n_tokens()]))
        .collect();
    let cfg = SimulateConfig {
        learning_rate: 0.5,
        seed: 106,
    };
    let a = simulate_student(&corpus, &plan, Some(&ones), &cfg).map_err(|e| e.to_string())?;
    let b = train_plain(&corpus, epochs, &cfg).map_err(|e| e.to_string())?;
    let bits = |t: &keystep::loss_shaping::LearningTrace| {
        let mut v: Vec<u64> = t
            .epochs
            .iter()
            .flat_map(|e| [e.train_loss.to_bits(), e.eval_nll.to_bits()])
            .collect();
        v.extend(t.final_token_probs.values().flatten().map(|p| p.to_bits()));
        v
    };
    check(bits(&a) == bits(&b) && a == b, || {
        "student traces differ".into()
    })?;
    Ok(format!(
        "max |diff| {worst:.1e} over 100 questions; student traces bitwise equal"
    ))
}

fn end_to_end() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outputs = Vec::new();
    let mut first = Duration::ZERO;
    for d in &dirs {
        let mut cfg =
            PipelineConfig::load(&manifest("data/keystep.toml")).map_err(|e| e.to_string())?;
        cfg.out = Some(d.path().to_path_buf());
        let start = Instant::now();
        let art = pipeline::run_pipeline(&cfg).map_err(|e| e.to_string())?;
        if first == Duration::ZERO {
            first = start.elapsed();
        }
        let files: Vec<(String, Vec<u8>)> = art
            .written
            .iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(p).unwrap(),
                )
            })
            .collect();
        outputs.push(files);
    }
    check(first < Duration::from_secs(120), || {
        format!("took {first:?}")
    })?;
    check(outputs[0].len() >= 6, || "missing artifacts".into())?;
    check(outputs[0] == outputs[1], || "re-run differs".into())?;
    Ok(format!(
        "{} artifacts in {first:.2?}, re-run byte-identical",
        outputs[0].len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 approximation guarantee", approximation_guarantee),
        ("2 monotonicity and submodularity", monotone_submodular),
        ("3 budget curve", budget_curve),
        ("4 schedule invariants", schedule_invariants),
        ("5 gradient correctness", gradient_correctness),
        ("6 keypoint recovery", keypoint_recovery),
        ("7 difficulty correctness", difficulty_correctness),
        ("8 loss-shaping equivalence", loss_equivalence),
        ("9 end-to-end", end_to_end),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match std::panic::catch_unwind(run) {
            Ok(Ok(detail)) => println!("PASS criterion {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL criterion {name}: panicked");
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
