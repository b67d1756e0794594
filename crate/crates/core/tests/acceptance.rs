//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails. Tolerances and runtime limits are pinned below.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use iris_core::analysis::{lda, pca, standardize, topic_impact, FeatureMatrix};
use iris_core::bank::NeuronBank;
use iris_core::harness::{
    aggregate, domain_score, evaluate, invert, quantize_score, write_scores, write_steer_jsonl, MockJudge,
    QuestionRecord, SteerJob,
};
use iris_core::identify::{identify, identify_bank, partition, IdentifyConfig, PersonaPair, PromptTemplate};
use iris_core::retrieve::{coefficients, cosine, retrieve, RetrieveOptions};
use iris_core::runtime::{
    ActivationKind, ByteTokenizer, ModelConfig, ModelHandle, ModelWeights, PositionalKind, TapSpec,
};
use iris_core::steer::{compile_plan, smooth, steer_generate, unsteered_generate, SteeringConfig};
use iris_core::synthetic::{write_demo_workspace, PlantedModel, PlantedSpec, POS_TRAIT_TOKEN};
use iris_core::types::{Aspect, Domain, NeuronLoc, GLOBAL_TOPIC};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn planted() -> (PlantedModel, ModelHandle) {
    let p = PlantedModel::build(PlantedSpec::default()).expect("planted model builds");
    let h = p.handle().expect("planted handle");
    (p, h)
}

fn planted_config(p: &PlantedModel) -> IdentifyConfig {
    IdentifyConfig {
        max_new_tokens: 6,
        domains: vec![Domain::E],
        topics: p.spec.topics.clone(),
        workers: 2,
        seed: 11,
        ..IdentifyConfig::default()
    }
}

fn planted_bank(p: &PlantedModel, h: &ModelHandle, cfg: &IdentifyConfig) -> Result<NeuronBank, String> {
    let prompts = BTreeMap::from([(Domain::E, p.prompts(Domain::E))]);
    identify_bank(h, &p.questions(Domain::E, 8, 1), &prompts, cfg).map_err(fail)
}

/// Fixed 2-layer relu model, d = 8, d_h = 16, weights from a closed form.
fn hand_model() -> Result<ModelHandle, String> {
    let cfg = ModelConfig {
        n_layers: 2,
        model_dim: 8,
        ffn_dim: 16,
        n_heads: 2,
        vocab_size: 256,
        activation: ActivationKind::Relu,
        max_context: 64,
        positional: PositionalKind::Learned,
        tied_embeddings: false,
        norm_eps: 1e-5,
        rope_theta: 10_000.0,
    };
    let mut w = ModelWeights::zeros(cfg).map_err(fail)?;
    let fill = |data: &mut [f32], salt: f32| {
        for (i, v) in data.iter_mut().enumerate() {
            *v = 0.6 * (1.7 * i as f32 + salt).sin() + 0.2 * (0.31 * i as f32 * salt).cos();
        }
    };
    fill(&mut w.tok_embedding.data, 0.1);
    fill(&mut w.pos_embedding.as_mut().expect("learned").data, 0.2);
    for (l, layer) in w.layers.iter_mut().enumerate() {
        let s = 1.0 + l as f32;
        fill(&mut layer.wq.data, 0.3 * s);
        fill(&mut layer.wk.data, 0.4 * s);
        fill(&mut layer.wv.data, 0.5 * s);
        fill(&mut layer.wo.data, 0.6 * s);
        fill(&mut layer.w1.data, 0.7 * s);
        fill(&mut layer.w2.data, 0.8 * s);
    }
    fill(&mut w.lm_head.as_mut().expect("untied").data, 0.9);
    ModelHandle::new(w).map_err(fail)
}

fn criterion_1() -> Outcome {
    let model = hand_model()?;
    let pair = PersonaPair {
        positive: PromptTemplate::new(Domain::O, Aspect::Positive, "You are curious. {question}").map_err(fail)?,
        negative: PromptTemplate::new(Domain::O, Aspect::Negative, "You are incurious. {question}").map_err(fail)?,
    };
    let texts = [
        "What do you do on weekends?",
        "Describe a new hobby.",
        "How do you plan a trip?",
        "Tell me about art.",
        "Would you try a strange food?",
    ];
    let questions: Vec<QuestionRecord> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| QuestionRecord {
            id: format!("q{i}"),
            domain: Domain::O,
            topic: "leisure".into(),
            text: t.to_string(),
        })
        .collect();
    let cfg = IdentifyConfig {
        max_new_tokens: 12,
        domains: vec![Domain::O],
        topics: vec!["leisure".into()],
        workers: 3,
        ..IdentifyConfig::default()
    };
    let ident = identify(&model, Domain::O, "leisure", &questions, &pair, &cfg).map_err(fail)?;

    let tok = ByteTokenizer::new(256);
    let mut checked = 0;
    for (aspect, stats) in [(Aspect::Positive, &ident.positive), (Aspect::Negative, &ident.negative)] {
        let mut counts = vec![0u64; 2 * 16];
        let mut tokens = 0u64;
        for q in &questions {
            let prompt = tok
                .tokenize(pair.for_aspect(aspect).render(&q.text).as_bytes())
                .map_err(fail)?;
            let t = model
                .generate(&prompt, cfg.max_new_tokens, None, &TapSpec::all(2))
                .map_err(fail)?;
            for step in &t.generation_steps {
                tokens += 1;
                for tap in &step.taps {
                    for (u, g) in tap.gate_values.iter().enumerate() {
                        if *g > 0.0 {
                            counts[tap.layer * 16 + u] += 1;
                        }
                    }
                }
            }
        }
        check(stats.token_count() == tokens, || {
            format!("{aspect}: token count {} vs {tokens}", stats.token_count())
        })?;
        check(stats.active_counts() == counts.as_slice(), || {
            format!("{aspect}: active counts differ")
        })?;
        let probs = stats.activation_probability().map_err(fail)?;
        for (i, c) in counts.iter().enumerate() {
            check(probs.values[i] == *c as f64 / tokens as f64, || {
                format!("{aspect}: probability at {i}")
            })?;
        }
        let active = counts.iter().filter(|c| **c > 0).count();
        check(active > 0 && active < counts.len(), || {
            format!("{aspect}: degenerate gate pattern ({active} active)")
        })?;
        checked += tokens;
    }
    Ok(format!("{checked} generation tokens recounted, counts identical"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let taus = [0.05, 0.10, 0.20];
    for m in 0..100 {
        let n = rng.random_range(1..300);
        let delta: Vec<f64> = (0..n)
            .map(|_| match rng.random_range(0..10) {
                0 => taus[rng.random_range(0..3)] * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                _ => rng.random_range(-1.0..=1.0),
            })
            .collect();
        let neg: Vec<f64> = delta.iter().map(|d| -d).collect();
        let mut previous: Option<(Vec<usize>, Vec<usize>)> = None;
        for &tau in &taus {
            let p = partition(&delta, tau);
            let mut all: Vec<usize> = p
                .positive
                .iter()
                .chain(&p.negative)
                .chain(&p.irrelevant)
                .copied()
                .collect();
            all.sort_unstable();
            check(all == (0..n).collect::<Vec<_>>(), || {
                format!("matrix {m}, τ {tau}: not a partition")
            })?;
            check(p.positive.iter().all(|&i| delta[i] > tau), || {
                format!("matrix {m}: positive class")
            })?;
            check(p.negative.iter().all(|&i| delta[i] < -tau), || {
                format!("matrix {m}: negative class")
            })?;
            let q = partition(&neg, tau);
            check(q.positive == p.negative && q.negative == p.positive, || {
                format!("matrix {m}: negation")
            })?;
            if let Some((pp, pn)) = &previous {
                check(
                    p.positive.iter().all(|i| pp.contains(i)) && p.negative.iter().all(|i| pn.contains(i)),
                    || format!("matrix {m}: classes grew with τ {tau}"),
                )?;
            }
            previous = Some((p.positive, p.negative));
        }
    }
    Ok("100 matrices × 3 thresholds".into())
}

fn criterion_3() -> Outcome {
    let (p, h) = planted();
    let cfg = planted_config(&p);
    let bank = planted_bank(&p, &h, &cfg)?;
    let prompts = BTreeMap::from([(Domain::E, p.prompts(Domain::E))]);
    let job = SteerJob {
        model: &h,
        bank: &bank,
        prompts: &prompts,
        max_new_tokens: 6,
        retrieve: RetrieveOptions::default(),
        workers: 4,
    };
    let probes = p.questions(Domain::E, 20, 1234);
    let prepared = job.prepare(&probes).map_err(fail)?;
    let mut hits = 0;
    for q in &prepared {
        let sum: f64 = q.profile.coefficients.values().sum();
        check((sum - 1.0).abs() <= 1e-9, || {
            format!("{}: coefficients sum to {sum}", q.question.id)
        })?;
        hits += usize::from(q.profile.argmax() == q.question.topic);
    }
    let rate = hits as f64 / prepared.len() as f64;
    check(prepared.len() == 60 && rate >= 0.95, || {
        format!("argmax on planted topic for {hits}/{}", prepared.len())
    })?;
    Ok(format!("argmax on planted topic for {hits}/60"))
}

fn criterion_4() -> Outcome {
    check((smooth(0.15) - 0.5).abs() <= 1e-12, || {
        format!("f(0.15) = {}", smooth(0.15))
    })?;
    // 1 / (1 + e^{1.5})
    let f0 = 1.0 / (1.0 + 1.5f64.exp());
    check(
        (smooth(0.0) - 0.182426).abs() <= 1e-5 && (smooth(0.0) - f0).abs() < 1e-15,
        || format!("f(0) = {}", smooth(0.0)),
    )?;
    let xs: Vec<f64> = (0..=2000).map(|i| i as f64 / 2000.0).collect();
    for &x in &xs {
        check(smooth(x) == smooth(-x), || format!("f not even at {x}"))?;
    }
    // Saturates to 1.0 in f64 past |x| ≈ 3.8, so strictness is checked below that.
    for w in xs.windows(2).filter(|w| w[1] <= 3.0) {
        check(smooth(w[1]) > smooth(w[0]), || format!("f not increasing at {}", w[1]))?;
    }
    Ok(format!("f(0) = {:.6}", smooth(0.0)))
}

fn criterion_5() -> Outcome {
    let (p, h) = planted();
    let cfg = planted_config(&p);
    let bank = planted_bank(&p, &h, &cfg)?;
    let pair = p.prompts(Domain::E);
    let taps = TapSpec::all(h.config().n_layers);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut clamped_checks = 0usize;
    for topic in 0..p.spec.n_topics {
        let q = p.probe_question(topic, &mut rng);
        for aspect in Aspect::BOTH {
            let sc = SteeringConfig {
                gamma: 0.0,
                sigma: 1.0,
                target_domain: Domain::E,
                target_aspect: aspect,
            };
            let steered =
                steer_generate(&h, &bank, &q, &sc, &pair, 6, RetrieveOptions::default(), &taps).map_err(fail)?;
            let plain = unsteered_generate(&h, &q, aspect, &pair, 6, &taps).map_err(fail)?;
            check(steered.plan.clamp.is_empty(), || "σ = 1 left clamps".into())?;
            check(bits(&steered.transcript) == bits(&plain), || {
                format!("γ = 0 transcript differs for `{q}`")
            })?;

            let sc = SteeringConfig {
                gamma: 1.1,
                sigma: 0.10,
                target_domain: Domain::E,
                target_aspect: aspect,
            };
            let run = steer_generate(&h, &bank, &q, &sc, &pair, 6, RetrieveOptions::default(), &taps).map_err(fail)?;
            check(!run.plan.clamp.is_empty(), || "σ = 0.10 produced no clamps".into())?;
            for step in run.transcript.all_steps() {
                for loc in &run.plan.clamp {
                    let v = step.taps[loc.layer].hidden_values[loc.unit];
                    check(v <= 0.0, || {
                        format!("clamped {loc} is {v} at position {}", step.position)
                    })?;
                    clamped_checks += 1;
                }
            }
        }
    }

    let global_cfg = IdentifyConfig {
        global_mode: true,
        ..cfg
    };
    let global = planted_bank(&p, &h, &global_cfg)?;
    check(global.topics(Domain::E) == vec![GLOBAL_TOPIC], || {
        "global mode did not collapse topics".into()
    })?;
    let mut deltas = 0;
    for aspect in Aspect::BOTH {
        let q = p.probe_question(0, &mut rng);
        let sc = SteeringConfig {
            gamma: 1.3,
            sigma: 0.10,
            target_domain: Domain::E,
            target_aspect: aspect,
        };
        let run = steer_generate(
            &h,
            &global,
            &q,
            &sc,
            &pair,
            6,
            RetrieveOptions::default(),
            &TapSpec::none(),
        )
        .map_err(fail)?;
        check(run.profile.coefficients[GLOBAL_TOPIC] == 1.0, || {
            "single topic coefficient is not 1".into()
        })?;
        for r in global.records(Domain::E, GLOBAL_TOPIC).map_err(fail)? {
            if r.polarity == aspect {
                let want = 1.3 * r.a95 * smooth(r.delta_p);
                let got = run.plan.deltas[&r.loc];
                check((got - want).abs() <= 1e-9, || {
                    format!("{}: delta {got} vs {want}", r.loc)
                })?;
                deltas += 1;
            }
        }
    }
    Ok(format!(
        "6 bit-identical pairs, {clamped_checks} clamp checks, {deltas} single-topic deltas"
    ))
}

fn bits(t: &iris_core::runtime::Transcript) -> Vec<u32> {
    let mut out: Vec<u32> = t.prompt_tokens.iter().chain(&t.generated_tokens).copied().collect();
    for s in t.all_steps() {
        for tap in &s.taps {
            out.extend(tap.gate_values.iter().chain(&tap.hidden_values).map(|v| v.to_bits()));
        }
    }
    out
}

fn criterion_6() -> Outcome {
    let (p, h) = planted();
    let cfg = planted_config(&p);
    let bank = planted_bank(&p, &h, &cfg)?;
    check(bank.entries().all(|(_, _, rs)| rs.iter().all(|r| r.a95 >= 0.0)), || {
        "negative a95".into()
    })?;
    let pair = p.prompts(Domain::E);
    let gammas = [0.9, 1.1, 1.3, 1.5];
    let tok = ByteTokenizer::new(256);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut logit_rows = Vec::new();
    for topic in 0..p.spec.n_topics {
        let q = p.probe_question(topic, &mut rng);
        let dv = iris_core::retrieve::delta_vector(&h, &q, &pair, 6).map_err(fail)?;
        let profile = retrieve(&bank, Domain::E, &dv, RetrieveOptions::default()).map_err(fail)?;
        let prompt = tok.tokenize(pair.positive.render(&q).as_bytes()).map_err(fail)?;
        let mut prev: Option<(f32, BTreeMap<NeuronLoc, f64>)> = None;
        let mut row = Vec::new();
        for &g in &gammas {
            let sc = SteeringConfig {
                gamma: g,
                sigma: 0.10,
                target_domain: Domain::E,
                target_aspect: Aspect::Positive,
            };
            let plan = compile_plan(&bank, &profile, &sc).map_err(fail)?;
            let logits = h
                .next_token_logits(&prompt, Some(&plan.interventions()))
                .map_err(fail)?;
            let logit = logits[POS_TRAIT_TOKEN as usize];
            if let Some((pl, pd)) = &prev {
                check(logit >= *pl, || {
                    format!("topic {topic}: logit fell from {pl} to {logit} at γ {g}")
                })?;
                check(pd.keys().eq(plan.deltas.keys()), || {
                    "delta support changed with γ".into()
                })?;
                for (loc, d) in &plan.deltas {
                    check(*d >= pd[loc], || format!("{loc}: delta fell at γ {g}"))?;
                }
            }
            row.push(logit);
            prev = Some((logit, plan.deltas));
        }
        logit_rows.push(row);
    }
    Ok(format!("step-1 logits of the trait token {:?}", logit_rows[0]))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..10_000 {
        let n = rng.random_range(1..24);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c = cosine(&v, &w).map_err(fail)?;
        check((-1.0..=1.0).contains(&c.value), || {
            format!("vector {i}: cosine {}", c.value)
        })?;
        let scale = rng.random_range(1e-3..1e3);
        let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
        let cs = cosine(&scaled, &w).map_err(fail)?;
        check((cs.value - c.value).abs() <= 1e-6, || {
            format!("vector {i}: scale changed cosine")
        })?;

        let k = rng.random_range(1..12);
        let sims: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let shift = rng.random_range(-10.0..10.0);
        let shifted: Vec<f64> = sims.iter().map(|s| s + shift).collect();
        let a = coefficients(&sims).map_err(fail)?;
        let b = coefficients(&shifted).map_err(fail)?;
        check(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-9), || {
            format!("vector {i}: shift changed coefficients")
        })?;
        check(
            first_max(&a) == first_max(&sims) && first_max(&b) == first_max(&sims),
            || format!("vector {i}: argmax moved"),
        )?;
    }
    Ok("10000 random cases".into())
}

fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..30).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let m = FeatureMatrix::new(rows.clone(), None).map_err(fail)?;
        let p = pca(&m, 30).map_err(fail)?;
        let back = p.reconstruct();
        let err: f64 = back
            .iter()
            .flatten()
            .zip(rows.iter().flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let centered: f64 = rows
            .iter()
            .flat_map(|r| r.iter().zip(&p.mean).map(|(x, m)| (x - m).powi(2)))
            .sum();
        let rel = (err / centered).sqrt();
        worst = worst.max(rel);
        check(rel < 1e-5, || format!("PCA reconstruction error {rel}"))?;
        let sum: f64 = p.explained_variance.iter().sum();
        check((sum - p.total_variance).abs() <= 1e-6 * p.total_variance, || {
            "explained variance sum".into()
        })?;
    }

    let noise = Normal::new(0.0, 0.1).map_err(fail)?;
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for (c, label) in [(0.0, "a"), (10.0, "b")] {
        for _ in 0..30 {
            x.push(vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)]);
            labels.push(label.to_string());
        }
    }
    let l = lda(&x, &labels, 1).map_err(fail)?;
    let side = |label: &str| -> (f64, f64) {
        let v: Vec<f64> = l
            .projections
            .iter()
            .zip(&labels)
            .filter(|(_, y)| *y == label)
            .map(|(p, _)| p[0])
            .collect();
        (
            v.iter().copied().fold(f64::INFINITY, f64::min),
            v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let ((amin, amax), (bmin, bmax)) = (side("a"), side("b"));
    let gap = (bmin - amax).max(amin - bmax);
    check(gap > 5.0, || format!("LDA gap {gap}"))?;

    let mut per_topic = BTreeMap::new();
    for t in 0..7 {
        let pos: Vec<f64> = (0..5).map(|_| rng.random_range(1.0..5.0)).collect();
        let neg: Vec<f64> = (0..5).map(|_| rng.random_range(1.0..5.0)).collect();
        per_topic.insert(format!("t{t}"), (pos, neg));
    }
    let table = topic_impact(&per_topic).map_err(fail)?;
    for z in [
        table.rows.iter().map(|r| r.positive_standardized).collect::<Vec<_>>(),
        table.rows.iter().map(|r| r.negative_standardized).collect::<Vec<_>>(),
    ] {
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        check(mean.abs() <= 1e-9 && (sd - 1.0).abs() <= 1e-6, || {
            format!("standardized mean {mean}, std {sd}")
        })?;
    }
    let z = standardize(&[1.0, 2.0, 3.0]);
    check((z[0] + 1.224745).abs() < 1e-5 && z[1].abs() < 1e-12, || {
        format!("standardize(1, 2, 3) = {z:?}")
    })?;
    Ok(format!("PCA worst relative error {worst:.1e}, LDA gap {gap:.2}"))
}

/// identify → save → load → retrieve → steer → evaluate, all files kept.
fn pipeline_run(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    write_demo_workspace(dir, 9).map_err(fail)?;
    let (p, _) = planted();
    let model = iris_core::runtime::load_model(&dir.join("model.json")).map_err(fail)?;
    let pair = PersonaPair::load_dir(&dir.join("prompts"), Domain::E).map_err(fail)?;
    let prompts = BTreeMap::from([(Domain::E, pair.clone())]);
    let ident_qs = iris_core::harness::load_questions(&dir.join("identify.jsonl"))
        .map_err(fail)?
        .records;
    let test_qs = iris_core::harness::load_questions(&dir.join("test.jsonl"))
        .map_err(fail)?
        .records;
    let bank = identify_bank(&model, &ident_qs, &prompts, &planted_config(&p)).map_err(fail)?;
    let bank_path = dir.join("bank.json");
    bank.save(&bank_path).map_err(fail)?;
    let first = fs::read(&bank_path).map_err(fail)?;
    let loaded = NeuronBank::load(&bank_path).map_err(fail)?;
    check(loaded == bank, || "bank changed through save/load".into())?;
    loaded.save(&bank_path).map_err(fail)?;
    check(fs::read(&bank_path).map_err(fail)? == first, || {
        "bank round trip is not byte-stable".into()
    })?;

    let job = SteerJob {
        model: &model,
        bank: &loaded,
        prompts: &prompts,
        max_new_tokens: 6,
        retrieve: RetrieveOptions::default(),
        workers: 3,
    };
    let prepared = job.prepare(&test_qs).map_err(fail)?;
    let records = job.steer(&prepared, &Aspect::BOTH, 1.1, 0.10).map_err(fail)?;
    write_steer_jsonl(&dir.join("steer.jsonl"), &records).map_err(fail)?;
    let sc = SteeringConfig::new(Domain::E, Aspect::Positive);
    let run = steer_generate(
        &model,
        &loaded,
        &test_qs[0].text,
        &sc,
        &pair,
        6,
        RetrieveOptions::default(),
        &TapSpec::all(2),
    )
    .map_err(fail)?;
    run.transcript
        .write(&dir.join("transcript.jsonl"), model.config().ffn_dim)
        .map_err(fail)?;
    let judge = MockJudge::load_dir(&dir.join("keywords")).map_err(fail)?;
    let scores = evaluate(&records, &judge).map_err(fail)?;
    write_scores(&dir.join("scores.csv"), &scores).map_err(fail)?;

    [
        "bank.json",
        "steer.jsonl",
        "transcript.jsonl",
        "transcript.taps.bin",
        "transcript.taps.json",
        "scores.csv",
    ]
    .iter()
    .map(|f| Ok((f.to_string(), fs::read(dir.join(f)).map_err(fail)?)))
    .collect()
}

fn criterion_9() -> Outcome {
    let a = tempfile::tempdir().map_err(fail)?;
    let b = tempfile::tempdir().map_err(fail)?;
    let ra = pipeline_run(a.path())?;
    let rb = pipeline_run(b.path())?;
    for ((name, x), (_, y)) in ra.iter().zip(&rb) {
        check(x == y, || format!("{name} differs between runs"))?;
    }
    let bytes: usize = ra.iter().map(|(_, x)| x.len()).sum();
    Ok(format!("{} files, {bytes} bytes identical across runs", ra.len()))
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..1000 {
        let raw = quantize_score(rng.random_range(1.0..=5.0));
        let once = invert(raw, Aspect::Negative).map_err(fail)?;
        let twice = invert(once, Aspect::Negative).map_err(fail)?;
        check(twice == raw, || {
            format!("score {i}: invert twice gives {twice} from {raw}")
        })?;
        check(invert(raw, Aspect::Positive).map_err(fail)? == raw, || {
            "positive inversion".into()
        })?;
        let other = quantize_score(rng.random_range(1.0..=5.0));
        let d = domain_score(once, other).map_err(fail)?;
        check((2.0..=10.0).contains(&d), || format!("domain score {d}"))?;
    }
    check(aggregate(&[8.0, 10.0]).map_err(fail)? == (9.0, 1.0), || {
        "aggregate([8, 10])".into()
    })?;
    check(invert(2.0, Aspect::Negative).map_err(fail)? == 4.0, || {
        "invert(2, negative)".into()
    })?;
    Ok("1000 random scores".into())
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "activation probability equals a brute-force recount",
            limit: Some(Duration::from_secs(5)),
            run: criterion_1,
        },
        Criterion {
            id: 2,
            name: "partition law",
            limit: None,
            run: criterion_2,
        },
        Criterion {
            id: 3,
            name: "retrieval calibration on the planted model",
            limit: Some(Duration::from_secs(60)),
            run: criterion_3,
        },
        Criterion {
            id: 4,
            name: "smoothing function",
            limit: None,
            run: criterion_4,
        },
        Criterion {
            id: 5,
            name: "steering identities",
            limit: None,
            run: criterion_5,
        },
        Criterion {
            id: 6,
            name: "monotonicity over gamma",
            limit: None,
            run: criterion_6,
        },
        Criterion {
            id: 7,
            name: "cosine and softmax laws",
            limit: None,
            run: criterion_7,
        },
        Criterion {
            id: 8,
            name: "analysis correctness",
            limit: None,
            run: criterion_8,
        },
        Criterion {
            id: 9,
            name: "determinism and persistence",
            limit: Some(Duration::from_secs(120)),
            run: criterion_9,
        },
        Criterion {
            id: 10,
            name: "metric machinery",
            limit: None,
            run: criterion_10,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2}: {} ({detail}) [{elapsed:.2?}]", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2}: {} ({why}) [{elapsed:.2?}]", c.id, c.name);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
