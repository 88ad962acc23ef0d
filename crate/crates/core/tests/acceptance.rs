//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Thresholds and time budgets are fixed here and must not be
//! relaxed to make a run pass.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xtypes_core::clustering::{kmeans_fit, KMeansParams};
use xtypes_core::dataset::{CoarseCategory, Question, QuestionDataset};
use xtypes_core::evaluate::{evaluate_run, gain, mrr, ndcg_at_k, EvalMode, Metric};
use xtypes_core::fixtures::{build_fixture, write_fixture, Fixture, FixtureSpec};
use xtypes_core::kg_store::{EntityTypeIndex, TypeSystem};
use xtypes_core::pipeline::{cmd_run, PipelineConfig, PipelineModel, MODEL_FILE};
use xtypes_core::ranker::{predict_topk, parse_predictions, CategorySource, Submission, TypeScorer};
use xtypes_core::type_repr::{build_jaccard_repr, build_question_tfidf_repr, normalize_repr, TypeMatrix};
use xtypes_core::ReprKind;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(cond: bool, what: &str, failures: &mut Vec<String>) {
    if !cond {
        failures.push(what.to_string());
    }
}

fn outcome(failures: Vec<String>, detail: String) -> Outcome {
    if failures.is_empty() {
        Outcome { pass: true, detail }
    } else {
        let shown: Vec<&String> = failures.iter().take(3).collect();
        Outcome {
            pass: false,
            detail: format!("{} failures, first: {:?}", failures.len(), shown),
        }
    }
}

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|t| t.to_string()).collect()
}

fn id(i: usize) -> String {
    format!("t{i:03}")
}

// ---------------------------------------------------------------- jaccard

fn jaccard_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = Vec::new();
    let mut cells = 0;
    for trial in 0..20 {
        let n_types = rng.gen_range(1..=50);
        let n_entities = rng.gen_range(1..=500);
        let mut assertions = Vec::new();
        for e in 0..n_entities {
            for _ in 0..rng.gen_range(0..=4) {
                assertions.push((format!("e{e}"), id(rng.gen_range(0..n_types))));
            }
        }
        let index = EntityTypeIndex::new(&assertions, BTreeMap::new());
        // vocabulary in shuffled order, including types with no entities
        let mut vocab: Vec<String> = (0..n_types).map(id).collect();
        vocab.shuffle(&mut rng);
        let m = build_jaccard_repr(&vocab, &index);

        let mut sets: HashMap<&str, HashSet<&str>> = HashMap::new();
        for (e, t) in &assertions {
            sets.entry(t.as_str()).or_default().insert(e.as_str());
        }
        let empty = HashSet::new();
        for (i, a) in vocab.iter().enumerate() {
            for (j, b) in vocab.iter().enumerate() {
                let expected = if i == j {
                    1.0
                } else {
                    let sa = sets.get(a.as_str()).unwrap_or(&empty);
                    let sb = sets.get(b.as_str()).unwrap_or(&empty);
                    let inter = sa.intersection(sb).count();
                    let union = sa.union(sb).count();
                    if union == 0 {
                        0.0
                    } else {
                        inter as f64 / union as f64
                    }
                };
                cells += 1;
                let got = m.row(i)[j];
                check(
                    got.to_bits() == expected.to_bits(),
                    &format!("trial {trial} J({a},{b}) = {got}, oracle {expected}"),
                    &mut failures,
                );
            }
        }
    }
    outcome(failures, format!("20 KGs, {cells} cells bit-equal"))
}

// ---------------------------------------------------------------- distances

fn random_dag(rng: &mut ChaCha8Rng, n: usize) -> Vec<(String, String)> {
    let mut edges = BTreeSet::new();
    for child in 1..n {
        for _ in 0..rng.gen_range(0..=2) {
            let parent = rng.gen_range(0..child);
            edges.insert((id(child), id(parent)));
        }
    }
    edges.into_iter().collect()
}

fn floyd_warshall(n: usize, edges: &[(String, String)]) -> Vec<Vec<Option<usize>>> {
    let idx = |t: &str| t[1..].parse::<usize>().unwrap();
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for (c, p) in edges {
        let (a, b) = (idx(c), idx(p));
        d[a][b] = Some(1);
        d[b][a] = Some(1);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(x), Some(y)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|cur| x + y < cur) {
                        d[i][j] = Some(x + y);
                    }
                }
            }
        }
    }
    d
}

fn distance_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut failures = Vec::new();
    let mut pairs = 0;
    for trial in 0..20 {
        let n = rng.gen_range(1..=30);
        let edges = random_dag(&mut rng, n);
        let ts = TypeSystem::new((0..n).map(id), &edges, BTreeMap::new(), BTreeMap::new()).unwrap();
        let oracle = floyd_warshall(n, &edges);
        let d: Vec<Vec<Option<usize>>> = (0..n)
            .map(|i| (0..n).map(|j| ts.type_distance(&id(i), &id(j)).unwrap()).collect())
            .collect();
        for i in 0..n {
            check(d[i][i] == Some(0), &format!("trial {trial}: d({i},{i}) != 0"), &mut failures);
            for j in 0..n {
                pairs += 1;
                check(d[i][j] == oracle[i][j], &format!("trial {trial}: d({i},{j}) {:?} vs {:?}", d[i][j], oracle[i][j]), &mut failures);
                check(d[i][j] == d[j][i], &format!("trial {trial}: asymmetric ({i},{j})"), &mut failures);
                check(i == j || d[i][j] != Some(0), &format!("trial {trial}: zero distance ({i},{j})"), &mut failures);
                for k in 0..n {
                    if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                        check(d[i][j].is_some_and(|x| x <= a + b), &format!("trial {trial}: triangle ({i},{k},{j})"), &mut failures);
                    }
                }
            }
        }
    }
    outcome(failures, format!("20 DAGs, {pairs} pairs match Floyd-Warshall"))
}

// ---------------------------------------------------------------- metrics

fn chain_ts() -> TypeSystem {
    // A ⊂ B ⊂ C, Z unrelated
    let edges = vec![("A".to_string(), "B".to_string()), ("B".to_string(), "C".to_string())];
    TypeSystem::new(["Z"], &edges, BTreeMap::new(), BTreeMap::new()).unwrap()
}

fn q(id: &str, cat: CoarseCategory, types: &[&str]) -> Question {
    Question {
        id: id.into(),
        text: "t".into(),
        category: Some(cat),
        gold_types: s(types),
    }
}

fn sub(id: &str, cat: CoarseCategory, types: &[&str]) -> Submission {
    Submission {
        id: id.into(),
        category: Some(cat),
        types: s(types),
    }
}

fn metric_golden() -> Outcome {
    use CoarseCategory::*;
    let ts = chain_ts();
    let tol = 1e-9;
    let mut failures = Vec::new();
    let close = |a: f64, b: f64| (a - b).abs() <= tol;
    let l3 = 3f64.log2();

    check(close(gain(&ts, "A", &s(&["A"])), 1.0), "gain exact", &mut failures);
    check(close(gain(&ts, "B", &s(&["A"])), 0.5), "gain parent", &mut failures);
    check(close(gain(&ts, "C", &s(&["A"])), 1.0 / 3.0), "gain chain", &mut failures);
    check(close(gain(&ts, "Z", &s(&["A"])), 0.0), "gain unreachable", &mut failures);
    for (a, b) in [("A", "C"), ("B", "A"), ("Z", "B")] {
        check(close(gain(&ts, a, &s(&[b])), gain(&ts, b, &s(&[a]))), "gain symmetry", &mut failures);
    }

    check(ndcg_at_k(&ts, &s(&["A", "B"]), &s(&["A", "B"]), 3) == Some(1.0), "ndcg perfect", &mut failures);
    check(ndcg_at_k(&ts, &[], &s(&["A"]), 3) == Some(0.0), "ndcg empty", &mut failures);
    check(ndcg_at_k(&ts, &s(&["B", "A"]), &s(&["A"]), 3) == Some(1.0), "ndcg clamp", &mut failures);
    check(ndcg_at_k(&ts, &s(&["A"]), &[], 3).is_none(), "ndcg empty gold skipped", &mut failures);

    check(close(mrr(&s(&["A", "B"]), &s(&["A"])), 1.0), "mrr rank 1", &mut failures);
    check(close(mrr(&s(&["C", "B", "A"]), &s(&["A"])), 1.0 / 3.0), "mrr rank 3", &mut failures);
    check(close(mrr(&s(&["C"]), &s(&["A"])), 0.0), "mrr miss", &mut failures);

    // appending after rank k / after the first hit changes nothing
    let base = s(&["Z", "B", "C"]);
    let mut longer = base.clone();
    longer.extend(s(&["A", "A"]));
    check(ndcg_at_k(&ts, &base, &s(&["A"]), 3) == ndcg_at_k(&ts, &longer, &s(&["A"]), 3), "ndcg tail", &mut failures);
    check(mrr(&s(&["Z", "A"]), &s(&["A"])) == mrr(&s(&["Z", "A", "B"]), &s(&["A"])), "mrr tail", &mut failures);

    let gold = QuestionDataset::new(vec![
        q("1", Resource, &["A", "B"]),
        q("2", Resource, &["A"]),
        q("3", Boolean, &[]),
        q("4", Date, &[]),
    ])
    .unwrap();
    let preds = vec![
        sub("1", Resource, &["B", "C"]),
        sub("2", Date, &[]),
        sub("3", Boolean, &[]),
        sub("4", Number, &[]),
    ];
    let q1 = (1.0 + 0.5 / l3) / (1.0 + 1.0 / l3);
    let t = evaluate_run(&ts, &preds, &gold, EvalMode::TypeOnly, Metric::Ndcg).unwrap();
    let e = evaluate_run(&ts, &preds, &gold, EvalMode::EndToEnd, Metric::Ndcg).unwrap();
    let m = evaluate_run(&ts, &preds, &gold, EvalMode::EndToEnd, Metric::Mrr).unwrap();
    check(close(t.means["ndcg@3"], q1 / 2.0), "mixed type-only", &mut failures);
    check(close(e.means["ndcg@3"], (q1 + 1.0) / 4.0), "mixed end-to-end", &mut failures);
    check(close(m.means["mrr"], 0.5), "mixed mrr", &mut failures);
    check(e.per_question["ndcg@3"][2] == 1.0 && e.per_question["ndcg@3"][3] == 0.0, "literal scoring", &mut failures);
    for r in [&t, &e, &m] {
        for (name, col) in &r.per_question {
            check(col.len() == r.question_ids.len(), "per-question length", &mut failures);
            check(close(r.means[name], col.iter().sum::<f64>() / col.len() as f64), "mean recompute", &mut failures);
            check(col.iter().all(|v| (0.0..=1.0).contains(v)), "metric range", &mut failures);
        }
    }
    let perfect = vec![
        sub("1", Resource, &["A", "B"]),
        sub("2", Resource, &["A"]),
        sub("3", Boolean, &[]),
        sub("4", Date, &[]),
    ];
    for mode in [EvalMode::TypeOnly, EvalMode::EndToEnd] {
        for metric in [Metric::Ndcg, Metric::Mrr] {
            let r = evaluate_run(&ts, &perfect, &gold, mode, metric).unwrap();
            check(r.means.values().all(|v| *v == 1.0), "perfect run", &mut failures);
        }
    }

    // monotone swap on random rankings over a random hierarchy
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 25;
    let edges = random_dag(&mut rng, n);
    let big = TypeSystem::new((0..n).map(id), &edges, BTreeMap::new(), BTreeMap::new()).unwrap();
    let mut swaps = 0;
    for _ in 0..1000 {
        let gold: Vec<std::string::String> = (0..rng.gen_range(1..=4)).map(|_| id(rng.gen_range(0..n))).collect();
        let mut ranking: Vec<std::string::String> = (0..n).map(id).collect();
        ranking.shuffle(&mut rng);
        ranking.truncate(rng.gen_range(1..=12));
        let k = [3, 5, 10][rng.gen_range(0..3)];
        let i = rng.gen_range(0..ranking.len());
        let j = rng.gen_range(0..ranking.len());
        let (i, j) = (i.min(j), i.max(j));
        if gain(&big, &ranking[j], &gold) <= gain(&big, &ranking[i], &gold) {
            continue;
        }
        swaps += 1;
        let before = ndcg_at_k(&big, &ranking, &gold, k).unwrap();
        ranking.swap(i, j);
        let after = ndcg_at_k(&big, &ranking, &gold, k).unwrap();
        check(after >= before - tol, &format!("swap lowered ndcg {before} -> {after}"), &mut failures);
    }
    outcome(failures, format!("golden examples at 1e-9, {swaps} improving swaps never lower NDCG"))
}

// ---------------------------------------------------------------- k-means

fn kmeans_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut failures = Vec::new();
    let params = KMeansParams::default();
    for trial in 0..50 {
        let n = rng.gen_range(5..60);
        let d = rng.gen_range(1..8);
        let mut rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        // a few exact duplicates
        for _ in 0..3 {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            rows[b] = rows[a].clone();
        }
        let m = TypeMatrix::new((0..n).map(id).collect(), rows.clone(), ReprKind::Jaccard);
        let distinct = rows.iter().map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<BTreeSet<_>>().len();
        let k = rng.gen_range(1..=distinct.min(8));
        let cm = match kmeans_fit(&m, k, trial, params) {
            Ok(cm) => cm,
            Err(e) => {
                failures.push(format!("trial {trial}: {e}"));
                continue;
            }
        };
        let h = &cm.inertia_history;
        check(
            h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12),
            &format!("trial {trial}: inertia rose {h:?}"),
            &mut failures,
        );
        for a in 0..n {
            for b in 0..n {
                if rows[a] == rows[b] {
                    check(cm.cluster_of(&id(a)) == cm.cluster_of(&id(b)), &format!("trial {trial}: duplicates split"), &mut failures);
                }
            }
        }
        let again = kmeans_fit(&m, k, trial, params).unwrap();
        check(again == cm, &format!("trial {trial}: not deterministic"), &mut failures);
    }

    // two blobs, centers 10 apart, sigma 0.1
    let centers = [[0.0, 0.0], [10.0, 0.0]];
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..20 {
            let noise: [f64; 2] = [gauss(&mut rng) * 0.1, gauss(&mut rng) * 0.1];
            rows.push(vec![center[0] + noise[0], center[1] + noise[1]]);
            truth.push(c);
        }
    }
    // oracle: nearest true center
    let oracle: Vec<usize> = rows
        .iter()
        .map(|r| {
            let d0 = (r[0] - centers[0][0]).powi(2) + (r[1] - centers[0][1]).powi(2);
            let d1 = (r[0] - centers[1][0]).powi(2) + (r[1] - centers[1][1]).powi(2);
            usize::from(d1 < d0)
        })
        .collect();
    let m = TypeMatrix::new((0..40).map(id).collect(), rows, ReprKind::Jaccard);
    let cm = kmeans_fit(&m, 2, 5, params).unwrap();
    let got: Vec<usize> = (0..40).map(|i| cm.cluster_of(&id(i)).unwrap()).collect();
    let flip = got[0] != oracle[0];
    let matches = got.iter().zip(&oracle).all(|(g, o)| (*g != *o) == flip);
    check(matches && oracle == truth, "two-blob recovery", &mut failures);
    outcome(failures, "50 random fits monotone, duplicates co-assigned, reruns identical; two blobs exact".into())
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------- fixture runs

fn fixture_config(root: &Path, fx: &Fixture, repr: ReprKind, artifacts: &str) -> PipelineConfig {
    let paths = write_fixture(fx, &root.join("data")).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.paths.kg_dir = paths.kg_dir;
    cfg.paths.train = paths.train;
    cfg.paths.test = Some(paths.test);
    cfg.paths.artifacts = root.join(artifacts);
    cfg.model.representation = repr;
    cfg.model.k = Some(9);
    cfg
}

fn top10_exhaustive(model: &PipelineModel, question: &Question) -> Vec<String> {
    let x = model.featurizer.featurize(&question.text);
    let m = model.matcher.score_features(&x);
    let mut all: Vec<(String, f64, f64)> = model
        .clusters
        .assignment
        .iter()
        .map(|(t, &c)| {
            let h = model.ranker.score(t, &x).unwrap();
            (t.clone(), model.fusion.score(m[c], h), m[c])
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
    all.into_iter().take(10).map(|e| e.0).collect()
}

fn kendall_tau(a: &[String], b: &[String]) -> f64 {
    let pos: HashMap<&String, usize> = b.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (pos.get(&a[i]), pos.get(&a[j])) {
                (Some(x), Some(y)) if x < y => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let total = concordant + discordant;
    if total == 0 {
        1.0
    } else {
        (concordant - discordant) as f64 / total as f64
    }
}

fn candidate_completeness() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let fx = build_fixture(&FixtureSpec::default()).unwrap();
    let cfg = fixture_config(dir.path(), &fx, ReprKind::Jaccard, "art");
    let out = cmd_run(cfg).unwrap();
    let model: PipelineModel = serde_json::from_str(&fs::read_to_string(out.artifacts.join(MODEL_FILE)).unwrap()).unwrap();
    let scorer = TypeScorer::new(&model.featurizer, &model.clusters, Some(&model.matcher), None, &model.ranker);
    let b = model.clusters.k;
    let mut failures = Vec::new();
    let mut min_tau: f64 = 1.0;
    for question in fx.test.questions() {
        let pred = predict_topk(question, &scorer, &model.fusion, CategorySource::Fixed(CoarseCategory::Resource), b, 10).unwrap();
        let got: Vec<String> = pred.ranked_types.iter().map(|s| s.type_id.clone()).collect();
        let want = top10_exhaustive(&model, question);
        let tau = kendall_tau(&got, &want);
        min_tau = min_tau.min(tau);
        check(got == want && tau == 1.0, &format!("{}: {got:?} vs {want:?}", question.id), &mut failures);
        check(
            pred.ranked_types.windows(2).all(|w| w[0].score >= w[1].score),
            "scores non-increasing",
            &mut failures,
        );
    }
    outcome(failures, format!("b = k = {b}, {} questions, min Kendall tau {min_tau}", fx.test.len()))
}

fn manifest_gold(fx: &Fixture) -> QuestionDataset {
    let subs = parse_predictions(&xtypes_core::ranker::render_predictions(&fx.manifest)).unwrap();
    QuestionDataset::new(
        subs.into_iter()
            .map(|s| Question {
                text: String::new(),
                id: s.id,
                category: s.category,
                gold_types: s.types,
            })
            .collect(),
    )
    .unwrap()
}

fn fixture_quality() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = FixtureSpec::default();
    let fx = build_fixture(&spec).unwrap();
    let gold = manifest_gold(&fx);
    let mut failures = Vec::new();
    let mut details = Vec::new();

    // the manifest scores 1.0 against itself
    let manifest_subs: Vec<Submission> = fx.manifest.iter().map(Into::into).collect();
    for mode in [EvalMode::TypeOnly, EvalMode::EndToEnd] {
        let r = evaluate_run(&fx.type_system, &manifest_subs, &gold, mode, Metric::Ndcg).unwrap();
        check(r.means.values().all(|v| *v == 1.0), "manifest self-consistency", &mut failures);
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    for repr in [ReprKind::Jaccard, ReprKind::QuestionTfidf] {
        let cfg = fixture_config(dir.path(), &fx, repr, &format!("art-{repr}"));
        let start = Instant::now();
        let out = pool.install(|| cmd_run(cfg)).unwrap();
        let elapsed = start.elapsed();
        let read = |name: &str| parse_predictions(&fs::read_to_string(out.artifacts.join(name)).unwrap()).unwrap();
        let typed = evaluate_run(&fx.type_system, &read("predictions_type_only.json"), &gold, EvalMode::TypeOnly, Metric::Ndcg).unwrap();
        let e2e = evaluate_run(&fx.type_system, &read("predictions.json"), &gold, EvalMode::EndToEnd, Metric::Ndcg).unwrap();
        let t3 = typed.means["ndcg@3"];
        let e3 = e2e.means["ndcg@3"];
        let acc = e2e.category_accuracy;
        check(t3 >= 0.95, &format!("{repr} type-only NDCG@3 {t3}"), &mut failures);
        check(e3 >= 0.95, &format!("{repr} end-to-end NDCG@3 {e3}"), &mut failures);
        check(acc >= 0.95, &format!("{repr} category accuracy {acc}"), &mut failures);
        check(elapsed < Duration::from_secs(60), &format!("{repr} took {elapsed:?}"), &mut failures);
        details.push(format!("{repr}: type-only {t3:.4}, end-to-end {e3:.4}, category {acc:.4}, {:.2}s", elapsed.as_secs_f64()));
    }
    outcome(failures, details.join("; "))
}

fn purity(cm: &xtypes_core::clustering::ClusterModel, pairs: &[(String, String)]) -> f64 {
    let together = pairs.iter().filter(|(a, b)| cm.cluster_of(a) == cm.cluster_of(b)).count();
    together as f64 / pairs.len() as f64
}

fn ordering_sanity() -> Outcome {
    let spec = FixtureSpec {
        sibling_overlap: 0.8,
        ..FixtureSpec::default()
    };
    let fx = build_fixture(&spec).unwrap();
    let vocab: Vec<String> = fx.train.type_vocabulary().iter().cloned().collect();
    let jac = normalize_repr(&build_jaccard_repr(&vocab, &fx.index));
    let tfidf = normalize_repr(&build_question_tfidf_repr(&fx.train).unwrap().0);
    let pairs = fx.sibling_pairs();
    let mut failures = Vec::new();
    let mut details = Vec::new();
    for k in [6, 9, 12] {
        let pj = purity(&kmeans_fit(&jac, k, 0, KMeansParams::default()).unwrap(), &pairs);
        let pt = purity(&kmeans_fit(&tfidf, k, 0, KMeansParams::default()).unwrap(), &pairs);
        check(pj >= pt, &format!("k={k}: jaccard {pj} < question_tfidf {pt}"), &mut failures);
        details.push(format!("k={k} jaccard {pj:.3} >= question_tfidf {pt:.3}"));
    }
    outcome(failures, details.join(", "))
}

fn hash_dir(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_file() {
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            out.insert(name, xtypes_core::pipeline::sha256_hex(&fs::read(&p).unwrap()));
        }
    }
    out
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let fx = build_fixture(&FixtureSpec::default()).unwrap();
    let mut failures = Vec::new();
    let a = cmd_run(fixture_config(dir.path(), &fx, ReprKind::QuestionTfidf, "run-a")).unwrap();
    let b = cmd_run(fixture_config(dir.path(), &fx, ReprKind::QuestionTfidf, "run-b")).unwrap();
    let ha = hash_dir(&a.artifacts);
    let hb = hash_dir(&b.artifacts);
    check(ha.len() >= 11, &format!("only {} artifacts", ha.len()), &mut failures);
    check(ha == hb, "artifact hashes differ", &mut failures);
    check(a.report == b.report, "reports differ", &mut failures);
    outcome(failures, format!("{} artifacts hash-identical across two runs", ha.len()))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 8] = [
        ("jaccard oracle equivalence", Duration::from_secs(5), jaccard_oracle),
        ("hierarchy distance metric properties", Duration::from_secs(2), distance_properties),
        ("NDCG/MRR golden tests and swap monotonicity", Duration::from_secs(5), metric_golden),
        ("k-means monotone, blobs, duplicates, determinism", Duration::from_secs(10), kmeans_checks),
        ("candidate generation completeness", Duration::from_secs(5), candidate_completeness),
        ("end-to-end fixture quality", Duration::from_secs(120), fixture_quality),
        ("jaccard vs question_tfidf sibling purity", Duration::from_secs(30), ordering_sanity),
        ("reproducible artifacts", Duration::from_secs(60), reproducibility),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let timing = format!("{:.2}s of {}s", elapsed.as_secs_f64(), budget.as_secs());
        println!(
            "{} {name}: {} ({timing}{})",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
