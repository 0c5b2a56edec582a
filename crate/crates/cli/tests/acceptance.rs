//! End-to-end acceptance checks. One line per criterion is printed; the
//! test fails if any criterion fails.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use eagle_core::harness::{
    ablation, auc_trapezoid, derive_pairwise, gen_synthetic, incremental_experiment, top1_accuracy,
    Curve, EagleModel, EagleRouter, HarnessConfig, IncrementalConfig, RouterKind, SyntheticConfig,
    DEFAULT_STAGES,
};
use eagle_core::{
    compute_global, expected_score, incremental_update, local_scores, route, select, update_rating,
    EloConfig, Embedding, Exec, FeedbackRecord, FeedbackStore, MatchOutcome, ModelId,
    ModelRegistry, RatingTable, RouterConfig, RoutingRequest,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    check((got - want).abs() <= tol, || {
        format!("{what}: got {got}, want {want}")
    })
}

fn random_embedding(rng: &mut ChaCha8Rng, dim: usize, coarse: bool) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| {
                if coarse {
                    f64::from(rng.random_range(-1i32..=1))
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        if let Ok(e) = Embedding::new(v) {
            return e;
        }
    }
}

fn random_log(
    rng: &mut ChaCha8Rng,
    len: usize,
    models: usize,
    dim: usize,
    coarse: bool,
) -> Vec<FeedbackRecord> {
    let mut ts = 0u64;
    (0..len)
        .map(|i| {
            ts += rng.random_range(0..3);
            let a = rng.random_range(0..models);
            let b = (a + rng.random_range(1..models)) % models;
            let outcome = [MatchOutcome::WinA, MatchOutcome::WinB, MatchOutcome::Draw]
                [rng.random_range(0..3)];
            FeedbackRecord {
                record_id: i as u64 + 1,
                ts_ms: ts,
                model_a: ModelId::new(format!("m{a}")),
                model_b: ModelId::new(format!("m{b}")),
                outcome,
                embedding: random_embedding(rng, dim, coarse),
                query_text: None,
            }
        })
        .collect()
}

fn elo_unit_suite() -> Outcome {
    let e = |a, b| expected_score(a, b).unwrap();
    close(e(1000.0, 1000.0), 0.5, 1e-9, "E(1000,1000)")?;
    close(e(1000.0, 1400.0), 1.0 / 11.0, 1e-9, "E(1000,1400)")?;
    close(e(1400.0, 1000.0), 10.0 / 11.0, 1e-9, "E(1400,1000)")?;
    let u = |r, s, x| update_rating(r, 32.0, s, x).unwrap();
    close(u(1500.0, 1.0, 0.5), 1516.0, 1e-9, "update win")?;
    close(u(1500.0, 0.5, 0.5), 1500.0, 1e-9, "update draw")?;
    close(
        u(1200.0, 0.0, 0.0909091),
        1200.0 - 32.0 * 0.0909091,
        1e-9,
        "update loss",
    )?;
    check(expected_score(f64::NAN, 0.0).is_err(), || {
        "NaN rating accepted".into()
    })?;
    check(update_rating(0.0, 32.0, 0.3, 0.5).is_err(), || {
        "score 0.3 accepted".into()
    })?;

    let cfg = EloConfig::default();
    let t = RatingTable::new()
        .with_match(&"a".into(), &"b".into(), MatchOutcome::WinA, &cfg)
        .unwrap();
    check(
        t.get("a") == Some(1016.0) && t.get("b") == Some(984.0),
        || format!("{t:?}"),
    )?;
    let t = RatingTable::from_ratings([("a", 1400.0), ("b", 1000.0)])
        .unwrap()
        .with_match(&"a".into(), &"b".into(), MatchOutcome::WinA, &cfg)
        .unwrap();
    close(
        t.get("a").unwrap(),
        1400.0 + 32.0 / 11.0,
        1e-9,
        "a after favoured win",
    )?;
    close(
        t.get("b").unwrap(),
        1000.0 - 32.0 / 11.0,
        1e-9,
        "b after favoured win",
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases = 10_000;
    for _ in 0..cases {
        let a: f64 = rng.random_range(-3000.0..5000.0);
        let b: f64 = rng.random_range(-3000.0..5000.0);
        let k: f64 = rng.random_range(1.0..64.0);
        let outcome =
            [MatchOutcome::WinA, MatchOutcome::WinB, MatchOutcome::Draw][rng.random_range(0..3)];
        close(e(a, b) + e(b, a), 1.0, 1e-12, "complement")?;

        let elo = EloConfig { k_factor: k, ..cfg };
        let t = RatingTable::from_ratings([("a", a), ("b", b)]).unwrap();
        let next = t
            .with_match(&"a".into(), &"b".into(), outcome, &elo)
            .unwrap();
        let (da, db) = (next.get("a").unwrap() - a, next.get("b").unwrap() - b);
        close(da + db, 0.0, 1e-9, "zero-sum")?;
        check(da.abs() <= k + 1e-9 && db.abs() <= k + 1e-9, || {
            format!("step {da} exceeds K={k}")
        })?;

        // Integer ratings and shifts keep every difference exact.
        let (ia, ib, shift) = (
            f64::from(rng.random_range(-3000..5000)),
            f64::from(rng.random_range(-3000..5000)),
            f64::from(rng.random_range(-100_000..100_000)),
        );
        check(e(ia + shift, ib + shift) == e(ia, ib), || {
            format!("translation ({ia},{ib})+{shift}")
        })?;
        close(
            e(a + 123.456, b + 123.456),
            e(a, b),
            1e-12,
            "translation, real shift",
        )?;
    }
    Ok(format!("hand-derived values plus {cases} random cases"))
}

fn replay_equality() -> Outcome {
    let cfg = EloConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut splits = 0;
    for _ in 0..100 {
        let len = rng.random_range(1..=5_000);
        let models = rng.random_range(2..=10);
        let log = random_log(&mut rng, len, models, 2, false);
        let full = compute_global(&log, &cfg).map_err(|e| e.to_string())?;
        let mut cuts = vec![0, len];
        cuts.extend((0..5).map(|_| rng.random_range(0..=len)));
        for cut in cuts {
            let prefix = compute_global(&log[..cut], &cfg).map_err(|e| e.to_string())?;
            let inc = incremental_update(&prefix, &log[cut..], &cfg).map_err(|e| e.to_string())?;
            let same = inc.matches_seen() == full.matches_seen()
                && inc.ratings().len() == full.ratings().len()
                && inc
                    .ratings()
                    .iter()
                    .zip(full.ratings())
                    .all(|((ma, ra), (mb, rb))| ma == mb && ra.to_bits() == rb.to_bits());
            check(same, || format!("split at {cut} of {len} differs"))?;
            splits += 1;
        }
    }
    Ok(format!("100 logs, {splits} splits, bit-exact"))
}

/// Exhaustive ranking: similarity computed independently, full stable sort.
fn scan(records: &[FeedbackRecord], q: &Embedding, n: usize) -> Vec<(u64, f64)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let qv = q.as_slice();
    let mut all: Vec<(u64, f64)> = records
        .iter()
        .map(|r| {
            let v = r.embedding.as_slice();
            let dot: f64 = qv.iter().zip(v).map(|(a, b)| a * b).sum();
            (r.record_id, (dot / (norm(qv) * norm(v))).clamp(-1.0, 1.0))
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(n);
    all
}

fn knn_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut queries = 0;
    for s in 0..50usize {
        let len = 200 * (s + 1);
        let dim = 1 + (s * 13) % 64;
        let coarse = s % 2 == 0;
        let log = random_log(&mut rng, len, 4, dim, coarse);
        let mut store = FeedbackStore::new(dim).map_err(|e| e.to_string())?;
        for r in &log {
            store.insert(r.clone()).map_err(|e| e.to_string())?;
        }
        for _ in 0..8 {
            let q = random_embedding(&mut rng, dim, coarse);
            let n = if rng.random_bool(0.1) {
                len + 5
            } else {
                rng.random_range(1..=60)
            };
            let want = scan(&log, &q, n);
            for exec in [Exec::Sequential, Exec::Parallel] {
                let got: Vec<(u64, f64)> = store
                    .knn_with(&q, n, exec)
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .map(|nb| (nb.record_id, nb.similarity))
                    .collect();
                check(got == want, || {
                    format!("store {s} (len {len}, dim {dim}) n={n} differs")
                })?;
            }
            queries += 1;
        }
    }
    Ok(format!(
        "50 stores, {queries} queries, sequential and parallel"
    ))
}

fn planted_specialisation() -> Outcome {
    let ds = gen_synthetic(&SyntheticConfig::opposing_two_cluster(400, 32, 4))
        .map_err(|e| e.to_string())?;
    let cfg = HarnessConfig::default();
    check(
        cfg.eagle.p_global == 0.5 && cfg.eagle.n_neighbors == 20,
        || "defaults drifted".into(),
    )?;
    let feedback = derive_pairwise(&ds, &ds.split.train, 1, 0.0, 0).map_err(|e| e.to_string())?;
    check(feedback.len() >= 500, || {
        format!("only {} pairwise records", feedback.len())
    })?;
    let model =
        EagleModel::build(&feedback, ds.dim(), &cfg.eagle.elo).map_err(|e| e.to_string())?;
    let router =
        EagleRouter::new("eagle", Arc::new(model), cfg.eagle).map_err(|e| e.to_string())?;
    let ample = ds.registry.max_cost().unwrap();
    let acc = top1_accuracy(&router, &ds, ample, Exec::Parallel).map_err(|e| e.to_string())?;
    check(acc >= 0.90, || format!("top-1 accuracy {acc}"))?;

    let report = ablation(&ds, &[], &[20], &cfg).map_err(|e| e.to_string())?;
    let (c, g, l) = (
        report.auc_at_p(0.5).unwrap(),
        report.auc_at_p(1.0).unwrap(),
        report.auc_at_p(0.0).unwrap(),
    );
    check(c >= g.max(l) - 0.005, || {
        format!("combined {c} vs global {g}, local {l}")
    })?;
    Ok(format!(
        "{} records, top-1 {acc:.3}, AUC combined {c:.4} global {g:.4} local {l:.4}",
        feedback.len()
    ))
}

/// Integrates the piecewise-linear interpolant with 3-point Gauss-Legendre
/// quadrature per segment, evaluating it through a generic lookup.
fn quadrature_oracle(pts: &[(f64, f64)]) -> f64 {
    let f = |x: f64| -> f64 {
        let i = pts.partition_point(|p| p.0 <= x).clamp(1, pts.len() - 1);
        let ((x0, y0), (x1, y1)) = (pts[i - 1], pts[i]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    };
    let nodes = [
        (-(0.6f64).sqrt(), 5.0 / 9.0),
        (0.0, 8.0 / 9.0),
        ((0.6f64).sqrt(), 5.0 / 9.0),
    ];
    pts.windows(2)
        .map(|w| {
            let (a, b) = (w[0].0, w[1].0);
            let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
            half * nodes
                .iter()
                .map(|(t, wt)| wt * f(mid + half * t))
                .sum::<f64>()
        })
        .sum()
}

fn auc_correctness() -> Outcome {
    let auc = |pts: &[(f64, f64)]| auc_trapezoid(&Curve::from_pairs(pts).unwrap()).unwrap().auc;
    check(auc(&[(0.0, 0.5), (1.0, 0.5)]) == 0.5, || {
        "constant curve".into()
    })?;
    check(auc(&[(0.0, 0.0), (1.0, 1.0)]) == 0.5, || "triangle".into())?;
    check(auc(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]) == 1.0, || {
        "two trapezoids".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1_000 {
        let n = rng.random_range(2..60);
        let mut b = rng.random_range(0.0..1.0);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                b += rng.random_range(0.001..0.5);
                (b, rng.random_range(0.0..1.0))
            })
            .collect();
        let diff = (auc(&pts) - quadrature_oracle(&pts)).abs();
        worst = worst.max(diff);
        check(diff <= 1e-9, || format!("AUC off by {diff}"))?;
    }
    Ok(format!(
        "3 worked examples exact; 1000 curves, worst error {worst:.1e}"
    ))
}

fn incremental_efficiency() -> Outcome {
    // 4 clusters x 7143 queries, 70% train -> 20,000 training queries, one
    // pairwise record each.
    let ds =
        gen_synthetic(&SyntheticConfig::new(6, 4, 7_143, 256, 6)).map_err(|e| e.to_string())?;
    let cfg = IncrementalConfig {
        timing_repeats: 5,
        timing_only: true,
        ..IncrementalConfig::default()
    };
    let report = incremental_experiment(
        std::slice::from_ref(&ds),
        &[RouterKind::Eagle, RouterKind::Knn],
        &DEFAULT_STAGES,
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let last = report.stages.last().unwrap();
    check(last.feedback_records == 20_000, || {
        format!("{} records", last.feedback_records)
    })?;
    let mut parts = Vec::new();
    for stage in 1..report.stages.len() {
        let eagle = report.row(stage, "eagle").unwrap();
        let knn = report.row(stage, "knn").unwrap();
        let ratio = knn.update_ms / eagle.update_ms;
        let with_append = knn.update_ms / (eagle.update_ms + eagle.store_append_ms.unwrap_or(0.0));
        check(
            report.stages[stage].eagle_matches_full_replay == Some(true),
            || "replay mismatch".into(),
        )?;
        check(ratio >= 10.0, || {
            format!(
                "stage {}: eagle {:.3} ms, knn {:.3} ms, ratio {ratio:.1}",
                report.stages[stage].fraction, eagle.update_ms, knn.update_ms
            )
        })?;
        parts.push(format!(
            "{}: eagle {:.3} ms vs knn {:.3} ms ({ratio:.0}x; {with_append:.1}x counting store append)",
            report.stages[stage].fraction, eagle.update_ms, knn.update_ms
        ));
    }
    Ok(parts.join("; "))
}

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(data_dir: &Path) -> Server {
        let mut child = Command::new(env!("CARGO_BIN_EXE_eagle"))
            .args(["serve", "--port", "0", "--dim", "8", "--data-dir"])
            .arg(data_dir)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn eagle serve");
        let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
        let addr = loop {
            let line = lines.next().expect("server exited early").unwrap();
            if let Some(a) = line.strip_prefix("listening on ") {
                break a.to_owned();
            }
        };
        // Keep draining so the server never blocks on a full pipe.
        std::thread::spawn(move || for _ in lines {});
        Server {
            child,
            base: format!("http://{addr}"),
        }
    }

    fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

async fn call(req: reqwest::RequestBuilder) -> Result<(u16, Value), String> {
    let resp = req.send().await.map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    Ok((status, resp.json().await.unwrap_or(Value::Null)))
}

/// Runs `count` seeded random requests from `workers` concurrent clients;
/// returns (acknowledged feedback, rejected feedback, routes).
async fn traffic(
    base: &str,
    count: usize,
    workers: usize,
    seed: u64,
) -> Result<(usize, usize, usize), String> {
    let mut handles = Vec::new();
    for w in 0..workers {
        let base = base.to_owned();
        handles.push(tokio::spawn(async move {
            let http = reqwest::Client::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (w as u64 + 1));
            let models = ["m0", "m1", "m2", "m3"];
            let (mut acks, mut rejected, mut routes) = (0, 0, 0);
            for _ in 0..count / workers {
                let emb: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                if rng.random_bool(0.5) {
                    let a = rng.random_range(0..4);
                    let b = (a + rng.random_range(1..4)) % 4;
                    let outcome = ["win_a", "win_b", "draw"][rng.random_range(0..3)];
                    let mut body = json!({
                        "model_a": models[a], "model_b": models[b],
                        "outcome": outcome,
                        "embedding": emb,
                    });
                    let stale = rng.random_bool(0.05);
                    if stale {
                        body["ts_ms"] = json!(1);
                    }
                    let (status, resp) =
                        call(http.post(format!("{base}/v1/feedback")).json(&body)).await?;
                    match (status, stale) {
                        (200, false) => acks += 1,
                        (409, true) => rejected += 1,
                        _ => return Err(format!("feedback returned {status}: {resp}")),
                    }
                } else {
                    let body = json!({"embedding": emb, "budget": rng.random_range(0.3..2.0)});
                    let (status, resp) =
                        call(http.post(format!("{base}/v1/route")).json(&body)).await?;
                    if status != 200 {
                        return Err(format!("route returned {status}: {resp}"));
                    }
                    routes += 1;
                }
            }
            Ok((acks, rejected, routes))
        }));
    }
    let mut total = (0, 0, 0);
    for h in handles {
        let (a, r, q) = h.await.map_err(|e| e.to_string())??;
        total = (total.0 + a, total.1 + r, total.2 + q);
    }
    Ok(total)
}

fn service_invariant() -> Outcome {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let server = Server::start(dir.path());
    let (acks1, rej1, routes1, before_kill) = rt.block_on(async {
        let http = reqwest::Client::new();
        for (i, cost) in [0.25, 0.5, 1.0, 1.5].iter().enumerate() {
            let (status, _) = call(
                http.put(format!("{}/v1/models/m{i}", server.base))
                    .json(&json!({"cost_per_query": cost})),
            )
            .await?;
            check(status == 200, || format!("registering m{i}: {status}"))?;
        }
        let (a, r, q) = traffic(&server.base, 500, 4, 70).await?;
        let (_, ratings) = call(http.get(format!("{}/v1/ratings", server.base))).await?;
        Ok::<_, String>((a, r, q, ratings))
    })?;
    server.kill();

    let server = Server::start(dir.path());
    let (acks2, rej2, routes2) = rt.block_on(async {
        let http = reqwest::Client::new();
        let (_, after_restart) = call(http.get(format!("{}/v1/ratings", server.base))).await?;
        check(after_restart == before_kill, || {
            "ratings changed across kill and restart".into()
        })?;
        traffic(&server.base, 500, 4, 71).await
    })?;
    server.kill();

    let acks = acks1 + acks2;
    let lines = std::fs::read_to_string(dir.path().join("feedback.jsonl"))
        .map_err(|e| e.to_string())?
        .lines()
        .count();
    check(lines == acks, || {
        format!("{lines} log lines for {acks} acknowledgements")
    })?;
    let out = Command::new(env!("CARGO_BIN_EXE_eagle"))
        .args(["replay-verify", "--data-dir"])
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.code() == Some(0), || {
        format!(
            "replay-verify exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stdout)
        )
    })?;
    Ok(format!(
        "{} requests ({} routes, {acks} acked, {} stale rejected), killed and restarted at 500; {lines} log lines; replay-verify exit 0",
        acks + rej1 + rej2 + routes1 + routes2,
        routes1 + routes2,
        rej1 + rej2
    ))
}

fn boundary_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dim = 8;
    let log = random_log(&mut rng, 2_000, 6, dim, false);
    let cfg = RouterConfig::default();
    let global = compute_global(&log, &cfg.elo).map_err(|e| e.to_string())?;
    let mut store = FeedbackStore::new(dim).map_err(|e| e.to_string())?;
    for r in &log {
        store.insert(r.clone()).map_err(|e| e.to_string())?;
    }
    let registry = ModelRegistry::new((0..6).map(|i| (format!("m{i}"), 0.1 + 0.3 * i as f64)))
        .map_err(|e| e.to_string())?;
    let mut global_full = global.clone();
    for (id, _) in registry.available() {
        global_full.ensure_model(id, cfg.elo.initial_rating);
    }
    let global_scores: BTreeMap<ModelId, f64> =
        global_full.iter().map(|(m, r)| (m.clone(), r)).collect();

    let mut agree = 0;
    for i in 0..1_000 {
        let query = random_embedding(&mut rng, dim, false);
        let budget = rng.random_range(0.1..2.0);
        let local = local_scores(&query, &global_full, &store, &cfg).map_err(|e| e.to_string())?;
        let local_scores: BTreeMap<ModelId, f64> =
            local.iter().map(|(m, r)| (m.clone(), r)).collect();
        for (p, reference) in [(1.0, &global_scores), (0.0, &local_scores)] {
            let req = RoutingRequest {
                embedding: query.clone(),
                budget,
                request_id: format!("q{i}"),
            };
            let rc = RouterConfig { p_global: p, ..cfg };
            let got = route(&req, &global, &store, &registry, &rc)
                .map_err(|e| e.to_string())?
                .chosen;
            let want = select(reference, budget, &registry).map_err(|e| e.to_string())?;
            check(got == want, || {
                format!("request {i}, p={p}: {got} vs {want}")
            })?;
            agree += 1;
        }
    }
    Ok(format!("1000 requests, {agree} decisions identical"))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("1 ELO unit suite", Duration::from_secs(5), elo_unit_suite),
        (
            "2 replay equality",
            Duration::from_secs(30),
            replay_equality,
        ),
        (
            "3 kNN oracle equivalence",
            Duration::from_secs(60),
            knn_equivalence,
        ),
        (
            "4 planted specialisation",
            Duration::from_secs(120),
            planted_specialisation,
        ),
        ("5 AUC correctness", Duration::MAX, auc_correctness),
        (
            "6 incremental efficiency",
            Duration::MAX,
            incremental_efficiency,
        ),
        ("7 service invariant", Duration::MAX, service_invariant),
        ("8 boundary identities", Duration::MAX, boundary_identities),
    ];
    let mut failed = Vec::new();
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let result = run();
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > limit => {
                Err(format!("{detail}; took {took:.2?}, limit {limit:.0?}"))
            }
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS criterion {name} ({took:.2?}): {detail}"),
            Err(why) => {
                println!("FAIL criterion {name} ({took:.2?}): {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
