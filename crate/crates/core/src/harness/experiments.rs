//! Budget sweeps, the staged incremental-update experiment, and ablations.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::curve::{
    auc_trapezoid, budget_grid, check_increasing, AucReport, Curve, CurvePoint, DEFAULT_GRID_POINTS,
};
use super::dataset::Dataset;
use super::routers::{
    append_to_store, build_store, EagleModel, EagleRouter, KnnRouter, OracleRouter, RandomRouter,
    Router,
};
use crate::baselines::{oracle_select, KnnBaseline, KnnBaselineConfig, QualityRecord};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::ModelId;
use crate::rating::{compute_global, extend_in_place, MatchOutcome};
use crate::router::{splitmix64, RouterConfig};
use crate::store::FeedbackRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterKind {
    Eagle,
    Knn,
    Random,
    Oracle,
}

impl RouterKind {
    pub fn name(self) -> &'static str {
        match self {
            RouterKind::Eagle => "eagle",
            RouterKind::Knn => "knn",
            RouterKind::Random => "random",
            RouterKind::Oracle => "oracle",
        }
    }
}

impl FromStr for RouterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "eagle" => Ok(RouterKind::Eagle),
            "knn" => Ok(RouterKind::Knn),
            "random" => Ok(RouterKind::Random),
            "oracle" => Ok(RouterKind::Oracle),
            other => Err(Error::invalid(format!("unknown router {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub eagle: RouterConfig,
    pub knn: KnnBaselineConfig,
    pub pairs_per_query: usize,
    pub draw_margin: f64,
    pub seed: u64,
    pub grid_points: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            eagle: RouterConfig::default(),
            knn: KnnBaselineConfig::default(),
            pairs_per_query: 1,
            draw_margin: 0.0,
            seed: 0,
            grid_points: DEFAULT_GRID_POINTS,
            exec: Exec::default(),
        }
    }
}

/// Outcome of comparing two true qualities with a draw band of `margin`.
pub fn outcome_for(q_a: f64, q_b: f64, margin: f64) -> MatchOutcome {
    if q_a - q_b > margin {
        MatchOutcome::WinA
    } else if q_b - q_a > margin {
        MatchOutcome::WinB
    } else {
        MatchOutcome::Draw
    }
}

/// Simulated pairwise feedback for the training records at `indices`.
///
/// Every query yields `pairs_per_query` comparisons between two distinct
/// random models. Draws depend only on `(seed, record index)`, and ids and
/// timestamps on the record, so deriving a prefix and then the remainder
/// gives the same records as deriving everything at once.
pub fn derive_pairwise(
    dataset: &Dataset,
    indices: &[usize],
    pairs_per_query: usize,
    draw_margin: f64,
    seed: u64,
) -> Result<Vec<FeedbackRecord>> {
    let models: Vec<&ModelId> = dataset.registry.iter().map(|(id, _)| id).collect();
    if models.len() < 2 {
        return Err(Error::invalid("pairwise feedback needs at least 2 models"));
    }
    if pairs_per_query == 0 {
        return Err(Error::config("pairs_per_query must be at least 1"));
    }
    if !(draw_margin.is_finite() && draw_margin >= 0.0) {
        return Err(Error::config("draw_margin must be non-negative"));
    }
    let train: BTreeSet<usize> = dataset.split.train.iter().copied().collect();
    let ppq = pairs_per_query as u64;
    let mut out = Vec::with_capacity(indices.len() * pairs_per_query);
    for &idx in indices {
        if !train.contains(&idx) {
            return Err(Error::invalid(format!(
                "record {idx} is not in the training split"
            )));
        }
        let rec = &dataset.records[idx];
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(idx as u64)));
        for j in 0..ppq {
            let a = rng.random_range(0..models.len());
            let mut b = rng.random_range(0..models.len() - 1);
            if b >= a {
                b += 1;
            }
            let (ma, mb) = (models[a], models[b]);
            out.push(FeedbackRecord {
                record_id: idx as u64 * ppq + j + 1,
                ts_ms: rec.ts_ms * ppq + j,
                model_a: ma.clone(),
                model_b: mb.clone(),
                outcome: outcome_for(rec.qualities[ma], rec.qualities[mb], draw_margin),
                embedding: rec.embedding.clone(),
                query_text: None,
            });
        }
    }
    Ok(out)
}

/// Mean true quality of each router's picks over the test split, at every
/// budget. Queries where nothing is affordable score 0.
pub fn sweep_budgets(
    router: &dyn Router,
    dataset: &Dataset,
    budgets: &[f64],
    exec: Exec,
) -> Result<Curve> {
    if dataset.split.test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    check_increasing(budgets.iter().copied())?;
    let per_query = exec.map(&dataset.split.test, |&idx| -> Result<Vec<f64>> {
        let rec = &dataset.records[idx];
        let picks = router.choose(dataset, idx, budgets)?;
        picks
            .into_iter()
            .zip(budgets)
            .map(|(pick, &b)| match pick {
                None => Ok(0.0),
                Some(m) => {
                    let cost = dataset
                        .registry
                        .cost(m.as_str())
                        .ok_or_else(|| Error::UnknownModel(m.clone()))?;
                    if cost > b {
                        return Err(Error::InvariantViolated(format!(
                            "{} picked {m} costing {cost} over budget {b}",
                            router.name()
                        )));
                    }
                    rec.quality(m.as_str()).ok_or(Error::UnknownModel(m))
                }
            })
            .collect()
    });
    let mut sums = vec![0.0; budgets.len()];
    for row in per_query {
        for (s, q) in sums.iter_mut().zip(row?) {
            *s += q;
        }
    }
    let n = dataset.split.test.len() as f64;
    Curve::new(
        budgets
            .iter()
            .zip(sums)
            .map(|(&budget, s)| CurvePoint {
                budget,
                mean_quality: s / n,
            })
            .collect(),
    )
}

/// Fraction of test queries on which `router` picks the same model as the
/// oracle at `budget`.
pub fn top1_accuracy(
    router: &dyn Router,
    dataset: &Dataset,
    budget: f64,
    exec: Exec,
) -> Result<f64> {
    if dataset.split.test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    let hits = exec.map(&dataset.split.test, |&idx| -> Result<bool> {
        let pick = router.choose(dataset, idx, &[budget])?.pop().flatten();
        let best = oracle_select(&dataset.records[idx], budget, &dataset.registry).ok();
        Ok(pick.is_some() && pick == best)
    });
    let mut n = 0usize;
    for h in hits {
        n += usize::from(h?);
    }
    Ok(n as f64 / dataset.split.test.len() as f64)
}

fn train_quality_records(dataset: &Dataset) -> Vec<QualityRecord> {
    dataset.train_records().cloned().collect()
}

/// Builds the named routers on the full training split.
pub fn build_routers(
    dataset: &Dataset,
    kinds: &[RouterKind],
    cfg: &HarnessConfig,
) -> Result<Vec<Box<dyn Router>>> {
    let mut out: Vec<Box<dyn Router>> = Vec::new();
    for kind in kinds {
        out.push(match kind {
            RouterKind::Eagle => {
                let feedback = derive_pairwise(
                    dataset,
                    &dataset.split.train,
                    cfg.pairs_per_query,
                    cfg.draw_margin,
                    cfg.seed,
                )?;
                let model = EagleModel::build(&feedback, dataset.dim(), &cfg.eagle.elo)?;
                Box::new(EagleRouter::new("eagle", Arc::new(model), cfg.eagle)?)
            }
            RouterKind::Knn => Box::new(KnnRouter::new(
                "knn",
                KnnBaseline::fit(&train_quality_records(dataset), &cfg.knn)?,
            )),
            RouterKind::Random => Box::new(RandomRouter::new(cfg.seed)),
            RouterKind::Oracle => Box::new(OracleRouter),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterResult {
    pub router: String,
    pub curve: Curve,
    pub auc: AucReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub budgets: Vec<f64>,
    pub results: Vec<RouterResult>,
}

impl BenchReport {
    pub fn auc(&self, router: &str) -> Option<f64> {
        self.results
            .iter()
            .find(|r| r.router == router)
            .map(|r| r.auc.auc)
    }

    /// `budget,router,mean_quality` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("budget,router,mean_quality\n");
        for r in &self.results {
            for p in r.curve.points() {
                out.push_str(&format!("{},{},{}\n", p.budget, r.router, p.mean_quality));
            }
        }
        out
    }
}

/// Sweeps every router over the dataset's budget grid and checks that no
/// router beats the oracle.
pub fn bench(
    dataset: &Dataset,
    routers: &[&dyn Router],
    cfg: &HarnessConfig,
) -> Result<BenchReport> {
    let budgets = budget_grid(&dataset.registry, cfg.grid_points)?;
    bench_at(dataset, routers, budgets, cfg.exec)
}

/// [`bench`] over caller-chosen budgets.
pub fn bench_at(
    dataset: &Dataset,
    routers: &[&dyn Router],
    budgets: Vec<f64>,
    exec: Exec,
) -> Result<BenchReport> {
    check_increasing(budgets.iter().copied())?;
    let mut results = Vec::new();
    for router in routers {
        let curve = sweep_budgets(*router, dataset, &budgets, exec)?;
        let auc = auc_trapezoid(&curve)?;
        results.push(RouterResult {
            router: router.name().to_owned(),
            curve,
            auc,
        });
    }
    if let Some(oracle) = results.iter().find(|r| r.router == "oracle") {
        for r in &results {
            if r.auc.auc > oracle.auc.auc + 1e-12 {
                return Err(Error::InvariantViolated(format!(
                    "router {} AUC {} exceeds oracle AUC {}",
                    r.router, r.auc.auc, oracle.auc.auc
                )));
            }
        }
    }
    Ok(BenchReport { budgets, results })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementalConfig {
    pub harness: HarnessConfig,
    /// Each timed section runs this many times; the median is reported.
    pub timing_repeats: usize,
    /// Skip AUC evaluation and only time the updates.
    pub timing_only: bool,
}

impl Default for IncrementalConfig {
    fn default() -> Self {
        IncrementalConfig {
            harness: HarnessConfig::default(),
            timing_repeats: 3,
            timing_only: false,
        }
    }
}

pub const DEFAULT_STAGES: [f64; 3] = [0.70, 0.85, 1.00];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub router: String,
    /// Median wall time of the model update for this stage, summed over
    /// datasets. First stage: initial build; later stages: the ELO router
    /// applies only the new feedback, baselines refit from scratch.
    pub update_ms: f64,
    /// Time to append the stage's new records to the feedback store (ELO
    /// router only), reported separately from the model update.
    pub store_append_ms: Option<f64>,
    /// AUC summed over datasets.
    pub summed_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub fraction: f64,
    pub train_queries: usize,
    pub feedback_records: usize,
    pub rows: Vec<StageRow>,
    /// Whether the incrementally maintained global table equals a full
    /// replay of the stage prefix on every dataset.
    pub eagle_matches_full_replay: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalReport {
    pub stages: Vec<StageReport>,
}

impl IncrementalReport {
    pub fn row(&self, stage: usize, router: &str) -> Option<&StageRow> {
        self.stages
            .get(stage)?
            .rows
            .iter()
            .find(|r| r.router == router)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,router,update_ms,store_append_ms,summed_auc\n");
        for s in &self.stages {
            for r in &s.rows {
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.fraction,
                    r.router,
                    r.update_ms,
                    opt(r.store_append_ms),
                    opt(r.summed_auc)
                ));
            }
        }
        out
    }
}

fn timed<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, Duration)> {
    let mut times = Vec::with_capacity(repeats.max(1));
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let v = f()?;
        times.push(start.elapsed());
        last = Some(v);
    }
    times.sort();
    Ok((last.expect("at least one run"), times[times.len() / 2]))
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn validate_stages(stages: &[f64]) -> Result<()> {
    if stages.is_empty() {
        return Err(Error::config("need at least one stage"));
    }
    if stages.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
        return Err(Error::config("stage fractions must lie in (0, 1]"));
    }
    check_increasing(stages.iter().copied())
        .map_err(|_| Error::config("stage fractions must be strictly increasing"))
}

/// Trains on growing prefixes of each dataset's training split (in
/// timestamp order) and reports update time and test AUC per stage.
///
/// Timed sections run on the calling thread only; AUC evaluation uses
/// `cfg.harness.exec`.
pub fn incremental_experiment(
    datasets: &[Dataset],
    routers: &[RouterKind],
    stages: &[f64],
    cfg: &IncrementalConfig,
) -> Result<IncrementalReport> {
    validate_stages(stages)?;
    let h = &cfg.harness;
    let mut reports: Vec<StageReport> = stages
        .iter()
        .map(|&fraction| StageReport {
            fraction,
            train_queries: 0,
            feedback_records: 0,
            rows: routers
                .iter()
                .map(|k| StageRow {
                    router: k.name().to_owned(),
                    update_ms: 0.0,
                    store_append_ms: (*k == RouterKind::Eagle).then_some(0.0),
                    summed_auc: (!cfg.timing_only).then_some(0.0),
                })
                .collect(),
            eagle_matches_full_replay: routers.contains(&RouterKind::Eagle).then_some(true),
        })
        .collect();

    for ds in datasets {
        let train = &ds.split.train;
        let ppq = h.pairs_per_query;
        let feedback = derive_pairwise(ds, train, ppq, h.draw_margin, h.seed)?;
        let train_records = train_quality_records(ds);
        let budgets = if cfg.timing_only {
            Vec::new()
        } else {
            budget_grid(&ds.registry, h.grid_points)?
        };
        let mut eagle: Option<EagleModel> = None;
        let mut prev_end = 0usize;

        for (s, &fraction) in stages.iter().enumerate() {
            let end = ((train.len() as f64) * fraction).round() as usize;
            let end = end.clamp(prev_end, train.len());
            let (fb_start, fb_end) = (prev_end * ppq, end * ppq);
            let report = &mut reports[s];
            report.train_queries += end;
            report.feedback_records += fb_end;

            for (ri, kind) in routers.iter().enumerate() {
                let (update, append, router): (
                    Duration,
                    Option<Duration>,
                    Option<Box<dyn Router>>,
                ) = match kind {
                    RouterKind::Eagle => {
                        let elo = &h.eagle.elo;
                        let (update, append) = match eagle.as_mut() {
                            None => {
                                let (global, t) = timed(cfg.timing_repeats, || {
                                    compute_global(&feedback[..fb_end], elo)
                                })?;
                                let start = Instant::now();
                                let store = build_store(&feedback[..fb_end], ds.dim())?;
                                let append = start.elapsed();
                                eagle = Some(EagleModel { global, store });
                                (t, append)
                            }
                            Some(model) => {
                                let delta = &feedback[fb_start..fb_end];
                                let base = model.global.clone();
                                let (table, t) = timed(cfg.timing_repeats, || {
                                    let mut table = base.clone();
                                    extend_in_place(&mut table, delta, elo)?;
                                    Ok(table)
                                })?;
                                model.global = table;
                                let start = Instant::now();
                                append_to_store(&mut model.store, delta)?;
                                (t, start.elapsed())
                            }
                        };
                        let model = eagle.as_ref().expect("built above");
                        let replay = compute_global(&feedback[..fb_end], elo)?;
                        if replay != model.global {
                            report.eagle_matches_full_replay = Some(false);
                        }
                        let router = if cfg.timing_only {
                            None
                        } else {
                            let snapshot = EagleModel {
                                global: model.global.clone(),
                                store: model.store.to_in_memory().with_exec(Exec::Sequential),
                            };
                            Some(
                                Box::new(EagleRouter::new("eagle", Arc::new(snapshot), h.eagle)?)
                                    as Box<dyn Router>,
                            )
                        };
                        (update, Some(append), router)
                    }
                    RouterKind::Knn => {
                        let (fitted, t) = timed(cfg.timing_repeats, || {
                            KnnBaseline::fit(&train_records[..end], &h.knn)
                        })?;
                        (
                            t,
                            None,
                            Some(Box::new(KnnRouter::new("knn", fitted)) as Box<dyn Router>),
                        )
                    }
                    RouterKind::Random => (
                        Duration::ZERO,
                        None,
                        Some(Box::new(RandomRouter::new(h.seed)) as Box<dyn Router>),
                    ),
                    RouterKind::Oracle => (
                        Duration::ZERO,
                        None,
                        Some(Box::new(OracleRouter) as Box<dyn Router>),
                    ),
                };
                let row = &mut report.rows[ri];
                row.update_ms += ms(update);
                if let (Some(total), Some(a)) = (row.store_append_ms.as_mut(), append) {
                    *total += ms(a);
                }
                if let (Some(total), Some(router)) = (row.summed_auc.as_mut(), router) {
                    let curve = sweep_budgets(router.as_ref(), ds, &budgets, h.exec)?;
                    *total += auc_trapezoid(&curve)?.auc;
                }
            }
            prev_end = end;
        }
    }
    Ok(IncrementalReport { stages: reports })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub p: f64,
    pub n: usize,
    pub auc: f64,
    pub normalized_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// AUC for each fusion weight, at the configured N.
    pub p_sweep: Vec<AblationPoint>,
    /// AUC for each neighbour count, at P = 0.5.
    pub n_sweep: Vec<AblationPoint>,
}

impl AblationReport {
    pub fn auc_at_p(&self, p: f64) -> Option<f64> {
        self.p_sweep.iter().find(|a| a.p == p).map(|a| a.auc)
    }

    pub fn auc_at_n(&self, n: usize) -> Option<f64> {
        self.n_sweep.iter().find(|a| a.n == n).map(|a| a.auc)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sweep,p,n,auc,normalized_auc\n");
        for (name, pts) in [("p", &self.p_sweep), ("n", &self.n_sweep)] {
            for a in pts {
                out.push_str(&format!(
                    "{name},{},{},{},{}\n",
                    a.p, a.n, a.auc, a.normalized_auc
                ));
            }
        }
        out
    }
}

/// Global-only (P = 1), local-only (P = 0), combined (P = 0.5) and any other
/// requested weights, plus a neighbour-count sweep at P = 0.5.
pub fn ablation(
    dataset: &Dataset,
    p_values: &[f64],
    n_values: &[usize],
    cfg: &HarnessConfig,
) -> Result<AblationReport> {
    if p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::config("p values must lie in [0, 1]"));
    }
    if n_values.contains(&0) {
        return Err(Error::config("n values must be positive"));
    }
    let mut ps: Vec<f64> = p_values.to_vec();
    for p in [0.0, 0.5, 1.0] {
        if !ps.contains(&p) {
            ps.push(p);
        }
    }
    ps.sort_by(f64::total_cmp);

    let feedback = derive_pairwise(
        dataset,
        &dataset.split.train,
        cfg.pairs_per_query,
        cfg.draw_margin,
        cfg.seed,
    )?;
    let model = Arc::new(EagleModel::build(&feedback, dataset.dim(), &cfg.eagle.elo)?);
    let budgets = budget_grid(&dataset.registry, cfg.grid_points)?;
    let run = |p: f64, n: usize| -> Result<AblationPoint> {
        let rc = RouterConfig {
            p_global: p,
            n_neighbors: n,
            ..cfg.eagle
        };
        let router = EagleRouter::new(format!("eagle-p{p}-n{n}"), Arc::clone(&model), rc)?;
        let auc = auc_trapezoid(&sweep_budgets(&router, dataset, &budgets, cfg.exec)?)?;
        Ok(AblationPoint {
            p,
            n,
            auc: auc.auc,
            normalized_auc: auc.normalized,
        })
    };
    let p_sweep = ps
        .iter()
        .map(|&p| run(p, cfg.eagle.n_neighbors))
        .collect::<Result<_>>()?;
    let n_sweep = n_values
        .iter()
        .map(|&n| run(0.5, n))
        .collect::<Result<_>>()?;
    Ok(AblationReport { p_sweep, n_sweep })
}

/// Per-model mean of true quality over the test split.
pub fn mean_test_quality(dataset: &Dataset) -> BTreeMap<ModelId, f64> {
    let n = dataset.split.test.len() as f64;
    let mut sums: BTreeMap<ModelId, f64> = BTreeMap::new();
    for r in dataset.test_records() {
        for (m, q) in &r.qualities {
            *sums.entry(m.clone()).or_insert(0.0) += q;
        }
    }
    sums.into_iter().map(|(m, s)| (m, s / n)).collect()
}
