use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use eagle_core::harness::{
    ablation as run_ablation, bench_at, budget_grid, build_routers, gen_synthetic,
    incremental_experiment, validate_stages, CostPolicy, Dataset, ExternalRouter, HarnessConfig,
    IncrementalConfig, Router, SyntheticConfig, DATASET_FILE, REGISTRY_FILE,
};
use eagle_core::{EloConfig, Exec, KnnBaselineConfig, RouterConfig};
use eagle_service::{verify_data_dir, EmbeddingClientConfig, Service, ServiceConfig};
use serde::Serialize;

use crate::{
    AblationArgs, BenchArgs, GenSynthArgs, HarnessArgs, IncrementalArgs, ReplayVerifyArgs,
    RouterArgs, ServeArgs, UsageError,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn router_config(a: &RouterArgs) -> RouterConfig {
    RouterConfig {
        p_global: a.p,
        n_neighbors: a.n,
        elo: EloConfig {
            k_factor: a.k,
            ..EloConfig::default()
        },
        seed: a.seed,
        ..RouterConfig::default()
    }
}

fn harness_config(a: &HarnessArgs) -> HarnessConfig {
    HarnessConfig {
        eagle: router_config(&a.router),
        knn: KnnBaselineConfig {
            k: a.knn_k,
            seed: a.router.seed,
        },
        pairs_per_query: a.pairs_per_query,
        draw_margin: a.draw_margin,
        seed: a.router.seed,
        grid_points: a.grid_points,
        exec: if a.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        },
    }
}

fn load_dataset(dir: &Path, a: &HarnessArgs) -> Result<Dataset> {
    Dataset::load(
        dir.join(DATASET_FILE),
        dir.join(REGISTRY_FILE),
        a.train_fraction,
        a.split_seed,
    )
    .with_context(|| format!("loading dataset from {}", dir.display()))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_file(path, &body)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn serve(a: ServeArgs) -> Result<ExitCode> {
    let mut router = router_config(&a.router);
    router.exploration_rate = a.exploration_rate;
    let cfg = ServiceConfig {
        data_dir: a.data_dir.clone(),
        router,
        dim: a.dim,
        embed: a
            .embed_url
            .clone()
            .map(|endpoint_url| EmbeddingClientConfig {
                endpoint_url,
                timeout_ms: a.embed_timeout_ms,
                expected_dim: a.dim,
            }),
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let service = Arc::new(Service::open(cfg).context("opening data directory")?);
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("binding {}:{}", a.host, a.port))?;
        let addr = listener.local_addr()?;
        let c = service.config();
        println!(
            "config: P={} N={} K={} dim={} data_dir={} records={} embed_url={}",
            c.router.p_global,
            c.router.n_neighbors,
            c.router.elo.k_factor,
            c.dim,
            c.data_dir.display(),
            service.record_count(),
            a.embed_url.as_deref().unwrap_or("none"),
        );
        println!("listening on {addr}");
        std::io::stdout().flush()?;
        eagle_service::serve(listener, service, shutdown_signal()).await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(ExitCode::SUCCESS)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

pub fn gen_synth(a: GenSynthArgs) -> Result<ExitCode> {
    let cfg = if a.opposing {
        if a.models != 2 || a.clusters != 2 {
            return Err(usage("--opposing needs --models 2 --clusters 2"));
        }
        SyntheticConfig {
            noise_sigma: a.noise,
            ..SyntheticConfig::opposing_two_cluster(a.queries, a.dim, a.seed)
        }
    } else {
        SyntheticConfig {
            noise_sigma: a.noise,
            costs: CostPolicy::ByQuality { min: 0.1, max: 1.0 },
            ..SyntheticConfig::new(a.models, a.clusters, a.queries, a.dim, a.seed)
        }
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let ds = gen_synthetic(&cfg)?;
    ds.save(&a.out)?;
    write_json(&a.out.join("synth_config.json"), &cfg)?;
    println!(
        "wrote {} records, {} models, dim {} to {}",
        ds.records.len(),
        ds.registry.len(),
        ds.dim(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn bench(a: BenchArgs) -> Result<ExitCode> {
    let cfg = harness_config(&a.harness);
    let mut externals = Vec::new();
    for spec in &a.predictions {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--predictions expects NAME=PATH, got {spec:?}")))?;
        externals.push((name.to_owned(), path.to_owned()));
    }
    if a.budgets.windows(2).any(|w| w[1] <= w[0])
        || a.budgets.iter().any(|b| !b.is_finite() || *b < 0.0)
    {
        return Err(usage(
            "--budgets must be non-negative and strictly increasing",
        ));
    }

    let ds = load_dataset(&a.dataset, &a.harness)?;
    let mut routers = build_routers(&ds, &a.routers, &cfg)?;
    for (name, path) in externals {
        routers.push(Box::new(
            ExternalRouter::load(name, &path).with_context(|| format!("loading {path}"))?,
        ));
    }
    let budgets = if a.budgets.is_empty() {
        budget_grid(&ds.registry, cfg.grid_points)?
    } else {
        a.budgets.clone()
    };
    let refs: Vec<&dyn Router> = routers.iter().map(|r| r.as_ref()).collect();
    let report = bench_at(&ds, &refs, budgets, cfg.exec)?;

    create_out(&a.out)?;
    write_file(&a.out.join("bench.csv"), &report.to_csv())?;
    write_json(&a.out.join("bench.json"), &report)?;
    println!("router,auc,normalized_auc");
    for r in &report.results {
        println!("{},{},{}", r.router, r.auc.auc, r.auc.normalized);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn incremental(a: IncrementalArgs) -> Result<ExitCode> {
    validate_stages(&a.stages).map_err(|e| usage(e.to_string()))?;
    let cfg = IncrementalConfig {
        harness: harness_config(&a.harness),
        timing_repeats: a.repeats,
        timing_only: a.timing_only,
    };
    let datasets = a
        .dataset
        .iter()
        .map(|d| load_dataset(d, &a.harness))
        .collect::<Result<Vec<_>>>()?;
    let report = incremental_experiment(&datasets, &a.routers, &a.stages, &cfg)?;

    create_out(&a.out)?;
    let csv = report.to_csv();
    write_file(&a.out.join("incremental.csv"), &csv)?;
    write_json(&a.out.join("incremental.json"), &report)?;
    print!("{csv}");
    if report
        .stages
        .iter()
        .any(|s| s.eagle_matches_full_replay == Some(false))
    {
        anyhow::bail!("incrementally maintained ratings diverged from a full replay");
    }
    Ok(ExitCode::SUCCESS)
}

pub fn ablation(a: AblationArgs) -> Result<ExitCode> {
    let cfg = harness_config(&a.harness);
    let ds = load_dataset(&a.dataset, &a.harness)?;
    let report = run_ablation(&ds, &a.p_values, &a.n_values, &cfg)?;
    create_out(&a.out)?;
    let csv = report.to_csv();
    write_file(&a.out.join("ablation.csv"), &csv)?;
    write_json(&a.out.join("ablation.json"), &report)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

pub fn replay_verify(a: ReplayVerifyArgs) -> Result<ExitCode> {
    let report = verify_data_dir(&a.data_dir)?;
    if report.ok() {
        println!("ok: {} records replayed; ratings match", report.records);
        return Ok(ExitCode::SUCCESS);
    }
    if let Some(d) = &report.divergence {
        let show = |v: Option<f64>| {
            v.map(|x| format!("{x:?}"))
                .unwrap_or_else(|| "absent".into())
        };
        println!(
            "mismatch: model {} stored={} replayed={}",
            d.model,
            show(d.stored),
            show(d.replayed)
        );
    }
    if report.records != report.stored_matches {
        println!(
            "mismatch: log has {} records, ratings reflect {}",
            report.records, report.stored_matches
        );
    }
    Ok(ExitCode::from(1))
}
