use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fedfilm::io::{self, RunConfig};
use fedfilm::pca::pca;
use fedfilm::synth::{generate, SynthSpec};
use fedfilm::{
    apply_adapter, evaluate as score, identity_adapter, run_federated_fit, run_scenario,
    CellMetadata, DataSource, EmbeddingMatrix, MetricsReport,
};
use serde_json::json;

use crate::run_dir::RunDir;
use crate::{
    BaselinePcaArgs, DataArgs, EvalOverrides, EvaluateArgs, FitArgs, ScenarioArgs, SynthArgs,
    TrainOverrides, TransformArgs,
};

const CONFIG_FILE: &str = "config.toml";

/// Invalid invocation detected after parsing; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn base_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn apply_train(cfg: &mut RunConfig, o: &TrainOverrides) {
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = o.$f { cfg.$f = v; } )* };
    }
    set!(
        seed,
        mu,
        lambda,
        learning_rate,
        local_epochs,
        rounds,
        minibatch_size,
        train_fraction,
        aggregation_mode
    );
}

fn apply_eval(cfg: &mut RunConfig, o: &EvalOverrides) {
    if let Some(v) = o.subset {
        cfg.metric_subset = v;
    }
    if let Some(v) = o.knn_k {
        cfg.knn_k = v;
    }
    if let Some(v) = o.kmeans_restarts {
        cfg.kmeans_restarts = v;
    }
}

/// Flag paths win over config paths; both are recorded in the config echo.
fn resolve_inputs(cfg: &mut RunConfig, data: &DataArgs) -> Result<(PathBuf, PathBuf)> {
    if let Some(p) = &data.embeddings {
        cfg.embeddings = Some(p.clone());
    }
    if let Some(p) = &data.metadata {
        cfg.metadata = Some(p.clone());
    }
    let emb = cfg.embeddings.clone().ok_or_else(|| {
        usage("no embeddings given (use --embeddings or `embeddings` in the config)")
    })?;
    let meta = cfg
        .metadata
        .clone()
        .ok_or_else(|| usage("no metadata given (use --metadata or `metadata` in the config)"))?;
    Ok((emb, meta))
}

fn resolve_out(cfg: &mut RunConfig, out: Option<&PathBuf>) -> Result<PathBuf> {
    if let Some(p) = out {
        cfg.output_dir = Some(p.clone());
    }
    cfg.output_dir
        .clone()
        .ok_or_else(|| usage("no output directory given (use --out or `output_dir` in the config)"))
}

fn validated(cfg: &RunConfig) -> Result<()> {
    cfg.validate()
        .map_err(|e| usage(format!("invalid configuration: {e}")))
}

fn load(emb: &Path, meta: &Path) -> Result<(EmbeddingMatrix, CellMetadata)> {
    Ok(io::load_embeddings(emb, meta)?)
}

pub fn fit(a: FitArgs) -> Result<()> {
    let mut cfg = base_config(a.train.config.as_deref())?;
    apply_train(&mut cfg, &a.train);
    let (emb_path, meta_path) = resolve_inputs(&mut cfg, &a.data)?;
    let out = resolve_out(&mut cfg, a.out.as_ref())?;
    validated(&cfg)?;

    let (emb, meta) = load(&emb_path, &meta_path)?;
    let init = match &a.init {
        Some(p) => io::load_adapter(p)?,
        None => identity_adapter(meta.batch_names(), emb.dim())?,
    };
    let fit = run_federated_fit(&emb, &meta, &cfg.train_config(), init)?;

    let mut log = Vec::new();
    fit.log.write_jsonl(&mut log)?;
    let mut dir = RunDir::create(&out, "fit")?;
    dir.write("adapter.json", &io::adapter_to_string(&fit.adapter))?;
    dir.write("training_log.jsonl", std::str::from_utf8(&log)?)?;
    dir.write(CONFIG_FILE, &cfg.to_toml())?;
    dir.finish(
        CONFIG_FILE,
        json!({ "cells": emb.n_cells(), "batches": meta.batch_names(), "rounds": fit.log.rounds.len() }),
    )
}

pub fn transform(a: TransformArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    let (emb_path, meta_path) = resolve_inputs(&mut cfg, &a.data)?;
    cfg.output_dir = Some(a.out.clone());
    let (emb, meta) = load(&emb_path, &meta_path)?;
    let adapter = io::load_adapter(&a.adapter)?;
    let corrected = apply_adapter(&emb, &meta, &adapter)?;

    let mut dir = RunDir::create(&a.out, "transform")?;
    dir.write("corrected.csv", &io::format_embeddings(&corrected, "z"))?;
    dir.write(CONFIG_FILE, &cfg.to_toml())?;
    dir.finish(
        CONFIG_FILE,
        json!({ "adapter": a.adapter, "cells": corrected.n_cells() }),
    )
}

fn write_report(dir: &mut RunDir, stem: &str, report: &MetricsReport) -> Result<()> {
    dir.write(&format!("{stem}.json"), &report.to_json())?;
    dir.write(
        &format!("{stem}.csv"),
        &format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.to_csv_row()),
    )
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    if let (Some(bio), Some(batch)) = (a.bio, a.batch) {
        if a.data.embeddings.is_some() || a.data.metadata.is_some() {
            return Err(usage("--bio/--batch cannot be combined with input tables"));
        }
        let report = MetricsReport::from_aggregates(bio, batch);
        print!("{}", report.to_json());
        if let Some(out) = &a.out {
            let mut dir = RunDir::create(out, "evaluate")?;
            write_report(&mut dir, "report", &report)?;
            dir.finish("", json!({ "self_test": true }))?;
        }
        return Ok(());
    }
    let mut cfg = base_config(a.config.as_deref())?;
    apply_eval(&mut cfg, &a.eval);
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (emb_path, meta_path) = resolve_inputs(&mut cfg, &a.data)?;
    let out = resolve_out(&mut cfg, a.out.as_ref())?;
    validated(&cfg)?;

    let (emb, meta) = load(&emb_path, &meta_path)?;
    let report = score(&emb, &meta, &cfg.eval_config())?;
    let mut dir = RunDir::create(&out, "evaluate")?;
    write_report(&mut dir, "report", &report)?;
    dir.write(CONFIG_FILE, &cfg.to_toml())?;
    dir.finish(
        CONFIG_FILE,
        json!({ "cells": emb.n_cells(), "overall": report.overall }),
    )
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => io::load_synth_spec(p)?,
        None => SynthSpec::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { spec.$f = v; } )* };
    }
    set!(
        seed,
        n_batches,
        n_types,
        dim,
        cells_per_batch,
        noise_sigma,
        effect_shift_sigma
    );
    if let Some(v) = a.scale_min {
        spec.effect_scale_range.0 = v;
    }
    if let Some(v) = a.scale_max {
        spec.effect_scale_range.1 = v;
    }
    spec.validate()
        .map_err(|e| usage(format!("invalid specification: {e}")))?;

    let data = generate(&spec)?;
    let mut dir = RunDir::create(&a.out, "synth")?;
    dir.write(
        "embeddings.csv",
        &io::format_embeddings(&data.embedding, "z"),
    )?;
    dir.write("metadata.csv", &io::format_metadata(&data.metadata))?;
    dir.write("truth.json", &io::truth_to_json(&data.truth))?;
    dir.write("spec.toml", &io::synth_spec_to_toml(&spec))?;
    dir.finish("spec.toml", json!({ "cells": data.embedding.n_cells() }))
}

pub fn scenario(a: ScenarioArgs) -> Result<()> {
    let mut cfg = base_config(a.train.config.as_deref())?;
    apply_train(&mut cfg, &a.train);
    apply_eval(
        &mut cfg,
        &EvalOverrides {
            subset: None,
            knn_k: a.knn_k,
            kmeans_restarts: a.kmeans_restarts,
        },
    );
    let (emb_path, meta_path) = resolve_inputs(&mut cfg, &a.data)?;
    cfg.output_dir = Some(a.out.clone());
    validated(&cfg)?;
    let plan = io::load_plan(&a.plan)?;
    if a.features && plan.pca_components.is_none() {
        return Err(usage("--features needs `pca_components` in the plan"));
    }

    let (emb, meta) = load(&emb_path, &meta_path)?;
    let source = if a.features {
        DataSource::Features(&emb)
    } else {
        DataSource::Embedding(&emb)
    };
    let stages = run_scenario(
        &plan,
        source,
        &meta,
        &cfg.train_config(),
        &cfg.eval_config(),
    )?;

    let mut dir = RunDir::create(&a.out, "scenario")?;
    let mut summary = format!("stage,cells,batches,which,{}\n", MetricsReport::CSV_HEADER);
    for s in &stages {
        let stem = format!("stage_{}", s.stage);
        let mut log = Vec::new();
        s.log.write_jsonl(&mut log)?;
        dir.write(
            &format!("{stem}/adapter.json"),
            &io::adapter_to_string(&s.adapter),
        )?;
        dir.write(
            &format!("{stem}/training_log.jsonl"),
            std::str::from_utf8(&log)?,
        )?;
        dir.write(
            &format!("{stem}/baseline.csv"),
            &io::format_embeddings(&s.baseline, "z"),
        )?;
        dir.write(
            &format!("{stem}/corrected.csv"),
            &io::format_embeddings(&s.corrected, "z"),
        )?;
        write_report(
            &mut dir,
            &format!("{stem}/baseline_report"),
            &s.baseline_report,
        )?;
        write_report(
            &mut dir,
            &format!("{stem}/corrected_report"),
            &s.corrected_report,
        )?;
        for (which, r) in [
            ("baseline", &s.baseline_report),
            ("corrected", &s.corrected_report),
        ] {
            summary.push_str(&format!(
                "{},{},{},{which},{}\n",
                s.stage,
                s.metadata.n_cells(),
                s.batches.join(";"),
                r.to_csv_row()
            ));
        }
    }
    dir.write("summary.csv", &summary)?;
    dir.write("plan.toml", &io::plan_to_toml(&plan))?;
    dir.write(CONFIG_FILE, &cfg.to_toml())?;
    dir.finish(
        CONFIG_FILE,
        json!({ "stages": stages.len(), "plan": "plan.toml" }),
    )
}

pub fn baseline_pca(a: BaselinePcaArgs) -> Result<()> {
    let text = io::read_text(&a.features)?;
    let features = io::parse_embeddings(&text, &a.features.display().to_string())?;
    let (scores, model) = pca(&features, a.components)
        .with_context(|| format!("cannot fit {} components", a.components))?;
    let mut dir = RunDir::create(&a.out, "baseline-pca")?;
    dir.write("embeddings.csv", &io::format_embeddings(&scores, "pc"))?;
    let mut variance = serde_json::to_string_pretty(&json!({
        "components": a.components,
        "explained_variance": model.explained_variance,
        "explained_variance_ratio": model.explained_variance_ratio(),
    }))?;
    variance.push('\n');
    dir.write("pca.json", &variance)?;
    let mut echo = serde_json::to_string_pretty(
        &json!({ "features": a.features, "components": a.components }),
    )?;
    echo.push('\n');
    dir.write("config.json", &echo)?;
    dir.finish("config.json", json!({ "cells": scores.n_cells() }))
}
