use std::fs;
use std::path::{Path, PathBuf};

use gist_core::pipeline::{
    dendrogram as build_dendrogram, efficiency_index, objective_profiles, offline_validate, online_select,
    rank_heatmap, top_k_eval, Chosen, EfficiencyInput, OfflineOptions, OfflineReport, OfflineStatus, PairValue,
    Strategy,
};
use gist_core::properties::{fault_type_profiles, Property};
use gist_core::similarity::{Metric, SimilarityConfig, SimilarityEngine};
use gist_core::stats::Orientation;
use gist_core::synth::generate_benchmark;
use gist_core::workspace::{inspect_workspace, load_workspace, Workspace};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use crate::config::FileConfig;
use crate::{
    Common, DendrogramArgs, EfficiencyArgs, EvalArgs, Failure, HeatmapArgs, OfflineArgs, SelectArgs, SynthArgs,
};

pub struct Context {
    pub file: FileConfig,
    pub pretty: bool,
    pub cache_dir: Option<PathBuf>,
}

impl Context {
    fn options(&self, common: &Common, alpha: Option<f64>) -> OfflineOptions {
        self.file.offline_options(common.k, alpha, common.include_same_type)
    }

    fn similarity(&self) -> SimilarityConfig {
        self.file.similarity.unwrap_or_default()
    }

    fn property(&self, flag: Option<&str>) -> Result<Property, Failure> {
        match flag {
            Some(p) => Ok(p.parse()?),
            None => Ok(self.file.property.unwrap_or(Property::Kmnc)),
        }
    }

    fn metric(&self, flag: Option<&str>) -> Result<Metric, Failure> {
        match flag {
            Some(m) => Ok(m.parse()?),
            None => self
                .file
                .metric
                .ok_or_else(|| Failure::usage("no metric given (use --metric)")),
        }
    }

    /// Engine with the on-disk cache merged in, when a cache dir is set.
    fn engine<'w>(&self, ws: &'w Workspace) -> Result<SimilarityEngine<'w>, Failure> {
        let engine = SimilarityEngine::new(ws, self.similarity());
        if let Some(path) = self.cache_path(&engine) {
            if let Ok(text) = fs::read_to_string(&path) {
                match engine.import_cache(&text) {
                    Ok(n) => info!("loaded {n} cached scores from {}", path.display()),
                    Err(e) => warn!("ignoring unreadable cache {}: {e}", path.display()),
                }
            }
        }
        Ok(engine)
    }

    fn save_cache(&self, engine: &SimilarityEngine<'_>) -> Result<(), Failure> {
        if let Some(path) = self.cache_path(engine) {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
            }
            write_text(&path, &engine.export_cache()?)?;
        }
        Ok(())
    }

    fn cache_path(&self, engine: &SimilarityEngine<'_>) -> Option<PathBuf> {
        let hash = engine.config_hash();
        self.cache_dir
            .as_ref()
            .map(|d| d.join(format!("similarity-{}.json", &hash[..16.min(hash.len())])))
    }

    fn emit<T: Serialize>(&self, value: &T, pretty: impl FnOnce() -> String) -> Result<(), Failure> {
        if self.pretty {
            print!("{}", pretty());
        } else {
            println!("{}", to_json(value)?);
        }
        Ok(())
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::format(e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    write_text(path, &(to_json(value)? + "\n"))
}

fn create_file(path: &Path) -> Result<fs::File, Failure> {
    fs::File::create(path).map_err(|e| Failure::io(path, e))
}

fn load(path: &Path) -> Result<Workspace, Failure> {
    Ok(load_workspace(path)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

pub fn validate(ctx: &Context, root: &Path) -> Result<(), Failure> {
    let inspection = inspect_workspace(root)?;
    let issues: Vec<String> = inspection.issues.iter().map(|e| e.to_string()).collect();
    let summary = inspection.workspace.as_ref().map(|ws| {
        json!({
            "models": ws.models().len(),
            "reference_models": ws.reference_models().count(),
            "testsets": ws.testsets().len(),
            "num_classes": ws.num_classes(),
        })
    });
    ctx.emit(&json!({ "ok": issues.is_empty(), "issues": issues, "summary": summary }), || {
        if issues.is_empty() {
            "workspace ok\n".to_string()
        } else {
            issues.iter().map(|i| format!("issue: {i}\n")).collect()
        }
    })?;
    if issues.is_empty() {
        Ok(())
    } else {
        Err(Failure::usage(""))
    }
}

fn offline_table(report: &OfflineReport, alpha: f64) -> String {
    let key = alpha.to_string();
    let mut out = format!(
        "{:<6} {:>10} {:>8} {:>9} {:>9}  verdict\n",
        "metric", "median_tau", "sig", "mean_rank", "valid"
    );
    for s in &report.summaries {
        out += &format!(
            "{:<6} {:>10} {:>8} {:>9.2} {:>9}  {}\n",
            s.metric.id(),
            fmt_opt(s.median_tau),
            fmt_opt(s.frac_significant.get(&key).copied()),
            s.mean_rank,
            format!("{}/{}", s.n_valid, s.n_objectives),
            if s.verdict { "pass" } else { "fail" }
        );
    }
    out += &format!(
        "chosen proxy: {}\n",
        report.chosen_proxy.map(|m| m.id()).unwrap_or("none")
    );
    out
}

pub fn offline(ctx: &Context, a: &OfflineArgs) -> Result<(), Failure> {
    let property = ctx.property(a.property.as_deref())?;
    let metrics = match (&a.metrics, &ctx.file.metrics) {
        (Some(m), _) if m.eq_ignore_ascii_case("all") => Metric::ALL.to_vec(),
        (Some(m), _) => Metric::parse_list(m)?,
        (None, Some(m)) => m.clone(),
        (None, None) => Metric::ALL.to_vec(),
    };
    let options = ctx.options(&a.common, a.alpha);
    let ws = load(&a.common.workspace)?;
    let engine = ctx.engine(&ws)?;
    let report = offline_validate(&ws, &engine, property, &metrics, &options)?;
    ctx.save_cache(&engine)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        write_json(&dir.join("offline_report.json"), &report)?;
        report.write_summary_csv(create_file(&dir.join("offline_summary.csv"))?)?;
        report.write_cells_csv(create_file(&dir.join("offline_cells.csv"))?)?;
    }
    ctx.emit(
        &json!({
            "status": report.status,
            "chosen_proxy": report.chosen_proxy,
            "summaries": report.summaries,
        }),
        || offline_table(&report, options.thresholds.alpha),
    )?;
    match report.status {
        OfflineStatus::Ok => Ok(()),
        OfflineStatus::NoUsableProxy => Err(Failure {
            code: 3,
            message: "no usable proxy: every metric failed the correlation thresholds".into(),
        }),
    }
}

pub fn select(ctx: &Context, a: &SelectArgs) -> Result<(), Failure> {
    let metric = ctx.metric(a.metric.as_deref())?;
    let spec = a.strategy.clone().or_else(|| ctx.file.strategy.clone());
    let strategy: Strategy = spec.as_deref().unwrap_or("top1").parse()?;
    let options = ctx.options(&a.common, None);
    let ws = load(&a.common.workspace)?;
    let engine = ctx.engine(&ws)?;
    let plan = online_select(&engine, &a.model, metric, strategy, options.exclude_same_type)?;
    ctx.save_cache(&engine)?;
    if let Some(path) = &a.out {
        write_json(path, &plan)?;
    }
    match &plan.chosen {
        Chosen::Sets(sets) => {
            for s in sets {
                println!("{s}");
            }
        }
        Chosen::Samples(samples) => {
            for s in samples {
                println!("{}", s.join(" "));
            }
        }
    }
    Ok(())
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> Result<(), Failure> {
    let metric = ctx.metric(a.metric.as_deref())?;
    let property = ctx.property(a.property.as_deref())?;
    let options = ctx.options(&a.common, None);
    let ws = load(&a.common.workspace)?;
    let engine = ctx.engine(&ws)?;
    let models: Vec<String> = match &a.model {
        Some(m) => vec![m.clone()],
        None => ws.reference_models().map(|m| m.id().to_string()).collect(),
    };
    let results = models
        .iter()
        .map(|m| {
            top_k_eval(
                &engine,
                m,
                metric,
                property,
                &options.property_config,
                a.top,
                options.exclude_same_type,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    ctx.save_cache(&engine)?;
    if let Some(path) = &a.out {
        write_json(path, &results)?;
    }
    ctx.emit(&results, || {
        let mut out = format!("{:<20} {:>9} {:>9} {:>9} {:>9}\n", "mut", "beat@1", "beat@k", "value@1", "value@k");
        for r in &results {
            out += &format!(
                "{:<20} {:>9.3} {:>9.3} {:>9.3} {:>9.3}\n",
                r.model_under_test,
                r.beat_fraction_top1,
                r.beat_fraction_top5_mean,
                r.property_value_top1,
                r.property_value_top5_mean
            );
        }
        out
    })
}

pub fn heatmap(ctx: &Context, a: &HeatmapArgs) -> Result<(), Failure> {
    let options = ctx.options(&a.common, None);
    let ws = load(&a.common.workspace)?;
    let objectives: Vec<String> = ws.reference_models().map(|m| m.id().to_string()).collect();
    let mut values = Vec::new();
    let orientation = match &a.metric {
        Some(m) => {
            let metric: Metric = m.parse()?;
            let engine = ctx.engine(&ws)?;
            for o in &objectives {
                for r in objectives.iter().filter(|r| *r != o) {
                    values.push(PairValue {
                        objective: o.clone(),
                        reference: r.clone(),
                        value: engine.score(metric, r, o)?.value,
                    });
                }
            }
            ctx.save_cache(&engine)?;
            metric.orientation()
        }
        None => {
            let property = ctx.property(a.property.as_deref())?;
            for o in &objectives {
                let (profiles, own) = objective_profiles(&ws, o, property, &options.property_config, false)?;
                for r in ws.reference_models().filter(|r| r.id() != o) {
                    let Some(ts) = ws.owned_testset(r.id()) else { continue };
                    match profiles.overlap(&[ts.id()], &own) {
                        Ok(v) => values.push(PairValue {
                            objective: o.clone(),
                            reference: r.id().to_string(),
                            value: v,
                        }),
                        Err(e) => warn!("skipping {} on {o}: {e}", ts.id()),
                    }
                }
            }
            Orientation::SimilarityUp
        }
    };
    let map = rank_heatmap(&ws, &values, orientation)?;
    if let Some(path) = &a.out {
        map.write_csv(create_file(path)?)?;
    }
    ctx.emit(&map, || {
        let mut out = format!("{:<12}", "objective");
        for t in &map.types {
            out += &format!(" {t:>10}");
        }
        out.push('\n');
        for (t, row) in map.types.iter().zip(&map.ranks) {
            out += &format!("{t:<12}");
            for v in row {
                out += &format!(" {:>10}", v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into()));
            }
            out.push('\n');
        }
        out
    })
}

pub fn dendrogram(ctx: &Context, a: &DendrogramArgs) -> Result<(), Failure> {
    let options = ctx.options(&a.common, None);
    let ws = load(&a.common.workspace)?;
    let model = ws.model(&a.model)?;
    let sets: Vec<String> = ws
        .testsets()
        .iter()
        .map(|t| t.id().to_string())
        .filter(|t| model.eval_on(t).is_ok())
        .collect();
    let profile = fault_type_profiles(&ws, &a.model, &sets, &options.property_config.clustering)?;
    let vectors: Vec<Vec<f64>> = sets
        .iter()
        .map(|t| profile.counts[t].iter().map(|&c| c as f64).collect())
        .collect();
    let tree = build_dendrogram(&sets, &vectors)?;
    if let Some(path) = &a.out {
        write_json(path, &tree)?;
    }
    ctx.emit(&tree, || {
        let mut out = String::new();
        for (i, l) in tree.leaves.iter().enumerate() {
            out += &format!("leaf {i}: {l}\n");
        }
        for (i, m) in tree.merges.iter().enumerate() {
            out += &format!(
                "node {}: {} + {} at {:.4} (size {})\n",
                tree.leaves.len() + i,
                m.left,
                m.right,
                m.height,
                m.size
            );
        }
        out
    })
}

pub fn efficiency(ctx: &Context, a: &EfficiencyArgs) -> Result<(), Failure> {
    let mut input = match &a.input {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Failure::format(format!("{}: {e}", p.display())))?
        }
        None => EfficiencyInput {
            coverage: f64::NAN,
            gist_offline_seconds: f64::NAN,
            gist_online_seconds_per_model: f64::NAN,
            generation_seconds_per_model: Vec::new(),
            n_models: 0,
        },
    };
    if let Some(v) = a.coverage {
        input.coverage = v;
    }
    if let Some(v) = a.offline_seconds {
        input.gist_offline_seconds = v;
    }
    if let Some(v) = a.online_seconds {
        input.gist_online_seconds_per_model = v;
    }
    if let Some(list) = &a.generation_seconds {
        input.generation_seconds_per_model = list
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::usage(format!("bad --generation-seconds: {e}")))?;
    }
    if let Some(n) = a.n_models {
        input.n_models = n;
    }
    let t = input.time_ratio()?;
    let r = efficiency_index(&input)?;
    ctx.emit(&json!({ "r": r, "t": t, "input": input }), || format!("t = {t:.4}\nr = {r:.4}\n"))
}

pub fn synth(ctx: &Context, a: &SynthArgs) -> Result<(), Failure> {
    let mut cfg = ctx.file.synth.clone().unwrap_or_default();
    if let Some(v) = a.types {
        cfg.n_types = v;
    }
    if let Some(v) = a.seeds {
        cfg.seeds_per_type = v;
    }
    if let Some(v) = a.strength {
        cfg.type_basis_strength = v;
    }
    if let Some(v) = a.seed {
        cfg.rng_seed = v;
    }
    let manifest = generate_benchmark(&cfg, &a.out)?;
    ctx.emit(
        &json!({
            "out": a.out,
            "models": manifest.models.len(),
            "testsets": manifest.testsets.len(),
            "config": cfg,
        }),
        || {
            format!(
                "wrote {} models and {} test sets to {}\n",
                manifest.models.len(),
                manifest.testsets.len(),
                a.out.display()
            )
        },
    )
}
