use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lifecycle_rca::artifact::TrainedModel;
use lifecycle_rca::eval::evaluate;
use lifecycle_rca::faultgen::{generate_dataset, WorkloadSpec};
use lifecycle_rca::io::write_atomic;
use lifecycle_rca::obs::dataset::{
    analysis_dir, read_bundle, read_bundle_dir, Dataset, NORMAL_FIT_DIR, NORMAL_TRAIN_DIR,
};
use lifecycle_rca::obs::RequestBundle;
use lifecycle_rca::pipeline::{fit_store, train_model};
use lifecycle_rca::rca::{localize, localize_direct, Method, NormalPatternStore};
use lifecycle_rca::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;

pub const DEFAULT_MODEL: &str = "model.lrca";
pub const DEFAULT_STORE: &str = "normal_patterns.tsv";
pub const DEFAULT_REPORT_DIR: &str = "report";

fn require(path: &Path, what: &str, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{what} `{}` not found; {hint}", path.display())))
    }
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn load_model(path: &Path) -> Result<TrainedModel> {
    require(path, "model", "train one with `lrca train` or pass --model")?;
    TrainedModel::load(path)
}

/// Load the store and make sure it was fitted with `model`.
fn load_store(path: &Path, model_fingerprint: &str) -> Result<NormalPatternStore> {
    require(path, "normal pattern store", "create it with `lrca fit-normal` or pass --store")?;
    let store = NormalPatternStore::load(path)?;
    if store.model_fingerprint != model_fingerprint {
        return Err(Error::Invalid(format!(
            "store `{}` was fitted with a different model ({}); rerun `lrca fit-normal`",
            path.display(),
            store.model_fingerprint
        )));
    }
    Ok(store)
}

pub fn gen(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<String> {
    let mut spec = match config {
        Some(path) => {
            require(path, "workload spec", "pass an existing TOML file to --config")?;
            WorkloadSpec::load(path)?
        }
        None => WorkloadSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let m = generate_dataset(&spec, out)?;
    Ok(format!(
        "wrote {} train, {} fit and {} faulty traces to {} (seed {})\n",
        m.n_normal_train,
        m.n_normal_fit,
        m.n_faulty,
        out.display(),
        m.seed
    ))
}

pub fn train(dataset: &Path, config: RunConfig, out: &Path) -> Result<String> {
    let dir = dataset.join(NORMAL_TRAIN_DIR);
    require(&dir, "training split", "generate a dataset with `lrca gen` or check --dataset")?;
    let bundles = read_bundle_dir(&dir)?;
    let model = train_model(&bundles, config.features.clone(), config.train.clone())?;
    model.save(out)?;
    let fingerprint = model.fingerprint()?;
    write_json(
        &manifest_path(out),
        &json!({
            "command": "train",
            "dataset": dataset,
            "n_graphs": bundles.len(),
            "seed": config.train.seed,
            "config": config,
            "epoch_losses": model.epoch_losses,
            "model": out,
            "model_fingerprint": fingerprint,
        }),
    )?;
    let mut text = String::new();
    for (i, loss) in model.epoch_losses.iter().enumerate() {
        let _ = writeln!(text, "epoch {:>4}  loss {loss:.6}", i + 1);
    }
    Ok(text)
}

pub fn fit_normal(dataset: &Path, model_path: &Path, out: &Path) -> Result<String> {
    let model = load_model(model_path)?;
    let dir = dataset.join(NORMAL_FIT_DIR);
    require(&dir, "fit split", "generate a dataset with `lrca gen` or check --dataset")?;
    let bundles = read_bundle_dir(&dir)?;
    let store = fit_store(&model, &bundles)?;
    store.save(out)?;
    let types: Vec<&str> = store.request_types().collect();
    write_json(
        &manifest_path(out),
        &json!({
            "command": "fit-normal",
            "dataset": dataset,
            "n_graphs": bundles.len(),
            "model": model_path,
            "model_fingerprint": store.model_fingerprint,
            "seed": model.train_config.seed,
            "config": { "features": model.features.config, "train": model.train_config },
            "request_types": types,
            "store": out,
        }),
    )?;
    Ok(format!(
        "fitted {} normal patterns for {} request types from {} graphs\n",
        store.len(),
        types.len(),
        bundles.len()
    ))
}

/// Bundles to analyze: one trace when `trace` is given, else every trace of
/// the analysis directory.
fn analysis_bundles(dataset: &Path, trace: Option<&str>) -> Result<Vec<RequestBundle>> {
    require(dataset, "dataset", "check --dataset")?;
    let dir = analysis_dir(dataset);
    match trace {
        Some(id) => {
            for d in [dir.clone(), dataset.join(NORMAL_FIT_DIR), dataset.join(NORMAL_TRAIN_DIR)] {
                if d.join(format!("{id}.spans.jsonl")).is_file() {
                    return Ok(vec![read_bundle(&d, id)?]);
                }
            }
            Err(Error::Invalid(format!("trace `{id}` not found under `{}`", dataset.display())))
        }
        None => read_bundle_dir(&dir),
    }
}

pub struct LocalizeArgs<'a> {
    pub dataset: &'a Path,
    pub trace: Option<&'a str>,
    pub model: &'a Path,
    pub store: &'a Path,
    pub methods: &'a [Method],
    pub out: Option<&'a Path>,
}

pub fn localize_cmd(args: LocalizeArgs) -> Result<String> {
    let model = load_model(args.model)?;
    let fingerprint = model.fingerprint()?;
    let store = if args.methods.contains(&Method::Faasrca) {
        Some(load_store(args.store, &fingerprint)?)
    } else {
        None
    };
    let bundles = analysis_bundles(args.dataset, args.trace)?;
    let mut lines = String::new();
    for bundle in &bundles {
        let graph = model.features.assemble(bundle)?;
        for method in args.methods {
            let ranked = match (method, &store) {
                (Method::Faasrca, Some(store)) => localize(&model.network, store, &graph)?,
                _ => localize_direct(&model.network, &graph)?,
            };
            lines.push_str(&ranked.to_json_line());
            lines.push('\n');
        }
    }
    match args.out {
        Some(out) => {
            write_atomic(out, lines.as_bytes())?;
            write_json(
                &manifest_path(out),
                &json!({
                    "command": "localize",
                    "dataset": args.dataset,
                    "trace": args.trace,
                    "n_graphs": bundles.len(),
                    "methods": args.methods,
                    "model": args.model,
                    "model_fingerprint": fingerprint,
                    "store": store.as_ref().map(|_| args.store),
                    "seed": model.train_config.seed,
                    "config": { "features": model.features.config, "train": model.train_config },
                    "output": out,
                }),
            )?;
            Ok(String::new())
        }
        None => Ok(lines),
    }
}

pub fn eval_cmd(
    dataset: &Path,
    model_path: &Path,
    store_path: &Path,
    methods: &[Method],
    out: &Path,
) -> Result<String> {
    let model = load_model(model_path)?;
    let fingerprint = model.fingerprint()?;
    let store = load_store(store_path, &fingerprint)?;
    require(dataset, "dataset", "check --dataset")?;
    let data = Dataset::read(dataset)?;
    let graphs = model.features.assemble_all(&data.faulty)?;
    let start = Instant::now();
    let report = evaluate(&model.network, &store, &graphs, methods)?;
    let elapsed = start.elapsed();

    let table = report.to_table();
    write_atomic(&out.join("report.csv"), report.to_csv().as_bytes())?;
    write_atomic(&out.join("report.txt"), table.as_bytes())?;
    write_atomic(&out.join("plot.csv"), report.to_plot_csv().as_bytes())?;
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": "eval",
            "dataset": dataset,
            "n_graphs": report.n_graphs,
            "methods": methods,
            "model": model_path,
            "model_fingerprint": fingerprint,
            "store": store_path,
            "seed": model.train_config.seed,
            "config": { "features": model.features.config, "train": model.train_config },
            "outputs": ["report.csv", "report.txt", "plot.csv"],
        }),
    )?;
    let per_graph_ms = if graphs.is_empty() || methods.is_empty() {
        0.0
    } else {
        elapsed.as_secs_f64() * 1000.0 / (graphs.len() * methods.len()) as f64
    };
    Ok(format!(
        "{table}inference: {per_graph_ms:.3} ms per graph ({} graphs x {} methods)\n",
        graphs.len(),
        methods.len()
    ))
}
