use super::{parse_shape, write_run_json};
use crate::analyzer::{benchmark_latency, render_table, ComplexityReport};
use crate::data::{
    compute_norm_stats, grouped_split, load_frames, load_manifest, norm_stats_path, summarize, synth,
    synth_generate, write_manifest, DatasetManifest, NormStats, Split, SynthConfig,
};
use crate::error::{Error, Result};
use crate::explain::{
    critical_regions, localization_score, occlusion_map, overlay_image, OcclusionConfig, DEFAULT_MAX_BLEND,
};
use crate::graph::{
    build_graph, deserialize_specs, load_weights, resnet50_descriptor, save_weights, seed_prototype, serialize_graph,
    zoo::RESNET50_INPUT, GraphFile, ModelGraph, PrototypeConfig, POSITIVE,
};
use crate::search::{search as run_search, write_log, SearchBudget, SearchConstraints, SearchResult};
use crate::train::{evaluate, train as run_train, write_scores_csv, TrainConfig};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Sidecar statistics when present, else recomputed from the train split.
fn norm_stats_for(manifest_path: &Path, manifest: &DatasetManifest, seed: u64) -> Result<NormStats> {
    let sidecar = norm_stats_path(manifest_path);
    if sidecar.exists() {
        NormStats::load(&sidecar)
    } else {
        compute_norm_stats(manifest, seed)
    }
}

fn load_split_manifest(path: &Path) -> Result<DatasetManifest> {
    let m = load_manifest(path)?;
    if !m.is_split() {
        return Err(Error::Data(format!("{} has no split column; run `split` first", path.display())));
    }
    Ok(m)
}

fn load_graph_file(path: &Path) -> Result<GraphFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    deserialize_specs(&text)
}

fn trained_graph(graph: &Path, weights: &Path, seed: u64) -> Result<ModelGraph> {
    let mut g = load_graph_file(graph)?.build(seed)?;
    load_weights(&mut g, weights)?;
    Ok(g)
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthOpts {
    pub out: PathBuf,
    #[serde(flatten)]
    pub synth: SynthConfig,
}

impl Default for SynthOpts {
    fn default() -> Self {
        SynthOpts {
            out: "synth".into(),
            synth: SynthConfig::new(0),
        }
    }
}

pub fn synth(o: SynthOpts) -> Result<()> {
    let (manifest, path) = synth_generate(&o.synth, &o.out)?;
    write_run_json(&o.out, "synth", &o)?;
    print!("{}", summarize(&manifest).to_table());
    println!("manifest: {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------- split

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitOpts {
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    pub fractions: [f64; 3],
    pub seed: u64,
    pub keep_linear: bool,
}

impl Default for SplitOpts {
    fn default() -> Self {
        SplitOpts {
            manifest: None,
            out: "split".into(),
            fractions: [0.7, 0.15, 0.15],
            seed: 0,
            keep_linear: false,
        }
    }
}

pub const SPLIT_MANIFEST: &str = "manifest.csv";

pub fn split(o: SplitOpts) -> Result<()> {
    let input = required(&o.manifest, "manifest")?;
    let mut m = load_manifest(input)?;
    if !o.keep_linear {
        m = m.filter_convex();
    }
    let mut assigned = grouped_split(&m, o.fractions, o.seed)?;
    create_dir(&o.out)?;
    let out_path = o.out.join(SPLIT_MANIFEST);
    if out_path.canonicalize().ok() == input.canonicalize().ok() && out_path.exists() {
        return Err(Error::Config("split output would overwrite its input manifest".into()));
    }
    // Frame paths are rewritten relative to the new manifest location.
    let src_root = canonical(&assigned.root)?;
    let dst_root = canonical(&o.out)?;
    for v in &mut assigned.videos {
        for f in &mut v.frames {
            *f = relative_to(&src_root.join(&*f), &dst_root);
        }
    }
    assigned.root = o.out.clone();
    write_manifest(&assigned, &out_path)?;
    let stats = compute_norm_stats(&assigned, o.seed)?;
    stats.save(&norm_stats_path(&out_path))?;
    write_run_json(&o.out, "split", &o)?;
    print!("{}", summarize(&assigned).to_table());
    println!("manifest: {}", out_path.display());
    Ok(())
}

fn canonical(dir: &Path) -> Result<PathBuf> {
    let d = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
    d.canonicalize().map_err(|e| Error::io(d, e))
}

/// Path of `target` relative to directory `base`; both absolute.
fn relative_to(target: &Path, base: &Path) -> String {
    let t: Vec<_> = target.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut rel = PathBuf::new();
    for _ in common..b.len() {
        rel.push("..");
    }
    for c in &t[common..] {
        rel.push(c.as_os_str());
    }
    rel.to_string_lossy().replace('\\', "/")
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOpts {
    pub manifest: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub out: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainOpts {
    fn default() -> Self {
        let t = TrainConfig::new(10, 0);
        TrainOpts {
            manifest: None,
            graph: None,
            out: "train".into(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            seed: t.seed,
            shuffle: t.shuffle,
        }
    }
}

pub const GRAPH_FILE: &str = "graph.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

pub fn train(o: TrainOpts) -> Result<()> {
    let mpath = required(&o.manifest, "manifest")?;
    let m = load_split_manifest(mpath)?;
    let stats = norm_stats_for(mpath, &m, o.seed)?;
    let tr = load_frames(&m, Split::Train, &stats)?;
    let va = load_frames(&m, Split::Val, &stats)?;
    let file = match &o.graph {
        Some(p) => load_graph_file(p)?,
        None => {
            let cfg = PrototypeConfig {
                input_shape: tr.image_shape(),
                ..PrototypeConfig::default()
            };
            GraphFile::new(cfg.input_shape, seed_prototype(&cfg)?)
        }
    };
    let mut graph = file.build(o.seed)?;
    let cfg = TrainConfig {
        epochs: o.epochs,
        batch_size: o.batch_size,
        learning_rate: o.learning_rate,
        momentum: o.momentum,
        seed: o.seed,
        shuffle: o.shuffle,
    };
    let history = run_train(&mut graph, &tr, &va, &cfg)?;
    create_dir(&o.out)?;
    write_text(&o.out.join(GRAPH_FILE), &serialize_graph(&graph))?;
    save_weights(&graph, &o.out.join(WEIGHTS_FILE))?;
    write_json(&o.out.join("history.json"), &history)?;
    stats.save(&o.out.join("norm.json"))?;
    write_run_json(&o.out, "train", &o)?;
    for e in &history.epochs {
        let auc = e.val_auc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
        println!("epoch {:>3}  loss {:.5}  val_auc {auc}", e.epoch, e.train_loss);
    }
    println!("best epoch: {:?}", history.best_epoch);
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOpts {
    pub manifest: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub split: Split,
    pub threshold: f64,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for EvalOpts {
    fn default() -> Self {
        EvalOpts {
            manifest: None,
            graph: None,
            weights: None,
            split: Split::Test,
            threshold: crate::train::DEFAULT_THRESHOLD,
            out: "eval".into(),
            seed: 0,
        }
    }
}

pub fn eval(o: EvalOpts) -> Result<()> {
    let mpath = required(&o.manifest, "manifest")?;
    let m = load_split_manifest(mpath)?;
    let stats = norm_stats_for(mpath, &m, o.seed)?;
    let set = load_frames(&m, o.split, &stats)?;
    let graph = trained_graph(required(&o.graph, "graph")?, required(&o.weights, "weights")?, o.seed)?;
    let report = evaluate(&graph, &set, o.threshold)?;
    create_dir(&o.out)?;
    write_json(&o.out.join("eval.json"), &report)?;
    write_scores_csv(&o.out.join("scores.csv"), &set, &report.scores)?;
    write_run_json(&o.out, "eval", &o)?;
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    println!("split        {}", o.split);
    println!("images       {}", set.len());
    println!("auc          {:.4}", report.auc);
    println!("sensitivity  {}", fmt(report.at_threshold.sensitivity));
    println!("ppv          {}", fmt(report.at_threshold.ppv));
    Ok(())
}

// ---------------------------------------------------------------- analyze / bench

fn named_model(name: &str, input: crate::tensor::Shape) -> Result<(String, Vec<crate::graph::LayerSpec>, crate::tensor::Shape)> {
    match name {
        "prototype" => {
            let cfg = PrototypeConfig { input_shape: input, ..PrototypeConfig::default() };
            Ok(("prototype".into(), seed_prototype(&cfg)?, input))
        }
        "resnet50" => Ok(("resnet50".into(), resnet50_descriptor(crate::graph::NUM_CLASSES), RESNET50_INPUT)),
        other => Err(Error::Config(format!("unknown model `{other}` (expected prototype or resnet50)"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeOpts {
    pub graph: Option<PathBuf>,
    pub model: Option<String>,
    pub input: String,
    pub auc: Option<f64>,
    pub out: PathBuf,
}

impl Default for AnalyzeOpts {
    fn default() -> Self {
        AnalyzeOpts {
            graph: None,
            model: None,
            input: "1x1x128x128".into(),
            auc: None,
            out: "analyze".into(),
        }
    }
}

pub fn analyze(o: AnalyzeOpts) -> Result<()> {
    let input = parse_shape(&o.input)?;
    let (name, specs, shape) = match (&o.graph, &o.model) {
        (Some(p), _) => {
            let f = load_graph_file(p)?;
            let name = p.file_stem().map_or("graph".into(), |s| s.to_string_lossy().into_owned());
            (name, f.layers, input)
        }
        (None, Some(m)) => named_model(m, input)?,
        (None, None) => named_model("prototype", input)?,
    };
    let mut report = ComplexityReport::from_specs(&name, &specs, shape)?;
    if let Some(a) = o.auc {
        report = report.with_auc(a)?;
    }
    create_dir(&o.out)?;
    write_json(&o.out.join("complexity.json"), &report)?;
    write_run_json(&o.out, "analyze", &o)?;
    print!("{}", render_table(std::slice::from_ref(&report)));
    println!("{}", report.flop_convention);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchOpts {
    pub graph: Option<PathBuf>,
    pub models: Vec<String>,
    pub input: String,
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for BenchOpts {
    fn default() -> Self {
        BenchOpts {
            graph: None,
            models: vec!["prototype".into(), "resnet50".into()],
            input: "1x1x128x128".into(),
            runs: 50,
            warmup: 5,
            seed: 0,
            out: "bench".into(),
        }
    }
}

pub fn bench(o: BenchOpts) -> Result<()> {
    let input = parse_shape(&o.input)?;
    let mut targets = Vec::new();
    match &o.graph {
        Some(p) => {
            let f = load_graph_file(p)?;
            let name = p.file_stem().map_or("graph".into(), |s| s.to_string_lossy().into_owned());
            targets.push((name, f.layers, f.input_shape));
        }
        None => {
            for m in &o.models {
                targets.push(named_model(m, input)?);
            }
        }
    }
    let mut rows = Vec::new();
    for (name, specs, shape) in targets {
        let g = build_graph(&specs, shape, o.seed)?;
        let mut r = ComplexityReport::for_graph(&name, &g)?;
        r.latency_ms = Some(benchmark_latency(&g, o.runs, o.warmup)?);
        rows.push(r);
    }
    create_dir(&o.out)?;
    write_json(&o.out.join("bench.json"), &rows)?;
    write_run_json(&o.out, "bench", &o)?;
    print!("{}", render_table(&rows));
    Ok(())
}

// ---------------------------------------------------------------- search

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchOpts {
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    pub rounds: usize,
    pub candidates: usize,
    pub epochs: usize,
    pub max_params: u64,
    pub max_flops: u64,
    pub min_auc: f64,
    pub flop_input: String,
    pub seed: u64,
    pub seed_config: PrototypeConfig,
}

impl Default for SearchOpts {
    fn default() -> Self {
        let c = SearchConstraints::default();
        SearchOpts {
            manifest: None,
            out: "search".into(),
            rounds: 5,
            candidates: 4,
            epochs: 3,
            max_params: c.max_params,
            max_flops: c.max_flops,
            min_auc: c.min_auc,
            flop_input: "1x1x128x128".into(),
            seed: 0,
            seed_config: PrototypeConfig::default(),
        }
    }
}

pub fn search(o: SearchOpts) -> Result<()> {
    let mpath = required(&o.manifest, "manifest")?;
    let m = load_split_manifest(mpath)?;
    let stats = norm_stats_for(mpath, &m, o.seed)?;
    let tr = load_frames(&m, Split::Train, &stats)?;
    let va = load_frames(&m, Split::Val, &stats)?;
    let constraints = SearchConstraints {
        max_params: o.max_params,
        max_flops: o.max_flops,
        min_auc: o.min_auc,
        flop_input_shape: parse_shape(&o.flop_input)?,
    };
    let budget = SearchBudget {
        candidates_per_round: o.candidates,
        rounds: o.rounds,
        epochs_per_candidate: o.epochs,
    };
    let result = run_search(&o.seed_config, &constraints, &budget, &tr, &va, o.seed)?;
    create_dir(&o.out)?;
    write_log(&o.out.join("search_log.jsonl"), result.log())?;
    write_run_json(&o.out, "search", &o)?;
    let rows: Vec<ComplexityReport> = result.log().iter().map(|r| r.report.clone()).collect();
    print!("{}", render_table(&rows));
    match result {
        SearchResult::Found { best, .. } => {
            // Retrain the winner with its budget so the written weights match the log.
            let specs = seed_prototype(&best.config)?;
            let mut g = build_graph(&specs, best.config.input_shape, o.seed)?;
            run_train(&mut g, &tr, &va, &TrainConfig::new(o.epochs, o.seed))?;
            write_text(&o.out.join(GRAPH_FILE), &serialize_graph(&g))?;
            save_weights(&g, &o.out.join(WEIGHTS_FILE))?;
            write_json(&o.out.join("best.json"), &best)?;
            println!("best: candidate {} (NetScore {:.2})", best.id, best.performance.unwrap_or(f64::NAN));
            Ok(())
        }
        SearchResult::Infeasible { log } => Err(Error::Data(format!(
            "infeasible search: none of {} candidates met the constraints (log written)",
            log.len()
        ))),
    }
}

// ---------------------------------------------------------------- explain

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainOpts {
    pub manifest: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub split: Split,
    pub count: usize,
    pub patch: usize,
    pub stride: usize,
    pub quantile: f64,
    pub target_class: usize,
    pub max_blend: u8,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for ExplainOpts {
    fn default() -> Self {
        let c = OcclusionConfig::default();
        ExplainOpts {
            manifest: None,
            graph: None,
            weights: None,
            split: Split::Test,
            count: 8,
            patch: c.patch,
            stride: c.stride,
            quantile: crate::explain::DEFAULT_QUANTILE,
            target_class: POSITIVE,
            max_blend: DEFAULT_MAX_BLEND,
            out: "explain".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize)]
struct ExplainRow {
    frame: String,
    probability: f64,
    map: String,
    overlay: String,
    localization: Option<f64>,
}

pub fn explain(o: ExplainOpts) -> Result<()> {
    let mpath = required(&o.manifest, "manifest")?;
    let m = load_split_manifest(mpath)?;
    let stats = norm_stats_for(mpath, &m, o.seed)?;
    let set = load_frames(&m, o.split, &stats)?;
    let graph = trained_graph(required(&o.graph, "graph")?, required(&o.weights, "weights")?, o.seed)?;
    let cfg = OcclusionConfig {
        patch: o.patch,
        stride: o.stride,
        baseline: 0.0,
        target_class: o.target_class,
        ..OcclusionConfig::default()
    };
    let wanted: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == o.target_class).collect();
    let step = (wanted.len() / o.count.max(1)).max(1);
    let picks: Vec<usize> = wanted.iter().step_by(step).take(o.count).copied().collect();
    create_dir(&o.out)?;
    let mut rows = Vec::new();
    for i in picks {
        let frame = &set.frames[i];
        let img = set.images.select_items(&[i]);
        let map = occlusion_map(&graph, &img, &cfg)?;
        let stem = Path::new(frame).file_stem().map_or(format!("frame{i}"), |s| s.to_string_lossy().into_owned());
        let (_, _, raw) = crate::data::read_gray(&m.resolve(frame))?;
        let gray: Vec<u8> = raw.iter().map(|v| (v * 255.0).round() as u8).collect();
        let overlay = o.out.join(format!("{stem}_overlay.png"));
        overlay_image(&gray, &map, o.max_blend, &overlay)?;
        let map_path = o.out.join(format!("{stem}_map.pgm"));
        write_bytes(&map_path, &synth::encode_pgm_rect(&map.to_gray(), map.width, map.height))?;
        write_text(&o.out.join(format!("{stem}_map.json")), &map.to_json())?;
        let mask: Vec<u8> = critical_regions(&map, o.quantile)?.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_bytes(&o.out.join(format!("{stem}_critical.pgm")), &synth::encode_pgm_rect(&mask, map.width, map.height))?;
        let truth_path = m.resolve(&synth::mask_for(frame));
        let localization = if truth_path.exists() && truth_path != m.resolve(frame) {
            let (_, _, t) = crate::data::read_gray(&truth_path)?;
            let truth: Vec<bool> = t.iter().map(|&v| v > 0.5).collect();
            Some(localization_score(&map, &truth)?)
        } else {
            None
        };
        rows.push(ExplainRow {
            frame: frame.clone(),
            probability: map.original_prob,
            map: map_path.display().to_string(),
            overlay: overlay.display().to_string(),
            localization,
        });
    }
    write_json(&o.out.join("explain.json"), &rows)?;
    write_run_json(&o.out, "explain", &o)?;
    for r in &rows {
        let loc = r.localization.map_or("n/a".into(), |l| format!("{l:.3}"));
        println!("{:<40} p={:.4} localization={loc}", r.frame, r.probability);
    }
    let locs: Vec<f64> = rows.iter().filter_map(|r| r.localization).collect();
    if !locs.is_empty() {
        println!("mean localization {:.3}", locs.iter().sum::<f64>() / locs.len() as f64);
    }
    Ok(())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
