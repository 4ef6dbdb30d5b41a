use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use dsr::config::Config;
use dsr::evaluation::{
    aggregate_repetitions, bench_matching, dsr_trials, resizing_trials, summarize, BenchConfig,
    MatchSettings, MetricsSummary, TrialResult,
};
use dsr::feature_maps::{block_set, fitting_scales, read_fmap, write_fmap, FeatureMap};
use dsr::image::read_pnm;
use dsr::learning::{
    fine_tune, pretrain_identification, read_checkpoint, write_checkpoint, Fcn, FcnConfig,
    FcnParams, LabeledImage, PairLabel, TrainState, VerificationPair,
};
use dsr::matching::{rank_scores, score_gallery};
use dsr::sparse_solver::{feature_sign_search, kkt_residual, LassoProblem};
use dsr::store::GalleryStore;
use dsr::synthetic::{verification_pairs, Labeled};
use dsr::{DsrError, Result};
use serde::Deserialize;
use serde_json::json;

use crate::synth::{self, Generated};

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| DsrError::io(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// Reads an `.fmap` as-is, anything else as a Netpbm image.
fn read_input(path: &Path) -> Result<FeatureMap<f64>> {
    if path.extension().is_some_and(|e| e == "fmap") {
        read_fmap(path)
    } else {
        read_pnm(path)
    }
}

fn load_net(path: &Path) -> Result<Fcn<f64>> {
    read_checkpoint(path)
}

#[derive(Args)]
pub struct ExtractArgs {
    /// Image (.pgm/.ppm) or .fmap input.
    #[arg(
        long,
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    input: Option<PathBuf>,
    /// Generator spec; see the README for the grammar.
    #[arg(long)]
    synthetic: Option<String>,
    /// Network applied to every input; without it inputs are written unchanged.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output .fmap file, or store directory for multi-map specs.
    #[arg(long)]
    out: PathBuf,
}

pub fn extract(config: &Config, a: &ExtractArgs) -> Result<()> {
    let net = a.checkpoint.as_deref().map(load_net).transpose()?;
    let apply = |m: FeatureMap<f64>| -> Result<FeatureMap<f64>> {
        match &net {
            Some(n) => Ok(n.forward(&m)?.with_source(m.source_id.clone())),
            None => Ok(m),
        }
    };
    let generated = match (&a.input, &a.synthetic) {
        (Some(p), _) => Generated::Single(read_input(p)?),
        (None, Some(spec)) => synth::generate(spec, config.seed)?,
        (None, None) => unreachable!("clap requires one input"),
    };
    match generated {
        Generated::Single(m) => {
            let out = apply(m)?;
            write_fmap(&a.out, &out)?;
            println!(
                "{}: {}x{}x{}",
                a.out.display(),
                out.width(),
                out.height(),
                out.channels()
            );
        }
        Generated::Many(items) => {
            let items = items
                .into_iter()
                .map(|l| {
                    Ok(Labeled {
                        map: apply(l.map)?,
                        ..l
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let store = GalleryStore::create(&a.out, &items)?;
            println!("{}: {} maps", a.out.display(), store.len());
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct MatchArgs {
    #[arg(long)]
    probe: PathBuf,
    #[arg(long)]
    store: PathBuf,
    /// Use only shots with index below this (default: all).
    #[arg(long)]
    shots: Option<usize>,
    /// Ranking CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-entry match scores as JSON.
    #[arg(long)]
    scores: Option<PathBuf>,
}

fn ranking_csv(trials: &[TrialResult<f64>]) -> String {
    let mut out = String::from("probe_id,person_id,distance,rank\n");
    for t in trials {
        for (i, (id, d)) in t.ranked.entries().iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", t.probe_id, id, d, i + 1);
        }
    }
    out
}

pub fn run_match(config: &Config, a: &MatchArgs) -> Result<()> {
    let store = GalleryStore::<f64>::open(&a.store)?;
    let probe = read_fmap::<f64>(&a.probe)?;
    if let Some(c) = store.channels() {
        if c != probe.channels() {
            return Err(DsrError::DimensionMismatch {
                what: "probe channels vs store",
                expected: c,
                actual: probe.channels(),
            });
        }
    }
    let entries = store.gallery_entries(
        config.gallery_scales.as_deref().unwrap_or(&config.scales),
        config.normalization,
        a.shots.unwrap_or(usize::MAX),
    )?;
    let scales = fitting_scales(&probe, &config.scales);
    let blocks = block_set(&probe, &scales, config.normalization)?;
    let counts = blocks.scale_counts();
    let detail: Vec<String> = counts
        .iter()
        .map(|(s, n)| format!("scale {s}: {n}"))
        .collect();
    eprintln!("probe blocks: {} ({})", blocks.len(), detail.join(", "));

    let scores = score_gallery(
        &blocks,
        &entries,
        config.solver.beta,
        &config.solver_options(),
    )?;
    if scores.iter().any(|s| !s.score.converged) {
        log::warn!("some sparse codes did not reach the KKT tolerance");
    }
    let ranked = rank_scores(&scores)?;
    let trial = TrialResult::new(probe.source_id.clone(), String::new(), ranked)?;
    let csv = ranking_csv(std::slice::from_ref(&trial));
    match &a.out {
        Some(p) => write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(p) = &a.scores {
        let entries: Vec<_> = scores
            .iter()
            .map(|s| json!({"person_id": s.person_id, "shot": s.shot_index, "score": s.score}))
            .collect();
        let doc = json!({
            "probe_id": probe.source_id,
            "probe_blocks": blocks.len(),
            "scale_counts": counts,
            "beta": config.solver.beta,
            "entries": entries,
        });
        write_text(p, &to_json(&doc))?;
    }
    Ok(())
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Dsr,
    Resizing,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Gallery store.
    #[arg(long, required_unless_present = "synthetic", requires = "probes")]
    store: Option<PathBuf>,
    /// Probe store; each entry's person_id is the ground truth.
    #[arg(long)]
    probes: Option<PathBuf>,
    /// Run the built-in feature-level benchmark instead of stores.
    #[arg(long, conflicts_with_all = ["store", "probes"])]
    synthetic: bool,
    /// Seeded probe draws for the synthetic benchmark.
    #[arg(long, default_value_t = 10)]
    repetitions: u64,
    /// Gallery shots per identity (default: all).
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long, value_enum, default_value_t = Method::Dsr)]
    method: Method,
    /// Directory receiving cmc.csv, roc.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
}

pub fn eval(config: &Config, a: &EvalArgs) -> Result<()> {
    let start = Instant::now();
    let (gallery, probe_sets): (Vec<Labeled<f64>>, Vec<Vec<Labeled<f64>>>) = if a.synthetic {
        let spec = synth::feature_benchmark(config.seed);
        let sets = (0..a.repetitions.max(1))
            .map(|r| spec.probes(r))
            .collect::<Result<_>>()?;
        (spec.gallery()?, sets)
    } else {
        let store = GalleryStore::open(a.store.as_ref().expect("clap"))?;
        let probes = GalleryStore::open(a.probes.as_ref().expect("clap"))?;
        (store.labeled(), vec![probes.labeled()])
    };
    if gallery.is_empty() {
        return Err(DsrError::EmptyGallery);
    }
    let shots = a.shots.unwrap_or(usize::MAX);
    let settings = MatchSettings {
        scales: config.scales.clone(),
        gallery_scales: config.gallery_scales.clone(),
        normalization: config.normalization,
        beta: config.solver.beta,
        solver: config.solver_options(),
    };
    let entries = match a.method {
        Method::Dsr => dsr::evaluation::prepare_gallery(&gallery, shots, &settings)?,
        Method::Resizing => Vec::new(),
    };
    let mut all = Vec::new();
    let mut runs: Vec<MetricsSummary> = Vec::new();
    for probes in &probe_sets {
        let trials = match a.method {
            Method::Dsr => dsr_trials(&entries, probes, &settings)?,
            Method::Resizing => resizing_trials(&gallery, shots, probes)?,
        };
        runs.push(summarize(&trials)?);
        all.extend(trials);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pooled = summarize(&all)?;
    let reps = aggregate_repetitions(&runs)?;

    std::fs::create_dir_all(&a.out).map_err(|e| DsrError::io(&a.out, e))?;
    write_text(&a.out.join("cmc.csv"), &pooled.cmc.to_csv())?;
    write_text(&a.out.join("roc.csv"), &pooled.roc.to_csv())?;
    let summary = json!({
        "rank1": pooled.rank1,
        "rank3": pooled.rank3,
        "mAP": pooled.map,
        "auc": pooled.auc,
        "rank1_std": reps.rank1_std,
        "repetitions": runs.len(),
        "probes": all.len(),
        "method": match a.method { Method::Dsr => "dsr", Method::Resizing => "resizing" },
        "scales": config.scales,
        "beta": config.solver.beta,
        "timing": {"total_secs": elapsed, "mean_probe_secs": elapsed / all.len() as f64},
    });
    write_text(&a.out.join("summary.json"), &to_json(&summary))?;
    println!(
        "rank1 {:.4} (std {:.4} over {} runs)  rank3 {:.4}  mAP {:.4}  auc {:.4}",
        pooled.rank1,
        reps.rank1_std,
        runs.len(),
        pooled.rank3,
        pooled.map,
        pooled.auc
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON array of {"probe": path, "gallery": path, "alpha": 1 | -1}.
    #[arg(long, required_unless_present = "synthetic")]
    pairs: Option<PathBuf>,
    /// Train on generated person images with this many identities.
    #[arg(long, conflicts_with = "pairs")]
    synthetic: Option<usize>,
    /// Starting checkpoint; default is a seeded initialization of `network`.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Run identification pre-training first.
    #[arg(long)]
    pretrain: bool,
    /// Store of labeled training images for pre-training (with --pairs).
    #[arg(long)]
    pretrain_store: Option<PathBuf>,
    /// Fine-tuning epochs; overrides `train.epochs`.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV (default: `<out>.loss.csv`).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    probe: String,
    gallery: String,
    alpha: i32,
}

fn read_pairs(path: &Path) -> Result<Vec<VerificationPair<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| DsrError::io(path, e))?;
    let records: Vec<PairRecord> =
        serde_json::from_str(&text).map_err(|e| DsrError::Format(format!("pair manifest: {e}")))?;
    if records.is_empty() {
        return Err(DsrError::Format("pair manifest is empty".into()));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    records
        .iter()
        .map(|r| {
            Ok(VerificationPair {
                probe: read_input(&base.join(&r.probe))?,
                gallery: read_input(&base.join(&r.gallery))?,
                label: PairLabel::try_from(r.alpha).map_err(|e| DsrError::Format(e.to_string()))?,
            })
        })
        .collect()
}

fn labels_for(items: &[Labeled<f64>]) -> Vec<LabeledImage<f64>> {
    let mut ids: Vec<&str> = items.iter().map(|l| l.person_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    items
        .iter()
        .map(|l| LabeledImage {
            image: l.map.clone(),
            label: ids.binary_search(&l.person_id.as_str()).expect("listed"),
        })
        .collect()
}

pub fn train(config: &Config, a: &TrainArgs) -> Result<()> {
    let mut net = match &a.init {
        Some(p) => load_net(p)?,
        None => Fcn::he_init(config.network_config()?, config.train.seed)?,
    };
    let (pairs, pretrain_set) = match (&a.pairs, a.synthetic) {
        (Some(p), _) => {
            let pre = a
                .pretrain_store
                .as_ref()
                .map(|s| GalleryStore::<f64>::open(s).map(|st| labels_for(&st.labeled())))
                .transpose()?;
            (read_pairs(p)?, pre)
        }
        (None, Some(ids)) => {
            let imgs = synth::person_images(config.seed, ids);
            let gallery = imgs.gallery::<f64>(1, 1)?;
            let mut pairs = Vec::new();
            for k in 0..3 {
                pairs.extend(verification_pairs(
                    &gallery,
                    &imgs.partial_probes(4, 10 + k)?,
                    k as usize,
                )?);
            }
            (pairs, Some(labels_for(&imgs.gallery::<f64>(4, 0)?)))
        }
        (None, None) => unreachable!("clap requires a pair source"),
    };
    if a.pretrain {
        let data = pretrain_set.ok_or_else(|| {
            DsrError::Config("--pretrain with --pairs needs --pretrain-store".into())
        })?;
        let (params, report) = pretrain_identification(
            &net.config,
            net.params.clone(),
            &data,
            &config.pretrain_options(),
        )?;
        eprintln!(
            "pretrain: {} epochs, final loss {:.4}, train accuracy {:.3}",
            report.epoch_loss.len(),
            report.epoch_loss.last().copied().unwrap_or(f64::NAN),
            report.train_accuracy
        );
        net.params = params;
    }
    let mut state = TrainState::new(net.params.clone(), config.train.lr);
    let epochs = a.epochs.unwrap_or(config.train.epochs);
    fine_tune(
        &net.config,
        &pairs,
        &mut state,
        epochs,
        config.train.seed,
        &config.fine_tune_options(),
    )?;
    net.params = state.params;
    write_checkpoint(&a.out, &net)?;

    let history = a
        .history
        .clone()
        .unwrap_or_else(|| a.out.with_extension("loss.csv"));
    let mut csv = String::from("step,loss\n");
    for (i, l) in state.loss_history.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", i + 1, l);
    }
    write_text(&history, &csv)?;
    eprintln!(
        "fine-tune: {} steps over {} pairs, {} solver warnings",
        state.step,
        pairs.len(),
        state.solver_warnings
    );
    println!("{}", a.out.display());
    Ok(())
}

#[derive(Args)]
pub struct BenchArgs {
    /// Store of raw gallery inputs; default is 60 generated person images.
    #[arg(long, requires = "probes")]
    store: Option<PathBuf>,
    /// Store of raw probe inputs.
    #[arg(long, requires = "store")]
    probes: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Architecture used when no checkpoint is given.
    #[arg(long, default_value = "c32,c32,p,c48,p,c48,p,c16")]
    network: String,
    /// Vertical stride of the recompute baseline's sliding window.
    #[arg(long, default_value_t = 8)]
    window_stride: usize,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn bench(config: &Config, a: &BenchArgs) -> Result<()> {
    let net = match &a.checkpoint {
        Some(p) => load_net(p)?,
        None => {
            let arch: FcnConfig = a
                .network
                .parse()
                .map_err(|e: DsrError| DsrError::Config(e.to_string()))?;
            Fcn::new(arch.clone(), FcnParams::he_init(&arch, config.seed))?
        }
    };
    let (gallery, probes) = match (&a.store, &a.probes) {
        (Some(g), Some(p)) => (
            GalleryStore::open(g)?.labeled(),
            GalleryStore::open(p)?.labeled(),
        ),
        _ => {
            let imgs = synth::person_images(config.seed, 60);
            (
                imgs.gallery::<f64>(1, 0)?,
                imgs.partial_probes::<f64>(8, 1)?,
            )
        }
    };
    let cfg = BenchConfig {
        single_scales: vec![1],
        multi_scales: config.scales.clone(),
        normalization: config.normalization,
        beta: config.solver.beta,
        solver: config.solver_options(),
        workers: config.workers,
        seed: config.seed,
        window_stride: a.window_stride,
    };
    let report = bench_matching(&net, &gallery, &probes, &cfg)?;
    let text = to_json(&report);
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    for m in &report.modes {
        eprintln!(
            "{:<10} mean {:.6}s  p95 {:.6}s  gallery extractions {}",
            m.mode, m.mean_secs, m.p95_secs, m.gallery_extractions
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct SolveArgs {
    /// JSON {"atoms": [[..], ..], "target": [..], "beta": optional}.
    #[arg(long)]
    problem: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemRecord {
    atoms: Vec<Vec<f64>>,
    target: Vec<f64>,
    beta: Option<f64>,
}

pub fn solve(config: &Config, cli_beta: Option<f64>, a: &SolveArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.problem).map_err(|e| DsrError::io(&a.problem, e))?;
    let rec: ProblemRecord =
        serde_json::from_str(&text).map_err(|e| DsrError::Format(format!("problem: {e}")))?;
    let beta = cli_beta.or(rec.beta).unwrap_or(config.solver.beta);
    let problem = LassoProblem::new(rec.atoms, rec.target, beta)?;
    let code = feature_sign_search(&problem, &config.solver_options())?;
    let kkt = kkt_residual(&problem, &code.coefficients)?;
    let doc = json!({
        "beta": beta,
        "coefficients": code.coefficients,
        "active_set": code.active_set,
        "objective": code.objective,
        "residual": code.residual,
        "kkt_residual": kkt,
        "iterations": code.iterations,
        "converged": code.converged,
    });
    print!("{}", to_json(&doc));
    if !code.converged {
        return Err(DsrError::Numeric(format!(
            "no convergence within {} iterations",
            code.iterations
        )));
    }
    Ok(())
}
