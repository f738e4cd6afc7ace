use std::fs;
use std::path::Path;

use radar_detect::classifier::{
    binary_relabel, train as train_net, BinaryExample, NetKind, RecurrentNet, TrainConfig,
    NET_TAGS,
};
use radar_detect::clustering::{cluster_stream_unfiltered, ClusterAssignment};
use radar_detect::data::{ClassLabel, Sequence};
use radar_detect::dataset::{load_dataset, save_dataset};
use radar_detect::error::{Error, Result};
use radar_detect::featsel::{
    guided_backward_eliminate, load_subsets, rank_features, save_subsets, FeatureSubset,
    ELIMINATION_TOL, MI_BINS,
};
use radar_detect::features::{
    extract, load_feature_matrix, sample_clusters, save_feature_matrix, FeatureCatalog,
};
use radar_detect::hyperopt::{tune as tune_search, Evaluation, SearchSpace};
use radar_detect::metrics::{BinaryCounts, MetricsReport};
use radar_detect::pipeline::{
    background_residue, cluster_scores, run_ceiling_classification, run_ceiling_clustering,
    run_combined, train_from_sequences,
};
use radar_detect::simgen::{benchmark_scripts, generate_with_stats, SceneScript, SensorProfile};

use crate::config::{section, Config, SelectJob};

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

pub fn generate(cfg: &Config, seed: u64) -> Result<()> {
    let job = section(&cfg.generate, "generate")?;
    fs::create_dir_all(&job.out_dir).map_err(|e| Error::io(&job.out_dir, e))?;
    let scripts: Vec<SceneScript> = match &job.scripts {
        Some(path) => read_json(path)?,
        None => benchmark_scripts(seed),
    };
    let script_copy = job.out_dir.join("scripts.json");
    write_text(&script_copy, &serde_json::to_string_pretty(&scripts)?)?;
    for name in &job.profiles {
        let profile = SensorProfile::preset(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown sensor profile {name:?}")))?;
        let mut seqs = Vec::with_capacity(scripts.len());
        let mut points = [0usize; 3];
        let mut clipped = 0u64;
        for script in &scripts {
            let (seq, stats) = generate_with_stats(script, &profile)?;
            points[0] += stats.actor_points;
            points[1] += stats.clutter_points;
            points[2] += stats.ghost_points;
            clipped += stats.clipped;
            seqs.push(seq);
        }
        let out = job.out_dir.join(format!("{name}.csv"));
        save_dataset(&out, &seqs)?;
        println!(
            "{name}: {} sequences, {} detections ({} actor, {} clutter, {} ghost), {clipped} clipped -> {}",
            seqs.len(),
            points.iter().sum::<usize>(),
            points[0],
            points[1],
            points[2],
            out.display()
        );
    }
    Ok(())
}

fn mean_v1(dataset: &[Sequence], f: &radar_detect::clustering::FilterConfig, c: &radar_detect::clustering::ClusterConfig) -> f64 {
    match cluster_scores(dataset, f, c) {
        Ok(rows) if !rows.is_empty() => {
            rows.iter().map(|r| r.v1).sum::<f64>() / rows.len() as f64
        }
        _ => 0.0,
    }
}

pub fn tune(cfg: &Config, seed: u64) -> Result<()> {
    let job = section(&cfg.tune, "tune")?;
    let data = load_dataset(&job.dataset)?;
    if let Some(dir) = job.history.as_deref().and_then(Path::parent) {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let space = SearchSpace::standard();
    let result = tune_search(
        &space,
        |f, c| mean_v1(&data, f, c),
        job.budget,
        seed,
        job.history.as_deref(),
    )?;
    write_text(&job.out, &serde_json::to_string_pretty(&result.best)?)?;
    println!(
        "best v1 {:.4} after {} evaluations -> {}",
        result.best.v1,
        result.history.len(),
        job.out.display()
    );
    Ok(())
}

pub fn features(cfg: &Config, _seed: u64) -> Result<()> {
    let job = section(&cfg.features, "features")?;
    let data = load_dataset(&job.dataset)?;
    let tuned: Evaluation = read_json(&job.tuned)?;
    let catalog = FeatureCatalog::standard();
    let mut rows = Vec::new();
    for seq in &data {
        let gt = ClusterAssignment::from_ground_truth(seq);
        for (i, s) in sample_clusters(&gt, seq)?.iter().enumerate() {
            rows.push((format!("{}:gt:{i}", seq.id), s.gt_class, extract(s, &catalog)));
        }
        let residue = background_residue(seq);
        if residue.detections.is_empty() {
            continue;
        }
        let assign = cluster_stream_unfiltered(&residue, &tuned.cluster)?;
        for (i, s) in sample_clusters(&assign, &residue)?.iter().enumerate() {
            rows.push((
                format!("{}:{i}", residue.id),
                Some(ClassLabel::StaticGarbage),
                extract(s, &catalog),
            ));
        }
    }
    save_feature_matrix(&job.out, &catalog, &rows)?;
    println!(
        "{} samples x {} features -> {}",
        rows.len(),
        catalog.len(),
        job.out.display()
    );
    Ok(())
}

/// Balanced accuracy of a probe net trained on the kept features, on a
/// deterministic 1-in-4 per-class holdout.
fn probe_score(
    x: &[Vec<f64>],
    scoped: &[(usize, bool)],
    kept: &[usize],
    job: &SelectJob,
    seed: u64,
) -> Result<f64> {
    let mut train = Vec::new();
    let mut held = Vec::new();
    let mut counters = [0usize; 2];
    for &(row, positive) in scoped {
        let frame: Vec<f64> = kept.iter().map(|&k| x[row][k]).collect();
        let ex = BinaryExample {
            frames: vec![frame],
            positive,
        };
        let c = &mut counters[positive as usize];
        if *c % 4 == 3 {
            held.push(ex);
        } else {
            train.push(ex);
        }
        *c += 1;
    }
    if held.is_empty() {
        return Err(Error::InputMismatch(
            "too few samples to hold out a validation split".into(),
        ));
    }
    let net = RecurrentNet::new(NetKind::Recurrent, kept.len(), job.hidden)?;
    let tcfg = TrainConfig {
        epochs: job.epochs,
        learning_rate: job.learning_rate,
        batch_size: job.batch_size,
        seed,
        ..TrainConfig::default()
    };
    let (net, _) = train_net(&net, &train, &tcfg)?;
    let mut counts = BinaryCounts::default();
    for ex in &held {
        let hit = net.forward(&ex.frames)? > 0.5;
        match (ex.positive, hit) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fn_ += 1,
            (false, true) => counts.fp += 1,
            (false, false) => counts.tn += 1,
        }
    }
    Ok(counts.baac())
}

pub fn select(cfg: &Config, seed: u64) -> Result<()> {
    let job = section(&cfg.select, "select")?;
    let catalog = FeatureCatalog::standard();
    let rows = load_feature_matrix(&job.features, &catalog)?;
    let mut x = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (id, label, vector) in &rows {
        let label = label
            .ok_or_else(|| Error::InputMismatch(format!("sample {id} has no class label")))?;
        x.push(vector.values.clone());
        labels.push(label);
    }
    let y: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let ranking = rank_features(&x, &y, MI_BINS)?;
    let mut subsets = Vec::with_capacity(NET_TAGS.len());
    for (slot, tag) in NET_TAGS.iter().enumerate() {
        let scoped: Vec<(usize, bool)> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| binary_relabel(tag, l).map(|p| (i, p)))
            .collect();
        let probe_seed = seed.wrapping_add(slot as u64);
        let subset = guided_backward_eliminate(
            &ranking,
            *tag,
            |kept| probe_score(&x, &scoped, kept, job, probe_seed),
            ELIMINATION_TOL,
        )?;
        println!("{tag}: kept {} of {} features", subset.kept.len(), catalog.len());
        subsets.push(subset);
    }
    save_subsets(&job.out, &catalog, &subsets)?;
    Ok(())
}

pub fn train(cfg: &Config, seed: u64) -> Result<()> {
    let job = section(&cfg.train, "train")?;
    let data = load_dataset(&job.dataset)?;
    let tuned: Evaluation = read_json(&job.tuned)?;
    let catalog = FeatureCatalog::standard();
    let subsets: Option<Vec<FeatureSubset>> = match &job.subsets {
        Some(path) => Some(load_subsets(path, &catalog)?),
        None => None,
    };
    let tcfg = TrainConfig {
        epochs: job.epochs,
        learning_rate: job.learning_rate,
        batch_size: job.batch_size,
        seed,
        ..TrainConfig::default()
    };
    let model = train_from_sequences(&data, &tuned.cluster, subsets.as_deref(), job.hidden, &tcfg)?;
    radar_detect::classifier::save_model(&job.out, &model)?;
    println!(
        "trained {} nets, hidden {} -> {}",
        NET_TAGS.len(),
        job.hidden,
        job.out.display()
    );
    Ok(())
}

fn emit_report(report: &MetricsReport, out: &Option<std::path::PathBuf>) -> Result<()> {
    if let Some(path) = out {
        write_text(path, &report.to_json()?)?;
    }
    Ok(())
}

pub fn eval_cluster(cfg: &Config, _seed: u64) -> Result<()> {
    let job = section(&cfg.eval_cluster, "eval-cluster")?;
    let data = load_dataset(&job.dataset)?;
    let tuned: Evaluation = read_json(&job.tuned)?;
    let report = run_ceiling_clustering(&data, &tuned.filter, &tuned.cluster)?;
    println!(
        "homogeneity {:.4}  completeness {:.4}  v1 {:.4}",
        report.homogeneity, report.completeness, report.v1
    );
    emit_report(&report, &job.out)
}

pub fn eval_class(cfg: &Config, _seed: u64) -> Result<()> {
    let job = section(&cfg.eval_class, "eval-class")?;
    let data = load_dataset(&job.dataset)?;
    let tuned: Evaluation = read_json(&job.tuned)?;
    let model = radar_detect::classifier::load_model(&job.model)?;
    let report = run_ceiling_classification(&data, &model, &tuned.cluster)?;
    let f1 = |token: &str| report.per_class_f1.get(token).copied().unwrap_or(0.0);
    println!(
        "macro F1 {:.4}  (ped {:.4}, bike {:.4}, static {:.4})",
        report.macro_f1,
        f1("ped"),
        f1("bike"),
        f1("static")
    );
    emit_report(&report, &job.out)
}

pub fn eval_pipeline(cfg: &Config, _seed: u64) -> Result<()> {
    let job = section(&cfg.eval_pipeline, "eval-pipeline")?;
    let data = load_dataset(&job.dataset)?;
    let tuned: Evaluation = read_json(&job.tuned)?;
    let model = radar_detect::classifier::load_model(&job.model)?;
    let report = run_combined(&data, &tuned.filter, &tuned.cluster, &model)?;
    println!(
        "point F1 {:.4}  instance F1 {:.4}  TPR {:.4}  TNR {:.4}  BAAC {:.4}",
        report.point_f1, report.instance_f1, report.tpr_vru, report.tnr_vru, report.baac_vru
    );
    emit_report(&report, &job.out)
}

pub fn report(cfg: &Config, _seed: u64) -> Result<()> {
    let job = section(&cfg.report, "report")?;
    let pct = |v: f64| format!("{:7.2} %", 100.0 * v);
    let mut out = String::new();

    let loaded = |paths: Vec<(&str, &Option<std::path::PathBuf>)>| -> Result<Vec<(String, MetricsReport)>> {
        let mut rows = Vec::new();
        for (label, path) in paths {
            if let Some(path) = path {
                rows.push((label.to_string(), read_json(path.as_path())?));
            }
        }
        Ok(rows)
    };

    let cluster = loaded(job.rows.iter().map(|r| (r.label.as_str(), &r.cluster)).collect())?;
    if !cluster.is_empty() {
        out.push_str("=== clustering (instance v-measure) ===\n");
        out.push_str(&format!(
            "{:<14} {:>9} {:>9} {:>9}\n",
            "label", "homog", "compl", "v1"
        ));
        for (label, r) in &cluster {
            out.push_str(&format!(
                "{label:<14} {} {} {}\n",
                pct(r.homogeneity),
                pct(r.completeness),
                pct(r.v1)
            ));
        }
    }

    let class = loaded(job.rows.iter().map(|r| (r.label.as_str(), &r.class)).collect())?;
    if !class.is_empty() {
        out.push_str("=== classification ceiling ===\n");
        out.push_str(&format!(
            "{:<14} {:>9} {:>9} {:>9} {:>9}\n",
            "label", "macro-F1", "ped", "bike", "static"
        ));
        for (label, r) in &class {
            let f1 = |token: &str| r.per_class_f1.get(token).copied().unwrap_or(0.0);
            out.push_str(&format!(
                "{label:<14} {} {} {} {}\n",
                pct(r.macro_f1),
                pct(f1("ped")),
                pct(f1("bike")),
                pct(f1("static"))
            ));
        }
    }

    let pipeline = loaded(job.rows.iter().map(|r| (r.label.as_str(), &r.pipeline)).collect())?;
    if !pipeline.is_empty() {
        out.push_str("=== combined pipeline ===\n");
        out.push_str(&format!(
            "{:<14} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
            "label", "point-F1", "inst-F1", "TPR", "TNR", "BAAC"
        ));
        for (label, r) in &pipeline {
            out.push_str(&format!(
                "{label:<14} {} {} {} {} {}\n",
                pct(r.point_f1),
                pct(r.instance_f1),
                pct(r.tpr_vru),
                pct(r.tnr_vru),
                pct(r.baac_vru)
            ));
        }
    }

    if let Some(pair) = &job.subsets {
        let catalog = FeatureCatalog::standard();
        let a = load_subsets(&pair.a, &catalog)?;
        let b = load_subsets(&pair.b, &catalog)?;
        let by_tag = |list: &[FeatureSubset], tag: &str| -> Option<Vec<usize>> {
            list.iter()
                .find(|s| s.classifier_tag == tag)
                .map(|s| s.kept.clone())
        };
        out.push_str("=== feature subsets (a vs b) ===\n");
        out.push_str(&format!(
            "{:<6} {:>7} {:>7} {:>8}\n",
            "net", "kept(a)", "kept(b)", "jaccard"
        ));
        for tag in NET_TAGS {
            let (Some(ka), Some(kb)) = (by_tag(&a, tag), by_tag(&b, tag)) else {
                continue;
            };
            let inter = ka.iter().filter(|i| kb.contains(i)).count();
            let union = ka.len() + kb.len() - inter;
            let jaccard = if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            };
            out.push_str(&format!(
                "{tag:<6} {:>7} {:>7} {jaccard:>8.3}\n",
                ka.len(),
                kb.len()
            ));
        }
    }

    print!("{out}");
    if let Some(path) = &job.out {
        write_text(path, &out)?;
    }
    Ok(())
}
