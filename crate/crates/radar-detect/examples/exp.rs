use std::time::Instant;

use radar_detect::classifier::TrainConfig;
use radar_detect::clustering::{cluster_stream, ClusterConfig, FilterConfig};
use radar_detect::data::Sequence;
use radar_detect::hyperopt::{tune, SearchSpace};
use radar_detect::data::ClassLabel;
use radar_detect::metrics::{macro_f1, v_measure};
use radar_detect::pipeline::{
    build_examples, cluster_scores, decide_clusters, filter_stats, point_labels,
    run_ceiling_classification, run_ceiling_clustering, run_combined, train_from_sequences,
};
use radar_detect::simgen::make_benchmark;

fn mean_v1(dataset: &[Sequence], fcfg: &FilterConfig, ccfg: &ClusterConfig) -> f64 {
    match cluster_scores(dataset, fcfg, ccfg) {
        Ok(rows) if !rows.is_empty() => rows.iter().map(|r| r.v1).sum::<f64>() / rows.len() as f64,
        _ => 0.0,
    }
}

fn experiment_space() -> SearchSpace {
    let mut space = SearchSpace::standard();
    for stage in ["eta_vr_0", "eta_vr_1", "eta_vr_2", "eta_vr_3", "eta_vr_4"] {
        space.set_bounds(stage, 0.45, 2.5).unwrap();
    }
    for stage in ["n_thresh_0", "n_thresh_1", "n_thresh_2", "n_thresh_3", "n_thresh_4"] {
        space.set_bounds(stage, 3.0, 10.0).unwrap();
    }
    space.set_bounds("d_xy", 1.5, 5.0).unwrap();
    space.set_bounds("nmin_50m", 1.0, 6.0).unwrap();
    space.set_bounds("alpha_r", 0.0, 1.0).unwrap();
    space.set_bounds("eps_xyvr", 0.5, 3.0).unwrap();
    space
}

fn combined_macro(
    seq: &Sequence,
    fcfg: &FilterConfig,
    ccfg: &ClusterConfig,
    model: &radar_detect::classifier::EnsembleModel,
) -> f64 {
    let assign = cluster_stream(seq, fcfg, ccfg).unwrap();
    let classes = decide_clusters(&assign, seq, model).unwrap();
    let pred = point_labels(&assign, &classes);
    let mut confusion = vec![vec![0u64; 3]; 3];
    for (p, d) in pred.iter().zip(&seq.detections) {
        let g = d.gt_class.unwrap_or(ClassLabel::StaticGarbage);
        confusion[g.index()][p.unwrap().index()] += 1;
    }
    macro_f1(&confusion).unwrap().1
}

fn main() {
    let t0 = Instant::now();
    let pairs = make_benchmark(9).unwrap();
    let n = pairs.len();
    let all_a: Vec<Sequence> = pairs.iter().map(|p| p.0.clone()).collect();
    let all_b: Vec<Sequence> = pairs.iter().map(|p| p.1.clone()).collect();
    let test_idx: Vec<usize> = (0..n).filter(|i| i % 3 == 2).collect();
    let train_idx: Vec<usize> = (0..n).filter(|i| i % 3 != 2).collect();
    let pick = |set: &[Sequence], idx: &[usize]| -> Vec<Sequence> {
        idx.iter().map(|&i| set[i].clone()).collect()
    };
    let (train_a, test_a) = (pick(&all_a, &train_idx), pick(&all_a, &test_idx));
    let (train_b, test_b) = (pick(&all_b, &train_idx), pick(&all_b, &test_idx));
    println!(
        "bench: {} pairs, A dets {}, B dets {}  [{:.1}s]",
        n,
        all_a.iter().map(|s| s.detections.len()).sum::<usize>(),
        all_b.iter().map(|s| s.detections.len()).sum::<usize>(),
        t0.elapsed().as_secs_f64()
    );

    let space = experiment_space();
    let mut tuned = Vec::new();
    for (name, data) in [("A", &all_a), ("B", &all_b)] {
        let t = Instant::now();
        let result = tune(&space, |f, c| mean_v1(data, f, c), 100, 17, None).unwrap();
        println!(
            "tune {name}: v1 {:.4} [{:.1}s]",
            result.best.v1,
            t.elapsed().as_secs_f64()
        );
        println!("  fcfg {:?}", result.best.filter);
        println!("  ccfg {:?}", result.best.cluster);
        tuned.push((result.best.filter, result.best.cluster, result.best.v1));
    }
    let (fcfg_a, ccfg_a, tuned_v1_a) = tuned[0].clone();
    let (fcfg_b, ccfg_b, tuned_v1_b) = tuned[1].clone();

    let doc_filter = FilterConfig::new([1.5, 1.2, 0.9, 0.6, 0.3], [2, 4, 6, 8, 10], 2.0).unwrap();
    let preset_a = mean_v1(&all_a, &doc_filter, &ClusterConfig::s1());
    let preset_b = mean_v1(&all_b, &doc_filter, &ClusterConfig::s2());
    println!(
        "preset floor: A {preset_a:.4} <= {tuned_v1_a:.4} {}  B {preset_b:.4} <= {tuned_v1_b:.4} {}",
        preset_a <= tuned_v1_a,
        preset_b <= tuned_v1_b
    );

    let tcfg = TrainConfig {
        epochs: 40,
        learning_rate: 3e-3,
        batch_size: 32,
        seed: 5,
        ..TrainConfig::default()
    };
    for (name, data, ccfg) in [("A", &train_a, &ccfg_a), ("B", &train_b, &ccfg_b)] {
        let ex = build_examples(data, ccfg).unwrap();
        let mut c = [0usize; 3];
        for e in &ex {
            c[e.label.index()] += 1;
        }
        println!("examples {name} {c:?}");
    }
    let t = Instant::now();
    let model_a = train_from_sequences(&train_a, &ccfg_a, None, 80, &tcfg).unwrap();
    println!("train A [{:.1}s]", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let model_b = train_from_sequences(&train_b, &ccfg_b, None, 80, &tcfg).unwrap();
    println!("train B [{:.1}s]", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let clu_a = run_ceiling_clustering(&test_a, &fcfg_a, &ccfg_a).unwrap();
    let clu_b = run_ceiling_clustering(&test_b, &fcfg_b, &ccfg_b).unwrap();
    let cls_a = run_ceiling_classification(&test_a, &model_a, &ccfg_a).unwrap();
    let cls_b = run_ceiling_classification(&test_b, &model_b, &ccfg_b).unwrap();
    let com_a = run_combined(&test_a, &fcfg_a, &ccfg_a, &model_a).unwrap();
    let com_b = run_combined(&test_b, &fcfg_b, &ccfg_b, &model_b).unwrap();
    println!("eval [{:.1}s]", t.elapsed().as_secs_f64());
    println!(
        "criterion6: v1 A {:.4} B {:.4} (diff {:+.4})",
        clu_a.v1,
        clu_b.v1,
        clu_b.v1 - clu_a.v1
    );
    println!(
        "criterion6: macro A {:.4} B {:.4} (|diff| {:.4})",
        cls_a.macro_f1,
        cls_b.macro_f1,
        (cls_b.macro_f1 - cls_a.macro_f1).abs()
    );
    println!(
        "criterion6: instF1 A {:.4} B {:.4} (diff {:+.4}); TPR A {:.4} B {:.4} (diff {:+.4})",
        com_a.instance_f1,
        com_b.instance_f1,
        com_b.instance_f1 - com_a.instance_f1,
        com_a.tpr_vru,
        com_b.tpr_vru,
        com_b.tpr_vru - com_a.tpr_vru
    );

    let t = Instant::now();
    let mut v1_pair_deg = 0;
    let mut f1_pair_deg = 0;
    let mut v1_dir = [0; 2];
    let mut f1_dir = [0; 2];
    for i in 0..n {
        let sa = &all_a[i];
        let sb = &all_b[i];
        let v1 = |s: &Sequence, f: &FilterConfig, c: &ClusterConfig| {
            let assign = cluster_stream(s, f, c).unwrap();
            v_measure(&assign, s).unwrap().2
        };
        let ma = v1(sa, &fcfg_a, &ccfg_a);
        let ca = v1(sa, &fcfg_b, &ccfg_b);
        let mb = v1(sb, &fcfg_b, &ccfg_b);
        let cb = v1(sb, &fcfg_a, &ccfg_a);
        v1_dir[0] += (ca < ma) as usize;
        v1_dir[1] += (cb < mb) as usize;
        if ca + cb < ma + mb {
            v1_pair_deg += 1;
        }
        let fa_m = combined_macro(sa, &fcfg_a, &ccfg_a, &model_a);
        let fa_c = combined_macro(sa, &fcfg_b, &ccfg_b, &model_b);
        let fb_m = combined_macro(sb, &fcfg_b, &ccfg_b, &model_b);
        let fb_c = combined_macro(sb, &fcfg_a, &ccfg_a, &model_a);
        f1_dir[0] += (fa_c < fa_m) as usize;
        f1_dir[1] += (fb_c < fb_m) as usize;
        if fa_c + fb_c < fa_m + fb_m {
            f1_pair_deg += 1;
        }
        println!(
            "  p{i:02}: v1A {ma:.3}->{ca:.3} v1B {mb:.3}->{cb:.3}  f1A {fa_m:.3}->{fa_c:.3} f1B {fb_m:.3}->{fb_c:.3}"
        );
    }
    println!(
        "criterion7: v1 pair-degraded {v1_pair_deg}/{n} (dir A {} B {}); macro pair-degraded {f1_pair_deg}/{n} (dir A {} B {}) [{:.1}s]",
        v1_dir[0],
        v1_dir[1],
        f1_dir[0],
        f1_dir[1],
        t.elapsed().as_secs_f64()
    );

    let ghost_free: Vec<usize> = (0..n).filter(|i| i % 4 == 0).collect();
    let gf_a = pick(&all_a, &ghost_free);
    let gf_b = pick(&all_b, &ghost_free);
    let fs_a = filter_stats(&gf_a, &fcfg_a, &ccfg_a).unwrap();
    let fs_b = filter_stats(&gf_b, &fcfg_b, &ccfg_b).unwrap();
    println!(
        "criterion8: A retention {:.4} removal {:.4}; B retention {:.4} removal {:.4}",
        fs_a.vru_retention(),
        fs_a.clutter_removal(),
        fs_b.vru_retention(),
        fs_b.clutter_removal()
    );
    println!("total [{:.1}s]", t0.elapsed().as_secs_f64());
}
