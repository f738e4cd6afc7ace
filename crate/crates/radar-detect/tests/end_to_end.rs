//! One pass through the public API: script a scene, render it, persist and
//! reload the dataset, cluster, train a tiny ensemble, evaluate.

use radar_detect::classifier::{load_model, save_model, TrainConfig};
use radar_detect::clustering::{
    cluster_stream, load_assignments, save_assignments, ClusterConfig, FilterConfig,
};
use radar_detect::data::ClassLabel;
use radar_detect::dataset::{load_dataset, save_dataset};
use radar_detect::metrics::v_measure;
use radar_detect::pipeline::{decide_clusters, point_labels, run_combined, train_from_sequences};
use radar_detect::simgen::{generate, Actor, SceneScript, SensorProfile};

fn script() -> SceneScript {
    SceneScript {
        name: "crossing".into(),
        duration: 3.0,
        actors: vec![
            Actor {
                class: ClassLabel::Pedestrian,
                waypoints: vec![(0.0, 12.0, -2.0), (3.0, 12.5, 2.5)],
                extent: 0.5,
                reflectivity_db: 13.0,
            },
            Actor {
                class: ClassLabel::Bicycle,
                waypoints: vec![(0.0, 25.0, 3.0), (3.0, 13.0, -3.0)],
                extent: 1.6,
                reflectivity_db: 16.0,
            },
        ],
        clutter_density: 0.001,
        ghost_rate: 0.4,
        seed: 77,
    }
}

#[test]
fn scripted_scene_through_the_whole_pipeline() {
    let seq = generate(&script(), &SensorProfile::b()).unwrap();
    assert!(seq.detections.len() > 500, "suspiciously thin scene");
    assert!(seq.detections.iter().any(|d| d.gt_class == Some(ClassLabel::Pedestrian)));
    assert!(seq.detections.iter().any(|d| d.gt_class == Some(ClassLabel::Bicycle)));
    assert!(seq.detections.iter().any(|d| d.gt_instance.is_none()), "no background returns");

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("scene.csv");
    save_dataset(&csv, std::slice::from_ref(&seq)).unwrap();
    let reloaded = load_dataset(&csv).unwrap();
    assert_eq!(reloaded.len(), 1);
    assert_eq!(reloaded[0], seq);

    let filter = FilterConfig::new([1.5, 1.2, 0.9, 0.6, 0.3], [2, 4, 6, 8, 10], 2.0).unwrap();
    let ccfg = ClusterConfig::s2();
    let assignment = cluster_stream(&seq, &filter, &ccfg).unwrap();
    assert_eq!(assignment.labels.len(), seq.detections.len());
    assert!(assignment.n_clusters >= 2, "both actors should cluster");
    let (h, c, v1) = v_measure(&assignment, &seq).unwrap();
    assert!((0.0..=1.0).contains(&h) && (0.0..=1.0).contains(&c));
    assert!(v1 > 0.3, "preset clustering collapsed: v1 {v1:.3}");

    let acsv = dir.path().join("assign.csv");
    save_assignments(&acsv, &seq, &assignment).unwrap();
    let back = load_assignments(&acsv, &seq).unwrap();
    assert_eq!(back.labels, assignment.labels);

    let tcfg = TrainConfig {
        epochs: 8,
        learning_rate: 3e-3,
        batch_size: 16,
        seed: 3,
        ..TrainConfig::default()
    };
    let dataset = vec![seq.clone()];
    let model = train_from_sequences(&dataset, &ccfg, None, 12, &tcfg).unwrap();

    let mpath = dir.path().join("model.json");
    save_model(&mpath, &model).unwrap();
    let model2 = load_model(&mpath).unwrap();

    let classes = decide_clusters(&assignment, &seq, &model).unwrap();
    let classes2 = decide_clusters(&assignment, &seq, &model2).unwrap();
    assert_eq!(classes, classes2, "reloaded model decides differently");
    assert!(!classes.is_empty());
    let labels = point_labels(&assignment, &classes);
    assert_eq!(labels.len(), seq.detections.len());
    assert!(labels.iter().all(|l| l.is_some()));

    let report = run_combined(&dataset, &filter, &ccfg, &model).unwrap();
    assert!(report.point_f1.is_finite() && (0.0..=1.0).contains(&report.point_f1));
    assert!((0.0..=1.0).contains(&report.instance_f1));
    assert!((0.0..=1.0).contains(&report.tpr_vru));
}
