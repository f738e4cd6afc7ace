use radar_detect::clustering::{cluster_stream, ClusterConfig, FilterConfig, NOISE};
use radar_detect::data::ClassLabel;
use radar_detect::metrics::v_measure;
use radar_detect::simgen::{generate, Actor, SceneScript, SensorProfile};
use std::collections::HashMap;

fn main() {
    let b = SensorProfile::b();
    let d = 2.0;
    let script = SceneScript {
        name: "mix-0".into(),
        duration: d,
        actors: vec![
            Actor { class: ClassLabel::Pedestrian, waypoints: vec![(0.0, 10.0, -1.5), (d, 11.0, 1.5)], extent: 0.5, reflectivity_db: 13.0 },
            Actor { class: ClassLabel::Bicycle, waypoints: vec![(0.0, 22.0, 3.0), (d, 22.5, -6.0)], extent: 1.6, reflectivity_db: 16.0 },
        ],
        clutter_density: 0.0003,
        ghost_rate: 1.2,
        seed: 31,
    };
    let seq = generate(&script, &b).unwrap();
    println!("detections: {}", seq.detections.len());
    let fcfg = FilterConfig::new([1.5, 1.2, 0.9, 0.6, 0.3], [2, 4, 6, 8, 10], 2.0).unwrap();
    for (name, ccfg) in [
        ("s2", ClusterConfig::s2()),
        ("eps0.8", ClusterConfig { eps_xyvr: 0.8, ..ClusterConfig::s2() }),
        ("eps0.8 vrmin0.1", ClusterConfig { eps_xyvr: 0.8, vr_min: 0.1, ..ClusterConfig::s2() }),
        ("eps1.2 vrmin0.1 epsvr8", ClusterConfig { eps_xyvr: 1.2, vr_min: 0.1, eps_vr: 8.0, ..ClusterConfig::s2() }),
        ("nmin8 eps0.8 vrmin0.1", ClusterConfig { nmin_50m: 8.0, eps_xyvr: 0.8, vr_min: 0.1, ..ClusterConfig::s2() }),
    ] {
        let assign = cluster_stream(&seq, &fcfg, &ccfg).unwrap();
        let noise = assign.labels.iter().filter(|&&l| l == NOISE).count();
        let mut ids_per_inst: HashMap<u32, std::collections::BTreeSet<i64>> = HashMap::new();
        for (dd, &l) in seq.detections.iter().zip(&assign.labels) {
            if let Some(i) = dd.gt_instance {
                if l > 0 { ids_per_inst.entry(i).or_default().insert(l); }
            }
        }
        let (h, c, v1) = v_measure(&assign, &seq).unwrap();
        let actor_noise = seq.detections.iter().zip(&assign.labels)
            .filter(|(dd, &l)| dd.gt_instance.is_some() && l == NOISE).count();
        let actor_total = seq.detections.iter().filter(|dd| dd.gt_instance.is_some()).count();
        println!("{name}: clusters {} noise {}/{} actor-noise {}/{} ids/inst {:?} h {:.3} c {:.3} v1 {:.3}",
            assign.n_clusters, noise, assign.labels.len(), actor_noise, actor_total,
            ids_per_inst.iter().map(|(k, v)| (*k, v.len())).collect::<Vec<_>>(), h, c, v1);
    }
}
