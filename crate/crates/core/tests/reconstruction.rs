use std::fs;

use avatar_recon::body::{BodyModel, BodyParams};
use avatar_recon::fuse::FuseConfig;
use avatar_recon::geometry::io::read_ply;
use avatar_recon::geometry::Rotation;
use avatar_recon::jmbo::JmboConfig;
use avatar_recon::metrics::{chamfer, MetricReport};
use avatar_recon::pipeline::{compare_runs, run_pipeline, PipelineConfig, RunManifest, RunOptions, ViewSelection};
use avatar_recon::synth::{generate_scene, write_scene, SceneConfig};
use nalgebra::Vector3;
use proptest::prelude::*;

#[test]
fn two_views_reconstruct_a_closed_mesh_that_beats_one_view_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let scene_cfg = SceneConfig {
        subject_seed: 5,
        noise_seed: 6,
        views: 4,
        resolution: 80,
        ..SceneConfig::default()
    };
    let scene = generate_scene(BodyModel::standard(), &scene_cfg).unwrap();
    let scene_dir = dir.path().join("scene");
    write_scene(&scene, &scene_dir).unwrap();

    let run = |count: usize| {
        let cfg = PipelineConfig {
            scene: scene_dir.clone(),
            out: dir.path().join(format!("run_{count}")),
            views: ViewSelection::Count(count),
            jmbo: JmboConfig {
                max_iterations: 6,
                ..Default::default()
            },
            fuse: FuseConfig {
                grid_resolution: 64,
                ..Default::default()
            },
            metric_samples: 5000,
            ..Default::default()
        };
        run_pipeline(&cfg, &RunOptions::default()).unwrap();
        RunManifest::read(&cfg.out).unwrap()
    };
    let runs = [run(1), run(2)];

    for m in &runs {
        assert!(m.error.is_none());
        let mesh = read_ply(&m.root.join(m.final_mesh.as_ref().unwrap())).unwrap();
        assert!(mesh.is_closed());
        let report: MetricReport =
            serde_json::from_str(&fs::read_to_string(m.root.join(m.metric_report.as_ref().unwrap())).unwrap()).unwrap();
        assert!(report.values().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
    assert_eq!(runs[1].back_view, Some(2));
    let comparison = compare_runs(&runs).unwrap();
    assert_eq!(comparison.rows.len(), 2);
    assert!(comparison.rows[1].report.chamfer_mm < comparison.rows[0].report.chamfer_mm);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn chamfer_ignores_a_shared_rigid_motion(
        axis in prop::array::uniform3(-2.0f64..2.0),
        shift in prop::array::uniform3(-1.0f64..1.0),
        bend in -0.4f64..0.4,
    ) {
        let model = BodyModel::standard();
        let rest = BodyParams::rest(model);
        let mut posed = rest.clone();
        posed.theta[1] = Vector3::new(bend, 0.0, 0.0);
        let (a, b) = (model.skin(&rest).unwrap(), model.skin(&posed).unwrap());
        let r = *Rotation::from_axis_angle(&Vector3::from(axis)).matrix();
        let t = Vector3::from(shift);
        let before = chamfer(&a, &b, 3000, 9).unwrap();
        let after = chamfer(&a.transformed(&r, &t), &b.transformed(&r, &t), 3000, 9).unwrap();
        prop_assert!((before - after).abs() <= 1e-9 * before.max(1e-3));
    }
}
