mod common;

use std::path::{Path, PathBuf};

use trackfuse::filters::RejectReason;
use trackfuse::io::{read_tracks3d, write_grid, write_label_map};
use trackfuse::pipeline::{run_clip, run_corpus, ClipManifest, LabelInput, PipelineConfig, Stage};
use trackfuse::synth::{
    evaluate_denoising, normal_samples, render_scene, write_bundle, DepthFormat, GroundTruthBundle, SceneSpec,
};
use trackfuse::tracks::track_from_trajectory;
use trackfuse::{CameraModel, Grid, Track3D};

fn write_clip(root: &Path, id: &str, spec: &SceneSpec, format: DepthFormat) -> (GroundTruthBundle, PathBuf) {
    let bundle = render_scene(spec).unwrap();
    let manifest = write_bundle(&bundle, &root.join(id), id, format).unwrap();
    (bundle, manifest)
}

fn config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.pipeline.export.raw_tracks = true;
    cfg
}

fn load_tracks(path: &Path, bundle: &GroundTruthBundle) -> Vec<Track3D> {
    let (trajs, n) = read_tracks3d(path).unwrap();
    assert_eq!(n, bundle.n_frames());
    trajs.iter().map(|t| track_from_trajectory(t, &bundle.poses)).collect()
}

#[test]
fn synthetic_clip_denoises_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (bundle, manifest) = write_clip(tmp.path(), "oracle", &SceneSpec::standard(3, 70, 70), DepthFormat::Disparity);
    let out = run_clip(&ClipManifest::load(&manifest).unwrap(), &config(), &tmp.path().join("out")).unwrap();
    assert_eq!(out.report.stages, Stage::ORDER.to_vec());
    assert!(out.report.verdict.accepted, "{:?}", out.report.verdict);

    let raw = load_tracks(&out.dir.join("tracks3d_raw.bin"), &bundle);
    let opt = load_tracks(&out.dir.join("tracks3d.bin"), &bundle);
    let windows = PipelineConfig::default().optimizer.windows;
    let report = evaluate_denoising(&bundle, &raw, &opt, &windows).unwrap();
    let (s, d) = (&report.static_tracks, &report.dynamic_tracks);
    assert!(s.tracks >= 50 && d.tracks >= 50, "{} static, {} dynamic", s.tracks, d.tracks);
    assert!(s.jitter_ratio >= 5.0, "static jitter ratio {}", s.jitter_ratio);
    assert!(d.rmse_improved_fraction >= 0.95, "dynamic rmse improved {}", d.rmse_improved_fraction);
    assert_eq!(d.accel_decreased_fraction, 1.0);
}

#[test]
fn missing_disparity_fails_in_depth_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, manifest) = write_clip(tmp.path(), "holey", &SceneSpec::standard(4, 5, 5), DepthFormat::Disparity);
    std::fs::remove_file(tmp.path().join("holey/view0/disparity/0042.grid")).unwrap();
    let err = run_clip(&ClipManifest::load(&manifest).unwrap(), &config(), &tmp.path().join("out")).unwrap_err();
    assert_eq!(err.stage, Stage::Depth);
    assert_eq!(err.clip_id, "holey");
    assert!(err.message.contains("0042"), "{}", err.message);
    assert!(!tmp.path().join("out/holey").exists());
}

#[test]
fn flow_inputs_match_disparity_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SceneSpec::standard(5, 15, 15);
    let (_, a) = write_clip(tmp.path(), "disp", &spec, DepthFormat::Disparity);
    let (_, b) = write_clip(tmp.path(), "flow", &spec, DepthFormat::Flow);
    let out = tmp.path().join("out");
    let ra = run_clip(&ClipManifest::load(&a).unwrap(), &config(), &out).unwrap();
    let rb = run_clip(&ClipManifest::load(&b).unwrap(), &config(), &out).unwrap();
    for f in ["tracks3d.bin", "tracks3d_raw.bin", "stats.json"] {
        let (x, y) = (std::fs::read(ra.dir.join(f)).unwrap(), std::fs::read(rb.dir.join(f)).unwrap());
        if f == "stats.json" {
            let mut x: serde_json::Value = serde_json::from_slice(&x).unwrap();
            x["clip_id"] = "flow".into();
            assert_eq!(x, serde_json::from_slice::<serde_json::Value>(&y).unwrap());
        } else {
            assert_eq!(x, y, "{f}");
        }
    }
}

#[test]
fn rerun_and_thread_count_do_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, manifest) = write_clip(tmp.path(), "det", &SceneSpec::standard(6, 20, 20), DepthFormat::Disparity);
    let m = ClipManifest::load(&manifest).unwrap();
    let mut cfg = config();
    cfg.pipeline.export.loss_traces = true;
    let mut snaps = Vec::new();
    for (tag, threads) in [("a", 1), ("b", 1), ("c", 3)] {
        cfg.pipeline.threads = Some(threads);
        run_clip(&m, &cfg, &tmp.path().join(tag)).unwrap();
        snaps.push(common::snapshot(&tmp.path().join(tag)));
    }
    assert_eq!(snaps[0], snaps[1]);
    assert_eq!(snaps[0], snaps[2]);
}

#[test]
fn corpus_isolates_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    let (_, good) = write_clip(&input, "good", &SceneSpec::standard(7, 8, 8), DepthFormat::Disparity);
    let (_, bad) = write_clip(&input, "bad", &SceneSpec::standard(8, 8, 8), DepthFormat::Disparity);
    std::fs::write(input.join("bad/poses.json"), "[]").unwrap();
    let out = tmp.path().join("out");
    let mut cfg = config();
    cfg.pipeline.clip_workers = Some(2);
    let summary = run_corpus(&[bad, good], &cfg, &out).unwrap();
    assert_eq!(summary.clips, 2);
    assert_eq!(summary.succeeded, vec!["good".to_string()]);
    assert_eq!(summary.failed.len(), 1);
    assert_eq!(summary.failed[0].clip_id, "bad");
    assert_eq!(summary.failed[0].stage, Stage::Load);
    assert!(out.join("good/tracks3d.bin").is_file());
    let ledger: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("failures.json")).unwrap()).unwrap();
    assert_eq!(ledger[0]["stage"], "load");
}

/// A still camera over a scene that cross-fades between two textures, with
/// every pixel labelled as road and the clip taken from the start of its
/// source video.
#[test]
fn labels_fade_and_trim_reach_the_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = SceneSpec::standard(9, 20, 20);
    spec.camera.velocity = [0.0; 3];
    spec.frames = 160;
    let (bundle, manifest_path) = write_clip(tmp.path(), "fade", &spec, DepthFormat::Disparity);
    let dir = tmp.path().join("fade");
    let n = bundle.n_frames();

    std::fs::create_dir_all(dir.join("labels")).unwrap();
    std::fs::write(dir.join("classes.txt"), "sky\nroad, route\nperson\n").unwrap();
    let mut label_files = Vec::new();
    for f in 0..n {
        let rel = PathBuf::from(format!("labels/{f:04}.lbl"));
        // Frame 7 has no label map.
        if f == 7 {
            label_files.push(None);
            continue;
        }
        write_label_map(&dir.join(&rel), &Grid::filled(128, 128, 1u16), f as u32).unwrap();
        label_files.push(Some(rel));
    }

    let tex = |seed| {
        let v = normal_samples(seed, 128 * 128);
        let raw = Grid::from_vec(128, 128, v.iter().map(|x| *x as f32).collect()).unwrap();
        Grid::from_fn(128, 128, |x, y| (raw[(x, y)] + raw[((x + 1).min(127), y)]) / 2.0)
    };
    let (a, b) = (tex(1), tex(2));
    std::fs::create_dir_all(dir.join("frames")).unwrap();
    let mut frames = Vec::new();
    for f in 0..n {
        let alpha = f as f32 / (n - 1) as f32;
        let g = Grid::from_fn(128, 128, |x, y| (1.0 - alpha) * a[(x, y)] + alpha * b[(x, y)]);
        let rel = PathBuf::from(format!("frames/{f:04}.grid"));
        write_grid(&dir.join(&rel), &g, f as u32).unwrap();
        frames.push(rel);
    }

    let mut m = ClipManifest::load(&manifest_path).unwrap();
    m.labels = Some(LabelInput {
        classes: "classes.txt".into(),
        model: CameraModel::perspective(512, 512, 60.0).unwrap(),
        files: label_files,
    });
    m.frames = Some(frames);
    m.source_frame_count = Some(1000);
    m.save(&manifest_path).unwrap();

    let out = run_clip(&ClipManifest::load(&manifest_path).unwrap(), &config(), &tmp.path().join("out")).unwrap();
    let r = &out.report;
    assert!(r.camera_static);
    assert!(r.semantic_pruned >= 15, "pruned {}", r.semantic_pruned);
    assert_eq!(r.stats.track_count, r.union_tracks - r.semantic_pruned);
    assert_eq!(r.stats.tracks_above_50px, 0);
    assert_eq!(r.match_pairs, n - 150);
    assert_eq!(r.min_match_count, Some(0));
    assert_eq!(r.verdict.reasons, vec![RejectReason::CrossFade, RejectReason::StaticImage, RejectReason::BoundaryTrim]);
    let on_disk: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.dir.join("verdict.json")).unwrap()).unwrap();
    assert_eq!(on_disk["accepted"], false);
}
