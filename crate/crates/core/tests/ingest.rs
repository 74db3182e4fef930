use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vltrack::bbox::{BBox, ImageSize};
use vltrack::ingest::{
    load_expressions, load_mot_gt, load_seqinfo, write_report, write_results, ClassFilter, DatasetLayout, IngestError,
};
use vltrack::metrics::{evaluate_tracking, MetricReport, SequenceScores};
use vltrack::synth::{synth_dataset, SynthConfig};
use vltrack::track::TrackSet;

fn size() -> ImageSize {
    ImageSize::new(1920, 1080).unwrap()
}

fn load(path: &Path, filter: &ClassFilter) -> Result<TrackSet, IngestError> {
    load_mot_gt(path, "s", size(), None, filter)
}

fn write(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("gt.txt");
    fs::write(&p, text).unwrap();
    p
}

fn track_set() -> impl Strategy<Value = TrackSet> {
    let row = (0..20u32, 1..8u32, 0.0..0.8f64, 0.0..0.8f64, 0.01..0.2f64, 0.01..0.2f64);
    proptest::collection::vec(row, 0..40).prop_map(|rows| {
        let mut ts = TrackSet::new("s", 20, size());
        for (f, id, x, y, w, h) in rows {
            let _ = ts.insert(id, f, BBox::new(x, y, w, h).unwrap());
        }
        ts
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn results_round_trip(ts in track_set()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.txt");
        write_results(&ts, &p).unwrap();
        let back = load_mot_gt(&p, "s", size(), Some(20), &ClassFilter::All).unwrap();
        let keys = |t: &TrackSet| t.detections().iter().map(|d| (d.frame_index, d.track_id)).collect::<Vec<_>>();
        prop_assert_eq!(keys(&back), keys(&ts));
        for d in ts.detections() {
            let a = d.bbox.to_pixels(size());
            let b = back.get(d.track_id.unwrap(), d.frame_index).unwrap().to_pixels(size());
            for (u, v) in [(a.0, b.0), (a.1, b.1), (a.2, b.2), (a.3, b.3)] {
                prop_assert!((u - v).abs() <= 0.5);
            }
        }
        let first = fs::read(&p).unwrap();
        write_results(&ts, &p).unwrap();
        prop_assert_eq!(first, fs::read(&p).unwrap());
    }

    #[test]
    fn row_order_does_not_matter(ts in track_set(), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.txt");
        write_results(&ts, &p).unwrap();
        let sorted = load_mot_gt(&p, "s", size(), Some(20), &ClassFilter::All).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        fs::write(&p, lines.join("\n")).unwrap();
        let shuffled = load_mot_gt(&p, "s", size(), Some(20), &ClassFilter::All).unwrap();
        prop_assert_eq!(sorted, shuffled);
    }
}

#[test]
fn documented_row() {
    let dir = tempfile::tempdir().unwrap();
    let ts = load(&write(dir.path(), "1,1,100,200,50,80,1,1,1.0\n"), &ClassFilter::default()).unwrap();
    let d = &ts.detections()[0];
    assert_eq!((d.frame_index, d.track_id), (0, Some(1)));
    let b = d.bbox;
    assert!((b.x() - 100.0 / 1920.0).abs() < 1e-12);
    assert!((b.y() - 200.0 / 1080.0).abs() < 1e-12);
    assert!((b.w() - 50.0 / 1920.0).abs() < 1e-12);
    assert!((b.h() - 80.0 / 1080.0).abs() < 1e-12);
}

#[test]
fn empty_file_and_empty_set() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load(&write(dir.path(), ""), &ClassFilter::default()).unwrap().is_empty());
    let p = dir.path().join("r.txt");
    write_results(&TrackSet::new("s", 3, size()), &p).unwrap();
    assert_eq!(fs::read_to_string(&p).unwrap(), "");
}

#[test]
fn duplicates_name_both_lines() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "1,1,10,10,5,5,1,1,1\n1,2,10,10,5,5,1,1,1\n1,1,30,10,5,5,1,1,1\n");
    let err = load(&p, &ClassFilter::default()).unwrap_err();
    assert!(matches!(err, IngestError::Duplicate { frame: 1, id: 1, first: 1, second: 3, .. }));
    let msg = err.to_string();
    assert!(msg.contains("lines 1 and 3"), "{msg}");
}

#[test]
fn malformed_rows_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    for (text, line) in [
        ("1,1,10,10,5,5\n1,1,10\n", 2),
        ("1,1,10,10,5,5\n\n0,2,10,10,5,5\n", 3),
        ("1,1,10,ten,5,5\n", 1),
        ("1,1,10,10,-5,5\n", 1),
    ] {
        match load(&write(dir.path(), text), &ClassFilter::default()) {
            Err(IngestError::Malformed { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn class_filters() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "1,1,10,10,5,5,1,1,1\n1,2,10,10,5,5,1,3,1\n1,3,10,10,5,5,0,1,1\n");
    let ids = |f: ClassFilter| load(&p, &f).unwrap().track_ids().collect::<Vec<_>>();
    assert_eq!(ids(ClassFilter::Pedestrian), vec![1]);
    assert_eq!(ids(ClassFilter::All), vec![1, 2]);
    assert_eq!(ids(ClassFilter::Only(vec![3])), vec![2]);
}

#[test]
fn expressions_validate_targets() {
    let dir = tempfile::tempdir().unwrap();
    let mut gt = TrackSet::new("s", 1, size());
    gt.insert(1, 0, BBox::new(0.1, 0.1, 0.1, 0.1).unwrap()).unwrap();
    gt.insert(2, 0, BBox::new(0.5, 0.1, 0.1, 0.1).unwrap()).unwrap();
    let p = dir.path().join("e.json");
    fs::write(&p, r#"[{"id":"a","text":"both","targets":[1,2]},{"id":"b","text":"nobody","targets":[]}]"#).unwrap();
    let e = load_expressions(&p, Some(&gt)).unwrap();
    assert_eq!(e.len(), 2);
    assert_eq!(e[0].targets.len(), 2);
    assert!(e[1].targets.is_empty());
    fs::write(&p, r#"[{"id":"a","text":"ghost","targets":[9]}]"#).unwrap();
    assert!(matches!(load_expressions(&p, Some(&gt)), Err(IngestError::Invalid { .. })));
}

#[test]
fn report_has_entries_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let d = synth_dataset(&SynthConfig { sequences: 2, frames: 10, ..Default::default() });
    let sequences = d
        .sequences
        .iter()
        .map(|s| SequenceScores {
            sequence_id: s.id().to_string(),
            tracking: Some(evaluate_tracking(&s.gt, &s.gt).unwrap()),
            ..Default::default()
        })
        .collect();
    let report = MetricReport::new("mot", sequences);
    let p = dir.path().join("report.json");
    write_report(&report, &p).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(v["sequences"].as_array().unwrap().len(), 2);
    assert_eq!(v["aggregate"]["tracking"]["hota"], 1.0);
    let first = fs::read(&p).unwrap();
    write_report(&report, &p).unwrap();
    assert_eq!(first, fs::read(&p).unwrap());
}

#[test]
fn layout_round_trip_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = synth_dataset(&SynthConfig { sequences: 2, frames: 12, views: 2, ..Default::default() });
    d.write(dir.path()).unwrap();
    let layout = DatasetLayout::discover(dir.path()).unwrap();
    assert_eq!(layout.sequences.len(), 4);
    let info = load_seqinfo(&layout.sequences[0].dir.join("seqinfo.ini")).unwrap();
    assert_eq!((info.seq_length, info.image_size), (12, size()));
    let seqs = layout.load_all(&ClassFilter::default()).unwrap();
    for (a, b) in seqs.iter().zip(&d.sequences) {
        assert_eq!(a.meta, b.meta);
        assert_eq!(a.gt.track_ids().collect::<Vec<_>>(), b.gt.track_ids().collect::<Vec<_>>());
        assert_eq!(a.images[0], format!("{}/img1/000001.jpg", a.id()));
    }

    fs::write(dir.path().join("views.json"), r#"{"g": ["synth-01-A", "nowhere"]}"#).unwrap();
    assert!(matches!(DatasetLayout::discover(dir.path()), Err(IngestError::Invalid { .. })));
    fs::remove_file(dir.path().join("views.json")).unwrap();

    fs::remove_file(dir.path().join("synth-02-B/gt/gt.txt")).unwrap();
    let err = DatasetLayout::discover(dir.path()).unwrap_err();
    assert!(err.to_string().contains("synth-02-B/gt/gt.txt"), "{err}");
    assert!(matches!(DatasetLayout::discover(&dir.path().join("absent")), Err(IngestError::MissingFile(_))));
}
