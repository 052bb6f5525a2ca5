use std::path::Path;

use argan_core::dataset::{
    generate_synthetic_dataset, ingest_lisa_subset, read_archive, split_dataset, write_archive, ClassLabel, IngestStats,
};
use argan_core::Error;
use image::{Rgb, RgbImage};

fn frame(dir: &Path, name: &str, colour: [u8; 3]) {
    let mut img = RgbImage::from_pixel(64, 48, Rgb([20, 20, 20]));
    for y in 10..30 {
        for x in 20..40 {
            img.put_pixel(x, y, Rgb(colour));
        }
    }
    img.save(dir.join(name)).unwrap();
}

const HEADER: &str = "frame_path,class_name,x_min,y_min,x_max,y_max\n";

#[test]
fn lisa_ingestion_keeps_the_two_classes_and_counts_drops() {
    let dir = tempfile::tempdir().unwrap();
    frame(dir.path(), "a.png", [200, 0, 0]);
    frame(dir.path(), "b.png", [240, 240, 240]);
    let manifest = dir.path().join("annotations.csv");
    std::fs::write(
        &manifest,
        format!(
            "{HEADER}a.png,stop,20,10,40,30\n\
             b.png,speedLimit35,20,10,40,30\n\
             b.png,yield,0,0,10,10\n\
             a.png,stop,50,40,70,60\n\
             a.png, stop ,20,10,40,30\n"
        ),
    )
    .unwrap();
    let (ds, stats) = ingest_lisa_subset(dir.path(), &manifest).unwrap();
    assert_eq!(ds.labels(), [ClassLabel::Stop, ClassLabel::SpeedLimit]);
    assert_eq!(
        stats,
        IngestStats {
            rows: 5,
            other_class: 1,
            box_outside_frame: 1,
            duplicates: 1,
        }
    );
    // the crop is the uniform box interior
    let stop = ds.images().next().unwrap();
    assert!((stop.at(0, 16, 16) - 200.0 / 255.0).abs() < 1e-9);
    assert!(stop.at(1, 16, 16).abs() < 1e-9);
}

#[test]
fn missing_frames_report_the_manifest_row() {
    let dir = tempfile::tempdir().unwrap();
    frame(dir.path(), "a.png", [200, 0, 0]);
    let manifest = dir.path().join("annotations.csv");
    std::fs::write(&manifest, format!("{HEADER}a.png,stop,20,10,40,30\nmissing.png,stop,0,0,5,5\n")).unwrap();
    match ingest_lisa_subset(dir.path(), &manifest) {
        Err(Error::Ingest { row, message }) => {
            assert_eq!(row, 3);
            assert!(message.contains("missing.png"), "{message}");
        }
        other => panic!("expected an ingest error, got {other:?}"),
    }
}

#[test]
fn archive_round_trips_splits_exactly() {
    let ds = generate_synthetic_dataset(10, 4).unwrap();
    let (train, val, test) = split_dataset(&ds, 42).unwrap();
    assert_eq!((train.len(), val.len(), test.len()), (12, 4, 4));
    let dir = tempfile::tempdir().unwrap();
    write_archive(dir.path(), &[&train, &val, &test]).unwrap();
    let (t2, v2, s2) = read_archive(dir.path()).unwrap();
    for (a, b) in [(&train, &t2), (&val, &v2), (&test, &s2)] {
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.content_hash(), b.content_hash());
    }
}

#[test]
fn archive_rejects_tampered_images() {
    let ds = generate_synthetic_dataset(5, 1).unwrap();
    let (train, val, test) = split_dataset(&ds, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_archive(dir.path(), &[&train, &val, &test]).unwrap();
    let victim = std::fs::read_dir(dir.path().join("STOP")).unwrap().next().unwrap().unwrap().path();
    RgbImage::from_pixel(32, 32, Rgb([1, 2, 3])).save(&victim).unwrap();
    assert!(matches!(read_archive(dir.path()), Err(Error::Ingest { .. })));
}
