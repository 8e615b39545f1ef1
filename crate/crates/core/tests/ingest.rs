use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use proptest::prelude::*;
use tempfile::TempDir;

use signflow::error::Error;
use signflow::ingest::frames::{frame_name, write_frame};
use signflow::ingest::qc::{duration_bounds, quantile, BLANK_FRAME, EMPTY_CLIP, FRAME_COUNT_MISMATCH};
use signflow::ingest::split::split_sizes;
use signflow::ingest::{
    load_frames, load_manifest, run_decoder, split_dataset, validate_sample, write_manifest, write_splits,
    DatasetManifest, QcRules, SampleRecord, Split, SplitMode,
};

fn record(id: &str, label: &str, class_index: usize, signer: &str, frames: usize) -> SampleRecord {
    SampleRecord {
        id: id.into(),
        frames_dir: PathBuf::from(format!("frames/{id}")),
        label: label.into(),
        class_index,
        signer_id: signer.into(),
        repetition: 1,
        frame_count: frames,
        fps: Some(30.0),
    }
}

fn write_text(dir: &Path, manifest: &str, classes: &str) -> PathBuf {
    fs::write(dir.join("classes.txt"), classes).unwrap();
    let p = dir.join("manifest.csv");
    fs::write(&p, manifest).unwrap();
    p
}

const HEADER: &str = "id,frames_dir,label,signer_id,repetition,frame_count,fps\n";

#[test]
fn minimal_manifest_loads() {
    let dir = TempDir::new().unwrap();
    let body = format!(
        "{HEADER}a,fa,hello,s1,1,10,30\nb,fb,bye,s1,2,12,30\nc,fc,hello,s2,1,9,\nd,fd,bye,s2,1,11,25\n"
    );
    let m = load_manifest(&write_text(dir.path(), &body, "hello\nbye\n")).unwrap();
    assert_eq!(m.num_classes(), 2);
    assert_eq!(m.samples.len(), 4);
    assert_eq!(m.samples[1].class_index, 1);
    assert_eq!(m.samples[2].fps, None);
    assert_eq!(m.frames_path(&m.samples[0]), dir.path().join("fa"));
}

#[test]
fn unknown_label_is_rejected() {
    let dir = TempDir::new().unwrap();
    let body = format!("{HEADER}a,fa,hello,s1,1,10,30\nb,fb,xyz,s1,1,10,30\n");
    let err = load_manifest(&write_text(dir.path(), &body, "hello\n")).unwrap_err();
    assert!(matches!(err, Error::UnknownClassLabel { line: 3, ref label } if label == "xyz"), "{err}");
}

#[test]
fn duplicate_ids_and_bad_rows_are_reported() {
    let dir = TempDir::new().unwrap();
    let dup = format!("{HEADER}a,fa,hello,s1,1,10,30\na,fb,hello,s1,1,10,30\n");
    assert!(matches!(
        load_manifest(&write_text(dir.path(), &dup, "hello\n")),
        Err(Error::DuplicateSampleId(id)) if id == "a"
    ));
    let bad = format!("{HEADER}a,fa,hello,s1,1,10,30\nb,fb,hello,s1,one,10,30\n");
    match load_manifest(&write_text(dir.path(), &bad, "hello\n")) {
        Err(Error::MalformedRow { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains("repetition"));
        }
        other => panic!("unexpected {other:?}"),
    }
    let short = format!("{HEADER}a,fa,hello\n");
    assert!(matches!(
        load_manifest(&write_text(dir.path(), &short, "hello\n")),
        Err(Error::MalformedRow { line: 2, .. })
    ));
    let header = "id,label\na,hello\n";
    assert!(matches!(
        load_manifest(&write_text(dir.path(), header, "hello\n")),
        Err(Error::MalformedRow { line: 1, .. })
    ));
}

#[test]
fn missing_manifest_or_classes_file() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("manifest.csv");
    assert!(matches!(load_manifest(&p), Err(Error::MissingFile(ref q)) if q == &p));
    fs::write(&p, HEADER).unwrap();
    assert!(matches!(load_manifest(&p), Err(Error::MissingFile(q)) if q.ends_with("classes.txt")));
}

/// 85 classes with counts spread over 63..=74, summing to `total`.
fn corpus_counts(total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = (0..85).map(|c| 63 + (c * 5) % 12).collect();
    let mut i = 1;
    while counts.iter().sum::<usize>() != total {
        let sum: usize = counts.iter().sum();
        let c = &mut counts[i % 85];
        if sum > total && *c > 64 && *c < 74 {
            *c -= 1;
        } else if sum < total && *c > 63 && *c < 73 {
            *c += 1;
        }
        i += 1;
    }
    counts
}

fn synthetic_manifest(counts: &[usize], signers: usize) -> DatasetManifest {
    let classes: Vec<String> = (0..counts.len()).map(|c| format!("sentence_{c:02}")).collect();
    let mut samples = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for k in 0..n {
            let id = format!("c{c:02}_{k:03}");
            samples.push(record(&id, &classes[c], c, &format!("signer{:02}", k % signers), 100));
        }
    }
    DatasetManifest {
        root: PathBuf::new(),
        classes,
        samples,
        splits: None,
    }
}

#[test]
fn corpus_shaped_manifest_round_trips() {
    let m = synthetic_manifest(&corpus_counts(5810), 24);
    let dir = TempDir::new().unwrap();
    let path = write_manifest(dir.path(), &m.classes, &m.samples).unwrap();
    let loaded = load_manifest(&path).unwrap();
    assert_eq!(loaded.num_classes(), 85);
    assert_eq!(loaded.samples.len(), 5810);
    assert_eq!(loaded.samples, m.samples);
    let counts = loaded.class_counts();
    assert_eq!((*counts.iter().min().unwrap(), *counts.iter().max().unwrap()), (63, 74));
}

fn sizes_of(m: &DatasetManifest) -> [usize; 3] {
    Split::ALL.map(|s| m.split_samples(s).len())
}

#[test]
fn reported_split_sizes_are_reproduced() {
    // 4088 + 870 + 921 videos, fractions taken from those counts
    let n = 4088 + 870 + 921;
    let fractions = [4088.0 / n as f64, 870.0 / n as f64, 921.0 / n as f64];
    let m = synthetic_manifest(&corpus_counts(n), 24);
    let s = split_dataset(&m, SplitMode::SignerDependent, fractions, 1).unwrap();
    let sizes = sizes_of(&s);
    for (got, want) in sizes.iter().zip([4088, 870, 921]) {
        assert!(got.abs_diff(want) <= 1, "{sizes:?}");
    }
    for c in 0..85 {
        for split in Split::ALL {
            assert!(s.split_samples(split).iter().any(|r| r.class_index == c));
        }
    }
}

#[test]
fn rounded_fractions_on_5810_give_proportional_sizes() {
    let sum = 0.7035 + 0.1497 + 0.1585;
    let f = [0.7035 / sum, 0.1497 / sum, 0.1585 / sum];
    let m = synthetic_manifest(&corpus_counts(5810), 24);
    let s = split_dataset(&m, SplitMode::SignerDependent, f, 3).unwrap();
    let expected = split_sizes(5810, &f);
    for (got, want) in sizes_of(&s).iter().zip(expected) {
        assert!(got.abs_diff(want) <= 1);
    }
    assert_eq!(expected.iter().sum::<usize>(), 5810);
}

#[test]
fn signer_independent_keeps_signers_apart() {
    let m = synthetic_manifest(&[6; 10], 6);
    let f = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
    let s = split_dataset(&m, SplitMode::SignerIndependent, f, 7).unwrap();
    let mut signer_split: HashMap<&str, Split> = HashMap::new();
    let map = s.splits.as_ref().unwrap();
    for r in &s.samples {
        let split = map[&r.id];
        assert_eq!(*signer_split.entry(&r.signer_id).or_insert(split), split);
    }
    let train: Vec<_> = s.split_samples(Split::Train).iter().map(|r| r.signer_id.clone()).collect();
    assert!(s.split_samples(Split::Test).iter().all(|r| !train.contains(&r.signer_id)));
    assert_eq!(sizes_of(&s), [40, 10, 10]);
}

#[test]
fn splitting_is_deterministic() {
    let m = synthetic_manifest(&[9, 12, 7], 5);
    let dir = TempDir::new().unwrap();
    for mode in [SplitMode::SignerDependent, SplitMode::SignerIndependent] {
        let a = split_dataset(&m, mode, [0.6, 0.2, 0.2], 11).unwrap();
        let b = split_dataset(&m, mode, [0.6, 0.2, 0.2], 11).unwrap();
        assert_eq!(a.splits, b.splits);
        let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_splits(&pa, &a).unwrap();
        write_splits(&pb, &b).unwrap();
        assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
        let mut reloaded = m.clone();
        reloaded.attach_splits(&pa).unwrap();
        assert_eq!(reloaded.splits, a.splits);
    }
}

#[test]
fn split_errors() {
    let two = synthetic_manifest(&[10, 10], 2);
    assert!(matches!(
        split_dataset(&two, SplitMode::SignerIndependent, [0.8, 0.1, 0.1], 0),
        Err(Error::TooFewSigners { found: 2 })
    ));
    let tiny = synthetic_manifest(&[2], 2);
    assert!(matches!(
        split_dataset(&tiny, SplitMode::SignerDependent, [0.8, 0.1, 0.1], 0),
        Err(Error::EmptySplit(_))
    ));
    assert!(matches!(
        split_dataset(&tiny, SplitMode::SignerDependent, [0.8, 0.3, 0.1], 0),
        Err(Error::InvalidFractions(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn splits_partition_the_samples(
        counts in prop::collection::vec(3usize..20, 2..6),
        signers in 3usize..8,
        seed in 0u64..1000,
        independent in any::<bool>(),
    ) {
        let m = synthetic_manifest(&counts, signers);
        let mode = if independent { SplitMode::SignerIndependent } else { SplitMode::SignerDependent };
        match split_dataset(&m, mode, [0.7, 0.15, 0.15], seed) {
            Ok(s) => {
                let map = s.splits.as_ref().unwrap();
                prop_assert_eq!(map.len(), m.samples.len());
                prop_assert_eq!(sizes_of(&s).iter().sum::<usize>(), m.samples.len());
                if independent {
                    let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
                    for r in &s.samples {
                        prop_assert_eq!(*seen.entry(&r.signer_id).or_insert(map[&r.id]), map[&r.id]);
                    }
                }
            }
            Err(Error::EmptySplit(_)) => prop_assert!(independent),
            Err(other) => prop_assert!(false, "unexpected {}", other),
        }
    }
}

fn write_clip(dir: &Path, frames: usize, size: u32, value: impl Fn(usize, u32, u32) -> [u8; 3]) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..frames {
        let img = RgbImage::from_fn(size, size, |x, y| Rgb(value(i, x, y)));
        write_frame(&dir.join(frame_name(i + 1)), &img).unwrap();
    }
}

fn one_sample_manifest(root: &Path, rec: SampleRecord) -> DatasetManifest {
    DatasetManifest {
        root: root.to_path_buf(),
        classes: vec![rec.label.clone()],
        samples: vec![rec],
        splits: None,
    }
}

#[test]
fn qc_passes_clean_clip_and_flags_defects() {
    let dir = TempDir::new().unwrap();
    let rec = record("ok", "a", 0, "s", 120);
    write_clip(&dir.path().join("frames/ok"), 120, 16, |i, x, y| [(i % 200) as u8 + 20, x as u8 * 8, y as u8 * 8]);
    let m = one_sample_manifest(dir.path(), rec.clone());
    let report = validate_sample(&m, &rec, &QcRules { min_resolution: 16, ..QcRules::default() });
    assert!(report.passed, "{:?}", report.violations);
    assert!(!report.manual_review_required.is_empty());

    let small = validate_sample(&m, &rec, &QcRules { min_resolution: 224, ..QcRules::default() });
    assert!(!small.passed);

    let empty = record("empty", "a", 0, "s", 5);
    fs::create_dir_all(dir.path().join("frames/empty")).unwrap();
    let r = validate_sample(&m, &empty, &QcRules::default());
    assert_eq!(r.violations[0].rule_id, EMPTY_CLIP);
    assert!(!r.passed);

    let wrong = record("ok", "a", 0, "s", 100);
    let r = validate_sample(&m, &wrong, &QcRules::default());
    assert!(r.violations.iter().any(|v| v.rule_id == FRAME_COUNT_MISMATCH));

    let dark = record("dark", "a", 0, "s", 30);
    write_clip(&dir.path().join("frames/dark"), 30, 8, |i, _, _| if i == 4 { [0, 0, 0] } else { [90, 90, 90] });
    let r = validate_sample(&m, &dark, &QcRules::default());
    assert_eq!(r.violations.len(), 1);
    assert_eq!(r.violations[0].rule_id, BLANK_FRAME);

    let slow = SampleRecord { fps: Some(1.0), ..rec.clone() };
    let r = validate_sample(&m, &slow, &QcRules::default());
    assert!(!r.passed && r.violations[0].rule_id == "DURATION_OUT_OF_RANGE");
}

#[test]
fn percentile_duration_bounds_admit_typical_clip() {
    let mut m = synthetic_manifest(&[50, 50], 4);
    for (i, s) in m.samples.iter_mut().enumerate() {
        s.frame_count = 60 + (i * 37) % 121;
    }
    let mean = m.samples.iter().map(|s| s.frame_count).sum::<usize>() as f64 / 100.0;
    let (lo, hi) = duration_bounds(&m, 0.05, 0.95, 30.0).unwrap();
    assert!(lo < mean / 30.0 && mean / 30.0 < hi);
    assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5), 3.0);
    assert!((quantile(&[0.0, 10.0], 0.05) - 0.5).abs() < 1e-12);
}

#[test]
fn frames_load_in_index_order() {
    let dir = TempDir::new().unwrap();
    let clip = dir.path().join("clip");
    write_clip(&clip, 8, 64, |i, _, _| [i as u8 * 10, 0, 255]);
    // an unrelated file and a larger index written first must not disturb ordering
    fs::write(clip.join("notes.txt"), "x").unwrap();
    let frames = load_frames(&clip).unwrap();
    assert_eq!(frames.dim(), (8, 3, 64, 64));
    for i in 0..8 {
        assert!((frames[[i, 0, 3, 3]] - i as f32 * 10.0 / 255.0).abs() < 1e-6);
        assert_eq!(frames[[i, 2, 0, 0]], 1.0);
    }
    let black = dir.path().join("black");
    write_clip(&black, 3, 4, |_, _, _| [0, 0, 0]);
    assert!(load_frames(&black).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn mixed_resolution_and_corrupt_frames_are_errors() {
    let dir = TempDir::new().unwrap();
    let clip = dir.path().join("mixed");
    write_clip(&clip, 2, 8, |_, _, _| [1, 2, 3]);
    write_frame(&clip.join(frame_name(3)), &RgbImage::new(9, 8)).unwrap();
    assert!(matches!(load_frames(&clip), Err(Error::InconsistentResolution { found_w: 9, .. })));
    let bad = dir.path().join("bad");
    write_clip(&bad, 1, 8, |_, _, _| [1, 2, 3]);
    fs::write(bad.join(frame_name(2)), b"not a png").unwrap();
    assert!(matches!(load_frames(&bad), Err(Error::Decode { path, .. }) if path.ends_with(frame_name(2))));
}

#[test]
fn decoder_hook_runs_command_template() {
    let dir = TempDir::new().unwrap();
    let src = dir.path().join("src");
    write_clip(&src, 3, 4, |_, _, _| [5, 5, 5]);
    let video = dir.path().join("video file.bin");
    fs::write(&video, b"stub").unwrap();
    let out = dir.path().join("decoded");
    let template = format!("test -f {{input}} && cp '{}'/frame_*.png {{output_dir}}/", src.display());
    assert_eq!(run_decoder(&template, &video, &out).unwrap(), 3);
    assert!(matches!(run_decoder("exit 3", &video, &out), Err(Error::Decoder(_))));
    let none = dir.path().join("none");
    assert!(matches!(run_decoder("true", &video, &none), Err(Error::Decoder(_))));
}
