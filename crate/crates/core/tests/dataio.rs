use std::collections::BTreeSet;

use chrono::{Duration, NaiveDate};
use discnet::dataio::{
    build_samples, encode_pgm, pair_photos_to_oct, parse_manifest, split_by_patient, write_manifest, Diagnosis, Eye,
    Image, ManifestRow, OctScan, Photo, PreprocessConfig, Split, SplitRatios, StereoMode, View,
};
use proptest::prelude::*;

fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2015, 1, 1).unwrap()
}

#[test]
fn no_patient_in_two_splits_over_many_seeds() {
    let ids: Vec<String> = (0..41).map(|i| format!("pt{i}")).collect();
    // rows per patient are repeated to mimic multiple eyes and visits
    let rows: Vec<&str> = ids.iter().flat_map(|s| [s.as_str(); 3]).collect();
    let ratios = SplitRatios::default();
    for seed in 0..1000 {
        let a = split_by_patient(rows.iter().copied(), &ratios, seed).unwrap();
        assert_eq!(a.len(), ids.len());
        let sets: Vec<BTreeSet<&String>> = Split::ALL
            .iter()
            .map(|s| a.iter().filter(|(_, v)| *v == s).map(|(k, _)| k).collect())
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(sets[i].is_disjoint(&sets[j]), "seed {seed}");
            }
        }
    }
}

proptest! {
    #[test]
    fn pairing_ignores_input_order(
        photo_days in prop::collection::vec(0i64..2000, 1..6),
        oct_days in prop::collection::vec((0i64..2000, 40.0f64..130.0), 0..8),
        rot in 0usize..8,
    ) {
        let photos: Vec<Photo> = photo_days.iter().enumerate().map(|(i, &d)| Photo {
            patient_id: "p".into(),
            eye: Eye::Od,
            date: base_date() + Duration::days(d),
            path: format!("{i}.pgm"),
        }).collect();
        let octs: Vec<OctScan> = oct_days.iter().map(|&(d, v)| OctScan {
            patient_id: "p".into(),
            eye: Eye::Od,
            date: base_date() + Duration::days(d),
            avg_rnfl_um: v,
            quality_db: 20.0,
        }).collect();
        let mut shuffled = octs.clone();
        if !shuffled.is_empty() {
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
        }
        let pick = |o: &[OctScan]| -> Vec<(usize, NaiveDate, u64)> {
            pair_photos_to_oct(&photos, o).into_iter().map(|(p, i)| (p, o[i].date, o[i].avg_rnfl_um.to_bits())).collect()
        };
        prop_assert_eq!(pick(&octs), pick(&shuffled));
        for (p, date, _) in pick(&octs) {
            prop_assert!((date - photos[p].date).num_days().abs() <= 183);
        }
    }
}

#[test]
fn samples_carry_manifest_targets_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mono = Image::gray(8, 8, (0..64).map(|i| i as f64 / 63.0).collect());
    let stereo = Image::gray(16, 8, vec![0.5; 128]);
    std::fs::write(dir.path().join("m.pgm"), encode_pgm(&mono)).unwrap();
    std::fs::write(dir.path().join("s.pgm"), encode_pgm(&stereo)).unwrap();
    let row = |id: &str, eye: Eye, path: &str, v: f64| ManifestRow {
        patient_id: id.into(),
        eye,
        photo_path: path.into(),
        photo_date: base_date(),
        oct_date: base_date(),
        oct_avg_rnfl_um: v,
        oct_quality_db: 22.0,
        diagnosis: Diagnosis::Normal,
        sap_md_db: 0.0,
        sap_psd_db: 1.0,
        normative_class: None,
    };
    let rows = vec![
        row("a", Eye::Od, "m.pgm", 91.123456789),
        row("b", Eye::Os, "s.pgm", 77.7),
        row("c", Eye::Od, "m.pgm", 100.0),
    ];
    let mut buf = Vec::new();
    write_manifest(&mut buf, &rows).unwrap();
    let rows = parse_manifest(buf.as_slice()).unwrap().rows;
    let assignment = split_by_patient(["a", "b", "c"], &SplitRatios::new(0.34, 0.33, 0.33).unwrap(), 4).unwrap();
    let cfg = PreprocessConfig {
        input_size: 4,
        channels: 1,
        stereo: StereoMode::Auto,
    };
    let samples = build_samples(&rows, &assignment, dir.path(), &cfg, None).unwrap();
    assert_eq!(samples.len(), 4);
    for s in &samples {
        let src = rows.iter().find(|r| r.patient_id == s.patient_id).unwrap();
        assert_eq!(s.target_um.to_bits(), src.oct_avg_rnfl_um.to_bits());
        assert_eq!(s.split, assignment[&s.patient_id]);
        assert_eq!(s.image.shape(), &[1, 4, 4]);
    }
    let views: Vec<View> = samples.iter().filter(|s| s.patient_id == "b").map(|s| s.view).collect();
    assert_eq!(views, vec![View::Left, View::Right]);

    let missing = vec![row("a", Eye::Od, "nope.pgm", 90.0)];
    assert!(build_samples(&missing, &assignment, dir.path(), &cfg, None).is_err());
}
