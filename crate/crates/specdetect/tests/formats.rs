use specdetect::formats::*;
use specdetect_core::diff::ParamStore;
use specdetect_core::eval::{roc_report, separability_stats};
use specdetect_core::hsi::{HsiCube, LabelMap};
use specdetect_core::metatrain::LossRecord;

fn cube(h: usize, w: usize, b: usize) -> HsiCube {
    let data = (0..h * w * b).map(|k| (k as f32) * 0.37 - 1.5).collect();
    HsiCube::new(h, w, b, data).unwrap()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn cube_round_trip_is_bit_exact() {
    let c = cube(3, 4, 5);
    let labels = LabelMap::new(3, 4, (0..12).map(|k| (k % 3) as u16).collect()).unwrap();
    let bytes = encode_cube(&c, Some(&labels)).unwrap();
    let (d, l) = decode_cube(&bytes).unwrap();
    assert_eq!((d.height(), d.width(), d.bands()), (3, 4, 5));
    assert_eq!(bits(d.data()), bits(c.data()));
    assert_eq!(l.unwrap(), labels);
    assert!(d.wavelengths().is_none());
}

#[test]
fn cube_with_wavelengths_sets_flag() {
    let c = cube(2, 2, 3).with_wavelengths(vec![450.0, 550.5, 650.25]).unwrap();
    let bytes = encode_cube(&c, None).unwrap();
    assert_eq!(bytes[18], 1);
    let (d, l) = decode_cube(&bytes).unwrap();
    assert_eq!(d.wavelengths().unwrap(), &[450.0, 550.5, 650.25]);
    assert!(l.is_none());
}

#[test]
fn one_by_one_by_one_cube() {
    let c = HsiCube::new(1, 1, 1, vec![0.123_456_79]).unwrap();
    let (d, _) = decode_cube(&encode_cube(&c, None).unwrap()).unwrap();
    assert_eq!(d.data()[0].to_bits(), 0.123_456_79f32.to_bits());
}

#[test]
fn cube_layout_is_bip_little_endian() {
    // 1x2 cube, 2 bands: pixel (0,0) = [1, 2], pixel (0,1) = [3, 4]
    let c = HsiCube::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = encode_cube(&c, None).unwrap();
    assert_eq!(&b[..4], b"SPHC");
    assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
    assert_eq!(&b[6..18], &[1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
    assert_eq!(b[18], 0);
    let vals: Vec<f32> = b[19..].chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(vals, [1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn cube_errors_are_distinct() {
    let good = encode_cube(&cube(2, 2, 2), None).unwrap();
    let mut bad = good.clone();
    bad[0] = b'X';
    let e = decode_cube(&bad).unwrap_err();
    assert!(matches!(e, FormatError::BadMagic { .. }));
    assert!(e.to_string().contains("bad magic"));

    let t = decode_cube(&good[..good.len() - 1]).unwrap_err();
    assert!(matches!(t, FormatError::Truncated { .. }));

    let mut huge = good[..19].to_vec();
    for k in 0..3 {
        huge[6 + 4 * k..10 + 4 * k].copy_from_slice(&u32::MAX.to_le_bytes());
    }
    let o = decode_cube(&huge).unwrap_err();
    assert!(matches!(o, FormatError::DimensionOverflow(_)));

    let codes = [e.code(), t.code(), o.code()];
    assert!(codes[0] != codes[1] && codes[1] != codes[2] && codes[0] != codes[2]);

    let mut trailing = good.clone();
    trailing.push(0);
    assert!(matches!(decode_cube(&trailing), Err(FormatError::Trailing(1))));
    let mut version = good;
    version[4] = 9;
    assert!(matches!(decode_cube(&version), Err(FormatError::Version(9))));
}

#[test]
fn cube_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.sphc");
    let c = cube(4, 3, 2);
    save_cube(&p, &c, None).unwrap();
    let (d, _) = load_cube(&p).unwrap();
    assert_eq!(bits(d.data()), bits(c.data()));
    let missing = load_cube(&dir.path().join("none.sphc")).unwrap_err();
    assert!(missing.to_string().contains("none.sphc"));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut s = ParamStore::new();
    s.register("dctma/a", &[2, 3], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5e-20, -7.25, 1e30]).unwrap();
    let id = s.register("det/b", &[1, 1], vec![0.1]).unwrap();
    s.register("backbone/ünï", &[4], vec![0.5; 4]).unwrap();
    s.entry_mut(id).frozen = true;
    let bytes = encode_checkpoint(&s).unwrap();
    assert_eq!(&bytes[..4], b"SPDM");
    let t = decode_checkpoint(&bytes).unwrap();
    assert_eq!(t.len(), 3);
    for (a, b) in s.entries().iter().zip(t.entries()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.shape, b.shape);
        assert_eq!(a.frozen, b.frozen);
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    assert_eq!(encode_checkpoint(&t).unwrap(), bytes);
    assert!(s.diff_names(&t).is_empty());
}

#[test]
fn checkpoint_errors() {
    let mut s = ParamStore::new();
    s.register("x", &[2], vec![1.0, 2.0]).unwrap();
    let bytes = encode_checkpoint(&s).unwrap();
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 2]), Err(FormatError::Truncated { .. })));
    assert!(matches!(decode_checkpoint(b"SPHC\x01\x00"), Err(FormatError::BadMagic { .. })));
}

#[test]
fn map_round_trip_and_pgm() {
    let scores = [0.0, 0.25, 1.0, 0.5, 2.0, -1.0];
    let m = ScoreMap::new(2, 3, &scores).unwrap();
    let back = decode_map(&encode_map(&m).unwrap()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.scores_f64(), scores);
    let pgm = encode_pgm(&m);
    let header = b"P5\n3 2\n65535\n";
    assert_eq!(&pgm[..header.len()], header);
    let px: Vec<u16> = pgm[header.len()..].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    assert_eq!(px, [0, 16384, 65535, 32768, 65535, 0]);
    assert!(ScoreMap::new(2, 2, &scores).is_err());
    assert!(matches!(decode_map(b"SPHM\x01"), Err(FormatError::Truncated { .. })));
}

#[test]
fn prior_files() {
    let dir = tempfile::tempdir().unwrap();
    let bare = dir.path().join("bare.txt");
    std::fs::write(&bare, "# lab sample\n0.1\n0.2\n\n0.3\n").unwrap();
    assert_eq!(read_prior(&bare, 3, None).unwrap().values, [0.1, 0.2, 0.3]);

    let ramp = dir.path().join("ramp.txt");
    std::fs::write(&ramp, "400,0\n800,1\n").unwrap();
    let p = read_prior(&ramp, 5, None).unwrap();
    for (a, b) in p.values.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
        assert!((a - b).abs() < 1e-12);
    }
    let grid = [400.0, 500.0, 600.0, 700.0, 800.0];
    assert_eq!(read_prior(&ramp, 5, Some(&grid)).unwrap().values, p.values);

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "500,0\n400,1\n600,2\n").unwrap();
    assert!(read_prior(&bad, 5, None).is_err());

    let written = dir.path().join("w.txt");
    let vals = [0.1, 1.0 / 3.0, 0.7];
    write_text(&written, &prior_text(&vals, None)).unwrap();
    assert_eq!(read_prior(&written, 3, None).unwrap().values, vals);
}

fn toy_report() -> (specdetect_core::eval::RocReport, specdetect_core::eval::SeparabilityStats) {
    let scores = [0.9, 0.8, 0.1, 0.4, 0.3, 0.0, 1.0, 0.2];
    let truth = LabelMap::new(2, 4, vec![1, 1, 0, 0, 0, 0, 1, 0]).unwrap();
    (roc_report(&scores, &truth, 50).unwrap(), separability_stats(&scores, &truth).unwrap())
}

#[test]
fn roc_csv_shape_and_round_trip() {
    let (r, _) = toy_report();
    let csv = roc_csv(&r.curves);
    assert_eq!(csv.lines().count(), r.curves.tau.len() + 1);
    assert_eq!(csv.lines().next(), Some("tau,pd,pf"));
    let rows = parse_roc_csv(&csv).unwrap();
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row, &[r.curves.tau[k], r.curves.pd[k], r.curves.pf[k]]);
    }
}

#[test]
fn report_json_schema_and_round_trip() {
    let (r, s) = toy_report();
    let j = ReportJson::new(&r, &s);
    let text = j.to_json();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut keys: Vec<&str> = value.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    let mut expected = REPORT_KEYS.to_vec();
    expected.sort_unstable();
    assert_eq!(keys, expected);
    let back = ReportJson::from_json(&text).unwrap();
    for (a, b) in [
        (back.auc_pf_pd, r.auc_pf_pd),
        (back.auc_tau_pd, r.auc_tau_pd),
        (back.auc_tau_pf, r.auc_tau_pf),
        (back.auc_oa, r.auc_oa),
        (back.auc_snpr.unwrap(), r.auc_snpr),
    ] {
        assert!((a - b).abs() <= 1e-9);
    }
    assert_eq!(back.grid, 50);
    assert_eq!((back.targets, back.background), (3, 5));
    assert_eq!(back.target_scores.median, 0.9);
}

#[test]
fn infinite_snpr_is_null_with_flag() {
    use specdetect_core::eval::{auc_suite, RocCurves};
    let curves = RocCurves {
        tau: vec![0.0, 0.5, 1.0],
        pd: vec![1.0, 1.0, 0.5],
        pf: vec![0.0, 0.0, 0.0],
        targets: 2,
        background: 3,
    };
    let r = auc_suite(curves).unwrap();
    assert!(r.snpr_infinite);
    let (_, s) = toy_report();
    let value: serde_json::Value = serde_json::from_str(&ReportJson::new(&r, &s).to_json()).unwrap();
    assert!(value["auc_snpr"].is_null());
    assert_eq!(value["auc_snpr_infinite"], true);
    let back = ReportJson::from_json(&value.to_string()).unwrap();
    assert_eq!(back.auc_snpr, None);
}

#[test]
fn loss_trace_round_trip() {
    let trace = vec![
        LossRecord {
            iteration: 0,
            loss_cl: 2.3,
            loss_de: 0.69,
            loss_phy: 0.1,
            loss_total: 3.0,
        },
        LossRecord {
            iteration: 1,
            loss_cl: 1.0 / 3.0,
            loss_de: 0.0,
            loss_phy: 1e-12,
            loss_total: 0.333_333_333_334,
        },
    ];
    let csv = loss_trace_csv(&trace);
    assert_eq!(csv.lines().next(), Some("iteration,loss_cl,loss_de,loss_phy,loss_total"));
    assert_eq!(parse_loss_trace_csv(&csv).unwrap(), trace);
}
