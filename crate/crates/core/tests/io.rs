use dins_core::volume::{
    decode_raw, encode_raw, read_volume, write_mask, write_volume, Dims, Mask, RawHeader, Spacing, Volume, VolumeFormat,
};
use proptest::prelude::*;

fn volume() -> impl Strategy<Value = Volume> {
    (1usize..5, 1usize..9, 1usize..9, 0.1f64..10.0, 0.1f64..3.0, 0.1f64..3.0).prop_flat_map(|(d, h, w, sz, sy, sx)| {
        prop::collection::vec(-1e4f32..1e4, d * h * w)
            .prop_map(move |v| Volume::from_vec(Dims::new(d, h, w), Spacing::new(sz, sy, sx), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn raw_files_round_trip_exactly(v in volume()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.raw");
        write_volume(&v, &path, VolumeFormat::RawJson).unwrap();
        let back = read_volume(&path, VolumeFormat::RawJson).unwrap();
        prop_assert_eq!(back.spacing(), v.spacing());
        prop_assert_eq!(back, v);
    }

    #[test]
    fn nifti_files_round_trip(v in volume()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.nii");
        prop_assert_eq!(VolumeFormat::from_path(&path), VolumeFormat::Nifti1);
        write_volume(&v, &path, VolumeFormat::Nifti1).unwrap();
        let back = read_volume(&path, VolumeFormat::Nifti1).unwrap();
        prop_assert_eq!(back.data(), v.data());
        prop_assert_eq!(back.dims(), v.dims());
        for (a, b) in back.spacing().as_array().iter().zip(v.spacing().as_array()) {
            // NIfTI stores spacing as f32.
            prop_assert!((a - b).abs() <= 1e-6 * b);
        }
    }

    #[test]
    fn raw_payload_is_little_endian_zyx(v in volume()) {
        let bytes = encode_raw(&v);
        prop_assert_eq!(bytes.len(), 4 * v.dims().len());
        for (chunk, &x) in bytes.chunks_exact(4).zip(v.data()) {
            prop_assert_eq!(f32::from_le_bytes(chunk.try_into().unwrap()), x);
        }
        prop_assert_eq!(decode_raw(&RawHeader::for_volume(&v), &bytes).unwrap(), v);
    }
}

#[test]
fn masks_are_written_as_zero_one_volumes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mask.raw");
    let d = Dims::new(2, 3, 4);
    let m = Mask::from_vec(d, Spacing::new(6.0, 1.3, 1.3), (0..d.len()).map(|i| i % 3 == 0).collect()).unwrap();
    write_mask(&m, &path, VolumeFormat::RawJson).unwrap();
    let v = read_volume(&path, VolumeFormat::RawJson).unwrap();
    assert_eq!(v.threshold(0.5), m);
    assert!(v.data().iter().all(|&x| x == 0.0 || x == 1.0));
    let header: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("mask.json")).unwrap()).unwrap();
    assert_eq!(header["dims"], serde_json::json!([2, 3, 4]));
    assert_eq!(header["order"], "zyx");
}

#[test]
fn truncated_payloads_and_bad_headers_are_rejected() {
    let v = Volume::zeros(Dims::new(2, 2, 2), Spacing::UNIT);
    let bytes = encode_raw(&v);
    let header = RawHeader::for_volume(&v);
    assert!(decode_raw(&header, &bytes[..bytes.len() - 4]).is_err());
    assert!(decode_raw(&RawHeader { dtype: "f64".into(), ..header.clone() }, &bytes).is_err());
    assert!(decode_raw(&RawHeader { order: "xyz".into(), ..header }, &bytes).is_err());
    let dir = tempfile::tempdir().unwrap();
    assert!(read_volume(&dir.path().join("missing.raw"), VolumeFormat::RawJson).is_err());
}
