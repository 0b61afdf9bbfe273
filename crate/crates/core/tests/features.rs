use ctquant::biomarkers::{Biomarker, Measurement, Status};
use ctquant::features::{
    apply_normalizer, fit_normalizer, read_features_csv, read_features_json, stub_featurize, write_features_csv,
    write_features_json, FeatureRecord, DEEP_FEATURE_DIM,
};
use ctquant::phantom::{bundled, generate};
use ctquant::training::synthetic_cohort;
use proptest::prelude::*;
use sha2::{Digest, Sha256};

/// SHA-256 of the stub features of the bundled baseline phantom, as
/// little-endian f64 bytes.
const BASELINE_STUB_SHA256: &str = "47dd5df465fcf589cd0bc0721944f74c4cb7e5ffdb9675c41a90d6d61169c860";

#[test]
fn stub_features_are_hash_stable() {
    let p = generate(&bundled("baseline").unwrap()).unwrap();
    let x1 = stub_featurize(&p.volume, &p.pericardium).unwrap();
    assert_eq!(x1.len(), DEEP_FEATURE_DIM);
    let again = stub_featurize(&p.volume, &p.pericardium).unwrap();
    assert_eq!(x1, again);
    let bytes: Vec<u8> = x1.iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(hex::encode(Sha256::digest(bytes)), BASELINE_STUB_SHA256);
}

fn flag_some(records: &mut [FeatureRecord]) {
    for (i, r) in records.iter_mut().enumerate() {
        if i % 7 == 0 {
            r.biomarkers.set(Biomarker::Ati, Measurement::failed());
        }
        if i % 11 == 0 {
            r.biomarkers.set(Biomarker::Lhr, Measurement::empty());
        }
        if i % 3 == 0 {
            r.label = None;
        }
    }
}

#[test]
fn export_import_is_identity_on_generated_cohort() {
    let mut cohort = synthetic_cohort(40, DEEP_FEATURE_DIM, Biomarker::Amd, 5);
    flag_some(&mut cohort);
    let mut csv = Vec::new();
    write_features_csv(&mut csv, &cohort).unwrap();
    assert_eq!(read_features_csv(csv.as_slice()).unwrap(), cohort);
    let mut json = Vec::new();
    write_features_json(&mut json, &cohort).unwrap();
    assert_eq!(read_features_json(json.as_slice()).unwrap(), cohort);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn normalizer_inverts_unflagged_fields(seed in any::<u64>(), n in 2usize..30) {
        let mut cohort = synthetic_cohort(n, DEEP_FEATURE_DIM, Biomarker::Cacs, seed);
        flag_some(&mut cohort);
        let stats = fit_normalizer(&cohort).unwrap();
        for r in &cohort {
            let z = apply_normalizer(&stats, r);
            let back = stats.invert(&z);
            for b in Biomarker::ALL {
                let (orig, z_m, rec) = (r.biomarkers.get(b), z.biomarkers.get(b), back.biomarkers.get(b));
                prop_assert_eq!(z_m.status, orig.status);
                if orig.status == Status::Ok {
                    prop_assert!((rec.value - orig.value).abs() <= 1e-9 * orig.value.abs().max(1.0));
                } else {
                    prop_assert_eq!(z_m.value, 0.0);
                }
            }
            for (a, b) in r.x1.iter().zip(&back.x1) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
