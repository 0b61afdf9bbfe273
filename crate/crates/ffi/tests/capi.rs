use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use ctquant::biomarkers::{extract_all, Biomarker, ScanMasks, BIOMARKER_COUNT};
use ctquant::features::fit_normalizer;
use ctquant::fusion::{feature_names, FusionConfig, FusionModel};
use ctquant::phantom::{bundled, generate};
use ctquant::training::synthetic_cohort;
use ctquant::volume::{save_mask, save_volume};
use ctquant_ffi::*;

fn c(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ctq_last_error()) }.to_str().unwrap().to_string()
}

fn small_model(dir: &Path) -> (FusionModel, CString) {
    let cohort = synthetic_cohort(40, 512, Biomarker::Ati, 2);
    let mut model = FusionModel::new(FusionConfig {
        embed_width: 8,
        head_width: 4,
        encoder_hidden: 8,
        seed: 7,
        ..FusionConfig::default()
    })
    .unwrap();
    model.normalizer = Some(fit_normalizer(&cohort).unwrap());
    let path = dir.join("model.json");
    model.save(&path).unwrap();
    (model, c(&path))
}

#[test]
fn extraction_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate(&bundled("baseline").unwrap()).unwrap();
    let files = ["volume", "pericardium", "calcium", "aorta", "lungs"].map(|n| dir.path().join(format!("{n}.ctqh")));
    save_volume(&p.volume, &files[0]).unwrap();
    for (m, f) in [&p.pericardium, &p.calcium, &p.aorta, &p.lungs].into_iter().zip(&files[1..]) {
        save_mask(m, f).unwrap();
    }
    let names = files.each_ref().map(|f| c(f));
    let mut values = [0.0; BIOMARKER_COUNT];
    let mut statuses = [9u8; BIOMARKER_COUNT];
    let rc = unsafe {
        ctq_extract_biomarkers(
            names[0].as_ptr(),
            names[1].as_ptr(),
            names[2].as_ptr(),
            names[3].as_ptr(),
            names[4].as_ptr(),
            values.as_mut_ptr(),
            statuses.as_mut_ptr(),
            values.len(),
        )
    };
    assert_eq!(rc, CtqStatus::Ok, "{}", last_error());
    let expected = extract_all(
        &p.volume,
        ScanMasks {
            pericardium: Some(&p.pericardium),
            calcium: Some(&p.calcium),
            aorta: Some(&p.aorta),
            lungs: Some(&p.lungs),
        },
    )
    .unwrap();
    assert_eq!(&values, expected.values());
    assert!(statuses.iter().all(|&s| s == CTQ_MEASUREMENT_OK));

    // Without the aorta mask its biomarkers fail but the rest still compute.
    let rc = unsafe {
        ctq_extract_biomarkers(
            names[0].as_ptr(),
            names[1].as_ptr(),
            names[2].as_ptr(),
            ptr::null(),
            names[4].as_ptr(),
            values.as_mut_ptr(),
            statuses.as_mut_ptr(),
            values.len(),
        )
    };
    assert_eq!(rc, CtqStatus::Ok);
    assert_eq!(statuses[Biomarker::Amd.index()], CTQ_MEASUREMENT_FAILED);
    assert_eq!(statuses[Biomarker::Cacs.index()], CTQ_MEASUREMENT_OK);

    let short = unsafe {
        ctq_extract_biomarkers(
            names[0].as_ptr(),
            ptr::null(),
            ptr::null(),
            ptr::null(),
            ptr::null(),
            values.as_mut_ptr(),
            statuses.as_mut_ptr(),
            3,
        )
    };
    assert_eq!(short, CtqStatus::BufferTooSmall);
    let missing = c(&dir.path().join("absent.ctqh"));
    let rc = unsafe {
        ctq_extract_biomarkers(
            missing.as_ptr(),
            ptr::null(),
            ptr::null(),
            ptr::null(),
            ptr::null(),
            values.as_mut_ptr(),
            statuses.as_mut_ptr(),
            values.len(),
        )
    };
    assert_eq!(rc, CtqStatus::Volume);
    assert!(!last_error().is_empty());
}

#[test]
fn prediction_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = small_model(dir.path());
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { ctq_model_load(path.as_ptr(), &mut handle) }, CtqStatus::Ok);
    assert_eq!(unsafe { ctq_model_deep_width(handle) }, 512);
    for record in synthetic_cohort(5, 512, Biomarker::Ati, 9) {
        let statuses: Vec<u8> = record.biomarkers.statuses().iter().map(|s| *s as u8).collect();
        let mut probability = -1.0;
        let mut scores = vec![0.0; ctq_feature_count()];
        let rc = unsafe {
            ctq_model_predict(
                handle,
                record.x1.as_ptr(),
                record.x1.len(),
                record.biomarkers.values().as_ptr(),
                statuses.as_ptr(),
                BIOMARKER_COUNT,
                &mut probability,
                scores.as_mut_ptr(),
                scores.len(),
            )
        };
        assert_eq!(rc, CtqStatus::Ok, "{}", last_error());
        let expected = model.predict(&record).unwrap();
        assert_eq!(probability, expected.probability);
        assert_eq!(scores, expected.scores);
    }

    let record = &synthetic_cohort(1, 512, Biomarker::Ati, 9)[0];
    let mut probability = 0.0;
    let mut scores = vec![0.0; ctq_feature_count()];
    let bad_status = [7u8; BIOMARKER_COUNT];
    let rc = unsafe {
        ctq_model_predict(
            handle,
            record.x1.as_ptr(),
            record.x1.len(),
            record.biomarkers.values().as_ptr(),
            bad_status.as_ptr(),
            BIOMARKER_COUNT,
            &mut probability,
            scores.as_mut_ptr(),
            scores.len(),
        )
    };
    assert_eq!(rc, CtqStatus::InvalidArgument);
    let ok_status = [0u8; BIOMARKER_COUNT];
    let rc = unsafe {
        ctq_model_predict(
            handle,
            record.x1.as_ptr(),
            10,
            record.biomarkers.values().as_ptr(),
            ok_status.as_ptr(),
            BIOMARKER_COUNT,
            &mut probability,
            scores.as_mut_ptr(),
            scores.len(),
        )
    };
    assert_eq!(rc, CtqStatus::Model);
    assert!(last_error().contains("10"), "{}", last_error());
    unsafe { ctq_model_free(handle) };
    unsafe { ctq_model_free(ptr::null_mut()) };
}

#[test]
fn tampered_model_and_null_arguments_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = small_model(dir.path());
    let file = dir.path().join("model.json");
    let mut bytes = std::fs::read(&file).unwrap();
    let at = bytes.windows(8).position(|w| w == b"\"data\":[").unwrap() + 8;
    let digit = at + bytes[at..].iter().position(|b| b.is_ascii_digit()).unwrap();
    bytes[digit] = if bytes[digit] == b'4' { b'5' } else { b'4' };
    std::fs::write(&file, bytes).unwrap();

    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { ctq_model_load(path.as_ptr(), &mut handle) }, CtqStatus::Model);
    assert!(handle.is_null());
    assert!(last_error().contains("checksum"), "{}", last_error());
    assert_eq!(unsafe { ctq_model_load(ptr::null(), &mut handle) }, CtqStatus::NullArgument);
    let invalid = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { ctq_model_load(invalid.as_ptr().cast(), &mut handle) },
        CtqStatus::InvalidString
    );
}

#[test]
fn feature_names_are_exposed() {
    let names: Vec<String> = (0..ctq_feature_count())
        .map(|i| unsafe { CStr::from_ptr(ctq_feature_name(i)) }.to_str().unwrap().to_string())
        .collect();
    assert_eq!(names, feature_names());
    assert!(ctq_feature_name(ctq_feature_count()).is_null());
    assert_eq!(ctq_biomarker_count(), BIOMARKER_COUNT);
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ctquant.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ CtqModel *m = 0; return ctq_model_load(\"x\", &m) == CTQ_STATUS_OK; }}\n",
            header.display()
        ),
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
}
