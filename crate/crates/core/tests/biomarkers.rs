use ctquant::biomarkers::{
    aorta_morphology, calcium_scores, extract_all, heart_morphology, lung_texture, pericardial_fat, Biomarker,
    BiomarkerError, ScanMasks,
};
use ctquant::phantom::{bundled, generate, Phantom, BUNDLED};
use ctquant::volume::{labels, CtVolume, Dims, Geometry, LabelMask, MaskSchema};
use proptest::prelude::*;

fn all_masks(p: &Phantom) -> ScanMasks<'_> {
    ScanMasks {
        pericardium: Some(&p.pericardium),
        calcium: Some(&p.calcium),
        aorta: Some(&p.aorta),
        lungs: Some(&p.lungs),
    }
}

#[test]
fn extract_all_matches_individual_operations() {
    let p = generate(&bundled("baseline").unwrap()).unwrap();
    let v = extract_all(&p.volume, all_masks(&p)).unwrap();
    let fat = pericardial_fat(&p.volume, &p.pericardium).unwrap();
    let calc = calcium_scores(&p.volume, &p.calcium).unwrap();
    let aorta = aorta_morphology(&p.aorta).unwrap();
    let heart = heart_morphology(&p.volume, &p.pericardium, &p.lungs).unwrap();
    let lungs = lung_texture(&p.volume, &p.lungs).unwrap();
    let expected = [
        (Biomarker::Pfatv, fat.pfatv),
        (Biomarker::Pfatm, fat.pfatm),
        (Biomarker::Pfatstd, fat.pfatstd),
        (Biomarker::Cacs, calc.cacs),
        (Biomarker::Cacv, calc.cacv),
        (Biomarker::Acs, calc.acs),
        (Biomarker::Acv, calc.acv),
        (Biomarker::Ati, aorta.ati),
        (Biomarker::Amd, aorta.amd),
        (Biomarker::Amdstd, aorta.amdstd),
        (Biomarker::Chr, heart.chr),
        (Biomarker::Cld, heart.cld),
        (Biomarker::Csd, heart.csd),
        (Biomarker::Ctr, heart.ctr),
        (Biomarker::Llr, lungs.llr),
        (Biomarker::Rlr, lungs.rlr),
        (Biomarker::Lhr, lungs.lhr),
        (Biomarker::Rhr, lungs.rhr),
    ];
    for (b, m) in expected {
        assert_eq!(v.get(b), m, "{b}");
    }
}

#[test]
fn bundled_phantoms_satisfy_range_invariants() {
    for (name, _) in BUNDLED {
        let p = generate(&bundled(name).unwrap()).unwrap();
        let v = extract_all(&p.volume, all_masks(&p)).unwrap();
        assert!(v.invariant_violations().is_empty(), "{name}: {:?}", v.invariant_violations());
    }
}

#[test]
fn mismatched_mask_grid_is_rejected_before_geometry() {
    let g = Geometry::new(Dims::new(10, 10, 10), [1.0; 3], [0.0; 3]).unwrap();
    let other = Geometry::new(Dims::new(10, 10, 9), [1.0; 3], [0.0; 3]).unwrap();
    let v = CtVolume::filled(g, 0).unwrap();
    let aorta = LabelMask::empty(other, MaskSchema::Aorta).unwrap();
    let masks = ScanMasks {
        aorta: Some(&aorta),
        ..ScanMasks::default()
    };
    assert!(matches!(extract_all(&v, masks), Err(BiomarkerError::DimsMismatch { .. })));
    let calcium = LabelMask::empty(g, MaskSchema::Lungs).unwrap();
    let masks = ScanMasks {
        calcium: Some(&calcium),
        ..ScanMasks::default()
    };
    assert!(matches!(extract_all(&v, masks), Err(BiomarkerError::SchemaMismatch { .. })));
}

fn grid() -> Geometry {
    Geometry::new(Dims::new(24, 24, 6), [0.5, 0.5, 1.0], [0.0; 3]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adding_fat_voxel_never_lowers_pfatv(
        cells in proptest::collection::vec((0usize..24 * 24 * 6, -190i16..=-30), 1..60),
        extra in 0usize..24 * 24 * 6,
    ) {
        let g = grid();
        let mut v = CtVolume::filled(g, 40).unwrap();
        let mut m = LabelMask::empty(g, MaskSchema::Pericardium).unwrap();
        for &(i, hu) in &cells {
            v.set(i, hu);
            m.set(i, labels::PERICARDIUM).unwrap();
        }
        let before = pericardial_fat(&v, &m).unwrap().pfatv.value;
        v.set(extra, -100);
        m.set(extra, labels::PERICARDIUM).unwrap();
        let after = pericardial_fat(&v, &m).unwrap().pfatv.value;
        prop_assert!(after >= before);
    }

    #[test]
    fn adding_calcium_voxel_never_lowers_volumes(
        cells in proptest::collection::vec((0usize..24 * 24 * 6, 130i16..900, 1u8..=2), 1..40),
        extra in 0usize..24 * 24 * 6,
        extra_label in 1u8..=2,
    ) {
        let g = grid();
        let mut v = CtVolume::filled(g, 0).unwrap();
        let mut m = LabelMask::empty(g, MaskSchema::Calcium).unwrap();
        for &(i, hu, l) in &cells {
            v.set(i, hu);
            m.set(i, l).unwrap();
        }
        let before = calcium_scores(&v, &m).unwrap();
        v.set(extra, 500);
        m.set(extra, extra_label).unwrap();
        let after = calcium_scores(&v, &m).unwrap();
        prop_assert!(after.cacv.value >= before.cacv.value);
        prop_assert!(after.acv.value >= before.acv.value);
    }

    #[test]
    fn agatston_is_translation_invariant_in_plane(
        lesions in proptest::collection::vec((0usize..10, 0usize..10, 0usize..6, 1usize..5, 1usize..5, 130i16..600, 1u8..=2), 1..5),
        dx in 0usize..8,
        dy in 0usize..8,
    ) {
        let g = grid();
        let build = |ox: usize, oy: usize| {
            let mut v = CtVolume::filled(g, 0).unwrap();
            let mut m = LabelMask::empty(g, MaskSchema::Calcium).unwrap();
            for &(x0, y0, z, w, h, hu, l) in &lesions {
                for y in y0..y0 + h {
                    for x in x0..x0 + w {
                        let i = g.dims.index(x + ox, y + oy, z);
                        v.set(i, hu);
                        m.set(i, l).unwrap();
                    }
                }
            }
            calcium_scores(&v, &m).unwrap()
        };
        let a = build(0, 0);
        let b = build(dx, dy);
        prop_assert_eq!(a.cacs, b.cacs);
        prop_assert_eq!(a.acs, b.acs);
    }
}
