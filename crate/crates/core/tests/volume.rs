use ctquant::phantom::{bundled, generate};
use ctquant::volume::{
    load_mask, load_volume, save_mask, save_volume, CtVolume, Dims, Geometry, LabelMask, MaskSchema, VolumeError,
    HU_MAX, HU_MIN,
};
use proptest::prelude::*;

fn geometry_strategy() -> impl Strategy<Value = Geometry> {
    (1usize..9, 1usize..9, 1usize..7, 0.1f64..5.0, 0.1f64..5.0, 0.1f64..5.0, -500.0f64..500.0)
        .prop_map(|(nx, ny, nz, sx, sy, sz, o)| Geometry::new(Dims::new(nx, ny, nz), [sx, sy, sz], [o, -o, o / 3.0]).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn volume_save_load_is_identity(g in geometry_strategy(), seed in any::<u64>()) {
        let n = g.dims.len();
        let data: Vec<i16> = (0..n)
            .map(|i| {
                let h = (seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)) % (HU_MAX as i64 - HU_MIN as i64 + 1) as u64;
                (h as i64 + HU_MIN as i64) as i16
            })
            .collect();
        let (v, clamped) = CtVolume::new(g, data).unwrap();
        prop_assert_eq!(clamped, 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ctqh");
        save_volume(&v, &path).unwrap();
        let header = std::fs::read(&path).unwrap();
        let back = load_volume(&path).unwrap();
        prop_assert_eq!(&back, &v);
        // load∘save reproduces the same header bytes.
        save_volume(&back, &path).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), header);
    }

    #[test]
    fn any_single_byte_payload_corruption_is_detected(g in geometry_strategy(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let n = g.dims.len();
        let m = LabelMask::new(g, MaskSchema::Lungs, (0..n).map(|i| (i % 3) as u8).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ctqh");
        save_mask(&m, &path).unwrap();
        let raw = dir.path().join("m.raw");
        let mut bytes = std::fs::read(&raw).unwrap();
        let k = pos.index(bytes.len());
        bytes[k] ^= 1 << bit;
        std::fs::write(&raw, &bytes).unwrap();
        prop_assert!(
            matches!(load_mask(&path, MaskSchema::Lungs), Err(VolumeError::ChecksumMismatch { .. })),
            "byte {} bit {} not detected", k, bit
        );
    }
}

#[test]
fn phantom_masks_round_trip() {
    let p = generate(&bundled("coarse_slices").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for m in [&p.pericardium, &p.calcium, &p.aorta, &p.lungs] {
        let path = dir.path().join(format!("{}.ctqh", m.schema.name()));
        save_mask(m, &path).unwrap();
        assert_eq!(&load_mask(&path, m.schema).unwrap(), m);
    }
    let path = dir.path().join("volume.ctqh");
    save_volume(&p.volume, &path).unwrap();
    assert_eq!(load_volume(&path).unwrap(), p.volume);
}
