use std::fs;

use amodal_ls::dataset::{
    generate, generate_many, load_dataset, save_dataset, Manifest, SceneConfig, MANIFEST_FILE,
};
use amodal_ls::{Error, Exec};

#[test]
fn ten_thousand_seeds_give_valid_samples() {
    let cfg = SceneConfig::default();
    let samples = generate_many(0, 10_000, &cfg, Exec::default()).unwrap();
    for s in &samples {
        assert!(s.visible.is_subset_of(&s.amodal), "seed {}", s.seed);
        assert!(s.visible.count() > 0);
        assert_eq!(s.prompts.len(), cfg.prompt_count);
        for p in &s.prompts {
            let (x, y) = p.pixel();
            assert!(
                s.visible.get(x, y),
                "seed {}: prompt ({x},{y}) not visible",
                s.seed
            );
        }
        assert!(s.occlusion_rate >= cfg.min_occlusion && s.occlusion_rate < cfg.max_occlusion);
        assert!(s.image.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let first = &samples[..1000];
    let mean = first.iter().map(|s| s.occlusion_rate).sum::<f64>() / first.len() as f64;
    assert!((0.25..=0.45).contains(&mean), "mean occlusion {mean}");
}

#[test]
fn seed_fully_determines_the_sample() {
    let cfg = SceneConfig::default();
    let a = generate(42, &cfg).unwrap();
    let b = generate(42, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a
        .image
        .values()
        .iter()
        .zip(b.image.values())
        .all(|(p, q)| p.to_bits() == q.to_bits()));
    assert_ne!(generate(43, &cfg).unwrap().amodal, a.amodal);
    let seq = generate_many(40, 5, &cfg, Exec::Sequential).unwrap();
    assert_eq!(seq[2], a);
    assert_eq!(generate_many(40, 5, &cfg, Exec::default()).unwrap(), seq);
}

#[test]
fn save_load_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SceneConfig::default().with_size(32, 32);
    let samples = generate_many(100, 100, &cfg, Exec::default()).unwrap();
    save_dataset(dir.path(), &cfg, &samples).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.config, cfg);
    assert_eq!(loaded.samples.len(), samples.len());
    for (a, b) in loaded.samples.iter().zip(&samples) {
        assert_eq!(a, b);
        assert!(a
            .image
            .values()
            .iter()
            .zip(b.image.values())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn empty_directory_fails_to_load() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Load { .. })));
}

#[test]
fn tampered_checksum_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SceneConfig::default().with_size(16, 16);
    save_dataset(
        dir.path(),
        &cfg,
        &generate_many(0, 3, &cfg, Exec::Sequential).unwrap(),
    )
    .unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let mut manifest: Manifest = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    manifest.samples[1].sha256.amodal = "0".repeat(64);
    fs::write(&path, serde_json::to_vec(&manifest).unwrap()).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Integrity(_))));
}

#[test]
fn tampered_image_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SceneConfig::default().with_size(16, 16);
    save_dataset(
        dir.path(),
        &cfg,
        &generate_many(0, 2, &cfg, Exec::Sequential).unwrap(),
    )
    .unwrap();
    let png = dir.path().join("00000_image.png");
    let other = fs::read(dir.path().join("00001_image.png")).unwrap();
    fs::write(png, other).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Integrity(_))));
}
