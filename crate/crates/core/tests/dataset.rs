use sclld::dataset::{generate_synthetic, load_manifest, partition_dataset, Label, MANIFEST_NAME};
use sclld::imaging::{load_pgm, sobel_gradients};

#[test]
fn covid_images_carry_more_edge_energy() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate_synthetic(200, 0, dir.path()).unwrap();
    let mut sums = [0.0; 2];
    for s in &samples {
        let img = load_pgm(&s.image_path).unwrap();
        assert_eq!((img.width(), img.height()), (100, 100));
        let px = img.pixels();
        assert_eq!(px.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(px.iter().copied().fold(0.0, f64::max), 255.0);
        let (gx, gy) = sobel_gradients(&img).unwrap();
        let mean = gx.pixels().iter().zip(gy.pixels()).map(|(a, b)| a.hypot(*b)).sum::<f64>() / 1e4;
        sums[s.label().unwrap().as_u8() as usize] += mean;
    }
    assert!(sums[1] > sums[0], "healthy {} covid {}", sums[0] / 100.0, sums[1] / 100.0);
}

#[test]
fn manifest_roundtrip_and_reference_split() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate_synthetic(100, 2, dir.path()).unwrap();
    let loaded = load_manifest(dir.path().join(MANIFEST_NAME)).unwrap();
    assert_eq!(loaded, samples);
    assert_eq!(loaded.iter().filter(|s| s.label() == Some(Label::Covid)).count(), 50);

    let split = partition_dataset(&loaded, 0.10, 0).unwrap();
    assert_eq!(split.test.len(), 20);
    assert_eq!(split.train_labelled.len() + split.validation.len(), 8);
    assert_eq!(split.validation.len(), 2);
    assert_eq!(split.train_unlabelled.len(), 72);
    assert_eq!(partition_dataset(&loaded, 0.10, 0).unwrap(), split);
    assert_ne!(partition_dataset(&loaded, 0.10, 1).unwrap().test, split.test);
}
