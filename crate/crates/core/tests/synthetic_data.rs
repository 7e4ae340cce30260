use illu_core::dataset::{generate_synthetic, DatasetManifest, Domain, Fractions, Split, SyntheticConfig};

fn config(domain: Domain, seed: u64) -> SyntheticConfig {
    SyntheticConfig { num_classes: 3, per_class: 6, side: 32, domain, seed, ..Default::default() }
}

fn file_bytes(m: &DatasetManifest) -> Vec<Vec<u8>> {
    m.records.iter().map(|r| std::fs::read(m.resolve(r)).unwrap()).collect()
}

#[test]
fn same_seed_writes_identical_files() {
    for domain in [Domain::Natural, Domain::Illustration] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_synthetic(&config(domain, 7), a.path()).unwrap();
        let mb = generate_synthetic(&config(domain, 7), b.path()).unwrap();
        assert_eq!(ma.records, mb.records);
        assert_eq!(file_bytes(&ma), file_bytes(&mb));
        assert_eq!(
            std::fs::read(a.path().join("manifest.tsv")).unwrap(),
            std::fs::read(b.path().join("manifest.tsv")).unwrap()
        );
        let c = tempfile::tempdir().unwrap();
        let mc = generate_synthetic(&config(domain, 8), c.path()).unwrap();
        assert_ne!(file_bytes(&ma), file_bytes(&mc));
    }
}

#[test]
fn manifest_on_disk_matches_returned_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(&config(Domain::Illustration, 1), dir.path()).unwrap();
    assert_eq!(DatasetManifest::read(&dir.path().join("manifest.tsv")).unwrap(), m);
    assert_eq!(m.class_names, ["disk", "triangle", "cross"]);
    for class in &m.class_names {
        let count = |s| m.in_split(s).filter(|r| &r.class_name == class).count();
        assert_eq!(count(Split::Train) + count(Split::Val) + count(Split::Test), 6);
    }
}

/// Full reassignment among two classes keeps about half the train labels.
#[test]
fn full_label_noise_keeps_half_of_two_classes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig {
        num_classes: 2,
        per_class: 500,
        side: 32,
        domain: Domain::Illustration,
        label_noise: 1.0,
        fractions: Fractions::new(0.96, 0.02, 0.02).unwrap(),
        seed: 3,
    };
    let m = generate_synthetic(&cfg, dir.path()).unwrap();
    let train: Vec<_> = m.in_split(Split::Train).collect();
    assert_eq!(train.len(), 960);
    // ids encode the rendered class
    let kept = train.iter().filter(|r| r.id.starts_with(&format!("{}-", r.class_name))).count();
    let frac = kept as f64 / train.len() as f64;
    assert!((frac - 0.5).abs() <= 0.05, "{frac}");
    for r in m.records.iter().filter(|r| r.split != Some(Split::Train)) {
        assert!(r.id.starts_with(&format!("{}-", r.class_name)), "{r:?}");
    }
}

#[test]
fn unwritable_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, b"x").unwrap();
    assert!(generate_synthetic(&config(Domain::Natural, 1), &file.join("sub")).is_err());
}
