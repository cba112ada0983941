use seqbox::io::{read_dataset, read_manifest, Split};
use seqbox::pipeline::*;
use seqbox::Error;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

fn small() -> GenerateConfig {
    let mut cfg = GenerateConfig { n_scenes: 3, frames_per_sequence: 8, ..Default::default() };
    cfg.annotate.clip_len = 4;
    cfg.annotate.stride = 4;
    cfg.annotate.val_fraction = 0.34;
    cfg
}

/// Every file under `root`, keyed by its relative path.
fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn generate_is_deterministic_and_annotate_reproduces_it() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = generate(&small(), a.path()).unwrap();
    generate(&small(), b.path()).unwrap();
    let first = snapshot(a.path());
    assert_eq!(first, snapshot(b.path()));
    assert_eq!(m.raw.len(), 3);
    assert_eq!(m.sequences.len(), 6);
    assert_eq!(m.sequences.iter().filter(|s| s.split == Split::Val).count(), 2);

    // annotate on the raw part alone
    fs::remove_dir_all(b.path().join("clips")).unwrap();
    fs::remove_file(b.path().join("manifest.json")).unwrap();
    annotate(b.path(), &small().annotate).unwrap();
    assert_eq!(first, snapshot(b.path()));
    // and again with the manifest in place
    annotate(b.path(), &small().annotate).unwrap();
    assert_eq!(first, snapshot(b.path()));

    let clips = read_dataset(a.path(), None).unwrap();
    assert!(clips.iter().all(|c| c.len() == 4));
    assert_eq!(read_manifest(a.path()).unwrap(), m);

    let other = tempfile::tempdir().unwrap();
    generate(&GenerateConfig { seed: 8, ..small() }, other.path()).unwrap();
    assert_ne!(first, snapshot(other.path()));
}

#[test]
fn smaller_depth_max_keeps_fewer_objects() {
    let dir = tempfile::tempdir().unwrap();
    generate(&small(), dir.path()).unwrap();
    let mut last = usize::MAX;
    for depth_max in [10.0, 4.0, 2.5, 1.5] {
        let mut cfg = small().annotate;
        cfg.annotation.depth_max = depth_max;
        annotate(dir.path(), &cfg).unwrap();
        let kept: usize = read_dataset(dir.path(), None).unwrap().iter().map(|c| c.object_counts().iter().sum::<usize>()).sum();
        assert!(kept <= last, "depth_max {depth_max}: {kept} > {last}");
        last = kept;
    }
}

#[test]
fn config_errors() {
    let mut cfg = small();
    cfg.annotate.stride = 5;
    assert!(matches!(generate(&cfg, Path::new("/nonexistent")), Err(Error::Config(_))));
    let cfg = GenerateConfig { frames_per_sequence: 3, ..small() };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let parsed: GenerateConfig = toml::from_str("seed = 3\n[annotate]\nclip_len = 4\nstride = 2\n").unwrap();
    assert_eq!((parsed.seed, parsed.annotate.clip_len, parsed.annotate.stride, parsed.n_scenes), (3, 4, 2, 5));
    assert!(toml::from_str::<GenerateConfig>("sede = 3\n").is_err());
}

#[test]
fn empty_scenes_give_empty_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.scene.n_objects = 0;
    let m = generate(&cfg, dir.path()).unwrap();
    assert!(!m.sequences.is_empty());
    assert!(read_dataset(dir.path(), None).unwrap().iter().all(|c| c.object_counts().iter().all(|n| *n == 0)));
}
