use r4t::diffusion::{read_state, write_state, load_state, save_state, DenoiserState, DiffusionConfig};
use r4t::error::Error;
use r4t::numerics::Rng;
use r4t::policy::PolicyParams;
use r4t::store::{generate_world, read_db, write_db, SyntheticWorld, WorldParams};
use r4t::synth::{harvest, load_dataset, read_dataset, save_dataset, synthesize, write_dataset, HarvestConfig, TargetMode};

fn world() -> SyntheticWorld {
    generate_world(&WorldParams {
        seed: 4,
        dim: 8,
        clusters: 4,
        items_per_cluster: 25,
        query_count: 10,
        ..WorldParams::default()
    })
    .unwrap()
}

fn assert_rejects_damage<T: std::fmt::Debug>(bytes: &[u8], read: impl Fn(&[u8]) -> r4t::error::Result<T>) {
    let mut bad = bytes.to_vec();
    bad[1] ^= 0xff;
    match read(&bad) {
        Err(Error::Format { offset: 0, .. }) => {}
        other => panic!("bad magic gave {other:?}"),
    }
    for cut in [3, bytes.len() / 2, bytes.len() - 1] {
        match read(&bytes[..cut]) {
            Err(Error::Format { offset, message }) => {
                assert!(offset as usize <= cut, "offset {offset} past cut {cut}");
                assert!(!message.is_empty());
            }
            other => panic!("truncation at {cut} gave {other:?}"),
        }
    }
    let mut long = bytes.to_vec();
    long.push(0);
    assert!(read(&long).unwrap_err().is_format());
}

#[test]
fn database_round_trip() {
    let w = world();
    let bytes = write_db(&w.db);
    let back = read_db(&bytes).unwrap();
    assert_eq!(back.ids(), w.db.ids());
    assert_eq!(write_db(&back), bytes);
    assert_rejects_damage(&bytes, read_db);
}

#[test]
fn world_directory_round_trip() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    w.save(dir.path()).unwrap();
    let back = SyntheticWorld::load(dir.path()).unwrap();
    assert_eq!(back.queries.len(), w.queries.len());
    for (a, b) in back.queries.iter().zip(&w.queries) {
        assert_eq!((a.id, &a.components, &a.reference, a.split), (b.id, &b.components, &b.reference, b.split));
    }
    assert_eq!(back.token_cluster, w.token_cluster);
    let again = tempfile::tempdir().unwrap();
    back.save(again.path()).unwrap();
    for name in std::fs::read_dir(dir.path()).unwrap() {
        let name = name.unwrap().file_name();
        assert_eq!(
            std::fs::read(dir.path().join(&name)).unwrap(),
            std::fs::read(again.path().join(&name)).unwrap(),
            "{name:?} differs after a reload"
        );
    }
}

#[test]
fn policy_round_trip() {
    let w = world();
    let p = PolicyParams::random(w.vocab_size(), w.dim(), 1.5, 0.8, &mut Rng::new(1)).unwrap();
    let bytes = p.to_bytes();
    let back = PolicyParams::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.temperature, 0.8);
    assert_rejects_damage(&bytes, PolicyParams::from_bytes);
}

#[test]
fn dataset_round_trip_both_modes() {
    let w = world();
    let p = PolicyParams::random(w.vocab_size(), w.dim(), 1.5, 1.0, &mut Rng::new(2)).unwrap();
    let cfg = HarvestConfig {
        samples_per_query: 2,
        k: 3,
        n_per_subquery: 5,
        ..HarvestConfig::default()
    };
    let samples = harvest(&p, &w, &cfg, &mut Rng::new(3)).unwrap();
    for mode in [TargetMode::Oar, TargetMode::Wscr] {
        let records = synthesize(&w, &samples, mode, 5, &mut Rng::new(4)).unwrap();
        let bytes = write_dataset(&records).unwrap();
        let back = read_dataset(&bytes).unwrap();
        assert_eq!(back.len(), records.len());
        assert!(back.iter().all(|r| r.target.mode == mode));
        assert_eq!(write_dataset(&back).unwrap(), bytes);
        assert_rejects_damage(&bytes, read_dataset);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.r4ts");
        save_dataset(&back, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), back);
    }
}

#[test]
fn denoiser_round_trip() {
    let cfg = DiffusionConfig {
        l: 3,
        d: 8,
        width: 16,
        depth: 2,
        ..DiffusionConfig::default()
    };
    let s = DenoiserState::new(cfg, &mut Rng::new(5)).unwrap();
    let bytes = write_state(&s);
    let back = read_state(&bytes).unwrap();
    assert_eq!(write_state(&back), bytes);
    assert_rejects_damage(&bytes, read_state);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.r4td");
    save_state(&back, &path).unwrap();
    assert_eq!(load_state(&path).unwrap(), back);
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(&dir.path().join("nope")), Err(Error::Io(_))));
    assert!(matches!(SyntheticWorld::load(dir.path()), Err(Error::Io(_))));
}
