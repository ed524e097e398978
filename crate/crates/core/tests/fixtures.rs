use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use tuvf::fixtures::{self, FixtureConfig};
use tuvf::geometry::TriMesh;

fn hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&p).unwrap())));
            }
        }
    }
    out
}

fn small() -> FixtureConfig {
    FixtureConfig {
        resolution: 24,
        ..FixtureConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    fixtures::gen_fixtures(a.path(), 5, &small()).unwrap();
    fixtures::gen_fixtures(b.path(), 5, &small()).unwrap();
    fixtures::gen_fixtures(c.path(), 6, &small()).unwrap();
    let (ha, hb, hc) = (hashes(a.path()), hashes(b.path()), hashes(c.path()));
    assert_eq!(ha, hb);
    assert_ne!(ha, hc);
}

#[test]
fn fixture_set_meets_the_floor_and_meshes_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    fixtures::gen_fixtures(dir.path(), 0, &cfg).unwrap();
    let shapes = tuvf::pipeline::shape_files(&dir.path().join("shapes")).unwrap();
    assert!(shapes.len() >= 10);
    assert!(cfg.views >= 8);
    let reals = tuvf::pipeline::list_files(&dir.path().join("reals"), &["png"]).unwrap();
    assert_eq!(reals.len(), shapes.len() * cfg.views);
    let cams = std::fs::read_to_string(dir.path().join("cameras.csv")).unwrap();
    assert_eq!(cams.lines().count(), reals.len() + 1);
    for p in &shapes {
        let text = std::fs::read_to_string(p).unwrap();
        let mesh = TriMesh::load(p).unwrap();
        assert_eq!(mesh.to_obj(), text, "{}", p.display());
        let again = TriMesh::parse_obj(&mesh.to_obj(), "again").unwrap();
        assert_eq!(again, mesh);
    }
    for p in tuvf::pipeline::list_files(&dir.path().join("clouds"), &["ply"]).unwrap() {
        let c = tuvf::pipeline::load_shape(&p, 1024, 0).unwrap();
        assert!(fixtures::outwardness(&c.points, c.normals.as_ref().unwrap()) > 0.5, "{}", p.display());
    }
}
