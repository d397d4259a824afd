//! The committed fixture corpus is exactly what the generator produces.
//! Set REGENERATE_FIXTURES=1 to rewrite it.

mod common;

use std::collections::BTreeSet;
use std::path::Path;

use contract_qa_core::fixtures::{generate, write, DEFAULT_SEED};

fn files(root: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for sub in ["", "docs"] {
        for e in std::fs::read_dir(root.join(sub)).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out
}

#[test]
fn committed_fixtures_match_generator() {
    let committed = common::fixtures_dir();
    let set = generate(DEFAULT_SEED);
    if std::env::var_os("REGENERATE_FIXTURES").is_some() {
        if committed.join("docs").exists() {
            std::fs::remove_dir_all(committed.join("docs")).unwrap();
        }
        write(&set, &committed).unwrap();
    }
    let fresh = tempfile::tempdir().unwrap();
    write(&set, fresh.path()).unwrap();
    let names = files(fresh.path());
    assert_eq!(names, files(&committed), "fixture file set differs");
    for name in names {
        let a = std::fs::read(fresh.path().join(&name)).unwrap();
        let b = std::fs::read(committed.join(&name)).unwrap();
        assert!(a == b, "{name} differs from the generator output");
    }
}
