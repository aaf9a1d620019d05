//! Registry mutation must stay behind `POST /runs/{id}/resolution`.

use std::path::{Path, PathBuf};

fn sources(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            sources(&path, out);
        } else if path.extension().is_some_and(|e| e == "rs") {
            out.push(path);
        }
    }
}

#[test]
fn only_the_resolution_handler_mutates_registries() {
    let crates = Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap();
    let mut files = Vec::new();
    for krate in ["service", "cli"] {
        sources(&crates.join(krate).join("src"), &mut files);
    }
    assert!(files.len() >= 4, "{files:?}");

    let mut calls = Vec::new();
    for f in &files {
        let text = std::fs::read_to_string(f).unwrap();
        for (n, line) in text.lines().enumerate() {
            if line.contains("apply_override(") || line.contains("apply_resolution(") {
                calls.push((f.file_name().unwrap().to_string_lossy().into_owned(), n + 1, text.clone()));
            }
        }
    }
    assert_eq!(calls.len(), 1, "{:?}", calls.iter().map(|(f, n, _)| (f, n)).collect::<Vec<_>>());
    let (file, line, text) = &calls[0];
    assert_eq!(file, "resolution.rs");

    // The call sits inside the handler routed at /resolution.
    let handler = text.find("pub(crate) async fn resolve(").unwrap();
    let offset: usize = text.lines().take(line - 1).map(|l| l.len() + 1).sum();
    assert!(offset > handler);
    let api = std::fs::read_to_string(crates.join("service/src/api.rs")).unwrap();
    assert!(api.contains(r#".route("/runs/{id}/resolution", post(resolution::resolve))"#));
    assert_eq!(api.matches("resolution::resolve").count(), 1);
}
