use std::fmt::Write as _;
use std::path::Path;

use super::{BenchError, Benchmark, Origin};
use crate::graph::{emit_text, parse_text};

pub const MANIFEST_FILE: &str = "manifest";

/// Writes one `.mg` file per benchmark and a tab-separated manifest
/// (`name origin seed file`).
pub fn write_suite(dir: &Path, suite: &[Benchmark]) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(BenchError::io(dir))?;
    let mut manifest = String::new();
    for b in suite {
        if b.name.contains(['\t', '\n', '/']) {
            return Err(BenchError::InvalidRange(format!(
                "benchmark name `{}` is not a file name",
                b.name
            )));
        }
        let file = format!("{}.mg", b.name);
        let path = dir.join(&file);
        std::fs::write(&path, emit_text(&b.graph)).map_err(BenchError::io(&path))?;
        let _ = writeln!(manifest, "{}\t{}\t{}\t{}", b.name, b.origin, b.seed, file);
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest).map_err(BenchError::io(&path))
}

pub fn read_suite(dir: &Path) -> Result<Vec<Benchmark>, BenchError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(BenchError::io(&path))?;
    let bad = |line: usize, message: String| BenchError::Manifest {
        path: path.clone(),
        line,
        message,
    };
    let mut out = vec![];
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, origin, seed, file] = fields[..] else {
            return Err(bad(
                k + 1,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        };
        let origin: Origin = origin.parse().map_err(|e| bad(k + 1, e))?;
        let seed: u64 = seed.parse().map_err(|e| bad(k + 1, format!("seed: {e}")))?;
        let gpath = dir.join(file);
        let src = std::fs::read_to_string(&gpath).map_err(BenchError::io(&gpath))?;
        let mut graph = parse_text(&src).map_err(|source| BenchError::Parse { path: gpath, source })?;
        graph.name = name.to_string();
        out.push(Benchmark {
            name: name.to_string(),
            graph,
            origin,
            seed,
        });
    }
    if out.is_empty() {
        return Err(BenchError::EmptySuite);
    }
    Ok(out)
}
