//! Dataset directory format.
//!
//! * `nodes.jsonl`: one `{"id": int, "text": str, "label": int}` per line;
//!   ids must cover `0..n` exactly once, in any order.
//! * `edges.tsv`: two tab-separated node ids per line.
//! * `class_names.json`: JSON array of strings.
//! * `features.bin`: `b"TAGF"`, `u32` version (1), `u64` rows, `u64` cols,
//!   then `rows × cols` little-endian `f32`, row-major.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

use super::{EdgeReport, TextAttributedGraph};

const FEATURES_MAGIC: &[u8; 4] = b"TAGF";
const FEATURES_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub nodes: usize,
    pub edges: usize,
    pub duplicate_edges: usize,
    pub self_loops_dropped: usize,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    text: String,
    label: usize,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Decodes a `TAGF` feature matrix. Values are widened to `f64`.
pub fn read_features_bin(path: &Path) -> Result<DenseMatrix> {
    let buf = read_file(path)?;
    let name = path.display().to_string();
    if buf.len() < HEADER_LEN {
        return Err(Error::format(name, None, "malformed binary header: file shorter than header"));
    }
    if &buf[..4] != FEATURES_MAGIC {
        return Err(Error::format(name, None, "malformed binary header: bad magic"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
    if version != FEATURES_VERSION {
        return Err(Error::format(name, None, format!("malformed binary header: unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(buf[16..24].try_into().expect("8 bytes")) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(&name, None, "malformed binary header: size overflow"))?;
    let body = &buf[HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::format(
            name,
            None,
            format!("payload is {} bytes, header declares {rows}x{cols} f32 ({expected} bytes)", body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    DenseMatrix::from_vec(rows, cols, data)
}

/// Encodes `m` as `TAGF` (values narrowed to `f32`).
pub fn write_features_bin(m: &DenseMatrix, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.data().len() * 4);
    out.extend_from_slice(FEATURES_MAGIC);
    out.extend_from_slice(&FEATURES_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_tag(dir: &Path) -> Result<TextAttributedGraph> {
    load_tag_with_report(dir).map(|(g, _)| g)
}

pub fn load_tag_with_report(dir: &Path) -> Result<(TextAttributedGraph, LoadReport)> {
    let nodes_path = dir.join("nodes.jsonl");
    let edges_path = dir.join("edges.tsv");
    let names_path = dir.join("class_names.json");
    let feats_path = dir.join("features.bin");
    for p in [&nodes_path, &edges_path, &names_path, &feats_path] {
        if !p.is_file() {
            return Err(Error::MissingFile(p.clone()));
        }
    }

    let class_names: Vec<String> = serde_json::from_slice(&read_file(&names_path)?)
        .map_err(|e| Error::format(names_path.display().to_string(), None, e.to_string()))?;

    let f = fs::File::open(&nodes_path).map_err(|e| Error::io(&nodes_path, e))?;
    let mut records: Vec<Option<(String, usize)>> = Vec::new();
    let nodes_name = nodes_path.display().to_string();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&nodes_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NodeRecord = serde_json::from_str(&line).map_err(|e| Error::format(&nodes_name, Some(i), e.to_string()))?;
        if rec.label >= class_names.len() {
            return Err(Error::format(
                &nodes_name,
                Some(i),
                format!("out-of-range label {} (class count {})", rec.label, class_names.len()),
            ));
        }
        if rec.id >= records.len() {
            records.resize(rec.id + 1, None);
        }
        if records[rec.id].is_some() {
            return Err(Error::format(&nodes_name, Some(i), format!("duplicate node id {}", rec.id)));
        }
        records[rec.id] = Some((rec.text, rec.label));
    }
    if let Some(missing) = records.iter().position(Option::is_none) {
        return Err(Error::format(&nodes_name, None, format!("node ids are not contiguous: {missing} missing")));
    }
    let n = records.len();
    let (texts, labels): (Vec<String>, Vec<usize>) = records.into_iter().map(|r| r.expect("checked")).unzip();

    let features = read_features_bin(&feats_path)?;
    if features.rows() != n {
        return Err(Error::FeatureCountMismatch {
            declared: features.rows(),
            nodes: n,
        });
    }

    let f = fs::File::open(&edges_path).map_err(|e| Error::io(&edges_path, e))?;
    let edges_name = edges_path.display().to_string();
    let mut edges = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&edges_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let mut parse = || -> Result<usize> {
            let tok = parts
                .next()
                .ok_or_else(|| Error::format(&edges_name, Some(i), "expected two tab-separated ids"))?;
            tok.trim()
                .parse::<usize>()
                .map_err(|e| Error::format(&edges_name, Some(i), format!("bad node id `{tok}`: {e}")))
        };
        let (u, v) = (parse()?, parse()?);
        if parts.next().is_some() {
            return Err(Error::format(&edges_name, Some(i), "more than two fields"));
        }
        for x in [u, v] {
            if x >= n {
                return Err(Error::format(&edges_name, Some(i), format!("out-of-range edge endpoint {x} (node count {n})")));
            }
        }
        edges.push((u, v));
    }

    let (graph, EdgeReport { duplicates, self_loops }) =
        TextAttributedGraph::new_with_report(features, texts, labels, class_names, &edges)?;
    if duplicates > 0 || self_loops > 0 {
        log::info!("{}: dropped {duplicates} duplicate edges and {self_loops} self-loops", dir.display());
    }
    let report = LoadReport {
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        duplicate_edges: duplicates,
        self_loops_dropped: self_loops,
    };
    Ok((graph, report))
}

/// Writes `g` in the dataset directory format, creating `dir` if needed.
pub fn save_tag(g: &TextAttributedGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let nodes_path = dir.join("nodes.jsonl");
    let mut w = BufWriter::new(fs::File::create(&nodes_path).map_err(|e| Error::io(&nodes_path, e))?);
    for v in 0..g.node_count() {
        let rec = NodeRecord {
            id: v,
            text: g.text(v).to_string(),
            label: g.labels()[v],
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(&nodes_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&nodes_path, e))?;

    let edges_path = dir.join("edges.tsv");
    let mut w = BufWriter::new(fs::File::create(&edges_path).map_err(|e| Error::io(&edges_path, e))?);
    for &(u, v) in g.edges() {
        writeln!(w, "{u}\t{v}").map_err(|e| Error::io(&edges_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&edges_path, e))?;

    let names_path = dir.join("class_names.json");
    fs::write(&names_path, serde_json::to_vec(g.class_names())?).map_err(|e| Error::io(&names_path, e))?;
    write_features_bin(g.features(), &dir.join("features.bin"))
}

#[cfg(test)]
mod tests {
    use super::super::test_graphs::simple;
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = simple(4, 2, &[(0, 1), (2, 3)]);
        save_tag(&g, dir.path()).unwrap();
        let back = load_tag(dir.path()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn empty_edges_and_duplicate_report() {
        let dir = tempfile::tempdir().unwrap();
        let g = simple(3, 1, &[]);
        save_tag(&g, dir.path()).unwrap();
        assert_eq!(load_tag(dir.path()).unwrap().edge_count(), 0);
        fs::write(dir.path().join("edges.tsv"), "0\t1\n1\t0\n2\t2\n").unwrap();
        let (g, report) = load_tag_with_report(dir.path()).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!((report.duplicate_edges, report.self_loops_dropped), (1, 1));
    }

    #[test]
    fn errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let g = simple(9, 1, &[]);
        save_tag(&g, dir.path()).unwrap();
        write_features_bin(&DenseMatrix::zeros(10, 2), &dir.path().join("features.bin")).unwrap();
        let err = load_tag(dir.path()).unwrap_err().to_string();
        assert!(err.contains("feature-count mismatch"), "{err}");

        save_tag(&g, dir.path()).unwrap();
        fs::write(dir.path().join("edges.tsv"), "0\t1\n0\t42\n").unwrap();
        let err = load_tag(dir.path()).unwrap_err().to_string();
        assert!(err.contains("record 1") && err.contains("edge endpoint"), "{err}");

        save_tag(&g, dir.path()).unwrap();
        fs::write(dir.path().join("features.bin"), b"NOPE").unwrap();
        let err = load_tag(dir.path()).unwrap_err().to_string();
        assert!(err.contains("malformed binary header"), "{err}");

        save_tag(&g, dir.path()).unwrap();
        fs::write(dir.path().join("nodes.jsonl"), "{\"id\":0,\"text\":\"a\",\"label\":5}\n").unwrap();
        let err = load_tag(dir.path()).unwrap_err().to_string();
        assert!(err.contains("record 0") && err.contains("label"), "{err}");

        fs::remove_file(dir.path().join("class_names.json")).unwrap();
        assert!(matches!(load_tag(dir.path()), Err(Error::MissingFile(_))));
    }
}
