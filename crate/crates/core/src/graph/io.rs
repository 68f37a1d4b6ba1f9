//! Plain-text graph files.
//!
//! Nodes file:
//!
//! ```text
//! #nodes N=3 L=2 C=2
//! 0	1	0.5,-1
//! 1	0	0,2.25
//! 2	1	1,1
//! ```
//!
//! Edges file, one undirected edge per line, `#` starts a comment:
//!
//! ```text
//! #edges M=1
//! 0	1
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::Graph;
use crate::error::{Error, Result};

pub fn load_graph(nodes_path: &Path, edges_path: &Path) -> Result<Graph> {
    let nodes = File::open(nodes_path).map_err(|e| Error::io(nodes_path, e))?;
    let edges = File::open(edges_path).map_err(|e| Error::io(edges_path, e))?;
    read_graph(nodes, nodes_path, edges, edges_path)
}

/// Parses graph files from arbitrary readers. The paths are only used in
/// error messages.
pub fn read_graph(nodes: impl Read, nodes_path: &Path, edges: impl Read, edges_path: &Path) -> Result<Graph> {
    let (features, labels, num_classes) = read_nodes(nodes, nodes_path)?;
    let n = labels.len();
    let edge_list = read_edges(edges, edges_path, n)?;
    Graph::new(features, labels, num_classes, edge_list)
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_header(line: &str, file: &Path) -> Result<(usize, usize, usize)> {
    let rest = line
        .strip_prefix("#nodes")
        .ok_or_else(|| parse_err(file, 1, "expected header `#nodes N=<N> L=<L> C=<C>`"))?;
    let (mut n, mut l, mut c) = (None, None, None);
    for tok in rest.split_whitespace() {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(file, 1, format!("malformed header field `{tok}`")))?;
        let value: usize = value
            .parse()
            .map_err(|_| parse_err(file, 1, format!("header field `{tok}` is not a count")))?;
        match key {
            "N" => n = Some(value),
            "L" => l = Some(value),
            "C" => c = Some(value),
            _ => return Err(parse_err(file, 1, format!("unknown header field `{key}`"))),
        }
    }
    match (n, l, c) {
        (Some(n), Some(l), Some(c)) => Ok((n, l, c)),
        _ => Err(parse_err(file, 1, "header must define N, L and C")),
    }
}

fn read_nodes(reader: impl Read, file: &Path) -> Result<(Array2<f64>, Vec<usize>, usize)> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(file, e))?,
        None => return Err(parse_err(file, 1, "empty nodes file")),
    };
    let (n, l, c) = parse_header(header.trim_end(), file)?;

    let mut features = Array2::zeros((n, l));
    let mut labels = vec![0usize; n];
    let mut seen = vec![false; n];
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io(file, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 && !(l == 0 && fields.len() == 2) {
            return Err(parse_err(
                file,
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(file, lineno, format!("bad node id `{}`", fields[0])))?;
        if id >= n {
            return Err(parse_err(
                file,
                lineno,
                format!("node id {id} outside contiguous range 0..{n}"),
            ));
        }
        if seen[id] {
            return Err(parse_err(file, lineno, format!("duplicate node id {id}")));
        }
        seen[id] = true;
        let label: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(file, lineno, format!("bad label `{}`", fields[1])))?;
        if label >= c {
            return Err(parse_err(file, lineno, format!("label {label} outside 0..{c}")));
        }
        labels[id] = label;

        let raw = fields.get(2).copied().unwrap_or("");
        let values: Vec<&str> = if raw.is_empty() {
            Vec::new()
        } else {
            raw.split(',').collect()
        };
        if values.len() != l {
            return Err(parse_err(
                file,
                lineno,
                format!("expected {l} features, found {}", values.len()),
            ));
        }
        for (j, v) in values.iter().enumerate() {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| parse_err(file, lineno, format!("bad feature `{v}`")))?;
            if !x.is_finite() {
                return Err(parse_err(file, lineno, format!("non-finite feature `{v}`")));
            }
            features[[id, j]] = x;
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(parse_err(
            file,
            1,
            format!("node ids are not contiguous: id {missing} missing"),
        ));
    }
    Ok((features, labels, c))
}

fn read_edges(reader: impl Read, file: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(file, e))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut parts = body.split_whitespace();
        let (u, v) = match (parts.next(), parts.next(), parts.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => return Err(parse_err(file, lineno, "expected `<u>\\t<v>`")),
        };
        let parse = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| parse_err(file, lineno, format!("bad node id `{s}`")))
        };
        let (u, v) = (parse(u)?, parse(v)?);
        if u >= n || v >= n {
            return Err(parse_err(
                file,
                lineno,
                format!("unknown node id {} (graph has {n} nodes)", u.max(v)),
            ));
        }
        if u == v {
            return Err(parse_err(file, lineno, format!("self-loop on node {u} rejected")));
        }
        out.push((u, v));
    }
    Ok(out)
}

/// Writes both files. Floats use Rust's shortest round-trip formatting,
/// so `load_graph(write_graph(g)) == g` bit for bit.
pub fn write_graph(g: &Graph, nodes_path: &Path, edges_path: &Path) -> Result<()> {
    let nodes = File::create(nodes_path).map_err(|e| Error::io(nodes_path, e))?;
    let edges = File::create(edges_path).map_err(|e| Error::io(edges_path, e))?;
    let mut nodes = BufWriter::new(nodes);
    let mut edges = BufWriter::new(edges);
    write_graph_to(g, &mut nodes, &mut edges).map_err(|e| Error::io(nodes_path, e))?;
    nodes.flush().map_err(|e| Error::io(nodes_path, e))?;
    edges.flush().map_err(|e| Error::io(edges_path, e))
}

pub fn write_graph_to(g: &Graph, nodes: &mut impl Write, edges: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        nodes,
        "#nodes N={} L={} C={}",
        g.num_nodes(),
        g.feature_dim(),
        g.num_classes()
    )?;
    for (u, row) in g.features().rows().into_iter().enumerate() {
        let feats: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(nodes, "{u}\t{}\t{}", g.labels()[u], feats.join(","))?;
    }
    writeln!(edges, "#edges M={}", g.num_edges())?;
    for &(u, v) in g.edges() {
        writeln!(edges, "{u}\t{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(nodes: &str, edges: &str) -> Result<Graph> {
        read_graph(
            nodes.as_bytes(),
            Path::new("nodes.tsv"),
            edges.as_bytes(),
            Path::new("edges.tsv"),
        )
    }

    const NODES: &str = "#nodes N=3 L=2 C=2\n0\t0\t0.5,1\n1\t1\t-2,3e-3\n2\t1\t0,0\n";

    #[test]
    fn loads_small_graph() {
        let g = parse(NODES, "0\t1\n").unwrap();
        assert_eq!((g.num_nodes(), g.num_edges(), g.feature_dim()), (3, 1, 2));
        assert_eq!(g.features()[[1, 1]], 3e-3);
    }

    #[test]
    fn self_loop_is_rejected_with_line_number() {
        let err = parse(NODES, "# comment\n0\t0\n").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("self-loop"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reversed_duplicate_is_merged() {
        let g = parse(NODES, "0\t1\n1\t0\n").unwrap();
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn unknown_edge_endpoint_is_an_error() {
        assert!(matches!(parse(NODES, "0\t7\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn node_file_errors() {
        let gap = "#nodes N=3 L=1 C=2\n0\t0\t1\n2\t1\t1\n";
        assert!(parse(gap, "").is_err());
        let label = "#nodes N=1 L=1 C=2\n0\t5\t1\n";
        assert!(matches!(parse(label, ""), Err(Error::Parse { line: 2, .. })));
        let nan = "#nodes N=1 L=1 C=2\n0\t0\tNaN\n";
        assert!(matches!(parse(nan, ""), Err(Error::Parse { line: 2, .. })));
        let short = "#nodes N=1 L=2 C=2\n0\t0\t1\n";
        assert!(parse(short, "").is_err());
        assert!(parse("0\t0\t1\n", "").is_err());
    }

    #[test]
    fn write_then_read_is_exact() {
        let g = parse(NODES, "1\t2\n0\t2\n").unwrap();
        let (mut n, mut e) = (Vec::new(), Vec::new());
        write_graph_to(&g, &mut n, &mut e).unwrap();
        let back = read_graph(&n[..], Path::new("n"), &e[..], Path::new("e")).unwrap();
        assert_eq!(g, back);
    }
}
