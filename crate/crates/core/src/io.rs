//! File formats.
//!
//! * series and predictions: CSV `t,node_1,...,node_N`, one row per sample;
//! * pseudo-adjacency: CSV `t,b_n_m_p,...` with 1-based `(target, source, lag)`
//!   columns in lexicographic order;
//! * metric curves: CSV `t,value`, undefined entries written as `null`;
//! * ground truth: JSON lines, one topology per change;
//! * checkpoints and reports: JSON.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! recovers the exact values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::PseudoAdjacency;
use crate::scalar::Scalar;
use crate::series::TimeSeries;
use crate::synth::{Topology, TopologySnapshot, TopologyTrack};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn parse<F: Scalar>(field: &str, path: &Path, line: u64) -> Result<F> {
    field
        .trim()
        .parse::<F>()
        .map_err(|_| Error::Data(format!("{}:{line}: cannot parse {field:?} as a number", path.display())))
}

fn parse_t(field: &str, path: &Path, line: u64) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("{}:{line}: bad time index {field:?}", path.display())))
}

fn node_header(nodes: usize) -> Vec<String> {
    std::iter::once("t".to_string()).chain((1..=nodes).map(|n| format!("node_{n}"))).collect()
}

/// Column names of the flattened pseudo-adjacency, `(target, source, lag)` order.
pub fn adjacency_header(nodes: usize, order: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for n in 1..=nodes {
        for m in 1..=nodes {
            for p in 1..=order {
                h.push(format!("b_{n}_{m}_{p}"));
            }
        }
    }
    h
}

/// Writes rows `(t, values)` under a `t,node_1..node_N` header.
pub fn write_node_rows<'a, F: Scalar>(
    path: &Path,
    nodes: usize,
    rows: impl IntoIterator<Item = (usize, &'a [F])>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(node_header(nodes))?;
    for (t, row) in rows {
        if row.len() != nodes {
            return Err(Error::DimensionMismatch { expected: nodes, found: row.len() });
        }
        w.write_record(std::iter::once(t.to_string()).chain(row.iter().map(|v| v.to_string())))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `t,node_1..` CSV, returning the time column and the rows.
pub fn read_node_rows<F: Scalar>(path: &Path) -> Result<(Vec<usize>, Vec<Vec<F>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 2 || header.get(0).map(str::trim) != Some("t") {
        return Err(Error::Data(format!("{}: expected a header starting with t,node_1", path.display())));
    }
    let nodes = header.len() - 1;
    let (mut ts, mut rows) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != nodes + 1 {
            return Err(Error::Data(format!("{}:{line}: expected {} fields", path.display(), nodes + 1)));
        }
        ts.push(parse_t(&rec[0], path, line)?);
        rows.push((1..=nodes).map(|i| parse(&rec[i], path, line)).collect::<Result<Vec<F>>>()?);
    }
    Ok((ts, rows))
}

pub fn write_series<F: Scalar>(path: &Path, series: &TimeSeries<F>) -> Result<()> {
    write_node_rows(path, series.nodes(), series.rows().enumerate())
}

/// Reads a series CSV; the `t` column must run `0, 1, 2, ...`.
pub fn read_series<F: Scalar>(path: &Path) -> Result<TimeSeries<F>> {
    let (ts, rows) = read_node_rows::<F>(path)?;
    if let Some(i) = ts.iter().enumerate().position(|(i, &t)| i != t) {
        return Err(Error::Data(format!("{}: t must count up from 0, found {} at row {i}", path.display(), ts[i])));
    }
    let nodes = rows.first().map_or(0, Vec::len);
    if nodes == 0 {
        return Err(Error::Data(format!("{}: no samples", path.display())));
    }
    TimeSeries::from_rows(nodes, &rows).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Data(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn write_adjacency<F: Scalar>(path: &Path, nodes: usize, order: usize, adj: &[PseudoAdjacency<F>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(adjacency_header(nodes, order))?;
    for a in adj {
        if a.nodes != nodes || a.order != order {
            return Err(Error::DimensionMismatch { expected: nodes * nodes * order, found: a.values.len() });
        }
        w.write_record(std::iter::once(a.t.to_string()).chain(a.values.iter().map(|v| v.to_string())))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_adjacency<F: Scalar>(path: &Path, nodes: usize, order: usize) -> Result<Vec<PseudoAdjacency<F>>> {
    let mut r = csv::Reader::from_path(path)?;
    let expected = adjacency_header(nodes, order);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != expected {
        return Err(Error::Data(format!(
            "{}: header does not match N={nodes}, P={order} (expected {} columns, found {})",
            path.display(),
            expected.len(),
            header.len()
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let t = parse_t(&rec[0], path, line)?;
        let values = rec.iter().skip(1).map(|f| parse(f, path, line)).collect::<Result<Vec<F>>>()?;
        out.push(PseudoAdjacency::new(t, nodes, order, values)?);
    }
    Ok(out)
}

/// Writes a `t,value` curve; `None` becomes `null`.
pub fn write_curve(path: &Path, t: &[usize], values: &[Option<f64>]) -> Result<()> {
    if t.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: t.len(), found: values.len() });
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["t", "value"])?;
    for (t, v) in t.iter().zip(values) {
        let v = v.map_or_else(|| "null".to_string(), |v| v.to_string());
        w.write_record([t.to_string(), v])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<(Vec<usize>, Vec<Option<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut ts, mut vs) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(Error::Data(format!("{}:{line}: expected t,value", path.display())));
        }
        ts.push(parse_t(&rec[0], path, line)?);
        vs.push(if rec[1].trim() == "null" { None } else { Some(parse(&rec[1], path, line)?) });
    }
    Ok((ts, vs))
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Scalar", deny_unknown_fields)]
struct TopologyLine<F> {
    t: usize,
    nodes: usize,
    order: usize,
    coefficients: Vec<F>,
    active: Vec<bool>,
}

/// One JSON object per snapshot: `{"t", "nodes", "order", "coefficients", "active"}`.
pub fn write_topology<F: Scalar>(path: &Path, track: &TopologyTrack<F>) -> Result<()> {
    let mut w = create(path)?;
    for s in track.snapshots() {
        let line = TopologyLine {
            t: s.t,
            nodes: s.topology.nodes(),
            order: s.topology.order(),
            coefficients: s.topology.coefficients().to_vec(),
            active: s.topology.active().to_vec(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_topology<F: Scalar>(path: &Path) -> Result<TopologyTrack<F>> {
    let reader = BufReader::new(File::open(path)?);
    let mut snapshots = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TopologyLine<F> = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let topology = Topology::from_parts(rec.nodes, rec.order, rec.coefficients, rec.active)?;
        snapshots.push(TopologySnapshot { t: rec.t, topology });
    }
    TopologyTrack::from_snapshots(snapshots)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let reader = BufReader::new(File::open(path)?);
    serde_json::from_reader(reader).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}
