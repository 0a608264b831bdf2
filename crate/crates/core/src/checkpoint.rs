//! Field snapshots on disk.
//!
//! A checkpoint is one line of JSON (the header), a `\n`, then the samples of
//! every edge in edge order as little-endian `f64` pairs `(re, im)`. The
//! header records the graph so a reader can size and validate the payload
//! without any other file.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphFunction, PmlConfig, StarGraph};

pub const FORMAT: &str = "starnls-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphHeader {
    pub alpha: Vec<f64>,
    pub edge_length: f64,
    pub dx: Vec<f64>,
    pub pml: Vec<PmlConfig>,
    pub nodes: Vec<usize>,
}

impl GraphHeader {
    pub fn of(g: &StarGraph) -> Self {
        GraphHeader {
            alpha: g.alpha().to_vec(),
            edge_length: g.edge_length(),
            dx: g.spacings().to_vec(),
            pml: g.pmls().to_vec(),
            nodes: g.node_counts().to_vec(),
        }
    }

    pub fn graph(&self) -> Result<StarGraph> {
        StarGraph::with_spacings(
            self.alpha.clone(),
            self.edge_length,
            self.dx.clone(),
            self.pml.clone(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub graph: GraphHeader,
    pub t: f64,
    /// Free-form run parameters echoed for provenance.
    #[serde(default)]
    pub params: serde_json::Value,
}

pub fn write<W: Write>(mut out: W, g: &StarGraph, f: &GraphFunction, t: f64, params: serde_json::Value) -> Result<()> {
    if !g.fits(f) {
        return Err(Error::InvalidParameter("field does not match the graph grid".into()));
    }
    let header = Header {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        graph: GraphHeader::of(g),
        t,
        params,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(16 * f.len());
    for z in f.iter() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn save(path: &Path, g: &StarGraph, f: &GraphFunction, t: f64, params: serde_json::Value) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write(std::io::BufWriter::new(file), g, f, t, params)
}

fn bad(offset: u64, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        offset,
        reason: reason.into(),
    }
}

/// Reads a checkpoint; errors name the byte offset where parsing failed.
pub fn read<R: Read>(input: R) -> Result<(Header, StarGraph, GraphFunction)> {
    let mut reader = BufReader::new(input);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(bad(line.len() as u64, "missing header terminator"));
    }
    let header_len = line.len() as u64;
    let header: Header = serde_json::from_slice(&line[..line.len() - 1]).map_err(|e| {
        // serde reports line/column; the header is a single line
        bad(e.column().saturating_sub(1) as u64, format!("invalid header: {e}"))
    })?;
    if header.format != FORMAT {
        return Err(bad(0, format!("unexpected format tag {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(bad(0, format!("unsupported version {}", header.version)));
    }
    let g = header.graph.graph().map_err(|e| bad(0, format!("invalid graph: {e}")))?;
    if g.node_counts() != header.graph.nodes.as_slice() {
        return Err(bad(0, "node counts disagree with edge length and spacing"));
    }
    let mut edges = Vec::with_capacity(g.n_edges());
    let mut offset = header_len;
    let mut word = [0u8; 16];
    for j in 0..g.n_edges() {
        let mut e = Vec::with_capacity(g.nodes(j));
        for _ in 0..g.nodes(j) {
            let mut got = 0;
            while got < 16 {
                let n = reader.read(&mut word[got..])?;
                if n == 0 {
                    return Err(bad(offset + got as u64, format!("payload truncated in edge {}", j + 1)));
                }
                got += n;
            }
            let re = f64::from_le_bytes(word[..8].try_into().unwrap());
            let im = f64::from_le_bytes(word[8..].try_into().unwrap());
            e.push(Complex64::new(re, im));
            offset += 16;
        }
        edges.push(e);
    }
    let mut rest = [0u8; 1];
    if reader.read(&mut rest)? != 0 {
        return Err(bad(offset, "trailing bytes after payload"));
    }
    Ok((header, g, GraphFunction::from_edges(edges)))
}

pub fn load(path: &Path) -> Result<(Header, StarGraph, GraphFunction)> {
    read(std::fs::File::open(path)?)
}
