//! Parameter files: one JSON header line, then a flat little-endian `f64`
//! payload in row-major declaration order.

use super::disentangled::DisentangledParams;
use super::standard::{Head, StandardParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    #[serde(rename = "S")]
    pub alphabet: usize,
    #[serde(rename = "T")]
    pub length: usize,
    pub depth: usize,
    pub heads: Vec<usize>,
    pub dims: Vec<usize>,
    pub output_dim: usize,
    pub payload_len: usize,
}

/// Anything that flattens to a header plus a list of matrices.
pub trait Checkpoint: Sized {
    const KIND: &'static str;
    fn header(&self) -> CheckpointHeader;
    fn matrices(&self) -> Vec<&Matrix>;
    fn from_parts(header: &CheckpointHeader, payload: &[f64]) -> Result<Self>;
}

pub fn write_checkpoint<C: Checkpoint>(params: &C, mut out: impl Write) -> Result<()> {
    let header = params.header();
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut written = 0;
    for m in params.matrices() {
        for x in m.as_slice() {
            out.write_all(&x.to_le_bytes())?;
            written += 1;
        }
    }
    debug_assert_eq!(written, header.payload_len);
    Ok(())
}

pub fn read_checkpoint<C: Checkpoint>(mut input: impl BufRead) -> Result<C> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    if header.kind != C::KIND {
        return Err(Error::Format(format!("expected a {} checkpoint, found {}", C::KIND, header.kind)));
    }
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != header.payload_len * 8 {
        return Err(Error::Format(format!(
            "payload has {} bytes, header declares {} values",
            bytes.len(),
            header.payload_len
        )));
    }
    let payload: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    C::from_parts(&header, &payload)
}

pub fn save<C: Checkpoint>(params: &C, path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load<C: Checkpoint>(path: &std::path::Path) -> Result<C> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Sequential reader over a payload.
pub(crate) struct Cursor<'a> {
    data: &'a [f64],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(data: &'a [f64]) -> Self {
        Self { data, pos: 0 }
    }

    pub(crate) fn take(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows * cols;
        if self.pos + n > self.data.len() {
            return Err(Error::Format("payload ended early".into()));
        }
        let m = Matrix::from_vec(rows, cols, self.data[self.pos..self.pos + n].to_vec());
        self.pos += n;
        Ok(m)
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format("payload has trailing values".into()));
        }
        Ok(())
    }
}

impl Checkpoint for DisentangledParams {
    const KIND: &'static str = "disentangled";

    fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            kind: Self::KIND.into(),
            alphabet: self.alphabet,
            length: self.length,
            depth: self.depth(),
            heads: self.heads(),
            dims: self.dims(),
            output_dim: self.output_dim(),
            payload_len: self.matrices().iter().map(|m| m.as_slice().len()).sum(),
        }
    }

    fn matrices(&self) -> Vec<&Matrix> {
        self.layers.iter().flatten().chain(std::iter::once(&self.w_o)).collect()
    }

    fn from_parts(h: &CheckpointHeader, payload: &[f64]) -> Result<Self> {
        let mut p = DisentangledParams::zeros(h.alphabet, h.length, &h.heads, h.output_dim);
        if p.dims() != h.dims {
            return Err(Error::Format("dimension ladder in header is inconsistent".into()));
        }
        let mut cur = Cursor::new(payload);
        for m in p.layers.iter_mut().flatten() {
            *m = cur.take(m.rows(), m.cols())?;
        }
        p.w_o = cur.take(p.w_o.rows(), p.w_o.cols())?;
        cur.finish()?;
        Ok(p)
    }
}

impl Checkpoint for StandardParams {
    const KIND: &'static str = "standard";

    fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            kind: Self::KIND.into(),
            alphabet: self.alphabet,
            length: self.length,
            depth: self.depth(),
            heads: self.heads(),
            dims: vec![self.hidden()],
            output_dim: self.output_dim(),
            payload_len: self.matrices().iter().map(|m| m.as_slice().len()).sum(),
        }
    }

    fn matrices(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.embed, &self.position];
        for head in self.layers.iter().flatten() {
            out.extend([&head.q, &head.k, &head.v]);
        }
        out.push(&self.w_o);
        out
    }

    fn from_parts(h: &CheckpointHeader, payload: &[f64]) -> Result<Self> {
        let d = *h.dims.first().ok_or_else(|| Error::Format("missing hidden dimension".into()))?;
        let mut cur = Cursor::new(payload);
        let embed = cur.take(d, h.alphabet)?;
        let position = cur.take(d, h.length)?;
        let mut layers = Vec::new();
        for &m in &h.heads {
            let mut heads = Vec::new();
            for _ in 0..m {
                heads.push(Head {
                    q: cur.take(d, d)?,
                    k: cur.take(d, d)?,
                    v: cur.take(d, d)?,
                });
            }
            layers.push(heads);
        }
        let w_o = cur.take(h.output_dim, d)?;
        cur.finish()?;
        Ok(StandardParams {
            alphabet: h.alphabet,
            length: h.length,
            embed,
            position,
            layers,
            w_o,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn round_trips_are_bit_exact() {
        let mut rng = seeded(5);
        let d = DisentangledParams::random(3, 4, &[2, 1], 3, 1.0, &mut rng);
        let mut buf = Vec::new();
        write_checkpoint(&d, &mut buf).unwrap();
        let back: DisentangledParams = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, d);

        let s = StandardParams::random(3, 4, 5, &[1, 2], 2, 1.0, &mut rng);
        let mut buf = Vec::new();
        write_checkpoint(&s, &mut buf).unwrap();
        let back: StandardParams = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, s);
        assert!(read_checkpoint::<DisentangledParams>(&buf[..]).is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let d = DisentangledParams::zeros(2, 3, &[1], 2);
        let mut buf = Vec::new();
        write_checkpoint(&d, &mut buf).unwrap();
        buf.truncate(buf.len() - 8);
        assert!(read_checkpoint::<DisentangledParams>(&buf[..]).is_err());
    }
}
