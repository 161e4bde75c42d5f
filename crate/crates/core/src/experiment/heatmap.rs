//! Plain (ASCII) PGM heatmaps.

use crate::error::Result;
use crate::linalg::Matrix;
use std::io::Write;

/// Writes `m` as a `P2` image, mapping `[0, max entry]` linearly onto `0..=255`.
/// Negative entries clamp to 0; an all-zero matrix is black.
pub fn write_pgm(m: &Matrix, mut out: impl Write) -> Result<()> {
    let max = m.as_slice().iter().copied().fold(0.0, f64::max);
    writeln!(out, "P2\n{} {}\n255", m.cols(), m.rows())?;
    for i in 0..m.rows() {
        let line: Vec<String> = m
            .row(i)
            .iter()
            .map(|&x| {
                let v = if max > 0.0 { (x.max(0.0) / max * 255.0).round() } else { 0.0 };
                (v as u8).to_string()
            })
            .collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn save_pgm(m: &Matrix, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_pgm(m, std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_scaling() {
        let mut buf = Vec::new();
        write_pgm(&Matrix::from_rows(&[vec![0.0, 0.5], vec![1.0, -2.0]]), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "P2\n2 2\n255\n0 128\n255 0\n");
    }
}
