//! Embedding sequence files.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `TSVE` |
//! | 4 | 2 | version (1) |
//! | 6 | 4 | dim |
//! | 10 | 4 | frame_count |
//! | 14 | 4·dim·frame_count | f32 values, frame-major |
//!
//! Values are widened to f64 on read and rounded to nearest f32 on write.

use std::path::Path;

use super::{read_bytes, write_bytes, Reader};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"TSVE";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub dim: usize,
    pub frame_count: usize,
}

pub fn encode(m: &Matrix) -> Result<Vec<u8>> {
    let dim = u32::try_from(m.cols()).map_err(|_| Error::shape("embedding width exceeds u32"))?;
    let frames = u32::try_from(m.rows()).map_err(|_| Error::shape("frame count exceeds u32"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&frames.to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn parse_header(r: &mut Reader<'_>) -> Result<EmbeddingHeader> {
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(r.path(), "not an embedding file (bad magic)"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(r.path(), format!("unsupported embedding version {version}")));
    }
    let dim = r.u32("dim")? as usize;
    let frame_count = r.u32("frame_count")? as usize;
    Ok(EmbeddingHeader { dim, frame_count })
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let mut r = Reader::new(bytes, path);
    let h = parse_header(&mut r)?;
    let expected = h.dim as u64 * h.frame_count as u64 * 4;
    if r.remaining() as u64 != expected {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes but {} frames of width {} need {expected}",
                r.remaining(),
                h.frame_count,
                h.dim
            ),
        ));
    }
    let data = r
        .take(expected as usize, "payload")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Matrix::from_vec(h.frame_count, h.dim, data)
}

pub fn write_embeddings(path: &Path, m: &Matrix) -> Result<()> {
    write_bytes(path, &encode(m)?)
}

pub fn read_embeddings(path: &Path) -> Result<Matrix> {
    decode(&read_bytes(path)?, path)
}

/// Header only; also checks the file size against it.
pub fn read_header(path: &Path) -> Result<EmbeddingHeader> {
    use std::io::Read;
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; HEADER_LEN];
    file.read_exact(&mut head).map_err(|_| Error::format(path, "shorter than the 14-byte header"))?;
    let h = parse_header(&mut Reader::new(&head, path))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let expected = HEADER_LEN as u64 + h.dim as u64 * h.frame_count as u64 * 4;
    if len != expected {
        return Err(Error::format(path, format!("file is {len} bytes, header implies {expected}")));
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Matrix {
        Matrix::from_rows(&[vec![1.0, -2.5, 0.125], vec![3.0, 1e-3, -0.0]]).unwrap()
    }

    #[test]
    fn header_bytes() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"TSVE");
        assert_eq!(&bytes[4..14], &[1, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes.len(), 14 + 6 * 4);
        assert_eq!(&bytes[14..18], &1.0f32.to_le_bytes());
    }

    #[test]
    fn file_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/a.tsve");
        write_embeddings(&path, &sample()).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back.shape(), (2, 3));
        assert_eq!(back.get(1, 1), 1e-3f32 as f64);
        assert_eq!(read_header(&path).unwrap(), EmbeddingHeader { dim: 3, frame_count: 2 });
    }

    #[test]
    fn rejects_corruption() {
        let p = Path::new("x.tsve");
        let good = encode(&sample()).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic, p), Err(Error::Format { .. })));
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(decode(&bad_version, p).is_err());
        assert!(decode(&good[..good.len() - 1], p).is_err());
        let mut long = good.clone();
        long.extend_from_slice(&[0; 4]);
        assert!(decode(&long, p).is_err());
        assert!(decode(&good[..10], p).is_err());
    }

    #[test]
    fn empty_sequence_round_trips() {
        let m = Matrix::zeros(0, 5);
        let back = decode(&encode(&m).unwrap(), Path::new("e")).unwrap();
        assert_eq!(back.shape(), (0, 5));
    }

    proptest! {
        #[test]
        fn write_read_write_is_bit_identical(
            rows in 0usize..6, cols in 1usize..6,
            seed in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 36)
        ) {
            let data: Vec<f64> = (0..rows * cols).map(|i| seed[i] as f64).collect();
            let m = Matrix::from_vec(rows, cols, data).unwrap();
            let bytes = encode(&m).unwrap();
            let back = decode(&bytes, Path::new("p")).unwrap();
            prop_assert_eq!(back.data(), m.data());
            prop_assert_eq!(encode(&back).unwrap(), bytes);
        }
    }
}
