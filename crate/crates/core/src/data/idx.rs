//! IDX file reader (the MNIST distribution format), big-endian, with
//! transparent gzip support keyed on a `.gz` extension.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads a whole file, gunzipping when the name ends in `.gz`.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    let gz = path.extension().is_some_and(|ext| ext == "gz");
    if gz {
        GzDecoder::new(file).read_to_end(&mut buf)
    } else {
        let mut file = file;
        file.read_to_end(&mut buf)
    }
    .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: "truncated header".into(),
        })
}

/// Parsed image file: `count` images of `rows x cols` unsigned bytes.
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("bad image magic {magic:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected {need} pixel bytes, found {}", body.len()),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body[..need].to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("bad label magic {magic:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected {count} labels, found {}", body.len()),
        });
    }
    Ok(body[..count].to_vec())
}

/// Serializes images in IDX form; used for fixtures and exports.
pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_encoded_images() {
        let bytes = encode_images(2, 3, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]);
        let img = parse_images(&bytes, Path::new("x")).unwrap();
        assert_eq!((img.count, img.rows, img.cols), (2, 2, 3));
        assert_eq!(img.pixels[11], 11);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let labels = encode_labels(&[1, 2, 3]);
        assert!(matches!(parse_images(&labels, Path::new("x")), Err(Error::Format { .. })));
        let mut images = encode_images(2, 2, &[0; 8]);
        images.truncate(20);
        assert!(matches!(parse_images(&images, Path::new("x")), Err(Error::Format { .. })));
        assert!(matches!(parse_labels(&labels[..9], Path::new("x")), Err(Error::Format { .. })));
        assert!(matches!(parse_labels(&[0, 0], Path::new("x")), Err(Error::Format { .. })));
    }
}
