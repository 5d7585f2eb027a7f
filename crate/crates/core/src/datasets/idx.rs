//! MNIST IDX files: big-endian headers framed by a magic number, then raw bytes.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::format(path, format!("byte offset {offset}"), "file truncated inside header")
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::format(
            path,
            "byte offset 0",
            format!("bad magic number {magic:#010x}, expected {expected:#010x}"),
        ));
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, expected: usize, path: &Path) -> Result<()> {
    let actual = bytes.len() - header;
    if actual < expected {
        return Err(Error::format(
            path,
            format!("byte offset {}", bytes.len()),
            format!("file truncated: {expected} payload bytes declared, {actual} present"),
        ));
    }
    if actual > expected {
        return Err(Error::format(
            path,
            format!("byte offset {}", header + expected),
            format!("{} trailing bytes after declared payload", actual - expected),
        ));
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    check_payload(bytes, 16, count * rows * cols, path)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

/// Digits as stored in the file (0–9).
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    check_payload(bytes, 8, count, path)?;
    let labels = bytes[8..].to_vec();
    if let Some(i) = labels.iter().position(|&d| d > 9) {
        return Err(Error::format(
            path,
            format!("byte offset {}", 8 + i),
            format!("label {} is not a digit", labels[i]),
        ));
    }
    Ok(labels)
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(digits: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + digits.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(digits.len() as u32).to_be_bytes());
    out.extend_from_slice(digits);
    out
}

/// Loads an image/label file pair. Pixels are scaled to `[0, 1]` by `/255` and digit
/// `d` becomes label `d + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let label_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let images = parse_idx_images(&image_bytes, images_path)?;
    let digits = parse_idx_labels(&label_bytes, labels_path)?;
    if digits.len() != images.count {
        return Err(Error::format(
            labels_path,
            "byte offset 4",
            format!("{} labels for {} images", digits.len(), images.count),
        ));
    }
    let m = images.rows * images.cols;
    let inputs: Vec<Vec<f64>> = if m == 0 {
        vec![Vec::new(); images.count]
    } else {
        images
            .pixels
            .chunks_exact(m)
            .map(|px| px.iter().map(|&p| f64::from(p) / 255.0).collect())
            .collect()
    };
    let labels: Vec<usize> = digits.iter().map(|&d| usize::from(d) + 1).collect();
    Dataset::new("mnist", m, 10, inputs, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (IdxImages, Vec<u8>) {
        let images = IdxImages {
            count: 3,
            rows: 2,
            cols: 2,
            pixels: vec![0, 0, 0, 0, 255, 128, 1, 0, 9, 9, 9, 9],
        };
        (images, vec![0, 7, 9])
    }

    #[test]
    fn encode_parse_round_trip() {
        let (images, digits) = tiny();
        let p = Path::new("mem");
        let enc = encode_idx_images(&images);
        assert_eq!(&enc[..4], &[0, 0, 8, 3]);
        assert_eq!(parse_idx_images(&enc, p).unwrap(), images);
        assert_eq!(parse_idx_labels(&encode_idx_labels(&digits), p).unwrap(), digits);
    }

    #[test]
    fn load_scales_and_maps_labels() {
        let dir = tempfile::tempdir().unwrap();
        let (images, digits) = tiny();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        fs::write(&ip, encode_idx_images(&images)).unwrap();
        fs::write(&lp, encode_idx_labels(&digits)).unwrap();
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!((d.len(), d.input_dim(), d.classes()), (3, 4, 10));
        assert_eq!(d.input(0), &[0.0; 4]);
        assert_eq!(d.input(1)[0], 1.0);
        assert_eq!(d.input(1)[1], 128.0 / 255.0);
        assert_eq!(d.one_hot_label(0), crate::datasets::one_hot(1, 10).unwrap());
        assert_eq!(d.labels(), vec![1, 8, 10]);
    }

    #[test]
    fn format_errors_name_offsets() {
        let p = Path::new("f");
        let (images, digits) = tiny();
        let mut enc = encode_idx_images(&images);
        enc[3] = 0x01;
        let e = parse_idx_images(&enc, p).unwrap_err().to_string();
        assert!(e.contains("byte offset 0") && e.contains("magic"), "{e}");

        let enc = encode_idx_images(&images);
        let e = parse_idx_images(&enc[..enc.len() - 1], p).unwrap_err().to_string();
        assert!(e.contains("truncated"), "{e}");
        let e = parse_idx_images(&enc[..6], p).unwrap_err().to_string();
        assert!(e.contains("byte offset 4"), "{e}");

        let mut lab = encode_idx_labels(&digits);
        lab[9] = 12;
        let e = parse_idx_labels(&lab, p).unwrap_err().to_string();
        assert!(e.contains("byte offset 9"), "{e}");
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (images, _) = tiny();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        fs::write(&ip, encode_idx_images(&images)).unwrap();
        fs::write(&lp, encode_idx_labels(&[1, 2])).unwrap();
        let e = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(e.contains("2 labels for 3 images"), "{e}");
    }
}
