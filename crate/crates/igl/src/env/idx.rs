//! IDX image/label file parsing (the MNIST/EMNIST container format).
//!
//! Big-endian headers: magic `0x00000803` for images (count, rows, cols),
//! `0x00000801` for labels (count). Pixel bytes are scaled to `[0, 1]`.

use std::fs;
use std::path::Path;

use super::EnvError;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn format_err(&self, detail: String) -> EnvError {
        EnvError::Format { path: self.path.into(), offset: self.offset as u64, detail }
    }

    fn read_u32(&mut self) -> Result<u32, EnvError> {
        if self.offset + 4 > self.bytes.len() {
            return Err(self.format_err(format!(
                "truncated header: need 4 bytes, file has {}",
                self.bytes.len() - self.offset
            )));
        }
        let mut buf = [0u8; 4];
        buf.copy_from_slice(&self.bytes[self.offset..self.offset + 4]);
        self.offset += 4;
        Ok(u32::from_be_bytes(buf))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], EnvError> {
        if self.offset + n > self.bytes.len() {
            return Err(self.format_err(format!(
                "truncated payload: need {n} bytes, file has {}",
                self.bytes.len() - self.offset
            )));
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }
}

/// Load an IDX image file as flattened `[0, 1]` feature vectors.
pub fn load_idx_images(path: &Path) -> Result<Vec<Vec<f64>>, EnvError> {
    let bytes = fs::read(path).map_err(|e| EnvError::Io { path: path.into(), source: e })?;
    let mut cur = Cursor { bytes: &bytes, offset: 0, path };
    let magic = cur.read_u32()?;
    if magic != IMAGE_MAGIC {
        return Err(EnvError::Format {
            path: path.into(),
            offset: 0,
            detail: format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let count = cur.read_u32()? as usize;
    let rows = cur.read_u32()? as usize;
    let cols = cur.read_u32()? as usize;
    let pixels = rows * cols;
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = cur.take(pixels)?;
        images.push(raw.iter().map(|&b| b as f64 / 255.0).collect());
    }
    Ok(images)
}

/// Load an IDX label file.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>, EnvError> {
    let bytes = fs::read(path).map_err(|e| EnvError::Io { path: path.into(), source: e })?;
    let mut cur = Cursor { bytes: &bytes, offset: 0, path };
    let magic = cur.read_u32()?;
    if magic != LABEL_MAGIC {
        return Err(EnvError::Format {
            path: path.into(),
            offset: 0,
            detail: format!("bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let count = cur.read_u32()? as usize;
    Ok(cur.take(count)?.to_vec())
}

/// Load a matched image/label pair and check the counts agree.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
) -> Result<(Vec<Vec<f64>>, Vec<u8>), EnvError> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(EnvError::Config(format!(
            "{} images but {} labels ({} / {})",
            images.len(),
            labels.len(),
            images_path.display(),
            labels_path.display()
        )));
    }
    Ok((images, labels))
}

/// Write an IDX image file (fixture/testing aid).
pub fn write_idx_images(
    path: &Path,
    images: &[Vec<u8>],
    rows: usize,
    cols: usize,
) -> Result<(), EnvError> {
    let mut bytes = Vec::with_capacity(16 + images.len() * rows * cols);
    bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        assert_eq!(img.len(), rows * cols, "image pixel count mismatch");
        bytes.extend_from_slice(img);
    }
    fs::write(path, bytes).map_err(|e| EnvError::Io { path: path.into(), source: e })
}

/// Write an IDX label file (fixture/testing aid).
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), EnvError> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    fs::write(path, bytes).map_err(|e| EnvError::Io { path: path.into(), source: e })
}
