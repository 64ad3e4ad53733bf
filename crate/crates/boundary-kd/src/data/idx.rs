//! IDX (MNIST-style) file loading, gzip sniffed transparently.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::oracle::ClassLabel;
use crate::shape::Shape;

use super::Dataset;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Whole file, decompressed if it starts with the gzip magic `1F 8B`.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u32_be(&mut self, context: &'static str) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::Truncated {
                wanted: self.pos + 4 - self.bytes.len(),
                context,
            });
        }
        let b = &self.bytes[self.pos..self.pos + 4];
        self.pos += 4;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn payload(&mut self, len: usize, context: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(Error::Truncated {
                wanted: len - (self.bytes.len() - self.pos),
                context,
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::InvalidConfig(format!(
                "{} trailing bytes after IDX payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Load an image/label IDX pair: big-endian headers, magic `0x00000803`
/// (images, dims n x rows x cols) and `0x00000801` (labels, dim n); pixel
/// bytes scaled to `[0, 1]` by division with 255. The class count is the
/// largest label plus one.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = read_maybe_gz(images_path)?;
    let mut c = Cursor {
        bytes: &image_bytes,
        pos: 0,
    };
    let magic = c.u32_be("image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            got: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let n = c.u32_be("image count")? as usize;
    let rows = c.u32_be("image rows")? as usize;
    let cols = c.u32_be("image cols")? as usize;
    let pixels = c.payload(
        n.checked_mul(rows)
            .and_then(|v| v.checked_mul(cols))
            .ok_or(Error::InvalidConfig("IDX dimensions overflow".into()))?,
        "image pixels",
    )?;
    c.expect_end()?;

    let label_bytes = read_maybe_gz(labels_path)?;
    let mut c = Cursor {
        bytes: &label_bytes,
        pos: 0,
    };
    let magic = c.u32_be("label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            got: magic,
            expected: LABEL_MAGIC,
        });
    }
    let label_n = c.u32_be("label count")? as usize;
    let raw_labels = c.payload(label_n, "labels")?;
    c.expect_end()?;

    if label_n != n {
        return Err(Error::CountMismatch {
            left: "images",
            left_count: n,
            right: "labels",
            right_count: label_n,
        });
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::EmptyDataset);
    }
    let images: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let labels: Vec<ClassLabel> = raw_labels.iter().map(|&b| ClassLabel(b as usize)).collect();
    let class_count = raw_labels.iter().copied().max().unwrap() as usize + 1;
    Dataset::new(
        Shape::new(1, cols, rows),
        class_count,
        images,
        labels,
        "idx",
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    pub(super) fn idx_image_bytes(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        out.extend_from_slice(&n.to_be_bytes());
        out.extend_from_slice(&rows.to_be_bytes());
        out.extend_from_slice(&cols.to_be_bytes());
        out.extend_from_slice(pixels);
        out
    }

    pub(super) fn idx_label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    fn write_pair(
        dir: &Path,
        images: &[u8],
        labels: &[u8],
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("images-idx3-ubyte");
        let lp = dir.join("labels-idx1-ubyte");
        std::fs::write(&ip, images).unwrap();
        std::fs::write(&lp, labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn loads_a_valid_pair() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 10) as u8).collect();
        let (ip, lp) = write_pair(
            dir.path(),
            &idx_image_bytes(2, 3, 3, &pixels),
            &idx_label_bytes(&[1, 0]),
        );
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape, Shape::new(1, 3, 3));
        assert_eq!(ds.class_count, 2);
        assert_eq!(ds.label(0), ClassLabel(1));
    }

    #[test]
    fn pixel_255_becomes_exactly_one() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(
            dir.path(),
            &idx_image_bytes(1, 1, 1, &[255]),
            &idx_label_bytes(&[0, 0]),
        );
        // Fix the label count to 1.
        std::fs::write(&lp, idx_label_bytes(&[0])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.image(0)[0], 1.0);
    }

    #[test]
    fn label_file_as_images_is_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let labels = idx_label_bytes(&[0, 1]);
        let (ip, lp) = write_pair(dir.path(), &labels, &labels);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(
            err,
            Error::BadMagic {
                got: LABEL_MAGIC,
                expected: IMAGE_MAGIC
            }
        ));
    }

    #[test]
    fn count_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = vec![0u8; 9];
        let (ip, lp) = write_pair(
            dir.path(),
            &idx_image_bytes(1, 3, 3, &pixels),
            &idx_label_bytes(&[0, 1]),
        );
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::CountMismatch { .. })
        ));
    }

    #[test]
    fn gzip_is_sniffed() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = vec![7; 9];
        let raw = idx_image_bytes(1, 3, 3, &pixels);
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        let ip = dir.path().join("images.gz");
        std::fs::write(&ip, gz).unwrap();
        let lp = dir.path().join("labels");
        std::fs::write(&lp, idx_label_bytes(&[0])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn every_single_byte_header_mutation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..18).map(|i| i as u8).collect();
        let good_images = idx_image_bytes(2, 3, 3, &pixels);
        let good_labels = idx_label_bytes(&[0, 1]);
        for pos in 0..16 {
            for flip in [0x01u8, 0x80] {
                let mut mutated = good_images.clone();
                mutated[pos] ^= flip;
                let (ip, lp) = write_pair(dir.path(), &mutated, &good_labels);
                assert!(
                    load_idx(&ip, &lp).is_err(),
                    "mutation at byte {pos} (xor {flip:#x}) was accepted"
                );
            }
        }
    }
}
