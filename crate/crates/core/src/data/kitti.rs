//! Reader for the on-disk scan format: points as packed little-endian f32
//! quadruples (x, y, z, remission), labels as little-endian u32 words with
//! the semantic class in the low 16 bits.

use std::path::Path;

use crate::error::{Error, Result};
use crate::projection::{Point, PointCloud};

pub fn read_kitti_scan(points_path: &Path, labels_path: Option<&Path>) -> Result<PointCloud> {
    let bytes = std::fs::read(points_path).map_err(|e| Error::io(points_path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Parse {
            path: points_path.to_path_buf(),
            offset: (bytes.len() / 16 * 16) as u64,
            message: format!(
                "file size {} is not a multiple of 16 (truncated record)",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / 16;
    let mut points = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        points.push(Point {
            x: f(0),
            y: f(1),
            z: f(2),
            intensity: f(3).clamp(0.0, 1.0),
        });
    }

    let labels = match labels_path {
        None => None,
        Some(lp) => {
            let lbytes = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
            if lbytes.len() % 4 != 0 {
                return Err(Error::Parse {
                    path: lp.to_path_buf(),
                    offset: (lbytes.len() / 4 * 4) as u64,
                    message: format!(
                        "label file size {} is not a multiple of 4",
                        lbytes.len()
                    ),
                });
            }
            if lbytes.len() / 4 != n {
                return Err(Error::Parse {
                    path: lp.to_path_buf(),
                    offset: lbytes.len() as u64,
                    message: format!("{} labels for {} points", lbytes.len() / 4, n),
                });
            }
            Some(
                lbytes
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()) & 0xFFFF)
                    .collect(),
            )
        }
    };

    PointCloud::new(points, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("sacseg_kitti_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn single_record_parses() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let p = write_tmp("one.bin", &bytes);
        let cloud = read_kitti_scan(&p, None).unwrap();
        assert_eq!(cloud.len(), 1);
        let pt = cloud.points()[0];
        assert_eq!((pt.x, pt.y, pt.z, pt.intensity), (1.0, 2.0, 3.0, 0.5));
    }

    #[test]
    fn label_word_takes_low_16_bits() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 0.0, 0.0, 0.1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let p = write_tmp("pts.bin", &bytes);
        let l = write_tmp("pts.label", &0x0001_0009u32.to_le_bytes());
        let cloud = read_kitti_scan(&p, Some(&l)).unwrap();
        assert_eq!(cloud.labels(), Some(&[9u32][..]));
    }

    #[test]
    fn empty_file_gives_empty_cloud() {
        let p = write_tmp("empty.bin", &[]);
        let cloud = read_kitti_scan(&p, None).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn truncated_file_reports_byte_offset() {
        let p = write_tmp("trunc.bin", &[0u8; 20]);
        let err = read_kitti_scan(&p, None).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 16),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn label_count_mismatch_rejected() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 0.0, 0.0, 0.1, 2.0, 0.0, 0.0, 0.1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let p = write_tmp("two.bin", &bytes);
        let l = write_tmp("two.label", &1u32.to_le_bytes());
        assert!(read_kitti_scan(&p, Some(&l)).is_err());
    }
}
