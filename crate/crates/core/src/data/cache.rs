//! Point-cloud binary cache format.
//!
//! Header (24 bytes): magic `b"SPCD"`, version `u32` LE (currently 1), point
//! count `u64` LE, has-labels flag `u8`, 7 reserved zero bytes. Body: `count`
//! records of (x, y, z, intensity) as little-endian f64 (32 bytes each),
//! followed by `count` little-endian u32 labels when the flag is set.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::projection::{Point, PointCloud};

const MAGIC: &[u8; 4] = b"SPCD";
const VERSION: u32 = 1;

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    let io = |e| Error::io(path, e);
    f.write_all(MAGIC).map_err(io)?;
    f.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    f.write_all(&(cloud.len() as u64).to_le_bytes()).map_err(io)?;
    f.write_all(&[u8::from(cloud.labels().is_some())]).map_err(io)?;
    f.write_all(&[0u8; 7]).map_err(io)?;
    for p in cloud.points() {
        for v in [p.x, p.y, p.z, p.intensity] {
            f.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    if let Some(labels) = cloud.labels() {
        for &l in labels {
            f.write_all(&l.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let mut f = std::io::BufReader::new(
        std::fs::File::open(path).map_err(|e| Error::io(path, e))?,
    );
    let parse = |offset: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset,
        message,
    };

    let mut head = [0u8; 24];
    f.read_exact(&mut head)
        .map_err(|_| parse(0, "header shorter than 24 bytes".into()))?;
    if &head[0..4] != MAGIC {
        return Err(parse(0, format!("bad magic {:?}", &head[0..4])));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(parse(4, format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let has_labels = head[16] != 0;

    let mut body = vec![0u8; count * 32];
    f.read_exact(&mut body)
        .map_err(|_| parse(24, format!("truncated point records (expected {count})")))?;
    let points = body
        .chunks_exact(32)
        .map(|rec| {
            let g = |i: usize| f64::from_le_bytes(rec[8 * i..8 * i + 8].try_into().unwrap());
            Point {
                x: g(0),
                y: g(1),
                z: g(2),
                intensity: g(3),
            }
        })
        .collect();

    let labels = if has_labels {
        let mut lbuf = vec![0u8; count * 4];
        f.read_exact(&mut lbuf).map_err(|_| {
            parse((24 + count * 32) as u64, "truncated label block".into())
        })?;
        Some(
            lbuf.chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    } else {
        None
    };

    PointCloud::new(points, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene, SceneConfig};

    #[test]
    fn cache_round_trip_is_exact() {
        let cloud = generate_scene(&SceneConfig {
            seed: 31,
            num_beams: 8,
            azimuth_steps: 32,
            ..SceneConfig::default()
        });
        let dir = std::env::temp_dir().join("sacseg_cache_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("scan.spcd");
        write_cloud(&path, &cloud).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(back.len(), cloud.len());
        for (a, b) in back.points().iter().zip(cloud.points()) {
            assert_eq!(a, b);
        }
        assert_eq!(back.labels(), cloud.labels());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = std::env::temp_dir().join("sacseg_cache_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.spcd");
        std::fs::write(&path, [0u8; 40]).unwrap();
        assert!(read_cloud(&path).is_err());
    }
}
