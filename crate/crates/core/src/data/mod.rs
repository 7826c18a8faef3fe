//! Deterministic synthetic LiDAR scenes, the on-disk scan formats, and
//! dataset split handling.

mod cache;
mod kitti;
mod scene;

pub use cache::{read_cloud, write_cloud};
pub use kitti::read_kitti_scan;
pub use scene::{generate_scene, SceneConfig};

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::projection::PointCloud;

/// Synthetic class ids. 0 is reserved for unlabeled/unprojected pixels.
pub mod classes {
    pub const IGNORE: u32 = 0;
    pub const GROUND: u32 = 1;
    pub const BUILDING: u32 = 2;
    pub const VEHICLE: u32 = 3;
    pub const POLE: u32 = 4;
    pub const VEGETATION: u32 = 5;
    pub const NUM_CLASSES: usize = 6;
    pub const NAMES: [&str; NUM_CLASSES] =
        ["ignore", "ground", "building", "vehicle", "pole", "vegetation"];
}

enum ScanRef {
    Synthetic(SceneConfig),
    File {
        points: PathBuf,
        labels: Option<PathBuf>,
    },
    Cached(PathBuf),
}

/// Ordered scan collection with deterministic iteration. Scans load lazily.
pub struct Dataset {
    scans: Vec<ScanRef>,
}

impl Dataset {
    /// `count` synthetic scans seeded `base_seed, base_seed+1, ...` from the
    /// given template.
    pub fn synthetic(count: usize, base_seed: u64, template: &SceneConfig) -> Self {
        let scans = (0..count)
            .map(|i| {
                let mut cfg = template.clone();
                cfg.seed = base_seed + i as u64;
                ScanRef::Synthetic(cfg)
            })
            .collect();
        Dataset { scans }
    }

    /// Scans of the given sequences under `dir/sequences/SS/velodyne/*.bin`,
    /// each grouped with its label file when present, ordered by sequence then
    /// file name.
    pub fn kitti(dir: impl Into<PathBuf>, sequences: &[u32]) -> Result<Self> {
        let dir = dir.into();
        let mut scans = Vec::new();
        for &seq in sequences {
            let vdir = dir.join("sequences").join(format!("{seq:02}")).join("velodyne");
            let mut files: Vec<PathBuf> = std::fs::read_dir(&vdir)
                .map_err(|e| Error::io(&vdir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "bin"))
                .collect();
            files.sort();
            for points in files {
                let labels = points
                    .parent()
                    .and_then(|p| p.parent())
                    .map(|p| {
                        p.join("labels").join(
                            points
                                .file_stem()
                                .map(|s| format!("{}.label", s.to_string_lossy()))
                                .unwrap_or_default(),
                        )
                    })
                    .filter(|p| p.exists());
                scans.push(ScanRef::File { points, labels });
            }
        }
        Ok(Dataset { scans })
    }

    /// Scans cached in the point-cloud binary format.
    pub fn cached(paths: Vec<PathBuf>) -> Self {
        Dataset {
            scans: paths.into_iter().map(ScanRef::Cached).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn load(&self, index: usize) -> Result<PointCloud> {
        match &self.scans[index] {
            ScanRef::Synthetic(cfg) => Ok(generate_scene(cfg)),
            ScanRef::File { points, labels } => read_kitti_scan(points, labels.as_deref()),
            ScanRef::Cached(path) => read_cloud(path),
        }
    }
}

/// Reject overlapping synthetic seed ranges `[base, base+count)`.
pub fn validate_disjoint_seeds(train: (u64, usize), val: (u64, usize)) -> Result<()> {
    let (ts, tc) = train;
    let (vs, vc) = val;
    let t_end = ts + tc as u64;
    let v_end = vs + vc as u64;
    if ts < v_end && vs < t_end {
        return Err(Error::Config(format!(
            "synthetic seed ranges overlap: train [{ts}, {t_end}) vs val [{vs}, {v_end})"
        )));
    }
    Ok(())
}

/// The dataset's sequence split convention: sequences 0-7, 9, 10 train,
/// sequence 8 validates, 11-21 test.
pub fn kitti_split(split: &str) -> Result<Vec<u32>> {
    match split {
        "train" => Ok(vec![0, 1, 2, 3, 4, 5, 6, 7, 9, 10]),
        "val" => Ok(vec![8]),
        "test" => Ok((11..=21).collect()),
        other => Err(Error::Config(format!(
            "unknown split '{other}' (expected train, val, or test)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_split_disjointness() {
        assert!(validate_disjoint_seeds((7, 10), (1000, 3)).is_ok());
        assert!(validate_disjoint_seeds((7, 10), (17, 3)).is_ok());
        assert!(validate_disjoint_seeds((7, 10), (16, 3)).is_err());
        assert!(validate_disjoint_seeds((7, 10), (10, 3)).is_err());
        assert!(validate_disjoint_seeds((10, 3), (7, 10)).is_err());
    }

    #[test]
    fn split_convention() {
        assert_eq!(kitti_split("val").unwrap(), vec![8]);
        assert!(kitti_split("train").unwrap().contains(&9));
        assert!(!kitti_split("train").unwrap().contains(&8));
        assert!(kitti_split("weird").is_err());
    }

    #[test]
    fn dataset_iterates_identically_twice() {
        let template = SceneConfig::default();
        let ds = Dataset::synthetic(3, 100, &template);
        assert_eq!(ds.len(), 3);
        for i in 0..3 {
            let a = ds.load(i).unwrap();
            let b = ds.load(i).unwrap();
            assert_eq!(a.len(), b.len());
            assert_eq!(a.points()[0], b.points()[0]);
        }
    }
}
