//! Spherical projection of point clouds into LiDAR images, restoration of 2-d
//! predictions to 3-d labels, and per-pixel feature-distribution statistics.
//!
//! A point `(x, y, z)` with range `r = sqrt(x^2+y^2+z^2)` maps to
//! `p = floor(0.5 * (1 - atan2(y,x)/pi) * w)` and
//! `q = floor((1 - (asin(z/r) + f_down)/f) * h)`, both clamped to the image.
//! The vertical offset uses the downward field-of-view magnitude so that
//! elevation `+f_up` lands on row 0 and `-f_down` on row `h-1`; the literal
//! `+f_up` reading is available behind [`ProjectionConfig::literal_vertical`]
//! for comparison.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// N points with optional per-point class labels. Points at the exact sensor
/// origin (range 0, projection undefined) are dropped at ingestion and
/// counted.
#[derive(Clone, Debug)]
pub struct PointCloud {
    points: Vec<Point>,
    labels: Option<Vec<u32>>,
    dropped_zero_range: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, labels: Option<Vec<u32>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::Dimension(format!(
                    "labels length {} does not match point count {}",
                    l.len(),
                    points.len()
                )));
            }
        }
        let mut kept = Vec::with_capacity(points.len());
        let mut kept_labels = labels.as_ref().map(|_| Vec::with_capacity(points.len()));
        let mut dropped = 0usize;
        for (i, pt) in points.iter().enumerate() {
            if pt.x == 0.0 && pt.y == 0.0 && pt.z == 0.0 {
                dropped += 1;
                continue;
            }
            kept.push(*pt);
            if let (Some(out), Some(l)) = (&mut kept_labels, &labels) {
                out.push(l[i]);
            }
        }
        Ok(PointCloud {
            points: kept,
            labels: kept_labels,
            dropped_zero_range: dropped,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn dropped_zero_range(&self) -> usize {
        self.dropped_zero_range
    }
}

/// Image geometry and the sensor's vertical field of view (radian magnitudes).
#[derive(Clone, Copy, Debug)]
pub struct ProjectionConfig {
    pub h: usize,
    pub w: usize,
    pub f_up: f64,
    pub f_down: f64,
    /// Use the vertical offset exactly as printed (`+f_up`) instead of the
    /// FOV-covering `+f_down` reading.
    pub literal_vertical: bool,
    /// Keep the nearest point on pixel collisions instead of the farthest.
    pub keep_nearest: bool,
}

impl ProjectionConfig {
    pub fn new(h: usize, w: usize, f_up: f64, f_down: f64) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "image dims must be positive, got {h}x{w}"
            )));
        }
        if f_up + f_down <= 0.0 {
            return Err(Error::Config(format!(
                "vertical field of view must be positive, got f_up={f_up} f_down={f_down}"
            )));
        }
        Ok(ProjectionConfig {
            h,
            w,
            f_up,
            f_down,
            literal_vertical: false,
            keep_nearest: false,
        })
    }

    pub fn from_degrees(h: usize, w: usize, f_up_deg: f64, f_down_deg: f64) -> Result<Self> {
        Self::new(h, w, f_up_deg.to_radians(), f_down_deg.to_radians())
    }

    /// 64 x 2048 image with a 3 degree up / 25 degree down field of view.
    pub fn default_full() -> Self {
        Self::from_degrees(64, 2048, 3.0, 25.0).unwrap()
    }

    /// 64 x 512 image used by the ablation harness.
    pub fn default_ablation() -> Self {
        Self::from_degrees(64, 512, 3.0, 25.0).unwrap()
    }

    fn fov(&self) -> f64 {
        self.f_up + self.f_down
    }
}

/// Project a point: returns `(p, q, r)` (column, row, range). The out-of-FOV
/// row coordinate is clamped to the border.
pub fn project_point(pt: &Point, cfg: &ProjectionConfig) -> (usize, usize, f64) {
    let (p, q, r, _) = project_point_checked(pt, cfg);
    (p, q, r)
}

/// As [`project_point`], also reporting whether the row needed clamping.
pub fn project_point_checked(pt: &Point, cfg: &ProjectionConfig) -> (usize, usize, f64, bool) {
    let r = pt.range();
    assert!(r > 0.0, "cannot project a zero-range point");
    let pf = 0.5 * (1.0 - pt.y.atan2(pt.x) / PI) * cfg.w as f64;
    let elevation = (pt.z / r).asin();
    let offset = if cfg.literal_vertical {
        cfg.f_up
    } else {
        cfg.f_down
    };
    let qf = (1.0 - (elevation + offset) / cfg.fov()) * cfg.h as f64;
    let clamped = qf < 0.0 || qf >= cfg.h as f64;
    let p = (pf.floor() as i64).clamp(0, cfg.w as i64 - 1) as usize;
    let q = (qf.floor() as i64).clamp(0, cfg.h as i64 - 1) as usize;
    (p, q, r, clamped)
}

/// Projected feature grid: `(1, 5, h, w)` features ordered (x, y, z, r,
/// intensity), validity mask, retained point indices, optional label grid,
/// and the raw `(x, y, z)` coordinate map fed to the adaptive convolutions.
pub struct LidarImage<E: Elem> {
    pub features: Tensor<E>,
    pub coord_map: Tensor<E>,
    pub mask: Vec<bool>,
    pub index_map: Vec<Option<u32>>,
    pub label_map: Option<Vec<u32>>,
    pub h: usize,
    pub w: usize,
    /// Points whose row coordinate fell outside the vertical FOV.
    pub clamped_points: usize,
    /// Points beyond the first landing on an already-hit pixel.
    pub collisions: usize,
}

impl<E: Elem> LidarImage<E> {
    pub fn fill_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn fill_rate(&self) -> f64 {
        self.fill_count() as f64 / (self.h * self.w) as f64
    }
}

/// Build the LiDAR image. Pixel collisions keep the point with the largest
/// range (ties keep the larger point index), or the smallest range when
/// `keep_nearest` is set.
pub fn build_lidar_image<E: Elem>(cloud: &PointCloud, cfg: &ProjectionConfig) -> LidarImage<E> {
    assert!(!cloud.is_empty(), "cannot project an empty point cloud");
    let (h, w) = (cfg.h, cfg.w);
    let npx = h * w;
    // winner per pixel: (range, point index)
    let mut best: Vec<Option<(f64, u32)>> = vec![None; npx];
    let mut hits = vec![0u32; npx];
    let mut clamped = 0usize;
    for (i, pt) in cloud.points.iter().enumerate() {
        let (p, q, r, was_clamped) = project_point_checked(pt, cfg);
        if was_clamped {
            clamped += 1;
        }
        let px = q * w + p;
        hits[px] += 1;
        let cand = (r, i as u32);
        best[px] = Some(match best[px] {
            None => cand,
            Some(cur) => {
                let replace = if cfg.keep_nearest {
                    cand.0 < cur.0 || (cand.0 == cur.0 && cand.1 > cur.1)
                } else {
                    cand.0 > cur.0 || (cand.0 == cur.0 && cand.1 > cur.1)
                };
                if replace {
                    cand
                } else {
                    cur
                }
            }
        });
    }

    let mut features = vec![E::zero(); 5 * npx];
    let mut coords = vec![E::zero(); 3 * npx];
    let mut mask = vec![false; npx];
    let mut index_map = vec![None; npx];
    let mut label_map = cloud.labels.as_ref().map(|_| vec![0u32; npx]);
    for px in 0..npx {
        if let Some((r, idx)) = best[px] {
            let pt = &cloud.points[idx as usize];
            mask[px] = true;
            index_map[px] = Some(idx);
            features[px] = E::of(pt.x);
            features[npx + px] = E::of(pt.y);
            features[2 * npx + px] = E::of(pt.z);
            features[3 * npx + px] = E::of(r);
            features[4 * npx + px] = E::of(pt.intensity);
            coords[px] = E::of(pt.x);
            coords[npx + px] = E::of(pt.y);
            coords[2 * npx + px] = E::of(pt.z);
            if let (Some(lm), Some(labels)) = (&mut label_map, &cloud.labels) {
                lm[px] = labels[idx as usize];
            }
        }
    }
    let collisions = hits
        .iter()
        .map(|&c| (c as usize).saturating_sub(1))
        .sum::<usize>();

    LidarImage {
        features: Tensor::from_vec(&[1, 5, h, w], features),
        coord_map: Tensor::from_vec(&[1, 3, h, w], coords),
        mask,
        index_map,
        label_map,
        h,
        w,
        clamped_points: clamped,
        collisions,
    }
}

/// Map a 2-d prediction back onto every point of the cloud: each point takes
/// the predicted class at its own projected pixel (occluded points included).
pub fn restore_labels(
    pred: &[u32],
    cloud: &PointCloud,
    image_dims: (usize, usize),
    cfg: &ProjectionConfig,
) -> Result<Vec<u32>> {
    if image_dims != (cfg.h, cfg.w) {
        return Err(Error::Dimension(format!(
            "image dims {image_dims:?} do not match projection config {}x{}",
            cfg.h, cfg.w
        )));
    }
    if pred.len() != cfg.h * cfg.w {
        return Err(Error::Dimension(format!(
            "prediction has {} entries, expected {}",
            pred.len(),
            cfg.h * cfg.w
        )));
    }
    Ok(cloud
        .points
        .iter()
        .map(|pt| {
            let (p, q, _) = project_point(pt, cfg);
            pred[q * cfg.w + p]
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Per-pixel feature statistics
// ---------------------------------------------------------------------------

pub const CHANNEL_NAMES: [&str; 5] = ["x", "y", "z", "range", "intensity"];
const HIST_BINS: usize = 20;

#[derive(Clone, Debug)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u32>,
}

impl Histogram {
    fn build(values: &[f64]) -> Histogram {
        if values.is_empty() {
            return Histogram {
                lo: 0.0,
                hi: 0.0,
                counts: vec![0; HIST_BINS],
            };
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        let mut counts = vec![0u32; HIST_BINS];
        for &v in values {
            let b = (((v - lo) / span) * HIST_BINS as f64) as usize;
            counts[b.min(HIST_BINS - 1)] += 1;
        }
        Histogram { lo, hi, counts }
    }
}

#[derive(Clone, Debug)]
pub struct PixelStats {
    pub q: usize,
    pub p: usize,
    /// Number of scans in which this pixel was masked.
    pub count: usize,
    pub means: [f64; 5],
    pub histograms: [Histogram; 5],
}

pub struct ChannelStats {
    pub h: usize,
    pub w: usize,
    pub per_pixel: Vec<PixelStats>,
    /// Full h*w mean maps over masked occurrences for channels x, y, z.
    pub mean_maps: [Vec<f64>; 3],
    pub mean_counts: Vec<u32>,
}

/// Aggregate per-pixel histograms/means at the sampled pixels plus full-image
/// mean maps of the x, y, z channels across scans. A pixel never masked in
/// any scan reports count 0 rather than an error.
pub fn channel_stats<E: Elem>(
    scans: &[LidarImage<E>],
    sample_pixels: &[(usize, usize)],
) -> Result<ChannelStats> {
    let first = scans
        .first()
        .ok_or_else(|| Error::Config("channel_stats requires at least one scan".into()))?;
    let (h, w) = (first.h, first.w);
    for s in scans {
        if (s.h, s.w) != (h, w) {
            return Err(Error::Dimension(
                "all scans must share the same image dims".into(),
            ));
        }
    }
    for &(q, p) in sample_pixels {
        if q >= h || p >= w {
            return Err(Error::Dimension(format!(
                "sampled pixel ({q},{p}) out of bounds for {h}x{w}"
            )));
        }
    }

    let npx = h * w;
    let mut sums = [
        vec![0.0f64; npx],
        vec![0.0f64; npx],
        vec![0.0f64; npx],
    ];
    let mut counts = vec![0u32; npx];
    // collected per sampled pixel, per channel
    let mut samples: Vec<[Vec<f64>; 5]> = sample_pixels
        .iter()
        .map(|_| std::array::from_fn(|_| Vec::new()))
        .collect();

    for scan in scans {
        let data = scan.features.data();
        for px in 0..npx {
            if !scan.mask[px] {
                continue;
            }
            counts[px] += 1;
            for (c, sum) in sums.iter_mut().enumerate() {
                sum[px] += data[c * npx + px].as_f64();
            }
        }
        for (s, &(q, p)) in samples.iter_mut().zip(sample_pixels) {
            let px = q * w + p;
            if scan.mask[px] {
                for (c, vals) in s.iter_mut().enumerate() {
                    vals.push(data[c * npx + px].as_f64());
                }
            }
        }
    }

    let per_pixel = sample_pixels
        .iter()
        .zip(&samples)
        .map(|(&(q, p), vals)| {
            let count = vals[0].len();
            let means = std::array::from_fn(|c| {
                if count == 0 {
                    0.0
                } else {
                    vals[c].iter().sum::<f64>() / count as f64
                }
            });
            let histograms = std::array::from_fn(|c| Histogram::build(&vals[c]));
            PixelStats {
                q,
                p,
                count,
                means,
                histograms,
            }
        })
        .collect();

    let mean_maps = std::array::from_fn(|c| {
        (0..npx)
            .map(|px| {
                if counts[px] == 0 {
                    0.0
                } else {
                    sums[c][px] / counts[px] as f64
                }
            })
            .collect()
    });

    Ok(ChannelStats {
        h,
        w,
        per_pixel,
        mean_maps,
        mean_counts: counts,
    })
}

impl ChannelStats {
    /// Column means of a mean map over columns with any observation.
    pub fn column_means(&self, channel: usize) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        (0..w)
            .map(|p| {
                let mut s = 0.0;
                let mut n = 0u32;
                for q in 0..h {
                    let px = q * w + p;
                    if self.mean_counts[px] > 0 {
                        s += self.mean_maps[channel][px];
                        n += 1;
                    }
                }
                if n == 0 {
                    0.0
                } else {
                    s / n as f64
                }
            })
            .collect()
    }

    /// Row means of a mean map over rows with any observation.
    pub fn row_means(&self, channel: usize) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        (0..h)
            .map(|q| {
                let mut s = 0.0;
                let mut n = 0u32;
                for p in 0..w {
                    let px = q * w + p;
                    if self.mean_counts[px] > 0 {
                        s += self.mean_maps[channel][px];
                        n += 1;
                    }
                }
                if n == 0 {
                    0.0
                } else {
                    s / n as f64
                }
            })
            .collect()
    }

    /// Emit `means.csv` (header `q,p,channel,mean,count`), one histogram file
    /// per sampled pixel, and `mean_map_{x,y,z}.csv` full-image maps.
    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let means_path = dir.join("means.csv");
        let mut f =
            std::fs::File::create(&means_path).map_err(|e| Error::io(&means_path, e))?;
        writeln!(f, "q,p,channel,mean,count").map_err(|e| Error::io(&means_path, e))?;
        for ps in &self.per_pixel {
            for (c, name) in CHANNEL_NAMES.iter().enumerate() {
                writeln!(f, "{},{},{},{},{}", ps.q, ps.p, name, ps.means[c], ps.count)
                    .map_err(|e| Error::io(&means_path, e))?;
            }
        }

        for ps in &self.per_pixel {
            let hp = dir.join(format!("hist_q{}_p{}.csv", ps.q, ps.p));
            let mut f = std::fs::File::create(&hp).map_err(|e| Error::io(&hp, e))?;
            writeln!(f, "channel,bin_lo,bin_hi,count").map_err(|e| Error::io(&hp, e))?;
            for (c, name) in CHANNEL_NAMES.iter().enumerate() {
                let hist = &ps.histograms[c];
                let width = (hist.hi - hist.lo) / hist.counts.len() as f64;
                for (b, &n) in hist.counts.iter().enumerate() {
                    writeln!(
                        f,
                        "{},{},{},{}",
                        name,
                        hist.lo + b as f64 * width,
                        hist.lo + (b + 1) as f64 * width,
                        n
                    )
                    .map_err(|e| Error::io(&hp, e))?;
                }
            }
        }

        for (c, name) in ["x", "y", "z"].iter().enumerate() {
            let mp = dir.join(format!("mean_map_{name}.csv"));
            let mut f = std::fs::File::create(&mp).map_err(|e| Error::io(&mp, e))?;
            for q in 0..self.h {
                let row: Vec<String> = (0..self.w)
                    .map(|p| format!("{}", self.mean_maps[c][q * self.w + p]))
                    .collect();
                writeln!(f, "{}", row.join(",")).map_err(|e| Error::io(&mp, e))?;
            }
        }
        Ok(())
    }
}
