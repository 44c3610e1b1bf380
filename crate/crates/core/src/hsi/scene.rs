//! Scene container and the `HSC1` / `HSL1` binary formats.
//!
//! ```text
//! HSC1: "HSC1" | h u32 | w u32 | bands u32 | h·w·bands f32, (row, col, band) order
//! HSL1: "HSL1" | h u32 | w u32 | h·w i32 labels (0 = unlabeled)
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const LABEL_MAGIC: &[u8; 4] = b"HSL1";

/// Calibrated cube plus label raster.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiScene {
    pub h: usize,
    pub w: usize,
    pub bands: usize,
    /// `(h, w, bands)`.
    pub cube: Tensor<f32>,
    /// Row-major `h·w` labels; 0 is unlabeled, classes are `1..=num_classes`.
    pub labels: Vec<i32>,
    pub num_classes: usize,
    pub class_names: Option<Vec<String>>,
}

impl HsiScene {
    pub fn new(cube: Tensor<f32>, labels: Vec<i32>) -> Result<Self> {
        let [h, w, bands] = match cube.shape() {
            &[h, w, b] => [h, w, b],
            s => return Err(Error::Shape(format!("cube must be (h, w, bands), got {s:?}"))),
        };
        if labels.len() != h * w {
            return Err(Error::Shape(format!(
                "label raster has {} entries, cube is {h}×{w}",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l < 0) {
            return Err(Error::Range(format!("negative label {l}")));
        }
        cube.ensure_finite("scene cube")?;
        let num_classes = labels.iter().copied().max().unwrap_or(0) as usize;
        Ok(HsiScene {
            h,
            w,
            bands,
            cube,
            labels,
            num_classes,
            class_names: None,
        })
    }

    pub fn label_at(&self, row: usize, col: usize) -> i32 {
        self.labels[row * self.w + col]
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let base = (row * self.w + col) * self.bands;
        &self.cube.data()[base..base + self.bands]
    }

    /// Pixel count per class, index `c - 1` for class `c`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            if l > 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }
}

fn read_header(buf: &[u8], magic: &[u8; 4], fields: usize) -> Result<Vec<usize>> {
    if buf.len() < 4 || &buf[..4] != magic {
        return Err(Error::Format(format!(
            "magic mismatch: expected {:?}",
            std::str::from_utf8(magic).unwrap_or("?")
        )));
    }
    let end = 4 + 4 * fields;
    if buf.len() < end {
        return Err(Error::Format("header truncated".into()));
    }
    Ok(buf[4..end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect())
}

fn payload<'a>(buf: &'a [u8], offset: usize, count: usize) -> Result<&'a [u8]> {
    let need = offset + 4 * count;
    match buf.len().cmp(&need) {
        std::cmp::Ordering::Less => Err(Error::Format("payload shorter than header implies".into())),
        std::cmp::Ordering::Greater => Err(Error::Format("payload longer than header implies".into())),
        std::cmp::Ordering::Equal => Ok(&buf[offset..]),
    }
}

pub fn read_cube<R: Read>(mut r: R) -> Result<Tensor<f32>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let dims = read_header(&buf, CUBE_MAGIC, 3)?;
    let (h, w, b) = (dims[0], dims[1], dims[2]);
    if h == 0 || w == 0 || b == 0 {
        return Err(Error::Format(format!("cube extents must be positive, got {h}×{w}×{b}")));
    }
    let data: Vec<f32> = payload(&buf, 16, h * w * b)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let t = Tensor::from_vec(&[h, w, b], data)?;
    t.ensure_finite("cube payload")?;
    Ok(t)
}

pub fn read_labels<R: Read>(mut r: R) -> Result<(usize, usize, Vec<i32>)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let dims = read_header(&buf, LABEL_MAGIC, 2)?;
    let (h, w) = (dims[0], dims[1]);
    let labels = payload(&buf, 12, h * w)?
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((h, w, labels))
}

pub fn write_cube<W: Write>(mut w: W, cube: &Tensor<f32>) -> Result<()> {
    let dims = match cube.shape() {
        &[h, wd, b] => [h, wd, b],
        s => return Err(Error::Shape(format!("cube must be (h, w, bands), got {s:?}"))),
    };
    w.write_all(CUBE_MAGIC)?;
    for d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut bytes = Vec::with_capacity(cube.numel() * 4);
    for v in cube.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_labels<W: Write>(mut w: W, h: usize, width: usize, labels: &[i32]) -> Result<()> {
    if labels.len() != h * width {
        return Err(Error::Shape(format!("{} labels for a {h}×{width} raster", labels.len())));
    }
    w.write_all(LABEL_MAGIC)?;
    w.write_all(&(h as u32).to_le_bytes())?;
    w.write_all(&(width as u32).to_le_bytes())?;
    let mut bytes = Vec::with_capacity(labels.len() * 4);
    for v in labels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn load_scene(cube_path: &Path, label_path: &Path) -> Result<HsiScene> {
    let cube = read_cube(BufReader::new(File::open(cube_path)?))?;
    let (h, w, labels) = read_labels(BufReader::new(File::open(label_path)?))?;
    if cube.shape()[..2] != [h, w] {
        return Err(Error::Shape(format!(
            "cube is {}×{} but labels are {h}×{w}",
            cube.shape()[0],
            cube.shape()[1]
        )));
    }
    HsiScene::new(cube, labels)
}

pub fn save_scene(scene: &HsiScene, cube_path: &Path, label_path: &Path) -> Result<()> {
    let mut c = BufWriter::new(File::create(cube_path)?);
    write_cube(&mut c, &scene.cube)?;
    c.flush()?;
    let mut l = BufWriter::new(File::create(label_path)?);
    write_labels(&mut l, scene.h, scene.w, &scene.labels)?;
    l.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Per band: zero mean, unit (population) variance. Constant bands become 0.
    Standardize,
    /// Per band: affine map onto `[0, 1]`. Constant bands become 0.
    MinMax,
}

pub fn normalize(scene: &HsiScene, mode: Normalization) -> Result<HsiScene> {
    scene.cube.ensure_finite("scene cube")?;
    let b = scene.bands;
    let n = scene.h * scene.w;
    let x = scene.cube.data();
    let mut out = vec![0.0f32; x.len()];
    for band in 0..b {
        let vals = || (0..n).map(|p| x[p * b + band] as f64);
        let (shift, scale) = match mode {
            Normalization::Standardize => {
                let mean = vals().sum::<f64>() / n as f64;
                let var = vals().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let sd = var.sqrt();
                (mean, if sd > 0.0 { 1.0 / sd } else { 0.0 })
            }
            Normalization::MinMax => {
                let (lo, hi) = vals().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
                (lo, if hi > lo { 1.0 / (hi - lo) } else { 0.0 })
            }
        };
        for p in 0..n {
            out[p * b + band] = ((x[p * b + band] as f64 - shift) * scale) as f32;
        }
    }
    let mut s = scene.clone();
    s.cube = Tensor::from_vec(scene.cube.shape(), out)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> HsiScene {
        let cube = Tensor::from_vec(&[4, 4, 3], (0..48).map(|i| i as f32 * 0.25 - 3.0).collect()).unwrap();
        let labels = (0..16).map(|i| (i % 3) as i32).collect();
        HsiScene::new(cube, labels).unwrap()
    }

    #[test]
    fn roundtrip_bit_exact() {
        let s = tiny();
        let mut cb = Vec::new();
        write_cube(&mut cb, &s.cube).unwrap();
        let mut lb = Vec::new();
        write_labels(&mut lb, 4, 4, &s.labels).unwrap();
        assert_eq!(cb.len(), 16 + 48 * 4);
        let cube = read_cube(cb.as_slice()).unwrap();
        for (a, b) in cube.data().iter().zip(s.cube.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(read_labels(lb.as_slice()).unwrap(), (4, 4, s.labels.clone()));
    }

    #[test]
    fn format_errors() {
        let s = tiny();
        let mut cb = Vec::new();
        write_cube(&mut cb, &s.cube).unwrap();
        let mut bad = cb.clone();
        bad[0] = b'X';
        assert!(read_cube(bad.as_slice()).unwrap_err().to_string().contains("magic"));
        cb.truncate(cb.len() - 4);
        assert!(read_cube(cb.as_slice())
            .unwrap_err()
            .to_string()
            .contains("payload shorter than header implies"));
        let mut nan = Vec::new();
        let mut c2 = s.cube.clone();
        c2.data_mut()[5] = f32::NAN;
        write_cube(&mut nan, &c2).unwrap();
        assert!(matches!(read_cube(nan.as_slice()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn load_rejects_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let s = tiny();
        let cp = dir.path().join("c.hsc");
        let lp = dir.path().join("l.hsl");
        write_cube(File::create(&cp).unwrap(), &s.cube).unwrap();
        write_labels(File::create(&lp).unwrap(), 2, 8, &s.labels).unwrap();
        assert!(matches!(load_scene(&cp, &lp), Err(Error::Shape(_))));
        save_scene(&s, &cp, &lp).unwrap();
        assert_eq!(load_scene(&cp, &lp).unwrap(), s);
    }

    #[test]
    fn class_bookkeeping() {
        let s = tiny();
        assert_eq!(s.num_classes, 2);
        assert_eq!(s.class_counts(), vec![5, 5]);
        assert_eq!(s.labeled_count(), 10);
    }

    #[test]
    fn standardize_matches_scalar_oracle() {
        let cube = Tensor::from_vec(
            &[3, 5, 4],
            (0..60).map(|i| ((i * 37 % 23) as f32).sin() * 4.0 + i as f32 * 0.1).collect(),
        )
        .unwrap();
        let s = HsiScene::new(cube, vec![1; 15]).unwrap();
        let z = normalize(&s, Normalization::Standardize).unwrap();
        for band in 0..4 {
            let v: Vec<f64> = (0..15).map(|p| z.cube.data()[p * 4 + band] as f64).collect();
            let mean = v.iter().sum::<f64>() / 15.0;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 15.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-5);
        }
        let again = normalize(&z, Normalization::Standardize).unwrap();
        for (a, b) in again.cube.data().iter().zip(z.cube.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let m = normalize(&s, Normalization::MinMax).unwrap();
        assert!(m.cube.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn constant_band_maps_to_zero() {
        let cube = Tensor::from_vec(&[2, 2, 2], vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0]).unwrap();
        let s = HsiScene::new(cube, vec![1; 4]).unwrap();
        for mode in [Normalization::Standardize, Normalization::MinMax] {
            let z = normalize(&s, mode).unwrap();
            for p in 0..4 {
                assert_eq!(z.cube.data()[p * 2], 0.0);
            }
        }
    }
}
