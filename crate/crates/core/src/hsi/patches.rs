//! Spatial neighbourhood patches with mirror padding at the borders.

use rayon::prelude::*;

use super::scene::HsiScene;
use super::split::Pixel;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `(n, 1, patch, patch, bands)` samples with their class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch<T = f32> {
    pub tensors: Tensor<T>,
    /// Zero-based class index, i.e. raster label minus one.
    pub labels: Vec<usize>,
    pub coords: Vec<(usize, usize)>,
}

impl<T: Real> PatchBatch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Reflects `i` into `[0, n)` without repeating the edge sample:
/// `-1 → 1`, `n → n - 2`. Handles offsets wider than the extent.
pub fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn check_patch(patch: usize) -> Result<()> {
    if patch == 0 || patch % 2 == 0 {
        return Err(Error::Config(format!("patch size must be odd, got {patch}")));
    }
    Ok(())
}

fn write_patch<T: Real>(scene: &HsiScene, row: usize, col: usize, patch: usize, out: &mut [T]) {
    let r = (patch / 2) as isize;
    let b = scene.bands;
    let cube = scene.cube.data();
    // Output is (i, j, band) which matches the (h, w, d) tail of the batch layout.
    for i in 0..patch {
        let y = mirror_index(row as isize + i as isize - r, scene.h);
        for j in 0..patch {
            let x = mirror_index(col as isize + j as isize - r, scene.w);
            let src = &cube[(y * scene.w + x) * b..][..b];
            let dst = &mut out[(i * patch + j) * b..][..b];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = T::from_f64(s as f64);
            }
        }
    }
}

/// `(n, 1, patch, patch, bands)` neighbourhoods of arbitrary coordinates,
/// labeled or not.
pub fn extract_at<T: Real>(scene: &HsiScene, coords: &[(usize, usize)], patch: usize) -> Result<Tensor<T>> {
    check_patch(patch)?;
    if let Some(&(r, c)) = coords.iter().find(|&&(r, c)| r >= scene.h || c >= scene.w) {
        return Err(Error::Range(format!("pixel ({r}, {c}) outside {}×{} scene", scene.h, scene.w)));
    }
    let vol = patch * patch * scene.bands;
    let mut data = vec![T::ZERO; coords.len() * vol];
    data.par_chunks_mut(vol.max(1))
        .zip(coords.par_iter())
        .for_each(|(out, &(r, c))| write_patch(scene, r, c, patch, out));
    Tensor::from_vec(&[coords.len(), 1, patch, patch, scene.bands], data)
}

/// Extracts the patches centred on `pixels`, in order.
pub fn extract_patches<T: Real>(scene: &HsiScene, pixels: &[Pixel], patch: usize) -> Result<PatchBatch<T>> {
    if let Some(p) = pixels.iter().find(|p| p.label < 1) {
        return Err(Error::Range(format!("pixel ({}, {}) is unlabeled", p.row, p.col)));
    }
    let coords: Vec<(usize, usize)> = pixels.iter().map(|p| (p.row, p.col)).collect();
    Ok(PatchBatch {
        tensors: extract_at(scene, &coords, patch)?,
        labels: pixels.iter().map(|p| p.label as usize - 1).collect(),
        coords,
    })
}

/// Consecutive batches of at most `batch_size` patches.
pub fn patch_batches<'a, T: Real>(
    scene: &'a HsiScene,
    pixels: &'a [Pixel],
    patch: usize,
    batch_size: usize,
) -> impl Iterator<Item = Result<PatchBatch<T>>> + 'a {
    pixels
        .chunks(batch_size.max(1))
        .map(move |chunk| extract_patches(scene, chunk, patch))
}
