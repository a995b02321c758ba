//! IDX (MNIST-style) ingestion and image rotation.

use std::path::Path;

use super::{DomainDataset, Sample};
use crate::error::{DaalError, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Load an IDX image/label pair as a single-domain fragment (domain 0).
/// Pixels are scaled to `[0, 1]`.
pub fn load_idx_pairs(images_path: &Path, labels_path: &Path) -> Result<DomainDataset> {
    let images = std::fs::read(images_path).map_err(|e| DaalError::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| DaalError::io(labels_path, e))?;

    let magic = be_u32(&images, 0).ok_or_else(|| DaalError::format(images_path, "missing header"))?;
    if magic != IMAGE_MAGIC {
        return Err(DaalError::format(images_path, format!("bad magic {magic:#010x}")));
    }
    let header = |at| be_u32(&images, at).ok_or_else(|| DaalError::format(images_path, "short header"));
    let count = header(4)? as usize;
    let rows = header(8)? as usize;
    let cols = header(12)? as usize;

    let magic = be_u32(&labels, 0).ok_or_else(|| DaalError::format(labels_path, "missing header"))?;
    if magic != LABEL_MAGIC {
        return Err(DaalError::format(labels_path, format!("bad magic {magic:#010x}")));
    }
    let label_count =
        be_u32(&labels, 4).ok_or_else(|| DaalError::format(labels_path, "short header"))? as usize;

    let dim = rows * cols;
    let pixels = &images[16..];
    let label_bytes = &labels[8..];
    if label_count != count {
        return Err(DaalError::Consistency(format!(
            "{count} images but {label_count} labels"
        )));
    }
    if pixels.len() != count * dim {
        return Err(DaalError::Consistency(format!(
            "image file holds {} pixel bytes, header declares {}",
            pixels.len(),
            count * dim
        )));
    }
    if label_bytes.len() != count {
        return Err(DaalError::Consistency(format!(
            "label file holds {} labels, header declares {count}",
            label_bytes.len()
        )));
    }

    let samples = pixels
        .chunks_exact(dim.max(1))
        .zip(label_bytes)
        .map(|(px, &y)| Sample {
            id: 0,
            x: px.iter().map(|&p| f64::from(p) / 255.0).collect(),
            y: usize::from(y),
            e: 0,
        })
        .collect();
    DomainDataset::new(samples, vec!["idx".into()])
}

/// Rotate a row-major `width x height` image about its centre by `angle`
/// degrees (counter-clockwise in image coordinates), sampling bilinearly.
/// Pixels that map outside the frame read as 0.
pub fn rotate_image(pixels: &[f64], width: usize, height: usize, angle: f64) -> Vec<f64> {
    let (s, c) = angle.to_radians().sin_cos();
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= width as isize || y >= height as isize {
            0.0
        } else {
            pixels[y as usize * width + x as usize]
        }
    };
    let mut out = vec![0.0; width * height];
    for oy in 0..height {
        for ox in 0..width {
            let dx = ox as f64 - cx;
            let dy = oy as f64 - cy;
            // Inverse map: where in the source does this output pixel come from.
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fx) * (1.0 - fy) * at(x0, y0)
                + fx * (1.0 - fy) * at(x0 + 1, y0)
                + (1.0 - fx) * fy * at(x0, y0 + 1)
                + fx * fy * at(x0 + 1, y0 + 1);
            out[oy * width + ox] = v;
        }
    }
    out
}

/// Rotate every image of a fragment. Ids, labels and domains are kept.
pub fn rotate_dataset(
    src: &DomainDataset,
    angle: f64,
    width: usize,
    height: usize,
) -> Result<DomainDataset> {
    if src.input_dim != width * height {
        return Err(DaalError::Consistency(format!(
            "input dimension {} does not equal {width}x{height}",
            src.input_dim
        )));
    }
    let mut out = src.clone();
    for s in &mut out.samples {
        s.x = rotate_image(&s.x, width, height, angle);
    }
    Ok(out)
}
