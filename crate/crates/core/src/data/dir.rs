//! Directory datasets: `<root>/images/*.png` with optional
//! `<root>/depth/*.png` (16-bit grayscale, `value / 65535 * d_max`),
//! paired by file stem.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::Image;
use crate::nn::Tensor;

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && is_image {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &Tensor, height: usize, width: usize) -> Tensor {
    if (src.height, src.width) == (height, width) {
        return src.clone();
    }
    let sy = src.height as f32 / height as f32;
    let sx = src.width as f32 / width as f32;
    let coord = |d: usize, scale: f32, n: usize| -> (usize, usize, f32) {
        let s = ((d as f32 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f32)
    };
    let mut out = Tensor::zeros(src.channels, height, width);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, sy, src.height);
        for x in 0..width {
            let (x0, x1, fx) = coord(x, sx, src.width);
            for c in 0..src.channels {
                let top = src.at(c, y0, x0) * (1.0 - fx) + src.at(c, y0, x1) * fx;
                let bottom = src.at(c, y1, x0) * (1.0 - fx) + src.at(c, y1, x1) * fx;
                *out.at_mut(c, y, x) = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Nearest-neighbour resampling (used for depth so invalid zeros stay put).
pub fn resize_nearest(src: &Tensor, height: usize, width: usize) -> Tensor {
    let mut out = Tensor::zeros(src.channels, height, width);
    for y in 0..height {
        let sy = (y * src.height / height).min(src.height - 1);
        for x in 0..width {
            let sx = (x * src.width / width).min(src.width - 1);
            for c in 0..src.channels {
                *out.at_mut(c, y, x) = src.at(c, sy, sx);
            }
        }
    }
    out
}

pub fn load_image(path: &Path, (height, width): (usize, usize)) -> Result<Image> {
    let rgb = image::open(path).map_err(|e| Error::file(path, e))?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut t = Tensor::zeros(3, h as usize, w as usize);
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            *t.at_mut(c, y as usize, x as usize) = px[c] as f32 / 255.0;
        }
    }
    let resized = resize_bilinear(&t, height, width);
    Image::new(resized.map(|v| v.clamp(0.0, 1.0)))
}

/// Every image file in `dir`, lexicographic by file name, resized to
/// `resolution` `(height, width)`.
pub fn load_image_dir(dir: &Path, resolution: (usize, usize)) -> Result<Vec<Image>> {
    Ok(load_named_image_dir(dir, resolution)?
        .into_iter()
        .map(|(_, img)| img)
        .collect())
}

pub fn load_named_image_dir(dir: &Path, resolution: (usize, usize)) -> Result<Vec<(String, Image)>> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::input(format!("no image files in {}", dir.display())));
    }
    files
        .iter()
        .map(|f| {
            let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            load_image(f, resolution).map(|img| (stem, img))
        })
        .collect()
}

/// 16-bit depth PNG scaled to metres; zero marks missing ground truth.
pub fn load_depth_png(path: &Path, (height, width): (usize, usize), d_max: f32) -> Result<Tensor> {
    let gray = image::open(path).map_err(|e| Error::file(path, e))?.to_luma16();
    let (w, h) = gray.dimensions();
    let data = gray.pixels().map(|p| p[0] as f32 / 65535.0 * d_max).collect();
    let t = Tensor::from_vec(1, h as usize, w as usize, data);
    Ok(resize_nearest(&t, height, width))
}

/// A directory dataset: images plus depth where a same-stem depth file exists.
pub fn load_depth_dataset(
    root: &Path,
    resolution: (usize, usize),
    d_max: f32,
) -> Result<Vec<(String, Image, Option<Tensor>)>> {
    let images = load_named_image_dir(&root.join("images"), resolution)?;
    let depth_dir = root.join("depth");
    images
        .into_iter()
        .map(|(stem, img)| {
            let depth_path = depth_dir.join(format!("{stem}.png"));
            let depth = if depth_path.is_file() {
                Some(load_depth_png(&depth_path, resolution, d_max)?)
            } else {
                None
            };
            Ok((stem, img, depth))
        })
        .collect()
}
