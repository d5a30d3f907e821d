//! Image decode/encode at the 8-bit file boundary plus the debug renders.

use anyhow::{anyhow, Context, Result};
use image::{imageops, DynamicImage, ImageReader, Rgb, RgbImage};
use restyle_core::correspondence::MatchedPointSet;
use restyle_core::imagecore::PixelLoc;
use restyle_core::seeds::SuperpixelLabelMap;
use restyle_core::ImagePlane;
use std::path::Path;

pub fn load_image(path: &Path, pre_scale: f64) -> Result<ImagePlane> {
    let decoded = ImageReader::open(path)
        .with_context(|| format!("cannot open {}", path.display()))?
        .decode()
        .with_context(|| format!("cannot decode {}", path.display()))?;
    let decoded = if (pre_scale - 1.0).abs() > f64::EPSILON {
        let w = ((decoded.width() as f64 * pre_scale).round() as u32).max(1);
        let h = ((decoded.height() as f64 * pre_scale).round() as u32).max(1);
        DynamicImage::ImageRgb8(imageops::resize(
            &decoded.to_rgb8(),
            w,
            h,
            imageops::FilterType::Triangle,
        ))
    } else {
        decoded
    };
    let rgb = decoded.to_rgb8();
    Ok(ImagePlane::from_fn(
        rgb.width() as usize,
        rgb.height() as usize,
        |row, col| {
            let p = rgb.get_pixel(col as u32, row as u32);
            [
                p[0] as f64 / 255.0,
                p[1] as f64 / 255.0,
                p[2] as f64 / 255.0,
            ]
        },
    ))
}

pub fn to_rgb8(img: &ImagePlane) -> RgbImage {
    RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let p = img.get(y as usize, x as usize);
        Rgb([
            (p[0].clamp(0.0, 1.0) * 255.0).round() as u8,
            (p[1].clamp(0.0, 1.0) * 255.0).round() as u8,
            (p[2].clamp(0.0, 1.0) * 255.0).round() as u8,
        ])
    })
}

pub fn save_png(img: &ImagePlane, path: &Path) -> Result<()> {
    if path.extension().and_then(|e| e.to_str()) != Some("png") {
        return Err(anyhow!("output {} must end in .png", path.display()));
    }
    to_rgb8(img)
        .save(path)
        .with_context(|| format!("cannot write {}", path.display()))
}

/// Rescales and clamps match coordinates in the text so they stay consistent
/// with pre-scaled images. Lines that do not parse pass through untouched
/// and are reported by the pipeline with their original line numbers.
pub fn rescale_matches(
    text: &str,
    factor: f64,
    input_dims: (usize, usize),
    ref_dims: (usize, usize),
) -> String {
    if (factor - 1.0).abs() <= f64::EPSILON {
        return text.to_string();
    }
    let scale = |v: i64, limit: usize| -> i64 {
        (((v as f64) * factor).round() as i64).clamp(0, limit.saturating_sub(1) as i64)
    };
    text.lines()
        .map(|line| {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                return line.to_string();
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 5 {
                return line.to_string();
            }
            let parsed: Option<Vec<i64>> =
                fields[..4].iter().map(|f| f.parse::<i64>().ok()).collect();
            match parsed {
                Some(c) if c.iter().all(|&v| v >= 0) => format!(
                    "{} {} {} {} {}",
                    scale(c[0], input_dims.1),
                    scale(c[1], input_dims.0),
                    scale(c[2], ref_dims.1),
                    scale(c[3], ref_dims.0),
                    fields[4]
                ),
                _ => line.to_string(),
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Input image with a cross drawn over every kept match location.
pub fn render_match_overlay(img: &ImagePlane, matches: &MatchedPointSet) -> ImagePlane {
    let mut out = img.clone();
    let (w, h) = (img.width() as isize, img.height() as isize);
    for e in matches.entries() {
        let PixelLoc { row, col } = e.input_loc;
        for d in -2isize..=2 {
            for (r, c) in [(row as isize + d, col as isize), (row as isize, col as isize + d)] {
                if r >= 0 && c >= 0 && r < h && c < w {
                    out.set(r as usize, c as usize, [1.0, 0.0, 0.0]);
                }
            }
        }
    }
    out
}

/// Label map as a color-indexed image: golden-angle hues per superpixel id,
/// black for uncovered pixels.
pub fn render_label_map(map: &SuperpixelLabelMap) -> ImagePlane {
    ImagePlane::from_fn(map.width(), map.height(), |row, col| {
        match map.label(PixelLoc::new(row, col)) {
            Some(id) => label_color(id),
            None => [0.0, 0.0, 0.0],
        }
    })
}

fn label_color(id: usize) -> [f64; 3] {
    let hue = (id as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.65, 0.95);
    let c = v * s;
    let x = c * (1.0 - (hue % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match hue as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}
