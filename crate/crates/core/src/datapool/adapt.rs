//! Shape adaptation for foreign records mixed into an in-distribution pool.

use super::record::FeatureShape;
use crate::error::{Error, Result};

/// Converts `features` laid out as `from` into the layout `to`.
///
/// Grayscale images are channel-replicated to RGB (RGB is averaged down to
/// grayscale), then each channel is bilinearly resized with half-pixel
/// centers. Flat vectors must already match.
pub fn adapt_features(features: &[f32], from: FeatureShape, to: FeatureShape) -> Result<Vec<f32>> {
    if features.len() != from.dim() {
        return Err(Error::shape(from, format!("[{}]", features.len())));
    }
    if from == to {
        return Ok(features.to_vec());
    }
    match (from, to) {
        (
            FeatureShape::Image { channels: fc, height: fh, width: fw },
            FeatureShape::Image { channels: tc, height: th, width: tw },
        ) => {
            let plane = fh * fw;
            let planes: Vec<&[f32]> = features.chunks_exact(plane).collect();
            let converted: Vec<Vec<f32>> = match (fc, tc) {
                (a, b) if a == b => planes.iter().map(|p| p.to_vec()).collect(),
                (1, n) => vec![planes[0].to_vec(); n],
                (n, 1) => {
                    let mut gray = vec![0.0f32; plane];
                    for p in &planes {
                        for (g, v) in gray.iter_mut().zip(p.iter()) {
                            *g += v / n as f32;
                        }
                    }
                    vec![gray]
                }
                _ => return Err(Error::shape(to, from)),
            };
            let mut out = Vec::with_capacity(to.dim());
            for p in &converted {
                out.extend(resize_bilinear(p, fh, fw, th, tw));
            }
            Ok(out)
        }
        _ if from.dim() == to.dim() => Ok(features.to_vec()),
        _ => Err(Error::shape(to, from)),
    }
}

pub fn resize_bilinear(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    let coord = |dst: usize, scale: f32, len: usize| {
        let c = ((dst as f32 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f32);
        let lo = c.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, c - lo as f32)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, sy, h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, sx, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}
