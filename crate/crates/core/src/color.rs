//! Skin-tone matching: redmean color distance, candidate filtering, and
//! texture moment matching.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ColorError {
    #[error("channel value {0} outside [0, 255]")]
    ChannelRange(f64),
    #[error("mask selects {0} pixels, need at least 2")]
    MaskTooSmall(usize),
    #[error("pixel buffer has {pixels} pixels but mask has {mask}")]
    MaskLength { pixels: usize, mask: usize },
}

/// 8-bit-range RGB color held as floats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rgb {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Rgb {
    pub fn new(r: f64, g: f64, b: f64) -> Result<Self, ColorError> {
        for v in [r, g, b] {
            if !(0.0..=255.0).contains(&v) {
                return Err(ColorError::ChannelRange(v));
            }
        }
        Ok(Self { r, g, b })
    }
}

/// Which form of the redmean distance to evaluate.
///
/// `Standard` is the usual low-cost approximation with channel weights
/// `2 + rbar/256`, `4`, `2 + (255 - rbar)/256` applied to the squared
/// channel differences. `AsPublished` reproduces the formula exactly as it
/// appears in the source report, where the red weight is added instead of
/// multiplied and the blue weight uses `255 + rbar`; it is kept for
/// comparison but is not a metric (it does not vanish for equal colors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedmeanVariant {
    #[default]
    Standard,
    AsPublished,
}

/// Perceptual color difference between two RGB colors.
pub fn redmean_distance(c1: &Rgb, c2: &Rgb, variant: RedmeanVariant) -> f64 {
    let rbar = 0.5 * (c1.r + c2.r);
    let dr = c1.r - c2.r;
    let dg = c1.g - c2.g;
    let db = c1.b - c2.b;
    match variant {
        RedmeanVariant::Standard => {
            ((2.0 + rbar / 256.0) * dr * dr
                + 4.0 * dg * dg
                + (2.0 + (255.0 - rbar) / 256.0) * db * db)
                .sqrt()
        }
        RedmeanVariant::AsPublished => {
            ((2.0 + rbar / 256.0) + dr * dr
                + 4.0 * dg * dg
                + (2.0 + (255.0 + rbar) / 256.0) * db * db)
                .sqrt()
        }
    }
}

/// Per-channel first and second moments of the masked region of a texture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub count: usize,
}

impl TextureStats {
    pub fn mean_rgb(&self) -> Rgb {
        Rgb {
            r: self.mean[0],
            g: self.mean[1],
            b: self.mean[2],
        }
    }
}

/// Population mean and standard deviation per channel over masked pixels.
pub fn compute_texture_stats(
    pixels: &[[f64; 3]],
    mask: &[bool],
) -> Result<TextureStats, ColorError> {
    if pixels.len() != mask.len() {
        return Err(ColorError::MaskLength {
            pixels: pixels.len(),
            mask: mask.len(),
        });
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count < 2 {
        return Err(ColorError::MaskTooSmall(count));
    }
    let mut mean = [0.0f64; 3];
    for (p, &m) in pixels.iter().zip(mask) {
        if m {
            for c in 0..3 {
                mean[c] += p[c];
            }
        }
    }
    for c in &mut mean {
        *c /= count as f64;
    }
    let mut var = [0.0f64; 3];
    for (p, &m) in pixels.iter().zip(mask) {
        if m {
            for c in 0..3 {
                let d = p[c] - mean[c];
                var[c] += d * d;
            }
        }
    }
    let std = [
        (var[0] / count as f64).sqrt(),
        (var[1] / count as f64).sqrt(),
        (var[2] / count as f64).sqrt(),
    ];
    Ok(TextureStats { mean, std, count })
}

/// Indices of library entries whose mean skin tone lies within `bound` of
/// the face mean, in library order. An empty result is valid; the caller
/// decides the fallback.
pub fn filter_candidates(
    face_mean: &Rgb,
    body_library: &[TextureStats],
    bound: f64,
    variant: RedmeanVariant,
) -> Vec<usize> {
    body_library
        .iter()
        .enumerate()
        .filter(|(_, stats)| redmean_distance(face_mean, &stats.mean_rgb(), variant) <= bound)
        .map(|(i, _)| i)
        .collect()
}

/// Remaps masked pixels so their per-channel mean and standard deviation
/// match the face stats: `p' = (p - mu_body) * (sigma_face / sigma_body) +
/// mu_face`. A zero body sigma degenerates to a pure mean shift. Unmasked
/// pixels are untouched; no clamping is applied.
pub fn match_moments_unclamped(
    pixels: &[[f64; 3]],
    face: &TextureStats,
    mask: &[bool],
) -> Result<Vec<[f64; 3]>, ColorError> {
    let body = compute_texture_stats(pixels, mask)?;
    let mut out = pixels.to_vec();
    for (p, &m) in out.iter_mut().zip(mask) {
        if m {
            for c in 0..3 {
                let scale = if body.std[c] > 0.0 {
                    face.std[c] / body.std[c]
                } else {
                    1.0
                };
                p[c] = (p[c] - body.mean[c]) * scale + face.mean[c];
            }
        }
    }
    Ok(out)
}

/// [`match_moments_unclamped`] followed by clamping to [0, 255].
pub fn match_moments(
    pixels: &[[f64; 3]],
    face: &TextureStats,
    mask: &[bool],
) -> Result<Vec<[f64; 3]>, ColorError> {
    let mut out = match_moments_unclamped(pixels, face, mask)?;
    for (p, &m) in out.iter_mut().zip(mask) {
        if m {
            for c in p.iter_mut() {
                *c = c.clamp(0.0, 255.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_colors_have_zero_standard_distance() {
        let c = Rgb::new(120.0, 64.0, 200.0).unwrap();
        assert_eq!(redmean_distance(&c, &c, RedmeanVariant::Standard), 0.0);
    }

    #[test]
    fn black_vs_white() {
        let black = Rgb::new(0.0, 0.0, 0.0).unwrap();
        let white = Rgb::new(255.0, 255.0, 255.0).unwrap();
        let d = redmean_distance(&black, &white, RedmeanVariant::Standard);
        // Both red weights evaluate with rbar = 127.5.
        let expected = (255.0f64.powi(2) * (2.0 + 127.5 / 256.0)
            + 4.0 * 255.0f64.powi(2)
            + 255.0f64.powi(2) * (2.0 + 127.5 / 256.0))
        .sqrt();
        assert_relative_eq!(d, expected, epsilon = 1e-12);
        assert_relative_eq!(d, 764.83, epsilon = 0.01);
    }

    #[test]
    fn adjacent_reds() {
        let a = Rgb::new(255.0, 0.0, 0.0).unwrap();
        let b = Rgb::new(254.0, 0.0, 0.0).unwrap();
        let d = redmean_distance(&a, &b, RedmeanVariant::Standard);
        assert_relative_eq!(d, (2.0f64 + 254.5 / 256.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(d, 1.7304, epsilon = 1e-3);
    }

    #[test]
    fn distance_is_symmetric() {
        let a = Rgb::new(10.0, 200.0, 30.0).unwrap();
        let b = Rgb::new(110.0, 20.0, 190.0).unwrap();
        for variant in [RedmeanVariant::Standard, RedmeanVariant::AsPublished] {
            assert_eq!(
                redmean_distance(&a, &b, variant),
                redmean_distance(&b, &a, variant)
            );
        }
    }

    #[test]
    fn published_variant_matches_printed_formula() {
        let a = Rgb::new(100.0, 50.0, 25.0).unwrap();
        let b = Rgb::new(80.0, 60.0, 40.0).unwrap();
        let rbar = 90.0f64;
        let expected = ((2.0 + rbar / 256.0)
            + 400.0
            + 4.0 * 100.0
            + (2.0 + (255.0 + rbar) / 256.0) * 225.0)
            .sqrt();
        assert_relative_eq!(
            redmean_distance(&a, &b, RedmeanVariant::AsPublished),
            expected,
            epsilon = 1e-12
        );
        // As printed, the formula keeps a constant term: equal inputs do not
        // give zero.
        assert!(redmean_distance(&a, &a, RedmeanVariant::AsPublished) > 1.0);
    }

    fn stats(r: f64, g: f64, b: f64) -> TextureStats {
        TextureStats {
            mean: [r, g, b],
            std: [1.0, 1.0, 1.0],
            count: 10,
        }
    }

    #[test]
    fn infinite_bound_keeps_everything() {
        let lib = vec![stats(0.0, 0.0, 0.0), stats(255.0, 255.0, 255.0)];
        let face = Rgb::new(128.0, 128.0, 128.0).unwrap();
        let got = filter_candidates(&face, &lib, f64::INFINITY, RedmeanVariant::Standard);
        assert_eq!(got, vec![0, 1]);
    }

    #[test]
    fn zero_bound_keeps_exact_match_only() {
        let lib = vec![stats(10.0, 20.0, 30.0), stats(10.0, 20.0, 31.0)];
        let face = Rgb::new(10.0, 20.0, 30.0).unwrap();
        let got = filter_candidates(&face, &lib, 0.0, RedmeanVariant::Standard);
        assert_eq!(got, vec![0]);
    }

    #[test]
    fn fixture_library_filters_to_expected_subset() {
        let face = Rgb::new(180.0, 120.0, 100.0).unwrap();
        let lib = vec![
            stats(180.0, 120.0, 100.0), // d = 0
            stats(182.0, 121.0, 99.0),  // small
            stats(250.0, 40.0, 10.0),   // large
            stats(178.0, 119.0, 103.0), // small
            stats(10.0, 240.0, 250.0),  // large
        ];
        let distances: Vec<f64> = lib
            .iter()
            .map(|s| redmean_distance(&face, &s.mean_rgb(), RedmeanVariant::Standard))
            .collect();
        // Hand-check the two large ones really are far.
        assert!(distances[2] > 100.0 && distances[4] > 100.0);
        let got = filter_candidates(&face, &lib, 20.0, RedmeanVariant::Standard);
        assert_eq!(got, vec![0, 1, 3]);
    }

    #[test]
    fn bound_monotonicity() {
        let face = Rgb::new(100.0, 100.0, 100.0).unwrap();
        let lib: Vec<TextureStats> = (0..20)
            .map(|i| stats(i as f64 * 12.0, 100.0, 100.0))
            .collect();
        let mut prev: Vec<usize> = Vec::new();
        for bound in [0.0, 10.0, 50.0, 200.0, 1000.0] {
            let got = filter_candidates(&face, &lib, bound, RedmeanVariant::Standard);
            assert!(prev.iter().all(|i| got.contains(i)));
            prev = got;
        }
    }

    #[test]
    fn matching_stats_leaves_pixels_unchanged() {
        let pixels = vec![[10.0, 20.0, 30.0], [30.0, 40.0, 50.0], [20.0, 30.0, 40.0]];
        let mask = vec![true, true, true];
        let face = compute_texture_stats(&pixels, &mask).unwrap();
        let out = match_moments_unclamped(&pixels, &face, &mask).unwrap();
        for (a, b) in out.iter().zip(&pixels) {
            for c in 0..3 {
                assert_relative_eq!(a[c], b[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn constant_body_becomes_face_mean() {
        let pixels = vec![[50.0, 60.0, 70.0]; 4];
        let mask = vec![true, true, true, false];
        let face = TextureStats {
            mean: [100.0, 110.0, 120.0],
            std: [5.0, 6.0, 7.0],
            count: 100,
        };
        let out = match_moments_unclamped(&pixels, &face, &mask).unwrap();
        for p in &out[..3] {
            assert_eq!(*p, [100.0, 110.0, 120.0]);
        }
        // Unmasked pixel untouched.
        assert_eq!(out[3], [50.0, 60.0, 70.0]);
    }

    #[test]
    fn adjusted_moments_match_target() {
        let pixels: Vec<[f64; 3]> = (0..64)
            .map(|i| {
                let t = i as f64;
                [
                    120.0 + 30.0 * (0.3 * t).sin(),
                    90.0 + 20.0 * (0.7 * t).cos(),
                    60.0 + 10.0 * (1.1 * t).sin(),
                ]
            })
            .collect();
        let mask: Vec<bool> = (0..64).map(|i| i % 3 != 0).collect();
        let face = TextureStats {
            mean: [140.0, 100.0, 80.0],
            std: [12.0, 9.0, 4.0],
            count: 999,
        };
        let out = match_moments_unclamped(&pixels, &face, &mask).unwrap();
        let got = compute_texture_stats(&out, &mask).unwrap();
        for c in 0..3 {
            assert_relative_eq!(got.mean[c], face.mean[c], epsilon = 1e-6);
            assert_relative_eq!(got.std[c], face.std[c], epsilon = 1e-6);
        }
    }

    #[test]
    fn moment_matching_is_idempotent_pre_clamp() {
        let pixels: Vec<[f64; 3]> = (0..32)
            .map(|i| {
                let t = i as f64;
                [100.0 + t, 50.0 + 2.0 * t, 25.0 + 0.5 * t]
            })
            .collect();
        let mask = vec![true; 32];
        let face = TextureStats {
            mean: [90.0, 85.0, 75.0],
            std: [3.0, 2.0, 1.0],
            count: 10,
        };
        let once = match_moments_unclamped(&pixels, &face, &mask).unwrap();
        let twice = match_moments_unclamped(&once, &face, &mask).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            for c in 0..3 {
                assert_relative_eq!(a[c], b[c], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn clamped_output_stays_in_range() {
        let pixels = vec![[250.0, 5.0, 128.0], [255.0, 0.0, 96.0], [240.0, 10.0, 160.0]];
        let mask = vec![true; 3];
        let face = TextureStats {
            mean: [250.0, 5.0, 128.0],
            std: [90.0, 90.0, 90.0],
            count: 10,
        };
        let out = match_moments(&pixels, &face, &mask).unwrap();
        for p in &out {
            for &c in p {
                assert!((0.0..=255.0).contains(&c));
            }
        }
    }

    #[test]
    fn empty_mask_is_error() {
        let pixels = vec![[0.0, 0.0, 0.0]; 4];
        let mask = vec![false; 4];
        let face = stats(0.0, 0.0, 0.0);
        assert!(matches!(
            match_moments(&pixels, &face, &mask),
            Err(ColorError::MaskTooSmall(0))
        ));
    }
}
