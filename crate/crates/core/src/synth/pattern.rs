//! Projector pattern rasterization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PatternImage;
use crate::rng;

/// Pattern family plus its parameters. One spec may rasterize to several
/// images (the graycode stack); all other kinds yield exactly one.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PatternSpec {
    /// One horizontal and one vertical line through the principal point.
    CrossLaser {
        #[serde(default = "default_red")]
        horizontal_color: [f64; 3],
        #[serde(default = "default_green")]
        vertical_color: [f64; 3],
        #[serde(default = "default_line_width")]
        line_width_px: usize,
    },
    /// Reflected-binary bit planes: for each axis, most-significant bit
    /// first, followed by the complements of those planes.
    GraycodeStack,
    /// Regular line grid.
    Grid {
        #[serde(default = "default_pitch")]
        pitch_px: usize,
        #[serde(default = "default_line_width")]
        line_width_px: usize,
        #[serde(default = "default_white")]
        color: [f64; 3],
    },
    /// Vertical lines with per-line colors drawn from a seeded palette.
    ColorfulLine {
        #[serde(default = "default_pitch")]
        pitch_px: usize,
        #[serde(default = "default_line_width")]
        line_width_px: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Independent white dots at the given density.
    RandomDot {
        #[serde(default = "default_density")]
        density: f64,
        #[serde(default)]
        seed: u64,
    },
    Solid {
        #[serde(default = "default_white")]
        color: [f64; 3],
    },
}

fn default_red() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}
fn default_green() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}
fn default_white() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}
fn default_line_width() -> usize {
    3
}
fn default_pitch() -> usize {
    16
}
fn default_density() -> f64 {
    0.05
}

impl Default for PatternSpec {
    fn default() -> Self {
        PatternSpec::CrossLaser {
            horizontal_color: default_red(),
            vertical_color: default_green(),
            line_width_px: default_line_width(),
        }
    }
}

/// Number of reflected-binary planes needed to address `n` values.
pub fn gray_bits(n: usize) -> usize {
    (n.max(2) as f64).log2().ceil() as usize
}

/// Reflected-binary code of `v`.
pub fn gray_code(v: usize) -> usize {
    v ^ (v >> 1)
}

/// Inverse of [`gray_code`].
pub fn gray_decode(mut g: usize) -> usize {
    let mut v = 0;
    while g != 0 {
        v ^= g;
        g >>= 1;
    }
    v
}

/// Rasterizes a pattern spec. Deterministic per seed; returns one image
/// for every kind except the graycode stack, which yields
/// 2·⌈log₂W⌉ + 2·⌈log₂H⌉ planes ordered: vertical planes (MSB first),
/// vertical complements, horizontal planes, horizontal complements.
pub fn rasterize_pattern(spec: &PatternSpec, width: usize, height: usize) -> Result<Vec<PatternImage>> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "pattern dimensions must be positive, got {width}x{height}"
        )));
    }
    match spec {
        PatternSpec::CrossLaser {
            horizontal_color,
            vertical_color,
            line_width_px,
        } => {
            let mut img = PatternImage::solid(width, height, [0.0; 3]);
            let w = *line_width_px;
            let (cx, cy) = (width / 2, height / 2);
            for y in band(cy, w, height) {
                for x in 0..width {
                    img.set_texel(x, y, *horizontal_color);
                }
            }
            for x in band(cx, w, width) {
                for y in 0..height {
                    // The vertical line wins at the crossing point.
                    img.set_texel(x, y, *vertical_color);
                }
            }
            Ok(vec![img])
        }
        PatternSpec::GraycodeStack => {
            let mut out = Vec::new();
            for (n, vertical) in [(width, true), (height, false)] {
                let bits = gray_bits(n);
                let mut planes = Vec::with_capacity(bits);
                for p in 0..bits {
                    let mut img = PatternImage::solid(width, height, [0.0; 3]);
                    for y in 0..height {
                        for x in 0..width {
                            let idx = if vertical { x } else { y };
                            let bit = (gray_code(idx) >> (bits - 1 - p)) & 1;
                            if bit == 1 {
                                img.set_texel(x, y, [1.0; 3]);
                            }
                        }
                    }
                    planes.push(img);
                }
                let complements: Vec<PatternImage> = planes
                    .iter()
                    .map(|img| {
                        let inv: Vec<f64> = img.pixels.iter().map(|v| 1.0 - v).collect();
                        PatternImage::new(width, height, inv).expect("complement")
                    })
                    .collect();
                out.extend(planes);
                out.extend(complements);
            }
            Ok(out)
        }
        PatternSpec::Grid {
            pitch_px,
            line_width_px,
            color,
        } => {
            if *pitch_px == 0 {
                return Err(Error::InvalidArgument("grid pitch must be positive".into()));
            }
            let mut img = PatternImage::solid(width, height, [0.0; 3]);
            for y in 0..height {
                for x in 0..width {
                    if x % pitch_px < *line_width_px || y % pitch_px < *line_width_px {
                        img.set_texel(x, y, *color);
                    }
                }
            }
            Ok(vec![img])
        }
        PatternSpec::ColorfulLine {
            pitch_px,
            line_width_px,
            seed,
        } => {
            if *pitch_px == 0 {
                return Err(Error::InvalidArgument("line pitch must be positive".into()));
            }
            let mut r = rng::stream(*seed, "colorful-line", &[]);
            let lines = width / pitch_px + 1;
            let colors: Vec<[f64; 3]> = (0..lines)
                .map(|_| {
                    // Saturated-ish colors: keep one channel high.
                    let mut c = [
                        r.gen_range(0.0..1.0),
                        r.gen_range(0.0..1.0),
                        r.gen_range(0.0..1.0),
                    ];
                    let hi = (0..3).max_by(|&a, &b| c[a].partial_cmp(&c[b]).unwrap()).unwrap();
                    c[hi] = 1.0;
                    c
                })
                .collect();
            let mut img = PatternImage::solid(width, height, [0.0; 3]);
            for x in 0..width {
                if x % pitch_px < *line_width_px {
                    let c = colors[x / pitch_px];
                    for y in 0..height {
                        img.set_texel(x, y, c);
                    }
                }
            }
            Ok(vec![img])
        }
        PatternSpec::RandomDot { density, seed } => {
            if !(0.0..=1.0).contains(density) {
                return Err(Error::InvalidArgument(format!(
                    "dot density {density} outside [0,1]"
                )));
            }
            let mut r = rng::stream(*seed, "random-dot", &[]);
            let mut img = PatternImage::solid(width, height, [0.0; 3]);
            for y in 0..height {
                for x in 0..width {
                    if r.gen_range(0.0..1.0) < *density {
                        img.set_texel(x, y, [1.0; 3]);
                    }
                }
            }
            Ok(vec![img])
        }
        PatternSpec::Solid { color } => Ok(vec![PatternImage::solid(width, height, *color)]),
    }
}

fn band(center: usize, width: usize, limit: usize) -> std::ops::Range<usize> {
    let lo = center.saturating_sub(width / 2);
    let hi = (lo + width).min(limit);
    lo..hi
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent reflected-binary oracle built by the textbook recursive
    /// construction (prepend 0 to the list, append 1 to its reverse).
    fn gray_list(bits: usize) -> Vec<usize> {
        let mut list = vec![0usize, 1];
        for b in 1..bits {
            let mirrored: Vec<usize> = list.iter().rev().map(|v| v | (1 << b)).collect();
            list.extend(mirrored);
        }
        list
    }

    #[test]
    fn graycode_planes_match_recursive_oracle() {
        let planes = rasterize_pattern(&PatternSpec::GraycodeStack, 8, 8).unwrap();
        assert_eq!(planes.len(), 2 * 3 + 2 * 3);
        let oracle = gray_list(3);
        // Vertical plane p, MSB first: bit (2-p) of the oracle code.
        let mut expected_planes = vec![String::new(); 3];
        for &code in oracle.iter() {
            for p in 0..3 {
                let bit = (code >> (2 - p)) & 1;
                expected_planes[p].push_str(&bit.to_string());
            }
        }
        // Frozen oracle outputs for W=8.
        assert_eq!(expected_planes[0], "00001111");
        assert_eq!(expected_planes[1], "00111100");
        assert_eq!(expected_planes[2], "01100110");
        for p in 0..3 {
            for (x, want) in expected_planes[p].bytes().enumerate() {
                let got = planes[p].texel(x, 3)[0];
                assert_eq!(got, if want == b'1' { 1.0 } else { 0.0 }, "plane {p} col {x}");
            }
        }
        // Complements follow their planes.
        for p in 0..3 {
            for x in 0..8 {
                assert_eq!(planes[p].texel(x, 0)[0], 1.0 - planes[p + 3].texel(x, 0)[0]);
            }
        }
    }

    #[test]
    fn graycode_stack_decodes_to_indices() {
        let (w, h) = (13, 9); // non-powers of two
        let planes = rasterize_pattern(&PatternSpec::GraycodeStack, w, h).unwrap();
        let wbits = gray_bits(w);
        let hbits = gray_bits(h);
        assert_eq!(planes.len(), 2 * wbits + 2 * hbits);
        for x in 0..w {
            let mut code = 0usize;
            for p in 0..wbits {
                let bit = planes[p].texel(x, h / 2)[0] as usize;
                code = (code << 1) | bit;
            }
            assert_eq!(gray_decode(code), x);
        }
        for y in 0..h {
            let mut code = 0usize;
            for p in 0..hbits {
                let bit = planes[2 * wbits + p].texel(w / 2, y)[0] as usize;
                code = (code << 1) | bit;
            }
            assert_eq!(gray_decode(code), y);
        }
    }

    #[test]
    fn cross_laser_is_exactly_two_lines() {
        let spec = PatternSpec::CrossLaser {
            horizontal_color: [1.0, 0.0, 0.0],
            vertical_color: [0.0, 1.0, 0.0],
            line_width_px: 1,
        };
        let img = &rasterize_pattern(&spec, 16, 16).unwrap()[0];
        let mut lit = 0;
        for y in 0..16 {
            for x in 0..16 {
                let t = img.texel(x, y);
                if t != [0.0; 3] {
                    lit += 1;
                    assert!(x == 8 || y == 8, "unexpected lit texel at ({x},{y})");
                }
            }
        }
        assert_eq!(lit, 16 + 16 - 1);
        assert_eq!(img.texel(3, 8), [1.0, 0.0, 0.0]);
        assert_eq!(img.texel(8, 3), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn solid_white_is_all_ones() {
        let img = &rasterize_pattern(
            &PatternSpec::Solid { color: [1.0; 3] },
            4,
            3,
        )
        .unwrap()[0];
        assert!(img.pixels.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn seeded_patterns_are_deterministic() {
        let spec = PatternSpec::RandomDot {
            density: 0.2,
            seed: 9,
        };
        let a = rasterize_pattern(&spec, 32, 32).unwrap();
        let b = rasterize_pattern(&spec, 32, 32).unwrap();
        assert_eq!(a[0].pixels, b[0].pixels);
        let c = rasterize_pattern(
            &PatternSpec::RandomDot {
                density: 0.2,
                seed: 10,
            },
            32,
            32,
        )
        .unwrap();
        assert_ne!(a[0].pixels, c[0].pixels);
    }
}
