use crate::error::{Error, Result};

/// Projector pattern image: H×W×3 values in [0, 1], texel centers at
/// integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub pixels: Vec<f64>,
    /// Color returned for lookups outside [0, W−1]×[0, H−1].
    pub oob_color: [f64; 3],
}

impl PatternImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<PatternImage> {
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "pattern pixel count {} != {width}x{height}x3",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "pattern values must lie in [0,1]".into(),
            ));
        }
        Ok(PatternImage {
            width,
            height,
            pixels,
            oob_color: [0.0; 3],
        })
    }

    pub fn solid(width: usize, height: usize, color: [f64; 3]) -> PatternImage {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&color);
        }
        PatternImage::new(width, height, pixels).expect("solid pattern")
    }

    pub fn texel(&self, x: usize, y: usize) -> [f64; 3] {
        let at = (y * self.width + x) * 3;
        [self.pixels[at], self.pixels[at + 1], self.pixels[at + 2]]
    }

    pub fn set_texel(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let at = (y * self.width + x) * 3;
        self.pixels[at..at + 3].copy_from_slice(&c);
    }

    fn corners(&self, u: f64, v: f64) -> (usize, usize, f64, f64) {
        let clamp_base = |x: f64, n: usize| -> (usize, f64) {
            if n == 1 {
                return (0, 0.0);
            }
            let mut i = x.floor() as usize;
            if i >= n - 1 {
                i = n - 2;
            }
            (i, x - i as f64)
        };
        let (x0, fu) = clamp_base(u, self.width);
        let (y0, fv) = clamp_base(v, self.height);
        (x0, y0, fu, fv)
    }

    /// Bilinear interpolation of the four neighboring texels; out-of-range
    /// coordinates return the configured out-of-bounds color.
    pub fn bilinear_sample(&self, u: f64, v: f64) -> [f64; 3] {
        if !self.in_bounds(u, v) {
            return self.oob_color;
        }
        let (x0, y0, fu, fv) = self.corners(u, v);
        let c00 = self.texel(x0, y0);
        let c10 = self.texel((x0 + 1).min(self.width - 1), y0);
        let c01 = self.texel(x0, (y0 + 1).min(self.height - 1));
        let c11 = self.texel((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let mut out = [0.0; 3];
        for ch in 0..3 {
            out[ch] = (1.0 - fu) * (1.0 - fv) * c00[ch]
                + fu * (1.0 - fv) * c10[ch]
                + (1.0 - fu) * fv * c01[ch]
                + fu * fv * c11[ch];
        }
        out
    }

    /// Value plus partial derivatives with respect to (u, v); derivatives
    /// are zero out of bounds.
    pub fn bilinear_sample_with_grad(&self, u: f64, v: f64) -> ([f64; 3], [f64; 3], [f64; 3]) {
        if !self.in_bounds(u, v) {
            return (self.oob_color, [0.0; 3], [0.0; 3]);
        }
        let (x0, y0, fu, fv) = self.corners(u, v);
        let c00 = self.texel(x0, y0);
        let c10 = self.texel((x0 + 1).min(self.width - 1), y0);
        let c01 = self.texel(x0, (y0 + 1).min(self.height - 1));
        let c11 = self.texel((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let mut val = [0.0; 3];
        let mut du = [0.0; 3];
        let mut dv = [0.0; 3];
        for ch in 0..3 {
            val[ch] = (1.0 - fu) * (1.0 - fv) * c00[ch]
                + fu * (1.0 - fv) * c10[ch]
                + (1.0 - fu) * fv * c01[ch]
                + fu * fv * c11[ch];
            du[ch] = (1.0 - fv) * (c10[ch] - c00[ch]) + fv * (c11[ch] - c01[ch]);
            dv[ch] = (1.0 - fu) * (c01[ch] - c00[ch]) + fu * (c11[ch] - c10[ch]);
        }
        (val, du, dv)
    }

    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u <= (self.width - 1) as f64 && v >= 0.0 && v <= (self.height - 1) as f64
    }
}
