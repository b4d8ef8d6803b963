use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::media_io::Image;

use super::{FeatureError, Keypoint};

pub const DESCRIPTOR_BITS: usize = 256;
/// Half-width of the square the sampling pairs are drawn from.
pub const PATTERN_RADIUS: i32 = 15;
pub const DEFAULT_PATTERN_SEED: u64 = 0x9E37_79B9;

/// 256-bit binary descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    #[inline]
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set_bit(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
}

/// Fixed table of 256 sampling pairs, drawn once from an isotropic Gaussian
/// (σ = 31/5) and clipped to `[-15, 15]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryPattern {
    seed: u64,
    pairs: Vec<[(i8, i8); 2]>,
}

impl BinaryPattern {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (2 * PATTERN_RADIUS + 1) as f64 / 5.0).expect("valid sigma");
        let coord = |rng: &mut ChaCha8Rng| loop {
            let v = normal.sample(rng).round();
            if v.abs() <= PATTERN_RADIUS as f64 {
                return v as i8;
            }
        };
        let mut pairs = Vec::with_capacity(DESCRIPTOR_BITS);
        while pairs.len() < DESCRIPTOR_BITS {
            let p = (coord(&mut rng), coord(&mut rng));
            let q = (coord(&mut rng), coord(&mut rng));
            if p != q {
                pairs.push([p, q]);
            }
        }
        Self { seed, pairs }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pairs(&self) -> &[[(i8, i8); 2]] {
        &self.pairs
    }
}

impl Default for BinaryPattern {
    fn default() -> Self {
        Self::new(DEFAULT_PATTERN_SEED)
    }
}

const SMOOTH_SIGMA: f64 = 2.0;
const SMOOTH_TAPS: usize = 7;

fn gaussian_taps() -> [f32; SMOOTH_TAPS] {
    let mut k = [0f32; SMOOTH_TAPS];
    let half = (SMOOTH_TAPS / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        let g = (-d * d / (2.0 * SMOOTH_SIGMA * SMOOTH_SIGMA)).exp();
        *v = g as f32;
        sum += g;
    }
    k.iter_mut().for_each(|v| *v /= sum as f32);
    k
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

/// Separable 7×7 Gaussian (σ = 2) with mirrored borders.
pub fn smooth_for_description(gray: &Image) -> Image {
    assert_eq!(gray.channels(), 1, "smoothing expects a gray image");
    let (w, h) = (gray.width(), gray.height());
    let k = gaussian_taps();
    let half = (SMOOTH_TAPS / 2) as isize;
    let src = gray.pixels();
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0f32;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * row[reflect(x as isize + j as isize - half, w)] as f32;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = Image::filled(w, h, 1, 0);
    let dst = out.pixels_mut();
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f32;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * tmp[reflect(y as isize + j as isize - half, h) * w + x];
            }
            dst[y * w + x] = acc.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Steered binary descriptor: the pattern is rotated by the keypoint
/// orientation and bit `i` is set when `I(p_i) < I(q_i)` on the smoothed image.
pub fn describe(
    smoothed: &Image,
    keypoint: &Keypoint,
    pattern: &BinaryPattern,
) -> Result<Descriptor, FeatureError> {
    let (w, h) = (smoothed.width() as i64, smoothed.height() as i64);
    let cx = keypoint.x.round() as i64;
    let cy = keypoint.y.round() as i64;
    let (s, c) = keypoint.orientation.sin_cos();
    let px = smoothed.pixels();
    let sample = |(dx, dy): (i8, i8)| -> Option<u8> {
        let (dx, dy) = (dx as f64, dy as f64);
        let x = cx + (c * dx - s * dy).round() as i64;
        let y = cy + (s * dx + c * dy).round() as i64;
        if x < 0 || y < 0 || x >= w || y >= h {
            None
        } else {
            Some(px[(y * w + x) as usize])
        }
    };
    let oob = || FeatureError::OutOfBounds {
        x: keypoint.x,
        y: keypoint.y,
    };
    let mut d = Descriptor::default();
    for (i, [p, q]) in pattern.pairs().iter().enumerate() {
        let a = sample(*p).ok_or_else(oob)?;
        let b = sample(*q).ok_or_else(oob)?;
        if a < b {
            d.set_bit(i);
        }
    }
    Ok(d)
}
