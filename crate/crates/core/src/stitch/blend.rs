use nalgebra::{DMatrix, DVector};

use crate::media_io::Image;

use super::StitchError;

/// Single-channel floating-point raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_channel(img: &Image, c: usize, gain: f64) -> Self {
        let ch = img.channels();
        Self {
            width: img.width(),
            height: img.height(),
            data: img.pixels().iter().skip(c).step_by(ch).map(|&v| v as f64 * gain).collect(),
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Mirror without repeating the edge sample (`-1 → 1`, `n → n−2`).
#[inline]
fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable `[1 4 6 4 1]/16` blur scaled by `gain` per axis.
fn blur(p: &Plane, gain: f64) -> Plane {
    let (w, h) = (p.width, p.height);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in KERNEL.iter().enumerate() {
                acc += kv * p.at(reflect101(x as isize + k as isize - 2, w), y);
            }
            tmp[y * w + x] = acc * gain;
        }
    }
    let mut out = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in KERNEL.iter().enumerate() {
                acc += kv * tmp[reflect101(y as isize + k as isize - 2, h) * w + x];
            }
            out.data[y * w + x] = acc * gain;
        }
    }
    out
}

fn downsample(p: &Plane) -> Plane {
    let b = blur(p, 1.0);
    let (w2, h2) = (p.width.div_ceil(2), p.height.div_ceil(2));
    let mut out = Plane::new(w2, h2);
    for y in 0..h2 {
        for x in 0..w2 {
            out.data[y * w2 + x] = b.at(2 * x, 2 * y);
        }
    }
    out
}

fn expand(p: &Plane, width: usize, height: usize) -> Plane {
    let mut up = Plane::new(width, height);
    for y in (0..height).step_by(2) {
        for x in (0..width).step_by(2) {
            up.data[y * width + x] = p.at(x / 2, y / 2);
        }
    }
    blur(&up, 2.0)
}

/// Levels actually usable for a `w × h` raster.
pub fn max_levels(width: usize, height: usize) -> usize {
    let m = width.min(height).max(1);
    (usize::BITS - m.leading_zeros()) as usize
}

pub fn gaussian_pyramid(p: &Plane, levels: usize) -> Vec<Plane> {
    let mut pyr = vec![p.clone()];
    for _ in 1..levels {
        let next = downsample(pyr.last().unwrap());
        pyr.push(next);
    }
    pyr
}

/// Band-pass levels followed by the low-pass residual.
pub fn laplacian_pyramid(p: &Plane, levels: usize) -> Vec<Plane> {
    let g = gaussian_pyramid(p, levels);
    let mut out = Vec::with_capacity(levels);
    for l in 0..levels - 1 {
        let e = expand(&g[l + 1], g[l].width, g[l].height);
        let mut band = g[l].clone();
        band.data.iter_mut().zip(&e.data).for_each(|(a, b)| *a -= b);
        out.push(band);
    }
    out.push(g[levels - 1].clone());
    out
}

pub fn collapse(pyr: &[Plane]) -> Plane {
    let mut cur = pyr.last().unwrap().clone();
    for band in pyr.iter().rev().skip(1) {
        let mut e = expand(&cur, band.width, band.height);
        e.data.iter_mut().zip(&band.data).for_each(|(a, b)| *a += b);
        cur = e;
    }
    cur
}

/// Fills pixels with zero `mask` from a coarse-to-fine interpolation of the
/// masked ones; masked pixels keep their value.
fn push_pull(values: &Plane, mask: &[f64]) -> Plane {
    let mut v = values.clone();
    v.data.iter_mut().zip(mask).for_each(|(a, m)| *a *= m);
    let mut vs = vec![v];
    let mut ms = vec![Plane {
        width: values.width,
        height: values.height,
        data: mask.to_vec(),
    }];
    while vs.last().unwrap().width > 1 || vs.last().unwrap().height > 1 {
        let nv = downsample(vs.last().unwrap());
        let nm = downsample(ms.last().unwrap());
        vs.push(nv);
        ms.push(nm);
    }
    let mut filled: Option<Plane> = None;
    for (v, m) in vs.iter().zip(&ms).rev() {
        let coarse = filled.map(|f| expand(&f, v.width, v.height));
        let mut out = Plane::new(v.width, v.height);
        for i in 0..out.data.len() {
            let own = if m.data[i] > 0.0 { v.data[i] / m.data[i] } else { 0.0 };
            let alpha = m.data[i].clamp(0.0, 1.0);
            out.data[i] = match &coarse {
                Some(c) => alpha * own + (1.0 - alpha) * c.data[i],
                None => own,
            };
        }
        filled = Some(out);
    }
    filled.unwrap()
}

/// Multiband blend of same-sized planes under per-pixel weights that sum to
/// one where any plane has coverage (weight > 0) and are zero elsewhere.
///
/// Each input is completed outside its own coverage with the feathered
/// composite (itself extended beyond the union by push-pull filling), so
/// that the low-pass levels never see artificial black borders. Output is
/// zero outside the union of coverage.
pub fn multiband_blend_planes(planes: &[Plane], weights: &[Vec<f64>], levels: usize) -> Result<Plane, StitchError> {
    let Some(first) = planes.first() else {
        return Err(StitchError::DimensionMismatch);
    };
    let (w, h) = (first.width, first.height);
    if weights.len() != planes.len()
        || planes.iter().any(|p| p.width != w || p.height != h)
        || weights.iter().any(|m| m.len() != w * h)
    {
        return Err(StitchError::DimensionMismatch);
    }
    let levels = levels.clamp(1, max_levels(w, h));
    let n = w * h;
    let mut union = vec![0.0; n];
    let mut composite = Plane::new(w, h);
    for (p, wt) in planes.iter().zip(weights) {
        for i in 0..n {
            union[i] += wt[i];
            composite.data[i] += wt[i] * p.data[i];
        }
    }
    let covered: Vec<f64> = union.iter().map(|&u| if u > 0.0 { 1.0 } else { 0.0 }).collect();
    let composite = push_pull(&composite, &covered);

    let mut acc: Vec<Plane> = Vec::new();
    let mut wsum: Vec<Plane> = Vec::new();
    for (p, wt) in planes.iter().zip(weights) {
        let mut completed = p.clone();
        for i in 0..n {
            if wt[i] <= 0.0 {
                completed.data[i] = composite.data[i];
            }
        }
        let lap = laplacian_pyramid(&completed, levels);
        let gw = gaussian_pyramid(
            &Plane {
                width: w,
                height: h,
                data: wt.clone(),
            },
            levels,
        );
        if acc.is_empty() {
            acc = lap.iter().map(|l| Plane::new(l.width, l.height)).collect();
            wsum = acc.clone();
        }
        for l in 0..levels {
            for i in 0..lap[l].data.len() {
                acc[l].data[i] += gw[l].data[i] * lap[l].data[i];
                wsum[l].data[i] += gw[l].data[i];
            }
        }
    }
    for (a, s) in acc.iter_mut().zip(&wsum) {
        for (v, &ws) in a.data.iter_mut().zip(&s.data) {
            *v = if ws > 1e-12 { *v / ws } else { 0.0 };
        }
    }
    let mut out = collapse(&acc);
    for i in 0..n {
        if covered[i] == 0.0 {
            out.data[i] = 0.0;
        }
    }
    Ok(out)
}

/// [`multiband_blend_planes`] over 8-bit images, channel by channel.
pub fn multiband_blend(images: &[Image], weights: &[Vec<f64>], levels: usize) -> Result<Image, StitchError> {
    let Some(first) = images.first() else {
        return Err(StitchError::DimensionMismatch);
    };
    if images.iter().any(|i| i.dimensions() != first.dimensions()) {
        return Err(StitchError::DimensionMismatch);
    }
    blend_with_gains(images, weights, &vec![1.0; images.len()], levels)
}

pub(crate) fn blend_with_gains(
    images: &[Image],
    weights: &[Vec<f64>],
    gains: &[f64],
    levels: usize,
) -> Result<Image, StitchError> {
    let (w, h, ch) = images[0].dimensions();
    let mut out = Image::filled(w, h, ch, 0);
    for c in 0..ch {
        let planes: Vec<Plane> = images
            .iter()
            .zip(gains)
            .map(|(img, &g)| Plane::from_channel(img, c, g))
            .collect();
        let blended = multiband_blend_planes(&planes, weights, levels)?;
        let px = out.pixels_mut();
        for (i, v) in blended.data.iter().enumerate() {
            px[i * ch + c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

/// Regularisation weight pulling every gain towards 1.
pub const GAIN_PRIOR: f64 = 0.01;
pub const GAIN_RANGE: (f64, f64) = (0.5, 2.0);

/// Per-image gains equalising mean intensity over pairwise overlaps.
///
/// Minimises `Σ_{i<j} (g_i μ_ij − g_j μ_ji)² + λ Σ (g_i − 1)²`, where `μ_ij`
/// is the mean of image `i` (all channels) over its overlap with `j`, then
/// clamps to `[0.5, 2]`.
pub fn gain_compensate(images: &[Image], masks: &[Vec<bool>]) -> Vec<f64> {
    let n = images.len();
    let mut mean = DMatrix::<f64>::zeros(n, n);
    let mut overlap = DMatrix::<usize>::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let ch = images[i].channels();
            let (mut si, mut sj, mut count) = (0.0, 0.0, 0usize);
            for (p, (&a, &b)) in masks[i].iter().zip(&masks[j]).enumerate() {
                if a && b {
                    count += 1;
                    for c in 0..ch {
                        si += images[i].pixels()[p * ch + c] as f64;
                        sj += images[j].pixels()[p * ch + c] as f64;
                    }
                }
            }
            if count > 0 {
                let d = (count * ch) as f64;
                mean[(i, j)] = si / d;
                mean[(j, i)] = sj / d;
                overlap[(i, j)] = count;
                overlap[(j, i)] = count;
            }
        }
    }
    solve_gains(&mean, &overlap)
}

/// Solves the gain normal equations for given overlap means (`mean[(i, j)]`
/// is `μ_ij`); pairs with zero `overlap` do not contribute.
pub fn solve_gains(mean: &DMatrix<f64>, overlap: &DMatrix<usize>) -> Vec<f64> {
    let n = mean.nrows();
    let mut a = DMatrix::<f64>::from_diagonal_element(n, n, GAIN_PRIOR);
    let b = DVector::<f64>::from_element(n, GAIN_PRIOR);
    for i in 0..n {
        for j in 0..n {
            if i != j && overlap[(i, j)] > 0 {
                a[(i, i)] += mean[(i, j)] * mean[(i, j)];
                a[(i, j)] -= mean[(i, j)] * mean[(j, i)];
            }
        }
    }
    let g = a.clone().cholesky().map(|c| c.solve(&b)).or_else(|| a.lu().solve(&b));
    match g {
        Some(g) => g.iter().map(|v| v.clamp(GAIN_RANGE.0, GAIN_RANGE.1)).collect(),
        None => vec![1.0; n],
    }
}

/// Chamfer distance (8-neighbour, 1 / √2) from each set pixel of `mask` to
/// the nearest unset pixel or the image border; unset pixels get 0 and a
/// set pixel on the border gets 1.
pub fn distance_to_border(mask: &[bool], w: usize, h: usize) -> Vec<f64> {
    const DIAG: f64 = std::f64::consts::SQRT_2;
    let big = (w + h) as f64 * 2.0;
    let mut d: Vec<f64> = mask.iter().map(|&m| if m { big } else { 0.0 }).collect();
    let get = |d: &[f64], x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            d[y as usize * w + x as usize]
        }
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if d[i] == 0.0 {
                continue;
            }
            let v = d[i]
                .min(get(&d, x - 1, y) + 1.0)
                .min(get(&d, x, y - 1) + 1.0)
                .min(get(&d, x - 1, y - 1) + DIAG)
                .min(get(&d, x + 1, y - 1) + DIAG);
            d[i] = v;
        }
    }
    for y in (0..h as isize).rev() {
        for x in (0..w as isize).rev() {
            let i = y as usize * w + x as usize;
            if d[i] == 0.0 {
                continue;
            }
            let v = d[i]
                .min(get(&d, x + 1, y) + 1.0)
                .min(get(&d, x, y + 1) + 1.0)
                .min(get(&d, x + 1, y + 1) + DIAG)
                .min(get(&d, x - 1, y + 1) + DIAG);
            d[i] = v;
        }
    }
    d
}

/// Divides raw feathering weights by their per-pixel sum.
pub fn normalize_weights(raw: &mut [Vec<f64>]) {
    let Some(n) = raw.first().map(|r| r.len()) else {
        return;
    };
    for i in 0..n {
        let s: f64 = raw.iter().map(|r| r[i]).sum();
        for r in raw.iter_mut() {
            r[i] = if s > 0.0 { r[i] / s } else { 0.0 };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize, ch: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..w * h * ch).map(|_| rng.random()).collect();
        Image::new(w, h, ch, px).unwrap()
    }

    fn max_diff(a: &Image, b: &Image) -> i32 {
        a.pixels()
            .iter()
            .zip(b.pixels())
            .map(|(&x, &y)| (x as i32 - y as i32).abs())
            .max()
            .unwrap()
    }

    #[test]
    fn reflect101_indices() {
        assert_eq!(reflect101(-1, 5), 1);
        assert_eq!(reflect101(-2, 5), 2);
        assert_eq!(reflect101(5, 5), 3);
        assert_eq!(reflect101(6, 5), 2);
        assert_eq!(reflect101(3, 1), 0);
    }

    #[test]
    fn pyramid_round_trip_is_exact() {
        let img = random_image(1, 37, 23, 1);
        let p = Plane::from_channel(&img, 0, 1.0);
        for levels in 1..=5 {
            let back = collapse(&laplacian_pyramid(&p, levels));
            let err = back.data.iter().zip(&p.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "levels {levels}: {err}");
        }
    }

    #[test]
    fn single_image_identity() {
        let img = random_image(2, 40, 30, 3);
        for levels in [1, 2, 4, 7] {
            let out = multiband_blend(std::slice::from_ref(&img), &[vec![1.0; 1200]], levels).unwrap();
            assert!(max_diff(&out, &img) <= 1);
        }
    }

    #[test]
    fn copy_under_any_split() {
        let img = random_image(3, 33, 29, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for levels in [1, 2, 4] {
            let w1: Vec<f64> = (0..33 * 29).map(|_| rng.random_range(0.0..=1.0)).collect();
            let w2: Vec<f64> = w1.iter().map(|w| 1.0 - w).collect();
            let out = multiband_blend(&[img.clone(), img.clone()], &[w1, w2], levels).unwrap();
            assert!(max_diff(&out, &img) <= 1, "levels {levels}");
        }
    }

    #[test]
    fn hard_seam_has_no_ringing() {
        let (w, h) = (64, 16);
        let black = Image::filled(w, h, 1, 0);
        let white = Image::filled(w, h, 1, 255);
        let left: Vec<f64> = (0..w * h).map(|i| if i % w < w / 2 { 1.0 } else { 0.0 }).collect();
        let right: Vec<f64> = left.iter().map(|v| 1.0 - v).collect();
        for levels in [1, 4] {
            let out = multiband_blend(&[black.clone(), white.clone()], &[left.clone(), right.clone()], levels).unwrap();
            for y in 0..h {
                let row: Vec<i32> = (0..w).map(|x| out.get(x, y, 0) as i32).collect();
                for pair in row.windows(2) {
                    assert!(pair[1] >= pair[0] - 2, "levels {levels}: {row:?}");
                }
                assert_eq!(row[0], 0);
                assert_eq!(row[w - 1], 255);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let a = Image::filled(4, 4, 1, 0);
        let b = Image::filled(5, 4, 1, 0);
        assert_eq!(
            multiband_blend(&[a, b], &[vec![1.0; 16], vec![0.0; 20]], 2),
            Err(StitchError::DimensionMismatch)
        );
    }

    #[test]
    fn uncovered_pixels_are_black() {
        let img = Image::filled(8, 8, 1, 90);
        let wt: Vec<f64> = (0..64).map(|i| if i < 32 { 1.0 } else { 0.0 }).collect();
        let out = multiband_blend(&[img], &[wt], 3).unwrap();
        assert!(out.pixels()[..32].iter().all(|&v| v == 90));
        assert!(out.pixels()[32..].iter().all(|&v| v == 0));
    }

    #[test]
    fn gains_two_image_example() {
        let mean = DMatrix::from_row_slice(2, 2, &[0.0, 100.0, 50.0, 0.0]);
        let overlap = DMatrix::from_row_slice(2, 2, &[0, 1, 1, 0]);
        let g = solve_gains(&mean, &overlap);
        // hand solution of the 2×2 normal equations with λ = 0.01
        assert!((g[0] - 0.6).abs() < 1e-6 && (g[1] - 1.2).abs() < 1e-6, "{g:?}");
        assert!(g[0] < 1.0 && 1.0 < g[1]);
        assert!(((g[0] * 100.0) / (g[1] * 50.0) - 1.0).abs() < 0.1);
    }

    #[test]
    fn gains_trivial_cases() {
        let a = Image::filled(4, 4, 3, 120);
        let m = vec![true; 16];
        assert!((gain_compensate(std::slice::from_ref(&a), std::slice::from_ref(&m))[0] - 1.0).abs() < 1e-12);
        let g = gain_compensate(&[a.clone(), a.clone(), a], &[m.clone(), m.clone(), m]);
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-9));
        let b = Image::filled(4, 4, 1, 10);
        let none = vec![false; 16];
        let g = gain_compensate(&[b.clone(), b], &[none.clone(), none]);
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn chamfer_distance() {
        let d = distance_to_border(&[true; 25], 5, 5);
        assert_eq!(d[12], 3.0);
        assert_eq!(d[0], 1.0);
        let mut m = vec![true; 25];
        m[12] = false;
        let d = distance_to_border(&m, 5, 5);
        assert_eq!(d[12], 0.0);
        assert_eq!(d[11], 1.0);
    }

    #[test]
    fn weights_partition_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut raw: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..100).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..10.0) }).collect())
            .collect();
        normalize_weights(&mut raw);
        for i in 0..100 {
            let s: f64 = raw.iter().map(|r| r[i]).sum();
            assert!(s == 0.0 || (s - 1.0).abs() < 1e-9);
        }
    }
}
