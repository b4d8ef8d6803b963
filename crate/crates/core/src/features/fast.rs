use crate::media_io::Image;

use super::FeatureError;

/// Radius of the Bresenham circle used by the segment test.
pub const FAST_RADIUS: usize = 3;
/// Radius of the disc over which the intensity centroid is taken.
pub const ORIENTATION_RADIUS: i32 = 15;
/// Minimum distance between two returned keypoints, in pixels.
pub const SUPPRESSION_RADIUS: f64 = 3.0;

const ARC_LEN: usize = 9;

/// The 16-pixel circle of radius 3, clockwise from 12 o'clock.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Sub-pixel column.
    pub x: f64,
    /// Sub-pixel row.
    pub y: f64,
    /// Segment-test response (sum of absolute differences along the arc).
    pub score: f64,
    /// Intensity-centroid angle in radians, `[-π, π]`.
    pub orientation: f64,
}

/// Segment-test response at `(x, y)`, or `None` if it is not a corner.
///
/// The caller guarantees the radius-3 circle lies inside the image.
pub fn corner_score(img: &Image, x: usize, y: usize, threshold: u8) -> Option<u32> {
    let w = img.width();
    let px = img.pixels();
    let c = px[y * w + x] as i32;
    let t = threshold as i32;
    let mut ring = [0i32; 16];
    for (v, (dx, dy)) in ring.iter_mut().zip(CIRCLE) {
        let xx = (x as i32 + dx) as usize;
        let yy = (y as i32 + dy) as usize;
        *v = px[yy * w + xx] as i32;
    }

    // Quick rejection on the compass points: a 9-arc covers at least two of them.
    let brighter = |v: i32| v > c + t;
    let darker = |v: i32| v < c - t;
    let compass = [ring[0], ring[4], ring[8], ring[12]];
    if compass.iter().filter(|&&v| brighter(v)).count() < 2
        && compass.iter().filter(|&&v| darker(v)).count() < 2
    {
        return None;
    }

    longest_arc_score(&ring, c, brighter).or_else(|| longest_arc_score(&ring, c, darker))
}

/// Sum of |ring - center| over the longest circular run satisfying `pred`,
/// if that run has at least nine pixels.
fn longest_arc_score(ring: &[i32; 16], center: i32, pred: impl Fn(i32) -> bool) -> Option<u32> {
    if ring.iter().all(|&v| pred(v)) {
        return Some(ring.iter().map(|&v| (v - center).unsigned_abs()).sum());
    }
    // start scanning right after a failing pixel so runs never wrap mid-count
    let start = (0..16).find(|&i| !pred(ring[i]))?;
    let mut best: Option<(usize, u32)> = None;
    let mut run_len = 0usize;
    let mut run_sum = 0u32;
    for k in 1..=16 {
        let v = ring[(start + k) % 16];
        if pred(v) {
            run_len += 1;
            run_sum += (v - center).unsigned_abs();
        } else {
            if run_len >= ARC_LEN && best.is_none_or(|(l, _)| run_len > l) {
                best = Some((run_len, run_sum));
            }
            run_len = 0;
            run_sum = 0;
        }
    }
    best.map(|(_, s)| s)
}

/// Intensity-centroid orientation `atan2(m01, m10)` over a radius-15 disc
/// centred on integer pixel `(x, y)`, clipped to the image.
pub fn orientation(img: &Image, x: usize, y: usize) -> f64 {
    let (w, h) = (img.width() as i32, img.height() as i32);
    let px = img.pixels();
    let r = ORIENTATION_RADIUS;
    let (mut m10, mut m01) = (0i64, 0i64);
    for dy in -r..=r {
        let yy = y as i32 + dy;
        if yy < 0 || yy >= h {
            continue;
        }
        let half = ((r * r - dy * dy) as f64).sqrt().floor() as i32;
        for dx in -half..=half {
            let xx = x as i32 + dx;
            if xx < 0 || xx >= w {
                continue;
            }
            let v = px[(yy * w + xx) as usize] as i64;
            m10 += dx as i64 * v;
            m01 += dy as i64 * v;
        }
    }
    (m01 as f64).atan2(m10 as f64)
}

/// FAST-9 detection keeping [`FAST_RADIUS`] pixels of border.
pub fn detect_corners(
    gray: &Image,
    threshold: u8,
    max_keypoints: usize,
) -> Result<Vec<Keypoint>, FeatureError> {
    detect_corners_with_border(gray, threshold, max_keypoints, FAST_RADIUS)
}

/// FAST-9 detection with greedy non-maximum suppression, sub-pixel
/// refinement and orientation assignment. Keypoints are returned in
/// descending score order and never lie closer than `border` pixels to the
/// image edge.
pub fn detect_corners_with_border(
    gray: &Image,
    threshold: u8,
    max_keypoints: usize,
    border: usize,
) -> Result<Vec<Keypoint>, FeatureError> {
    if gray.channels() != 1 {
        return Err(FeatureError::NotGray(gray.channels()));
    }
    if threshold == 0 {
        return Err(FeatureError::InvalidThreshold);
    }
    let border = border.max(FAST_RADIUS);
    let min = 2 * border + 1;
    let (w, h) = (gray.width(), gray.height());
    if w < min || h < min {
        return Err(FeatureError::ImageTooSmall { width: w, height: h, min });
    }

    let mut scores = vec![0u32; w * h];
    let mut candidates = Vec::new();
    for y in border..h - border {
        for x in border..w - border {
            if let Some(s) = corner_score(gray, x, y, threshold) {
                scores[y * w + x] = s;
                candidates.push((s, x, y));
            }
        }
    }
    // highest score first, raster order among ties
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));

    let score_at = |x: usize, y: usize| scores[y * w + x] as f64;
    let refine = |x: usize, y: usize| -> (f64, f64) {
        let s0 = score_at(x, y);
        let offset = |sm: f64, sp: f64| {
            let denom = sm - 2.0 * s0 + sp;
            if denom < 0.0 {
                (0.5 * (sm - sp) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        };
        let dx = offset(score_at(x - 1, y), score_at(x + 1, y));
        let dy = offset(score_at(x, y - 1), score_at(x, y + 1));
        (x as f64 + dx, y as f64 + dy)
    };
    let cell = SUPPRESSION_RADIUS.ceil() as usize + 1;
    let (gw, gh) = (w / cell + 1, h / cell + 1);
    let mut grid: Vec<Vec<(f64, f64)>> = vec![Vec::new(); gw * gh];
    let mut out = Vec::new();
    for (s, x, y) in candidates {
        if out.len() >= max_keypoints {
            break;
        }
        let (rx, ry) = refine(x, y);
        let (cx, cy) = (x / cell, y / cell);
        let suppressed = (cy.saturating_sub(1)..=(cy + 1).min(gh - 1)).any(|gy| {
            (cx.saturating_sub(1)..=(cx + 1).min(gw - 1)).any(|gx| {
                grid[gy * gw + gx].iter().any(|&(ox, oy)| {
                    let (ddx, ddy) = (ox - rx, oy - ry);
                    ddx * ddx + ddy * ddy <= SUPPRESSION_RADIUS * SUPPRESSION_RADIUS
                })
            })
        });
        if suppressed {
            continue;
        }
        grid[cy * gw + cx].push((rx, ry));
        out.push(Keypoint {
            x: rx,
            y: ry,
            score: s as f64,
            orientation: orientation(gray, x, y),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent segment test: looks for nine consecutive brighter or
    /// darker pixels by brute force over every start position.
    fn oracle_is_corner(img: &Image, x: usize, y: usize, t: u8) -> bool {
        let c = img.get(x, y, 0) as i32;
        let ring: Vec<i32> = CIRCLE
            .iter()
            .map(|&(dx, dy)| img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize, 0) as i32)
            .collect();
        (0..16).any(|start| {
            (0..9).all(|k| ring[(start + k) % 16] > c + t as i32)
                || (0..9).all(|k| ring[(start + k) % 16] < c - t as i32)
        })
    }

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn_gray(w, h, |_, _| if rng.random_bool(0.3) { rng.random() } else { 128 })
    }

    #[test]
    fn uniform_image_has_no_corners() {
        let img = Image::filled(40, 40, 1, 128);
        assert!(detect_corners(&img, 10, 100).unwrap().is_empty());
    }

    #[test]
    fn single_bright_pixel() {
        let mut img = Image::filled(32, 32, 1, 0);
        img.set(10, 10, 0, 255);
        let kps = detect_corners(&img, 20, 100).unwrap();
        assert_eq!(kps.len(), 1);
        assert_eq!((kps[0].x, kps[0].y), (10.0, 10.0));
        // oracle agrees that this is the only corner in the image
        let oracle: Vec<_> = (3..29)
            .flat_map(|y| (3..29).map(move |x| (x, y)))
            .filter(|&(x, y)| oracle_is_corner(&img, x, y, 20))
            .collect();
        assert_eq!(oracle, vec![(10, 10)]);
    }

    #[test]
    fn max_threshold_is_unsatisfiable() {
        let img = random_image(3, 48, 48);
        assert!(detect_corners(&img, 255, 1000).unwrap().is_empty());
    }

    #[test]
    fn too_small_and_wrong_channels() {
        let img = Image::filled(6, 40, 1, 0);
        assert!(matches!(
            detect_corners(&img, 20, 10),
            Err(FeatureError::ImageTooSmall { .. })
        ));
        let rgb = Image::filled(40, 40, 3, 0);
        assert_eq!(detect_corners(&rgb, 20, 10), Err(FeatureError::NotGray(3)));
        assert_eq!(
            detect_corners(&Image::filled(40, 40, 1, 0), 0, 10),
            Err(FeatureError::InvalidThreshold)
        );
    }

    #[test]
    fn segment_test_matches_oracle() {
        for seed in 0..5 {
            let img = random_image(seed, 40, 30);
            for t in [1u8, 10, 40] {
                for y in 3..27 {
                    for x in 3..37 {
                        assert_eq!(
                            corner_score(&img, x, y, t).is_some(),
                            oracle_is_corner(&img, x, y, t),
                            "seed {seed} t {t} at ({x},{y})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn horizontal_gradient_orientation_is_zero() {
        let img = Image::from_fn_gray(41, 41, |x, _| (x * 5) as u8);
        assert_eq!(orientation(&img, 20, 20), 0.0);
        let vertical = Image::from_fn_gray(41, 41, |_, y| (y * 5) as u8);
        assert!((orientation(&vertical, 20, 20) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn blob_position_is_refined_below_a_pixel() {
        // gaussian blob centred between pixels
        let (cx, cy) = (20.3, 19.8);
        let img = Image::from_fn_gray(41, 41, |x, y| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            (40.0 + 160.0 * (-d2 / (2.0 * 1.2f64.powi(2))).exp()).round() as u8
        });
        let kps = detect_corners(&img, 20, 10).unwrap();
        assert_eq!(kps.len(), 1);
        assert!((kps[0].x - cx).abs() < 0.25, "x {}", kps[0].x);
        assert!((kps[0].y - cy).abs() < 0.25, "y {}", kps[0].y);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn suppression_border_and_order(seed in any::<u64>(), t in 5u8..60, border in 3usize..20) {
            let img = random_image(seed, 64, 56);
            let kps = detect_corners_with_border(&img, t, 200, border).unwrap();
            for (i, a) in kps.iter().enumerate() {
                prop_assert!(a.x >= border as f64 - 0.5 && a.x <= (64 - 1 - border) as f64 + 0.5);
                prop_assert!(a.y >= border as f64 - 0.5 && a.y <= (56 - 1 - border) as f64 + 0.5);
                prop_assert!(a.orientation.abs() <= std::f64::consts::PI);
                for b in &kps[i + 1..] {
                    prop_assert!(a.score >= b.score);
                    let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
                    prop_assert!(d > SUPPRESSION_RADIUS);
                }
            }
            // determinism
            prop_assert_eq!(kps, detect_corners_with_border(&img, t, 200, border).unwrap());
        }
    }
}
