use nalgebra::Point2;

use crate::media_io::Image;
use crate::Real;

/// Cylinder of radius `f` around the optical axis through `(cx, cy)`.
///
/// Warped coordinates keep the principal point at `(cx, cy)`, so a warped
/// image has the same size as its source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylindricalProjection<T: Real> {
    pub focal: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> CylindricalProjection<T> {
    pub fn new(focal: T, cx: T, cy: T) -> Self {
        assert!(focal > T::zero(), "focal length must be positive");
        Self { focal, cx, cy }
    }

    /// `x' = f·atan((x−cx)/f)`, `y' = f·(y−cy)/√((x−cx)² + f²)`, shifted back
    /// by the principal point.
    pub fn forward(&self, p: &Point2<T>) -> Point2<T> {
        let f = self.focal;
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        Point2::new(
            f * (dx / f).atan() + self.cx,
            f * dy / (dx * dx + f * f).sqrt() + self.cy,
        )
    }

    /// Inverse of [`forward`](Self::forward); `None` at or beyond ±90°.
    pub fn inverse(&self, q: &Point2<T>) -> Option<Point2<T>> {
        let f = self.focal;
        let theta = (q.x - self.cx) / f;
        if theta.abs() >= T::frac_pi_2() {
            return None;
        }
        let h = (q.y - self.cy) / f;
        let (s, c) = theta.sin_cos();
        Some(Point2::new(self.cx + f * s / c, self.cy + h * f / c))
    }
}

/// Bilinear sample of channel `c` at `(x, y)`; `None` outside
/// `[0, w−1] × [0, h−1]`.
#[inline]
pub(crate) fn bilinear(img: &Image, x: f64, y: f64, c: usize) -> Option<f64> {
    let (w, h) = (img.width(), img.height());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let p = |xx, yy| img.get(xx, yy, c) as f64;
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    Some(top * (1.0 - fy) + bot * fy)
}

/// Whether every pixel contributing to a bilinear sample at `(x, y)` is set
/// in `mask` (row-major, `w` wide).
#[inline]
pub(crate) fn mask_covers(mask: &[bool], w: usize, h: usize, x: f64, y: f64) -> bool {
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return false;
    }
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = if x > x0 as f64 { (x0 + 1).min(w - 1) } else { x0 };
    let y1 = if y > y0 as f64 { (y0 + 1).min(h - 1) } else { y0 };
    mask[y0 * w + x0] && mask[y0 * w + x1] && mask[y1 * w + x0] && mask[y1 * w + x1]
}

/// Resamples `image` onto the cylinder by inverse mapping with bilinear
/// interpolation. The mask marks output pixels whose preimage lies inside
/// the source.
pub fn cylindrical_warp(image: &Image, focal_px: f64, center: (f64, f64)) -> (Image, Vec<bool>) {
    let proj = CylindricalProjection::new(focal_px, center.0, center.1);
    let (w, h, ch) = image.dimensions();
    let mut out = Image::filled(w, h, ch, 0);
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let Some(src) = proj.inverse(&Point2::new(x as f64, y as f64)) else {
                continue;
            };
            if bilinear(image, src.x, src.y, 0).is_none() {
                continue;
            }
            mask[y * w + x] = true;
            for c in 0..ch {
                let v = bilinear(image, src.x, src.y, c).unwrap();
                out.set(x, y, c, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    (out, mask)
}
