//! Frame and intrinsics input, image output.
//!
//! Supported rasters are binary Netpbm (`P5` gray, `P6` RGB) and 8-bit PNG.
//! This is the only module that reads or writes pixel files.

use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("no frames matching `{pattern}` in {dir}")]
    EmptySequence { dir: PathBuf, pattern: String },
    #[error("frame {name} is {found:?} but the sequence is {expected:?} (width, height, channels)")]
    DimensionMismatch {
        name: String,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("intrinsics: missing field `{0}`")]
    MissingField(&'static str),
    #[error("intrinsics: invalid value for `{field}`: {reason}")]
    InvalidValue { field: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, MediaError> {
        if width == 0 || height == 0 {
            return Err(MediaError::MalformedImage(format!(
                "zero-sized image {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(MediaError::MalformedImage(format!(
                "unsupported channel count {channels}"
            )));
        }
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(MediaError::MalformedImage(format!(
                "pixel buffer holds {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Solid image filled with `value` in every channel.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0 && (channels == 1 || channels == 3));
        Self {
            width,
            height,
            channels,
            pixels: vec![value; width * height * channels],
        }
    }

    pub fn from_fn_gray(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut img = Self::filled(width, height, 1, 0);
        for y in 0..height {
            for x in 0..width {
                img.pixels[y * width + x] = f(x, y);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn dimensions(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    /// Sample at integer coordinates; caller guarantees bounds.
    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }
}

/// A decoded frame with its position in the sequence.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    pub image: Image,
    pub source_name: String,
}

/// Pinhole calibration. Lens distortion is assumed already removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T) -> Result<Self, MediaError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), MediaError> {
        for (name, v, positive) in [
            ("fx", self.fx, true),
            ("fy", self.fy, true),
            ("cx", self.cx, false),
            ("cy", self.cy, false),
        ] {
            let f = v.as_f64();
            if !f.is_finite() {
                return Err(MediaError::InvalidValue {
                    field: name.into(),
                    reason: format!("{f} is not finite"),
                });
            }
            if positive && f <= 0.0 {
                return Err(MediaError::InvalidValue {
                    field: name.into(),
                    reason: format!("{f} must be > 0"),
                });
            }
        }
        Ok(())
    }

    pub fn matrix(&self) -> nalgebra::Matrix3<T> {
        let (z, o) = (T::zero(), T::one());
        nalgebra::Matrix3::new(self.fx, z, self.cx, z, self.fy, self.cy, z, z, o)
    }

    /// Pixel to normalised camera coordinates (`K⁻¹ x`, dropping the 1).
    #[inline]
    pub fn normalize(&self, p: &nalgebra::Point2<T>) -> nalgebra::Point2<T> {
        nalgebra::Point2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    #[inline]
    pub fn denormalize(&self, p: &nalgebra::Point2<T>) -> nalgebra::Point2<T> {
        nalgebra::Point2::new(p.x * self.fx + self.cx, p.y * self.fy + self.cy)
    }

    /// Mean focal length, used to convert pixel thresholds to normalised units.
    pub fn mean_focal(&self) -> T {
        (self.fx + self.fy) * T::lit(0.5)
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary Netpbm: `P6` for RGB images, `P5` for gray ones.
    Ppm,
    Png,
}

impl FromStr for ImageFormat {
    type Err = MediaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ppm" | "pgm" | "pnm" => Ok(Self::Ppm),
            "png" => Ok(Self::Png),
            _ => Err(MediaError::UnsupportedFormat(s.to_string())),
        }
    }
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

pub fn decode_image(bytes: &[u8]) -> Result<Image, MediaError> {
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_pnm(bytes, 3)
    } else if bytes.starts_with(b"P5") {
        decode_pnm(bytes, 1)
    } else {
        let head: Vec<u8> = bytes.iter().take(4).copied().collect();
        Err(MediaError::UnsupportedFormat(format!(
            "unrecognised magic {head:02x?}"
        )))
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, MediaError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MediaError::MalformedImage(format!("bad or missing {what} in header")))
    }
}

fn decode_pnm(bytes: &[u8], channels: usize) -> Result<Image, MediaError> {
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(MediaError::MalformedImage(format!(
            "maxval {maxval} outside 1..=255"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(MediaError::MalformedImage("header not terminated".into())),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| MediaError::MalformedImage("dimensions overflow".into()))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(MediaError::MalformedImage(format!(
            "truncated raster: {} of {need} bytes",
            payload.len()
        )));
    }
    Image::new(width, height, channels, payload[..need].to_vec())
}

fn decode_png(bytes: &[u8]) -> Result<Image, MediaError> {
    let bad = |e: png::DecodingError| MediaError::MalformedImage(format!("png: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| MediaError::MalformedImage("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(MediaError::MalformedImage(
                "png: palette not expanded".into(),
            ))
        }
    };
    let out_channels = if src_channels <= 2 { 1 } else { 3 };
    let mut pixels = Vec::with_capacity(w * h * out_channels);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row[..w * src_channels].chunks_exact(src_channels) {
            // alpha is dropped
            pixels.extend_from_slice(&px[..out_channels]);
        }
    }
    Image::new(w, h, out_channels, pixels)
}

pub fn encode_image(image: &Image, format: ImageFormat) -> Result<Vec<u8>, MediaError> {
    match format {
        ImageFormat::Ppm => {
            let magic = if image.channels == 3 { "P6" } else { "P5" };
            let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
            out.extend_from_slice(&image.pixels);
            Ok(out)
        }
        ImageFormat::Png => {
            let mut out = Vec::new();
            {
                let mut enc = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
                enc.set_color(if image.channels == 3 {
                    png::ColorType::Rgb
                } else {
                    png::ColorType::Grayscale
                });
                enc.set_depth(png::BitDepth::Eight);
                let encode_err =
                    |e: png::EncodingError| MediaError::MalformedImage(format!("png encode: {e}"));
                let mut writer = enc.write_header().map_err(encode_err)?;
                writer.write_image_data(&image.pixels).map_err(encode_err)?;
                writer.finish().map_err(encode_err)?;
            }
            Ok(out)
        }
    }
}

/// Luma conversion `round(0.299 R + 0.587 G + 0.114 B)`; gray input is returned as is.
pub fn to_grayscale(image: &Image) -> Image {
    if image.channels == 1 {
        return image.clone();
    }
    let pixels = image
        .pixels
        .chunks_exact(3)
        .map(|p| {
            let y = 299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32;
            ((y + 500) / 1000) as u8
        })
        .collect();
    Image {
        width: image.width,
        height: image.height,
        channels: 1,
        pixels,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MediaError + '_ {
    move |source| MediaError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_image(path: &Path) -> Result<Image, MediaError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_image(&bytes)
}

/// Writes `image`, choosing the format from the file extension.
pub fn write_image(path: &Path, image: &Image) -> Result<(), MediaError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default();
    let bytes = encode_image(image, ext.parse()?)?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Shell-style wildcard match supporting `*` and `?`.
pub fn wildcard_match(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let n: Vec<char> = name.chars().collect();
    let (mut pi, mut ni) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ni < n.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == n[ni]) {
            pi += 1;
            ni += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ni));
            pi += 1;
        } else if let Some((sp, sn)) = star {
            pi = sp + 1;
            ni = sn + 1;
            star = Some((sp, sn + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

const FRAME_EXTENSIONS: [&str; 4] = ["ppm", "pgm", "pnm", "png"];

/// Loads every file in `dir` whose name matches `pattern` and carries an image
/// extension, ordered by file name (byte-wise).
pub fn load_frame_sequence(dir: &Path, pattern: &str) -> Result<Vec<Frame>, MediaError> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|entry| entry.ok())
        .filter(|entry| entry.file_type().map(|t| t.is_file()).unwrap_or(false))
        .filter_map(|entry| entry.file_name().into_string().ok())
        .filter(|name| wildcard_match(pattern, name))
        .filter(|name| {
            Path::new(name)
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    if names.is_empty() {
        return Err(MediaError::EmptySequence {
            dir: dir.to_path_buf(),
            pattern: pattern.to_string(),
        });
    }
    names.sort();

    let mut frames: Vec<Frame> = Vec::with_capacity(names.len());
    for (index, name) in names.into_iter().enumerate() {
        let image = read_image(&dir.join(&name))?;
        if let Some(first) = frames.first() {
            if first.image.dimensions() != image.dimensions() {
                return Err(MediaError::DimensionMismatch {
                    name,
                    expected: first.image.dimensions(),
                    found: image.dimensions(),
                });
            }
        }
        frames.push(Frame {
            index,
            image,
            source_name: name,
        });
    }
    Ok(frames)
}

pub fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics<f64>, MediaError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| MediaError::InvalidValue {
            field: "<document>".into(),
            reason: e.to_string(),
        })?;
    let obj = value.as_object().ok_or_else(|| MediaError::InvalidValue {
        field: "<document>".into(),
        reason: "expected a JSON object".into(),
    })?;
    const KEYS: [&str; 4] = ["fx", "fy", "cx", "cy"];
    if let Some(extra) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(MediaError::InvalidValue {
            field: extra.clone(),
            reason: "unexpected key".into(),
        });
    }
    let mut vals = [0.0f64; 4];
    for (slot, key) in vals.iter_mut().zip(KEYS) {
        let v = obj.get(key).ok_or(MediaError::MissingField(key))?;
        *slot = v.as_f64().ok_or_else(|| MediaError::InvalidValue {
            field: key.into(),
            reason: format!("{v} is not a number"),
        })?;
    }
    CameraIntrinsics::new(vals[0], vals[1], vals[2], vals[3])
}

pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics<f64>, MediaError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_intrinsics(&text)
}
