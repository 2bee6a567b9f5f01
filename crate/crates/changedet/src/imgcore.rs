//! Grayscale image containers, masks, and file I/O shared by every stage.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit grayscale image, row-major. `(row, col)` with row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    /// All-zero image.
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        Image {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height, "pixel buffer length mismatch");
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        Image {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Image::from_vec(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        debug_assert!(row < self.height && col < self.width);
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        debug_assert!(row < self.height && col < self.width);
        self.data[row * self.width + col] = value;
    }

    /// Sample with coordinates clamped to the frame (edge replication).
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> u8 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.data[r * self.width + c]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }
}

pub(crate) fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            a_width: a.width(),
            a_height: a.height(),
            b_width: b.width(),
            b_height: b.height(),
        })
    }
}

/// Intensity histogram with one bin per 8-bit level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    bins: [u64; 256],
}

impl Histogram {
    pub fn zero() -> Self {
        Histogram { bins: [0; 256] }
    }

    pub fn bin(&self, value: u8) -> u64 {
        self.bins[value as usize]
    }

    pub fn add(&mut self, value: u8) {
        self.bins[value as usize] += 1;
    }

    /// Total mass; equals the pixel count when built from one image.
    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    pub fn bins(&self) -> &[u64; 256] {
        &self.bins
    }
}

/// Count every pixel intensity of `img`.
pub fn histogram(img: &Image) -> Histogram {
    let mut h = Histogram::zero();
    for &v in img.pixels() {
        h.add(v);
    }
    h
}

/// Signed elementwise difference of two images, values in [-255, 255].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffImage {
    width: usize,
    height: usize,
    data: Vec<i16>,
}

impl DiffImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i16 {
        self.data[row * self.width + col]
    }

    pub fn values(&self) -> &[i16] {
        &self.data
    }
}

/// `a - b` per pixel. The two images must share dimensions.
pub fn difference(a: &Image, b: &Image) -> Result<DiffImage> {
    check_dims(a, b)?;
    let data = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| x as i16 - y as i16)
        .collect();
    Ok(DiffImage {
        width: a.width(),
        height: a.height(),
        data,
    })
}

/// Boolean per-pixel mask with the same geometry as its image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl ChangeMask {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be nonzero");
        ChangeMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = ChangeMask::new(width, height);
        for row in 0..height {
            for col in 0..width {
                if f(row, col) {
                    m.set(row, col, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.height && col < self.width);
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        debug_assert!(row < self.height && col < self.width);
        self.data[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Flagged pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    /// Flagged pixels with at least one 8-neighbor outside the mask.
    /// Frame borders count as outside.
    pub fn edge_pixels(&self) -> Vec<(usize, usize)> {
        let mut edge = Vec::new();
        for (row, col) in self.iter_set() {
            let mut boundary = false;
            'scan: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (row as i64 + dr, col as i64 + dc);
                    if nr < 0
                        || nc < 0
                        || nr >= self.height as i64
                        || nc >= self.width as i64
                        || !self.get(nr as usize, nc as usize)
                    {
                        boundary = true;
                        break 'scan;
                    }
                }
            }
            if boundary {
                edge.push((row, col));
            }
        }
        edge
    }

    /// Every pixel within Euclidean distance `radius` of a flagged pixel.
    pub fn dilate(&self, radius: usize) -> ChangeMask {
        let mut out = self.clone();
        if radius == 0 {
            return out;
        }
        let r = radius as i64;
        let mut offsets = Vec::new();
        for dr in -r..=r {
            for dc in -r..=r {
                if dr * dr + dc * dc <= r * r {
                    offsets.push((dr, dc));
                }
            }
        }
        for (row, col) in self.iter_set() {
            for &(dr, dc) in &offsets {
                let (nr, nc) = (row as i64 + dr, col as i64 + dc);
                if nr >= 0 && nc >= 0 && nr < self.height as i64 && nc < self.width as i64 {
                    out.set(nr as usize, nc as usize, true);
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

/// Load an 8-bit single-channel image (binary PGM or grayscale PNG).
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        parse_pgm(path, &bytes)
    } else if bytes.starts_with(b"\x89PNG") {
        load_png(path)
    } else if bytes.starts_with(b"P2") {
        Err(Error::malformed(path, "ASCII PGM (P2) is not supported, use binary P5"))
    } else {
        Err(Error::malformed(path, "unrecognized format, expected binary PGM or PNG"))
    }
}

/// Save as binary PGM or grayscale PNG depending on the file extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match extension(path) {
        Some("pgm") => save_pgm(img, path),
        Some("png") => {
            let buf = image::GrayImage::from_raw(
                img.width() as u32,
                img.height() as u32,
                img.pixels().to_vec(),
            )
            .expect("buffer length matches dimensions");
            buf.save(path)
                .map_err(|e| Error::malformed(path, e.to_string()))
        }
        _ => Err(Error::malformed(path, "unsupported output extension, use .pgm or .png")),
    }
}

/// Load a mask image; any nonzero pixel is flagged.
pub fn load_mask(path: impl AsRef<Path>) -> Result<ChangeMask> {
    let img = load_image(path)?;
    let mut m = ChangeMask::new(img.width(), img.height());
    for row in 0..img.height() {
        for col in 0..img.width() {
            if img.get(row, col) > 0 {
                m.set(row, col, true);
            }
        }
    }
    Ok(m)
}

/// Save a mask as a 0/255 grayscale image.
pub fn save_mask(mask: &ChangeMask, path: impl AsRef<Path>) -> Result<()> {
    let img = Image::from_fn(mask.width(), mask.height(), |r, c| {
        if mask.get(r, c) {
            255
        } else {
            0
        }
    });
    save_image(&img, path)
}

/// Write `base` as an RGB PNG with flagged pixels tinted red.
///
/// Unchanged pixels keep their gray value on all three channels, so an
/// empty mask reproduces the grayscale image exactly.
pub fn save_overlay(base: &Image, mask: &ChangeMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if base.width() != mask.width() || base.height() != mask.height() {
        return Err(Error::DimensionMismatch {
            a_width: base.width(),
            a_height: base.height(),
            b_width: mask.width(),
            b_height: mask.height(),
        });
    }
    let mut data = Vec::with_capacity(base.width() * base.height() * 3);
    for row in 0..base.height() {
        for col in 0..base.width() {
            let v = base.get(row, col);
            if mask.get(row, col) {
                // Red channel saturated, others halved: never equal across
                // channels, so tinted pixels stay countable after decode.
                data.extend_from_slice(&[255, v / 2, v / 2]);
            } else {
                data.extend_from_slice(&[v, v, v]);
            }
        }
    }
    let buf = image::RgbImage::from_raw(base.width() as u32, base.height() as u32, data)
        .expect("buffer length matches dimensions");
    buf.save(path)
        .map_err(|e| Error::malformed(path, e.to_string()))
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

fn load_png(path: &Path) -> Result<Image> {
    let dynimg = image::open(path).map_err(|e| Error::malformed(path, e.to_string()))?;
    match dynimg {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Ok(Image::from_vec(w, h, buf.into_raw()))
        }
        image::DynamicImage::ImageLuma16(_) => Err(Error::UnsupportedBitDepth { path: path.into() }),
        _ => Err(Error::UnsupportedChannels { path: path.into() }),
    }
}

fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let mut pos = 2; // past "P5"
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = next_pgm_number(path, bytes, &mut pos)?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::malformed(path, format!("invalid maxval {maxval}")));
    }
    if maxval > 255 {
        return Err(Error::UnsupportedBitDepth { path: path.into() });
    }
    if width == 0 || height == 0 {
        return Err(Error::malformed(path, "zero dimension"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::malformed(path, "missing raster separator"));
    }
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(Error::malformed(path, "truncated raster"));
    }
    Ok(Image::from_vec(
        width,
        height,
        bytes[pos..pos + need].to_vec(),
    ))
}

fn next_pgm_number(path: &Path, bytes: &[u8], pos: &mut usize) -> Result<usize> {
    // Skip whitespace and '#' comments that run to end of line.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::malformed(path, "malformed header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::malformed(path, "malformed header number"))
}

fn save_pgm(img: &Image, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!("P5\n{} {}\n255\n", img.width(), img.height());
    w.write_all(header.as_bytes())
        .and_then(|_| w.write_all(img.pixels()))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Separable Gaussian blur with kernel half-width `radius` (sigma = radius/2),
/// edge-replicated. `radius == 0` returns the image unchanged.
pub fn gaussian_blur(img: &Image, radius: usize) -> Image {
    if radius == 0 {
        return img.clone();
    }
    let sigma = radius as f64 / 2.0;
    let kernel: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();

    let (w, h) = (img.width(), img.height());
    // Horizontal pass into f64, vertical pass back to u8.
    let mut tmp = vec![0.0f64; w * h];
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let c = col as isize + k as isize - radius as isize;
                acc += kv * img.get_clamped(row as isize, c) as f64;
            }
            tmp[row * w + col] = acc / norm;
        }
    }
    Image::from_fn(w, h, |row, col| {
        let mut acc = 0.0;
        for (k, &kv) in kernel.iter().enumerate() {
            let r = row as isize + k as isize - radius as isize;
            let r = r.clamp(0, h as isize - 1) as usize;
            acc += kv * tmp[r * w + col];
        }
        (acc / norm).round().clamp(0.0, 255.0) as u8
    })
}
