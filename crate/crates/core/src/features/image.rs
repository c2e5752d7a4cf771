//! Grayscale image storage and loading: binary PGM (P5) always, PNG when the
//! file carries that extension. Pixels are kept as `f64` in `[0, 1]`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("image format error: {0}")]
    Format(String),
    #[error("invalid image data: {0}")]
    Invalid(String),
    #[error("no image found for frame '{frame_id}' under {} (tried .pgm, .png)", dir.display())]
    MissingImage { frame_id: String, dir: PathBuf },
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<ImageError>,
    },
}

impl ImageError {
    fn at_path(self, path: &Path) -> Self {
        ImageError::File { path: path.to_path_buf(), source: Box::new(self) }
    }
}

/// Row-major grayscale raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!(
                "dimensions must be nonzero, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(ImageError::Invalid(format!(
                "pixel buffer has {} entries, expected {}",
                pixels.len(),
                width * height
            )));
        }
        if !pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)) {
            return Err(ImageError::Invalid("intensities must be finite and in [0, 1]".into()));
        }
        Ok(GrayImage { width, height, pixels })
    }

    /// Builds an image from a generator, clamping each value into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "dimensions must be nonzero");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        GrayImage { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Intensity at integer coordinates; panics out of bounds.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        self.pixels[y * self.width + x]
    }

    /// Bilinear sample at real coordinates; positions outside the raster
    /// replicate the nearest edge pixel.
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = xc - x0 as f64;
        let ty = yc - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
        let bottom = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Reads a binary (P5) PGM with maxval up to 255. Header comments are
/// honored; 16-bit rasters are rejected.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let mut pos = 0usize;

    fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String, ImageError> {
        // Skip whitespace and '#' comments.
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
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(ImageError::Format("unexpected end of PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    }

    let magic = next_token(bytes, &mut pos)?;
    if magic != "P5" {
        return Err(ImageError::Format(format!("expected PGM magic 'P5', got '{magic}'")));
    }
    let parse_dim = |tok: String, name: &str| -> Result<usize, ImageError> {
        tok.parse::<usize>()
            .map_err(|_| ImageError::Format(format!("cannot parse PGM {name} from '{tok}'")))
    };
    let width = parse_dim(next_token(bytes, &mut pos)?, "width")?;
    let height = parse_dim(next_token(bytes, &mut pos)?, "height")?;
    let maxval = parse_dim(next_token(bytes, &mut pos)?, "maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::Format(format!("degenerate PGM dimensions {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::Format(format!(
            "unsupported PGM maxval {maxval}: only 8-bit rasters (maxval 1..=255) are supported"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImageError::Format("missing separator after PGM maxval".into()));
    }
    pos += 1;
    let expected = width * height;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(ImageError::Format(format!(
            "PGM raster truncated: expected {expected} bytes, found {}",
            raster.len()
        )));
    }
    let scale = 1.0 / maxval as f64;
    let pixels = raster[..expected].iter().map(|&b| f64::from(b) * scale).collect();
    GrayImage::new(width, height, pixels)
}

/// Writes an 8-bit binary (P5) PGM with maxval 255.
pub fn write_pgm<W: Write>(img: &GrayImage, sink: &mut W) -> io::Result<()> {
    write!(sink, "P5\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img.pixels.iter().map(|&p| (p * 255.0).round() as u8).collect();
    sink.write_all(&bytes)
}

pub fn write_pgm_file(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_pgm(img, &mut buf).map_err(|e| ImageError::from(e).at_path(path))?;
    fs::write(path, buf).map_err(|e| ImageError::from(e).at_path(path))
}

/// Converts a decoded PNG to grayscale. Already-gray images map samples to
/// `[0, 1]` directly; color images use luma weights (0.299, 0.587, 0.114).
fn gray_from_dynamic(img: image::DynamicImage) -> Result<GrayImage, ImageError> {
    let (width, height) = (img.width() as usize, img.height() as usize);
    if width == 0 || height == 0 {
        return Err(ImageError::Format("degenerate image dimensions".into()));
    }
    let pixels: Vec<f64> = match img {
        image::DynamicImage::ImageLuma8(gray) => {
            gray.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect()
        }
        image::DynamicImage::ImageLumaA8(gray) => {
            gray.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect()
        }
        other => {
            let rgb = other.to_rgb8();
            rgb.pixels()
                .map(|p| {
                    let [r, g, b] = p.0;
                    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0
                })
                .collect()
        }
    };
    // Luma weights sum to 1, so values stay within [0, 1]; clamp guards
    // against rounding at the top end.
    let pixels = pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
    GrayImage::new(width, height, pixels)
}

/// Loads an image by extension: `.pgm` (binary P5) or `.png`.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm") => {
            let bytes = fs::read(path).map_err(|e| ImageError::from(e).at_path(path))?;
            read_pgm(&bytes).map_err(|e| e.at_path(path))
        }
        Some("png") => {
            let img = image::open(path)
                .map_err(|e| ImageError::Format(e.to_string()).at_path(path))?;
            gray_from_dynamic(img).map_err(|e| e.at_path(path))
        }
        _ => Err(ImageError::Format(format!(
            "unsupported image extension for {} (expected .pgm or .png)",
            path.display()
        ))),
    }
}

/// Provider of frame images, keyed by frame id. Implemented by the on-disk
/// directory layout and by the synthetic scene generator.
pub trait ImageSource {
    fn image(&self, frame_id: &str) -> Result<GrayImage, ImageError>;
}

/// Directory of `<frame_id>.pgm` / `<frame_id>.png` files; `.pgm` wins when
/// both exist.
#[derive(Debug, Clone)]
pub struct ImageDir {
    dir: PathBuf,
}

impl ImageDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ImageDir { dir: dir.into() }
    }
}

impl ImageSource for ImageDir {
    fn image(&self, frame_id: &str) -> Result<GrayImage, ImageError> {
        for ext in ["pgm", "png"] {
            let path = self.dir.join(format!("{frame_id}.{ext}"));
            if path.is_file() {
                return load_image(&path);
            }
        }
        Err(ImageError::MissingImage { frame_id: frame_id.to_string(), dir: self.dir.clone() })
    }
}
