//! Fixed-resolution grids with values in `[0, 1]`, plus their on-disk forms:
//! 8-bit binary PGM for single-channel tool silhouettes and 8-bit RGB PNG for
//! three-channel task images.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{ToolPixels, Vec2};

/// Side length, in workspace units, of the square a tool silhouette covers.
pub const TOOL_FRAME_SIZE: f64 = 0.75;

/// Channel-major grid `[channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} raster",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Shape("raster values must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f32 {
        self.data[(c * self.height + r) * self.width + col]
    }

    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f32) {
        debug_assert!((0.0..=1.0).contains(&v));
        self.data[(c * self.height + r) * self.width + col] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.height * self.width..][..self.height * self.width]
    }

    /// Occupied-pixel count of one channel (value >= 0.5).
    pub fn count_on(&self, c: usize) -> usize {
        self.channel(c).iter().filter(|&&v| v >= 0.5).count()
    }

    pub fn binarize(&self, threshold: f32) -> Raster {
        Raster {
            data: self
                .data
                .iter()
                .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
                .collect(),
            ..*self
        }
    }

    pub fn mirror_horizontal(&self) -> Raster {
        let mut out = Raster::zeros(self.channels, self.height, self.width);
        for c in 0..self.channels {
            for r in 0..self.height {
                for col in 0..self.width {
                    out.set(c, r, col, self.get(c, r, self.width - 1 - col));
                }
            }
        }
        out
    }

    /// Occupied pixels of channel 0 as points in the tool frame, relative to
    /// the frame center, `y` up.
    pub fn tool_pixels(&self) -> ToolPixels {
        let pixel_size = TOOL_FRAME_SIZE / self.width as f64;
        let mut centers = Vec::new();
        for r in 0..self.height {
            for col in 0..self.width {
                if self.get(0, r, col) >= 0.5 {
                    centers.push(tool_pixel_center(r, col, self.width, self.height));
                }
            }
        }
        ToolPixels { centers, pixel_size }
    }

    pub fn intersection_over_union(&self, other: &Raster) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let (a, b) = (a >= 0.5, b >= 0.5);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::Shape("PGM needs a single-channel raster".into()));
        }
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_byte(v)).collect();
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_pgm(path: &Path) -> Result<Raster> {
        let fmt = |d: &str| Error::Format {
            path: path.display().to_string(),
            detail: d.into(),
        };
        let mut buf = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
        // header: magic, width, height, maxval separated by whitespace
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(fmt("truncated header"));
            }
            fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "P5" || fields[3] != "255" {
            return Err(fmt("expected binary 8-bit PGM"));
        }
        let width: usize = fields[1].parse().map_err(|_| fmt("bad width"))?;
        let height: usize = fields[2].parse().map_err(|_| fmt("bad height"))?;
        let pixels = buf.get(pos..pos + width * height).ok_or_else(|| fmt("truncated pixels"))?;
        Raster::from_data(1, height, width, pixels.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Grayscale for one channel, RGB for three.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            n => return Err(Error::Shape(format!("cannot encode {n} channels as PNG"))),
        };
        let plane = self.width * self.height;
        let mut bytes = Vec::with_capacity(self.data.len());
        for i in 0..plane {
            for c in 0..self.channels {
                bytes.push(to_byte(self.data[c * plane + i]));
            }
        }
        encode_png(path, self.width, self.height, color, &bytes)
    }

    pub fn read_png(path: &Path) -> Result<Raster> {
        let fmt = |d: String| Error::Format {
            path: path.display().to_string(),
            detail: d,
        };
        let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
        let mut reader = decoder.read_info().map_err(|e| fmt(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).map_err(|e| fmt(e.to_string()))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(fmt("expected 8-bit samples".into()));
        }
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            other => return Err(fmt(format!("unsupported color type {other:?}"))),
        };
        let (w, h) = (info.width as usize, info.height as usize);
        let plane = w * h;
        let mut data = vec![0.0; plane * channels];
        for i in 0..plane {
            for c in 0..channels {
                data[c * plane + i] = buf[i * channels + c] as f32 / 255.0;
            }
        }
        Raster::from_data(channels, h, w, data)
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn encode_png(path: &Path, width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let io = |e: png::EncodingError| Error::Io(std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(io)?;
    writer.write_image_data(bytes).map_err(io)?;
    writer.finish().map_err(io)?;
    Ok(())
}

/// Center of pixel `(row, col)` in workspace units, for a raster covering the
/// whole unit-square workspace (row 0 at the top).
pub fn workspace_pixel_center(row: usize, col: usize, width: usize, height: usize) -> Vec2 {
    Vec2::new(
        (col as f64 + 0.5) / width as f64,
        (height as f64 - row as f64 - 0.5) / height as f64,
    )
}

/// Center of pixel `(row, col)` of a tool silhouette, relative to the frame
/// center. Symmetric columns map to exactly negated `x`.
pub fn tool_pixel_center(row: usize, col: usize, width: usize, height: usize) -> Vec2 {
    let px = TOOL_FRAME_SIZE / width as f64;
    let py = TOOL_FRAME_SIZE / height as f64;
    Vec2::new(
        (col as f64 + 0.5 - width as f64 / 2.0) * px,
        (height as f64 / 2.0 - row as f64 - 0.5) * py,
    )
}
