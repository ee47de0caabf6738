//! Rasters and their on-disk encodings.
//!
//! Binary rasters carry a 16-byte little-endian header: 4-byte magic, width
//! (u32), height (u32), and a u32 holding the element size in bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::Rgb;

pub const DEPTH_MAGIC: [u8; 4] = *b"DPT1";
pub const SEMANTIC_MAGIC: [u8; 4] = *b"SEM1";
pub const INSTANCE_MAGIC: [u8; 4] = *b"INS1";

/// Row-major 2D raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

pub type RgbImage = Raster<Rgb>;
pub type Mask = Raster<bool>;

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Raster { width, height, data: vec![value; width * height] }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Contract(format!(
                "raster data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Raster { width, height, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn same_shape<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Raster<U> {
        Raster { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }
}

impl RgbImage {
    /// Channel-interleaved copy, the layout used by the diffusion code.
    pub fn to_flat(&self) -> Vec<f64> {
        self.data.iter().flat_map(|c| c.iter().copied()).collect()
    }

    pub fn from_flat(width: usize, height: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != width * height * 3 {
            return Err(Error::Contract(format!(
                "flat image length {} does not match {width}x{height}x3",
                flat.len()
            )));
        }
        let data = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(Raster { width, height, data })
    }

    pub fn clamped(&self) -> Self {
        self.map(|c| [c[0].clamp(0.0, 1.0), c[1].clamp(0.0, 1.0), c[2].clamp(0.0, 1.0)])
    }
}

/// Quantize a `[0,1]` channel to 8 bits.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (px, c) in buf.pixels_mut().zip(&img.data) {
        *px = image::Rgb([to_u8(c[0]), to_u8(c[1]), to_u8(c[2])]);
    }
    buf.save(path)?;
    Ok(())
}

pub fn write_rgb8_png(path: &Path, width: usize, height: usize, data: &[[u8; 3]]) -> Result<()> {
    let flat: Vec<u8> = data.iter().flat_map(|c| c.iter().copied()).collect();
    let buf = image::RgbImage::from_raw(width as u32, height as u32, flat)
        .ok_or_else(|| Error::Contract("rgb8 buffer size mismatch".into()))?;
    buf.save(path)?;
    Ok(())
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let flat: Vec<u8> = values.iter().map(|&v| to_u8(v)).collect();
    let buf = image::GrayImage::from_raw(width as u32, height as u32, flat)
        .ok_or_else(|| Error::Contract("gray buffer size mismatch".into()))?;
    buf.save(path)?;
    Ok(())
}

/// Masks are written as 1-bit PNGs.
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), mask.width as u32, mask.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let stride = mask.width.div_ceil(8);
    let mut packed = vec![0u8; stride * mask.height];
    for y in 0..mask.height {
        for x in 0..mask.width {
            if *mask.get(x, y) {
                packed[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let mut writer = enc.write_header().map_err(|e| Error::Decode(e.to_string()))?;
    writer.write_image_data(&packed).map_err(|e| Error::Decode(e.to_string()))?;
    Ok(())
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect();
    Raster::from_vec(w, h, data)
}

fn write_header(w: &mut impl Write, magic: [u8; 4], width: usize, height: usize, elem: u32) -> std::io::Result<()> {
    w.write_all(&magic)?;
    w.write_all(&(width as u32).to_le_bytes())?;
    w.write_all(&(height as u32).to_le_bytes())?;
    w.write_all(&elem.to_le_bytes())
}

fn read_header(r: &mut impl Read, magic: [u8; 4], elem: u32) -> Result<(usize, usize)> {
    let mut hdr = [0u8; 16];
    r.read_exact(&mut hdr).map_err(|e| Error::Decode(format!("raster header: {e}")))?;
    if hdr[0..4] != magic {
        return Err(Error::Decode(format!("bad raster magic {:?}", &hdr[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes([hdr[i], hdr[i + 1], hdr[i + 2], hdr[i + 3]]);
    if word(12) != elem {
        return Err(Error::Decode(format!("element size {} != {elem}", word(12))));
    }
    Ok((word(4) as usize, word(8) as usize))
}

macro_rules! binary_raster {
    ($write:ident, $read:ident, $ty:ty) => {
        pub fn $write(path: &Path, magic: [u8; 4], raster: &Raster<$ty>) -> Result<()> {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            let io = |e| Error::io(path, e);
            write_header(&mut w, magic, raster.width, raster.height, std::mem::size_of::<$ty>() as u32)
                .map_err(io)?;
            for v in &raster.data {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
            w.flush().map_err(io)
        }

        pub fn $read(path: &Path, magic: [u8; 4]) -> Result<Raster<$ty>> {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut r = BufReader::new(file);
            let (width, height) = read_header(&mut r, magic, std::mem::size_of::<$ty>() as u32)?;
            let mut data = Vec::with_capacity(width * height);
            let mut buf = [0u8; std::mem::size_of::<$ty>()];
            for _ in 0..width * height {
                r.read_exact(&mut buf).map_err(|e| Error::Decode(format!("raster body: {e}")))?;
                data.push(<$ty>::from_le_bytes(buf));
            }
            Raster::from_vec(width, height, data)
        }
    };
}

binary_raster!(write_raster_f32, read_raster_f32, f32);
binary_raster!(write_raster_u16, read_raster_u16, u16);
binary_raster!(write_raster_u32, read_raster_u32, u32);
