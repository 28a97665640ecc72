//! On-disk formats: 8-bit images, 16-bit masks and depth, ASCII PLY, JSON.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use image::{GrayImage, ImageBuffer as Img, Luma, RgbImage};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sim2seg_core::imaging::denormalize;
use sim2seg_core::{DepthMap, ImageBuffer, InstanceMask, Point3, ValueDomain};

use crate::error::{Error, Result};

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other}", path.display())),
    }
}

/// Write a 1- or 3-channel image as 8-bit PNG; NORM images are mapped back to U8.
pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    ensure_parent(path)?;
    let u8img = match img.domain() {
        ValueDomain::U8 => img.clone(),
        ValueDomain::Norm => denormalize(img)?,
    };
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes = u8img.to_u8();
    let res = match img.channels() {
        1 => GrayImage::from_raw(w, h, bytes).expect("buffer size").save(path),
        3 => RgbImage::from_raw(w, h, bytes).expect("buffer size").save(path),
        c => return Err(Error::Data(format!("cannot write a {c}-channel PNG"))),
    };
    res.map_err(|e| image_err(path, e))
}

/// Decode any supported image file as 8-bit RGB.
pub fn read_rgb(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    Ok(ImageBuffer::from_u8(img.width() as usize, img.height() as usize, 3, img.as_raw())?)
}

/// Decode an image file as 8-bit single-channel.
pub fn read_gray(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    Ok(ImageBuffer::from_u8(img.width() as usize, img.height() as usize, 1, img.as_raw())?)
}

fn write_u16(path: &Path, w: usize, h: usize, data: Vec<u16>) -> Result<()> {
    ensure_parent(path)?;
    Img::<Luma<u16>, _>::from_raw(w as u32, h as u32, data)
        .expect("buffer size")
        .save(path)
        .map_err(|e| image_err(path, e))
}

fn read_u16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.into_raw()))
}

/// Raw instance ids as a 16-bit single-channel PNG.
pub fn write_mask(path: &Path, mask: &InstanceMask) -> Result<()> {
    let data = mask
        .ids()
        .iter()
        .map(|&id| u16::try_from(id).map_err(|_| Error::Data(format!("instance id {id} does not fit 16 bits"))))
        .collect::<Result<Vec<_>>>()?;
    write_u16(path, mask.width(), mask.height(), data)
}

/// Read an instance mask; 16-bit files keep raw ids, 8-bit files keep their values.
pub fn read_mask(path: &Path) -> Result<InstanceMask> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let ids: Vec<u32> = match img {
        image::DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
        other => return Err(Error::Data(format!("{}: mask must be single-channel, got {:?}", path.display(), other.color()))),
    };
    Ok(InstanceMask::new(w, h, ids)?)
}

/// Depth in millimeters, 16-bit, 0 = no hit.
pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let data = depth.data().iter().map(|&m| (m * 1000.0).round().clamp(0.0, 65535.0) as u16).collect();
    write_u16(path, depth.width(), depth.height(), data)
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let (w, h, mm) = read_u16(path)?;
    Ok(DepthMap::new(w, h, mm.into_iter().map(|v| v as f64 / 1000.0).collect())?)
}

/// Depth rounded to the millimeter grid stored on disk.
pub fn quantize_depth(depth: &DepthMap) -> DepthMap {
    let data = depth.data().iter().map(|&m| (m * 1000.0).round().clamp(0.0, 65535.0) / 1000.0).collect();
    DepthMap::new(depth.width(), depth.height(), data).expect("same size")
}

/// ASCII PLY with float `x y z` vertices.
pub fn write_ply(path: &Path, cloud: &[Point3]) -> Result<()> {
    ensure_parent(path)?;
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(f);
    let mut go = || -> std::io::Result<()> {
        writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", cloud.len())?;
        writeln!(out, "property float x\nproperty float y\nproperty float z\nend_header")?;
        for p in cloud {
            writeln!(out, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32)?;
        }
        out.flush()
    };
    go().map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: &Path) -> Result<Vec<Point3>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::Data(format!("{}: {what}", path.display()));
    let mut lines = BufReader::new(f).lines();
    let mut count = None;
    for line in lines.by_ref() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(n.trim().parse::<usize>().map_err(|_| bad("bad vertex count"))?);
        }
        if line == "format binary_little_endian 1.0" || line == "format binary_big_endian 1.0" {
            return Err(bad("only ASCII PLY is supported"));
        }
        if line == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| bad("missing vertex count"))?;
    let mut cloud = Vec::with_capacity(count);
    for line in lines.take(count) {
        let line = line.map_err(|e| Error::io(path, e))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f32>().map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad vertex"))?;
        if v.len() != 3 {
            return Err(bad("vertex needs three coordinates"));
        }
        cloud.push([v[0], v[1], v[2]]);
    }
    if cloud.len() != count {
        return Err(bad("fewer vertices than declared"));
    }
    Ok(cloud)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
