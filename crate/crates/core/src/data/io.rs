//! PNG/JPEG codecs for images, label maps and masks, and the dataset manifest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::{BinaryMask, Image, MaskKind, ParsingMap};
use crate::error::{Error, Result};

/// Fixed 20-entry palette for parsing visualisation; index = label.
pub const PALETTE: [[u8; 3]; 20] = [
    [0, 0, 0],
    [128, 0, 0],
    [255, 0, 0],
    [0, 85, 0],
    [170, 0, 51],
    [255, 85, 0],
    [0, 0, 85],
    [0, 119, 221],
    [85, 85, 0],
    [0, 85, 85],
    [85, 51, 0],
    [52, 86, 128],
    [0, 128, 0],
    [0, 0, 255],
    [51, 170, 221],
    [0, 255, 255],
    [85, 255, 170],
    [170, 255, 85],
    [255, 255, 0],
    [255, 170, 0],
];

pub const LABEL_NAMES: [&str; 20] = [
    "background",
    "hat",
    "hair",
    "glove",
    "sunglasses",
    "upper_clothes",
    "dress",
    "coat",
    "socks",
    "pants",
    "jumpsuits",
    "scarf",
    "skirt",
    "face",
    "left_arm",
    "right_arm",
    "left_leg",
    "right_leg",
    "left_shoe",
    "right_shoe",
];

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

fn from_unit(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn image_from_rgb8(rgb: &RgbImage) -> Result<Image> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = to_unit(px[c]);
        }
    }
    Image::from_planar(h, w, data)
}

pub fn image_to_rgb8(image: &Image) -> RgbImage {
    let (h, w) = image.dims();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let [r, g, b] = image.rgb(y as usize, x as usize);
        image::Rgb([from_unit(r), from_unit(g), from_unit(b)])
    })
}

/// Decodes an 8-bit PNG/JPEG into `[-1, 1]`.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    image_from_rgb8(&image::load_from_memory(bytes)?.to_rgb8())
}

pub fn encode_image_png(image: &Image) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(image_to_rgb8(image)).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn load_image(path: &Path) -> Result<Image> {
    decode_image(&read_file(path)?)
}

pub fn save_image(image: &Image, path: &Path) -> Result<()> {
    std::fs::write(path, encode_image_png(image)?).map_err(|e| Error::io(path, e))
}

/// Decodes a single-channel PNG (indexed or grayscale) whose raw sample
/// values are labels.
pub fn decode_parsing(bytes: &[u8], num_classes: usize) -> Result<ParsingMap> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::Codec(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Codec("png too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Codec(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Codec(format!("parsing PNG must be 8-bit, got {:?}", info.bit_depth)));
    }
    if !matches!(info.color_type, png::ColorType::Indexed | png::ColorType::Grayscale) {
        return Err(Error::Codec(format!("parsing PNG must be indexed or grayscale, got {:?}", info.color_type)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let labels: Vec<u8> = (0..h).flat_map(|y| buf[y * info.line_size..y * info.line_size + w].to_vec()).collect();
    ParsingMap::new(h, w, num_classes, labels)
}

/// Indexed PNG carrying the label palette.
pub fn encode_parsing_png(parsing: &ParsingMap) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, parsing.width() as u32, parsing.height() as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        let n = parsing.num_classes().max(1);
        let palette: Vec<u8> = (0..n).flat_map(|i| PALETTE[i % PALETTE.len()]).collect();
        enc.set_palette(palette);
        let mut writer = enc.write_header().map_err(|e| Error::Codec(e.to_string()))?;
        writer.write_image_data(parsing.labels()).map_err(|e| Error::Codec(e.to_string()))?;
    }
    Ok(out)
}

pub fn load_parsing(path: &Path, num_classes: usize) -> Result<ParsingMap> {
    decode_parsing(&read_file(path)?, num_classes)
}

pub fn save_parsing(parsing: &ParsingMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_parsing_png(parsing)?).map_err(|e| Error::io(path, e))
}

/// Decodes a mask image, thresholding luminance at 128.
pub fn decode_mask(bytes: &[u8], kind: MaskKind) -> Result<BinaryMask> {
    let gray = image::load_from_memory(bytes)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    BinaryMask::new(h, w, kind, gray.pixels().map(|p| u8::from(p[0] >= 128)).collect())
}

pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let gray = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        image::Luma([mask.get(y as usize, x as usize) * 255])
    });
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma8(gray).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn load_mask(path: &Path, kind: MaskKind) -> Result<BinaryMask> {
    decode_mask(&read_file(path)?, kind)
}

pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    std::fs::write(path, encode_mask_png(mask)?).map_err(|e| Error::io(path, e))
}

/// RGBA color-hint layer: pixels with alpha > 0 are strokes carrying their
/// RGB value. Returns the stroke mask and the colors (zero off-stroke).
pub fn decode_strokes(bytes: &[u8]) -> Result<(BinaryMask, Image)> {
    let rgba = image::load_from_memory(bytes)?.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let mut mask = vec![0u8; h * w];
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in rgba.pixels().enumerate() {
        if px[3] > 0 {
            mask[i] = 1;
            for c in 0..3 {
                data[c * h * w + i] = to_unit(px[c]);
            }
        }
    }
    Ok((BinaryMask::new(h, w, MaskKind::Stroke, mask)?, Image::from_planar(h, w, data)?))
}

/// One dataset item; relative paths resolve against the manifest directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub parsing_path: PathBuf,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        entry.image_path = base.join(&entry.image_path);
        entry.parsing_path = base.join(&entry.parsing_path);
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::invalid(format!("manifest {} has no entries", path.display())));
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for e in entries {
        let line = serde_json::to_string(e).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Loads every (image, parsing) pair of a manifest, checking dimensions.
pub fn load_dataset(manifest: &Path, num_classes: usize) -> Result<Vec<(Image, ParsingMap)>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let image = load_image(&e.image_path)?;
            let parsing = load_parsing(&e.parsing_path, num_classes)?;
            if image.dims() != parsing.dims() {
                return Err(Error::invalid(format!(
                    "{}: image {:?} and parsing {:?} differ in size",
                    e.image_path.display(),
                    image.dims(),
                    parsing.dims()
                )));
            }
            Ok((image, parsing))
        })
        .collect()
}
