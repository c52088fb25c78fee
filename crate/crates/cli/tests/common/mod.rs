#![allow(dead_code)]

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use fegan_core::data::{io, synthetic, BinaryMask, Image, MaskKind};
use fegan_core::discriminators::PatchDiscConfig;
use fegan_core::inpainter::InpainterConfig;
use fegan_core::parser::ParserConfig;
use fegan_core::training::{train_stage, DataSource, Stage, TrainConfig};

pub fn tiny(stage: Stage) -> TrainConfig {
    let mut c = TrainConfig::new(stage, DataSource::Synthetic { count: 3, seed: 5 });
    c.height = 32;
    c.width = 32;
    c.batch_size = Some(2);
    c.epochs = 100;
    c.max_steps = Some(2);
    c.seed = 17;
    c.model.parser = ParserConfig { depth: 3, base_channels: 4, max_channels: 16, ..ParserConfig::default() };
    c.model.inpainter =
        InpainterConfig { encoder_depth: 2, base_channels: 4, max_channels: 8, dilations: vec![2], anl_embed_channels: 4, ..InpainterConfig::default() };
    c.model.parser_disc = PatchDiscConfig { base_channels: 4, max_channels: 8, num_scales: 1 };
    c.model.inpainter_disc_channels = 4;
    c
}

/// Trains both stages briefly into `dir`; returns the inpainter checkpoint.
pub fn train_tiny(dir: &Path) -> PathBuf {
    let mut p = tiny(Stage::Parser);
    p.output_dir = Some(dir.to_path_buf());
    train_stage(p).unwrap();
    let mut i = tiny(Stage::Inpainter);
    i.output_dir = Some(dir.to_path_buf());
    i.parser_checkpoint = Some(dir.join("parser.fegan"));
    train_stage(i).unwrap();
    dir.join("inpainter.fegan")
}

/// A shared directory with trained checkpoints, built once per test binary.
pub fn checkpoint_dir() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        train_tiny(&dir);
        dir
    })
}

pub struct Layers {
    pub image: Image,
    pub image_png: Vec<u8>,
    pub mask_png: Vec<u8>,
    pub sketch_png: Vec<u8>,
    pub strokes_png: Vec<u8>,
    pub parsing_png: Vec<u8>,
}

pub fn rect_mask(h: usize, w: usize, y0: usize, x0: usize, y1: usize, x1: usize) -> BinaryMask {
    let values = (0..h * w).map(|i| u8::from((y0..y1).contains(&(i / w)) && (x0..x1).contains(&(i % w)))).collect();
    BinaryMask::new(h, w, MaskKind::Edit, values).unwrap()
}

pub fn strokes_png(h: usize, w: usize, strokes: &[(usize, usize, [u8; 3])]) -> Vec<u8> {
    let mut img = image::RgbaImage::new(w as u32, h as u32);
    for &(y, x, rgb) in strokes {
        img.put_pixel(x as u32, y as u32, image::Rgba([rgb[0], rgb[1], rgb[2], 255]));
    }
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

/// A synthetic person with a mask, a sketch and a few strokes.
pub fn layers(h: usize, w: usize, mask: &BinaryMask, seed: u64) -> Layers {
    let (image, parsing) = synthetic::person(h, w, seed).unwrap();
    let sketch = fegan_core::data::extract_sketch(&image, &Default::default()).unwrap();
    Layers {
        image_png: io::encode_image_png(&image).unwrap(),
        mask_png: io::encode_mask_png(mask).unwrap(),
        sketch_png: io::encode_mask_png(&sketch).unwrap(),
        strokes_png: strokes_png(h, w, &[(h / 2, w / 2, [200, 30, 30]), (h / 2, w / 2 + 1, [200, 30, 30])]),
        parsing_png: io::encode_parsing_png(&parsing).unwrap(),
        image,
    }
}

/// Largest per-channel difference in 8-bit units.
pub fn max_u8_diff(a: &[u8], b: &[u8]) -> u8 {
    let a = image::load_from_memory(a).unwrap().to_rgb8();
    let b = image::load_from_memory(b).unwrap().to_rgb8();
    assert_eq!(a.dimensions(), b.dimensions());
    a.as_raw().iter().zip(b.as_raw()).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0)
}
