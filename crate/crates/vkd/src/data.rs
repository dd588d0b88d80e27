//! Dataset directories: manifests next to PNG frames.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use vkd_core::datamodel::{
    format_manifest, parse_manifest, render_frame, synthetic_layout, Dataset, Sample, Split, SynthConfig,
};
use vkd_core::evaluation::ImageSet;
use vkd_core::images::ImageBank;

use crate::error::{io_err, Error, Result};

/// A split with its images decoded into memory.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub dataset: Dataset,
    pub images: ImageBank,
}

impl SplitData {
    pub fn view(&self) -> ImageSet<'_> {
        ImageSet {
            dataset: &self.dataset,
            images: &self.images,
        }
    }
}

/// Train, query and gallery splits.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub train: SplitData,
    pub query: SplitData,
    pub gallery: SplitData,
}

impl DataBundle {
    pub fn split(&self, split: Split) -> &SplitData {
        match split {
            Split::Train => &self.train,
            Split::Query => &self.query,
            Split::Gallery => &self.gallery,
        }
    }
}

fn render_split(cfg: &SynthConfig, samples: &[Sample], split: Split) -> Result<SplitData> {
    let dataset = Dataset::new(samples.to_vec(), split)?;
    let mut images = ImageBank::new(cfg.image_size as usize);
    // Dataset::new keeps sample order, re-indexing only train identities
    for s in samples {
        images.push_rgb8(&render_frame(cfg, s))?;
    }
    Ok(SplitData { dataset, images })
}

/// Renders the synthetic dataset in memory.
pub fn synthesize(cfg: &SynthConfig) -> Result<DataBundle> {
    let layout = synthetic_layout(cfg)?;
    Ok(DataBundle {
        train: render_split(cfg, &layout.train, Split::Train)?,
        query: render_split(cfg, &layout.query, Split::Query)?,
        gallery: render_split(cfg, &layout.gallery, Split::Gallery)?,
    })
}

/// Writes the synthetic dataset under `dir` and returns every written file.
pub fn write_synthetic(dir: &Path, cfg: &SynthConfig) -> Result<Vec<PathBuf>> {
    let layout = synthetic_layout(cfg)?;
    let mut written = Vec::new();
    for split in [Split::Train, Split::Query, Split::Gallery] {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        let mut rows = Vec::new();
        for s in layout.split(split) {
            let rel = format!("{}/{:05}_{:03}.png", split.name(), s.tracklet, s.frame);
            let path = dir.join(&rel);
            write_png(&path, cfg.image_size, cfg.image_size, &render_frame(cfg, s))?;
            written.push(path);
            rows.push(Sample { path: rel, ..s.clone() });
        }
        let manifest = dir.join(split.manifest_name());
        fs::write(&manifest, format_manifest(&rows)).map_err(io_err(&manifest))?;
        written.push(manifest);
    }
    Ok(written)
}

pub fn write_png(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let image_err = |e: png::EncodingError| Error::Image {
        path: path.to_owned(),
        message: e.to_string(),
    };
    let mut w = enc.write_header().map_err(image_err)?;
    w.write_image_data(rgb).map_err(image_err)?;
    w.finish().map_err(image_err)
}

/// Reads an 8-bit RGB or RGBA PNG as `(size, rgb bytes)`; images must be square.
pub fn read_png(path: &Path) -> Result<(usize, Vec<u8>)> {
    let bad = |message: String| Error::Image {
        path: path.to_owned(),
        message,
    };
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.width != info.height {
        return Err(bad(format!("image is {}x{}, expected square", info.width, info.height)));
    }
    let pixels = (info.width * info.height) as usize;
    let bytes = &buf[..info.buffer_size()];
    let rgb = match info.color_type {
        png::ColorType::Rgb => bytes.to_vec(),
        png::ColorType::Rgba => bytes.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => bytes.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => bytes.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        other => return Err(bad(format!("unsupported color type {other:?}"))),
    };
    debug_assert_eq!(rgb.len(), pixels * 3);
    Ok((info.width as usize, rgb))
}

/// Loads one split: its manifest under `dir` plus every referenced image.
pub fn load_split(dir: &Path, split: Split) -> Result<SplitData> {
    let manifest = dir.join(split.manifest_name());
    let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
    let dataset = parse_manifest(&text, split)?;
    let mut images: Option<ImageBank> = None;
    for s in dataset.samples() {
        let path = dir.join(&s.path);
        let (size, rgb) = read_png(&path)?;
        let bank = images.get_or_insert_with(|| ImageBank::new(size));
        if bank.size() != size {
            return Err(Error::Image {
                path,
                message: format!("image is {size}px, earlier images are {}px", bank.size()),
            });
        }
        bank.push_rgb8(&rgb)?;
    }
    Ok(SplitData {
        images: images.expect("parse_manifest rejects empty manifests"),
        dataset,
    })
}

pub fn load_dir(dir: &Path) -> Result<DataBundle> {
    Ok(DataBundle {
        train: load_split(dir, Split::Train)?,
        query: load_split(dir, Split::Query)?,
        gallery: load_split(dir, Split::Gallery)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_lossless() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("x.png");
        let rgb: Vec<u8> = (0..5 * 5 * 3).map(|i| (i * 37 % 256) as u8).collect();
        write_png(&path, 5, 5, &rgb).unwrap();
        assert_eq!(read_png(&path).unwrap(), (5, rgb));
    }

    #[test]
    fn non_square_images_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("x.png");
        write_png(&path, 4, 2, &[0; 4 * 2 * 3]).unwrap();
        assert!(matches!(read_png(&path), Err(Error::Image { .. })));
    }

    #[test]
    fn written_dataset_loads_back_identically() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            num_identities: 3,
            num_cameras: 2,
            tracklets_per_id_camera: 2,
            frames_per_tracklet: 2,
            image_size: 12,
            seed: 1,
        };
        write_synthetic(tmp.path(), &cfg).unwrap();
        let disk = load_dir(tmp.path()).unwrap();
        let memory = synthesize(&cfg).unwrap();
        for split in [Split::Train, Split::Query, Split::Gallery] {
            let (a, b) = (disk.split(split), memory.split(split));
            let all: Vec<usize> = (0..a.images.len()).collect();
            assert_eq!(a.images.gather(&all), b.images.gather(&all));
            let strip = |d: &Dataset| d.samples().iter().map(|s| (s.identity, s.camera, s.tracklet, s.frame)).collect::<Vec<_>>();
            assert_eq!(strip(&a.dataset), strip(&b.dataset));
        }
    }
}
