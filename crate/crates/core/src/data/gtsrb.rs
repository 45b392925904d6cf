//! Benchmark directory ingestion and the crop/resize step.
//!
//! Training split: one folder per class (`00000` .. `00042`) holding
//! `.ppm` images and a `GT-<class>.csv` annotation file. Test split: a single
//! folder with `GT-final_test.csv`. Annotation files are semicolon-delimited
//! with the columns
//! `Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId`.

use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 43;
/// Network input side length.
pub const INPUT_SIZE: usize = 48;

const TEST_ANNOTATIONS: &str = "GT-final_test.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

/// One annotated RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
    pub roi: Roi,
    pub label: usize,
}

impl ImageSample {
    pub fn full_roi(width: usize, height: usize) -> Roi {
        Roi {
            x1: 0,
            y1: 0,
            x2: width.saturating_sub(1),
            y2: height.saturating_sub(1),
        }
    }

    fn pixel(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * 3 + c]
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct AnnotationRow {
    #[serde(rename = "Filename")]
    filename: String,
    #[serde(rename = "Width")]
    width: usize,
    #[serde(rename = "Height")]
    height: usize,
    #[serde(rename = "Roi.X1")]
    x1: usize,
    #[serde(rename = "Roi.Y1")]
    y1: usize,
    #[serde(rename = "Roi.X2")]
    x2: usize,
    #[serde(rename = "Roi.Y2")]
    y2: usize,
    #[serde(rename = "ClassId")]
    class_id: usize,
}

/// A parsed annotation row with its provenance.
#[derive(Debug, Clone)]
struct Entry {
    image: PathBuf,
    width: usize,
    height: usize,
    roi: Roi,
    label: usize,
    source: PathBuf,
    line: u64,
}

fn row_error(file: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Row {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_annotations(csv_path: &Path, dir: &Path) -> Result<Vec<Entry>> {
    if !csv_path.is_file() {
        return Err(Error::Ingestion(format!(
            "missing annotation file {}",
            csv_path.display()
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b';')
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", csv_path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| row_error(csv_path, 1, format!("bad header: {e}")))?
        .clone();
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            row_error(csv_path, line, format!("malformed row: {e}"))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: AnnotationRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| row_error(csv_path, line, format!("malformed row: {e}")))?;
        if row.class_id >= NUM_CLASSES {
            return Err(row_error(
                csv_path,
                line,
                format!("class id {} >= {NUM_CLASSES}", row.class_id),
            ));
        }
        if row.x1 > row.x2 || row.y1 > row.y2 || row.x2 >= row.width || row.y2 >= row.height {
            return Err(row_error(
                csv_path,
                line,
                format!(
                    "roi ({},{})-({},{}) outside {}x{} image",
                    row.x1, row.y1, row.x2, row.y2, row.width, row.height
                ),
            ));
        }
        out.push(Entry {
            image: dir.join(&row.filename),
            width: row.width,
            height: row.height,
            roi: Roi {
                x1: row.x1,
                y1: row.y1,
                x2: row.x2,
                y2: row.y2,
            },
            label: row.class_id,
            source: csv_path.to_path_buf(),
            line,
        });
    }
    Ok(out)
}

fn first_existing(root: &Path, candidates: &[&str]) -> PathBuf {
    candidates
        .iter()
        .map(|c| root.join(c))
        .find(|p| p.is_dir())
        .unwrap_or_else(|| root.to_path_buf())
}

fn split_entries(root: &Path, split: Split) -> Result<Vec<Entry>> {
    if !root.is_dir() {
        return Err(Error::Ingestion(format!(
            "data root {} is not a directory",
            root.display()
        )));
    }
    match split {
        Split::Train => {
            let dir = first_existing(
                root,
                &["Final_Training/Images", "GTSRB/Final_Training/Images"],
            );
            let mut classes: Vec<(String, PathBuf)> = fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_dir())
                .filter_map(|e| {
                    let name = e.file_name().to_string_lossy().into_owned();
                    name.chars()
                        .all(|c| c.is_ascii_digit())
                        .then(|| (name, e.path()))
                })
                .collect();
            if classes.is_empty() {
                return Err(Error::Ingestion(format!(
                    "no class folders under {}",
                    dir.display()
                )));
            }
            classes.sort();
            let mut entries = Vec::new();
            for (name, path) in classes {
                entries.extend(read_annotations(
                    &path.join(format!("GT-{name}.csv")),
                    &path,
                )?);
            }
            Ok(entries)
        }
        Split::Test => {
            let dir = first_existing(root, &["Final_Test/Images", "GTSRB/Final_Test/Images"]);
            read_annotations(&dir.join(TEST_ANNOTATIONS), &dir)
        }
    }
}

/// Lazily decoded sample stream in annotation order.
pub struct GtsrbStream {
    entries: std::vec::IntoIter<Entry>,
    total: usize,
}

impl GtsrbStream {
    /// Number of annotated samples in the split.
    pub fn total(&self) -> usize {
        self.total
    }
}

impl Iterator for GtsrbStream {
    type Item = Result<ImageSample>;

    fn next(&mut self) -> Option<Self::Item> {
        let e = self.entries.next()?;
        Some(decode(&e))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.entries.size_hint()
    }
}

fn decode(e: &Entry) -> Result<ImageSample> {
    let img = ImageReader::open(&e.image)
        .map_err(|err| row_error(&e.source, e.line, format!("{}: {err}", e.image.display())))?
        .decode()
        .map_err(|err| row_error(&e.source, e.line, format!("{}: {err}", e.image.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if (w, h) != (e.width, e.height) {
        return Err(row_error(
            &e.source,
            e.line,
            format!(
                "annotated size {}x{} but image is {w}x{h}",
                e.width, e.height
            ),
        ));
    }
    Ok(ImageSample {
        width: w,
        height: h,
        pixels: img.into_raw(),
        roi: e.roi,
        label: e.label,
    })
}

/// Every annotated sample of `split` exactly once, class folders in
/// ascending order, rows in file order.
pub fn load_gtsrb(root: &Path, split: Split) -> Result<GtsrbStream> {
    let entries = split_entries(root, split)?;
    Ok(GtsrbStream {
        total: entries.len(),
        entries: entries.into_iter(),
    })
}

/// Crop to the roi and bilinearly resize to `size x size`, scaled to [0, 1].
/// Returns a `(1, 3, size, size)` tensor.
pub fn crop_resize_to(sample: &ImageSample, size: usize) -> Result<Tensor> {
    let r = sample.roi;
    if r.x2 < r.x1 || r.y2 < r.y1 || r.x2 >= sample.width || r.y2 >= sample.height {
        return Err(Error::Sample(format!(
            "roi ({},{})-({},{}) is empty or outside the {}x{} image",
            r.x1, r.y1, r.x2, r.y2, sample.width, sample.height
        )));
    }
    if sample.pixels.len() != sample.width * sample.height * 3 {
        return Err(Error::Sample(
            "pixel buffer does not match image size".into(),
        ));
    }
    let (cw, ch) = (r.x2 - r.x1 + 1, r.y2 - r.y1 + 1);
    let mut out = vec![0.0f32; 3 * size * size];
    // Half-pixel centres, clamped to the crop.
    let coords = |dst: usize, src_len: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * src_len as f64 / size as f64 - 0.5)
            .clamp(0.0, (src_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    for y in 0..size {
        let (y0, y1, fy) = coords(y, ch);
        for x in 0..size {
            let (x0, x1, fx) = coords(x, cw);
            for c in 0..3 {
                let p = |xx: usize, yy: usize| sample.pixel(r.x1 + xx, r.y1 + yy, c) as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                // Weights sum to one only up to rounding.
                out[(c * size + y) * size + x] =
                    ((top * (1.0 - fy) + bottom * fy) / 255.0).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::from_vec([1, 3, size, size], out)
}

/// [`crop_resize_to`] at the 48x48 network input size.
pub fn crop_resize(sample: &ImageSample) -> Result<Tensor> {
    crop_resize_to(sample, INPUT_SIZE)
}

fn write_ppm(path: &Path, s: &ImageSample) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(
            &s.pixels,
            s.width as u32,
            s.height as u32,
            ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
}

fn write_annotations(path: &Path, rows: &[AnnotationRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b';')
        .from_path(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write samples in the benchmark layout under `root` so that
/// [`load_gtsrb`] reads them back in the same order (given class-sorted
/// training samples).
pub fn write_gtsrb(root: &Path, split: Split, samples: &[ImageSample]) -> Result<()> {
    let row = |name: String, s: &ImageSample| AnnotationRow {
        filename: name,
        width: s.width,
        height: s.height,
        x1: s.roi.x1,
        y1: s.roi.y1,
        x2: s.roi.x2,
        y2: s.roi.y2,
        class_id: s.label,
    };
    match split {
        Split::Train => {
            let base = root.join("Final_Training/Images");
            let mut by_class: Vec<Vec<&ImageSample>> = vec![Vec::new(); NUM_CLASSES];
            for s in samples {
                by_class
                    .get_mut(s.label)
                    .ok_or_else(|| Error::Argument(format!("label {} >= {NUM_CLASSES}", s.label)))?
                    .push(s);
            }
            for (class, list) in by_class.iter().enumerate() {
                if list.is_empty() {
                    continue;
                }
                let dir = base.join(format!("{class:05}"));
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let mut rows = Vec::with_capacity(list.len());
                for (i, s) in list.iter().enumerate() {
                    let name = format!("{class:05}_{i:05}.ppm");
                    write_ppm(&dir.join(&name), s)?;
                    rows.push(row(name, s));
                }
                write_annotations(&dir.join(format!("GT-{class:05}.csv")), &rows)?;
            }
        }
        Split::Test => {
            let dir = root.join("Final_Test/Images");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut rows = Vec::with_capacity(samples.len());
            for (i, s) in samples.iter().enumerate() {
                let name = format!("{i:05}.ppm");
                write_ppm(&dir.join(&name), s)?;
                rows.push(row(name, s));
            }
            write_annotations(&dir.join(TEST_ANNOTATIONS), &rows)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(w: usize, h: usize, rgb: [u8; 3]) -> ImageSample {
        ImageSample {
            width: w,
            height: h,
            pixels: (0..w * h).flat_map(|_| rgb).collect(),
            roi: ImageSample::full_roi(w, h),
            label: 0,
        }
    }

    #[test]
    fn identity_size_is_plain_scaling() {
        let mut s = solid(48, 48, [0, 0, 0]);
        for (i, p) in s.pixels.iter_mut().enumerate() {
            *p = (i * 7 % 256) as u8;
        }
        let t = crop_resize(&s).unwrap();
        for y in 0..48 {
            for x in 0..48 {
                for c in 0..3 {
                    assert_eq!(t.get(0, c, y, x), s.pixel(x, y, c) as f32 / 255.0);
                }
            }
        }
    }

    #[test]
    fn constant_stays_constant() {
        let t = crop_resize(&solid(96, 96, [10, 200, 77])).unwrap();
        for c in 0..3 {
            let v = [10.0, 200.0, 77.0][c] / 255.0;
            for y in 0..48 {
                for x in 0..48 {
                    assert!((t.get(0, c, y, x) - v).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn checkerboard_corners_survive_upscaling() {
        let mut s = solid(2, 2, [0, 0, 0]);
        let vals = [255u8, 0, 0, 255];
        for (i, v) in vals.iter().enumerate() {
            s.pixels[i * 3..i * 3 + 3].fill(*v);
        }
        let t = crop_resize(&s).unwrap();
        assert_eq!(t.get(0, 0, 0, 0), 1.0);
        assert_eq!(t.get(0, 0, 0, 47), 0.0);
        assert_eq!(t.get(0, 0, 47, 0), 0.0);
        assert_eq!(t.get(0, 0, 47, 47), 1.0);
    }

    #[test]
    fn crop_uses_roi_only() {
        let mut s = solid(10, 10, [255, 255, 255]);
        s.roi = Roi {
            x1: 2,
            y1: 3,
            x2: 5,
            y2: 6,
        };
        for y in 3..=6 {
            for x in 2..=5 {
                s.pixels[(y * 10 + x) * 3..(y * 10 + x) * 3 + 3].fill(51);
            }
        }
        let t = crop_resize(&s).unwrap();
        assert!(t.data().iter().all(|&v| (v - 0.2).abs() < 1e-6));
    }

    #[test]
    fn degenerate_roi_is_sample_error() {
        let mut s = solid(10, 10, [0, 0, 0]);
        s.roi = Roi {
            x1: 5,
            y1: 0,
            x2: 4,
            y2: 9,
        };
        assert!(matches!(crop_resize(&s), Err(Error::Sample(_))));
        s.roi = Roi {
            x1: 0,
            y1: 0,
            x2: 10,
            y2: 9,
        };
        assert!(matches!(crop_resize(&s), Err(Error::Sample(_))));
    }
}
