//! On-disk corpus format: one image per frame (`frame_000123.pgm` or
//! `.png`), `annotations.csv` with header `frame,x,y,w,h,kind`, and a
//! `manifest.json` describing the sequence.

use std::fs;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Channels, Frame, FrameError};
use crate::geometry::BoundingBox;
use crate::synth::{AnnotatedSequence, Annotation, ObjectKind};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: annotation row {row} references frame {frame} but the sequence has {frame_count} frames")]
    FrameOutOfRange {
        path: PathBuf,
        row: usize,
        frame: usize,
        frame_count: usize,
    },
    #[error("sequence is empty")]
    Empty,
    #[error("frame {index} is {actual:?}, expected {expected:?}")]
    InconsistentFrame {
        index: usize,
        expected: (usize, usize),
        actual: (usize, usize),
    },
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn corrupt(path: &Path, message: impl Into<String>) -> Self {
        DatasetError::Corrupt {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    Pgm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Png => "png",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub seed: Option<u64>,
    #[serde(default)]
    pub format: ImageFormat,
    /// Per-frame timestamps in seconds; absent means index / 25.
    #[serde(default)]
    pub timestamps: Vec<f64>,
}

pub fn frame_file_name(index: usize, format: ImageFormat) -> String {
    format!("frame_{index:06}.{}", format.extension())
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRow {
    frame: usize,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    kind: String,
}

pub fn encode_pgm(f: &Frame) -> Result<Vec<u8>, FrameError> {
    f.require_gray()?;
    let mut out = format!("P5\n{} {}\n255\n", f.width(), f.height()).into_bytes();
    out.extend_from_slice(f.pixels());
    Ok(out)
}

/// Parses a binary 8-bit PGM, accepting `#` comments in the header.
pub fn decode_pgm(bytes: &[u8]) -> Result<Frame, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("unsupported magic {:?}, expected P5", fields[0]));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("bad PGM header field {s:?}"))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}, expected 255"));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = bytes.get(pos + 1..).unwrap_or_default();
    if data.len() < w * h {
        return Err(format!(
            "raster holds {} bytes, expected {}",
            data.len(),
            w * h
        ));
    }
    Frame::gray(w, h, data[..w * h].to_vec()).map_err(|e| e.to_string())
}

pub fn encode_png(f: &Frame) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, f.width() as u32, f.height() as u32);
        enc.set_color(match f.channels() {
            Channels::Gray8 => png::ColorType::Grayscale,
            Channels::Rgba8 => png::ColorType::Rgba,
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| e.to_string())?;
        writer
            .write_image_data(f.pixels())
            .map_err(|e| e.to_string())?;
    }
    Ok(out)
}

/// Decodes 8-bit gray, gray+alpha, RGB or RGBA PNGs. Anything with colour
/// or alpha becomes an RGBA frame.
pub fn decode_png(bytes: &[u8]) -> Result<Frame, String> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("PNG too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let frame = match info.color_type {
        png::ColorType::Grayscale => Frame::gray(w, h, data.to_vec()),
        png::ColorType::Rgba => Frame::new(w, h, Channels::Rgba8, data.to_vec()),
        png::ColorType::Rgb => Frame::new(
            w,
            h,
            Channels::Rgba8,
            data.chunks_exact(3)
                .flat_map(|p| [p[0], p[1], p[2], 255])
                .collect(),
        ),
        png::ColorType::GrayscaleAlpha => Frame::new(
            w,
            h,
            Channels::Rgba8,
            data.chunks_exact(2)
                .flat_map(|p| [p[0], p[0], p[0], p[1]])
                .collect(),
        ),
        png::ColorType::Indexed => return Err("indexed PNG was not expanded".into()),
    };
    frame.map_err(|e| e.to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    fs::write(path, bytes).map_err(|e| DatasetError::io(path, e))
}

pub fn write_dataset(
    seq: &AnnotatedSequence,
    dir: &Path,
    format: ImageFormat,
) -> Result<(), DatasetError> {
    let (width, height) = seq.dimensions().ok_or(DatasetError::Empty)?;
    for (index, f) in seq.frames.iter().enumerate() {
        if (f.width(), f.height()) != (width, height) {
            return Err(DatasetError::InconsistentFrame {
                index,
                expected: (width, height),
                actual: (f.width(), f.height()),
            });
        }
    }
    fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        let path = dir.join(frame_file_name(i, format));
        let bytes = match format {
            ImageFormat::Pgm => {
                encode_pgm(f).map_err(|e| DatasetError::corrupt(&path, e.to_string()))?
            }
            ImageFormat::Png => encode_png(f).map_err(|e| DatasetError::corrupt(&path, e))?,
        };
        write_file(&path, &bytes)?;
    }

    let path = dir.join(ANNOTATIONS_FILE);
    let file = fs::File::create(&path).map_err(|e| DatasetError::io(&path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| DatasetError::corrupt(&path, e.to_string());
    w.write_record(["frame", "x", "y", "w", "h", "kind"])
        .map_err(csv_err)?;
    for (frame, anns) in seq.annotations.iter().enumerate() {
        for a in anns {
            let b = a.bbox;
            w.serialize(AnnotationRow {
                frame,
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
                kind: a.kind.as_str().into(),
            })
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| DatasetError::io(&path, e))?;

    let manifest = Manifest {
        width,
        height,
        frame_count: seq.frames.len(),
        seed: seq.seed,
        format,
        timestamps: seq.frames.iter().map(|f| f.timestamp).collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&path, json.as_bytes())
}

/// A dataset directory whose frames are decoded on demand.
#[derive(Debug, Clone)]
pub struct DatasetReader {
    dir: PathBuf,
    pub manifest: Manifest,
    pub annotations: Vec<Vec<Annotation>>,
}

impl DatasetReader {
    pub fn open(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| DatasetError::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| DatasetError::corrupt(&path, e.to_string()))?;
        if manifest.width == 0 || manifest.height == 0 {
            return Err(DatasetError::corrupt(
                &path,
                "frame dimensions must be non-zero",
            ));
        }
        if !manifest.timestamps.is_empty() && manifest.timestamps.len() != manifest.frame_count {
            return Err(DatasetError::corrupt(
                &path,
                format!(
                    "{} timestamps for {} frames",
                    manifest.timestamps.len(),
                    manifest.frame_count
                ),
            ));
        }
        let annotations = read_annotations(&dir.join(ANNOTATIONS_FILE), manifest.frame_count)?;
        Ok(DatasetReader {
            dir: dir.to_path_buf(),
            manifest,
            annotations,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.frame_count
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.frame_count == 0
    }

    pub fn frame_path(&self, index: usize) -> PathBuf {
        self.dir.join(frame_file_name(index, self.manifest.format))
    }

    pub fn frame(&self, index: usize) -> Result<Frame, DatasetError> {
        let path = self.frame_path(index);
        let mut bytes = Vec::new();
        fs::File::open(&path)
            .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
            .map_err(|e| DatasetError::io(&path, e))?;
        let frame = match self.manifest.format {
            ImageFormat::Pgm => decode_pgm(&bytes),
            ImageFormat::Png => decode_png(&bytes),
        }
        .map_err(|m| DatasetError::corrupt(&path, m))?;
        let (w, h) = (self.manifest.width, self.manifest.height);
        if (frame.width(), frame.height()) != (w, h) {
            return Err(DatasetError::InconsistentFrame {
                index,
                expected: (w, h),
                actual: (frame.width(), frame.height()),
            });
        }
        let ts = self
            .manifest
            .timestamps
            .get(index)
            .copied()
            .unwrap_or(index as f64 / 25.0);
        frame
            .with_index(index as u64, ts)
            .map_err(|e| DatasetError::corrupt(&path, e.to_string()))
    }

    pub fn into_sequence(self) -> Result<AnnotatedSequence, DatasetError> {
        let frames = (0..self.len())
            .map(|i| self.frame(i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AnnotatedSequence {
            frames,
            annotations: self.annotations,
            seed: self.manifest.seed,
        })
    }
}

fn read_annotations(path: &Path, frame_count: usize) -> Result<Vec<Vec<Annotation>>, DatasetError> {
    let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::corrupt(path, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["frame", "x", "y", "w", "h", "kind"] {
        return Err(DatasetError::corrupt(
            path,
            format!("unexpected header {:?}", headers),
        ));
    }
    let mut out = vec![Vec::new(); frame_count];
    for (i, row) in reader.deserialize::<AnnotationRow>().enumerate() {
        let row_no = i + 2;
        let row = row.map_err(|e| DatasetError::corrupt(path, e.to_string()))?;
        if row.frame >= frame_count {
            return Err(DatasetError::FrameOutOfRange {
                path: path.to_path_buf(),
                row: row_no,
                frame: row.frame,
                frame_count,
            });
        }
        let bbox = BoundingBox::new(row.x, row.y, row.w, row.h)
            .map_err(|e| DatasetError::corrupt(path, format!("row {row_no}: {e}")))?;
        let kind = ObjectKind::parse(&row.kind).ok_or_else(|| {
            DatasetError::corrupt(path, format!("row {row_no}: unknown kind {:?}", row.kind))
        })?;
        out[row.frame].push(Annotation { bbox, kind });
    }
    Ok(out)
}

pub fn read_dataset(dir: &Path) -> Result<AnnotatedSequence, DatasetError> {
    DatasetReader::open(dir)?.into_sequence()
}
