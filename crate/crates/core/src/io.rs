//! File formats: model JSON, calibration CSV, PFM float images, PNG.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationSample, CalibrationSet};
use crate::derender::PriorSupport;
use crate::error::{Error, Result};
use crate::image::{Image, JpegImage};
use crate::model::{CameraModel, JpegColor, RawColor, RbfTerm, POLY_LEN};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RbfChannels {
    c0: Vec<RbfTerm>,
    c1: Vec<RbfTerm>,
    c2: Vec<RbfTerm>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    v: [[f64; 3]; 3],
    alpha: [f64; POLY_LEN],
    rbf: RbfChannels,
    gamma: [f64; 3],
    sigma_f: f64,
    /// Chromaticity hull of the RAW prior, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prior: Option<Vec<[f64; 2]>>,
}

fn field_error(field: &str, message: impl Into<String>) -> Error {
    Error::Field {
        field: field.into(),
        message: message.into(),
    }
}

/// Serialize a model, with an optional prior hull, as pretty JSON.
pub fn model_to_json(model: &CameraModel, prior: Option<&PriorSupport>) -> String {
    let [c0, c1, c2] = model.rbf.clone();
    let doc = ModelDocument {
        v: model.v,
        alpha: model.alpha,
        rbf: RbfChannels { c0, c1, c2 },
        gamma: model.gamma,
        sigma_f: model.sigma_f,
        prior: prior.map(|p| p.hull.clone()),
    };
    serde_json::to_string_pretty(&doc).expect("model document serializes")
}

/// Parse a model document. Schema violations name the offending field.
pub fn model_from_json(text: &str) -> Result<(CameraModel, Option<PriorSupport>)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ModelDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        field_error(if path == "." { "<root>" } else { &path }, e.inner().to_string())
    })?;
    fn finite(name: &str, mut vals: impl Iterator<Item = f64>) -> Result<()> {
        match vals.find(|v| !v.is_finite()) {
            Some(v) => Err(field_error(name, format!("non-finite value {v}"))),
            None => Ok(()),
        }
    }
    finite("v", doc.v.iter().flatten().copied())?;
    finite("alpha", doc.alpha.iter().copied())?;
    for (c, terms) in [&doc.rbf.c0, &doc.rbf.c1, &doc.rbf.c2].iter().enumerate() {
        for (i, t) in terms.iter().enumerate() {
            finite(&format!("rbf.c{c}[{i}]"), t.center.iter().copied().chain([t.w]))?;
        }
    }
    if let Some(c) = doc.gamma.iter().position(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(field_error(&format!("gamma[{c}]"), "must be positive"));
    }
    if !(doc.sigma_f > 0.0 && doc.sigma_f.is_finite()) {
        return Err(field_error("sigma_f", "must be positive"));
    }
    let prior = match doc.prior {
        Some(hull) => Some(PriorSupport::from_hull(hull).map_err(|e| field_error("prior", e.to_string()))?),
        None => None,
    };
    let model = CameraModel {
        v: doc.v,
        alpha: doc.alpha,
        rbf: [doc.rbf.c0, doc.rbf.c1, doc.rbf.c2],
        gamma: doc.gamma,
        sigma_f: doc.sigma_f,
    };
    Ok((model, prior))
}

pub fn save_model(path: &Path, model: &CameraModel, prior: Option<&PriorSupport>) -> Result<()> {
    std::fs::write(path, model_to_json(model, prior))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(CameraModel, Option<PriorSupport>)> {
    model_from_json(&std::fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
struct SampleRow {
    raw_r: f64,
    raw_g: f64,
    raw_b: f64,
    jpg_r: u8,
    jpg_g: u8,
    jpg_b: u8,
    exposure: f64,
    illuminant: u32,
}

pub fn write_dataset<W: Write>(set: &CalibrationSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in &set.samples {
        w.serialize(SampleRow {
            raw_r: s.x.0[0],
            raw_g: s.x.0[1],
            raw_b: s.x.0[2],
            jpg_r: s.y.0[0],
            jpg_g: s.y.0[1],
            jpg_b: s.y.0[2],
            exposure: s.exposure,
            illuminant: s.illuminant,
        })
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a calibration CSV with header
/// `raw_r,raw_g,raw_b,jpg_r,jpg_g,jpg_b,exposure,illuminant`.
pub fn read_dataset<R: Read>(input: R) -> Result<CalibrationSet> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut samples = Vec::new();
    for (i, row) in rdr.deserialize::<SampleRow>().enumerate() {
        // Line 1 is the header.
        let row = row.map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))?;
        let x = RawColor([row.raw_r, row.raw_g, row.raw_b]);
        if !x.is_valid() || !(row.exposure > 0.0) {
            return Err(Error::Parse(format!("line {}: invalid RAW color or exposure", i + 2)));
        }
        samples.push(CalibrationSample {
            x,
            y: JpegColor([row.jpg_r, row.jpg_g, row.jpg_b]),
            exposure: row.exposure,
            illuminant: row.illuminant,
        });
    }
    Ok(CalibrationSet::new(samples))
}

pub fn load_dataset(path: &Path) -> Result<CalibrationSet> {
    read_dataset(std::fs::File::open(path)?)
}

/// Rows of numbers from a headerless or headed CSV; a first row that does
/// not parse as numbers is taken as a header.
pub fn read_number_rows(text: &str, columns: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == columns => rows.push(v),
            Err(_) if i == 0 => continue,
            _ => return Err(Error::Parse(format!("line {}: expected {columns} numbers", i + 1))),
        }
    }
    Ok(rows)
}

/// Light rig CSV, one `lx,ly,lz` row per light.
pub fn load_lights(path: &Path) -> Result<Vec<[f64; 3]>> {
    let rows = read_number_rows(&std::fs::read_to_string(path)?, 3)?;
    Ok(rows.into_iter().map(|r| [r[0], r[1], r[2]]).collect())
}

/// Exposure-stack CSV, one `path,exposure` row per image. Relative paths
/// resolve against the CSV's directory.
pub fn load_stack_list(path: &Path) -> Result<Vec<(std::path::PathBuf, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::Parse(format!("line {}: expected path,exposure", i + 1)));
        }
        match rec[1].parse::<f64>() {
            Ok(e) if e > 0.0 => out.push((base.join(&rec[0]), e)),
            Err(_) if i == 0 => continue,
            _ => return Err(Error::Parse(format!("line {}: exposure must be a positive number", i + 1))),
        }
    }
    if out.is_empty() {
        return Err(Error::Parse("empty exposure stack".into()));
    }
    Ok(out)
}

/// Float image with any channel count, interleaved, rows top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn from_raw(img: &crate::image::RawImage) -> Self {
        FloatImage {
            width: img.width,
            height: img.height,
            channels: 3,
            data: img.data.iter().flat_map(|p| p.map(|v| v as f32)).collect(),
        }
    }

    pub fn from_scalar(img: &Image<f64>) -> Self {
        FloatImage {
            width: img.width,
            height: img.height,
            channels: 1,
            data: img.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_raw(&self) -> Result<crate::image::RawImage> {
        if self.channels != 3 {
            return Err(Error::DimensionMismatch(format!("{} channels, expected 3", self.channels)));
        }
        Image::from_vec(
            self.width,
            self.height,
            self.data
                .chunks_exact(3)
                .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
                .collect(),
        )
    }
}

/// Little-endian PFM. One channel uses `Pf`, three use `PF`; other counts
/// use the extension header `PF<n>` (e.g. `PF6` for packed covariances).
pub fn write_pfm(path: &Path, img: &FloatImage) -> Result<()> {
    let magic = match img.channels {
        1 => "Pf".to_string(),
        3 => "PF".to_string(),
        n => format!("PF{n}"),
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "{magic}\n{} {}\n-1.0\n", img.width, img.height)?;
    let row = img.width * img.channels;
    // PFM stores the bottom row first.
    for y in (0..img.height).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<FloatImage> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let token = |r: &mut BufReader<std::fs::File>| -> Result<String> {
        let mut s = String::new();
        loop {
            let buf = r.fill_buf()?;
            if buf.is_empty() {
                break;
            }
            let c = buf[0] as char;
            r.consume(1);
            if c.is_ascii_whitespace() {
                if !s.is_empty() {
                    break;
                }
            } else {
                s.push(c);
            }
        }
        Ok(s)
    };
    let magic = token(&mut r)?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        m if m.starts_with("PF") => m[2..]
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad PFM header {m:?}")))?,
        m => return Err(Error::Parse(format!("not a PFM file (header {m:?})"))),
    };
    let parse = |s: String, what: &str| -> Result<f64> { s.parse::<f64>().map_err(|_| Error::Parse(format!("bad PFM {what} {s:?}"))) };
    let width = parse(token(&mut r)?, "width")? as usize;
    let height = parse(token(&mut r)?, "height")? as usize;
    let scale = parse(token(&mut r)?, "scale")?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let n = width * height * channels;
    if bytes.len() < 4 * n || channels == 0 {
        return Err(Error::Parse(format!("PFM data truncated: {} bytes for {n} floats", bytes.len())));
    }
    let vals: Vec<f32> = bytes[..4 * n]
        .chunks_exact(4)
        .map(|b| {
            let a = [b[0], b[1], b[2], b[3]];
            if scale < 0.0 {
                f32::from_le_bytes(a)
            } else {
                f32::from_be_bytes(a)
            }
        })
        .collect();
    let row = width * channels;
    let mut data = Vec::with_capacity(n);
    for y in (0..height).rev() {
        data.extend_from_slice(&vals[y * row..(y + 1) * row]);
    }
    Ok(FloatImage {
        width,
        height,
        channels,
        data,
    })
}

pub fn read_png(path: &Path) -> Result<JpegImage> {
    let img = image::open(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Image::from_vec(
        w as usize,
        h as usize,
        img.pixels().map(|p| JpegColor(p.0)).collect(),
    )
}

pub fn write_png(path: &Path, img: &JpegImage) -> Result<()> {
    let buf: Vec<u8> = img.data.iter().flat_map(|p| p.0).collect();
    image::save_buffer(path, &buf, img.width as u32, img.height as u32, image::ColorType::Rgb8)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
