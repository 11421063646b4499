//! File formats: binary PGM masks and fields, PPM overlays, the disk-set
//! JSON document and the corpus layout.
//!
//! Every writer goes through [`write_atomic`] and is byte-deterministic.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, ParseError, Result};
use crate::types::{BinaryMask, DiskSet, Point, ScalarField};

/// Pixels above this gray level read as foreground.
pub const BINARIZE_LEVEL: u8 = 127;

/// Category palette for overlays; category `k` uses entry `k % 8`.
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

/// Write `bytes` to a temporary file next to `path`, then rename over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// An 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) -> std::result::Result<usize, ParseError> {
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
                if self.pos >= self.bytes.len() {
                    return Err(ParseError::BadHeader("unterminated comment".into()));
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(self.pos - start)
    }

    fn number(&mut self, what: &str) -> std::result::Result<u32, ParseError> {
        if self.skip_space()? == 0 {
            return Err(ParseError::BadHeader(format!("missing separator before {what}")));
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ParseError::BadHeader(format!("expected {what}")));
        }
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() || *b == b'#' => {}
            _ => return Err(ParseError::BadHeader(format!("malformed {what}"))),
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ParseError::BadHeader(format!("{what} out of range")))
    }
}

/// Parse a binary netpbm header with the given magic and return
/// `(width, height, payload)`.
fn parse_netpbm<'a>(bytes: &'a [u8], magic: &[u8; 2], channels: usize) -> std::result::Result<(usize, usize, &'a [u8]), ParseError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(ParseError::BadMagic);
    }
    if bytes[1] != magic[1] {
        return if (b'1'..=b'7').contains(&bytes[1]) {
            Err(ParseError::UnsupportedVariant(format!("P{}", bytes[1] as char)))
        } else {
            Err(ParseError::BadMagic)
        };
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ParseError::BadHeader(format!("zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(ParseError::MaxVal(maxval));
    }
    // exactly one whitespace byte ends the header
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(ParseError::BadHeader("missing whitespace after maxval".into())),
    }
    let payload = &bytes[cur.pos..];
    let expected = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| ParseError::BadHeader("dimensions overflow".into()))?;
    if payload.len() < expected {
        return Err(ParseError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(ParseError::TrailingData {
            expected,
            found: payload.len(),
        });
    }
    Ok((width, height, payload))
}

/// Decode a binary PGM (`P5`, maxval 255).
pub fn parse_gray_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, ParseError> {
    let (width, height, payload) = parse_netpbm(bytes, b"P5", 1)?;
    Ok(GrayImage {
        width,
        height,
        data: payload.to_vec(),
    })
}

/// Decode a binary PGM into a mask (`> 127` is foreground).
pub fn parse_mask_pgm(bytes: &[u8]) -> std::result::Result<BinaryMask, ParseError> {
    let img = parse_gray_pgm(bytes)?;
    let data = img.data.iter().map(|&v| u8::from(v > BINARIZE_LEVEL)).collect();
    Ok(BinaryMask::new(img.width, img.height, data).expect("header validated dimensions"))
}

fn with_path<T>(path: &Path, r: std::result::Result<T, ParseError>) -> Result<T> {
    r.map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_gray_pgm(path: &Path) -> Result<GrayImage> {
    with_path(path, parse_gray_pgm(&read_file(path)?))
}

pub fn read_mask_pgm(path: &Path) -> Result<BinaryMask> {
    with_path(path, parse_mask_pgm(&read_file(path)?))
}

fn pgm_bytes(width: usize, height: usize, pixels: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

/// Mask as PGM bytes: background 0, foreground 255.
pub fn encode_mask_pgm(mask: &BinaryMask) -> Vec<u8> {
    pgm_bytes(mask.width(), mask.height(), mask.data().iter().map(|&v| v * 255))
}

/// Field as PGM bytes: `round(255 * clamp(tanh(v), 0, 1))`.
pub fn encode_field_pgm(field: &ScalarField) -> Vec<u8> {
    pgm_bytes(
        field.width(),
        field.height(),
        field
            .data()
            .iter()
            .map(|v| (255.0 * v.tanh().clamp(0.0, 1.0)).round() as u8),
    )
}

pub fn write_mask_pgm(mask: &BinaryMask, path: &Path) -> Result<()> {
    write_atomic(path, &encode_mask_pgm(mask))
}

pub fn write_field_pgm(field: &ScalarField, path: &Path) -> Result<()> {
    write_atomic(path, &encode_field_pgm(field))
}

/// Blend category colors at 50% over a grayscale background (black when
/// absent). Masks are painted in order, so later masks win on overlap.
pub fn encode_overlay_ppm(background: Option<&GrayImage>, masks: &[(BinaryMask, u32)], width: usize, height: usize) -> Result<Vec<u8>> {
    if let Some(bg) = background {
        if bg.width != width || bg.height != height {
            return Err(Error::DimensionMismatch {
                left_w: bg.width,
                left_h: bg.height,
                right_w: width,
                right_h: height,
            });
        }
    }
    for (m, _) in masks {
        m.same_shape(width, height)?;
    }
    let gray = |k: usize| background.map_or(0, |bg| bg.data[k]);
    let mut rgb: Vec<[u8; 3]> = (0..width * height).map(|k| [gray(k); 3]).collect();
    for (mask, category) in masks {
        let color = PALETTE[*category as usize % PALETTE.len()];
        for (k, px) in rgb.iter_mut().enumerate() {
            if mask.data()[k] == 1 {
                let g = gray(k) as u16;
                *px = color.map(|c| (g + c as u16).div_ceil(2) as u8);
            }
        }
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().flatten());
    Ok(out)
}

pub fn write_overlay_ppm(background: Option<&GrayImage>, masks: &[(BinaryMask, u32)], width: usize, height: usize, path: &Path) -> Result<()> {
    write_atomic(path, &encode_overlay_ppm(background, masks, width, height)?)
}

/// Decode a binary PPM (`P6`, maxval 255) into interleaved RGB bytes.
pub fn parse_ppm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), ParseError> {
    let (w, h, payload) = parse_netpbm(bytes, b"P6", 3)?;
    Ok((w, h, payload.to_vec()))
}

fn fmt_num(v: f64) -> String {
    // 17 significant digits
    format!("{v:.16e}")
}

/// Serialize a disk set as
/// `{"n":N,"m":M,"assoc":[...],"centers":[[x,y],...],"sigmas":[...]}`.
/// Radius indices are zero-based.
pub fn diskset_to_json(disks: &DiskSet) -> Result<String> {
    if let Some(what) = disks.first_non_finite() {
        return Err(Error::non_finite(what));
    }
    let assoc: Vec<String> = disks.assoc().iter().map(|j| j.to_string()).collect();
    let centers: Vec<String> = disks
        .centers()
        .iter()
        .map(|c| format!("[{},{}]", fmt_num(c.x), fmt_num(c.y)))
        .collect();
    let sigmas: Vec<String> = disks.sigmas().iter().map(|&s| fmt_num(s)).collect();
    Ok(format!(
        "{{\"n\":{},\"m\":{},\"assoc\":[{}],\"centers\":[{}],\"sigmas\":[{}]}}\n",
        disks.n_disks(),
        disks.n_radii(),
        assoc.join(","),
        centers.join(","),
        sigmas.join(",")
    ))
}

fn schema(field: &str, reason: impl Into<String>) -> ParseError {
    ParseError::Schema {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn count(doc: &Value, field: &str) -> std::result::Result<usize, ParseError> {
    let v = doc.get(field).ok_or_else(|| schema(field, "missing"))?;
    let n = v.as_u64().ok_or_else(|| schema(field, "must be a nonnegative integer"))?;
    if n == 0 {
        return Err(schema(field, "must be ≥ 1"));
    }
    Ok(n as usize)
}

fn array<'a>(doc: &'a Value, field: &str, len: usize) -> std::result::Result<&'a Vec<Value>, ParseError> {
    let a = doc
        .get(field)
        .ok_or_else(|| schema(field, "missing"))?
        .as_array()
        .ok_or_else(|| schema(field, "must be an array"))?;
    if a.len() != len {
        return Err(schema(field, format!("expected {len} entries, found {}", a.len())));
    }
    Ok(a)
}

fn finite(v: &Value, field: &str) -> std::result::Result<f64, ParseError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| schema(field, "entries must be finite numbers"))
}

/// Parse and validate a disk-set document.
pub fn diskset_from_json(text: &str) -> std::result::Result<DiskSet, ParseError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| schema("<document>", e.to_string()))?;
    if !doc.is_object() {
        return Err(schema("<document>", "must be an object"));
    }
    let n = count(&doc, "n")?;
    let m = count(&doc, "m")?;
    if m > n {
        return Err(schema("m", format!("must not exceed n ({m} > {n})")));
    }
    let assoc = array(&doc, "assoc", n)?
        .iter()
        .map(|v| {
            v.as_u64()
                .map(|j| j as usize)
                .filter(|&j| j < m)
                .ok_or_else(|| schema("assoc", format!("entries must be integers in 0..{m}")))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut hit = vec![false; m];
    assoc.iter().for_each(|&j| hit[j] = true);
    if let Some(j) = hit.iter().position(|h| !h) {
        return Err(schema("assoc", format!("radius {j} is used by no center")));
    }
    let centers = array(&doc, "centers", n)?
        .iter()
        .map(|v| match v.as_array() {
            Some(p) if p.len() == 2 => Ok(Point::new(finite(&p[0], "centers")?, finite(&p[1], "centers")?)),
            _ => Err(schema("centers", "entries must be [x, y] pairs")),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let sigmas = array(&doc, "sigmas", m)?
        .iter()
        .map(|v| finite(v, "sigmas"))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if sigmas.iter().any(|&s| s <= 0.0) {
        return Err(schema("sigmas", "entries must be strictly positive"));
    }
    DiskSet::new(centers, sigmas, assoc).map_err(|e| schema("<document>", e.to_string()))
}

pub fn write_diskset_json(disks: &DiskSet, path: &Path) -> Result<()> {
    write_atomic(path, diskset_to_json(disks)?.as_bytes())
}

pub fn read_diskset_json(path: &Path) -> Result<DiskSet> {
    let bytes = read_file(path)?;
    let text = String::from_utf8_lossy(&bytes);
    with_path(path, diskset_from_json(&text))
}

/// Name of the optional corpus manifest.
pub const MANIFEST: &str = "suite.json";

/// One manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub category: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    /// Confidence, for prediction corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// A mask file of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub image: String,
    pub category: u32,
    pub score: Option<f64>,
}

/// Split `<image>_<instance>_<category>.pgm`.
pub fn parse_corpus_name(name: &str) -> Option<(String, String, u32)> {
    let stem = name.strip_suffix(".pgm")?;
    let (rest, category) = stem.rsplit_once('_')?;
    let (image, instance) = rest.rsplit_once('_')?;
    if image.is_empty() || instance.is_empty() {
        return None;
    }
    Some((image.to_string(), instance.to_string(), category.parse().ok()?))
}

/// List a corpus directory: the manifest when present, otherwise every
/// `.pgm` file in name order.
pub fn list_corpus(root: &Path) -> Result<Vec<CorpusEntry>> {
    let manifest = root.join(MANIFEST);
    if manifest.exists() {
        let bytes = read_file(&manifest)?;
        let doc: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            path: manifest.clone(),
            source: schema("entries", e.to_string()),
        })?;
        return doc
            .entries
            .into_iter()
            .map(|e| {
                let path = root.join(&e.file);
                if !path.is_file() {
                    return Err(Error::Parse {
                        path: manifest.clone(),
                        source: schema("file", format!("{} does not exist", e.file)),
                    });
                }
                let image = e
                    .image
                    .or_else(|| parse_corpus_name(&e.file).map(|(i, _, _)| i))
                    .unwrap_or_else(|| e.file.clone());
                Ok(CorpusEntry {
                    path,
                    image,
                    category: e.category,
                    score: e.score,
                })
            })
            .collect();
    }
    let mut names: Vec<String> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|d| d.ok())
        .map(|d| d.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".pgm"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let (image, _, category) = parse_corpus_name(&name).ok_or_else(|| Error::Parse {
                path: root.join(&name),
                source: schema("file", "name must be <image>_<instance>_<category>.pgm"),
            })?;
            Ok(CorpusEntry {
                path: root.join(&name),
                image,
                category,
                score: None,
            })
        })
        .collect()
}

/// Read every mask of a corpus.
pub fn load_corpus(root: &Path) -> Result<Vec<(CorpusEntry, BinaryMask)>> {
    list_corpus(root)?
        .into_iter()
        .map(|e| {
            let m = read_mask_pgm(&e.path)?;
            Ok((e, m))
        })
        .collect()
}

/// Write masks as `<image>_<instance>_<category>.pgm` plus a manifest.
pub fn write_corpus(root: &Path, items: &[(String, String, u32, BinaryMask)]) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::with_capacity(items.len());
    for (image, instance, category, mask) in items {
        let file = format!("{image}_{instance}_{category}.pgm");
        write_mask_pgm(mask, &root.join(&file))?;
        entries.push(ManifestEntry {
            file,
            category: *category,
            image: Some(image.clone()),
            score: None,
        });
    }
    let mut text = serde_json::to_string_pretty(&Manifest { entries }).expect("manifest serializes");
    text.push('\n');
    write_atomic(&root.join(MANIFEST), text.as_bytes())
}
