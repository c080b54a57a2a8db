//! Character bitmaps: rendering interface and the PGM archive format.
//!
//! One binary PGM (P5) file per character, named `U+<hex>.pgm`, plus a
//! manifest TSV `codepoint<TAB>filename<TAB>polarity`. Ink is stored as
//! high intensity internally; a manifest row marked `ink-low` is inverted
//! at load.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const BITMAP_SIDE: usize = 60;
pub const BITMAP_PIXELS: usize = BITMAP_SIDE * BITMAP_SIDE;

/// 60x60 8-bit grayscale character image; 0 = background, 255 = full ink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub codepoint: char,
    pub pixels: Vec<u8>,
}

impl Bitmap {
    pub fn blank(codepoint: char) -> Bitmap {
        Bitmap {
            codepoint,
            pixels: vec![0; BITMAP_PIXELS],
        }
    }

    pub fn new(codepoint: char, pixels: Vec<u8>) -> Result<Bitmap> {
        if pixels.len() != BITMAP_PIXELS {
            return Err(Error::MalformedArchive {
                index: 0,
                msg: format!("bitmap has {} pixels, expected {}", pixels.len(), BITMAP_PIXELS),
            });
        }
        Ok(Bitmap { codepoint, pixels })
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * BITMAP_SIDE + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.pixels[row * BITMAP_SIDE + col] = v;
    }
}

/// Rendering parameters recorded in the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderParams {
    pub point_size: u32,
    pub baseline_offset: i32,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams {
            point_size: 54,
            baseline_offset: 0,
        }
    }
}

/// Pluggable font-rasterization facility.
pub trait Rasterizer {
    /// Renders a codepoint to a 60x60 grayscale bitmap, glyph scaled to
    /// fit the canvas with uniform margins.
    fn rasterize(&self, codepoint: char) -> Result<Bitmap>;
}

pub fn render_bitmap(codepoint: char, rasterizer: &dyn Rasterizer) -> Result<Bitmap> {
    let bmp = rasterizer.rasterize(codepoint)?;
    debug_assert_eq!(bmp.pixels.len(), BITMAP_PIXELS);
    Ok(bmp)
}

/// Graphical motifs for the synthetic rasterizer. Characters sharing a
/// motif play the role of characters sharing a component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motif {
    /// Horizontal bar centered on the given row (0..60).
    HBar(usize),
    /// Vertical bar centered on the given column.
    VBar(usize),
    /// Filled box with the given top-left corner and side.
    Box { row: usize, col: usize, side: usize },
    /// Main-diagonal stroke.
    Diag,
    /// Frame around the canvas border.
    Frame,
}

impl Motif {
    fn draw(&self, bmp: &mut Bitmap) {
        let side = BITMAP_SIDE;
        match *self {
            Motif::HBar(row) => {
                for r in row.saturating_sub(2)..(row + 3).min(side) {
                    for c in 4..side - 4 {
                        let soft = if r == row { 255 } else { 160 };
                        bmp.set(r, c, bmp.get(r, c).max(soft));
                    }
                }
            }
            Motif::VBar(col) => {
                for c in col.saturating_sub(2)..(col + 3).min(side) {
                    for r in 4..side - 4 {
                        let soft = if c == col { 255 } else { 160 };
                        bmp.set(r, c, bmp.get(r, c).max(soft));
                    }
                }
            }
            Motif::Box { row, col, side: s } => {
                for r in row..(row + s).min(side) {
                    for c in col..(col + s).min(side) {
                        let border = r == row || c == col || r + 1 == (row + s).min(side) || c + 1 == (col + s).min(side);
                        bmp.set(r, c, bmp.get(r, c).max(if border { 255 } else { 96 }));
                    }
                }
            }
            Motif::Diag => {
                for i in 2..side - 2 {
                    bmp.set(i, i, 255);
                    bmp.set(i, i - 1, bmp.get(i, i - 1).max(140));
                    bmp.set(i - 1, i, bmp.get(i - 1, i).max(140));
                }
            }
            Motif::Frame => {
                for i in 1..side - 1 {
                    for &(r, c) in &[(1, i), (side - 2, i), (i, 1), (i, side - 2)] {
                        bmp.set(r, c, 255);
                    }
                }
            }
        }
    }
}

/// Procedural rasterizer used in place of a licensed font: each known
/// codepoint maps to a list of motifs drawn onto the canvas.
#[derive(Debug, Default, Clone)]
pub struct SyntheticRasterizer {
    glyphs: BTreeMap<char, Vec<Motif>>,
}

impl SyntheticRasterizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn define(&mut self, codepoint: char, motifs: Vec<Motif>) {
        self.glyphs.insert(codepoint, motifs);
    }
}

impl Rasterizer for SyntheticRasterizer {
    fn rasterize(&self, codepoint: char) -> Result<Bitmap> {
        let motifs = self
            .glyphs
            .get(&codepoint)
            .ok_or(Error::MissingGlyph(codepoint))?;
        let mut bmp = Bitmap::blank(codepoint);
        for m in motifs {
            m.draw(&mut bmp);
        }
        Ok(bmp)
    }
}

/// Immutable set of rendered bitmaps plus rendering provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct BitmapArchive {
    pub entries: BTreeMap<char, Bitmap>,
    pub font_name: String,
    pub render_params: RenderParams,
}

impl BitmapArchive {
    pub fn new(font_name: &str, render_params: RenderParams) -> Self {
        BitmapArchive {
            entries: BTreeMap::new(),
            font_name: font_name.to_string(),
            render_params,
        }
    }

    pub fn insert(&mut self, bmp: Bitmap) -> Result<()> {
        if self.entries.contains_key(&bmp.codepoint) {
            return Err(Error::DuplicateCodepoint {
                codepoint: bmp.codepoint,
                index: self.entries.len(),
            });
        }
        self.entries.insert(bmp.codepoint, bmp);
        Ok(())
    }

    pub fn get(&self, codepoint: char) -> Option<&Bitmap> {
        self.entries.get(&codepoint)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Renders every character of `chars`, substituting a blank bitmap for
    /// missing glyphs; returns the missing set.
    pub fn render_all(
        &mut self,
        chars: impl IntoIterator<Item = char>,
        rasterizer: &dyn Rasterizer,
    ) -> Result<Vec<char>> {
        let mut missing = Vec::new();
        for c in chars {
            match render_bitmap(c, rasterizer) {
                Ok(bmp) => self.insert(bmp)?,
                Err(Error::MissingGlyph(_)) => {
                    missing.push(c);
                    self.insert(Bitmap::blank(c))?;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(missing)
    }
}

fn pgm_name(c: char) -> String {
    format!("U+{:04X}.pgm", c as u32)
}

fn write_pgm(path: &Path, bmp: &Bitmap) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{} {}\n255\n", BITMAP_SIDE, BITMAP_SIDE)?;
    f.write_all(&bmp.pixels)?;
    Ok(())
}

fn read_pgm(path: &Path, codepoint: char, index: usize) -> Result<Bitmap> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let malformed = |msg: &str| Error::MalformedArchive {
        index,
        msg: msg.to_string(),
    };
    // header: magic, width, height, maxval as whitespace-separated fields
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < data.len() {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(&data[start..pos]);
    }
    if fields.len() < 4 || fields[0] != b"P5" {
        return Err(malformed("not a P5 PGM"));
    }
    let dim = |b: &[u8]| -> Result<usize> {
        std::str::from_utf8(b)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("bad header field"))
    };
    let (w, h, maxval) = (dim(fields[1])?, dim(fields[2])?, dim(fields[3])?);
    if w != BITMAP_SIDE || h != BITMAP_SIDE || maxval != 255 {
        return Err(malformed("expected 60x60 maxval 255"));
    }
    pos += 1; // single whitespace after maxval
    if data.len() < pos + BITMAP_PIXELS {
        return Err(malformed("truncated pixel data"));
    }
    Bitmap::new(codepoint, data[pos..pos + BITMAP_PIXELS].to_vec())
}

/// Writes the archive as a directory of PGM files plus `manifest.tsv`.
pub fn save_archive(archive: &BitmapArchive, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.tsv"))?);
    writeln!(manifest, "#font={}", archive.font_name)?;
    writeln!(manifest, "#point_size={}", archive.render_params.point_size)?;
    writeln!(manifest, "#baseline_offset={}", archive.render_params.baseline_offset)?;
    for (c, bmp) in &archive.entries {
        let name = pgm_name(*c);
        write_pgm(&dir.join(&name), bmp)?;
        writeln!(manifest, "U+{:04X}\t{}\tink-high", *c as u32, name)?;
    }
    Ok(())
}

pub fn load_archive(dir: &Path) -> Result<BitmapArchive> {
    let file = std::fs::File::open(dir.join("manifest.tsv"))?;
    let mut archive = BitmapArchive::new("", RenderParams::default());
    let mut index = 0usize;
    for line in std::io::BufRead::lines(std::io::BufReader::new(file)) {
        let line = line?;
        if let Some(v) = line.strip_prefix("#font=") {
            archive.font_name = v.to_string();
            continue;
        }
        if let Some(v) = line.strip_prefix("#point_size=") {
            archive.render_params.point_size = v.parse().map_err(|_| Error::MalformedArchive {
                index,
                msg: "bad point_size".into(),
            })?;
            continue;
        }
        if let Some(v) = line.strip_prefix("#baseline_offset=") {
            archive.render_params.baseline_offset =
                v.parse().map_err(|_| Error::MalformedArchive {
                    index,
                    msg: "bad baseline_offset".into(),
                })?;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (cp, name, polarity) = match (cols.next(), cols.next(), cols.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::MalformedArchive {
                    index,
                    msg: "expected codepoint<TAB>filename<TAB>polarity".into(),
                })
            }
        };
        let code = cp
            .strip_prefix("U+")
            .and_then(|h| u32::from_str_radix(h, 16).ok())
            .and_then(char::from_u32)
            .ok_or_else(|| Error::MalformedArchive {
                index,
                msg: format!("bad codepoint {cp}"),
            })?;
        let mut bmp = read_pgm(&dir.join(name), code, index)?;
        match polarity {
            "ink-high" => {}
            "ink-low" => {
                for p in &mut bmp.pixels {
                    *p = 255 - *p;
                }
            }
            other => {
                return Err(Error::MalformedArchive {
                    index,
                    msg: format!("unknown polarity {other}"),
                })
            }
        }
        if archive.entries.contains_key(&code) {
            return Err(Error::DuplicateCodepoint {
                codepoint: code,
                index,
            });
        }
        archive.entries.insert(code, bmp);
        index += 1;
    }
    Ok(archive)
}
