//! In-repo media container formats.
//!
//! All integers are big-endian. Strings are UTF-8 with a u16 length.
//!
//! Image (`NYMIMG1\0`): width u32, height u32, tag count u32, tags
//! (key, value), region count u32, regions (x, y, w, h as u32), then
//! width·height RGB triples.
//!
//! Document (`NYMDOC1\0`): tag count u32, tags, page count u32, pages
//! (u32 length + UTF-8 text).
//!
//! Page images (`NYMPGS1\0`): page count u32, then per page width u32,
//! height u32 and RGB pixels. Carries no tags or text.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SaniError;

pub const IMAGE_MAGIC: &[u8; 8] = b"NYMIMG1\0";
pub const DOCUMENT_MAGIC: &[u8; 8] = b"NYMDOC1\0";
pub const PAGES_MAGIC: &[u8; 8] = b"NYMPGS1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MediaKind {
    Image,
    Document,
    /// Sequence of page bitmaps, as produced by rasterizing a document.
    PageImages,
    Unknown,
}

pub fn detect_kind(payload: &[u8]) -> MediaKind {
    match payload.get(..8) {
        Some(m) if m == IMAGE_MAGIC => MediaKind::Image,
        Some(m) if m == DOCUMENT_MAGIC => MediaKind::Document,
        Some(m) if m == PAGES_MAGIC => MediaKind::PageImages,
        _ => MediaKind::Unknown,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB.
    pub pixels: Vec<[u8; 3]>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        Bitmap { width, height, pixels: vec![fill; width as usize * height as usize] }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, px: [u8; 3]) {
        let w = self.width;
        self.pixels[(y * w + x) as usize] = px;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub bitmap: Bitmap,
    pub tags: BTreeMap<String, String>,
    pub regions: Vec<Rect>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub tags: BTreeMap<String, String>,
    pub pages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Content {
    Image(Image),
    Document(Document),
    Pages(Vec<Bitmap>),
    Unknown,
}

impl Content {
    pub fn kind(&self) -> MediaKind {
        match self {
            Content::Image(_) => MediaKind::Image,
            Content::Document(_) => MediaKind::Document,
            Content::Pages(_) => MediaKind::PageImages,
            Content::Unknown => MediaKind::Unknown,
        }
    }

    pub fn encode(&self) -> Option<Vec<u8>> {
        let mut w = Writer::default();
        match self {
            Content::Image(img) => {
                w.raw(IMAGE_MAGIC);
                w.u32(img.bitmap.width);
                w.u32(img.bitmap.height);
                w.tags(&img.tags);
                w.u32(img.regions.len() as u32);
                for r in &img.regions {
                    for v in [r.x, r.y, r.w, r.h] {
                        w.u32(v);
                    }
                }
                w.pixels(&img.bitmap.pixels);
            }
            Content::Document(doc) => {
                w.raw(DOCUMENT_MAGIC);
                w.tags(&doc.tags);
                w.u32(doc.pages.len() as u32);
                for p in &doc.pages {
                    w.u32(p.len() as u32);
                    w.raw(p.as_bytes());
                }
            }
            Content::Pages(pages) => {
                w.raw(PAGES_MAGIC);
                w.u32(pages.len() as u32);
                for p in pages {
                    w.u32(p.width);
                    w.u32(p.height);
                    w.pixels(&p.pixels);
                }
            }
            Content::Unknown => return None,
        }
        Some(w.0)
    }

    pub fn decode(payload: &[u8]) -> Result<Content, SaniError> {
        let kind = detect_kind(payload);
        let mut r = Reader { buf: payload, at: 8 };
        let content = match kind {
            MediaKind::Unknown => return Ok(Content::Unknown),
            MediaKind::Image => {
                let (width, height) = (r.u32()?, r.u32()?);
                let tags = r.tags()?;
                let n = r.u32()?;
                let mut regions = Vec::new();
                for _ in 0..n {
                    regions.push(Rect { x: r.u32()?, y: r.u32()?, w: r.u32()?, h: r.u32()? });
                }
                let pixels = r.pixels(width, height)?;
                Content::Image(Image { bitmap: Bitmap { width, height, pixels }, tags, regions })
            }
            MediaKind::Document => {
                let tags = r.tags()?;
                let n = r.u32()?;
                let mut pages = Vec::new();
                for _ in 0..n {
                    let len = r.u32()? as usize;
                    let text = std::str::from_utf8(r.take(len)?).map_err(|_| SaniError::Malformed("page text"))?;
                    pages.push(text.to_owned());
                }
                Content::Document(Document { tags, pages })
            }
            MediaKind::PageImages => {
                let n = r.u32()?;
                let mut pages = Vec::new();
                for _ in 0..n {
                    let (width, height) = (r.u32()?, r.u32()?);
                    pages.push(Bitmap { width, height, pixels: r.pixels(width, height)? });
                }
                Content::Pages(pages)
            }
        };
        if r.at != payload.len() {
            return Err(SaniError::Malformed("trailing bytes"));
        }
        Ok(content)
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn str16(&mut self, s: &str) {
        let b = &s.as_bytes()[..s.len().min(u16::MAX as usize)];
        self.0.extend_from_slice(&(b.len() as u16).to_be_bytes());
        self.0.extend_from_slice(b);
    }
    fn tags(&mut self, tags: &BTreeMap<String, String>) {
        self.u32(tags.len() as u32);
        for (k, v) in tags {
            self.str16(k);
            self.str16(v);
        }
    }
    fn pixels(&mut self, px: &[[u8; 3]]) {
        for p in px {
            self.0.extend_from_slice(p);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SaniError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(SaniError::Malformed("truncated"))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, SaniError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn str16(&mut self) -> Result<String, SaniError> {
        let n = u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| SaniError::Malformed("tag text"))
    }
    fn tags(&mut self) -> Result<BTreeMap<String, String>, SaniError> {
        let n = self.u32()?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let k = self.str16()?;
            out.insert(k, self.str16()?);
        }
        Ok(out)
    }
    fn pixels(&mut self, w: u32, h: u32) -> Result<Vec<[u8; 3]>, SaniError> {
        let n = (w as usize).checked_mul(h as usize).and_then(|n| n.checked_mul(3)).ok_or(SaniError::Malformed("dimensions"))?;
        Ok(self.take(n)?.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

/// A file presented to the SaniVM, with its parsed tag table and regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaFile {
    pub name: String,
    pub kind: MediaKind,
    pub payload: Vec<u8>,
    pub metadata: BTreeMap<String, String>,
    pub regions: Vec<Rect>,
}

impl MediaFile {
    /// Parses `payload`. Kind is decided by magic bytes alone; a file with
    /// known magic that fails to parse is an error.
    pub fn parse(name: impl Into<String>, payload: Vec<u8>) -> Result<Self, SaniError> {
        let content = Content::decode(&payload)?;
        let (metadata, regions) = match &content {
            Content::Image(i) => (i.tags.clone(), i.regions.clone()),
            Content::Document(d) => (d.tags.clone(), Vec::new()),
            Content::Pages(_) | Content::Unknown => (BTreeMap::new(), Vec::new()),
        };
        Ok(MediaFile { name: name.into(), kind: content.kind(), payload, metadata, regions })
    }

    pub fn from_content(name: impl Into<String>, content: &Content) -> Self {
        let payload = content.encode().expect("known kinds encode");
        MediaFile::parse(name, payload).expect("own encoding parses")
    }

    pub fn content(&self) -> Result<Content, SaniError> {
        Content::decode(&self.payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip() {
        let mut bm = Bitmap::new(3, 2, [1, 2, 3]);
        bm.set(2, 1, [9, 9, 9]);
        let img = Content::Image(Image {
            bitmap: bm,
            tags: [("gps.lat".to_owned(), "1.5".to_owned())].into(),
            regions: vec![Rect { x: 0, y: 0, w: 1, h: 1 }],
        });
        let bytes = img.encode().unwrap();
        assert_eq!(detect_kind(&bytes), MediaKind::Image);
        assert_eq!(Content::decode(&bytes).unwrap(), img);
        assert!(Content::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn unknown_magic() {
        assert_eq!(detect_kind(b"\x89PNG\r\n\x1a\n...."), MediaKind::Unknown);
        assert_eq!(detect_kind(b"abc"), MediaKind::Unknown);
        let f = MediaFile::parse("x.bin", b"random".to_vec()).unwrap();
        assert_eq!(f.kind, MediaKind::Unknown);
    }
}
