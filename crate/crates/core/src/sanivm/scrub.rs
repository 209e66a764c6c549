//! Scrubbing transforms and paranoia presets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::media::{Bitmap, Content, MediaFile, MediaKind};
use super::SaniError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Transform {
    StripMetadata,
    BlurRegions,
    NoiseDownscale,
    RasterizeDocument,
}

impl Transform {
    pub fn applies_to(self, kind: MediaKind) -> bool {
        match self {
            Transform::StripMetadata => matches!(kind, MediaKind::Image | MediaKind::Document | MediaKind::PageImages),
            Transform::BlurRegions | Transform::NoiseDownscale => kind == MediaKind::Image,
            Transform::RasterizeDocument => kind == MediaKind::Document,
        }
    }
}

pub const DEFAULT_NOISE_AMPLITUDE: u8 = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrubPlan {
    pub transforms: Vec<Transform>,
    /// Preset the plan came from, if any.
    #[serde(default)]
    pub paranoia: Option<u8>,
    #[serde(default = "default_amp")]
    pub noise_amplitude: u8,
}

fn default_amp() -> u8 {
    DEFAULT_NOISE_AMPLITUDE
}

impl Default for ScrubPlan {
    fn default() -> Self {
        ScrubPlan::empty()
    }
}

impl ScrubPlan {
    pub fn empty() -> Self {
        ScrubPlan { transforms: Vec::new(), paranoia: None, noise_amplitude: DEFAULT_NOISE_AMPLITUDE }
    }

    pub fn of(transforms: impl IntoIterator<Item = Transform>) -> Self {
        ScrubPlan { transforms: transforms.into_iter().collect(), ..ScrubPlan::empty() }
    }

    /// Preset for `kind`: 0 strips metadata, 1 also blurs regions,
    /// 2 also adds noise (images) or rasterizes (documents). Levels above
    /// 2 are treated as 2. Unknown files get an empty plan.
    pub fn paranoia(level: u8, kind: MediaKind) -> Self {
        let level = level.min(2);
        let mut t = Vec::new();
        match kind {
            MediaKind::Image => {
                t.push(Transform::StripMetadata);
                if level >= 1 {
                    t.push(Transform::BlurRegions);
                }
                if level >= 2 {
                    t.push(Transform::NoiseDownscale);
                }
            }
            MediaKind::Document => {
                t.push(Transform::StripMetadata);
                if level >= 2 {
                    t.push(Transform::RasterizeDocument);
                }
            }
            MediaKind::PageImages => t.push(Transform::StripMetadata),
            MediaKind::Unknown => {}
        }
        ScrubPlan { transforms: t, paranoia: Some(level), noise_amplitude: DEFAULT_NOISE_AMPLITUDE }
    }

    pub fn validate(&self, kind: MediaKind) -> Result<(), SaniError> {
        match self.transforms.iter().find(|t| !t.applies_to(kind)) {
            Some(t) => Err(SaniError::KindMismatch { transform: *t, kind }),
            None => Ok(()),
        }
    }
}

/// Applies `plan` in order. The input is not modified.
pub fn scrub(file: &MediaFile, plan: &ScrubPlan) -> Result<MediaFile, SaniError> {
    scrub_with_rng(file, plan, &mut rand::thread_rng())
}

pub fn scrub_with_rng<R: Rng + ?Sized>(file: &MediaFile, plan: &ScrubPlan, rng: &mut R) -> Result<MediaFile, SaniError> {
    plan.validate(file.kind)?;
    if plan.transforms.is_empty() {
        return Ok(file.clone());
    }
    let mut content = file.content()?;
    for t in &plan.transforms {
        content = match (*t, content) {
            (Transform::StripMetadata, Content::Image(mut i)) => {
                i.tags.clear();
                Content::Image(i)
            }
            (Transform::StripMetadata, Content::Document(mut d)) => {
                d.tags.clear();
                Content::Document(d)
            }
            (Transform::StripMetadata, c @ Content::Pages(_)) => c,
            (Transform::BlurRegions, Content::Image(mut i)) => {
                for r in std::mem::take(&mut i.regions) {
                    blur_region(&mut i.bitmap, r.x, r.y, r.w, r.h);
                }
                Content::Image(i)
            }
            (Transform::NoiseDownscale, Content::Image(mut i)) => {
                // Regions refer to the old geometry; blur any left first.
                for r in std::mem::take(&mut i.regions) {
                    blur_region(&mut i.bitmap, r.x, r.y, r.w, r.h);
                }
                i.bitmap = add_noise(downscale(&i.bitmap), plan.noise_amplitude, rng);
                Content::Image(i)
            }
            (Transform::RasterizeDocument, Content::Document(d)) => Content::Pages(d.pages.iter().map(|p| rasterize(p)).collect()),
            (t, c) => return Err(SaniError::KindMismatch { transform: t, kind: c.kind() }),
        };
    }
    Ok(MediaFile::from_content(file.name.clone(), &content))
}

/// Replaces every pixel of the clipped rectangle by its mean colour.
pub fn blur_region(bm: &mut Bitmap, x: u32, y: u32, w: u32, h: u32) {
    let x1 = x.saturating_add(w).min(bm.width);
    let y1 = y.saturating_add(h).min(bm.height);
    if x >= x1 || y >= y1 {
        return;
    }
    let mut sum = [0u64; 3];
    for yy in y..y1 {
        for xx in x..x1 {
            let p = bm.get(xx, yy);
            for c in 0..3 {
                sum[c] += p[c] as u64;
            }
        }
    }
    let n = ((x1 - x) * (y1 - y)) as u64;
    let mean = [(sum[0] / n) as u8, (sum[1] / n) as u8, (sum[2] / n) as u8];
    for yy in y..y1 {
        for xx in x..x1 {
            bm.set(xx, yy, mean);
        }
    }
}

/// 2×2 box filter; odd trailing rows and columns are dropped.
pub fn downscale(bm: &Bitmap) -> Bitmap {
    let (w, h) = ((bm.width / 2).max(1), (bm.height / 2).max(1));
    let mut out = Bitmap::new(w, h, [0; 3]);
    for y in 0..h {
        for x in 0..w {
            let mut sum = [0u32; 3];
            let mut n = 0;
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (sx, sy) = (2 * x + dx, 2 * y + dy);
                if sx < bm.width && sy < bm.height {
                    let p = bm.get(sx, sy);
                    for c in 0..3 {
                        sum[c] += p[c] as u32;
                    }
                    n += 1;
                }
            }
            out.set(x, y, [(sum[0] / n) as u8, (sum[1] / n) as u8, (sum[2] / n) as u8]);
        }
    }
    out
}

pub fn add_noise<R: Rng + ?Sized>(mut bm: Bitmap, amplitude: u8, rng: &mut R) -> Bitmap {
    if amplitude == 0 {
        return bm;
    }
    let a = amplitude as i16;
    for p in &mut bm.pixels {
        for c in p.iter_mut() {
            *c = (*c as i16 + rng.gen_range(-a..=a)).clamp(0, 255) as u8;
        }
    }
    bm
}

const GLYPH: u32 = 6;
const COLS: u32 = 64;

/// Renders text onto a bitmap: each byte becomes a 6×6 cell whose
/// pattern is derived from the byte value, ink black on white.
pub fn rasterize(text: &str) -> Bitmap {
    let lines: Vec<&[u8]> = text.lines().flat_map(|l| l.as_bytes().chunks(COLS as usize).collect::<Vec<_>>()).collect();
    let rows = (lines.len() as u32).max(1);
    let mut bm = Bitmap::new(COLS * GLYPH, rows * GLYPH, [255; 3]);
    for (row, line) in lines.iter().enumerate() {
        for (col, &b) in line.iter().enumerate() {
            if b == b' ' {
                continue;
            }
            let pattern = (b as u32).wrapping_mul(0x9E37_79B9) >> 7;
            for i in 0..16 {
                if pattern >> i & 1 == 1 {
                    let (gx, gy) = (1 + i % 4, 1 + i / 4);
                    bm.set(col as u32 * GLYPH + gx, row as u32 * GLYPH + gy, [0; 3]);
                }
            }
        }
    }
    bm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sanivm::analyze::analyze;
    use crate::sanivm::media::{Document, Image, Rect};
    use rand::SeedableRng;

    fn photo() -> MediaFile {
        let mut bm = Bitmap::new(8, 6, [10, 20, 30]);
        bm.set(1, 1, [250, 0, 0]);
        MediaFile::from_content(
            "p",
            &Content::Image(Image {
                bitmap: bm,
                tags: [("gps.lat".to_string(), "1".to_string())].into(),
                regions: vec![Rect { x: 0, y: 0, w: 2, h: 2 }],
            }),
        )
    }

    #[test]
    fn strip_clears_findings() {
        let out = scrub(&photo(), &ScrubPlan::of([Transform::StripMetadata])).unwrap();
        assert!(analyze(&out).iter().all(|f| !f.category.is_metadata()));
    }

    #[test]
    fn blur_uses_region_mean() {
        let out = scrub(&photo(), &ScrubPlan::of([Transform::BlurRegions])).unwrap();
        let Content::Image(img) = out.content().unwrap() else { panic!() };
        // (3·(10,20,30) + (250,0,0)) / 4
        assert_eq!(img.bitmap.get(0, 0), [70, 15, 22]);
        assert_eq!(img.bitmap.get(1, 1), [70, 15, 22]);
        assert_eq!(img.bitmap.get(2, 2), [10, 20, 30]);
        assert!(img.regions.is_empty());
    }

    #[test]
    fn noise_downscale_halves_and_bounds_noise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let plan = ScrubPlan { noise_amplitude: 5, ..ScrubPlan::of([Transform::NoiseDownscale]) };
        let out = scrub_with_rng(&photo(), &plan, &mut rng).unwrap();
        let Content::Image(img) = out.content().unwrap() else { panic!() };
        assert_eq!((img.bitmap.width, img.bitmap.height), (4, 3));
        let p = img.bitmap.get(3, 2);
        for (c, base) in p.iter().zip([10i16, 20, 30]) {
            assert!((*c as i16 - base).abs() <= 5);
        }
    }

    #[test]
    fn rasterize_hides_text_and_tags() {
        let doc = MediaFile::from_content(
            "d",
            &Content::Document(Document {
                tags: [("author".to_string(), "Bob Smith".to_string())].into(),
                pages: vec!["Meet at the old mill at nine".into(), "hidden layer: secret-token-xyz".into()],
            }),
        );
        let out = scrub(&doc, &ScrubPlan::paranoia(2, MediaKind::Document)).unwrap();
        assert_eq!(out.kind, MediaKind::PageImages);
        assert!(out.metadata.is_empty());
        let hay = &out.payload;
        for needle in [&b"secret-token"[..], b"old mill", b"Bob"] {
            assert!(!hay.windows(needle.len()).any(|w| w == needle));
        }
    }

    #[test]
    fn kind_mismatch() {
        let doc = MediaFile::from_content("d", &Content::Document(Document { tags: Default::default(), pages: vec![] }));
        assert!(matches!(
            scrub(&doc, &ScrubPlan::of([Transform::BlurRegions])),
            Err(SaniError::KindMismatch { .. })
        ));
        assert_eq!(ScrubPlan::paranoia(2, MediaKind::Document).transforms.last(), Some(&Transform::RasterizeDocument));
    }
}
