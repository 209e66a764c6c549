//! Deterministic fixture corpus covering every kind and tag combination.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::media::{Bitmap, Content, Document, Image, Rect};

const TAG_SETS: [(&str, &str); 5] = [
    ("gps.latitude", "46.5191"),
    ("serial", "SN-4410-77A2"),
    ("author", "J. Doe"),
    ("timestamp", "2014-03-02T18:22:05Z"),
    ("software", "PhotoTool 3.1"),
];

fn tags(mask: u32) -> BTreeMap<String, String> {
    let mut t = BTreeMap::new();
    for (i, (k, v)) in TAG_SETS.iter().enumerate() {
        if mask >> i & 1 == 1 {
            t.insert(k.to_string(), v.to_string());
            if *k == "gps.latitude" {
                t.insert("gps.longitude".into(), "6.5668".into());
            }
        }
    }
    t
}

/// `(file name, bytes)` pairs: 32 images (every tag subset, every fourth
/// with face regions), 16 documents, 2 page-image files and 4 unknown
/// binaries.
pub fn corpus() -> Vec<(String, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a41);
    let mut out = Vec::new();
    for mask in 0..32u32 {
        let (w, h) = (rng.gen_range(4..24), rng.gen_range(4..24));
        let mut bm = Bitmap::new(w, h, [0; 3]);
        for p in &mut bm.pixels {
            *p = rng.gen();
        }
        let regions = if mask % 4 == 3 {
            vec![Rect { x: 1, y: 1, w: w / 2, h: h / 2 }, Rect { x: w - 2, y: 0, w: 4, h: 3 }]
        } else {
            Vec::new()
        };
        let c = Content::Image(Image { bitmap: bm, tags: tags(mask), regions });
        out.push((format!("img-{mask:02}.nimg"), c.encode().unwrap()));
    }
    for mask in 0..16u32 {
        let pages = (0..rng.gen_range(1..4))
            .map(|p| format!("Page {p} of report {mask}.\nConfidential notes line two."))
            .collect();
        let c = Content::Document(Document { tags: tags(mask << 1 | (mask & 1)), pages });
        out.push((format!("doc-{mask:02}.ndoc"), c.encode().unwrap()));
    }
    for i in 0..2 {
        let c = Content::Pages(vec![Bitmap::new(6 + i, 6, [255; 3])]);
        out.push((format!("scan-{i}.npgs"), c.encode().unwrap()));
    }
    for i in 0..4 {
        let mut b = vec![0u8; 64 + i * 16];
        rng.fill(&mut b[..]);
        if i == 0 {
            b[..8].copy_from_slice(b"\xff\xd8\xff\xe0JFIF");
        }
        out.push((format!("blob-{i}.bin"), b));
    }
    out
}

pub fn write_corpus(dir: &Path) -> io::Result<usize> {
    fs::create_dir_all(dir)?;
    let files = corpus();
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes)?;
    }
    Ok(files.len())
}
