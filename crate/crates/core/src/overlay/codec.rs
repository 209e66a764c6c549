//! Deterministic layer serialization.
//!
//! ```text
//! magic     16 B   "NYMKIT-LAYER\0v1\0"
//! record*          sorted by path, entries and whiteouts interleaved
//!   len     u64 BE length of the rest of the record
//!   path    u32 BE length + UTF-8 bytes
//!   flag    u8     1 = whiteout, 0 = entry
//!   nmeta   u32 BE
//!   meta*          (u32 BE len + key, u32 BE len + value), sorted by key
//!   content u64 BE length + bytes (empty for whiteouts)
//! ```

use std::collections::{BTreeMap, BTreeSet};

use super::{FileEntry, Layer, OverlayError};

pub const LAYER_MAGIC: &[u8; 16] = b"NYMKIT-LAYER\x00v1\x00";

pub fn encode_layer(layer: &Layer) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + layer.content_bytes() as usize);
    out.extend_from_slice(LAYER_MAGIC);

    let mut entries = layer.entries().iter().peekable();
    let mut whiteouts = layer.whiteouts().iter().peekable();
    let mut record = Vec::new();
    loop {
        let next = match (entries.peek(), whiteouts.peek()) {
            (Some((pe, _)), Some(pw)) if pe.as_str() < pw.as_str() => entries.next().map(|(p, e)| (p, Some(e))),
            (Some(_), Some(_)) | (None, Some(_)) => whiteouts.next().map(|p| (p, None)),
            (Some(_), None) => entries.next().map(|(p, e)| (p, Some(e))),
            (None, None) => None,
        };
        let Some((path, entry)) = next else { break };

        record.clear();
        put_str(&mut record, path);
        match entry {
            None => {
                record.push(1);
                record.extend_from_slice(&0u32.to_be_bytes());
                record.extend_from_slice(&0u64.to_be_bytes());
            }
            Some(e) => {
                record.push(0);
                record.extend_from_slice(&(e.metadata.len() as u32).to_be_bytes());
                for (k, v) in &e.metadata {
                    put_str(&mut record, k);
                    put_str(&mut record, v);
                }
                record.extend_from_slice(&(e.content.len() as u64).to_be_bytes());
                record.extend_from_slice(&e.content);
            }
        }
        out.extend_from_slice(&(record.len() as u64).to_be_bytes());
        out.extend_from_slice(&record);
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], OverlayError> {
        if self.buf.len() < n {
            return Err(OverlayError::BadEncoding("truncated"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, OverlayError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, OverlayError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, OverlayError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, OverlayError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| OverlayError::BadEncoding("non-UTF-8 string"))
    }
}

/// Decodes a serialized layer into a read-only layer.
pub fn decode_layer(bytes: &[u8]) -> Result<Layer, OverlayError> {
    let mut r = Reader { buf: bytes };
    if r.take(16)? != LAYER_MAGIC {
        return Err(OverlayError::BadEncoding("bad magic"));
    }
    let mut entries = BTreeMap::new();
    let mut whiteouts = BTreeSet::new();
    let mut last: Option<String> = None;
    while !r.buf.is_empty() {
        let len = usize::try_from(r.u64()?).map_err(|_| OverlayError::BadEncoding("record too long"))?;
        let mut rec = Reader { buf: r.take(len)? };
        let path = rec.string()?;
        if last.as_deref().is_some_and(|l| l >= path.as_str()) {
            return Err(OverlayError::BadEncoding("records not sorted"));
        }
        let flag = rec.u8()?;
        let nmeta = rec.u32()?;
        let mut metadata = BTreeMap::new();
        for _ in 0..nmeta {
            let k = rec.string()?;
            let v = rec.string()?;
            metadata.insert(k, v);
        }
        let clen = usize::try_from(rec.u64()?).map_err(|_| OverlayError::BadEncoding("content too long"))?;
        let content = rec.take(clen)?.to_vec();
        if !rec.buf.is_empty() {
            return Err(OverlayError::BadEncoding("trailing bytes in record"));
        }
        match flag {
            0 => {
                entries.insert(path.clone(), FileEntry { content, metadata });
            }
            1 => {
                if nmeta != 0 || clen != 0 {
                    return Err(OverlayError::BadEncoding("whiteout with payload"));
                }
                whiteouts.insert(path.clone());
            }
            _ => return Err(OverlayError::BadEncoding("bad whiteout flag")),
        }
        last = Some(path);
    }
    Layer::from_parts(entries, whiteouts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn magic_is_sixteen_bytes() {
        assert_eq!(LAYER_MAGIC.len(), 16);
        assert_eq!(&encode_layer(&Layer::writable())[..], &LAYER_MAGIC[..]);
    }

    #[test]
    fn whiteouts_interleave_in_path_order() {
        let mut l = Layer::writable();
        l.put("/b", FileEntry::new("B")).unwrap();
        l.add_whiteout("/a").unwrap();
        l.add_whiteout("/c").unwrap();
        let bytes = encode_layer(&l);
        // first record's path starts after magic (16) + len (8) + path len (4)
        assert_eq!(&bytes[28..30], b"/a");
        let back = decode_layer(&bytes).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let mut l = Layer::writable();
        l.put("/x", FileEntry::new("hello").with_meta("mtime", "1")).unwrap();
        let bytes = encode_layer(&l);
        assert!(decode_layer(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(decode_layer(&bad).is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(
            files in proptest::collection::btree_map("/[a-c]{1,3}", proptest::collection::vec(any::<u8>(), 0..32), 0..8),
            gone in proptest::collection::btree_set("/[d-f]{1,3}", 0..4),
        ) {
            let mut l = Layer::writable();
            for (p, c) in &files {
                l.put(p, FileEntry::new(c.clone()).with_meta("mtime", "0")).unwrap();
            }
            for p in &gone {
                l.add_whiteout(p).unwrap();
            }
            let bytes = encode_layer(&l);
            let back = decode_layer(&bytes).unwrap();
            prop_assert_eq!(&back, &l);
            prop_assert_eq!(encode_layer(&back), bytes);
        }
    }
}
