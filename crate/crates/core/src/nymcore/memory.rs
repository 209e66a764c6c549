//! Modeled VM memory: fixed-size pages drawn from one engine-wide arena.
//! Released pages are zeroed before they return to the free list.

use zeroize::Zeroize;

pub const PAGE: usize = 4096;

#[derive(Debug, Default)]
pub struct PageArena {
    pages: Vec<Box<[u8; PAGE]>>,
    free: Vec<usize>,
}

impl PageArena {
    fn alloc(&mut self) -> usize {
        match self.free.pop() {
            Some(i) => i,
            None => {
                self.pages.push(Box::new([0u8; PAGE]));
                self.pages.len() - 1
            }
        }
    }

    fn release(&mut self, i: usize) {
        self.pages[i].zeroize();
        self.free.push(i);
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    /// Every page, in use or free.
    pub fn raw_pages(&self) -> impl Iterator<Item = &[u8]> {
        self.pages.iter().map(|p| &p[..])
    }
}

/// A VM's resident pages, used as a ring once `cap_pages` is reached.
#[derive(Debug)]
pub struct VmMemory {
    pages: Vec<usize>,
    cap_pages: usize,
    /// Next write position as (page slot, offset).
    cursor: (usize, usize),
}

impl VmMemory {
    pub fn new(cap_pages: usize) -> Self {
        VmMemory { pages: Vec::new(), cap_pages: cap_pages.max(1), cursor: (0, 0) }
    }

    pub fn resident_pages(&self) -> usize {
        self.pages.len()
    }

    pub fn write(&mut self, arena: &mut PageArena, mut bytes: &[u8]) {
        while !bytes.is_empty() {
            let (slot, off) = self.cursor;
            if slot == self.pages.len() {
                self.pages.push(arena.alloc());
            }
            let page = &mut arena.pages[self.pages[slot]];
            let n = (PAGE - off).min(bytes.len());
            page[off..off + n].copy_from_slice(&bytes[..n]);
            bytes = &bytes[n..];
            self.cursor = if off + n == PAGE {
                ((slot + 1) % self.cap_pages, 0)
            } else {
                (slot, off + n)
            };
        }
    }

    /// Zeroes and returns every page to the arena.
    pub fn release(&mut self, arena: &mut PageArena) {
        for i in self.pages.drain(..) {
            arena.release(i);
        }
        self.cursor = (0, 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn release_zeroes() {
        let mut arena = PageArena::default();
        let mut m = VmMemory::new(4);
        m.write(&mut arena, &[0xAB; PAGE * 2 + 10]);
        assert_eq!(m.resident_pages(), 3);
        m.release(&mut arena);
        assert_eq!(arena.free_count(), 3);
        assert!(arena.raw_pages().all(|p| p.iter().all(|&b| b == 0)));
    }

    #[test]
    fn ring_wraps() {
        let mut arena = PageArena::default();
        let mut m = VmMemory::new(2);
        m.write(&mut arena, &[1; PAGE * 5]);
        assert_eq!(m.resident_pages(), 2);
        assert_eq!(arena.page_count(), 2);
    }
}
