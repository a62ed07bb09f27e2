//! Page-array data model.
//!
//! A dataset is a fixed array of pages; each page holds `items_per_page`
//! unsigned little-endian items. Page contents live in relaxed atomic words so
//! that one client thread and one snapshotter thread can touch disjoint (or
//! protocol-separated) pages without unsafe code. Each algorithm layers its own
//! synchronization contract on top; the store itself provides none.

use std::sync::atomic::{AtomicU32, AtomicU64, AtomicU8, Ordering};

use crate::error::{Error, Result};

pub const DEFAULT_PAGE_SIZE: usize = 4096;
pub const DEFAULT_ITEM_SIZE: usize = 4;

const WORD: usize = 4;

/// Shape of a page array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Layout {
    page_count: usize,
    page_size: usize,
    item_size: usize,
}

impl Layout {
    pub fn new(page_count: usize, page_size: usize, item_size: usize) -> Result<Self> {
        if page_count == 0 {
            return Err(Error::InvalidLayout("page_count must be at least 1".into()));
        }
        if page_size == 0 || item_size == 0 {
            return Err(Error::InvalidLayout("page and item sizes must be non-zero".into()));
        }
        if !page_size.is_multiple_of(item_size) {
            return Err(Error::InvalidLayout(format!(
                "page_size {page_size} is not a multiple of item_size {item_size}"
            )));
        }
        if !item_size.is_multiple_of(WORD) {
            return Err(Error::InvalidLayout(format!(
                "item_size {item_size} must be a multiple of {WORD} bytes"
            )));
        }
        if page_count.checked_mul(page_size).is_none() {
            return Err(Error::InvalidLayout("dataset size overflows".into()));
        }
        Ok(Layout {
            page_count,
            page_size,
            item_size,
        })
    }

    /// 4 KB pages of 4-byte items.
    pub fn with_pages(page_count: usize) -> Result<Self> {
        Layout::new(page_count, DEFAULT_PAGE_SIZE, DEFAULT_ITEM_SIZE)
    }

    /// One 4-byte item per page, the shape of the worked examples.
    pub fn single_item(page_count: usize) -> Result<Self> {
        Layout::new(page_count, DEFAULT_ITEM_SIZE, DEFAULT_ITEM_SIZE)
    }

    /// Largest whole number of default-size pages fitting in `mb` mebibytes.
    pub fn from_megabytes(mb: usize) -> Result<Self> {
        Layout::with_pages(mb * (1 << 20) / DEFAULT_PAGE_SIZE)
    }

    pub fn page_count(&self) -> usize {
        self.page_count
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn item_size(&self) -> usize {
        self.item_size
    }

    pub fn items_per_page(&self) -> usize {
        self.page_size / self.item_size
    }

    pub fn dataset_bytes(&self) -> usize {
        self.page_count * self.page_size
    }

    pub(crate) fn words_per_page(&self) -> usize {
        self.page_size / WORD
    }

    fn words_per_item(&self) -> usize {
        self.item_size / WORD
    }

    /// Word offset of `item` within a page.
    fn item_word(&self, item: usize) -> usize {
        item * self.words_per_item()
    }

    /// Item slot a trace value lands in. Values carry sequence numbers, so
    /// consecutive updates to a page spread over its items.
    #[inline]
    pub fn item_slot(&self, value: u32) -> usize {
        value as usize % self.items_per_page()
    }

    pub fn check_page(&self, index: usize) -> Result<()> {
        if index < self.page_count {
            Ok(())
        } else {
            Err(Error::PageOutOfRange {
                index,
                page_count: self.page_count,
            })
        }
    }
}

/// A fixed-size page array.
pub struct PageStore {
    layout: Layout,
    words: Box<[AtomicU32]>,
}

impl PageStore {
    /// Zero-filled store. Every word is written once, so the memory is resident
    /// before any measurement starts.
    pub fn new(layout: Layout) -> Self {
        let n = layout.page_count * layout.words_per_page();
        let words: Box<[AtomicU32]> = (0..n).map(|_| AtomicU32::new(0)).collect();
        PageStore { layout, words }
    }

    pub fn create(page_count: usize, page_size: usize, item_size: usize) -> Result<Self> {
        Ok(PageStore::new(Layout::new(page_count, page_size, item_size)?))
    }

    pub fn from_image(image: &PageImage) -> Self {
        let store = PageStore::new(image.layout);
        store.load_image(image);
        store
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn allocated_bytes(&self) -> usize {
        self.words.len() * WORD
    }

    #[inline]
    fn page_words(&self, page: usize) -> &[AtomicU32] {
        let wpp = self.layout.words_per_page();
        &self.words[page * wpp..(page + 1) * wpp]
    }

    #[inline]
    pub fn read_item(&self, page: usize, item: usize) -> u32 {
        let wpp = self.layout.words_per_page();
        self.words[page * wpp + self.layout.item_word(item)].load(Ordering::Relaxed)
    }

    #[inline]
    pub fn write_item(&self, page: usize, item: usize, value: u32) {
        let wpp = self.layout.words_per_page();
        self.words[page * wpp + self.layout.item_word(item)].store(value, Ordering::Relaxed);
    }

    /// Copies page `page` of `src` over the same page of `self`.
    pub fn copy_page_from(&self, src: &PageStore, page: usize) {
        debug_assert_eq!(self.layout, src.layout);
        for (dst, src) in self.page_words(page).iter().zip(src.page_words(page)) {
            dst.store(src.load(Ordering::Relaxed), Ordering::Relaxed);
        }
    }

    /// Bulk copy of every page.
    pub fn copy_from(&self, src: &PageStore) {
        debug_assert_eq!(self.layout, src.layout);
        for (dst, src) in self.words.iter().zip(src.words.iter()) {
            dst.store(src.load(Ordering::Relaxed), Ordering::Relaxed);
        }
    }

    /// Little-endian bytes of one page into `buf` (`buf.len() == page_size`).
    pub fn read_page(&self, page: usize, buf: &mut [u8]) {
        for (chunk, word) in buf.chunks_exact_mut(WORD).zip(self.page_words(page)) {
            chunk.copy_from_slice(&word.load(Ordering::Relaxed).to_le_bytes());
        }
    }

    pub fn write_page(&self, page: usize, bytes: &[u8]) {
        for (chunk, word) in bytes.chunks_exact(WORD).zip(self.page_words(page)) {
            word.store(
                u32::from_le_bytes(chunk.try_into().expect("word chunk")),
                Ordering::Relaxed,
            );
        }
    }

    pub fn load_image(&self, image: &PageImage) {
        assert_eq!(self.layout, image.layout, "image shape differs from store");
        for (chunk, word) in image.bytes.chunks_exact(WORD).zip(self.words.iter()) {
            word.store(
                u32::from_le_bytes(chunk.try_into().expect("word chunk")),
                Ordering::Relaxed,
            );
        }
    }

    pub fn to_image(&self, logical_time: u64) -> PageImage {
        let mut bytes = Vec::with_capacity(self.layout.dataset_bytes());
        for word in self.words.iter() {
            bytes.extend_from_slice(&word.load(Ordering::Relaxed).to_le_bytes());
        }
        PageImage {
            layout: self.layout,
            logical_time,
            bytes,
        }
    }

    /// FNV-1a over the words of the given pages.
    pub fn checksum<I: IntoIterator<Item = usize>>(&self, pages: I) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for p in pages {
            for w in self.page_words(p) {
                h ^= u64::from(w.load(Ordering::Relaxed));
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn same_contents(&self, other: &PageStore) -> bool {
        self.layout == other.layout
            && self
                .words
                .iter()
                .zip(other.words.iter())
                .all(|(a, b)| a.load(Ordering::Relaxed) == b.load(Ordering::Relaxed))
    }
}

impl std::fmt::Debug for PageStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PageStore").field("layout", &self.layout).finish()
    }
}

/// One flag per page, individually atomic.
pub struct BitArray {
    len: usize,
    words: Box<[AtomicU64]>,
}

impl BitArray {
    pub fn new(len: usize, value: bool) -> Self {
        let fill = if value { u64::MAX } else { 0 };
        let words = (0..len.div_ceil(64)).map(|_| AtomicU64::new(fill)).collect();
        let bits = BitArray { len, words };
        bits.mask_tail();
        bits
    }

    fn mask_tail(&self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last() {
                last.fetch_and((1u64 << rem) - 1, Ordering::Relaxed);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64].load(Ordering::Acquire) & (1 << (i % 64)) != 0
    }

    #[inline]
    pub fn set(&self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64].fetch_or(1 << (i % 64), Ordering::Release);
    }

    #[inline]
    pub fn clear(&self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64].fetch_and(!(1 << (i % 64)), Ordering::Release);
    }

    #[inline]
    pub fn assign(&self, i: usize, value: bool) {
        if value {
            self.set(i)
        } else {
            self.clear(i)
        }
    }

    /// Sets every flag; returns the number of flags touched.
    pub fn fill(&self, value: bool) -> usize {
        let fill = if value { u64::MAX } else { 0 };
        for w in self.words.iter() {
            w.store(fill, Ordering::Release);
        }
        self.mask_tail();
        self.len
    }

    /// `self[i] = !other[i]` for every flag; returns the number of flags touched.
    pub fn assign_not(&self, other: &BitArray) -> usize {
        assert_eq!(self.len, other.len);
        for (dst, src) in self.words.iter().zip(other.words.iter()) {
            dst.store(!src.load(Ordering::Acquire), Ordering::Release);
        }
        self.mask_tail();
        self.len
    }

    pub fn count_ones(&self) -> usize {
        self.words
            .iter()
            .map(|w| w.load(Ordering::Acquire).count_ones() as usize)
            .sum()
    }

    pub fn to_vec(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.get(i) as u8).collect()
    }

    pub fn allocated_bytes(&self) -> usize {
        self.words.len() * 8
    }
}

impl std::fmt::Debug for BitArray {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BitArray{:?}", self.to_vec())
    }
}

/// One {0, 1, 2} flag per page, individually atomic.
///
/// An entry may also be briefly *claimed* while a page moves between copies;
/// a claimed entry reads as [`TriStateArray::CLAIMED`] and must be released
/// with one of the three settled values.
pub struct TriStateArray {
    flags: Box<[AtomicU8]>,
}

impl TriStateArray {
    pub const CLAIMED: u8 = 3;

    pub fn new(len: usize) -> Self {
        TriStateArray {
            flags: (0..len).map(|_| AtomicU8::new(0)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        self.flags[i].load(Ordering::Acquire)
    }

    #[inline]
    pub fn set(&self, i: usize, v: u8) {
        debug_assert!(v <= 2);
        self.flags[i].store(v, Ordering::Release);
    }

    /// Claims entry `i` if it currently holds `expected`.
    #[inline]
    pub fn try_claim(&self, i: usize, expected: u8) -> bool {
        self.flags[i]
            .compare_exchange(expected, Self::CLAIMED, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
    }

    pub fn to_vec(&self) -> Vec<u8> {
        self.flags.iter().map(|f| f.load(Ordering::Acquire)).collect()
    }

    pub fn allocated_bytes(&self) -> usize {
        self.flags.len()
    }
}

impl std::fmt::Debug for TriStateArray {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TriStateArray{:?}", self.to_vec())
    }
}

/// Materialized snapshot: every page's bytes, in index order.
#[derive(Clone, PartialEq, Eq)]
pub struct PageImage {
    layout: Layout,
    /// Trace position (number of committed updates) the image corresponds to.
    pub logical_time: u64,
    bytes: Vec<u8>,
}

pub const IMAGE_MAGIC: &[u8; 8] = b"SNAPIMG1";

impl PageImage {
    pub fn zeroed(layout: Layout) -> Self {
        PageImage {
            layout,
            logical_time: 0,
            bytes: vec![0; layout.dataset_bytes()],
        }
    }

    pub fn from_bytes(layout: Layout, bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() != layout.dataset_bytes() {
            return Err(Error::ShapeMismatch(format!(
                "{} bytes for a {} byte dataset",
                bytes.len(),
                layout.dataset_bytes()
            )));
        }
        Ok(PageImage {
            layout,
            logical_time: 0,
            bytes,
        })
    }

    /// Image whose item `i` of every page is taken from `items` in page order.
    /// Meant for the one-item-per-page running examples.
    pub fn from_items(layout: Layout, items: &[u32]) -> Result<Self> {
        if items.len() != layout.page_count() * layout.items_per_page() {
            return Err(Error::ShapeMismatch(format!(
                "{} items for {} slots",
                items.len(),
                layout.page_count() * layout.items_per_page()
            )));
        }
        let mut image = PageImage::zeroed(layout);
        let ipp = layout.items_per_page();
        for (n, v) in items.iter().enumerate() {
            image.set_item(n / ipp, n % ipp, *v);
        }
        Ok(image)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn page(&self, index: usize) -> &[u8] {
        let ps = self.layout.page_size;
        &self.bytes[index * ps..(index + 1) * ps]
    }

    pub fn page_mut(&mut self, index: usize) -> &mut [u8] {
        let ps = self.layout.page_size;
        &mut self.bytes[index * ps..(index + 1) * ps]
    }

    fn item_offset(&self, page: usize, item: usize) -> usize {
        page * self.layout.page_size + item * self.layout.item_size
    }

    pub fn item(&self, page: usize, item: usize) -> u32 {
        let off = self.item_offset(page, item);
        u32::from_le_bytes(self.bytes[off..off + WORD].try_into().expect("item"))
    }

    pub fn set_item(&mut self, page: usize, item: usize, value: u32) {
        let off = self.item_offset(page, item);
        self.bytes[off..off + WORD].copy_from_slice(&value.to_le_bytes());
    }

    /// First item of every page; the whole dataset in one-item mode.
    pub fn first_items(&self) -> Vec<u32> {
        (0..self.layout.page_count).map(|p| self.item(p, 0)).collect()
    }

    /// 16-byte header (magic, page count) followed by the raw pages.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.bytes.len());
        out.extend_from_slice(IMAGE_MAGIC);
        out.extend_from_slice(&(self.layout.page_count as u64).to_le_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    /// Inverse of [`PageImage::encode`]; item size is not recorded and must be supplied.
    pub fn decode(data: &[u8], item_size: usize) -> Result<Self> {
        if data.len() < 16 || &data[..8] != IMAGE_MAGIC {
            return Err(Error::InvalidParameter("not a SNAPIMG1 image".into()));
        }
        let page_count = u64::from_le_bytes(data[8..16].try_into().expect("u64")) as usize;
        let payload = &data[16..];
        if page_count == 0 || !payload.len().is_multiple_of(page_count) {
            return Err(Error::ShapeMismatch(format!(
                "{} payload bytes for {page_count} pages",
                payload.len()
            )));
        }
        let layout = Layout::new(page_count, payload.len() / page_count, item_size)?;
        PageImage::from_bytes(layout, payload.to_vec())
    }
}

impl std::fmt::Debug for PageImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut d = f.debug_struct("PageImage");
        d.field("layout", &self.layout)
            .field("logical_time", &self.logical_time);
        if self.layout.page_count <= 16 {
            d.field("first_items", &self.first_items());
        }
        d.finish()
    }
}
