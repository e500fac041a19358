//! Synthetic word images and translation-tolerant binary matching.
//!
//! Words are rendered with a fixed 5x7 font, degraded by independent pixel
//! flips, and compared by pixel agreement over the union of the two
//! footprints, maximized over small translations.

mod glyphs;
mod relations;

use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};

pub use glyphs::{glyph_rows, supported_chars, GLYPH_HEIGHT, GLYPH_WIDTH};
pub use relations::{
    cluster_type1, detect_relations, read_pbm_set, write_graph, write_pbm_set, MatchConfig,
    RelationEdge, RelationGraph, RelationType,
};

/// Horizontal gap between glyphs, in pixels.
pub const GLYPH_GAP: usize = 1;

/// Maximum translation (each axis) searched by the matchers.
pub const SHIFT_TOLERANCE: i32 = 2;

/// A binary image; set bits are ink.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bitmap {
    width: usize,
    height: usize,
    stride: usize,
    rows: Vec<u64>,
}

impl std::fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Bitmap {}x{}", self.width, self.height)?;
        for y in 0..self.height {
            let line: String = (0..self.width)
                .map(|x| if self.get(x, y) { '#' } else { '.' })
                .collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

/// Reads 64 bits of `row` starting at bit `pos`; bits outside the row are 0.
#[inline]
fn get64(row: &[u64], pos: isize) -> u64 {
    if pos >= 0 {
        let w = (pos / 64) as usize;
        let b = (pos % 64) as u32;
        let lo = row.get(w).copied().unwrap_or(0) >> b;
        let hi = if b == 0 {
            0
        } else {
            row.get(w + 1).copied().unwrap_or(0) << (64 - b)
        };
        lo | hi
    } else {
        let neg = (-pos) as u32;
        if neg >= 64 {
            0
        } else {
            row.first().copied().unwrap_or(0) << neg
        }
    }
}

impl Bitmap {
    pub fn blank(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation(format!(
                "bitmap dimensions {width}x{height} must be positive"
            )));
        }
        let stride = width.div_ceil(64);
        Ok(Bitmap {
            width,
            height,
            stride,
            rows: vec![0; stride * height],
        })
    }

    /// Builds a bitmap from a row-major pixel array.
    pub fn from_bits(width: usize, height: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::validation(format!(
                "{} pixels given for a {width}x{height} bitmap",
                bits.len()
            )));
        }
        let mut bm = Bitmap::blank(width, height)?;
        for (i, &b) in bits.iter().enumerate() {
            bm.set(i % width, i / width, b);
        }
        Ok(bm)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.rows[y * self.stride + x / 64] >> (x % 64) & 1 == 1
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        let w = &mut self.rows[y * self.stride + x / 64];
        if on {
            *w |= 1 << (x % 64);
        } else {
            *w &= !(1 << (x % 64));
        }
    }

    /// Row-major pixel array.
    pub fn bits(&self) -> Vec<bool> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| self.get(x, y)))
            .collect()
    }

    pub fn ink(&self) -> usize {
        self.rows.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn row(&self, y: isize) -> &[u64] {
        if y < 0 || y as usize >= self.height {
            &[]
        } else {
            let y = y as usize;
            &self.rows[y * self.stride..(y + 1) * self.stride]
        }
    }

    /// Columns `[x0, x0 + w)` as a new bitmap.
    pub fn crop_columns(&self, x0: usize, w: usize) -> Result<Bitmap> {
        if w == 0 || x0 + w > self.width {
            return Err(Error::validation(format!(
                "column range {x0}..{} outside width {}",
                x0 + w,
                self.width
            )));
        }
        let mut out = Bitmap::blank(w, self.height)?;
        for y in 0..self.height {
            let src = self.row(y as isize);
            for k in 0..out.stride {
                let mut bits = get64(src, (x0 + 64 * k) as isize);
                let remaining = w - 64 * k;
                if remaining < 64 {
                    bits &= (1u64 << remaining) - 1;
                }
                out.rows[y * out.stride + k] = bits;
            }
        }
        Ok(out)
    }

    /// A copy with `left` blank columns prepended.
    pub fn pad_left(&self, left: usize) -> Bitmap {
        let mut out = Bitmap::blank(self.width + left, self.height).expect("non-empty");
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.set(x + left, y, true);
                }
            }
        }
        out
    }

    pub fn complement(&self) -> Bitmap {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x, y, !self.get(x, y));
            }
        }
        out
    }
}

/// Renders a word with the built-in font: glyph cells 5 px wide separated by
/// a 1 px gap, 7 px tall.
pub fn render_word(word: &str) -> Result<Bitmap> {
    if word.is_empty() {
        return Err(Error::validation("cannot render an empty word"));
    }
    let glyphs = word
        .chars()
        .map(|c| {
            glyph_rows(c).ok_or_else(|| Error::validation(format!("no glyph for {c:?} in '{word}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let cell = GLYPH_WIDTH + GLYPH_GAP;
    let mut bm = Bitmap::blank(cell * glyphs.len() - GLYPH_GAP, GLYPH_HEIGHT)?;
    for (i, g) in glyphs.iter().enumerate() {
        for (y, row) in g.iter().enumerate() {
            for x in 0..GLYPH_WIDTH {
                if row >> x & 1 == 1 {
                    bm.set(i * cell + x, y, true);
                }
            }
        }
    }
    Ok(bm)
}

/// True when every character of `word` has a glyph.
pub fn renderable(word: &str) -> bool {
    !word.is_empty() && word.chars().all(|c| glyph_rows(c).is_some())
}

/// Flips each pixel independently with probability `p`.
pub fn add_noise<R: Rng + ?Sized>(b: &Bitmap, p: f64, rng: &mut R) -> Result<Bitmap> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::validation(format!("flip probability {p} outside [0,1]")));
    }
    let mut out = b.clone();
    for y in 0..b.height {
        for x in 0..b.width {
            if rng.random::<f64>() < p {
                out.set(x, y, !b.get(x, y));
            }
        }
    }
    Ok(out)
}

/// Pixel agreement between `a` and `b` placed at offset `(dx, dy)` relative to
/// `a`, over the bounding box of both footprints (background outside each).
pub fn agreement_at(a: &Bitmap, b: &Bitmap, dx: i32, dy: i32) -> f64 {
    let (dx, dy) = (dx as isize, dy as isize);
    let x0 = dx.min(0);
    let x1 = (a.width as isize).max(dx + b.width as isize);
    let y0 = dy.min(0);
    let y1 = (a.height as isize).max(dy + b.height as isize);
    let union_w = (x1 - x0) as usize;
    let words = union_w.div_ceil(64);
    let mut disagree = 0u64;
    for y in y0..y1 {
        let ra = a.row(y);
        let rb = b.row(y - dy);
        for k in 0..words {
            let off = x0 + 64 * k as isize;
            let wa = get64(ra, off);
            let wb = get64(rb, off - dx);
            disagree += (wa ^ wb).count_ones() as u64;
        }
    }
    let area = (union_w * (y1 - y0) as usize) as f64;
    (area - disagree as f64) / area
}

/// Best agreement over translations within the shift tolerance, with the
/// translation achieving it. Returns 0 when the dimensions differ by more than
/// the tolerance on either axis.
pub fn best_alignment(a: &Bitmap, b: &Bitmap) -> (f64, (i32, i32)) {
    let t = SHIFT_TOLERANCE as usize;
    if a.width.abs_diff(b.width) > t || a.height.abs_diff(b.height) > t {
        return (0.0, (0, 0));
    }
    let mut best = (f64::NEG_INFINITY, (0, 0));
    // zero shift first, so exact alignments report (0, 0)
    let mut shifts = vec![(0, 0)];
    for dy in -SHIFT_TOLERANCE..=SHIFT_TOLERANCE {
        for dx in -SHIFT_TOLERANCE..=SHIFT_TOLERANCE {
            if (dx, dy) != (0, 0) {
                shifts.push((dx, dy));
            }
        }
    }
    for (dx, dy) in shifts {
        let s = agreement_at(a, b, dx, dy);
        if s > best.0 {
            best = (s, (dx, dy));
        }
    }
    best
}

/// Translation-tolerant similarity in [0,1]; symmetric in its arguments.
pub fn similarity(a: &Bitmap, b: &Bitmap) -> f64 {
    best_alignment(a, b).0
}

/// Slides `small` over `big` (allowing it to overhang by the shift tolerance)
/// and returns the offset with the highest agreement inside `small`'s window.
pub fn subimage_similarity(small: &Bitmap, big: &Bitmap) -> Result<((i32, i32), f64)> {
    if small.width > big.width && small.height > big.height {
        return Err(Error::validation(format!(
            "{}x{} image cannot lie inside {}x{}",
            small.width, small.height, big.width, big.height
        )));
    }
    let t = SHIFT_TOLERANCE as isize;
    let x_hi = big.width as isize - small.width as isize + t;
    let y_hi = big.height as isize - small.height as isize + t;
    if x_hi < -t || y_hi < -t {
        return Err(Error::validation("no placement of the small image fits"));
    }
    let area = (small.width * small.height) as f64;
    let mut best = (f64::NEG_INFINITY, (0, 0));
    let mut order: Vec<(isize, isize)> = vec![(0, 0)];
    for oy in -t..=y_hi {
        for ox in -t..=x_hi {
            if (ox, oy) != (0, 0) {
                order.push((ox, oy));
            }
        }
    }
    for (ox, oy) in order {
        if ox > x_hi || oy > y_hi {
            continue;
        }
        let mut disagree = 0u64;
        for y in 0..small.height {
            let rs = small.row(y as isize);
            let rb = big.row(oy + y as isize);
            for (k, &ws) in rs.iter().enumerate() {
                let mut wb = get64(rb, ox + 64 * k as isize);
                let remaining = small.width - 64 * k;
                if remaining < 64 {
                    wb &= (1u64 << remaining) - 1;
                }
                disagree += (ws ^ wb).count_ones() as u64;
            }
        }
        let s = (area - disagree as f64) / area;
        if s > best.0 {
            best = (s, (ox as i32, oy as i32));
        }
    }
    Ok((best.1, best.0))
}

/// Writes a plain (P1) PBM image.
pub fn write_pbm<W: Write>(b: &Bitmap, mut out: W) -> Result<()> {
    writeln!(out, "P1")?;
    writeln!(out, "{} {}", b.width, b.height)?;
    for y in 0..b.height {
        let line: Vec<&str> = (0..b.width)
            .map(|x| if b.get(x, y) { "1" } else { "0" })
            .collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Reads one plain (P1) PBM image.
pub fn read_pbm<R: BufRead>(input: R) -> Result<Bitmap> {
    let mut tokens = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("");
        for tok in content.split_whitespace() {
            tokens.push((i + 1, tok.to_string()));
        }
    }
    relations::parse_pbm_tokens(&mut tokens.into_iter().peekable())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::rng_from_seed;

    #[test]
    fn render_is_deterministic_and_sized() {
        assert_eq!(render_word("a").unwrap(), render_word("a").unwrap());
        let form = render_word("form").unwrap();
        assert_eq!((form.width(), form.height()), (23, 7));
        assert!(render_word("").is_err());
        assert!(render_word("na\u{ef}ve").is_err());
        assert!(!renderable("x~"));
    }

    #[test]
    fn noise_extremes_and_rate() {
        let b = render_word("form").unwrap();
        let mut rng = rng_from_seed(0);
        assert_eq!(add_noise(&b, 0.0, &mut rng).unwrap(), b);
        assert_eq!(add_noise(&b, 1.0, &mut rng).unwrap(), b.complement());
        assert!(add_noise(&b, 1.5, &mut rng).is_err());
        let n = b.width() * b.height();
        let mut flipped = 0usize;
        for _ in 0..10 {
            let noisy = add_noise(&b, 0.05, &mut rng).unwrap();
            flipped += b.bits().iter().zip(noisy.bits()).filter(|(x, y)| **x != *y).count();
        }
        let frac = flipped as f64 / (10 * n) as f64;
        assert!((frac - 0.05).abs() <= 0.02, "flip fraction {frac}");
    }

    #[test]
    fn similarity_examples() {
        let form = render_word("form").unwrap();
        assert_eq!(similarity(&form, &form), 1.0);
        let comp = form.complement();
        assert_eq!(agreement_at(&form, &comp, 0, 0), 0.0);
        // shifting lines up glyph edges with their inverted neighbours, which
        // stays well under any match threshold
        let s = similarity(&form, &comp);
        assert!(s > 0.0 && s < 0.6, "{s}");
        let shifted = form.pad_left(1);
        // offsets place the second image in the first one's frame
        assert_eq!(best_alignment(&form, &shifted), (1.0, (-1, 0)));
        assert_eq!(similarity(&shifted, &form), 1.0);
        let farm = render_word("farm").unwrap();
        let s = similarity(&form, &farm);
        assert!(s < 1.0 && s > 0.9, "{s}");
        // different lengths are never compared
        assert_eq!(similarity(&form, &render_word("forms").unwrap()), 0.0);
    }

    #[test]
    fn similarity_is_symmetric_on_noisy_pairs() {
        let mut rng = rng_from_seed(4);
        for w in ["the", "form", "application", "a"] {
            let a = add_noise(&render_word(w).unwrap(), 0.08, &mut rng).unwrap();
            let b = add_noise(&render_word(w).unwrap(), 0.08, &mut rng).unwrap();
            assert!((similarity(&a, &b) - similarity(&b, &a)).abs() <= 1e-12);
        }
    }

    #[test]
    fn subimage_examples() {
        let is = render_word("is").unwrap();
        let this = render_word("This").unwrap();
        let (offset, score) = subimage_similarity(&is, &this).unwrap();
        assert_eq!(offset, (12, 0));
        assert_eq!(score, 1.0);
        assert_eq!(subimage_similarity(&this, &this).unwrap(), ((0, 0), 1.0));
        let (_, score) =
            subimage_similarity(&render_word("xx").unwrap(), &render_word("oooo").unwrap()).unwrap();
        assert!(score < 0.9, "{score}");
        let tall = Bitmap::blank(30, 12).unwrap();
        assert!(subimage_similarity(&tall, &this).is_err());
    }

    #[test]
    fn crop_and_bits() {
        let b = render_word("fill").unwrap();
        let left = b.crop_columns(0, 11).unwrap();
        assert_eq!(left, render_word("fi").unwrap());
        let right = b.crop_columns(b.width() - 11, 11).unwrap();
        assert_eq!(right, render_word("ll").unwrap());
        assert!(b.crop_columns(20, 10).is_err());
        let again = Bitmap::from_bits(b.width(), b.height(), &b.bits()).unwrap();
        assert_eq!(again, b);
        assert!(Bitmap::from_bits(3, 3, &[true; 8]).is_err());
    }

    #[test]
    fn wide_bitmaps_cross_word_boundaries() {
        let long = render_word("internationalization").unwrap();
        assert!(long.width() > 64);
        assert_eq!(similarity(&long, &long.pad_left(2)), 1.0);
        let tail = long.crop_columns(60, 40).unwrap();
        let (off, s) = subimage_similarity(&tail, &long).unwrap();
        assert_eq!((off, s), ((60, 0), 1.0));
    }

    #[test]
    fn pbm_round_trip() {
        let b = render_word("Ok!").unwrap();
        let mut buf = Vec::new();
        write_pbm(&b, &mut buf).unwrap();
        assert!(buf.starts_with(b"P1\n17 7\n"));
        assert_eq!(read_pbm(buf.as_slice()).unwrap(), b);
    }
}
