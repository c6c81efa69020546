use std::fmt;

use crate::error::{Error, Result};

/// Contiguous, 1-indexed, inclusive site interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Window {
    lo: usize,
    hi: usize,
}

impl Window {
    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if lo == 0 || lo > hi {
            return Err(Error::Geometry(format!("invalid window [{lo},{hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn site(j: usize) -> Result<Self> {
        Self::new(j, j)
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, other: &Window) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn contains_site(&self, j: usize) -> bool {
        self.lo <= j && j <= self.hi
    }

    pub fn intersects(&self, other: &Window) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn hull(&self, other: &Window) -> Window {
        Window {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Grows by `l` sites on each side, clipped to `[1, n]`.
    pub fn extend(&self, l: usize, n: usize) -> Window {
        Window {
            lo: self.lo.saturating_sub(l).max(1),
            hi: (self.hi + l).min(n.max(self.hi)),
        }
    }

    /// Separation `c - b` between `[a,b]` and `[c,d]` when disjoint.
    pub fn distance(&self, other: &Window) -> Option<usize> {
        if self.intersects(other) {
            None
        } else if self.hi < other.lo {
            Some(other.lo - self.hi)
        } else {
            Some(self.lo - other.hi)
        }
    }

    pub fn sites(&self) -> std::ops::RangeInclusive<usize> {
        self.lo..=self.hi
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.lo, self.hi)
    }
}

/// Union of disjoint windows, kept sorted and merged.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SiteSet {
    parts: Vec<Window>,
}

impl SiteSet {
    pub fn new(windows: impl IntoIterator<Item = Window>) -> Self {
        let mut ws: Vec<Window> = windows.into_iter().collect();
        ws.sort();
        let mut parts: Vec<Window> = Vec::with_capacity(ws.len());
        for w in ws {
            match parts.last_mut() {
                Some(last) if w.lo <= last.hi + 1 => last.hi = last.hi.max(w.hi),
                _ => parts.push(w),
            }
        }
        Self { parts }
    }

    pub fn parts(&self) -> &[Window] {
        &self.parts
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn contains_site(&self, j: usize) -> bool {
        self.parts.iter().any(|w| w.contains_site(j))
    }

    pub fn site_count(&self) -> usize {
        self.parts.iter().map(Window::len).sum()
    }

    /// Every part grown by `l` on both sides (clipped to `[1, n]`), then merged.
    pub fn extend(&self, l: usize, n: usize) -> SiteSet {
        SiteSet::new(self.parts.iter().map(|w| w.extend(l, n)))
    }

    pub fn hull(&self) -> Option<Window> {
        Some(Window {
            lo: self.parts.first()?.lo,
            hi: self.parts.last()?.hi,
        })
    }
}

impl From<Window> for SiteSet {
    fn from(w: Window) -> Self {
        SiteSet { parts: vec![w] }
    }
}

impl fmt::Display for SiteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.parts.iter().map(|w| w.to_string()).collect();
        write!(f, "{{{}}}", parts.join(" ∪ "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extend_clips_to_chain() {
        let w = Window::new(4, 5).unwrap();
        assert_eq!(w.extend(3, 10), Window::new(1, 8).unwrap());
        assert_eq!(Window::new(1, 2).unwrap().extend(3, 10), Window::new(1, 5).unwrap());
        assert_eq!(w.extend(0, 10), w);
    }

    #[test]
    fn distance_between_disjoint_windows() {
        let a = Window::site(2).unwrap();
        let b = Window::site(5).unwrap();
        assert_eq!(a.distance(&b), Some(3));
        assert_eq!(b.distance(&a), Some(3));
        assert_eq!(a.distance(&Window::new(1, 3).unwrap()), None);
    }

    #[test]
    fn site_set_merges_overlaps_and_neighbours() {
        let s = SiteSet::new([
            Window::new(6, 7).unwrap(),
            Window::new(2, 3).unwrap(),
            Window::new(4, 4).unwrap(),
        ]);
        assert_eq!(s.parts(), &[Window::new(2, 4).unwrap(), Window::new(6, 7).unwrap()]);
        assert_eq!(s.extend(1, 7).parts(), &[Window::new(1, 7).unwrap()]);
    }

    #[test]
    fn rejects_empty_or_zero_based() {
        assert!(Window::new(0, 2).is_err());
        assert!(Window::new(3, 2).is_err());
    }
}
