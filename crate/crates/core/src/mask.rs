use crate::error::Result;
use crate::grid::Grid;

/// Per-pixel static/dynamic labels: 1 = static, 0 = dynamic.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticMask(Grid<u8>);

/// Segmentation output shares the static-mask encoding.
pub type SegmentMask = StaticMask;

impl StaticMask {
    pub fn all_static(width: usize, height: usize) -> Self {
        Self(Grid::new(width, height, 1))
    }

    pub fn all_dynamic(width: usize, height: usize) -> Self {
        Self(Grid::new(width, height, 0))
    }

    /// Any nonzero value is treated as static.
    pub fn from_grid(values: Grid<u8>) -> Self {
        Self(values.map(|&v| u8::from(v != 0)))
    }

    pub fn from_fn(width: usize, height: usize, mut is_static: impl FnMut(usize, usize) -> bool) -> Self {
        Self(Grid::from_fn(width, height, |x, y| u8::from(is_static(x, y))))
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.0.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn is_static(&self, x: usize, y: usize) -> bool {
        *self.0.get(x, y) != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, is_static: bool) {
        self.0.set(x, y, u8::from(is_static));
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn static_count(&self) -> usize {
        self.0.as_slice().iter().filter(|&&v| v != 0).count()
    }

    pub fn dynamic_count(&self) -> usize {
        self.0.len() - self.static_count()
    }

    pub fn static_fraction(&self) -> f64 {
        self.static_count() as f64 / self.0.len() as f64
    }

    /// Pixel is static only when static in both masks (dynamic sets are unioned).
    pub fn intersect_static(&self, other: &StaticMask) -> Result<StaticMask> {
        self.0.ensure_same_dims(&other.0)?;
        let data = self
            .0
            .as_slice()
            .iter()
            .zip(other.0.as_slice())
            .map(|(&a, &b)| a & b)
            .collect();
        Ok(Self(Grid::from_vec(self.width(), self.height(), data)))
    }

    /// Grows the dynamic region by `radius` pixels (Chebyshev distance).
    pub fn dilate_dynamic(&self, radius: usize) -> StaticMask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = self.dims();
        StaticMask::from_fn(w, h, |x, y| {
            let x0 = x.saturating_sub(radius);
            let y0 = y.saturating_sub(radius);
            let x1 = (x + radius).min(w - 1);
            let y1 = (y + radius).min(h - 1);
            (y0..=y1).all(|yy| (x0..=x1).all(|xx| self.is_static(xx, yy)))
        })
    }

    /// Encodes as 8-bit grayscale bytes (0 = dynamic, 255 = static).
    pub fn to_luma8(&self) -> Vec<u8> {
        self.0.as_slice().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilation_grows_dynamic_region() {
        let mut m = StaticMask::all_static(7, 7);
        m.set(3, 3, false);
        let d = m.dilate_dynamic(1);
        assert_eq!(d.dynamic_count(), 9);
        assert!(!d.is_static(2, 2) && d.is_static(1, 1));
    }

    #[test]
    fn intersect_rejects_mismatched_dims() {
        let a = StaticMask::all_static(3, 3);
        let b = StaticMask::all_static(4, 3);
        assert!(a.intersect_static(&b).is_err());
    }
}
