//! Run-length encoded binary masks.
//!
//! Runs are taken over the row-major flattened bitmap and alternate
//! background/foreground, always starting with a background run. A mask whose
//! first pixel is foreground therefore starts with a zero-length run.

use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major binary grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bitmap {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "bitmap must be non-empty, got {height}x{width}"
            )));
        }
        if bits.len() != height * width {
            return Err(Error::Dimension(format!(
                "bitmap has {} entries, expected {height}x{width}",
                bits.len()
            )));
        }
        Ok(Bitmap {
            height,
            width,
            bits,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![false; height * width])
    }

    /// Builds a bitmap from nested rows of 0/1 values.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut bits = Vec::with_capacity(height * width);
        for row in rows {
            if row.len() != width {
                return Err(Error::Dimension("ragged bitmap rows".into()));
            }
            for &v in row.iter() {
                match v {
                    0 => bits.push(false),
                    1 => bits.push(true),
                    other => {
                        return Err(Error::Dimension(format!(
                            "bitmap entries must be 0 or 1, got {other}"
                        )))
                    }
                }
            }
        }
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Axis-aligned inclusive pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RleMask {
    height: usize,
    width: usize,
    runs: Vec<u32>,
}

impl fmt::Debug for RleMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "RleMask({}x{}, [{}])",
            self.height,
            self.width,
            self.runs_csv()
        )
    }
}

impl RleMask {
    /// Validates a raw run list against the mask invariants.
    pub fn from_runs(height: usize, width: usize, runs: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "mask must be non-empty, got {height}x{width}"
            )));
        }
        if runs.is_empty() {
            return Err(Error::CorruptMask("run list is empty".into()));
        }
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        if total != (height * width) as u64 {
            return Err(Error::CorruptMask(format!(
                "runs sum to {total}, expected {height}x{width} = {}",
                height * width
            )));
        }
        if let Some(pos) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(Error::CorruptMask(format!(
                "zero-length run at position {}",
                pos + 1
            )));
        }
        Ok(RleMask {
            height,
            width,
            runs,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        RleMask {
            height,
            width,
            runs: vec![(height * width) as u32],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        RleMask {
            height,
            width,
            runs: vec![0, (height * width) as u32],
        }
    }

    pub fn encode(bitmap: &Bitmap) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut count: u32 = 0;
        for &b in bitmap.bits() {
            if b != current {
                runs.push(count);
                count = 0;
                current = b;
            }
            count += 1;
        }
        runs.push(count);
        RleMask {
            height: bitmap.height(),
            width: bitmap.width(),
            runs,
        }
    }

    /// Encodes a flat row-major slice where any non-zero entry is foreground.
    pub fn encode_slice(height: usize, width: usize, values: &[u8]) -> Result<Self> {
        let bitmap = Bitmap::new(height, width, values.iter().map(|&v| v != 0).collect())?;
        Ok(Self::encode(&bitmap))
    }

    pub fn decode(&self) -> Bitmap {
        let mut bits = Vec::with_capacity(self.height * self.width);
        let mut value = false;
        for &r in &self.runs {
            bits.extend(std::iter::repeat_n(value, r as usize));
            value = !value;
        }
        Bitmap {
            height: self.height,
            width: self.width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn runs_csv(&self) -> String {
        let parts: Vec<String> = self.runs.iter().map(|r| r.to_string()).collect();
        parts.join(",")
    }

    pub fn parse_csv(height: usize, width: usize, text: &str) -> Result<Self> {
        let runs = text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u32>()
                    .map_err(|e| Error::CorruptMask(format!("bad run '{s}': {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_runs(height, width, runs)
    }

    pub fn area(&self) -> usize {
        self.runs
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&r| r as usize)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Half-open `[start, end)` foreground intervals over the flat index.
    pub fn foreground_intervals(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut pos = 0usize;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = pos;
            pos += r as usize;
            (i % 2 == 1 && r > 0).then_some((start, pos))
        })
    }

    fn check_dims(&self, other: &RleMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "mask dimensions differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn intersection_area(&self, other: &RleMask) -> Result<usize> {
        self.check_dims(other)?;
        let a: Vec<(usize, usize)> = self.foreground_intervals().collect();
        let b: Vec<(usize, usize)> = other.foreground_intervals().collect();
        let (mut i, mut j, mut total) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi > lo {
                total += hi - lo;
            }
            if a[i].1 <= b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(total)
    }

    /// Intersection over union. Two empty masks agree perfectly (1.0).
    pub fn iou(&self, other: &RleMask) -> Result<f64> {
        let inter = self.intersection_area(other)?;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            return Ok(1.0);
        }
        Ok(inter as f64 / union as f64)
    }

    pub fn divergence(&self, alt: &RleMask) -> Result<f64> {
        Ok(1.0 - self.iou(alt)?)
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        let mut bbox: Option<BoundingBox> = None;
        for (start, end) in self.foreground_intervals() {
            let first_row = start / self.width;
            let last_row = (end - 1) / self.width;
            let (x_lo, x_hi) = if first_row == last_row {
                (start % self.width, (end - 1) % self.width)
            } else {
                (0, self.width - 1)
            };
            let b = bbox.get_or_insert(BoundingBox {
                x_min: x_lo,
                y_min: first_row,
                x_max: x_hi,
                y_max: last_row,
            });
            b.x_min = b.x_min.min(x_lo);
            b.x_max = b.x_max.max(x_hi);
            b.y_min = b.y_min.min(first_row);
            b.y_max = b.y_max.max(last_row);
        }
        bbox
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block(h: usize, w: usize, r0: usize, c0: usize, size: usize) -> RleMask {
        let mut bm = Bitmap::zeros(h, w).unwrap();
        for r in r0..r0 + size {
            for c in c0..c0 + size {
                bm.set(r, c, true);
            }
        }
        RleMask::encode(&bm)
    }

    #[test]
    fn encode_examples() {
        let zeros = Bitmap::from_rows(&[&[0, 0], &[0, 0]]).unwrap();
        assert_eq!(RleMask::encode(&zeros).runs(), &[4]);
        let ones = Bitmap::from_rows(&[&[1, 1], &[1, 1]]).unwrap();
        assert_eq!(RleMask::encode(&ones).runs(), &[0, 4]);
        let mixed = Bitmap::from_rows(&[&[0, 1, 1], &[1, 0, 0]]).unwrap();
        assert_eq!(RleMask::encode(&mixed).runs(), &[1, 3, 2]);
    }

    #[test]
    fn encode_rejects_empty_bitmap() {
        assert!(matches!(
            Bitmap::new(0, 3, vec![]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(Bitmap::from_rows(&[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn decode_examples() {
        let m = RleMask::from_runs(2, 2, vec![4]).unwrap();
        assert_eq!(m.decode().count_ones(), 0);
        let m = RleMask::from_runs(2, 2, vec![0, 4]).unwrap();
        assert_eq!(m.decode().count_ones(), 4);
        let m = RleMask::from_runs(2, 3, vec![1, 3, 2]).unwrap();
        assert_eq!(
            m.decode(),
            Bitmap::from_rows(&[&[0, 1, 1], &[1, 0, 0]]).unwrap()
        );
    }

    #[test]
    fn corrupt_runs_rejected() {
        assert!(matches!(
            RleMask::from_runs(2, 3, vec![1, 3, 3]),
            Err(Error::CorruptMask(_))
        ));
        assert!(matches!(
            RleMask::from_runs(2, 2, vec![2, 0, 2]),
            Err(Error::CorruptMask(_))
        ));
        assert!(RleMask::parse_csv(2, 3, "1,x,2").is_err());
    }

    #[test]
    fn iou_examples() {
        let a = block(4, 4, 0, 0, 2);
        let b = block(4, 4, 0, 1, 2);
        assert_eq!(a.iou(&a).unwrap(), 1.0);
        assert_eq!(a.iou(&block(4, 4, 2, 2, 2)).unwrap(), 0.0);
        assert!((a.iou(&b).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert!((a.divergence(&b).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(a.divergence(&a).unwrap(), 0.0);
        assert_eq!(a.divergence(&block(4, 4, 2, 2, 2)).unwrap(), 1.0);
        assert!(a.iou(&RleMask::empty(4, 5)).is_err());
    }

    #[test]
    fn iou_empty_conventions() {
        let e = RleMask::empty(3, 3);
        assert_eq!(e.iou(&e).unwrap(), 1.0);
        assert_eq!(e.iou(&RleMask::full(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn area_examples() {
        assert_eq!(RleMask::empty(8, 8).area(), 0);
        assert_eq!(RleMask::full(8, 8).area(), 64);
        assert_eq!(RleMask::from_runs(2, 3, vec![1, 3, 2]).unwrap().area(), 3);
    }

    #[test]
    fn bbox_examples() {
        assert_eq!(RleMask::empty(6, 6).bbox(), None);
        let mut bm = Bitmap::zeros(6, 8).unwrap();
        bm.set(2, 5, true);
        let single = RleMask::encode(&bm).bbox().unwrap();
        assert_eq!(
            single,
            BoundingBox {
                x_min: 5,
                y_min: 2,
                x_max: 5,
                y_max: 2
            }
        );
        let mut bm = Bitmap::zeros(6, 8).unwrap();
        bm.set(1, 1, true);
        bm.set(3, 4, true);
        let pair = RleMask::encode(&bm).bbox().unwrap();
        assert_eq!(
            pair,
            BoundingBox {
                x_min: 1,
                y_min: 1,
                x_max: 4,
                y_max: 3
            }
        );
    }

    fn arb_bitmap() -> impl Strategy<Value = Bitmap> {
        (1usize..=32, 1usize..=32).prop_flat_map(|(h, w)| {
            prop::collection::vec(any::<bool>(), h * w)
                .prop_map(move |bits| Bitmap::new(h, w, bits).unwrap())
        })
    }

    fn arb_pair() -> impl Strategy<Value = (Bitmap, Bitmap)> {
        (1usize..=16, 1usize..=16).prop_flat_map(|(h, w)| {
            (
                prop::collection::vec(any::<bool>(), h * w),
                prop::collection::vec(any::<bool>(), h * w),
            )
                .prop_map(move |(a, b)| {
                    (Bitmap::new(h, w, a).unwrap(), Bitmap::new(h, w, b).unwrap())
                })
        })
    }

    fn brute_counts(a: &Bitmap, b: &Bitmap) -> (usize, usize) {
        let inter = a
            .bits()
            .iter()
            .zip(b.bits())
            .filter(|(x, y)| **x && **y)
            .count();
        let union = a
            .bits()
            .iter()
            .zip(b.bits())
            .filter(|(x, y)| **x || **y)
            .count();
        (inter, union)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn round_trip(bm in arb_bitmap()) {
            let m = RleMask::encode(&bm);
            prop_assert_eq!(m.decode(), bm);
            let again = RleMask::from_runs(m.height(), m.width(), m.runs().to_vec()).unwrap();
            prop_assert_eq!(again, m);
        }
    }

    proptest! {
        #[test]
        fn iou_matches_pixel_count((a, b) in arb_pair()) {
            let (ma, mb) = (RleMask::encode(&a), RleMask::encode(&b));
            let (inter, union) = brute_counts(&a, &b);
            let brute = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            let fast = ma.iou(&mb).unwrap();
            prop_assert!((fast - brute).abs() < 1e-12);
            prop_assert_eq!(fast, mb.iou(&ma).unwrap());
            prop_assert_eq!(ma.intersection_area(&mb).unwrap() + union, ma.area() + mb.area());
            if ma.area() > 0 {
                prop_assert_eq!(ma.iou(&ma).unwrap(), 1.0);
                prop_assert_eq!(ma.iou(&RleMask::empty(ma.height(), ma.width())).unwrap(), 0.0);
            }
        }

        #[test]
        fn bbox_is_tight(bm in arb_bitmap()) {
            let m = RleMask::encode(&bm);
            let mut expected: Option<(usize, usize, usize, usize)> = None;
            for r in 0..bm.height() {
                for c in 0..bm.width() {
                    if bm.get(r, c) {
                        let e = expected.get_or_insert((c, r, c, r));
                        e.0 = e.0.min(c);
                        e.1 = e.1.min(r);
                        e.2 = e.2.max(c);
                        e.3 = e.3.max(r);
                    }
                }
            }
            let got = m.bbox().map(|b| (b.x_min, b.y_min, b.x_max, b.y_max));
            prop_assert_eq!(got, expected);
        }
    }
}
