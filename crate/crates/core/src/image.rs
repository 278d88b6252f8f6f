//! Float RGB image, row-major with the top row first.

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        Image {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let i = self.idx(x, y);
        self.data[i] = c;
    }

    /// Mean absolute error over all channels. Panics on size mismatch.
    pub fn mae(&self, other: &Image) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let n = (self.data.len() * 3) as f64;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs())
            .sum::<f64>()
            / n
    }

    /// Box-filter downsample by an integer factor. Requires dimensions to be
    /// exact multiples of `n`.
    pub fn downsample(&self, n: usize) -> Image {
        assert!(n > 0 && self.width % n == 0 && self.height % n == 0);
        let (w, h) = (self.width / n, self.height / n);
        let mut out = Image::new(w, h);
        let inv = 1.0 / (n * n) as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for sy in 0..n {
                    for sx in 0..n {
                        let c = self.get(x * n + sx, y * n + sy);
                        acc[0] += c[0];
                        acc[1] += c[1];
                        acc[2] += c[2];
                    }
                }
                out.set(x, y, [acc[0] * inv, acc[1] * inv, acc[2] * inv]);
            }
        }
        out
    }

    /// Quantizes to 8-bit RGB bytes (clamped, round-half-up, no transfer
    /// function), row-major top-first: the PNG layout.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 3);
        for px in &self.data {
            for c in px {
                out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }
}
