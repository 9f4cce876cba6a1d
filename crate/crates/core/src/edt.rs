//! Exact squared Euclidean distance transform.
//!
//! Two separable passes in integer arithmetic (Meijster, Roerdink and Hesselink):
//! a column scan for the vertical distance to the nearest foreground pixel, then
//! a per-row lower envelope of parabolas. Every output is the exact squared
//! distance, so square roots taken downstream match a brute-force search bit
//! for bit.

use crate::mask::BinaryMask;

/// For every pixel, the squared Euclidean distance to the nearest foreground
/// pixel of `mask`, row-major. Returns `None` for an empty mask.
pub fn squared_distance_to_foreground(mask: &BinaryMask) -> Option<Vec<i64>> {
    if mask.is_empty() {
        return None;
    }
    let (width, height) = mask.dims();
    let inf = (width + height) as i64;

    // Vertical pass, stored column-major in g[x * height + y].
    let mut g = vec![0i64; width * height];
    for x in 0..width {
        let col = &mut g[x * height..(x + 1) * height];
        col[0] = if mask.get(0, x) { 0 } else { inf };
        for y in 1..height {
            col[y] = if mask.get(y, x) { 0 } else { (col[y - 1] + 1).min(inf) };
        }
        for y in (0..height - 1).rev() {
            if col[y + 1] < col[y] {
                col[y] = col[y + 1] + 1;
            }
        }
    }

    let mut out = vec![0i64; width * height];
    let mut s = vec![0usize; width];
    let mut t = vec![0i64; width];
    let mut gy = vec![0i64; width];
    for y in 0..height {
        for x in 0..width {
            gy[x] = g[x * height + y];
        }
        let f = |x: i64, i: usize| (x - i as i64).pow(2) + gy[i] * gy[i];
        let sep = |i: usize, u: usize| {
            let (ii, uu) = (i as i64, u as i64);
            (uu * uu - ii * ii + gy[u] * gy[u] - gy[i] * gy[i]).div_euclid(2 * (uu - ii))
        };

        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..width {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let w = 1 + sep(s[q as usize], u);
                if w < width as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = w;
                }
            }
        }
        for u in (0..width).rev() {
            out[y * width + u] = f(u as i64, s[q as usize]);
            if u as i64 == t[q as usize] {
                q -= 1;
            }
        }
    }
    Some(out)
}
