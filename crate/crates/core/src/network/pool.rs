use crate::network::conv::FeatureMap;
use crate::tensor::{Matrix, Real};

/// Number of pooling windows over `width` positions. The final partial
/// window is kept; windows never start past the end of the input.
pub fn pool_width(width: usize, pool: usize, stride: usize) -> usize {
    assert!(pool >= 1 && stride >= 1, "pool and stride must be positive");
    if width <= pool {
        return 1;
    }
    let by_formula = (width - pool).div_ceil(stride) + 1;
    by_formula.min(width.div_ceil(stride))
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    /// Winning input column per `(filter, output column)`, row-major.
    pub argmax: Vec<usize>,
    pub out_valid: usize,
    pub in_width: usize,
}

/// Temporal max-pooling over every column of the map.
pub fn maxpool<T: Real>(fm: &FeatureMap<T>, pool: usize, stride: usize) -> FeatureMap<T> {
    maxpool_masked(fm, pool, stride, fm.width()).0
}

/// Pools only over the first `valid` input columns. Output columns whose
/// window starts at or beyond `valid` are left at zero.
pub fn maxpool_masked<T: Real>(fm: &FeatureMap<T>, pool: usize, stride: usize, valid: usize) -> (FeatureMap<T>, PoolCache) {
    let (f, width) = fm.values.shape();
    assert!(valid >= 1 && valid <= width);
    let out_width = pool_width(width, pool, stride);
    let out_valid = pool_width(valid, pool, stride);
    let mut values = Matrix::zeros(f, out_width);
    let mut argmax = vec![0; f * out_valid];
    for fi in 0..f {
        let row = fm.values.row(fi);
        for j in 0..out_valid {
            let start = j * stride;
            let end = (start + pool).min(valid);
            let mut best = start;
            for i in start + 1..end {
                if row[i] > row[best] {
                    best = i;
                }
            }
            argmax[fi * out_valid + j] = best;
            values.set(fi, j, row[best]);
        }
    }
    (
        FeatureMap { values },
        PoolCache {
            argmax,
            out_valid,
            in_width: width,
        },
    )
}

/// Routes each output gradient to the input position that won the max.
pub fn maxpool_backward<T: Real>(cache: &PoolCache, d_out: &Matrix<T>) -> Matrix<T> {
    let f = d_out.rows();
    let mut d_in = Matrix::zeros(f, cache.in_width);
    for fi in 0..f {
        for j in 0..cache.out_valid {
            let src = cache.argmax[fi * cache.out_valid + j];
            let cur = d_in.get(fi, src);
            d_in.set(fi, src, cur + d_out.get(fi, j));
        }
    }
    d_in
}
