//! Locally-adaptive vector quantization.
//!
//! Each vector is quantized on its own uniform grid: components are centered
//! by the dataset mean, then mapped to `b1`-bit codes over the per-vector
//! range `[lo, hi]`. An optional second level spends `b2` more bits per
//! component on the first-level residual, which lives in
//! `[-delta/2, delta/2]` by construction. One-level LVQ8/LVQ4 and two-level
//! LVQ4x8/LVQ8x8 all come out of the same code path.
//!
//! Packing is part of the on-disk index format: 4-bit codes go two per byte
//! with the low nibble first, 8-bit codes one per byte.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Dataset-level quantization parameters: the mean subtracted before
/// encoding and the bit widths of the two levels.
#[derive(Debug, Clone, PartialEq)]
pub struct LvqCodec {
    dim: usize,
    mean: Vec<f64>,
    b1: u8,
    b2: u8,
}

/// Per-vector quantization output: packed codes plus the scalars that place
/// the grid. `delta == 0` marks a constant residual vector; every code is
/// then zero and decoding is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct LvqCode {
    pub lo: f64,
    pub delta: f64,
    pub codes1: Vec<u8>,
    pub codes2: Option<Vec<u8>>,
}

/// Borrowed view of one vector's codes, shared by [`LvqCode`] and the packed
/// [`LvqStore`] rows.
#[derive(Debug, Clone, Copy)]
pub struct LvqCodeRef<'a> {
    pub lo: f64,
    pub delta: f64,
    pub codes1: &'a [u8],
    pub codes2: Option<&'a [u8]>,
}

impl LvqCode {
    pub fn as_ref(&self) -> LvqCodeRef<'_> {
        LvqCodeRef {
            lo: self.lo,
            delta: self.delta,
            codes1: &self.codes1,
            codes2: self.codes2.as_deref(),
        }
    }
}

/// Per-query constants reused across many quantized inner products: the sum
/// of the query components and the query-mean dot product.
#[derive(Debug, Clone, Copy)]
pub struct LvqQueryPrep {
    pub sum_q: f64,
    pub dot_mean: f64,
}

fn validate_bits(b1: u8, b2: u8) -> Result<()> {
    if b1 != 4 && b1 != 8 {
        return Err(Error::invalid(format!("b1 must be 4 or 8, got {b1}")));
    }
    if b2 != 0 && b2 != 8 {
        return Err(Error::invalid(format!("b2 must be 0 or 8, got {b2}")));
    }
    Ok(())
}

/// Bytes needed for `dim` first-level codes at `b1` bits each.
pub fn packed_len(dim: usize, b1: u8) -> usize {
    match b1 {
        4 => dim.div_ceil(2),
        _ => dim,
    }
}

fn pack_code(codes: &mut [u8], b1: u8, j: usize, value: u32) {
    match b1 {
        4 => {
            let byte = &mut codes[j / 2];
            if j % 2 == 0 {
                *byte = (*byte & 0xf0) | (value as u8 & 0x0f);
            } else {
                *byte = (*byte & 0x0f) | ((value as u8 & 0x0f) << 4);
            }
        }
        _ => codes[j] = value as u8,
    }
}

#[inline]
fn unpack_code(codes: &[u8], b1: u8, j: usize) -> u32 {
    match b1 {
        4 => {
            let byte = codes[j / 2];
            if j % 2 == 0 {
                (byte & 0x0f) as u32
            } else {
                (byte >> 4) as u32
            }
        }
        _ => codes[j] as u32,
    }
}

impl LvqCodec {
    /// Fits a codec to a dataset: records the column mean, the bit widths,
    /// and the dimensionality.
    pub fn fit(vectors: ArrayView2<f32>, b1: u8, b2: u8) -> Result<Self> {
        validate_bits(b1, b2)?;
        let (n, dim) = (vectors.nrows(), vectors.ncols());
        if n == 0 || dim == 0 {
            return Err(Error::invalid("codec fit requires a non-empty dataset"));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite component in codec input"));
        }
        let mut mean = vec![0.0f64; dim];
        for row in vectors.rows() {
            for (m, &v) in mean.iter_mut().zip(row.iter()) {
                *m += v as f64;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        Ok(LvqCodec { dim, mean, b1, b2 })
    }

    /// Builds a codec from stored parts (persistence path).
    pub fn from_parts(mean: Vec<f64>, b1: u8, b2: u8) -> Result<Self> {
        validate_bits(b1, b2)?;
        if mean.is_empty() || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("codec mean must be non-empty and finite"));
        }
        Ok(LvqCodec {
            dim: mean.len(),
            mean,
            b1,
            b2,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn b1(&self) -> u8 {
        self.b1
    }

    pub fn b2(&self) -> u8 {
        self.b2
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Quantizes one vector. The residual `r = x - mean` is mapped to
    /// `round((r - lo) / delta)` with half-away-from-zero rounding, clamped
    /// into the code range; when `b2 > 0` the leftover error is quantized
    /// again over `[-delta/2, delta/2]` with midpoint reconstruction.
    pub fn encode(&self, x: &[f32]) -> Result<LvqCode> {
        if x.len() != self.dim {
            return Err(Error::shape(format!("vector of length {}", self.dim), format!("{}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite component in encode input"));
        }
        let levels1 = (1u32 << self.b1) - 1;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in 0..self.dim {
            let r = x[j] as f64 - self.mean[j];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let delta = if hi > lo { (hi - lo) / levels1 as f64 } else { 0.0 };

        let mut codes1 = vec![0u8; packed_len(self.dim, self.b1)];
        let mut codes2 = if self.b2 > 0 { Some(vec![0u8; self.dim]) } else { None };
        if delta > 0.0 {
            let levels2 = 1u32 << self.b2;
            let cell = delta / levels2 as f64;
            for j in 0..self.dim {
                let r = x[j] as f64 - self.mean[j];
                let scaled = (r - lo) / delta;
                let c1 = (scaled.round().max(0.0) as u32).min(levels1);
                pack_code(&mut codes1, self.b1, j, c1);
                if let Some(c2s) = codes2.as_mut() {
                    let residual = r - (lo + c1 as f64 * delta);
                    let idx = ((residual + delta / 2.0) / cell).floor();
                    let c2 = (idx.max(0.0) as u32).min(levels2 - 1);
                    c2s[j] = c2 as u8;
                }
            }
        }
        Ok(LvqCode {
            lo,
            delta,
            codes1,
            codes2,
        })
    }

    /// Reconst. `mean + lo + codes1 * delta` plus the second-level midpoint
    /// when present.
    pub fn decode(&self, code: LvqCodeRef<'_>) -> Result<Vec<f64>> {
        self.check_code(&code)?;
        let mut out = vec![0.0f64; self.dim];
        self.decode_each(code, |j, v| out[j] = v);
        Ok(out)
    }

    fn check_code(&self, code: &LvqCodeRef<'_>) -> Result<()> {
        if code.codes1.len() != packed_len(self.dim, self.b1) {
            return Err(Error::shape(
                format!("{} packed bytes", packed_len(self.dim, self.b1)),
                format!("{}", code.codes1.len()),
            ));
        }
        match (self.b2, code.codes2) {
            (0, None) => Ok(()),
            (8, Some(c2)) if c2.len() == self.dim => Ok(()),
            _ => Err(Error::shape(
                format!("second-level codes for b2 = {}", self.b2),
                "mismatched code".to_string(),
            )),
        }
    }

    fn decode_each(&self, code: LvqCodeRef<'_>, mut sink: impl FnMut(usize, f64)) {
        let levels2 = 1u32 << self.b2;
        let cell = code.delta / levels2 as f64;
        for j in 0..self.dim {
            let c1 = unpack_code(code.codes1, self.b1, j);
            let mut v = self.mean[j] + code.lo + c1 as f64 * code.delta;
            if let Some(c2s) = code.codes2 {
                v += -code.delta / 2.0 + (c2s[j] as f64 + 0.5) * cell;
            }
            sink(j, v);
        }
    }

    /// Inner product of `q` with a decoded vector, computed on the packed
    /// codes without materializing the vector:
    /// `<q, mean> + lo * Σq + delta * Σ q_j c1_j` plus the second-level term.
    pub fn inner_product(&self, code: LvqCodeRef<'_>, q: &[f32]) -> Result<f64> {
        if q.len() != self.dim {
            return Err(Error::shape(format!("query of length {}", self.dim), format!("{}", q.len())));
        }
        self.check_code(&code)?;
        let prep = self.prepare_query(q);
        Ok(self.inner_product_prepared(code, q, &prep))
    }

    /// Precomputes the per-query constants shared by every inner product.
    pub fn prepare_query(&self, q: &[f32]) -> LvqQueryPrep {
        let mut sum_q = 0.0f64;
        let mut dot_mean = 0.0f64;
        for j in 0..self.dim {
            sum_q += q[j] as f64;
            dot_mean += q[j] as f64 * self.mean[j];
        }
        LvqQueryPrep { sum_q, dot_mean }
    }

    /// Inner product with precomputed query constants; code validity is the
    /// caller's responsibility (hot path).
    pub fn inner_product_prepared(&self, code: LvqCodeRef<'_>, q: &[f32], prep: &LvqQueryPrep) -> f64 {
        let mut dot1 = 0.0f64;
        for j in 0..self.dim {
            dot1 += q[j] as f64 * unpack_code(code.codes1, self.b1, j) as f64;
        }
        let mut ip = prep.dot_mean + code.lo * prep.sum_q + code.delta * dot1;
        if let Some(c2s) = code.codes2 {
            let mut dot2 = 0.0f64;
            for j in 0..self.dim {
                dot2 += q[j] as f64 * c2s[j] as f64;
            }
            let cell = code.delta / (1u32 << self.b2) as f64;
            ip += -code.delta / 2.0 * prep.sum_q + cell * (dot2 + 0.5 * prep.sum_q);
        }
        ip
    }
}

/// Packed column store of LVQ codes for `len` vectors, all sharing one codec.
#[derive(Debug, Clone, PartialEq)]
pub struct LvqStore {
    codec: LvqCodec,
    len: usize,
    lo: Vec<f64>,
    delta: Vec<f64>,
    codes1: Vec<u8>,
    codes2: Option<Vec<u8>>,
}

impl LvqStore {
    /// Fits a codec on `vectors` and encodes every row.
    pub fn encode_all(vectors: ArrayView2<f32>, b1: u8, b2: u8) -> Result<Self> {
        let codec = LvqCodec::fit(vectors, b1, b2)?;
        Self::encode_with(codec, vectors)
    }

    /// Encodes every row with an existing codec.
    pub fn encode_with(codec: LvqCodec, vectors: ArrayView2<f32>) -> Result<Self> {
        if vectors.ncols() != codec.dim() {
            return Err(Error::shape(
                format!("vectors of dimension {}", codec.dim()),
                format!("{}", vectors.ncols()),
            ));
        }
        let n = vectors.nrows();
        let stride1 = packed_len(codec.dim(), codec.b1());
        let mut lo = Vec::with_capacity(n);
        let mut delta = Vec::with_capacity(n);
        let mut codes1 = Vec::with_capacity(n * stride1);
        let mut codes2 = if codec.b2() > 0 {
            Some(Vec::with_capacity(n * codec.dim()))
        } else {
            None
        };
        let mut row_buf = vec![0.0f32; codec.dim()];
        for row in vectors.rows() {
            for (dst, &src) in row_buf.iter_mut().zip(row.iter()) {
                *dst = src;
            }
            let code = codec.encode(&row_buf)?;
            lo.push(code.lo);
            delta.push(code.delta);
            codes1.extend_from_slice(&code.codes1);
            if let (Some(all), Some(one)) = (codes2.as_mut(), code.codes2.as_ref()) {
                all.extend_from_slice(one);
            }
        }
        Ok(LvqStore {
            codec,
            len: n,
            lo,
            delta,
            codes1,
            codes2,
        })
    }

    /// Reassembles a store from persisted arrays.
    pub fn from_parts(
        codec: LvqCodec,
        lo: Vec<f64>,
        delta: Vec<f64>,
        codes1: Vec<u8>,
        codes2: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = lo.len();
        let stride1 = packed_len(codec.dim(), codec.b1());
        if delta.len() != n || codes1.len() != n * stride1 {
            return Err(Error::invalid("lvq store arrays disagree on vector count"));
        }
        match (codec.b2(), &codes2) {
            (0, None) => {}
            (8, Some(c2)) if c2.len() == n * codec.dim() => {}
            _ => return Err(Error::invalid("lvq store second-level codes inconsistent")),
        }
        Ok(LvqStore {
            codec,
            len: n,
            lo,
            delta,
            codes1,
            codes2,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.codec.dim()
    }

    pub fn codec(&self) -> &LvqCodec {
        &self.codec
    }

    pub fn scalars(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.delta)
    }

    pub fn packed_codes(&self) -> (&[u8], Option<&[u8]>) {
        (&self.codes1, self.codes2.as_deref())
    }

    pub fn code_view(&self, id: u32) -> LvqCodeRef<'_> {
        let i = id as usize;
        let stride1 = packed_len(self.dim(), self.codec.b1());
        LvqCodeRef {
            lo: self.lo[i],
            delta: self.delta[i],
            codes1: &self.codes1[i * stride1..(i + 1) * stride1],
            codes2: self
                .codes2
                .as_deref()
                .map(|c| &c[i * self.dim()..(i + 1) * self.dim()]),
        }
    }

    pub fn decode_into(&self, id: u32, out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.dim());
        self.codec
            .decode_each(self.code_view(id), |j, v| out[j] = v as f32);
    }

    /// Quantized inner product against row `id` with prepared query constants.
    pub fn inner_product(&self, prep: &LvqQueryPrep, q: &[f32], id: u32) -> f64 {
        self.codec.inner_product_prepared(self.code_view(id), q, prep)
    }

    /// Squared Euclidean distance between `q` and the decoded row `id`,
    /// accumulated on the fly.
    pub fn l2sq(&self, q: &[f32], id: u32) -> f64 {
        let mut acc = 0.0f64;
        self.codec.decode_each(self.code_view(id), |j, v| {
            let d = q[j] as f64 - v;
            acc += d * d;
        });
        acc
    }
}
