//! Unscrambled Sobol sequence with Joe–Kuo direction numbers.
//!
//! Points are enumerated in Gray-code order, so the first point is the
//! origin and dimension 1 runs 0, 1/2, 3/4, 1/4, …

use std::sync::OnceLock;

use super::SamplingError;
use crate::power::PerturbationVector;

const BITS: usize = 32;
/// Largest supported dimension.
pub const MAX_DIM: usize = 1024;

static TABLE: OnceLock<Vec<[u32; BITS]>> = OnceLock::new();

fn parse_row(line: &str) -> [u32; BITS] {
    let mut fields = line.split_whitespace().map(|f| f.parse::<u32>().expect("direction table is well formed"));
    let poly = fields.next().expect("polynomial");
    let m: Vec<u32> = fields.collect();
    let s = (31 - poly.leading_zeros()) as usize;
    assert_eq!(m.len(), s, "initial values must match polynomial degree");
    let a = (poly >> 1) & ((1 << (s - 1)) - 1);
    let mut v = [0u32; BITS];
    for i in 0..s.min(BITS) {
        v[i] = m[i] << (BITS - 1 - i);
    }
    for i in s..BITS {
        v[i] = v[i - s] ^ (v[i - s] >> s);
        for k in 1..s {
            if (a >> (s - 1 - k)) & 1 == 1 {
                v[i] ^= v[i - k];
            }
        }
    }
    v
}

fn table() -> &'static [[u32; BITS]] {
    TABLE.get_or_init(|| {
        let mut rows = Vec::with_capacity(MAX_DIM);
        let mut first = [0u32; BITS];
        for (i, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS - 1 - i);
        }
        rows.push(first);
        rows.extend(
            include_str!("joe_kuo.txt").lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).map(parse_row),
        );
        debug_assert_eq!(rows.len(), MAX_DIM);
        rows
    })
}

/// Sobol generator over `[0, 1)^dim`.
#[derive(Debug, Clone)]
pub struct Sobol {
    dim: usize,
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self, SamplingError> {
        if dim > MAX_DIM {
            return Err(SamplingError::UnsupportedDimension { dim, max: MAX_DIM });
        }
        Ok(Sobol { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Point number `index` (0-based).
    pub fn point(&self, index: u64) -> Vec<f64> {
        let gray = index ^ (index >> 1);
        assert!(gray >> BITS == 0, "Sobol index out of range");
        let scale = 1.0 / (1u64 << BITS) as f64;
        table()[..self.dim]
            .iter()
            .map(|v| {
                let mut x = 0u32;
                let mut bits = gray;
                let mut j = 0;
                while bits != 0 {
                    if bits & 1 == 1 {
                        x ^= v[j];
                    }
                    bits >>= 1;
                    j += 1;
                }
                x as f64 * scale
            })
            .collect()
    }
}

/// Points `index_offset .. index_offset + n` mapped affinely to `[-delta, delta]^dim`.
pub fn sobol_batch(dim: usize, n: usize, index_offset: u64, delta: f64) -> Result<Vec<PerturbationVector>, SamplingError> {
    let sobol = Sobol::new(dim)?;
    Ok((0..n as u64)
        .map(|k| PerturbationVector(sobol.point(index_offset + k).into_iter().map(|x| delta * (2.0 * x - 1.0)).collect()))
        .collect())
}
