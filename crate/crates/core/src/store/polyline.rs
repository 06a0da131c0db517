//! Lossy fixed-point compressor for embedding vectors.
//!
//! Each coordinate is independently scaled by 10^p, rounded half away from
//! zero, left-shifted one bit (with bitwise inversion for negatives), and
//! emitted as 5-bit little-endian chunks offset into printable ASCII. Values
//! are encoded absolutely, not as deltas from the previous coordinate:
//! embedding dimensions are unrelated quantities, so delta chaining would
//! not shrink magnitudes.

use super::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolylineCodec {
    precision: u8,
}

impl PolylineCodec {
    pub fn new(precision: u8) -> Result<Self, StoreError> {
        if !(1..=9).contains(&precision) {
            return Err(StoreError::BadPrecision(precision));
        }
        Ok(Self { precision })
    }

    pub fn precision(&self) -> u8 {
        self.precision
    }

    fn scale(&self) -> f64 {
        10f64.powi(i32::from(self.precision))
    }

    /// The value a round trip reproduces exactly.
    pub fn round(&self, v: f64) -> f64 {
        (v * self.scale()).round() / self.scale()
    }

    pub fn encode_value(&self, v: f64, out: &mut Vec<u8>) -> Result<(), StoreError> {
        let scaled = (v * self.scale()).round();
        if !scaled.is_finite() || scaled.abs() >= 2f64.powi(31) {
            return Err(StoreError::Range { value: v, precision: self.precision });
        }
        let scaled = scaled as i64;
        let mut bits = scaled << 1;
        if scaled < 0 {
            bits = !bits;
        }
        while bits >= 0x20 {
            out.push((((bits & 0x1f) | 0x20) + 63) as u8);
            bits >>= 5;
        }
        out.push((bits + 63) as u8);
        Ok(())
    }

    /// Number of bytes `encode_value` would emit.
    pub fn encoded_len_value(&self, v: f64) -> Result<usize, StoreError> {
        let scaled = (v * self.scale()).round();
        if !scaled.is_finite() || scaled.abs() >= 2f64.powi(31) {
            return Err(StoreError::Range { value: v, precision: self.precision });
        }
        let scaled = scaled as i64;
        let mut bits = scaled << 1;
        if scaled < 0 {
            bits = !bits;
        }
        let mut len = 1;
        while bits >= 0x20 {
            len += 1;
            bits >>= 5;
        }
        Ok(len)
    }

    pub fn encode(&self, values: &[f64]) -> Result<Vec<u8>, StoreError> {
        let mut out = Vec::with_capacity(values.len() * 3);
        for &v in values {
            self.encode_value(v, &mut out)?;
        }
        Ok(out)
    }

    pub fn encoded_len(&self, values: &[f64]) -> Result<usize, StoreError> {
        values.iter().try_fold(0, |acc, &v| Ok(acc + self.encoded_len_value(v)?))
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<Vec<f64>, StoreError> {
        let mut values = Vec::new();
        let mut bits: i64 = 0;
        let mut shift = 0u32;
        for (pos, &b) in bytes.iter().enumerate() {
            if !(63..=126).contains(&b) {
                return Err(StoreError::Decode { pos, byte: b });
            }
            let chunk = i64::from(b) - 63;
            bits |= (chunk & 0x1f) << shift;
            if chunk & 0x20 != 0 {
                shift += 5;
                continue;
            }
            let scaled = if bits & 1 != 0 { !bits >> 1 } else { bits >> 1 };
            values.push(scaled as f64 / self.scale());
            bits = 0;
            shift = 0;
        }
        if shift != 0 {
            return Err(StoreError::Decode { pos: bytes.len(), byte: 0 });
        }
        Ok(values)
    }
}
