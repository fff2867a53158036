use crate::error::{Error, Result};

/// Packs signed 4-bit values two per byte, earlier element in the low nibble.
/// An odd trailing element leaves the high nibble zero.
pub fn pack_int4(values: &[i8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(values.len().div_ceil(2));
    for (pair_idx, pair) in values.chunks(2).enumerate() {
        let mut byte = 0u8;
        for (k, &v) in pair.iter().enumerate() {
            if !(-8..=7).contains(&v) {
                return Err(Error::PackRange {
                    index: pair_idx * 2 + k,
                    value: v as i32,
                });
            }
            byte |= ((v as u8) & 0x0F) << (4 * k);
        }
        out.push(byte);
    }
    Ok(out)
}

pub fn unpack_int4(bytes: &[u8], count: usize) -> Result<Vec<i8>> {
    if bytes.len() != count.div_ceil(2) {
        return Err(Error::Structure(format!(
            "{} bytes cannot hold exactly {count} 4-bit values",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let nibble = (bytes[i / 2] >> (4 * (i % 2))) & 0x0F;
        // sign-extend
        out.push(((nibble << 4) as i8) >> 4);
    }
    Ok(out)
}

pub fn pack_int8(values: &[i8]) -> Vec<u8> {
    values.iter().map(|&v| v as u8).collect()
}

pub fn unpack_int8(bytes: &[u8]) -> Vec<i8> {
    bytes.iter().map(|&b| b as i8).collect()
}
