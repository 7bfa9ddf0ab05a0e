use num_bigint::BigUint;
use num_traits::One;

use super::SchemeError;
use crate::field::{FieldElement, MersennePrime};

/// Data split into (m - 1)-bit limbs, lowest limb first, plus the MAC block
/// once it has been computed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockVector {
    pub blocks: Vec<FieldElement>,
    pub mac: Option<FieldElement>,
    pub byte_len: u64,
}

impl BlockVector {
    /// Blocks followed by the MAC block, as they are shared.
    pub fn with_mac(&self) -> Result<Vec<FieldElement>, SchemeError> {
        let mac = self.mac.clone().ok_or(SchemeError::MissingMac)?;
        let mut all = self.blocks.clone();
        all.push(mac);
        Ok(all)
    }
}

/// l = ceil(8 * byte_len / (m - 1)).
pub fn block_count(byte_len: u64, exponent: u32) -> u64 {
    (8 * byte_len).div_ceil(exponent as u64 - 1)
}

fn low_mask(bits: u32) -> BigUint {
    (BigUint::one() << bits as usize) - BigUint::one()
}

/// Reads the data as a little-endian bit string and cuts (m - 1)-bit limbs
/// from the least significant end; the last limb is zero-padded.
pub fn encode_blocks(data: &[u8], field: &MersennePrime) -> Result<BlockVector, SchemeError> {
    if data.is_empty() {
        return Err(SchemeError::EmptyData);
    }
    let width = field.exponent() as usize - 1;
    let mask = low_mask(width as u32);
    let total_bits = data.len() * 8;
    let count = block_count(data.len() as u64, field.exponent()) as usize;
    let mut blocks = Vec::with_capacity(count);
    for k in 0..count {
        let bit = k * width;
        let start = bit / 8;
        let end = (bit + width).min(total_bits).div_ceil(8);
        let mut limb = BigUint::from_bytes_le(&data[start..end]) >> (bit % 8);
        if limb.bits() > width as u64 {
            limb &= &mask;
        }
        blocks.push(field.element(limb)?);
    }
    Ok(BlockVector {
        blocks,
        mac: None,
        byte_len: data.len() as u64,
    })
}

/// Exact inverse of [`encode_blocks`].
pub fn decode_blocks(bv: &BlockVector) -> Result<Vec<u8>, SchemeError> {
    let Some(first) = bv.blocks.first() else {
        return Err(SchemeError::InconsistentLength {
            blocks: 0,
            byte_len: bv.byte_len,
        });
    };
    let field = first.field();
    let width = field.exponent() as usize - 1;
    if bv.byte_len == 0 || bv.blocks.len() as u64 != block_count(bv.byte_len, field.exponent()) {
        return Err(SchemeError::InconsistentLength {
            blocks: bv.blocks.len(),
            byte_len: bv.byte_len,
        });
    }
    let mut buf = vec![0u8; (bv.blocks.len() * width).div_ceil(8)];
    for (k, block) in bv.blocks.iter().enumerate() {
        if block.value().bits() > width as u64 {
            return Err(SchemeError::BlockOverflow(k));
        }
        let bit = k * width;
        let shifted = block.value() << (bit % 8);
        for (i, b) in shifted.to_bytes_le().into_iter().enumerate() {
            buf[bit / 8 + i] |= b;
        }
    }
    let len = bv.byte_len as usize;
    if buf[len..].iter().any(|&b| b != 0) {
        return Err(SchemeError::NonZeroPadding);
    }
    buf.truncate(len);
    Ok(buf)
}

/// MAC = D_l P^l + ... + D_1 P, evaluated by Horner.
pub fn compute_mac(blocks: &[FieldElement], password: &FieldElement) -> FieldElement {
    let mut acc = password.field().zero();
    for d in blocks.iter().rev() {
        acc = (acc + d) * password;
    }
    acc
}
