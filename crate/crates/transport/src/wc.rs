//! Wegman-Carter authentication: a one-time polynomial-evaluation hash over
//! GF(2^61 - 1).
//!
//! tag = b + m_1 k + m_2 k^2 + ... + m_s k^s for a fresh key (k, b).
//! Messages are cut into blocks of floor((m - 1) / 8) octets read
//! little-endian; the last block carries a marker bit just above its
//! octets so that messages differing only in trailing zeros or length get
//! different block sequences.

use std::sync::OnceLock;

use num_bigint::BigUint;
use qss_core::{FieldElement, MersennePrime};

/// Exponent of the tag field.
pub const TAG_EXPONENT: u32 = 61;
/// Key octets consumed per tag: 8 for k and 8 for b.
pub const TAG_KEY_OCTETS: usize = 16;
/// Encoded tag width.
pub const TAG_OCTETS: usize = 8;

pub fn tag_field() -> &'static MersennePrime {
    static FIELD: OnceLock<MersennePrime> = OnceLock::new();
    FIELD.get_or_init(|| MersennePrime::new(TAG_EXPONENT).expect("61 is a supported exponent"))
}

/// Octets per message block.
///
/// # Panics
/// For fields below m = 9, which cannot hold a marked octet.
pub fn block_octets(field: &MersennePrime) -> usize {
    let w = (field.exponent() as usize - 1) / 8;
    assert!(w > 0, "field too small for octet blocks");
    w
}

pub fn message_blocks(field: &MersennePrime, message: &[u8]) -> Vec<FieldElement> {
    let width = block_octets(field);
    let count = message.len().div_ceil(width);
    message
        .chunks(width)
        .enumerate()
        .map(|(i, chunk)| {
            let mut v = BigUint::from_bytes_le(chunk);
            if i + 1 == count {
                v += BigUint::from(1u8) << (8 * chunk.len());
            }
            field.reduce(v)
        })
        .collect()
}

/// b + sum_i m_i k^i, by Horner.
pub fn wc_tag_blocks(blocks: &[FieldElement], k: &FieldElement, b: &FieldElement) -> FieldElement {
    let mut acc = k.field().zero();
    for m in blocks.iter().rev() {
        acc = (acc + m) * k;
    }
    acc + b
}

/// Derives (k, b) from 16 key octets: two big-endian 64-bit words, each
/// masked to m bits and reduced.
pub fn tag_key(field: &MersennePrime, octets: &[u8; TAG_KEY_OCTETS]) -> (FieldElement, FieldElement) {
    let word = |bytes: &[u8]| {
        let w = u64::from_be_bytes(bytes.try_into().expect("8 octets"));
        let mask = if field.exponent() >= 64 { u64::MAX } else { (1u64 << field.exponent()) - 1 };
        field.from_u64(w & mask)
    };
    (word(&octets[..8]), word(&octets[8..]))
}

pub fn wc_tag_in(field: &MersennePrime, message: &[u8], k: &FieldElement, b: &FieldElement) -> FieldElement {
    wc_tag_blocks(&message_blocks(field, message), k, b)
}

/// The 8-octet big-endian tag of `message` under one-time key octets.
pub fn wc_tag(message: &[u8], key: &[u8; TAG_KEY_OCTETS]) -> [u8; TAG_OCTETS] {
    let field = tag_field();
    let (k, b) = tag_key(field, key);
    let t = wc_tag_in(field, message, &k, &b).to_u64().expect("61-bit value");
    t.to_be_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block_example() {
        let f = tag_field();
        let t = wc_tag_blocks(&[f.from_u64(5)], &f.from_u64(2), &f.from_u64(3));
        assert_eq!(t.to_u64(), Some(13));
    }

    #[test]
    fn empty_message_tags_to_b() {
        let f = tag_field();
        let (k, b) = (f.from_u64(77), f.from_u64(1234));
        assert_eq!(wc_tag_in(f, &[], &k, &b), b);
        let mut key = [0u8; 16];
        key[15] = 9;
        assert_eq!(wc_tag(&[], &key), 9u64.to_be_bytes());
    }

    #[test]
    fn blocks_carry_a_length_marker() {
        let f = tag_field();
        assert_eq!(block_octets(f), 7);
        let blocks = message_blocks(f, &[1, 0, 0, 0, 0, 0, 0, 2]);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].to_u64(), Some(1));
        assert_eq!(blocks[1].to_u64(), Some(2 + 256));
        // Trailing zero octets change the last block.
        assert_ne!(message_blocks(f, &[1]), message_blocks(f, &[1, 0]));
    }

    #[test]
    fn key_derivation_masks_to_the_field() {
        let f = tag_field();
        let (k, b) = tag_key(f, &[0xff; 16]);
        // (2^61 - 1) reduces to zero.
        assert!(k.is_zero() && b.is_zero());
        let mut key = [0u8; 16];
        key[7] = 2;
        key[15] = 3;
        let (k, b) = tag_key(f, &key);
        assert_eq!((k.to_u64(), b.to_u64()), (Some(2), Some(3)));
    }

    #[test]
    fn toy_field_blocks_are_single_octets() {
        let f = MersennePrime::new(13).unwrap();
        assert_eq!(block_octets(&f), 1);
        let blocks = message_blocks(&f, &[7, 9]);
        assert_eq!(blocks.iter().map(|b| b.to_u64().unwrap()).collect::<Vec<_>>(), vec![7, 9 + 256]);
    }
}
