//! Monte Carlo checks of frame authentication, reported in the same line
//! format as the scheme's adversary harness.

use std::sync::Arc;

use qss_core::adversary::ReportLine;
use qss_core::MersennePrime;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::frame::{open, seal, AuthFrame, FrameError, FrameFields, KeyMaterial, KeystreamCursor, ReceiverState, MAX_PAYLOAD};
use crate::keysupply::KeyId;
use crate::wc::{wc_tag_in, TAG_KEY_OCTETS};

/// Seals random frames, flips one random bit of each encoding and counts
/// how many still open.
pub fn bit_flip_experiment(trials: u64, seed: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut accepted = 0;
    for i in 0..trials {
        let len = rng.gen_range(0..=MAX_PAYLOAD);
        let mut payload = vec![0u8; len];
        rng.fill_bytes(&mut payload);
        let mut octets = vec![0u8; len + TAG_KEY_OCTETS];
        rng.fill_bytes(&mut octets);
        let key = KeyMaterial::new(KeyId::from_parts(seed, i), octets);
        let n = len as u64;
        let mut enc = KeystreamCursor::new(key.clone(), 0, n);
        let mut mac = KeystreamCursor::new(key.clone(), n, n + TAG_KEY_OCTETS as u64);
        let fields = FrameFields {
            msg_type: 1,
            sender: 1,
            session: i,
            sequence: 0,
        };
        let mut bytes = seal(&payload, fields, &mut enc, &mut mac).expect("fresh key").encode();
        let bit = rng.gen_range(0..bytes.len() * 8);
        bytes[bit / 8] ^= 1 << (bit % 8);
        let Ok(frame) = AuthFrame::decode(&bytes) else { continue };
        let lookup = |id: &KeyId| -> Result<Arc<KeyMaterial>, FrameError> {
            if *id == key.id {
                Ok(key.clone())
            } else {
                Err(FrameError::UnknownKey(*id))
            }
        };
        if open(&frame, lookup, &mut ReceiverState::default()).is_ok() {
            accepted += 1;
        }
    }
    accepted
}

/// Tag forgery over GF(2^13 - 1), where blocks are single octets: the
/// attacker replays an observed tag on a different message of `blocks`
/// octets. The bound is s/q with s = `blocks`.
pub fn toy_forgery_line(blocks: usize, trials: u64, seed: u64) -> ReportLine {
    let field = MersennePrime::new(13).expect("13 is a Mersenne exponent");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut msg = vec![0u8; blocks];
    let mut other = vec![0u8; blocks];
    let mut forged = 0u64;
    for _ in 0..trials {
        let k = field.random_element(&mut rng).expect("field sampling");
        let b = field.random_element(&mut rng).expect("field sampling");
        rng.fill_bytes(&mut msg);
        rng.fill_bytes(&mut other);
        while other == msg {
            rng.fill_bytes(&mut other);
        }
        if wc_tag_in(&field, &other, &k, &b) == wc_tag_in(&field, &msg, &k, &b) {
            forged += 1;
        }
    }
    let bound = blocks as f64 / 8191.0;
    let limit = bound + 3.0 * (bound * (1.0 - bound) / trials as f64).sqrt();
    ReportLine::at_most(format!("tag_forgery_q8191_s{blocks}"), forged as f64 / trials as f64, limit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_runs() {
        assert_eq!(bit_flip_experiment(200, 1), 0);
        assert!(toy_forgery_line(4, 2000, 1).pass);
    }
}
