use std::collections::BTreeMap;

use num_bigint::BigUint;
use rand::RngCore;

use super::blocks::{compute_mac, decode_blocks, encode_blocks, BlockVector};
use super::{DataId, OwnerId, Quorum, SchemeError, SchemeParams};
use crate::field::{FieldElement, MersennePrime};
use crate::sharing::{lagrange_weights_at_zero, SharePolynomial};

/// Interprets the passphrase octets as a little-endian integer.
///
/// The value must stay below 2^(m-1), like a data block.
pub fn encode_password(passphrase: &[u8], field: &MersennePrime) -> Result<FieldElement, SchemeError> {
    let value = BigUint::from_bytes_le(passphrase);
    check_password_bits(&value, field)?;
    Ok(field.element(value)?)
}

fn check_password_bits(value: &BigUint, field: &MersennePrime) -> Result<(), SchemeError> {
    let max = field.exponent() - 1;
    if value.bits() > max as u64 {
        return Err(SchemeError::PasswordTooLarge {
            bits: value.bits(),
            max,
        });
    }
    Ok(())
}

/// What server j keeps after registration: f_{D_i}(j) for i = 1..=l+1 and f_P(j).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegistrationBundle {
    pub owner: OwnerId,
    pub data_id: DataId,
    pub server: u32,
    pub byte_len: u64,
    pub data_shares: Vec<FieldElement>,
    pub password_share: FieldElement,
}

impl RegistrationBundle {
    /// Number of data blocks l (the MAC block is not counted).
    pub fn block_count(&self) -> usize {
        self.data_shares.len().saturating_sub(1)
    }

    pub fn field(&self) -> &MersennePrime {
        self.password_share.field()
    }
}

/// Splits `data`, appends the MAC under `password` and shares everything.
///
/// Returns one bundle per server, indexed 1..=n in order.
pub fn register<R: RngCore + ?Sized>(
    data: &[u8],
    password: &FieldElement,
    params: &SchemeParams,
    owner: OwnerId,
    data_id: DataId,
    rng: &mut R,
) -> Result<Vec<RegistrationBundle>, SchemeError> {
    check_password_bits(password.value(), params.field())?;
    let mut bv = encode_blocks(data, params.field())?;
    bv.mac = Some(compute_mac(&bv.blocks, password));
    share_blocks(&bv, password, params, owner, data_id, rng)
}

/// Shares an already encoded block vector (with MAC) and a password of any
/// field value.
pub fn share_blocks<R: RngCore + ?Sized>(
    bv: &BlockVector,
    password: &FieldElement,
    params: &SchemeParams,
    owner: OwnerId,
    data_id: DataId,
    rng: &mut R,
) -> Result<Vec<RegistrationBundle>, SchemeError> {
    let values = bv.with_mac()?;
    let points: Vec<u32> = (1..=params.n()).collect();
    let mut per_server: Vec<Vec<FieldElement>> = vec![Vec::with_capacity(values.len()); points.len()];
    for v in values {
        let poly = SharePolynomial::random(v, params.data_degree(), rng)?;
        for (slot, share) in per_server.iter_mut().zip(poly.shares_at(&points)?) {
            slot.push(share.value);
        }
    }
    let password_poly = SharePolynomial::random(password.clone(), params.password_degree(), rng)?;
    let password_shares = password_poly.shares_at(&points)?;
    Ok(per_server
        .into_iter()
        .zip(password_shares)
        .map(|(data_shares, p)| RegistrationBundle {
            owner,
            data_id,
            server: p.point,
            byte_len: bv.byte_len,
            data_shares,
            password_share: p.value,
        })
        .collect())
}

/// One server's pre-computation output for a single block: the evaluations
/// of a fresh degree-t randomizer polynomial and a degree-2t zero polynomial
/// at every member of the pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contribution {
    pub from: u32,
    pub randomizer: BTreeMap<u32, FieldElement>,
    pub zero: BTreeMap<u32, FieldElement>,
}

impl Contribution {
    /// The pair addressed to member `j`.
    pub fn share_for(&self, j: u32) -> Option<(&FieldElement, &FieldElement)> {
        Some((self.randomizer.get(&j)?, self.zero.get(&j)?))
    }
}

pub fn gen_precomputed_contribution<R: RngCore + ?Sized>(
    params: &SchemeParams,
    members: &Quorum,
    from: u32,
    rng: &mut R,
) -> Result<Contribution, SchemeError> {
    let field = params.field();
    let randomizer = SharePolynomial::random(field.random_element(rng)?, params.password_degree(), rng)?;
    let zero = SharePolynomial::zero(field, params.data_degree(), rng)?;
    contribution_from_polynomials(members, from, &randomizer, &zero)
}

/// Contribution from caller-chosen polynomials.
pub fn contribution_from_polynomials(
    members: &Quorum,
    from: u32,
    randomizer: &SharePolynomial,
    zero: &SharePolynomial,
) -> Result<Contribution, SchemeError> {
    if !members.contains(from) {
        return Err(SchemeError::NotInQuorum(from));
    }
    let collect = |poly: &SharePolynomial| -> Result<BTreeMap<u32, FieldElement>, SchemeError> {
        Ok(poly
            .shares_at(members.members())?
            .into_iter()
            .map(|s| (s.point, s.value))
            .collect())
    };
    Ok(Contribution {
        from,
        randomizer: collect(randomizer)?,
        zero: collect(zero)?,
    })
}

/// Server j's consume-once masking material for one block: randomizer and
/// zero shares f_{R_h}(j), f_{0_h}(j) from every pool member h.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrecomputedSet {
    pub members: Quorum,
    pub block: usize,
    pub holder: u32,
    pub randomizer: BTreeMap<u32, FieldElement>,
    pub zero: BTreeMap<u32, FieldElement>,
    consumed: bool,
}

impl PrecomputedSet {
    pub fn new(
        members: Quorum,
        block: usize,
        holder: u32,
        randomizer: BTreeMap<u32, FieldElement>,
        zero: BTreeMap<u32, FieldElement>,
    ) -> Self {
        Self {
            members,
            block,
            holder,
            randomizer,
            zero,
            consumed: false,
        }
    }

    /// Picks the shares addressed to `holder` out of every member's contribution.
    pub fn assemble<'a>(
        members: &Quorum,
        block: usize,
        holder: u32,
        contributions: impl IntoIterator<Item = &'a Contribution>,
    ) -> Result<Self, SchemeError> {
        let mut randomizer = BTreeMap::new();
        let mut zero = BTreeMap::new();
        for c in contributions {
            let (r, z) = c.share_for(holder).ok_or(SchemeError::NotInQuorum(holder))?;
            randomizer.insert(c.from, r.clone());
            zero.insert(c.from, z.clone());
        }
        if members.members().iter().any(|h| !randomizer.contains_key(h)) {
            return Err(SchemeError::QuorumMismatch);
        }
        Ok(Self::new(members.clone(), block, holder, randomizer, zero))
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// R = sum of f_{R_h}(j) and Z = sum of f_{0_h}(j) over h in `quorum`.
    fn masks(&self, quorum: &Quorum) -> Result<(FieldElement, FieldElement), SchemeError> {
        let field = self.randomizer.values().next().ok_or(SchemeError::QuorumMismatch)?.field().clone();
        let mut r = field.zero();
        let mut z = field.zero();
        for h in quorum.members() {
            r = r + self.randomizer.get(h).ok_or(SchemeError::QuorumMismatch)?;
            z = z + self.zero.get(h).ok_or(SchemeError::QuorumMismatch)?;
        }
        Ok((r, z))
    }
}

/// What the owner sends to server `holder`: the quorum and f_{P'}(holder).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReconstructionRequest {
    pub quorum: Quorum,
    pub holder: u32,
    pub password_share: FieldElement,
}

/// Degree-t sharing of the guessed password, one request per quorum member.
pub fn make_request<R: RngCore + ?Sized>(
    guess: &FieldElement,
    params: &SchemeParams,
    quorum: &Quorum,
    rng: &mut R,
) -> Result<Vec<ReconstructionRequest>, SchemeError> {
    check_quorum_size(quorum, params)?;
    let poly = SharePolynomial::random(guess.clone(), params.password_degree(), rng)?;
    request_from_polynomial(&poly, params, quorum)
}

pub fn request_from_polynomial(
    poly: &SharePolynomial,
    params: &SchemeParams,
    quorum: &Quorum,
) -> Result<Vec<ReconstructionRequest>, SchemeError> {
    check_quorum_size(quorum, params)?;
    Ok(poly
        .shares_at(quorum.members())?
        .into_iter()
        .map(|s| ReconstructionRequest {
            quorum: quorum.clone(),
            holder: s.point,
            password_share: s.value,
        })
        .collect())
}

fn check_quorum_size(quorum: &Quorum, params: &SchemeParams) -> Result<(), SchemeError> {
    if quorum.len() != params.quorum_size() {
        return Err(SchemeError::ImproperQuorum {
            expected: params.quorum_size(),
            got: quorum.len(),
        });
    }
    Ok(())
}

/// F = (f_P(j) - f_{P'}(j)) R + Z + f_{D_i}(j).
pub fn response_value(
    password_share: &FieldElement,
    guess_share: &FieldElement,
    randomizer: &FieldElement,
    zero: &FieldElement,
    data_share: &FieldElement,
) -> FieldElement {
    (password_share - guess_share) * randomizer + zero + data_share
}

fn check_set(
    bundle: &RegistrationBundle,
    set: &PrecomputedSet,
    request: &ReconstructionRequest,
    block: usize,
    params: &SchemeParams,
) -> Result<(), SchemeError> {
    check_quorum_size(&request.quorum, params)?;
    if set.consumed {
        return Err(SchemeError::SetConsumed);
    }
    if !request.quorum.is_subset_of(&set.members) {
        return Err(SchemeError::QuorumMismatch);
    }
    let j = bundle.server;
    if !request.quorum.contains(j) || request.holder != j || set.holder != j {
        return Err(SchemeError::NotInQuorum(j));
    }
    if block >= bundle.data_shares.len() || set.block != block {
        return Err(SchemeError::BlockOutOfRange(block));
    }
    Ok(())
}

/// Server j's masked response F_{j,i} for one block; marks the set consumed.
pub fn respond(
    bundle: &RegistrationBundle,
    set: &mut PrecomputedSet,
    request: &ReconstructionRequest,
    block: usize,
    params: &SchemeParams,
) -> Result<FieldElement, SchemeError> {
    check_set(bundle, set, request, block, params)?;
    let (r, z) = set.masks(&request.quorum)?;
    set.consumed = true;
    Ok(response_value(
        &bundle.password_share,
        &request.password_share,
        &r,
        &z,
        &bundle.data_shares[block],
    ))
}

/// Responses for all l + 1 blocks, one set per block. Either every set is
/// consumed or, on a validation error, none is.
pub fn respond_all(
    bundle: &RegistrationBundle,
    sets: &mut [PrecomputedSet],
    request: &ReconstructionRequest,
    params: &SchemeParams,
) -> Result<Vec<FieldElement>, SchemeError> {
    if sets.len() != bundle.data_shares.len() {
        return Err(SchemeError::BlockOutOfRange(sets.len()));
    }
    for (i, set) in sets.iter().enumerate() {
        check_set(bundle, set, request, i, params)?;
    }
    sets.iter_mut()
        .enumerate()
        .map(|(i, set)| respond(bundle, set, request, i, params))
        .collect()
}

/// One server's response vector F_{j,1} .. F_{j,l+1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub server: u32,
    pub values: Vec<FieldElement>,
}

/// Interpolates every block at zero with degree 2t; the last value is the
/// reconstructed MAC block.
pub fn reconstruct(
    responses: &[Response],
    byte_len: u64,
    params: &SchemeParams,
) -> Result<BlockVector, SchemeError> {
    if responses.len() != params.quorum_size() {
        return Err(SchemeError::ImproperQuorum {
            expected: params.quorum_size(),
            got: responses.len(),
        });
    }
    let width = responses[0].values.len();
    if width < 2 || responses.iter().any(|r| r.values.len() != width) {
        return Err(SchemeError::ResponseLengthMismatch);
    }
    let points: Vec<u32> = responses.iter().map(|r| r.server).collect();
    let weights = lagrange_weights_at_zero(params.field(), &points)?;
    let mut values = Vec::with_capacity(width);
    for i in 0..width {
        let mut acc = params.field().zero();
        for (w, r) in weights.iter().zip(responses) {
            acc = acc + r.values[i].checked_mul(w)?;
        }
        values.push(acc);
    }
    let mac = values.pop();
    Ok(BlockVector {
        blocks: values,
        mac,
        byte_len,
    })
}

/// Recomputes the MAC under `password`; on a match returns the decoded data.
///
/// A mismatch is reported as [`SchemeError::AuthenticationFailed`] whether
/// it came from a wrong password or from tampered responses.
pub fn verify_and_decode(bv: &BlockVector, password: &FieldElement) -> Result<Vec<u8>, SchemeError> {
    let mac = bv.mac.as_ref().ok_or(SchemeError::MissingMac)?;
    if &compute_mac(&bv.blocks, password) != mac {
        return Err(SchemeError::AuthenticationFailed);
    }
    decode_blocks(bv).map_err(|_| SchemeError::AuthenticationFailed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sharing::interpolate_at_zero;
    use crate::sharing::Share;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn gf31() -> MersennePrime {
        MersennePrime::new(5).unwrap()
    }

    fn poly(f: &MersennePrime, c: &[u64]) -> SharePolynomial {
        SharePolynomial::from_u64s(f, c).unwrap()
    }

    /// The hand-traced n = 3, t = 1 instance over GF(31).
    struct Trace {
        params: SchemeParams,
        bundles: Vec<RegistrationBundle>,
        sets: Vec<PrecomputedSet>,
        quorum: Quorum,
    }

    fn trace() -> Trace {
        let f = gf31();
        let params = SchemeParams::new(3, 1, f.clone()).unwrap();
        let quorum = Quorum::new(vec![1, 2, 3], 3).unwrap();
        let f_p = poly(&f, &[2, 4]);
        let f_d = poly(&f, &[5, 3, 2]);
        let bundles = (1..=3u32)
            .map(|j| RegistrationBundle {
                owner: OwnerId(1),
                data_id: DataId(1),
                server: j,
                byte_len: 1,
                data_shares: vec![f_d.evaluate(j as u64)],
                password_share: f_p.evaluate(j as u64),
            })
            .collect();
        let randomizers = [poly(&f, &[7, 1]), poly(&f, &[1, 2]), poly(&f, &[4, 5])];
        let zeros = [poly(&f, &[0, 1, 1]), poly(&f, &[0, 2, 0]), poly(&f, &[0, 0, 3])];
        let contributions: Vec<Contribution> = (0..3)
            .map(|h| {
                contribution_from_polynomials(&quorum, h as u32 + 1, &randomizers[h], &zeros[h]).unwrap()
            })
            .collect();
        let sets = (1..=3u32)
            .map(|j| PrecomputedSet::assemble(&quorum, 0, j, &contributions).unwrap())
            .collect();
        Trace {
            params,
            bundles,
            sets,
            quorum,
        }
    }

    fn run(trace: &mut Trace, guess: &[u64]) -> Vec<u64> {
        let f = gf31();
        let requests = request_from_polynomial(&poly(&f, guess), &trace.params, &trace.quorum).unwrap();
        (0..3)
            .map(|j| {
                respond(&trace.bundles[j], &mut trace.sets[j], &requests[j], 0, &trace.params)
                    .unwrap()
                    .to_u64()
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn hand_traced_responses() {
        let mut t = trace();
        assert_eq!(t.sets[0].masks(&t.quorum).unwrap().0.to_u64(), Some(20));
        assert_eq!(t.sets[0].masks(&t.quorum).unwrap().1.to_u64(), Some(7));
        assert_eq!(run(&mut t, &[2, 6]), vec![8, 22, 16]);
        let s = |p: u32, v: u64| Share::new(p, gf31().from_u64(v));
        assert_eq!(
            interpolate_at_zero(&[s(1, 8), s(2, 22), s(3, 16)], 2).unwrap().to_u64(),
            Some(5)
        );
    }

    #[test]
    fn wrong_password_trace() {
        let mut t = trace();
        assert_eq!(run(&mut t, &[3, 6]), vec![19, 25, 11]);
        let responses: Vec<Response> = [19u64, 25, 11]
            .iter()
            .zip(1..)
            .map(|(&v, j)| Response {
                server: j,
                values: vec![gf31().from_u64(v), gf31().zero()],
            })
            .collect();
        let bv = reconstruct(&responses, 1, &t.params).unwrap();
        assert_eq!(bv.blocks[0].to_u64(), Some(24));
    }

    #[test]
    fn second_use_of_a_set_is_refused() {
        let mut t = trace();
        run(&mut t, &[2, 6]);
        let requests = request_from_polynomial(&poly(&gf31(), &[2, 6]), &t.params, &t.quorum).unwrap();
        assert_eq!(
            respond(&t.bundles[0], &mut t.sets[0], &requests[0], 0, &t.params),
            Err(SchemeError::SetConsumed)
        );
    }

    #[test]
    fn improper_quorum_is_rejected_without_consuming() {
        let mut t = trace();
        let small = Quorum::new(vec![1, 2], 3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(
            make_request(&gf31().from_u64(2), &t.params, &small, &mut rng),
            Err(SchemeError::ImproperQuorum { expected: 3, got: 2 })
        );
        let bad = ReconstructionRequest {
            quorum: small,
            holder: 1,
            password_share: gf31().from_u64(8),
        };
        assert!(matches!(
            respond(&t.bundles[0], &mut t.sets[0], &bad, 0, &t.params),
            Err(SchemeError::ImproperQuorum { .. })
        ));
        assert!(!t.sets[0].is_consumed());
    }

    #[test]
    fn request_shares_example() {
        let f = gf31();
        let params = SchemeParams::new(3, 1, f.clone()).unwrap();
        let reqs = request_from_polynomial(&poly(&f, &[2, 6]), &params, &params.default_quorum()).unwrap();
        let got: Vec<u64> = reqs.iter().map(|r| r.password_share.to_u64().unwrap()).collect();
        assert_eq!(got, vec![8, 14, 20]);
    }

    #[test]
    fn contribution_example() {
        let f = gf31();
        let q = Quorum::new(vec![1, 2, 3], 3).unwrap();
        let c = contribution_from_polynomials(&q, 1, &poly(&f, &[7, 1]), &poly(&f, &[0, 1, 1])).unwrap();
        let r: Vec<u64> = c.randomizer.values().map(|v| v.to_u64().unwrap()).collect();
        assert_eq!(r, vec![8, 9, 10]);
        assert!(contribution_from_polynomials(&q, 4, &poly(&f, &[7, 1]), &poly(&f, &[0, 1, 1])).is_err());
    }

    #[test]
    fn register_single_block_structure() {
        let f = gf31();
        let params = SchemeParams::new(3, 1, f.clone()).unwrap();
        let bv = BlockVector {
            blocks: vec![f.from_u64(5)],
            mac: Some(compute_mac(&[f.from_u64(5)], &f.from_u64(2))),
            byte_len: 0,
        };
        assert_eq!(bv.mac.as_ref().unwrap().to_u64(), Some(10));
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let bundles = share_blocks(&bv, &f.from_u64(2), &params, OwnerId(1), DataId(2), &mut rng).unwrap();
        assert_eq!(bundles.len(), 3);
        assert!(bundles.iter().all(|b| b.data_shares.len() == 2));
        for i in 0..2 {
            let shares: Vec<Share> = bundles.iter().map(|b| Share::new(b.server, b.data_shares[i].clone())).collect();
            let expected = if i == 0 { 5 } else { 10 };
            assert_eq!(interpolate_at_zero(&shares, 2).unwrap().to_u64(), Some(expected));
        }
    }

    #[test]
    fn oversized_password_is_refused() {
        let f = gf31();
        let params = SchemeParams::new(3, 1, f.clone()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        assert_eq!(
            register(&[1], &f.from_u64(16), &params, OwnerId(1), DataId(1), &mut rng),
            Err(SchemeError::PasswordTooLarge { bits: 5, max: 4 })
        );
        assert!(encode_password(b"A", &f).is_err());
        assert_eq!(encode_password(&[0x0f], &f).unwrap().to_u64(), Some(15));
    }

    #[test]
    fn verify_accepts_single_block_with_matching_mac() {
        let f = gf31();
        // One byte at m = 5 needs two blocks; data 0x05 -> (5, 0).
        let bv = BlockVector {
            blocks: vec![f.from_u64(5), f.zero()],
            mac: Some(f.from_u64(10)),
            byte_len: 1,
        };
        assert_eq!(verify_and_decode(&bv, &f.from_u64(2)).unwrap(), vec![0x05]);
        assert_eq!(verify_and_decode(&bv, &f.from_u64(3)), Err(SchemeError::AuthenticationFailed));
    }

    #[test]
    fn end_to_end_at_m521() {
        let f = MersennePrime::new(521).unwrap();
        let params = SchemeParams::new(4, 1, f.clone()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let data: Vec<u8> = (0..500u32).map(|i| (i * 31) as u8).collect();
        let password = encode_password(b"correct horse battery staple", &f).unwrap();
        let bundles = register(&data, &password, &params, OwnerId(1), DataId(1), &mut rng).unwrap();
        let quorum = Quorum::new(vec![1, 2, 4], 4).unwrap();
        let blocks = bundles[0].data_shares.len();

        let run = |guess: &FieldElement, rng: &mut ChaCha20Rng| {
            let contribs: Vec<Vec<Contribution>> = quorum
                .members()
                .iter()
                .map(|&h| {
                    (0..blocks)
                        .map(|_| gen_precomputed_contribution(&params, &quorum, h, rng).unwrap())
                        .collect()
                })
                .collect();
            let requests = make_request(guess, &params, &quorum, rng).unwrap();
            let responses: Vec<Response> = requests
                .iter()
                .map(|req| {
                    let j = req.holder;
                    let mut sets: Vec<PrecomputedSet> = (0..blocks)
                        .map(|i| PrecomputedSet::assemble(&quorum, i, j, contribs.iter().map(|c| &c[i])).unwrap())
                        .collect();
                    Response {
                        server: j,
                        values: respond_all(&bundles[j as usize - 1], &mut sets, req, &params).unwrap(),
                    }
                })
                .collect();
            let bv = reconstruct(&responses, data.len() as u64, &params).unwrap();
            verify_and_decode(&bv, guess)
        };
        assert_eq!(run(&password, &mut rng).unwrap(), data);
        let wrong = encode_password(b"correct horse battery stable", &f).unwrap();
        assert_eq!(run(&wrong, &mut rng), Err(SchemeError::AuthenticationFailed));
    }
}
