use proptest::prelude::*;
use qss_core::adversary::{forgery_experiment, wrong_password_experiment, ForgeryConfig, OffsetAttack};
use qss_core::scheme::{
    encode_password, gen_precomputed_contribution, make_request, reconstruct, register, respond_all,
    verify_and_decode, PrecomputedSet, Response,
};
use qss_core::stats::{chi_square_critical, chi_square_uniform};
use qss_core::{DataId, MersennePrime, OwnerId, Quorum, SchemeError, SchemeParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Runs registration, pre-computation over `quorum` and reconstruction with `guess`.
fn round_trip(
    data: &[u8],
    password: &[u8],
    guess: &[u8],
    params: &SchemeParams,
    quorum: &Quorum,
    seed: u64,
) -> Result<Vec<u8>, SchemeError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let field = params.field();
    let p = encode_password(password, field)?;
    let bundles = register(data, &p, params, OwnerId(1), DataId(9), &mut rng)?;
    let blocks = bundles[0].data_shares.len();
    let contributions: Vec<Vec<_>> = quorum
        .members()
        .iter()
        .map(|&h| {
            (0..blocks)
                .map(|_| gen_precomputed_contribution(params, quorum, h, &mut rng))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let requests = make_request(&encode_password(guess, field)?, params, quorum, &mut rng)?;
    let mut responses = Vec::new();
    for req in &requests {
        let j = req.holder;
        let mut sets = (0..blocks)
            .map(|i| PrecomputedSet::assemble(quorum, i, j, contributions.iter().map(|c| &c[i])))
            .collect::<Result<Vec<_>, _>>()?;
        let values = respond_all(&bundles[j as usize - 1], &mut sets, req, params)?;
        assert!(sets.iter().all(|s| s.is_consumed()));
        responses.push(Response { server: j, values });
    }
    let bv = reconstruct(&responses, bundles[0].byte_len, params)?;
    verify_and_decode(&bv, &encode_password(guess, field)?)
}

fn all_quorums(n: u32, size: usize) -> Vec<Quorum> {
    (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize == size)
        .map(|mask| Quorum::new((1..=n).filter(|j| mask >> (j - 1) & 1 == 1).collect(), n).unwrap())
        .collect()
}

#[test]
fn every_quorum_recovers_the_data() {
    let params = SchemeParams::new(5, 2, MersennePrime::new(61).unwrap()).unwrap();
    let data = b"the quick brown fox jumps over the lazy dog";
    for (i, q) in all_quorums(5, 5).into_iter().enumerate() {
        assert_eq!(round_trip(data, b"pw", b"pw", &params, &q, i as u64).unwrap(), data);
    }
    let params = SchemeParams::new(4, 1, MersennePrime::new(521).unwrap()).unwrap();
    for (i, q) in all_quorums(4, 3).into_iter().enumerate() {
        assert_eq!(round_trip(data, b"pw", b"pw", &params, &q, i as u64).unwrap(), data);
    }
}

#[test]
fn wrong_passwords_are_rejected_at_m521() {
    let params = SchemeParams::new(3, 1, MersennePrime::new(521).unwrap()).unwrap();
    let q = params.default_quorum();
    for (i, guess) in [&b"pw2"[..], b"", b"p", b"wp", b"pw\0"].iter().enumerate() {
        let out = round_trip(b"secret", b"pw", guess, &params, &q, i as u64);
        // "pw\0" encodes to the same integer as "pw".
        if *guess == b"pw\0" {
            assert_eq!(out.unwrap(), b"secret");
        } else {
            assert_eq!(out, Err(SchemeError::AuthenticationFailed));
        }
    }
    let stats = wrong_password_experiment(&params, 2, 1_000, 5).unwrap();
    assert_eq!(stats.accepted, 0);
}

#[test]
fn wrong_password_output_is_uniform_at_q31() {
    let params = SchemeParams::new(3, 1, MersennePrime::new(5).unwrap()).unwrap();
    let stats = wrong_password_experiment(&params, 3, 100_000, 6).unwrap();
    assert!((stats.accepted as f64 / stats.trials as f64) <= stats.limit);
    let counts = stats.first_block_counts.unwrap();
    assert!(chi_square_uniform(&counts) < chi_square_critical(30, 0.01));
}

#[test]
fn forgeries_are_caught_at_the_expected_rate() {
    let params = SchemeParams::new(5, 2, MersennePrime::new(5).unwrap()).unwrap();
    let stats = forgery_experiment(&ForgeryConfig::new(params, 4, OffsetAttack::Random), 20_000, 7).unwrap();
    assert!(stats.rate() <= stats.limit, "{stats:?}");
}

#[test]
fn improper_quorums_are_refused() {
    let params = SchemeParams::new(4, 1, MersennePrime::new(61).unwrap()).unwrap();
    let q = Quorum::new(vec![1, 2], 4).unwrap();
    assert_eq!(
        round_trip(b"x", b"pw", b"pw", &params, &q, 0),
        Err(SchemeError::ImproperQuorum { expected: 3, got: 2 })
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reconstruction_recovers_arbitrary_data(
        data in proptest::collection::vec(any::<u8>(), 1..400),
        m in prop::sample::select(vec![61u32, 521, 1279]),
        seed: u64,
    ) {
        let params = SchemeParams::new(3, 1, MersennePrime::new(m).unwrap()).unwrap();
        let q = params.default_quorum();
        prop_assert_eq!(round_trip(&data, b"horse", b"horse", &params, &q, seed).unwrap(), data);
    }
}
