//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Instant;

use qss_core::adversary::{
    det_m_bruteforce, det_m_closed_form, forgery_experiment, wrong_password_experiment, AttackScenario, DetMInput,
    ForgeryConfig, OffsetAttack, SIGNIFICANCE,
};
use qss_core::sharing::SharePolynomial;
use qss_core::stats::{chi_square_critical, chi_square_uniform};
use qss_core::{MersennePrime, OwnerId, Quorum, SchemeParams};
use qss_storage::bench::{run_case, BenchConfig, EXPONENTS, SIZES};
use qss_storage::deploy::{Deployment, DeploymentConfig};
use qss_storage::owner::OwnerError;
use qss_storage::peer::server_app;
use qss_storage::wire::{self, ErrorCode, Message, ReconRequest};
use qss_transport::checks::{bit_flip_experiment, toy_forgery_line};
use qss_transport::keysupply::{find_overlaps, KeyNetwork, KeyNetworkConfig, NetworkClock, Topology};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const PW: &[u8] = b"acceptance passphrase";
const OWNER: OwnerId = OwnerId(1);
const MC_TRIALS: u64 = 100_000;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn params(n: u32, t: u32, m: u32) -> SchemeParams {
    SchemeParams::new(n, t, MersennePrime::new(m).unwrap()).unwrap()
}

fn deploy(p: SchemeParams, tweak: impl FnOnce(&mut DeploymentConfig)) -> Deployment {
    let mut c = DeploymentConfig::new(p);
    c.server.rate_limit = None;
    tweak(&mut c);
    Deployment::start(c).unwrap()
}

fn random_data(len: usize, seed: u64) -> Vec<u8> {
    let mut v = vec![0u8; len];
    ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut v);
    v
}

fn q(members: &[u32], n: u32) -> Quorum {
    Quorum::new(members.to_vec(), n).unwrap()
}

fn round_trips() -> Outcome {
    let mut slowest = 0f64;
    for (n, t) in [(4, 1), (3, 1)] {
        for m in [521, 1279] {
            let d = deploy(params(n, t, m), |_| {});
            let owner = d.owner(OWNER);
            for size in SIZES {
                let data = random_data(size as usize, size ^ m as u64);
                let start = Instant::now();
                let id = owner.register(&data, PW).map_err(|e| e.to_string())?;
                let got = owner.reconstruct(id, PW, None).map_err(|e| e.to_string())?;
                let secs = start.elapsed().as_secs_f64();
                slowest = slowest.max(secs);
                if got.data != data {
                    return Err(format!("(n={n}, t={t}, m={m}, {size} B) not bit-exact"));
                }
                if secs >= 60.0 {
                    return Err(format!("(n={n}, t={t}, m={m}, {size} B) took {secs:.1} s"));
                }
            }
        }
    }
    Ok(format!("12 cases bit-exact, slowest {slowest:.2} s < 60 s"))
}

fn wrong_password() -> Outcome {
    let p = params(3, 1, 5);
    let stats = wrong_password_experiment(&p, 3, MC_TRIALS, 11).map_err(|e| e.to_string())?;
    let rate = stats.accepted as f64 / stats.trials as f64;
    let counts = stats.first_block_counts.ok_or("no histogram")?;
    let chi = chi_square_uniform(&counts);
    let critical = chi_square_critical(counts.len() - 1, SIGNIFICANCE);

    let d = deploy(params(3, 1, 521), |_| {});
    let owner = d.owner(OWNER);
    let id = owner.register(&random_data(200, 2), PW).map_err(|e| e.to_string())?;
    let mut accepted = 0;
    for i in 0..1000u32 {
        match owner.reconstruct(id, format!("guess {i}").as_bytes(), None) {
            Err(OwnerError::AuthenticationFailed) => {}
            Ok(_) => accepted += 1,
            Err(e) => return Err(format!("attempt {i}: {e}")),
        }
    }
    check(
        rate <= stats.limit && chi <= critical && accepted == 0 && counts.len() == 31,
        format!(
            "q=31: rate {rate:.5} <= {:.5}, chi2 {chi:.1} <= {critical:.1} ({} dof); m=521: {accepted}/1000 accepted",
            stats.limit,
            counts.len() - 1
        ),
    )
}

fn forgery() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (m, l, seed) in [(5u32, 3usize, 21u64), (13, 10, 22)] {
        let cfg = ForgeryConfig::new(params(3, 1, m), l, OffsetAttack::Random);
        let s = forgery_experiment(&cfg, MC_TRIALS, seed).map_err(|e| e.to_string())?;
        ok &= s.rate() <= s.limit;
        parts.push(format!("q={}, l={l}: {:.5} <= {:.5}", (1u64 << m) - 1, s.rate(), s.limit));
    }
    check(ok, parts.join("; "))
}

fn hand_scenario(p: u64, guess: u64) -> AttackScenario {
    let f = MersennePrime::new(5).unwrap();
    AttackScenario::new(
        params(3, 1, 5),
        vec![3],
        vec![1, 2],
        SharePolynomial::from_u64s(&f, &[p, 4]).unwrap(),
        SharePolynomial::from_u64s(&f, &[5, 3, 2]).unwrap(),
        SharePolynomial::from_u64s(&f, &[guess, 4]).unwrap(),
    )
    .unwrap()
}

fn determinant() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let mut disagree = 0;
    let mut total = 0;
    for t in [1u32, 2] {
        let p = params(12, t, 5);
        for _ in 0..1000 {
            let s = AttackScenario::random(p.clone(), rng.gen_bool(0.9), &mut rng).map_err(|e| e.to_string())?;
            let brute = det_m_bruteforce(&DetMInput::from_scenario(&s)).map_err(|e| e.to_string())?;
            total += 1;
            disagree += usize::from(brute != det_m_closed_form(&s).map_err(|e| e.to_string())?);
        }
    }
    let mut iff_violations = 0;
    for p in 0..31 {
        for g in 0..31 {
            let det = det_m_bruteforce(&DetMInput::from_scenario(&hand_scenario(p, g))).map_err(|e| e.to_string())?;
            iff_violations += usize::from(det.is_zero() != (p == g));
        }
    }
    let hand = hand_scenario(2, 1);
    let brute = det_m_bruteforce(&DetMInput::from_scenario(&hand)).map_err(|e| e.to_string())?.to_u64();
    let closed = det_m_closed_form(&hand).map_err(|e| e.to_string())?.to_u64();
    check(
        disagree == 0 && iff_violations == 0 && brute == Some(25) && closed == Some(25),
        format!(
            "{disagree}/{total} disagreements; {iff_violations}/961 zero-iff-correct violations; hand instance {brute:?}/{closed:?}, expected 25"
        ),
    )
}

fn consume_once() -> Outcome {
    let d = deploy(params(4, 1, 521), |c| c.capture = true);
    let owner = d.owner(OWNER);
    let data = random_data(300, 5);
    let id = owner.register(&data, PW).map_err(|e| e.to_string())?;
    let quorum = q(&[1, 2, 3], 4);

    let ok = AtomicUsize::new(0);
    thread::scope(|s| {
        for _ in 0..100 {
            s.spawn(|| {
                if let Ok(r) = owner.reconstruct(id, PW, Some(&quorum)) {
                    if r.data == data {
                        ok.fetch_add(1, Ordering::SeqCst);
                    }
                }
            });
        }
    });
    let ok = ok.into_inner();
    let mut duplicates = 0;
    let mut served = 0;
    for j in 1..=3 {
        let slots = d.server(j).served_slots();
        served += slots.len();
        duplicates += slots.len() - slots.iter().collect::<HashSet<_>>().len();
    }

    // The same request twice: different vectors, both decode.
    let traffic = d.traffic().unwrap();
    let mut vectors = Vec::new();
    for _ in 0..2 {
        traffic.clear();
        let r = owner.reconstruct(id, PW, Some(&quorum)).map_err(|e| e.to_string())?;
        if r.data != data {
            return Err("repeat did not decode".into());
        }
        let resp = traffic
            .messages()
            .into_iter()
            .find(|m| m.from == server_app(1) && m.msg_type == wire::RECON_RESPONSE)
            .ok_or("no response captured")?;
        match Message::decode(resp.msg_type, &resp.payload).map_err(|e| e.to_string())? {
            Message::ReconResponse(r) => vectors.push(r.values),
            _ => return Err("unexpected message".into()),
        }
    }
    let differ = vectors[0] != vectors[1];
    check(
        ok == 100 && duplicates == 0 && served == 300 && differ,
        format!("{ok}/100 concurrent attempts decoded, {duplicates} duplicate slots in {served} served; repeat vectors differ: {differ}"),
    )
}

fn quorum_rule() -> Outcome {
    let d = deploy(params(4, 1, 521), |c| c.server.lazy_precompute = false);
    let owner = d.owner(OWNER);
    let data = random_data(500, 6);
    let id = owner.register(&data, PW).map_err(|e| e.to_string())?;
    let good = q(&[1, 2, 3], 4);
    owner.precompute(id, &good, 2).map_err(|e| e.to_string())?;
    let before: Vec<_> = (1..=4).map(|j| d.server(j).pool_snapshot(OWNER, id, &good)).collect();

    let mut rejected = 0;
    let mut sent = 0;
    for bad in [vec![1, 2], vec![1, 2, 3, 4], vec![1]] {
        for to in bad.clone() {
            sent += 1;
            let msg = Message::ReconRequest(ReconRequest {
                owner: OWNER,
                data_id: id,
                n: 4,
                quorum: q(&bad, 4),
                slot: None,
                password_share: owner.params().field().from_u64(9),
            });
            if let Err(e) = owner.messenger().call(&server_app(to), &msg, "reconstruction") {
                rejected += usize::from(e.code() == Some(ErrorCode::ImproperQuorum));
            }
        }
    }
    let after: Vec<_> = (1..=4).map(|j| d.server(j).pool_snapshot(OWNER, id, &good)).collect();
    let untouched = before == after && (1..=4).all(|j| d.server(j).served_slots().is_empty());

    let mut quorums_ok = 0;
    for members in [[1, 2, 3], [1, 2, 4], [1, 3, 4], [2, 3, 4]] {
        let quorum = q(&members, 4);
        if members != [1, 2, 3] {
            owner.precompute(id, &quorum, 1).map_err(|e| e.to_string())?;
        }
        if owner.reconstruct(id, PW, Some(&quorum)).map(|r| r.data == data).unwrap_or(false) {
            quorums_ok += 1;
        }
    }
    check(
        rejected == sent && untouched && quorums_ok == 4,
        format!("{rejected}/{sent} improper requests rejected, pools untouched: {untouched}; {quorums_ok}/4 quorums reconstruct"),
    )
}

fn transport() -> Outcome {
    let d = deploy(params(4, 1, 521), |_| {});
    let owner = d.owner(OWNER);
    let id = owner.register(&random_data(6955, 7), PW).map_err(|e| e.to_string())?;
    owner.reconstruct(id, PW, None).map_err(|e| e.to_string())?;
    let pad_overlaps = d.usage_audit().overlaps();
    let source_overlaps = find_overlaps(&d.key_network().delivered_sources()).len();
    let flips = bit_flip_experiment(10_000, 71);
    let toy = toy_forgery_line(10, MC_TRIALS, 72);
    check(
        pad_overlaps == 0 && source_overlaps == 0 && flips == 0 && toy.pass,
        format!(
            "{pad_overlaps} pad overlaps in {} uses, {source_overlaps} key source overlaps; {flips}/10000 tampered frames accepted; toy tag forgery {:.5} <= {:.5}",
            d.usage_audit().len(),
            toy.statistic,
            toy.bound
        ),
    )
}

fn key_supply() -> Outcome {
    let chain = |on_demand: bool| {
        let mut cfg = KeyNetworkConfig::new(Topology::chain(4, 10_000, 17))
            .with_app("a", 1)
            .with_app("b", 2)
            .with_app("c", 3)
            .with_app("d", 4);
        cfg.on_demand = on_demand;
        cfg.generation_chunk = 4096;
        KeyNetwork::with_clock(cfg, NetworkClock::manual(1_700_000_000_000)).unwrap()
    };

    let net = chain(true);
    let apps = ["a", "b", "c", "d"];
    let links = ["L1-2", "L2-3", "L3-4"];
    let mut rng = ChaCha20Rng::seed_from_u64(81);
    let mut issued = Vec::new();
    let mut unbalanced = 0;
    for _ in 0..1000 {
        match rng.gen_range(0..6) {
            0 => {
                net.generate_link_keys(links[rng.gen_range(0..3)], rng.gen_range(1..3000)).map_err(|e| e.to_string())?;
            }
            1 | 2 => {
                let (a, b) = (apps[rng.gen_range(0..4)], apps[rng.gen_range(0..4)]);
                let f = net.ksa_request(a, b, rng.gen_range(1..2000), "random").map_err(|e| e.to_string())?;
                issued.push((a, f.id));
            }
            3 => {
                let _ = net.relay_key(rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..500));
            }
            4 => {
                if let Some(&(app, id)) = issued.get(rng.gen_range(0..issued.len().max(1))) {
                    let _ = net.mark_consumed(app, &id);
                }
            }
            _ => {
                net.clock().advance(rng.gen_range(0..4 * 3_600_000));
                net.expire_keys(net.clock().now()).map_err(|e| e.to_string())?;
            }
        }
        unbalanced += net.ledgers().iter().filter(|(_, l)| !l.balanced()).count();
    }

    let relay = chain(false);
    for link in links {
        relay.generate_link_keys(link, 5000).map_err(|e| e.to_string())?;
    }
    let n = 1234u64;
    let (src, dst) = relay.relay_key(1, 4, n).map_err(|e| e.to_string())?;
    let per_hop: Vec<u64> = relay.ledgers().iter().map(|(_, l)| l.consumed).collect();
    let total: u64 = per_hop.iter().sum();
    check(
        unbalanced == 0 && src == dst && src.len() == n as usize && total == n * 3 && per_hop.iter().all(|&c| c == n),
        format!("{unbalanced} unbalanced ledgers over 1000 ops; 3-hop relay identical: {}; consumed {total} = {n} x 3", src == dst),
    )
}

fn key_ratio() -> Outcome {
    let d = deploy(params(4, 1, 521), |_| {});
    let owner = d.owner(OWNER);
    let id = owner.register(&random_data(6955, 8), PW).map_err(|e| e.to_string())?;
    owner.reconstruct(id, PW, None).map_err(|e| e.to_string())?;
    let usage = d.key_usage();
    let total: u64 = usage.values().sum();
    let ratio = total as f64 / 6955.0;
    check(
        (10.0..=60.0).contains(&ratio),
        format!("{total} key octets for 6955 B, ratio {ratio:.1} in [10, 60] ({usage:?})"),
    )
}

fn block_counts() -> Outcome {
    let cfg = BenchConfig {
        repetitions: 1,
        ..BenchConfig::default()
    };
    let mut mismatches = Vec::new();
    let mut l_6955_521 = None;
    for size in SIZES {
        for m in EXPONENTS {
            let runs = run_case(&cfg, size, m).map_err(|e| e.to_string())?;
            let expected = (8 * size).div_ceil(m as u64 - 1);
            if runs.l != expected {
                mismatches.push(format!("({size}, {m}): {} != {expected}", runs.l));
            }
            if (size, m) == (6955, 521) {
                l_6955_521 = Some(runs.l);
            }
        }
    }
    check(
        mismatches.is_empty() && l_6955_521 == Some(107),
        format!(
            "{} grid points, mismatches {mismatches:?}; l(6955 B, 521) = {l_6955_521:?}",
            SIZES.len() * EXPONENTS.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("round trip", round_trips),
        ("wrong password", wrong_password),
        ("forgery detection", forgery),
        ("determinant", determinant),
        ("consume-once", consume_once),
        ("quorum rule", quorum_rule),
        ("transport", transport),
        ("key supply", key_supply),
        ("key consumption ratio", key_ratio),
        ("block counts", block_counts),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}) [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail}) [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
