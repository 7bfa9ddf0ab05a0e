use std::collections::HashSet;
use std::sync::Arc;
use std::thread;

use qss_transport::keysupply::{find_overlaps, KeyNetwork, KeyNetworkConfig, NetworkClock, Topology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const START: u64 = 1_700_000_000_000;

fn chain_network(on_demand: bool) -> KeyNetwork {
    let mut cfg = KeyNetworkConfig::new(Topology::chain(4, 10_000, 17))
        .with_app("a", 1)
        .with_app("b", 2)
        .with_app("c", 3)
        .with_app("d", 4);
    cfg.on_demand = on_demand;
    cfg.generation_chunk = 4096;
    KeyNetwork::with_clock(cfg, NetworkClock::manual(START)).unwrap()
}

#[test]
fn three_hop_relay_is_identical_and_spends_each_hop() {
    let net = chain_network(false);
    for link in ["L1-2", "L2-3", "L3-4"] {
        net.generate_link_keys(link, 5000).unwrap();
    }
    let n = 1234;
    let (src, dst) = net.relay_key(1, 4, n).unwrap();
    assert_eq!(src.len(), n as usize);
    assert_eq!(src, dst);
    let consumed: u64 = net.ledgers().iter().map(|(_, l)| l.consumed).sum();
    assert_eq!(consumed, n * 3);
    for (_, l) in net.ledgers() {
        assert_eq!((l.consumed, l.pooled), (n, 5000 - n));
    }
}

#[test]
fn relay_short_on_one_hop_consumes_nothing() {
    let net = chain_network(false);
    net.generate_link_keys("L1-2", 100).unwrap();
    net.generate_link_keys("L2-3", 100).unwrap();
    net.generate_link_keys("L3-4", 99).unwrap();
    let err = net.relay_key(1, 4, 100).unwrap_err();
    assert!(err.is_retryable());
    assert!(net.ledgers().iter().all(|(_, l)| l.consumed == 0));
}

#[test]
fn ledger_balances_after_random_operations() {
    let net = chain_network(true);
    let apps = ["a", "b", "c", "d"];
    let links = ["L1-2", "L2-3", "L3-4"];
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let mut issued = Vec::new();
    for _ in 0..1000 {
        match rng.gen_range(0..6) {
            0 => {
                net.generate_link_keys(links[rng.gen_range(0..3)], rng.gen_range(1..3000)).unwrap();
            }
            1 | 2 => {
                let a = apps[rng.gen_range(0..4)];
                let b = apps[rng.gen_range(0..4)];
                let f = net.ksa_request(a, b, rng.gen_range(1..2000), "random").unwrap();
                issued.push((a, f.id));
            }
            3 => {
                let (s, d) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
                let _ = net.relay_key(s, d, rng.gen_range(1..500));
            }
            4 => {
                if let Some(&(app, id)) = issued.get(rng.gen_range(0..issued.len().max(1))) {
                    let _ = net.mark_consumed(app, &id);
                }
            }
            _ => {
                net.clock().advance(rng.gen_range(0..4 * 3_600_000));
                net.expire_keys(net.clock().now()).unwrap();
            }
        }
        for (name, l) in net.ledgers() {
            assert!(l.balanced(), "{name}: {l:?}");
        }
    }
    let ids: HashSet<_> = issued.iter().map(|(_, id)| *id).collect();
    assert_eq!(ids.len(), issued.len());
}

#[test]
fn concurrent_requests_never_share_key_material() {
    let cfg = KeyNetworkConfig::new(Topology::testbed(3))
        .with_app("owner", 1)
        .with_app("s2", 2)
        .with_app("s3", 3)
        .with_app("s4", 4);
    let net = Arc::new(KeyNetwork::new(cfg).unwrap());
    let peers = ["s2", "s3", "s4", "owner"];
    let handles: Vec<_> = (0..8)
        .map(|w| {
            let net = net.clone();
            thread::spawn(move || {
                (0..125)
                    .map(|i| {
                        let peer = peers[(w + i) % 4];
                        let f = net.ksa_request("owner", peer, 64 + (i as u64 % 7) * 13, "stress").unwrap();
                        let copy = net.ksa_fetch(peer, &f.id).unwrap();
                        assert_eq!(copy.octets, f.octets);
                        f.id
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let ids: Vec<_> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    assert_eq!(ids.len(), 1000);
    assert_eq!(ids.iter().collect::<HashSet<_>>().len(), 1000);
    assert!(find_overlaps(&net.delivered_sources()).is_empty());
}

fn correlation(x: &[u8], y: &[u8]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (a as f64 - mx, b as f64 - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn distinct_links_produce_uncorrelated_streams() {
    let net = chain_network(false);
    let n = 100_000;
    net.generate_link_keys("L1-2", n).unwrap();
    net.generate_link_keys("L2-3", n).unwrap();
    let a = net.pool_snapshot("L1-2", 2).unwrap();
    let b = net.pool_snapshot("L2-3", 2).unwrap();
    assert_eq!(a, net.pool_snapshot("L1-2", 1).unwrap());
    // Under independence r * sqrt(N) is approximately standard normal at
    // every lag, so the sum of squares over lags is chi-square.
    let lags = 64;
    let stat: f64 = (0..lags)
        .map(|lag| {
            let r = correlation(&a[lag..], &b[..b.len() - lag]);
            r * r * (n as usize - lag) as f64
        })
        .sum();
    let critical = ChiSquared::new(lags as f64).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "{stat} >= {critical}");
}

#[test]
fn generation_is_throttled_by_link_rate() {
    let net = chain_network(false);
    let ready = net.generate_link_keys("L1-2", 25_000).unwrap();
    assert_eq!(ready, START + 2_500);
    assert_eq!(net.clock().now(), START + 2_500);
}
