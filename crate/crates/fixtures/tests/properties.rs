use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4};

use covertscope::ingest::{parse_pcap, reassemble_streams};
use covertscope::needles::{apply_chain, Transform};
use covertscope_fixtures::ciphers::{self, CipherSpec};
use covertscope_fixtures::net::{tcp_conversation, Capture, IpIds, Segmentation, Side};
use covertscope_fixtures::transform::{self, Step};
use covertscope_fixtures::{build, FixtureManifest};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEPS: [Step; 11] = [
    Step::Capitalize,
    Step::Upper,
    Step::Lower,
    Step::Base64,
    Step::Hex,
    Step::Md5Hex,
    Step::Sha1Hex,
    Step::Sha256Hex,
    Step::Md5Raw,
    Step::Sha1Raw,
    Step::Sha256Raw,
];

const SYMMETRIC: [&str; 7] = [
    "AES/CBC/PKCS5Padding",
    "AES/ECB/PKCS5Padding",
    "AES/GCM/NoPadding",
    "DES/CBC/PKCS5Padding",
    "DESede/CBC/PKCS5Padding",
    "DESede/ECB/PKCS5Padding",
    "RC4",
];

proptest! {
    // the generator and the inspector transform values independently; they
    // must agree on every chain the generator can plant
    #[test]
    fn generator_and_inspector_transforms_agree(value in "[ -~]{0,24}", idx in prop::collection::vec(0usize..11, 0..4)) {
        let steps: Vec<Step> = idx.iter().map(|&i| STEPS[i]).collect();
        prop_assume!(transform::is_searchable(&steps));
        let transforms: Vec<Transform> = steps.iter().map(|s| serde_json::from_value(serde_json::to_value(s).unwrap()).unwrap()).collect();
        prop_assert_eq!(transform::apply(&steps, value.as_bytes()), apply_chain(&transforms, value.as_bytes()));
    }

    #[test]
    fn symmetric_ciphers_round_trip(alg in prop::sample::select(SYMMETRIC.to_vec()), plaintext in prop::collection::vec(any::<u8>(), 0..200), seed in any::<u64>()) {
        let spec = CipherSpec::parse(alg, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let key = ciphers::generate_key(&spec, &mut rng).unwrap();
        let iv: Vec<u8> = (0..spec.iv_len()).map(|i| (seed >> (i % 8)) as u8).collect();
        let ct = ciphers::encrypt(&spec, &key.logged, &iv, &plaintext).unwrap();
        prop_assert_eq!(ciphers::decrypt(&spec, &key, &iv, &ct).unwrap(), plaintext);
    }

    #[test]
    fn tcp_streams_survive_any_segmentation(
        msgs in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..4000), 1..5),
        mss in prop::option::of(100usize..5000),
        reorder in any::<bool>(),
        duplicate in any::<bool>(),
        vary_sizes in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let client = SocketAddrV4::new(Ipv4Addr::new(10, 0, 0, 2), 40000);
        let server = SocketAddrV4::new(Ipv4Addr::new(203, 0, 113, 4), 443);
        let policy = Segmentation { mtu: 1500, mss, reorder, duplicate, vary_sizes };
        let tagged: Vec<(Side, Vec<u8>)> = msgs.iter().enumerate().map(|(i, m)| (if i % 2 == 0 { Side::Client } else { Side::Server }, m.clone())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut capture = Capture::default();
        capture.push(tcp_conversation(client, server, &tagged, &policy, &mut IpIds::default(), &mut rng), 10.0, 0.001);
        let parsed = parse_pcap(&capture.to_pcap()).unwrap();
        let flows = reassemble_streams(&parsed.datagrams).flows;
        prop_assert_eq!(flows.len(), 1);
        prop_assert_eq!(flows[0].client, Some(SocketAddr::V4(client)));
        let side = |s: Side| tagged.iter().filter(|(t, _)| *t == s).flat_map(|(_, b)| b.clone()).collect::<Vec<u8>>();
        prop_assert_eq!(&flows[0].payload_out, &side(Side::Client));
        prop_assert_eq!(&flows[0].payload_in, &side(Side::Server));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generation_is_a_function_of_the_manifest(seed in any::<u64>()) {
        let m = FixtureManifest::clean(seed);
        let a = build(&m).unwrap();
        let b = build(&m).unwrap();
        prop_assert_eq!(a.files, b.files);
        prop_assert_eq!(a.expected, b.expected);
    }
}
