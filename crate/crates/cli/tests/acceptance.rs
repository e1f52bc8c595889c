//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use covertscope::audit::amplification::{AmpMode, ProbeConfig, Ratio, EXCLUDED_PORTS};
use covertscope::cryptolog::assemble_operations;
use covertscope::cryptolog::keys::Fixedness;
use covertscope::ingest::{ingest_bundle, parse_pcap, reassemble_streams, AnalysisBundle};
use covertscope::inspector::channel::{classify_channel, ChannelProtocol, Observation};
use covertscope::inspector::LocationKind;
use covertscope::needles::DataType;
use covertscope::pipeline::{analyze_corpus, InspectOptions};
use covertscope::report::{render_report, CorpusReport, Format};
use covertscope::search::Dictionary;
use covertscope_fixtures::ciphers::{self, CipherSpec};
use covertscope_fixtures::manifest::{Channel, FixtureManifest, Protocol};
use covertscope_fixtures::net::{tcp_conversation, udp_exchange, Capture, IpIds, Segmentation, Side};
use covertscope_fixtures::{generate_bundle, run_amplifier_server, score_run, Expected};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const ROUNDTRIP: &str = include_str!("../../fixtures/manifests/roundtrip.json");

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn manifest(text: &str) -> FixtureManifest {
    FixtureManifest::from_json(text).expect("acceptance manifest parses")
}

fn generate(m: &FixtureManifest, dir: &Path) -> Result<(Expected, AnalysisBundle), String> {
    let expected = generate_bundle(m, dir).map_err(|e| e.to_string())?;
    let outcome = ingest_bundle(dir).map_err(|e| e.to_string())?;
    Ok((expected, outcome.bundle))
}

fn analyze(bundles: &[AnalysisBundle], opts: &InspectOptions) -> Result<CorpusReport, String> {
    analyze_corpus(bundles, opts).map_err(|e| e.to_string())
}

// ---- 1

fn fixture_round_trip() -> Outcome {
    let m = manifest(ROUNDTRIP);
    let categories: BTreeSet<String> = m
        .planted_leaks
        .iter()
        .map(|l| format!("{:?}", l.pii_type.parse::<DataType>().map(|t| t.category()).unwrap()))
        .collect();
    let protocols: BTreeSet<Protocol> = m.planted_leaks.iter().map(|l| l.protocol).collect();
    let depths: BTreeSet<usize> = m
        .planted_leaks
        .iter()
        .filter_map(|l| match &l.channel {
            Channel::Custom(c) => Some(c.layers.len()),
            Channel::Regular => None,
        })
        .collect();
    let compressed = m.planted_leaks.iter().any(|l| matches!(&l.channel, Channel::Custom(c) if c.compression.is_some()));
    let regular = m.planted_leaks.iter().any(|l| matches!(l.channel, Channel::Regular));
    check(m.planted_leaks.len() >= 30, || format!("only {} leaks planted", m.planted_leaks.len()))?;
    check(categories.len() == 5, || format!("categories {categories:?}"))?;
    check(protocols.len() == 4, || format!("protocols {protocols:?}"))?;
    check(depths == BTreeSet::from([1, 2, 3]) && compressed && regular, || format!("depths {depths:?}, gzip {compressed}"))?;

    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (expected, bundle) = generate(&m, dir.path())?;
    let corpus = analyze(&[bundle], &InspectOptions::default())?;
    let elapsed = started.elapsed();
    let card = score_run(&expected, &corpus.runs[0], &corpus, InspectOptions::default().amp_threshold);
    for (family, s) in card.families() {
        check(s.is_exact(), || format!("{family}: missing {:?}, unexpected {:?}", s.missing, s.unexpected))?;
    }
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} leaks, recall {:.0}%, precision {:.0}%, {:.2} s",
        card.leaks.expected,
        card.leaks.recall() * 100.0,
        card.leaks.precision() * 100.0,
        elapsed.as_secs_f64()
    ))
}

// ---- 2

/// Hash-set substring oracle: every position is checked against every
/// pattern length, skipping positions whose two-byte prefix no pattern has.
fn naive_hits(payload: &[u8], patterns: &BTreeSet<Vec<u8>>) -> Vec<(usize, Vec<u8>)> {
    let mut by_len: BTreeMap<usize, HashSet<&[u8]>> = BTreeMap::new();
    let mut prefixes = vec![false; 1 << 16];
    let mut singles = [false; 256];
    for p in patterns {
        by_len.entry(p.len()).or_default().insert(p);
        if p.len() == 1 {
            singles[p[0] as usize] = true;
        } else {
            prefixes[(p[0] as usize) << 8 | p[1] as usize] = true;
        }
    }
    let mut out = Vec::new();
    for i in 0..payload.len() {
        if singles[payload[i] as usize] {
            out.push((i, vec![payload[i]]));
        }
        if i + 1 >= payload.len() || !prefixes[(payload[i] as usize) << 8 | payload[i + 1] as usize] {
            continue;
        }
        for (&len, set) in by_len.range(2..) {
            if i + len > payload.len() {
                break;
            }
            if set.contains(&payload[i..i + len]) {
                out.push((i, payload[i..i + len].to_vec()));
            }
        }
    }
    out.sort();
    out
}

fn search_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ea7c4);
    let mut total_hits = 0usize;
    let mut max_patterns = 0;
    for trial in 0..1000 {
        let len = rng.gen_range(0..=64 * 1024);
        // every tenth payload uses a four-letter alphabet for dense overlaps
        let small = trial % 10 == 0;
        let payload: Vec<u8> = (0..len).map(|_| if small { b"acgt"[rng.gen_range(0..4)] } else { rng.gen() }).collect();
        let n = rng.gen_range(1..=5000);
        max_patterns = max_patterns.max(n);
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let plen = rng.gen_range(1..=if small { 12 } else { 24 });
            let p: Vec<u8> = if !payload.is_empty() && rng.gen_bool(0.5) && plen <= payload.len() {
                let at = rng.gen_range(0..=payload.len() - plen);
                payload[at..at + plen].to_vec()
            } else {
                (0..plen).map(|_| if small { b"acgt"[rng.gen_range(0..4)] } else { rng.gen() }).collect()
            };
            entries.push(p);
        }
        let dict = Dictionary::new(entries.iter().cloned().map(|p| (p, ())));
        let mut got: Vec<(usize, Vec<u8>)> = dict.find_all(&payload).into_iter().map(|h| (h.start, dict.pattern(h.pattern).to_vec())).collect();
        got.sort();
        let want = naive_hits(&payload, &entries.into_iter().collect());
        check(got == want, || format!("trial {trial}: {} hits vs oracle {}", got.len(), want.len()))?;
        total_hits += want.len();
    }
    Ok(format!("1000 payloads, up to {max_patterns} patterns, {total_hits} hits, 0 discrepancies"))
}

// ---- 3

fn reassembly() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7cb);
    let client = SocketAddrV4::new(Ipv4Addr::new(10, 0, 0, 2), 41000);
    let server = SocketAddrV4::new(Ipv4Addr::new(198, 51, 100, 9), 8443);
    let uclient = SocketAddrV4::new(Ipv4Addr::new(10, 0, 0, 2), 41001);
    let userver = SocketAddrV4::new(Ipv4Addr::new(198, 51, 100, 9), 9999);
    for trial in 0..500 {
        let policy = Segmentation {
            mtu: 1500,
            mss: rng.gen_bool(0.3).then(|| rng.gen_range(1461..6000)),
            reorder: true,
            duplicate: true,
            vary_sizes: rng.gen_bool(0.5),
        };
        let mut tcp_msgs = Vec::new();
        for i in 0..rng.gen_range(1..6) {
            let side = if i % 2 == 0 { Side::Client } else { Side::Server };
            let bytes: Vec<u8> = (0..rng.gen_range(1..12_000)).map(|_| rng.gen()).collect();
            tcp_msgs.push((side, bytes));
        }
        let mut udp_msgs = vec![(Side::Client, (0..rng.gen_range(1..9000)).map(|_| rng.gen()).collect::<Vec<u8>>())];
        udp_msgs.push((Side::Server, (0..rng.gen_range(1..9000)).map(|_| rng.gen()).collect()));
        udp_msgs.push((Side::Client, (0..rng.gen_range(1..4000)).map(|_| rng.gen()).collect()));

        let mut ids = IpIds::default();
        let mut capture = Capture::default();
        let t = capture.push(tcp_conversation(client, server, &tcp_msgs, &policy, &mut ids, &mut rng), 100.0, 0.0001);
        capture.push(udp_exchange(uclient, userver, &udp_msgs, &policy, &mut ids, &mut rng), t + 0.01, 0.0001);
        let parsed = parse_pcap(&capture.to_pcap()).map_err(|e| e.to_string())?;
        let flows = reassemble_streams(&parsed.datagrams).flows;

        let concat = |msgs: &[(Side, Vec<u8>)], side: Side| msgs.iter().filter(|(s, _)| *s == side).flat_map(|(_, b)| b.clone()).collect::<Vec<u8>>();
        let find = |c: SocketAddrV4| flows.iter().find(|f| f.client == Some(SocketAddr::V4(c)));
        let tcp = find(client).ok_or_else(|| format!("trial {trial}: TCP flow missing"))?;
        check(tcp.payload_out == concat(&tcp_msgs, Side::Client) && tcp.payload_in == concat(&tcp_msgs, Side::Server), || {
            format!("trial {trial}: TCP streams differ ({policy:?})")
        })?;
        let udp = find(uclient).ok_or_else(|| format!("trial {trial}: UDP flow missing"))?;
        check(udp.payload_out == concat(&udp_msgs, Side::Client) && udp.payload_in == concat(&udp_msgs, Side::Server), || {
            format!("trial {trial}: UDP payloads differ ({policy:?})")
        })?;
    }
    Ok("500 segmentations with reordering and duplication, all streams byte-identical".into())
}

// ---- 4

fn multipart_replay() -> Outcome {
    let mut m = manifest(ROUNDTRIP);
    m.planted_operations.extend(
        [
            "AES/CBC/PKCS5Padding",
            "AES/ECB/PKCS5Padding",
            "DES/CBC/PKCS5Padding",
            "DESede/ECB/PKCS5Padding",
            "RC4",
            "AES/GCM/NoPadding",
        ]
        .iter()
        .map(|a| serde_json::from_value(serde_json::json!({"algorithm": a, "plaintext_len": 333, "updates": 5})).unwrap()),
    );
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, bundle) = generate(&m, dir.path())?;
    let ops = assemble_operations(&bundle.cipher_events);
    let mut multi = 0;
    for op in &ops {
        let spec = CipherSpec::parse(&op.algorithm.raw, op.algorithm.rsa_bits).map_err(|e| e.to_string())?;
        let key = op.key.as_deref().ok_or_else(|| format!("op {} has no key", op.op_id))?;
        let again = ciphers::encrypt(&spec, key, op.iv.as_deref().unwrap_or_default(), &op.plaintext).map_err(|e| e.to_string())?;
        check(again == op.ciphertext, || format!("op {} ({}) differs after re-encryption", op.op_id, op.algorithm.raw))?;
        if op.source_events.len() > 3 {
            multi += 1;
        }
    }
    check(multi > 0, || "no multi-part operation was assembled".into())?;
    Ok(format!("{} operations ({multi} multi-part) re-encrypt byte-exactly", ops.len()))
}

// ---- 5

fn channel_taxonomy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc4a);
    let kinds = [LocationKind::Http, LocationKind::Https, LocationKind::NonHttp, LocationKind::File];
    for trial in 0..1000 {
        let obs: Vec<Observation<u8>> = (0..rng.gen_range(0..40))
            .map(|_| {
                (
                    rng.gen_range(0..6u8),
                    kinds[rng.gen_range(0..4)],
                    format!("h{}", rng.gen_range(0..5)),
                    rng.gen_bool(0.4),
                )
            })
            .collect();
        let s = classify_channel(obs);
        let only = s.iter().filter(|c| c.is_only_custom()).count();
        let some = s.iter().filter(|c| c.is_custom_for_some_hosts()).count();
        let custom = s.iter().filter(|c| c.is_custom_encrypted()).count();
        check(only <= some && some <= custom, || format!("trial {trial}: {only} / {some} / {custom}"))?;
    }

    // one data type per class, planted over HTTPS
    let m = manifest(
        r#"{"seed": 77, "system_traffic": false, "planted_leaks": [
            {"pii_type": "Device ID", "protocol": "https", "host": "a.example"},
            {"pii_type": "Advertising ID", "protocol": "https", "host": "a.example"},
            {"pii_type": "Advertising ID", "protocol": "https", "host": "a.example",
             "channel": {"custom": {"layers": ["AES/CBC/PKCS5Padding"]}}},
            {"pii_type": "Bootloader", "protocol": "https", "host": "a.example"},
            {"pii_type": "Bootloader", "protocol": "https", "host": "b.example",
             "channel": {"custom": {"layers": ["AES/CBC/PKCS5Padding"]}}},
            {"pii_type": "CPU Model", "protocol": "https", "host": "b.example",
             "channel": {"custom": {"layers": ["AES/CBC/PKCS5Padding"]}}}
        ]}"#,
    );
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, bundle) = generate(&m, dir.path())?;
    let corpus = analyze(&[bundle], &InspectOptions::default())?;
    let summaries = classify_channel(corpus.runs[0].findings.iter().map(|f| (f.pii_type.label(), f.location.kind, f.host.clone(), f.custom_encrypted)));
    let class = |t: &str| {
        let s = summaries.iter().find(|s| s.subject == t && s.protocol == ChannelProtocol::Https)?;
        Some([s.is_regular(), s.is_custom_encrypted(), s.is_custom_for_some_hosts(), s.is_only_custom()])
    };
    let want = [
        ("Device ID", [true, false, false, false]),
        ("Advertising ID", [false, true, false, false]),
        ("Bootloader", [false, true, true, false]),
        ("CPU Model", [false, true, true, true]),
    ];
    for (t, w) in want {
        check(class(t) == Some(w), || format!("{t}: got {:?}, want {w:?}", class(t)))?;
    }
    Ok("1000/1000 random sets nest; Regular, Custom Encrypted, Some Hosts and Only Custom reproduced".into())
}

// ---- 6

fn key_fixedness() -> Outcome {
    const SAME: &str = "00112233445566778899aabbccddeeff";
    const CROSS: &str = "0f1e2d3c4b5a69788796a5b4c3d2e1f0";
    const HARD: [(&str, &str); 3] = [
        ("plain", "a1a2a3a4a5a6a7a8a9aaabacadaeafb0"),
        ("base64", "b1b2b3b4b5b6b7b8b9babbbcbdbebfc0"),
        ("hex_upper", "c1c2c3c4c5c6c7c8c9cacbcccdcecfd0"),
    ];
    let dirs: Vec<_> = (0..4).map(|_| tempfile::tempdir()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let mut bundles = Vec::new();
    let mut session_keys = Vec::new();
    for (i, dir) in dirs.iter().enumerate() {
        let device = if i < 2 { "device-a" } else { "device-b" };
        let mut ops = vec![
            serde_json::json!({"algorithm": "AES/CBC/PKCS5Padding"}),
            serde_json::json!({"algorithm": "AES/CBC/PKCS5Padding", "key_policy": {"fixed": {"key": CROSS}}}),
        ];
        if device == "device-a" {
            ops.push(serde_json::json!({"algorithm": "AES/CBC/PKCS5Padding", "key_policy": {"fixed": {"key": SAME}}}));
        }
        if i < 3 {
            let (enc, key) = HARD[i];
            ops.push(serde_json::json!({"algorithm": "AES/CBC/PKCS5Padding",
                "key_policy": {"hardcoded": {"key": key, "encoding": enc, "path": format!("assets/k{i}.bin")}}}));
        }
        let m: FixtureManifest = serde_json::from_value(serde_json::json!({
            "seed": 600 + i, "app_id": "com.example.keys", "run_id": format!("run-{}", i % 2 + 1),
            "device_id": device, "planted_operations": ops
        }))
        .map_err(|e| e.to_string())?;
        let (_, bundle) = generate(&m, dir.path())?;
        session_keys.push(assemble_operations(&bundle.cipher_events)[0].key.clone().unwrap_or_default());
        bundles.push(bundle);
    }
    let corpus = analyze(&bundles, &InspectOptions::default())?;
    // the report drops raw keys, so records are matched by SHA-256 digest
    let of = |key: &[u8]| {
        let digest = hex::encode(Sha256::digest(key));
        corpus.key_records.iter().find(|r| r.key_digest == digest).map(|r| r.fixedness)
    };
    let mut correct = 0;
    let mut wrong = Vec::new();
    let mut expect = |label: &str, key: Vec<u8>, want: Fixedness| {
        if of(&key) == Some(want) {
            correct += 1;
        } else {
            wrong.push(format!("{label}: {:?}", of(&key)));
        }
    };
    expect("session", session_keys[0].clone(), Fixedness::Session);
    expect("same device", hex::decode(SAME).unwrap(), Fixedness::FixedSameDevice);
    expect("cross device", hex::decode(CROSS).unwrap(), Fixedness::FixedCrossDevice);
    for (enc, key) in HARD {
        expect(&format!("hardcoded {enc}"), hex::decode(key).unwrap(), Fixedness::Hardcoded);
    }
    check(wrong.is_empty(), || wrong.join("; "))?;
    let classes: BTreeSet<Fixedness> = corpus.key_records.iter().map(|r| r.fixedness).collect();
    check(classes.len() == 4, || format!("classes {classes:?}"))?;
    Ok(format!("4/4 classes correct ({correct} keys, hardcoded via plain, base64 and upper-case hex)"))
}

// ---- 7

fn weak_cipher_flags() -> Outcome {
    let table: [(&str, Option<u32>, &[&str]); 11] = [
        ("DES/CBC/PKCS5Padding", None, &["weak_cipher_des"]),
        ("DESede/CBC/PKCS5Padding", None, &["weak_cipher_3des"]),
        ("RC4", None, &["weak_cipher_rc4"]),
        ("AES/ECB/PKCS5Padding", None, &["weak_mode_ecb"]),
        ("RSA/ECB/NoPadding", Some(384), &["weak_rsa_384"]),
        ("RSA/ECB/NoPadding", Some(512), &["weak_rsa_512"]),
        ("RSA/ECB/NoPadding", Some(768), &["weak_rsa_768"]),
        ("AES/GCM/NoPadding", None, &[]),
        ("RSA/ECB/NoPadding", Some(2048), &[]),
        ("AES/CBC/PKCS5Padding", None, &[]),
        ("DESede/ECB/PKCS5Padding", None, &["weak_cipher_3des", "weak_mode_ecb"]),
    ];
    let ops: Vec<_> = table.iter().map(|(a, bits, _)| serde_json::json!({"algorithm": a, "key_bits": bits, "plaintext_len": 24})).collect();
    let m: FixtureManifest =
        serde_json::from_value(serde_json::json!({"seed": 8, "system_traffic": false, "planted_operations": ops})).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, bundle) = generate(&m, dir.path())?;
    let corpus = analyze(&[bundle], &InspectOptions::default())?;
    let run = &corpus.runs[0];
    check(run.operations.len() == table.len(), || format!("{} operations assembled", run.operations.len()))?;
    for (op, (alg, bits, want)) in run.operations.iter().zip(table) {
        let got: BTreeSet<String> = run
            .weaknesses
            .iter()
            .filter(|w| !w.informational)
            .filter(|w| matches!(&w.subject, covertscope::audit::Subject::Operation { op_id, .. } if *op_id == op.op_id))
            .map(|w| serde_json::to_value(w.kind).unwrap().as_str().unwrap().to_string())
            .collect();
        let want: BTreeSet<String> = want.iter().map(|s| s.to_string()).collect();
        check(got == want, || format!("{alg} {bits:?}: flagged {got:?}, want {want:?}"))?;
    }
    Ok("DES, 3DES, RC4, ECB, RSA-384/512/768 flagged; AES-GCM, AES-CBC, RSA-2048 clean".into())
}

// ---- 8

fn amplification() -> Outcome {
    check(ProbeConfig::default().wait == Duration::from_secs(5), || "default wait is not 5 s".into())?;
    let help = Command::new(env!("CARGO_BIN_EXE_covertscope")).args(["inspect", "--help"]).output().map_err(|e| e.to_string())?;
    let help = String::from_utf8_lossy(&help.stdout);
    check(help.contains("--amp-wait-secs") && help.contains("[default: 5]"), || "CLI lacks a 5 s --amp-wait-secs default".into())?;

    let mut lines = Vec::new();
    for factor in [1u64, 4, 12, 4300] {
        let server = run_amplifier_server(factor, 0).map_err(|e| e.to_string())?;
        let dest = server.local_addr();
        let SocketAddr::V4(dest4) = dest else { unreachable!("amplifier binds IPv4") };
        let m: FixtureManifest = serde_json::from_value(serde_json::json!({
            "seed": 900 + factor, "system_traffic": false,
            "amplification_factor": factor, "amplification_destination": dest4.to_string()
        }))
        .map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (_, bundle) = generate(&m, dir.path())?;
        let opts = InspectOptions {
            active_probe: Some(ProbeConfig { wait: Duration::from_millis(700), ..ProbeConfig::default() }),
            ..InspectOptions::default()
        };
        let corpus = analyze(&[bundle], &opts)?;
        let want = Ratio::new(factor, 1);
        let offline = corpus.runs[0].amplification.iter().find(|a| a.destination == dest).ok_or("no offline result")?;
        let active = corpus
            .amplification
            .iter()
            .find(|a| a.result.destination == dest && a.result.mode == AmpMode::Active)
            .ok_or("no active result")?;
        check(offline.ratio == want, || format!("factor {factor}: offline {:?}", offline.ratio))?;
        check(active.result.ratio == want, || format!("factor {factor}: active {:?}", active.result.ratio))?;
        let measured_excluded = corpus
            .amplification
            .iter()
            .map(|a| &a.result)
            .chain(corpus.runs[0].amplification.iter())
            .any(|r| EXCLUDED_PORTS.contains(&r.destination.port()));
        check(!measured_excluded, || format!("factor {factor}: an excluded port was measured"))?;
        lines.push(format!("{factor}x"));
        server.stop();
    }
    Ok(format!("offline = active = factor for {}; ports 53/123/443 never measured; wait 5 s by default", lines.join(", ")))
}

// ---- 9

fn token_downgrade() -> Outcome {
    let m = manifest(
        r#"{"seed": 99, "planted_credentials": [
            {"kind": "token", "protocol": "https", "placement": "json",
             "resend": {"protocol": "non_http", "host": "203.0.113.60:5000",
                        "channel": {"custom": {"layers": ["AES/ECB/PKCS5Padding"]}}}}]}"#,
    );
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, bundle) = generate(&m, dir.path())?;
    let corpus = analyze(&[bundle], &InspectOptions::default())?;
    let d = &corpus.runs[0].downgrades;
    check(d.len() == 1, || format!("{} downgrade reports", d.len()))?;
    check(
        d[0].first_seen.kind == LocationKind::Https && d[0].later_seen.kind == LocationKind::NonHttp && d[0].later_seen.custom_encrypted,
        || format!("{:?}", d[0]),
    )?;
    Ok("exactly one report: HTTPS first, ECB-encrypted non-HTTP later".into())
}

// ---- 10

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    generate_bundle(&manifest(ROUNDTRIP), &a).map_err(|e| e.to_string())?;
    let mut other = manifest(ROUNDTRIP);
    other.app_id = "com.example.second".into();
    other.seed += 1;
    generate_bundle(&other, &b).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("report{i}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_covertscope"))
            .arg("inspect")
            .arg(&a)
            .arg(&b)
            .arg("--out")
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        check(status.code().is_some_and(|c| c == 0 || c == 2), || format!("inspect exited with {status}"))?;
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    check(outputs[0] == outputs[1], || "reports differ between runs".into())?;
    let bundles = [ingest_bundle(&a).map_err(|e| e.to_string())?.bundle, ingest_bundle(&b).map_err(|e| e.to_string())?.bundle];
    let again = render_report(&analyze(&bundles, &InspectOptions::default())?, Format::Json).map_err(|e| e.to_string())?;
    check(again == outputs[0], || "in-process report differs from CLI report".into())?;
    Ok(format!("two CLI runs and one in-process run: {} identical bytes", outputs[0].len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("fixture round-trip", fixture_round_trip),
        ("search oracle", search_oracle),
        ("reassembly property", reassembly),
        ("multi-part assembly", multipart_replay),
        ("channel taxonomy", channel_taxonomy),
        ("key fixedness truth table", key_fixedness),
        ("weak-cipher flags", weak_cipher_flags),
        ("amplification", amplification),
        ("token downgrade", token_downgrade),
        ("determinism", determinism),
    ];
    let only = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({secs:.1} s)", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL [{}] {name}: {reason} ({secs:.1} s)", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
