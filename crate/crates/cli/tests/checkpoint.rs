use std::collections::BTreeMap;

use headwise::adapters::init_adapter;
use headwise::harness::Model;
use headwise::{AdapterScheme, AdapterState, ModelDims, Target};
use headwise_cli::{AdapterCheckpoint, CliError, WeightsCheckpoint, EXIT_USAGE};
use proptest::prelude::*;

fn schemes() -> [AdapterScheme; 5] {
    [
        AdapterScheme::lora(3),
        AdapterScheme::kernel_wise(2),
        AdapterScheme::kernel_wise_lite(2),
        AdapterScheme::kernel_mix(2, 1),
        AdapterScheme::kernel_mix_lite(1, 2),
    ]
}

fn state(scheme: AdapterScheme, target: Target, dims: &ModelDims, seed: u64) -> AdapterState {
    let mut s = init_adapter(scheme, target, dims, seed).unwrap();
    s.randomize(seed + 1, 0.3);
    s
}

fn checkpoint(scheme: AdapterScheme, seed: u64) -> AdapterCheckpoint {
    let dims = ModelDims::toy();
    let layers = (0..dims.n_layers)
        .map(|l| {
            let mut m = BTreeMap::new();
            for t in [Target::Q, Target::V, Target::O] {
                m.insert(t, state(scheme, t, &dims, seed + l as u64 * 10));
            }
            m
        })
        .collect();
    AdapterCheckpoint {
        dims,
        seeds: BTreeMap::from([("train_seed".to_string(), seed)]),
        layers,
    }
}

#[test]
fn every_scheme_round_trips_bitwise() {
    for scheme in schemes() {
        let ck = checkpoint(scheme, 7);
        let bytes = ck.to_bytes();
        let back = AdapterCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck, "{scheme}");
        assert_eq!(back.to_bytes(), bytes, "{scheme}");
    }
}

#[test]
fn unusual_values_survive() {
    let mut ck = checkpoint(AdapterScheme::lora(1), 3);
    let special = [-0.0, f64::MIN_POSITIVE / 4.0, f64::MAX, f64::INFINITY, f64::NAN, 1e-300];
    let m = ck.layers[0].get_mut(&Target::Q).unwrap().factors.iter_mut().next().unwrap();
    for (slot, v) in m.as_mut_slice().iter_mut().zip(special) {
        *slot = v;
    }
    let bytes = ck.to_bytes();
    let back = AdapterCheckpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    let first = back.layers[0][&Target::Q].factors.iter().next().unwrap().as_slice()[..6].to_vec();
    for (a, b) in first.iter().zip(special) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn empty_layers_round_trip() {
    let dims = ModelDims::toy();
    let ck = AdapterCheckpoint {
        dims,
        seeds: BTreeMap::new(),
        layers: vec![BTreeMap::new(); dims.n_layers],
    };
    assert_eq!(AdapterCheckpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
}

#[test]
fn weights_round_trip_through_a_file() {
    let model = Model::random(ModelDims::toy(), 5);
    let ck = WeightsCheckpoint {
        dims: model.dims,
        seeds: BTreeMap::from([("base_seed".to_string(), 5)]),
        layers: model.layers.clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("base.ckpt");
    ck.save(&path).unwrap();
    let back = WeightsCheckpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(std::fs::read(&path).unwrap(), back.to_bytes());
}

#[test]
fn truncated_payload_is_rejected() {
    let bytes = checkpoint(AdapterScheme::kernel_mix(2, 1), 1).to_bytes();
    for cut in [1, 8, 100, bytes.len() - 9] {
        let err = AdapterCheckpoint::from_bytes(&bytes[..bytes.len() - cut]).unwrap_err();
        assert!(err.contains("truncated"), "cut {cut}: {err}");
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.ckpt");
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    let err = AdapterCheckpoint::load(&path).unwrap_err();
    assert!(matches!(err, CliError::Checkpoint { .. }), "{err}");
    assert_eq!(err.exit_code(), EXIT_USAGE);
}

#[test]
fn short_files_are_rejected() {
    assert!(AdapterCheckpoint::from_bytes(&[]).is_err());
    assert!(AdapterCheckpoint::from_bytes(&[1, 0, 0]).is_err());
    let mut bytes = 1000u64.to_le_bytes().to_vec();
    bytes.extend_from_slice(b"{}");
    assert!(AdapterCheckpoint::from_bytes(&bytes).unwrap_err().contains("header truncated"));
}

#[test]
fn trailing_bytes_are_rejected() {
    let mut bytes = checkpoint(AdapterScheme::lora(2), 1).to_bytes();
    bytes.extend_from_slice(&[0; 8]);
    assert!(AdapterCheckpoint::from_bytes(&bytes).unwrap_err().contains("trailing"));
}

/// Splits a checkpoint into its header JSON and payload.
fn split(bytes: &[u8]) -> (serde_json::Value, Vec<u8>) {
    let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    (serde_json::from_slice(&bytes[8..8 + n]).unwrap(), bytes[8 + n..].to_vec())
}

fn join(header: &serde_json::Value, payload: &[u8]) -> Vec<u8> {
    let json = serde_json::to_vec(header).unwrap();
    let mut out = (json.len() as u64).to_le_bytes().to_vec();
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    out
}

#[test]
fn shape_conflict_names_the_matrix() {
    let bytes = checkpoint(AdapterScheme::kernel_wise(2), 1).to_bytes();
    let (mut header, payload) = split(&bytes);
    let entry = &mut header["records"][1]["matrices"][2];
    let name = entry["name"].as_str().unwrap().to_string();
    // Same element count, different shape: only the shape check can catch it.
    let (r, c) = (entry["rows"].as_u64().unwrap(), entry["cols"].as_u64().unwrap());
    entry["rows"] = c.into();
    entry["cols"] = r.into();
    let err = AdapterCheckpoint::from_bytes(&join(&header, &payload)).unwrap_err();
    assert!(err.contains(&name), "{err}");
    assert!(err.contains(&format!("{c}×{r}")) || err.contains(&format!("{c}x{r}")), "{err}");
}

#[test]
fn scheme_mismatch_is_rejected() {
    let bytes = checkpoint(AdapterScheme::kernel_wise(2), 1).to_bytes();
    let (mut header, payload) = split(&bytes);
    header["records"][0]["scheme"]["rank_head"] = 3.into();
    assert!(AdapterCheckpoint::from_bytes(&join(&header, &payload)).is_err());
}

#[test]
fn wrong_kind_is_rejected() {
    let bytes = checkpoint(AdapterScheme::lora(2), 1).to_bytes();
    assert!(WeightsCheckpoint::from_bytes(&bytes).is_err());
}

#[test]
fn layer_out_of_range_is_rejected() {
    let bytes = checkpoint(AdapterScheme::lora(2), 1).to_bytes();
    let (mut header, payload) = split(&bytes);
    header["records"][0]["layer"] = 9.into();
    assert!(AdapterCheckpoint::from_bytes(&join(&header, &payload)).unwrap_err().contains('9'));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_checkpoints_round_trip(kind in 0usize..5, seed in 0u64..1000) {
        let ck = checkpoint(schemes()[kind], seed);
        let bytes = ck.to_bytes();
        prop_assert_eq!(AdapterCheckpoint::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn any_truncation_fails_cleanly(cut in 1usize..400) {
        let bytes = checkpoint(AdapterScheme::kernel_wise_lite(1), 2).to_bytes();
        let cut = cut.min(bytes.len());
        prop_assert!(AdapterCheckpoint::from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }
}
