use diffnet::{Container, GruCell, Mlp, ParameterSet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = Mlp::new("enc.", &[867, 64, 64]).init(&mut rng);
    params.merge_prefixed("", GruCell::new("gru.", 64, 256).init(&mut rng));

    let first = dir.path().join("a.bin");
    let second = dir.path().join("b.bin");
    params.save(&first, "cpc-encoder", json!({"note": "x", "lr": 1e-3})).unwrap();
    let (loaded, meta) = ParameterSet::load(&first, "cpc-encoder").unwrap();
    assert_eq!(loaded.numel(), params.numel());
    loaded.save(&second, "cpc-encoder", meta).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn header_lists_names_shapes_offsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = Mlp::new("", &[3, 4, 2]).init(&mut rng);
    let bytes = params.to_container("policy", json!({})).to_bytes().unwrap();
    assert_eq!(&bytes[..8], b"PSHAPE01");
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
    assert_eq!(header["kind"], "policy");
    let tensors = header["tensors"].as_array().unwrap();
    assert_eq!(tensors.len(), 4);
    assert_eq!(tensors[0]["name"], "b1");
    assert_eq!(tensors[1]["offset"], 8 * 4);
    assert_eq!(bytes.len(), 16 + hlen + 8 * params.numel());
}

#[test]
fn wrong_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    let params = Mlp::new("", &[2, 2]).init(&mut ChaCha8Rng::seed_from_u64(0));
    params.save(&path, "policy", json!({})).unwrap();
    assert!(ParameterSet::load(&path, "clusters").is_err());
}

proptest! {
    #[test]
    fn container_roundtrip(values in proptest::collection::vec(-1e6f64..1e6, 1..64), kind in "[a-z-]{1,12}") {
        let mut c = Container::new(kind, json!({"n": values.len()}));
        c.push("v", diffnet::Tensor::vector(values));
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}
