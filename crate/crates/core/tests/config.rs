use brwlab::config::ModelConfig;
use proptest::prelude::*;
use serde_json::{json, Value};

fn config(dimension: usize, rate: u32, b2: u32, death: u32, seed: u64, order: usize) -> Value {
    json!({
        "schema": "brwlab/1",
        "name": format!("random {seed}"),
        "dimension": dimension,
        "kernel": {"type": "nearest_neighbour", "total_rate": format!("{}.5", rate)},
        "law": {
            "branching": [{"n": 2, "rate": format!("{b2}")}],
            "death": {"rate": format!("0.{death}")}
        },
        "horizon": "10",
        "moments": {"max_order": order, "variant": "total"},
        "checkpoints": ["1", "10"],
        "montecarlo": {"replicas": 100, "seed": seed}
    })
}

fn reversed(v: &Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut out = serde_json::Map::new();
            for (k, x) in map.iter().rev() {
                out.insert(k.clone(), reversed(x));
            }
            Value::Object(out)
        }
        Value::Array(xs) => Value::Array(xs.iter().map(reversed).collect()),
        x => x.clone(),
    }
}

proptest! {
    #[test]
    fn round_trip_preserves_the_hash(
        dimension in 1usize..=3,
        rate in 0u32..5,
        b2 in 1u32..4,
        death in 0u32..10,
        seed in any::<u64>(),
        order in 1usize..=4,
    ) {
        let text = config(dimension, rate, b2, death, seed, order).to_string();
        let cfg = ModelConfig::from_json(&text).unwrap();
        cfg.check().unwrap();
        let again = ModelConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(cfg.canonical_json(), again.canonical_json());
        prop_assert_eq!(cfg.hash(), again.hash());
    }

    #[test]
    fn hash_ignores_key_order_and_output(
        rate in 0u32..5,
        death in 0u32..10,
        seed in any::<u64>(),
    ) {
        let v = config(2, rate, 1, death, seed, 2);
        let a = ModelConfig::from_json(&v.to_string()).unwrap();
        let mut w = reversed(&v);
        w["output"] = json!("elsewhere");
        let b = ModelConfig::from_json(&w.to_string()).unwrap();
        prop_assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn hash_changes_with_the_seed(seed in 0u64..u64::MAX) {
        let a = ModelConfig::from_json(&config(1, 1, 1, 1, seed, 2).to_string()).unwrap();
        let b = ModelConfig::from_json(&config(1, 1, 1, 1, seed + 1, 2).to_string()).unwrap();
        prop_assert_ne!(a.hash(), b.hash());
    }
}

#[test]
fn unknown_fields_are_rejected() {
    let mut v = config(1, 1, 1, 1, 3, 2);
    v["colour"] = json!("blue");
    assert!(ModelConfig::from_json(&v.to_string()).is_err());
}
