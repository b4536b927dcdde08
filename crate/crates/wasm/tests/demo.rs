use gcr_wasm::Demo;
use serde_json::{json, Value};

const KG: &str = "A\tr1\tB\nB\tr2\tC\nA\tr3\tD\nD\tr2\tC\nB\tr4\tE\n";

fn demo() -> Demo {
    Demo::new(KG).unwrap()
}

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn counts_by_hop() {
    let v = parse(demo().paths("A", 2).unwrap());
    assert_eq!(v["by_hop"], json!([2, 3]));
    assert_eq!(v["trie_paths"], 5);
    assert!(demo().paths("A", 0).is_err());
    assert!(demo().paths("Nobody", 1).is_err());
}

#[test]
fn explorer_follows_the_trie() {
    let d = demo();
    let v = parse(d.explore("A", 2, "").unwrap());
    assert_eq!(v["next"], json!(["<PATH>"]));
    let v = parse(d.explore("A", 2, "<PATH> A →").unwrap());
    assert_eq!(v["next"], json!(["r1", "r3"]));
    let v = parse(d.explore("A", 2, "<PATH> A → r3 → D </PATH>").unwrap());
    assert_eq!((v["valid"].as_bool(), v["complete"].as_bool()), (Some(true), Some(true)));
    let v = parse(d.explore("A", 2, "<PATH> A → r2").unwrap());
    assert_eq!(v["valid"], false);
    assert!(d.explore("A", 2, "<PATH> Q").is_err());
}

#[test]
fn decode_answers_with_path_ends() {
    let v = parse(demo().decode("A", 2, 3, "where does A lead?").unwrap());
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let path = r["path"].as_str().unwrap();
        let tail = path.trim_end_matches(" </PATH>").rsplit(' ').next().unwrap();
        assert_eq!(r["answer"].as_str().unwrap(), tail);
    }
    assert!(demo().decode("A", 2, 0, "q").is_err());
}
