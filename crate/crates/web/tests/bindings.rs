use ddrill_web::{condense, pack, rerank};
use serde_json::Value;

const DOC: &str =
    "# Intro\n\nWe study fish. They swim.\n\n# Methods\n\nZebrafish were raised in tanks.\n\nWater was kept warm.\n";

#[test]
fn condense_lists_every_section() {
    let v: Value = serde_json::from_str(&condense(DOC, 60).unwrap()).unwrap();
    let names: Vec<&str> = v["sections"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["path_name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["Intro", "Methods"]);
    assert!(v["rendered"].as_str().unwrap().starts_with("* Section: Intro"));
    let short: Value = serde_json::from_str(&condense(DOC, 3).unwrap()).unwrap();
    assert!(short["condensed_tokens"].as_u64() < v["condensed_tokens"].as_u64());
}

#[test]
fn pack_keeps_order_and_budget() {
    let v: Value = serde_json::from_str(&pack(DOC, 14, 0).unwrap()).unwrap();
    let calls = v.as_array().unwrap();
    let ids: Vec<u64> = calls
        .iter()
        .flat_map(|c| c["ids"].as_array().unwrap().iter().map(|i| i.as_u64().unwrap()))
        .collect();
    assert_eq!(ids, [0, 1, 2]);
    assert!(calls.len() > 1);
    assert!(calls.iter().all(|c| c["token_count"].as_u64().unwrap() <= 14));
    assert!(pack(DOC, 0, 5).is_err());
}

#[test]
fn rerank_puts_the_matching_paragraph_first() {
    let v: Value = serde_json::from_str(&rerank(DOC, "Where were zebrafish raised?", 2).unwrap()).unwrap();
    let ranked = v.as_array().unwrap();
    assert_eq!(ranked.len(), 2);
    assert_eq!(ranked[0]["id"], 1);
    assert_eq!(ranked[0]["section"], "Methods");
    assert!(rerank(DOC, "q", 0).is_err());
}
