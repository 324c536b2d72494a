mod common;

use common::{bm25_oracle, corpus_strategy, query_strategy, OracleDoc};
use proptest::prelude::*;
use tor_core::retrieval::{bm25_score, idf, index_corpus, load_index, retrieve_top_k, save_index, Bm25Params, Document};

fn to_docs(docs: &[OracleDoc]) -> Vec<Document> {
    docs.iter().map(|d| Document { id: d.id.clone(), title: format!("T {}", d.id), body: d.body.clone() }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn top_k_matches_exhaustive_oracle(docs in corpus_strategy(60), query in query_strategy(), k in 1usize..70) {
        let index = index_corpus(&to_docs(&docs), Bm25Params::default()).unwrap();
        let got = retrieve_top_k(&index, &query, k, 64);
        let want = bm25_oracle(&docs, &query, k, 1.2, 0.75);
        let got_ids: Vec<&str> = got.iter().map(|d| d.doc_id.as_str()).collect();
        let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
        prop_assert_eq!(got_ids, want_ids);
        for (g, (_, score)) in got.iter().zip(&want) {
            prop_assert!((g.score - score).abs() < 1e-9, "{} vs {}", g.score, score);
        }
    }

    #[test]
    fn document_order_does_not_change_the_ranking(docs in corpus_strategy(30), query in query_strategy()) {
        let forward = index_corpus(&to_docs(&docs), Bm25Params::default()).unwrap();
        let mut reversed_docs = to_docs(&docs);
        reversed_docs.reverse();
        let reversed = index_corpus(&reversed_docs, Bm25Params::default()).unwrap();
        let a: Vec<String> = retrieve_top_k(&forward, &query, docs.len(), 8).into_iter().map(|d| d.doc_id).collect();
        let b: Vec<String> = retrieve_top_k(&reversed, &query, docs.len(), 8).into_iter().map(|d| d.doc_id).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn idf_is_positive_and_non_increasing_in_df(n in 1usize..500) {
        let mut last = f64::INFINITY;
        for df in 0..=n {
            let v = idf(n, df);
            prop_assert!(v > 0.0);
            prop_assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn repeated_query_terms_count_once(docs in corpus_strategy(20), word in prop::sample::select(&["fever", "cyst", "mass"][..])) {
        let index = index_corpus(&to_docs(&docs), Bm25Params::default()).unwrap();
        for ordinal in 0..index.len() {
            prop_assert_eq!(bm25_score(&index, word, ordinal), bm25_score(&index, &format!("{word} {word}"), ordinal));
        }
    }
}

#[test]
fn single_term_hand_computed_score_is_ln_2() {
    // N = 2, df = 1, tf = 1, both documents of average length:
    // idf = ln((2 - 1 + 0.5) / (1 + 0.5) + 1) = ln 2 and the tf factor is 1.
    let docs = vec![
        Document { id: "a".into(), title: String::new(), body: "fever".into() },
        Document { id: "b".into(), title: String::new(), body: "cough".into() },
    ];
    let index = index_corpus(&docs, Bm25Params::default()).unwrap();
    let top = retrieve_top_k(&index, "fever", 1, 8);
    assert_eq!(top[0].doc_id, "a");
    assert!((top[0].score - std::f64::consts::LN_2).abs() < 1e-9);
    assert_eq!(format!("{:.4}", top[0].score), "0.6931");
}

#[test]
fn zero_score_documents_are_ranked_by_id() {
    let docs: Vec<Document> = ["c", "a", "b"]
        .iter()
        .map(|id| Document { id: id.to_string(), title: String::new(), body: "text".into() })
        .collect();
    let index = index_corpus(&docs, Bm25Params::default()).unwrap();
    let ids: Vec<String> = retrieve_top_k(&index, "nothing", 3, 8).into_iter().map(|d| d.doc_id).collect();
    assert_eq!(ids, ["a", "b", "c"]);
}

#[test]
fn saved_index_loads_back_identically() {
    let docs = vec![
        Document { id: "d1".into(), title: "Liver".into(), body: "hepatic cyst in the left lobe".into() },
        Document { id: "d2".into(), title: "Stomach".into(), body: "gastric cancer with anemia".into() },
    ];
    let index = index_corpus(&docs, Bm25Params { k1: 0.9, b: 0.4 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("idx");
    save_index(&path, &index).unwrap();
    assert!(std::fs::read_to_string(&path).unwrap().starts_with("TORIDX1\n"));
    assert_eq!(load_index(&path).unwrap(), index);
    std::fs::write(&path, "NOTANINDEX\n{}").unwrap();
    assert!(load_index(&path).is_err());
}
