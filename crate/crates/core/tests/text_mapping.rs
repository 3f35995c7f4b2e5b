//! Ranking checks against an exhaustive cosine oracle.

use std::collections::HashMap;

use callig_core::corpus::Vocabulary;
use callig_core::text_mapper::{
    embed_vocabulary, top_k_characters, EmbeddingProvider, HashEmbedder, TextEmbedding,
};
use callig_core::Result;
use proptest::prelude::*;

struct Fixed(HashMap<String, Vec<f32>>);

impl EmbeddingProvider for Fixed {
    fn id(&self) -> &str {
        "fixed-2d"
    }
    fn dimension(&self) -> usize {
        2
    }
    fn embed(&self, text: &str) -> Result<TextEmbedding> {
        Ok(TextEmbedding {
            vector: self.0[text].clone(),
            provider_id: "fixed-2d".into(),
        })
    }
}

fn brute_force(query: &[f32], rows: &[(char, Vec<f32>)], k: usize) -> Vec<char> {
    let cos = |a: &[f32], b: &[f32]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum();
        dot / (na * nb).sqrt()
    };
    let mut all: Vec<(f64, char)> = rows.iter().map(|(c, v)| (cos(query, v), *c)).collect();
    // Bubble sort on purpose: descending score, then ascending codepoint.
    for i in 0..all.len() {
        for j in 0..all.len() - 1 - i {
            let (a, b) = (all[j], all[j + 1]);
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                all.swap(j, j + 1);
            }
        }
    }
    all.into_iter().take(k).map(|(_, c)| c).collect()
}

#[test]
fn hand_built_two_dimensional_fixture() {
    let rows: Vec<(char, Vec<f32>)> = vec![
        ('甲', vec![1.0, 0.0]),
        ('乙', vec![0.0, 1.0]),
        ('丙', vec![1.0, 1.0]),
        ('丁', vec![-1.0, 0.5]),
        ('戊', vec![2.0, 2.0]),
        ('己', vec![0.3, -1.0]),
        ('庚', vec![-0.5, -0.5]),
        ('辛', vec![3.0, 0.1]),
    ];
    let mut table: HashMap<String, Vec<f32>> =
        rows.iter().map(|(c, v)| (c.to_string(), v.clone())).collect();
    let queries = [[1.0f32, 0.8], [0.0, -1.0], [-1.0, 0.0], [1.0, 1.0]];
    for (i, q) in queries.iter().enumerate() {
        table.insert(format!("q{i}"), q.to_vec());
    }
    let p = Fixed(table);
    let vocab = Vocabulary::from_ordered(rows.iter().map(|(c, _)| (*c, 30)));
    let emb = embed_vocabulary(&p, &vocab, None).unwrap();
    for (i, q) in queries.iter().enumerate() {
        let got: Vec<char> = top_k_characters(&format!("q{i}"), &p, &vocab, &emb, 8)
            .unwrap()
            .iter()
            .map(|s| s.character)
            .collect();
        assert_eq!(got, brute_force(q, &rows, 8), "query {i}");
    }
}

fn vocab_chars(n: usize) -> Vec<char> {
    (0..n).map(|i| char::from_u32(0x4E00 + 37 * i as u32).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_brute_force_with_hash_embedder(n in 1usize..=32, k_frac in 0.0f64..1.0, text in "\\PC{1,12}") {
        let p = HashEmbedder::default();
        let chars = vocab_chars(n);
        let vocab = Vocabulary::from_ordered(chars.iter().map(|&c| (c, 30)));
        let emb = embed_vocabulary(&p, &vocab, None).unwrap();
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let rows: Vec<_> = chars.iter().map(|&c| (c, p.embed(&c.to_string()).unwrap().vector)).collect();
        let expected = brute_force(&p.embed(&text).unwrap().vector, &rows, k);
        let got: Vec<char> = top_k_characters(&text, &p, &vocab, &emb, k).unwrap().iter().map(|s| s.character).collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn vocabulary_order_does_not_matter(n in 2usize..=24, seed in any::<u64>(), text in "[a-z]{1,8}") {
        let p = HashEmbedder::default();
        let chars = vocab_chars(n);
        let mut shuffled = chars.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let k = n.min(5);
        let run = |order: &[char]| {
            let vocab = Vocabulary::from_ordered(order.iter().map(|&c| (c, 30)));
            let emb = embed_vocabulary(&p, &vocab, None).unwrap();
            top_k_characters(&text, &p, &vocab, &emb, k).unwrap().iter().map(|s| (s.character, s.similarity)).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(&chars), run(&shuffled));
    }

    #[test]
    fn similarity_symmetric_and_scale_free(a in proptest::collection::vec(-5.0f32..5.0, 6), b in proptest::collection::vec(-5.0f32..5.0, 6), s in 0.1f32..10.0) {
        use callig_core::text_mapper::similarity;
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let e = |v: Vec<f32>| TextEmbedding { vector: v, provider_id: "p".into() };
        let ab = similarity(&e(a.clone()), &e(b.clone())).unwrap();
        let ba = similarity(&e(b.clone()), &e(a.clone())).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        let scaled = similarity(&e(a.iter().map(|v| v * s).collect()), &e(b.clone())).unwrap();
        prop_assert!((ab - scaled).abs() < 1e-5);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }
}
