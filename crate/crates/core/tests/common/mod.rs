//! Shared helpers for the integration tests: a synthetic segmentation
//! corpus and a central finite-difference gradient oracle.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqseg_core::features::NGramIds;
use seqseg_core::recurrent::{compute_gradients, Instance, ModelDims, Params, PARAM_NAMES};
use seqseg_core::Sentence;

pub const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
pub const CONSONANTS: [char; 15] = [
    'b', 'c', 'd', 'f', 'g', 'h', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v',
];

/// Random sentences over a 20-symbol alphabet where a word ends after every
/// vowel and at the end of the sentence.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(8..=16);
            let mut words: Vec<Vec<String>> = vec![vec![]];
            for i in 0..len {
                let c = if rng.gen_bool(0.35) {
                    VOWELS[rng.gen_range(0..VOWELS.len())]
                } else {
                    CONSONANTS[rng.gen_range(0..CONSONANTS.len())]
                };
                words.last_mut().unwrap().push(c.to_string());
                if VOWELS.contains(&c) && i + 1 < len {
                    words.push(vec![]);
                }
            }
            Sentence::from_words(words).unwrap()
        })
        .collect()
}

pub fn random_instance(rng: &mut ChaCha8Rng, dims: ModelDims, len: usize) -> Instance {
    Instance {
        ids: (0..len)
            .map(|_| NGramIds {
                uni: rng.gen_range(0..dims.vocab.0),
                bi: rng.gen_range(0..dims.vocab.1),
                tri: rng.gen_range(0..dims.vocab.2),
            })
            .collect(),
        gold: (0..len).map(|_| rng.gen_range(0..dims.tags)).collect(),
    }
}

/// Random miniature model (state 4, vocabulary at most 30 per order) and a
/// batch of short sentences.
pub fn miniature(seed: u64) -> (Params, Vec<Instance>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ModelDims {
        vocab: (
            rng.gen_range(2..=10),
            rng.gen_range(2..=10),
            rng.gen_range(2..=10),
        ),
        embed: (
            rng.gen_range(1..=3),
            rng.gen_range(1..=3),
            rng.gen_range(1..=3),
        ),
        state: 4,
        tags: rng.gen_range(4..=5),
    };
    let mut params = Params::random(dims, &mut rng);
    // non-zero biases so their gradients are exercised away from the origin
    for b in [
        &mut params.forward.b,
        &mut params.backward.b,
        &mut params.projection.b,
    ] {
        b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    }
    let n = rng.gen_range(1..=3);
    let batch = (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=5);
            random_instance(&mut rng, dims, len)
        })
        .collect();
    (params, batch)
}

/// Per parameter group: the largest element-wise relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(
    params: &Params,
    batch: &[Instance],
    step: f64,
    floor: f64,
) -> Vec<(&'static str, f64)> {
    let (_, analytic) = compute_gradients::<ChaCha8Rng>(batch, params, None).unwrap();
    let mut out = Vec::new();
    for (g, name) in PARAM_NAMES.iter().enumerate() {
        let n = params.tensors()[g].len();
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let mut plus = params.clone();
            plus.tensors_mut()[g].as_slice_mut().unwrap()[k] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[g].as_slice_mut().unwrap()[k] -= step;
            let numeric =
                (plus.batch_loss(batch).unwrap() - minus.batch_loss(batch).unwrap()) / (2.0 * step);
            let a = analytic.tensors()[g].as_slice().unwrap()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
        out.push((*name, worst));
    }
    out
}
