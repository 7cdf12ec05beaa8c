//! Shared fixtures and independent oracles for the integration suites.

#![allow(dead_code)]

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use mpager::corpus::{Corpus, HypothesisEntry, Utterance};

/// Example 1 transcripts: the recognizer confused 高速 with 拘束; the rest
/// of the utterance is identical.
pub const EXAMPLE1_HYP: &str = "高 速 条 件 を 導 入 し た 上 で え ー ま 量 子 化 を 行 な っ た 図 な ん で す け ど も ち ょ っ と 量 子 化 の す 話 を 先 に し た い と 思 い ま す";
pub const EXAMPLE1_REF: &str = "拘 束 条 件 を 導 入 し た 上 で え ー ま 量 子 化 を 行 な っ た 図 な ん で す け ど も ち ょ っ と 量 子 化 の す 話 を 先 に し た い と 思 い ま す";

/// Example 2 transcripts: 経 for 鏡, one substitution.
pub const EXAMPLE2_HYP: &str = "ミ ュ ン ヘ ン の 博 覧 会 は 電 子 万 華 経 の よ う だ と い う 意 味 の 文 で す が え ー 図 の 一 番 上 が";
pub const EXAMPLE2_REF: &str = "ミ ュ ン ヘ ン の 博 覧 会 は 電 子 万 華 鏡 の よ う だ と い う 意 味 の 文 で す が え ー 図 の 一 番 上 が";

/// Example 4: the anchor hypothesis and the phrase one model looped over.
pub const EXAMPLE4_ANCHOR: &str = "凄 く 残 念 な ん で す が そ の イ ル ミ ネ ー シ ョ ン を と 大 蔵 山 シ ャ ン ツ と い う";
pub const EXAMPLE4_PHRASE: &str = "そ の イ ル ミ ネ ー シ ョ ン を 見 逃 し て し ま っ て 本 当 見 れ な か っ た の が 凄 く 残 念 な ん で す が";

/// The looped output: the phrase repeated back-to-back eleven times.
pub fn example4_repetition() -> String {
    let mut out = String::new();
    for i in 0..11 {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(EXAMPLE4_PHRASE);
    }
    out
}

/// Independent minimum-edit-distance oracle: memoized top-down recursion
/// straight from the definition, with no tie-breaking or backtrace.
pub fn oracle_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let cols = b.len() + 1;
    let mut memo = vec![usize::MAX; (a.len() + 1) * cols];
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, cols: usize, memo: &mut [usize]) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        let key = i * cols + j;
        if memo[key] != usize::MAX {
            return memo[key];
        }
        let sub = go(a, b, i + 1, j + 1, cols, memo) + usize::from(a[i] != b[j]);
        let del = go(a, b, i + 1, j, cols, memo) + 1;
        let ins = go(a, b, i, j + 1, cols, memo) + 1;
        let best = sub.min(del).min(ins);
        memo[key] = best;
        best
    }
    go(a, b, 0, 0, cols, &mut memo)
}

/// Unit pool with full-width forms, kana, kanji, and punctuation, for
/// fuzzing text round-trips. Half-width voicing marks appear attached to
/// their base, as they do in real transcripts.
pub const FUZZ_UNITS: &[&str] = &[
    "a", "b", "z", "1", "9", "Ａ", "Ｂ", "１", "９", "あ", "い", "ん", "ア", "ー", "拘", "束",
    "条", "件", "。", "、", "「", "」", "・", "！", "？", ".", ",", "(", ")", "ｶﾞ", "ﾊﾟ",
];

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_token(rng: &mut ChaCha8Rng, max_units: usize) -> String {
    let len = rng.random_range(1..=max_units);
    (0..len)
        .map(|_| FUZZ_UNITS[rng.random_range(0..FUZZ_UNITS.len())])
        .collect()
}

/// Space-joined tokens: the shape trn files can represent exactly.
pub fn random_trn_text(rng: &mut ChaCha8Rng) -> String {
    let tokens = rng.random_range(0..=12);
    (0..tokens)
        .map(|_| random_token(rng, 3))
        .collect::<Vec<_>>()
        .join(" ")
}

/// A fuzzed multi-system corpus with references, scores, and N-best
/// streams, exercising full-width characters and punctuation.
pub fn fuzz_corpus(rng: &mut ChaCha8Rng, utterances: usize) -> Corpus {
    let mut utts = Vec::with_capacity(utterances);
    for i in 0..utterances {
        let systems = rng.random_range(1..=3usize);
        let mut entries = Vec::new();
        for s in 0..systems {
            let depth = rng.random_range(1..=3u32);
            for rank in 1..=depth {
                entries.push(HypothesisEntry {
                    system: format!("sys{s}"),
                    rank,
                    text: random_trn_text(rng),
                    score: rng
                        .random_bool(0.5)
                        .then(|| (rng.random_range(-1000..=0i32) as f64) / 64.0),
                });
            }
        }
        utts.push(Utterance {
            utt_id: format!("utt_{i:04}"),
            reference: rng.random_bool(0.8).then(|| random_trn_text(rng)),
            entries,
        });
    }
    Corpus::from_utterances(utts).expect("fuzz corpus is well-formed")
}

/// Alphabet for the synthetic noise corpora: large enough that random
/// strings rarely match by accident.
pub const NOISE_POOL: &[char] = &[
    'あ', 'い', 'う', 'え', 'お', 'か', 'き', 'く', 'け', 'こ', 'さ', 'し', 'す', 'せ', 'そ', 'た',
];

/// Substitutes each character with probability `p`. The substitute value
/// is the next pool character, so two streams that err at the same
/// position agree on the wrong symbol; per-position majority voting then
/// fails exactly when two or more streams err.
pub fn shift_noise(rng: &mut ChaCha8Rng, reference: &str, p: f64) -> String {
    reference
        .chars()
        .map(|c| {
            if rng.random_bool(p) {
                let i = NOISE_POOL.iter().position(|&x| x == c).expect("pool char");
                NOISE_POOL[(i + 1) % NOISE_POOL.len()]
            } else {
                c
            }
        })
        .collect()
}

/// Random reference over [`NOISE_POOL`] of the given length.
pub fn pool_reference(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| NOISE_POOL[rng.random_range(0..NOISE_POOL.len())])
        .collect()
}
