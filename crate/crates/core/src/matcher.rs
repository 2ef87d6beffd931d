//! Bit-parallel approximate string matching.
//!
//! [`BitPattern`] preprocesses a pattern into one bit mask per byte value and
//! then advances a whole dynamic-programming column per text symbol, using
//! the vertical delta vectors `Pv`/`Mv` of Myers' algorithm. Patterns longer
//! than a machine word are split into 64-bit blocks that pass their
//! horizontal delta from one block to the next, so there is no length limit.
//!
//! Two scorings are offered:
//!
//! * global ([`bv_edit_distance`]): plain Levenshtein distance between the
//!   two strings. The top row of the DP matrix grows by one per text symbol,
//!   so every block column starts with a horizontal delta of `+1`.
//! * semi-global ([`bv_search`]): the pattern may start anywhere in the text;
//!   the top row is all zeros and the incoming delta is `0`.
//!
//! [`dp_edit_distance`] is the textbook quadratic table and serves as the
//! reference the bit-vector code is tested against.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncodedString, Remapper};

const WORD: usize = 64;

/// Levenshtein distance by the classic two-row table.
pub fn dp_edit_distance(a: &[u8], b: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SearchHit {
    /// 1-based text position where the match ends.
    pub end_pos: usize,
    pub dist: usize,
}

impl fmt::Display for SearchHit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.end_pos, self.dist)
    }
}

/// Preprocessed pattern: per-symbol match masks over `⌈m/64⌉` blocks.
#[derive(Debug, Clone)]
pub struct BitPattern {
    peq: Vec<u64>,
    m: usize,
    blocks: usize,
    /// bit of the last pattern row inside the last block
    last_bit: u64,
}

/// Scratch state of one scan: vertical delta vectors and the last-row score.
#[derive(Debug, Clone)]
pub struct MatchState {
    pv: Vec<u64>,
    mv: Vec<u64>,
    score: usize,
}

/// Advance one 64-bit block by one text column. `hin` is the horizontal
/// delta entering the block's top row; the return value leaves its last row.
#[inline(always)]
fn advance_block(pv: &mut u64, mv: &mut u64, eq: u64, hin: i32, high: u64) -> i32 {
    let xv = eq | *mv;
    let eq = eq | u64::from(hin < 0);
    let xh = ((eq & *pv).wrapping_add(*pv) ^ *pv) | eq;
    let mut ph = *mv | !(xh | *pv);
    let mut mh = *pv & xh;
    let hout = if ph & high != 0 {
        1
    } else if mh & high != 0 {
        -1
    } else {
        0
    };
    ph <<= 1;
    mh <<= 1;
    mh |= u64::from(hin < 0);
    ph |= u64::from(hin > 0);
    *pv = mh | !(xv | ph);
    *mv = ph & xv;
    debug_assert_eq!(*pv & *mv, 0);
    hout
}

impl BitPattern {
    pub fn new(pattern: &[u8]) -> Self {
        let mut bp = BitPattern {
            peq: Vec::new(),
            m: 0,
            blocks: 0,
            last_bit: 0,
        };
        bp.rebuild(pattern);
        bp
    }

    /// Reuse the allocation for another pattern.
    pub fn rebuild(&mut self, pattern: &[u8]) {
        self.m = pattern.len();
        self.blocks = pattern.len().div_ceil(WORD).max(1);
        self.peq.clear();
        self.peq.resize(256 * self.blocks, 0);
        for (i, &c) in pattern.iter().enumerate() {
            self.peq[c as usize * self.blocks + i / WORD] |= 1 << (i % WORD);
        }
        self.last_bit = 1 << ((self.m.max(1) - 1) % WORD);
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    fn fresh_state(&self) -> MatchState {
        MatchState {
            pv: vec![!0; self.blocks],
            mv: vec![0; self.blocks],
            score: self.m,
        }
    }

    /// Feed one text symbol; `hin` is the top-row delta (1 global, 0 search).
    #[inline]
    fn step(&self, st: &mut MatchState, c: u8, hin: i32) {
        let eqs = &self.peq[c as usize * self.blocks..][..self.blocks];
        let last = self.blocks - 1;
        let mut h = hin;
        for ((pv, mv), &eq) in st.pv[..last].iter_mut().zip(&mut st.mv[..last]).zip(eqs) {
            h = advance_block(pv, mv, eq, h, 1 << 63);
        }
        h = advance_block(&mut st.pv[last], &mut st.mv[last], eqs[last], h, self.last_bit);
        st.score = st.score.wrapping_add_signed(h as isize);
    }

    /// Global edit distance to `text`.
    pub fn distance(&self, text: &[u8]) -> usize {
        if self.m == 0 {
            return text.len();
        }
        let mut st = self.fresh_state();
        for &c in text {
            self.step(&mut st, c, 1);
        }
        st.score
    }

    /// Every end position whose best semi-global distance is at most `k`.
    pub fn search(&self, text: &[u8], k: usize) -> Vec<SearchHit> {
        let mut hits = Vec::new();
        if self.m == 0 {
            return (1..=text.len()).map(|end_pos| SearchHit { end_pos, dist: 0 }).collect();
        }
        let mut st = self.fresh_state();
        for (j, &c) in text.iter().enumerate() {
            self.step(&mut st, c, 0);
            if st.score <= k {
                hits.push(SearchHit {
                    end_pos: j + 1,
                    dist: st.score,
                });
            }
        }
        hits
    }

    /// Smallest semi-global distance over all end positions (the pattern
    /// length when the text is empty).
    pub fn best_search_distance(&self, text: &[u8]) -> usize {
        let mut st = self.fresh_state();
        let mut best = self.m;
        if self.m == 0 {
            return 0;
        }
        for &c in text {
            self.step(&mut st, c, 0);
            best = best.min(st.score);
            if best == 0 {
                break;
            }
        }
        best
    }
}

/// Global edit distance computed with multi-word bit vectors.
pub fn bv_edit_distance(a: &[u8], b: &[u8]) -> usize {
    BitPattern::new(a).distance(b)
}

/// Semi-global search: end positions in `text` where `pattern` matches a
/// suffix of the prefix ending there with at most `k` edits.
pub fn bv_search(pattern: &[u8], text: &[u8], k: usize) -> Vec<SearchHit> {
    BitPattern::new(pattern).search(text, k)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Global,
    #[default]
    SemiGlobal,
}

impl FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(MatchMode::Global),
            "semi_global" | "semi-global" => Ok(MatchMode::SemiGlobal),
            other => Err(format!("unknown match mode `{other}` (global | semi_global)")),
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::Global => "global",
            MatchMode::SemiGlobal => "semi_global",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AlignmentResult {
    pub distance: usize,
    pub mode: MatchMode,
    /// Index of the winning permutation in lexicographic order (0 = identity).
    pub remapping_index: usize,
    /// Participant token → token it was renamed to by the winning permutation.
    pub remapping: Vec<(u8, u8)>,
    pub truncated: bool,
}

/// Best distance between a participant and a rule over renamings of the
/// participant's tokens. Ties go to the lowest permutation index.
pub fn best_alignment(
    part: &EncodedString,
    rule: &EncodedString,
    mode: MatchMode,
    perm_cap: usize,
) -> AlignmentResult {
    align(part, rule, mode, perm_cap, false).0
}

/// Like [`best_alignment`], but scans every permutation up to the cap and
/// also returns the token mappings of all permutations that reach the best
/// distance, in permutation order.
pub fn tied_alignments(
    part: &EncodedString,
    rule: &EncodedString,
    mode: MatchMode,
    perm_cap: usize,
) -> (AlignmentResult, Vec<Vec<(u8, u8)>>) {
    align(part, rule, mode, perm_cap, true)
}

fn align(
    part: &EncodedString,
    rule: &EncodedString,
    mode: MatchMode,
    perm_cap: usize,
    keep_ties: bool,
) -> (AlignmentResult, Vec<Vec<(u8, u8)>>) {
    let remapper = Remapper::new(&part.bytes);
    let cap = perm_cap.max(1);
    let mut bp = BitPattern::new(&part.bytes);
    let mut best: Option<(usize, usize, Vec<usize>)> = None;
    let mut ties = Vec::new();
    for (idx, perm) in remapper.permutations().take(cap).enumerate() {
        bp.rebuild(&remapper.apply(&perm));
        let d = match mode {
            MatchMode::Global => bp.distance(&rule.bytes),
            MatchMode::SemiGlobal => bp.best_search_distance(&rule.bytes),
        };
        match &best {
            Some((bd, _, _)) if d > *bd => {}
            Some((bd, _, _)) if d == *bd => {
                if keep_ties {
                    ties.push(remapper.mapping(&perm));
                }
            }
            _ => {
                if keep_ties {
                    ties.clear();
                    ties.push(remapper.mapping(&perm));
                }
                best = Some((d, idx, perm));
                if d == 0 && !keep_ties {
                    break;
                }
            }
        }
    }
    let (distance, remapping_index, perm) = best.expect("at least the identity permutation");
    let result = AlignmentResult {
        distance,
        mode,
        remapping_index,
        remapping: remapper.mapping(&perm),
        truncated: remapper.permutation_count() > cap as u128,
    };
    (result, ties)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Source, TokenMap};
    use proptest::prelude::*;
    use std::collections::HashMap;

    /// Memoized recursion on suffixes; shares nothing with the table code.
    fn recursive_distance(a: &[u8], b: &[u8]) -> usize {
        fn go(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
            if a.is_empty() {
                return b.len();
            }
            if b.is_empty() {
                return a.len();
            }
            if let Some(&d) = memo.get(&(a.len(), b.len())) {
                return d;
            }
            let d = if a[0] == b[0] {
                go(&a[1..], &b[1..], memo)
            } else {
                1 + go(&a[1..], b, memo)
                    .min(go(a, &b[1..], memo))
                    .min(go(&a[1..], &b[1..], memo))
            };
            memo.insert((a.len(), b.len()), d);
            d
        }
        go(a, b, &mut HashMap::new())
    }

    /// Semi-global distance at every end position by the plain DP table.
    fn naive_search(p: &[u8], t: &[u8], k: usize) -> Vec<SearchHit> {
        let mut col: Vec<usize> = (0..=p.len()).collect();
        let mut hits = Vec::new();
        for (j, &c) in t.iter().enumerate() {
            let mut next = vec![0; p.len() + 1];
            for i in 1..=p.len() {
                next[i] = (col[i - 1] + usize::from(p[i - 1] != c))
                    .min(col[i] + 1)
                    .min(next[i - 1] + 1);
            }
            if next[p.len()] <= k {
                hits.push(SearchHit {
                    end_pos: j + 1,
                    dist: next[p.len()],
                });
            }
            col = next;
        }
        hits
    }

    #[test]
    fn kitten_sitting() {
        assert_eq!(recursive_distance(b"kitten", b"sitting"), 3);
        assert_eq!(dp_edit_distance(b"kitten", b"sitting"), 3);
        assert_eq!(bv_edit_distance(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn empty_cases() {
        assert_eq!(dp_edit_distance(b"", b"abc"), 3);
        assert_eq!(dp_edit_distance(b"abc", b""), 3);
        assert_eq!(bv_edit_distance(b"", b"abc"), 3);
        assert_eq!(bv_edit_distance(b"abc", b""), 3);
        assert_eq!(bv_edit_distance(b"", b""), 0);
    }

    #[test]
    fn encoded_pair_matches_oracle() {
        let (a, b) = (b"RLnAGnACl", b"RLnAGnBbBCs");
        assert_eq!(bv_edit_distance(a, b), dp_edit_distance(a, b));
        assert_eq!(dp_edit_distance(a, b), recursive_distance(a, b));
    }

    #[test]
    fn search_examples() {
        assert_eq!(bv_search(b"nA", b"RLnAnB", 0), vec![SearchHit { end_pos: 4, dist: 0 }]);
        let hits = bv_search(b"abc", b"xxabcxx", 1);
        let expected = vec![
            SearchHit { end_pos: 4, dist: 1 },
            SearchHit { end_pos: 5, dist: 0 },
            SearchHit { end_pos: 6, dist: 1 },
        ];
        assert_eq!(hits, expected);
        assert_eq!(naive_search(b"abc", b"xxabcxx", 1), expected);
    }

    #[test]
    fn saturated_threshold_hits_everywhere() {
        let hits = bv_search(b"pattern", b"some unrelated text", 7);
        assert_eq!(hits.len(), 19);
        assert!(hits.iter().enumerate().all(|(i, h)| h.end_pos == i + 1));
    }

    #[test]
    fn long_patterns_cross_word_boundaries() {
        for m in [31, 32, 33, 63, 64, 65, 127, 128, 129, 200] {
            let a: Vec<u8> = (0..m).map(|i| b"ACGT"[(i * 7 + i / 3) % 4]).collect();
            let mut b = a.clone();
            b.remove(m / 2);
            b.insert(m / 3, b'X');
            b[m - 2] = b'Y';
            assert_eq!(bv_edit_distance(&a, &b), dp_edit_distance(&a, &b), "m = {m}");
            assert_eq!(bv_search(&a, &b, m / 4), naive_search(&a, &b, m / 4), "m = {m}");
        }
    }

    fn enc(bytes: &[u8]) -> EncodedString {
        EncodedString {
            bytes: bytes.to_vec(),
            token_map: TokenMap::default(),
            source: Source::Rule("r".into()),
        }
    }

    #[test]
    fn ties_agree_with_brute_force() {
        let part = enc(b"RLnAnBeCABGnAnBC");
        let rule = enc(b"RLnAnBeCABGnBnAbAC");
        let perms = crate::encoder::token_remappings(&part, 720);
        let dists: Vec<usize> = perms.strings.iter().map(|s| dp_edit_distance(s, &rule.bytes)).collect();
        let want = *dists.iter().min().unwrap();
        let (best, ties) = tied_alignments(&part, &rule, MatchMode::Global, 720);
        assert_eq!(best.distance, want);
        assert_eq!(ties.len(), dists.iter().filter(|&&d| d == want).count());
        assert_eq!(ties[0], best.remapping);
        assert_eq!(best, best_alignment(&part, &rule, MatchMode::Global, 720));
    }

    #[test]
    fn identical_encodings_align_at_identity() {
        let s = enc(b"RLnAGnBbBCs");
        let r = best_alignment(&s, &s, MatchMode::Global, 720);
        assert_eq!((r.distance, r.remapping_index), (0, 0));
    }

    #[test]
    fn swapped_tokens_align_under_the_swap() {
        let part = enc(b"RLnAnBeCABGC");
        let rule = enc(b"RLnBnAeCBAGC");
        // brute force over every token permutation of the participant
        let perms = crate::encoder::token_remappings(&part, 720);
        let dists: Vec<usize> = perms.strings.iter().map(|s| dp_edit_distance(s, &rule.bytes)).collect();
        let want = *dists.iter().min().unwrap();
        let want_idx = dists.iter().position(|&d| d == want).unwrap();
        assert_eq!(want, 0);
        let r = best_alignment(&part, &rule, MatchMode::Global, 720);
        assert_eq!((r.distance, r.remapping_index), (want, want_idx));
        assert_ne!(r.remapping_index, 0);
    }

    #[test]
    fn semi_global_finds_contained_participant() {
        let r = best_alignment(&enc(b"RLnAGnAC"), &enc(b"RLnAGnACslr"), MatchMode::SemiGlobal, 720);
        assert_eq!(r.distance, 0);
        let g = best_alignment(&enc(b"RLnAGnAC"), &enc(b"RLnAGnACslr"), MatchMode::Global, 720);
        assert_eq!(g.distance, 3);
    }

    #[test]
    fn permutation_cap_is_reported() {
        let r = best_alignment(&enc(b"RLnAnBnCnDGC"), &enc(b"RLnAGC"), MatchMode::Global, 10);
        assert!(r.truncated);
        let r = best_alignment(&enc(b"RLnAnBGC"), &enc(b"RLnAGC"), MatchMode::Global, 10);
        assert!(!r.truncated);
    }

    fn small_alpha() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(prop::sample::select(b"abcd".to_vec()), 0..80)
    }

    proptest! {
        #[test]
        fn bit_vector_matches_table(a in small_alpha(), b in small_alpha()) {
            prop_assert_eq!(bv_edit_distance(&a, &b), dp_edit_distance(&a, &b));
        }

        #[test]
        fn table_matches_recursion(a in prop::collection::vec(0u8..3, 0..12),
                                   b in prop::collection::vec(0u8..3, 0..12)) {
            prop_assert_eq!(dp_edit_distance(&a, &b), recursive_distance(&a, &b));
        }

        #[test]
        fn metric_axioms(a in small_alpha(), b in small_alpha(), c in small_alpha()) {
            let ab = dp_edit_distance(&a, &b);
            prop_assert_eq!(ab, dp_edit_distance(&b, &a));
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(dp_edit_distance(&a, &c) <= ab + dp_edit_distance(&b, &c));
        }

        #[test]
        fn search_matches_naive(p in prop::collection::vec(prop::sample::select(b"abc".to_vec()), 1..70),
                                t in small_alpha(), k in 0usize..8) {
            let k = k.min(p.len());
            prop_assert_eq!(bv_search(&p, &t, k), naive_search(&p, &t, k));
        }

        #[test]
        fn hits_are_monotone_in_k(p in prop::collection::vec(prop::sample::select(b"abc".to_vec()), 1..20),
                                  t in small_alpha(), k in 0usize..6) {
            let lo = bv_search(&p, &t, k);
            let hi = bv_search(&p, &t, k + 1);
            prop_assert!(lo.iter().all(|h| hi.contains(h)));
        }
    }
}
