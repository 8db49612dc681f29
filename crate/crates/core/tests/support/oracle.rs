//! Brute-force Ratcliff/Obershelp, written directly from the definition.
//!
//! Enumerates every start pair and extends greedily, keeping the first
//! maximal block in (start in a, start in b) order, then recurses literally.
#![allow(dead_code)]

pub fn brute_matches(a: &[char], b: &[char]) -> usize {
    let mut best_len = 0;
    let mut best = (0, 0);
    for i in 0..a.len() {
        for j in 0..b.len() {
            let mut k = 0;
            while i + k < a.len() && j + k < b.len() && a[i + k] == b[j + k] {
                k += 1;
            }
            if k > best_len {
                best_len = k;
                best = (i, j);
            }
        }
    }
    if best_len == 0 {
        return 0;
    }
    let (i, j) = best;
    best_len + brute_matches(&a[..i], &b[..j]) + brute_matches(&a[i + best_len..], &b[j + best_len..])
}

pub fn brute_ratio(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * brute_matches(&a, &b) as f64 / (a.len() + b.len()) as f64
}
