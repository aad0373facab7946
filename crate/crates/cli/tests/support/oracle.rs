//! Independent restatement of the mock judge's rules, computed directly on
//! case text. Gold labels for the toy corpus come from here.

use std::collections::BTreeSet;

pub const THRESHOLD: f64 = 0.4;

fn is_han(c: char) -> bool {
    ('\u{4e00}'..='\u{9fff}').contains(&c)
}

/// Character bigrams of each Han run (a one-character run stays whole).
pub fn units(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if !is_han(chars[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && is_han(chars[i]) {
            i += 1;
        }
        let run = &chars[start..i];
        if run.len() == 1 {
            out.insert(run[0].to_string());
        }
        for w in run.windows(2) {
            out.insert(w.iter().collect());
        }
    }
    out
}

pub fn lexicon(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

pub fn mf_relevant(a: &str, b: &str) -> bool {
    let (a, b) = (units(a), units(b));
    let union = a.union(&b).count();
    if union == 0 {
        return true;
    }
    a.intersection(&b).count() as f64 / union as f64 >= THRESHOLD
}

pub fn lf_relevant(a: &str, b: &str, lex: &BTreeSet<String>) -> bool {
    let a: BTreeSet<_> = units(a).intersection(lex).cloned().collect();
    units(b).iter().any(|t| a.contains(t))
}

pub fn label(a: &str, b: &str, lex: &BTreeSet<String>) -> u8 {
    u8::from(mf_relevant(a, b)) + 2 * u8::from(lf_relevant(a, b, lex))
}
