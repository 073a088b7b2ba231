#![allow(dead_code)]

use proptest::prelude::*;

const EMOTICONS: [&str; 34] = [
    ":-)", ":)", "(:", "(-:", ":))", "((:", ":-D", ":D", "X-D", "XD", "xD", "xD", "<3", "3",
    ":*", ":-*", "xP", "XP", "XP", "Xp", ":-|", ":->", ":-<", "8-)", ":-P", ":-p", "=P", "=p",
    ":*)", "*-*", "B-)", "O.o", "X-(", ")-X",
];

/// Whitespace as understood by Python's `re` `\s` and `str.split()`.
pub fn py_space(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

/// Python-style `str.replace`: non-overlapping, left to right.
fn replace_all(haystack: &[char], needle: &[char]) -> Vec<char> {
    let mut out = Vec::with_capacity(haystack.len());
    let mut i = 0;
    while i < haystack.len() {
        if haystack.len() - i >= needle.len() && haystack[i..i + needle.len()] == *needle {
            i += needle.len();
        } else {
            out.push(haystack[i]);
            i += 1;
        }
    }
    out
}

fn starts_with(s: &[char], i: usize, prefix: &str) -> bool {
    let p: Vec<char> = prefix.chars().collect();
    s.len() - i >= p.len() && s[i..i + p.len()] == p[..]
}

/// Regex-free reference for the nine-step cleaning cascade.
pub fn trace_clean(raw: &str) -> String {
    // 1. lowercase
    let s: Vec<char> = raw.to_lowercase().chars().collect();

    // 2. URLs: "http" + optional "s" + "://" + at least one non-space char
    let mut t = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let scheme = if starts_with(&s, i, "https://") {
            Some(8)
        } else if starts_with(&s, i, "http://") {
            Some(7)
        } else {
            None
        };
        if let Some(n) = scheme {
            let mut j = i + n;
            while j < s.len() && !py_space(s[j]) {
                j += 1;
            }
            if j > i + n {
                i = j;
                continue;
            }
        }
        t.push(s[i]);
        i += 1;
    }

    // 3. mentions: '@' followed by one or more ASCII word chars
    let word = |c: char| c.is_ascii_alphanumeric() || c == '_';
    let mut u = Vec::new();
    let mut i = 0;
    while i < t.len() {
        if t[i] == '@' && i + 1 < t.len() && word(t[i + 1]) {
            i += 1;
            while i < t.len() && word(t[i]) {
                i += 1;
            }
            continue;
        }
        u.push(t[i]);
        i += 1;
    }

    // 4. ASCII digits
    let mut v: Vec<char> = u.into_iter().filter(|c| !c.is_ascii_digit()).collect();

    // 5. emoticons in list order
    for e in EMOTICONS {
        let needle: Vec<char> = e.chars().collect();
        v = replace_all(&v, &needle);
    }

    // 6. runs outside [a-zA-Z?.!,¿] become one space
    let keep = |c: char| c.is_ascii_alphabetic() || "?.!,\u{bf}".contains(c);
    let mut w = Vec::new();
    let mut in_run = false;
    for c in v {
        if keep(c) {
            w.push(c);
            in_run = false;
        } else if !in_run {
            w.push(' ');
            in_run = true;
        }
    }

    // 7. punctuation to space
    let x: Vec<char> = w
        .into_iter()
        .map(|c| if "?.!,\u{bf}".contains(c) { ' ' } else { c })
        .collect();

    // 8. collapse spaces (and quotes, none of which survive step 6)
    let mut y = String::new();
    let mut prev_space = false;
    for c in x {
        let sp = c == ' ' || c == '"';
        if sp {
            if !prev_space {
                y.push(' ');
            }
        } else {
            y.push(c);
        }
        prev_space = sp;
    }

    // 9. strip
    y.trim_matches(py_space).to_string()
}

fn unescape(field: &str) -> String {
    let mut out = String::new();
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Reads a `raw<TAB>expected` corpus; `#` lines are comments.
pub fn read_golden(path: &str) -> Vec<(String, String)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let (raw, expected) = l.split_once('\t').expect("tab separated");
            (unescape(raw), unescape(expected))
        })
        .collect()
}

/// Strings assembled from fragments that exercise every cleaning step.
pub fn tweetish() -> impl Strategy<Value = String> {
    let fragments = prop::sample::select(vec![
        "http://", "https://", "t.co/x", "@", "@user_1", "a", "B", "z", "Q", "xD", "XP", " ",
        "  ", "\t", "\n", "0", "42", "_", ":", "-", ")", "(", "D", "x", "X", "P", "p", "<", "3",
        "*", "=", "8", "O", ".", "o", "|", ">", "?", "!", ",", "\u{bf}", "\u{e9}", "\u{1F600}",
        "\u{a0}", "\u{1c}", "#", "&amp;", "'", "\"", "\u{130}", "\u{212a}", "RT", "lol",
    ]);
    prop::collection::vec(fragments, 0..40).prop_map(|v| v.concat())
}

/// Made-up words standing in for harmful vocabulary.
pub const HARSH: [&str; 6] = ["zorbl", "gribnak", "vexlor", "kruddle", "snarfit", "blornish"];
/// Made-up words standing in for slurs aimed at a group.
pub const TARGETED: [&str; 4] = ["quezzak", "plomtar", "druvvik", "tazzler"];
pub const NEUTRAL: [&str; 16] = [
    "sunny", "coffee", "morning", "garden", "music", "friends", "weekend", "game", "team",
    "pizza", "train", "river", "book", "happy", "walk", "today",
];

/// Deterministic synthetic tweets: class 0 mixes targeted and harsh words,
/// class 1 uses harsh words, class 2 only neutral ones.
pub fn synthetic_texts(n: usize, seed: u64) -> Vec<(String, usize)> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move |m: usize| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) as usize) % m
    };
    (0..n)
        .map(|i| {
            let class = i % 3;
            let len = 3 + next(6);
            let words: Vec<&str> = (0..len)
                .map(|j| match (class, j) {
                    (0, 0) => TARGETED[next(TARGETED.len())],
                    (0, 1) | (1, 0) => HARSH[next(HARSH.len())],
                    _ => NEUTRAL[next(NEUTRAL.len())],
                })
                .collect();
            (words.join(" "), class)
        })
        .collect()
}

/// A dataset row with votes consistent with its label.
pub fn row(row_id: i64, text: &str, class: usize) -> hatemod_core::corpus::LabeledTweet {
    let mut votes = [0i64; 3];
    votes[class] = 3;
    hatemod_core::corpus::LabeledTweet {
        row_id,
        count: 3,
        hate_votes: votes[0],
        offensive_votes: votes[1],
        neither_votes: votes[2],
        label: hatemod_core::corpus::Label::from_index(class).unwrap(),
        text: text.to_string(),
        text_length: hatemod_core::textprep::word_count(text) as i64,
    }
}

pub fn dataset(rows: &[(String, usize)], first_id: i64) -> hatemod_core::corpus::Dataset {
    let rows = rows
        .iter()
        .enumerate()
        .map(|(i, (t, c))| row(first_id + i as i64, t, *c))
        .collect();
    hatemod_core::corpus::Dataset::from_rows(rows, "synthetic").unwrap()
}
