//! English sanitization: identifier splitting, stop-word removal, lemmatization.
//!
//! The stop-word list is the common NLTK English list. The lemmatizer is a
//! small suffix-rule engine with an irregular-form table; it is applied until
//! a fixed point so that lemmatizing a lemma is a no-op.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

/// Ordered, sanitized tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenStream {
    pub tokens: Vec<String>,
}

impl TokenStream {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenStream { tokens }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn counts(&self) -> HashMap<&str, usize> {
        let mut m = HashMap::new();
        for t in &self.tokens {
            *m.entry(t.as_str()).or_insert(0) += 1;
        }
        m
    }
}

const STOP_WORDS: &[&str] = &[
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've",
    "you'll", "you'd", "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself",
    "she", "she's", "her", "hers", "herself", "it", "it's", "its", "itself", "they", "them",
    "their", "theirs", "themselves", "what", "which", "who", "whom", "this", "that", "that'll",
    "these", "those", "am", "is", "are", "was", "were", "be", "been", "being", "have", "has",
    "had", "having", "do", "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or",
    "because", "as", "until", "while", "of", "at", "by", "for", "with", "about", "against",
    "between", "into", "through", "during", "before", "after", "above", "below", "to", "from",
    "up", "down", "in", "out", "on", "off", "over", "under", "again", "further", "then", "once",
    "here", "there", "when", "where", "why", "how", "all", "any", "both", "each", "few", "more",
    "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so", "than",
    "too", "very", "s", "t", "can", "will", "just", "don", "don't", "should", "should've", "now",
    "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren", "aren't", "couldn", "couldn't", "didn",
    "didn't", "doesn", "doesn't", "hadn", "hadn't", "hasn", "hasn't", "haven", "haven't", "isn",
    "isn't", "ma", "mightn", "mightn't", "mustn", "mustn't", "needn", "needn't", "shan",
    "shan't", "shouldn", "shouldn't", "wasn", "wasn't", "weren", "weren't", "won", "won't",
    "wouldn", "wouldn't",
];

const IRREGULAR: &[(&str, &str)] = &[
    ("used", "use"),
    ("using", "use"),
    ("caches", "cache"),
    ("children", "child"),
    ("men", "man"),
    ("women", "woman"),
    ("indices", "index"),
    ("matrices", "matrix"),
    ("vertices", "vertex"),
    ("analyses", "analysis"),
    ("written", "write"),
    ("wrote", "write"),
    ("made", "make"),
    ("making", "make"),
    ("sent", "send"),
    ("gave", "give"),
    ("given", "give"),
    ("taken", "take"),
    ("took", "take"),
    ("ran", "run"),
    ("running", "run"),
    ("read", "read"),
    ("built", "build"),
    ("chosen", "choose"),
    ("known", "know"),
    ("shown", "show"),
    ("found", "find"),
    ("left", "leave"),
    ("lost", "lose"),
    ("held", "hold"),
    ("caused", "cause"),
    ("causing", "cause"),
];

/// Words the suffix rules would mangle.
const PROTECTED: &[&str] = &[
    "during", "nothing", "something", "anything", "everything", "thing", "string", "ring",
    "bring", "spring", "king", "morning", "evening", "ceiling", "series", "species", "news",
    "always", "perhaps", "whereas", "towards", "hundred", "kindred", "sacred", "wicked", "naked",
    "bed", "red", "shed",
];

fn stop_words() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOP_WORDS.iter().copied().collect())
}

fn irregular() -> &'static HashMap<&'static str, &'static str> {
    static MAP: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    MAP.get_or_init(|| IRREGULAR.iter().copied().collect())
}

fn protected() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| PROTECTED.iter().copied().collect())
}

pub fn is_stop_word(word: &str) -> bool {
    stop_words().contains(word)
}

/// Splits an identifier-like chunk on case and letter/digit boundaries.
///
/// An upper-case run followed by a capitalized word keeps its last letter with
/// the word (`XMLParser` -> `XML`, `Parser`); a lone leading capital stays
/// glued to the following word (`XStream` -> `XStream`).
pub fn split_identifier(chunk: &str) -> Vec<String> {
    let chars: Vec<char> = chunk.chars().collect();
    let mut pieces: Vec<String> = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if i > 0 && !cur.is_empty() {
            let prev = chars[i - 1];
            let next = chars.get(i + 1).copied();
            let boundary = (prev.is_lowercase() && c.is_uppercase())
                || (prev.is_alphabetic() && c.is_numeric())
                || (prev.is_numeric() && c.is_alphabetic())
                || (prev.is_uppercase()
                    && c.is_uppercase()
                    && next.is_some_and(|n| n.is_lowercase()));
            if boundary {
                pieces.push(std::mem::take(&mut cur));
            }
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        pieces.push(cur);
    }

    let mut merged: Vec<String> = Vec::with_capacity(pieces.len());
    let mut i = 0;
    while i < pieces.len() {
        let p = &pieces[i];
        let lone_capital = p.chars().count() == 1 && p.chars().all(char::is_uppercase);
        let next_capitalized = pieces.get(i + 1).is_some_and(|n| {
            let mut cs = n.chars();
            cs.next().is_some_and(char::is_uppercase) && cs.next().is_some_and(char::is_lowercase)
        });
        if lone_capital && next_capitalized {
            merged.push(format!("{}{}", p, pieces[i + 1]));
            i += 2;
        } else {
            merged.push(p.clone());
            i += 1;
        }
    }
    merged
}

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y'))
}

fn restore_stem(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 2 && b[n - 1] == b[n - 2] && b[n - 1].is_ascii_alphabetic() {
        let c = b[n - 1];
        if !matches!(c, b'a' | b'e' | b'i' | b'o' | b'u' | b'l' | b's' | b'z') {
            return stem[..n - 1].to_string();
        }
    }
    let wants_e = ["at", "iz", "bl", "dl", "pl", "tl", "gl", "kl", "fl", "cl", "ur", "dg"]
        .iter()
        .any(|s| stem.ends_with(s))
        || stem.ends_with('v')
        || (stem.ends_with('c') && !stem.ends_with("cc"))
        || (stem.ends_with('s') && !stem.ends_with("ss"));
    if wants_e {
        format!("{stem}e")
    } else {
        stem.to_string()
    }
}

/// One rewrite step; `None` when no rule applies. Every rule shortens the word
/// or maps it to a fixed point, so iteration terminates.
fn lemma_step(w: &str) -> Option<String> {
    if protected().contains(w) {
        return None;
    }
    if let Some(&base) = irregular().get(w) {
        return (base != w).then(|| base.to_string());
    }
    let n = w.len();
    if n >= 5 && w.ends_with("sses") {
        return Some(w[..n - 2].to_string());
    }
    if n >= 5 && w.ends_with("ies") {
        return Some(format!("{}y", &w[..n - 3]));
    }
    if n >= 5 && (w.ends_with("xes") || w.ends_with("ches") || w.ends_with("shes") || w.ends_with("zzes")) {
        return Some(w[..n - 2].to_string());
    }
    if n >= 4
        && w.ends_with('s')
        && !(w.ends_with("ss") || w.ends_with("us") || w.ends_with("is"))
    {
        return Some(w[..n - 1].to_string());
    }
    if n >= 5 && w.ends_with("ied") {
        return Some(format!("{}y", &w[..n - 3]));
    }
    if w.ends_with("eed") {
        return None;
    }
    for suffix in ["ed", "ing"] {
        if let Some(stem) = w.strip_suffix(suffix) {
            if let Some(base) = inflection_base(stem) {
                return Some(base);
            }
        }
    }
    None
}

/// Base form for an `-ed`/`-ing` stem. Three-letter stems only qualify when
/// they take a restored `e` (`based` -> `base`), which keeps short base
/// words such as `embed` stable.
fn inflection_base(stem: &str) -> Option<String> {
    if !has_vowel(stem) || stem.len() < 3 {
        return None;
    }
    let base = restore_stem(stem);
    (stem.len() >= 4 || base.len() > stem.len()).then_some(base)
}

pub fn lemmatize(word: &str) -> String {
    let mut cur = word.to_string();
    for _ in 0..32 {
        match lemma_step(&cur) {
            Some(next) if next != cur => cur = next,
            _ => break,
        }
    }
    cur
}

/// Lowercased, stop-word-free, lemmatized tokens with identifiers split into sub-words.
pub fn sanitize(raw: &str) -> TokenStream {
    let mut tokens = Vec::new();
    for chunk in raw.split(|c: char| !c.is_alphanumeric()) {
        if chunk.is_empty() {
            continue;
        }
        for piece in split_identifier(chunk) {
            if piece.chars().all(|c| c.is_numeric()) {
                continue;
            }
            let lower = piece.to_lowercase();
            if is_stop_word(&lower) {
                continue;
            }
            let lemma = lemmatize(&lower);
            if lemma.chars().count() < 2 || is_stop_word(&lemma) {
                continue;
            }
            tokens.push(lemma);
        }
    }
    TokenStream { tokens }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_input() {
        assert!(sanitize("").is_empty());
        assert!(sanitize("  ,;  ").is_empty());
    }

    #[test]
    fn description_fragment() {
        let toks = sanitize("does not restrict the classes that can be serialized");
        assert_eq!(toks.tokens, vec!["restrict", "class", "serialize"]);
    }

    #[test]
    fn identifier_split() {
        assert_eq!(
            split_identifier("XStreamBrokerContext"),
            vec!["XStream", "Broker", "Context"]
        );
        assert_eq!(
            sanitize("XStreamBrokerContext").tokens,
            vec!["xstream", "broker", "context"]
        );
        assert_eq!(split_identifier("getXMLParser"), vec!["get", "XML", "Parser"]);
        assert_eq!(split_identifier("IOException"), vec!["IO", "Exception"]);
        assert_eq!(sanitize("max_file_size").tokens, vec!["max", "file", "size"]);
        assert_eq!(split_identifier("utf8Decoder"), vec!["utf", "8", "Decoder"]);
    }

    #[test]
    fn lemmas() {
        let cases = [
            ("classes", "class"),
            ("serialized", "serialize"),
            ("deserialization", "deserialization"),
            ("attackers", "attacker"),
            ("libraries", "library"),
            ("applied", "apply"),
            ("matches", "match"),
            ("indexes", "index"),
            ("sizes", "size"),
            ("parsed", "parse"),
            ("parsing", "parse"),
            ("embedded", "embed"),
            ("handling", "handle"),
            ("resolved", "resolve"),
            ("configured", "configure"),
            ("settings", "set"),
            ("string", "string"),
            ("process", "process"),
            ("processes", "process"),
            ("status", "status"),
            ("analysis", "analysis"),
            ("needed", "need"),
            ("used", "use"),
            ("uses", "use"),
            ("based", "base"),
            ("embed", "embed"),
            ("sending", "send"),
        ];
        for (word, lemma) in cases {
            assert_eq!(lemmatize(word), lemma, "{word}");
        }
    }

    #[test]
    fn irregular_targets_are_fixed_points() {
        for (_, base) in IRREGULAR {
            assert_eq!(lemmatize(base), *base);
        }
    }

    proptest! {
        #[test]
        fn lemmatize_idempotent(w in "[a-z]{1,14}") {
            let once = lemmatize(&w);
            prop_assert_eq!(lemmatize(&once), once);
        }

        #[test]
        fn sanitize_idempotent(s in "[a-zA-Z0-9_ .,()'-]{0,80}") {
            let once = sanitize(&s);
            let twice = sanitize(&once.join());
            let mut a = once.tokens.clone();
            let mut b = twice.tokens.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn sanitize_output_shape(s in "\\PC{0,60}") {
            for t in sanitize(&s).tokens {
                prop_assert!(!t.is_empty());
                prop_assert!(!is_stop_word(&t));
                prop_assert_eq!(t.to_lowercase(), t.clone());
            }
        }
    }
}
