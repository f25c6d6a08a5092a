//! Shared text utilities: normalization, tokenization, sentence splitting.

/// Answer normalization: lowercase, strip punctuation, collapse whitespace.
///
/// This is the comparison basis for every "does X align with answer A" rule
/// in the filtering and mock-judge layers.
pub fn normalize_answer(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut last_space = true;
    for c in s.chars() {
        if c.is_alphanumeric() {
            for lc in c.to_lowercase() {
                out.push(lc);
            }
            last_space = false;
        } else if !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Name normalization for entity anchoring: lowercase, trim, collapse
/// internal whitespace. Punctuation is preserved.
pub fn normalize_name(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut last_space = true;
    for c in s.trim().chars() {
        if c.is_whitespace() {
            if !last_space {
                out.push(' ');
                last_space = true;
            }
        } else {
            for lc in c.to_lowercase() {
                out.push(lc);
            }
            last_space = false;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Lowercase tokens split on whitespace and punctuation.
pub fn tokenize(s: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for c in s.chars() {
        if c.is_alphanumeric() {
            for lc in c.to_lowercase() {
                cur.push(lc);
            }
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

/// Like [`tokenize`], but each token carries its byte span in the source
/// text, so matched token runs can be mapped back to the original surface.
pub fn tokenize_with_spans(s: &str) -> Vec<(String, usize, usize)> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut start = 0usize;
    for (i, c) in s.char_indices() {
        if c.is_alphanumeric() {
            if cur.is_empty() {
                start = i;
            }
            for lc in c.to_lowercase() {
                cur.push(lc);
            }
        } else if !cur.is_empty() {
            tokens.push((std::mem::take(&mut cur), start, i));
        }
    }
    if !cur.is_empty() {
        tokens.push((cur, start, s.len()));
    }
    tokens
}

/// The first whitespace-delimited token that parses fully as an integer.
pub fn first_standalone_integer(s: &str) -> Option<i64> {
    s.split_whitespace().find_map(|tok| tok.parse::<i64>().ok())
}

/// True when the normalized `needle` occurs inside the normalized `haystack`.
///
/// Empty needles never match.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    let n = normalize_answer(needle);
    if n.is_empty() {
        return false;
    }
    normalize_answer(haystack).contains(&n)
}

/// Default abbreviation guard list for sentence splitting.
pub const DEFAULT_ABBREVIATIONS: [&str; 5] = ["e.g.", "i.e.", "vs.", "Dr.", "No."];

/// Split `text` into sentences on `.`/`?`/`!` followed by whitespace and a
/// capital letter, skipping boundaries that end a guarded abbreviation.
pub fn split_sentences(text: &str, extra_abbreviations: &[String]) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if c == '.' || c == '?' || c == '!' {
            // Advance past a run of terminal punctuation.
            let mut end = i + 1;
            while end < chars.len() && matches!(chars[end], '.' | '?' | '!') {
                end += 1;
            }
            let mut j = end;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            let followed_by_capital = j > end && j < chars.len() && chars[j].is_uppercase();
            let prefix: String = chars[start..end].iter().collect();
            let guarded = DEFAULT_ABBREVIATIONS
                .iter()
                .copied()
                .chain(extra_abbreviations.iter().map(|a| a.as_str()))
                .any(|a| prefix.trim_end().ends_with(a));
            if followed_by_capital && !guarded {
                let sentence: String = chars[start..end].iter().collect();
                let sentence = sentence.trim().to_string();
                if !sentence.is_empty() {
                    sentences.push(sentence);
                }
                start = j;
                i = j;
                continue;
            }
            i = end;
            continue;
        }
        i += 1;
    }
    let tail: String = chars[start..].iter().collect();
    let tail = tail.trim().to_string();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

/// The last sentence of `text` (the whole text when it is one sentence).
pub fn final_sentence(text: &str) -> String {
    split_sentences(text, &[]).pop().unwrap_or_default()
}

/// Stable 64-bit FNV-1a hash. Used wherever hashing must not vary across
/// platforms or compiler releases (mock embeddings, fixture keying).
pub fn fnv1a(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_answer_strips_punctuation_and_case() {
        assert_eq!(
            normalize_answer("Squamous-Cell Carcinoma!"),
            "squamous cell carcinoma"
        );
        assert_eq!(normalize_answer("  a  b "), "a b");
        assert_eq!(normalize_answer("..."), "");
    }

    #[test]
    fn normalize_name_collapses_whitespace() {
        assert_eq!(normalize_name("  basement   MEMBRANE "), "basement membrane");
    }

    #[test]
    fn tokenize_splits_on_punctuation() {
        assert_eq!(tokenize("the cat, sat."), vec!["the", "cat", "sat"]);
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn containment_uses_normalized_forms() {
        assert!(contains_normalized(
            "The diagnosis is Squamous Cell Carcinoma.",
            "squamous-cell carcinoma"
        ));
        assert!(!contains_normalized("anything", ""));
    }

    #[test]
    fn sentence_split_respects_abbreviation_guard() {
        let s = split_sentences("Mitoses are frequent, e.g. in the cortex. Necrosis is seen.", &[]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1], "Necrosis is seen.");
    }

    #[test]
    fn sentence_split_requires_capital() {
        let s = split_sentences("value is 3.5 and rising. Next point.", &[]);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn final_sentence_of_single_sentence_text() {
        assert_eq!(final_sentence("It is benign."), "It is benign.");
    }

    #[test]
    fn fnv1a_is_stable() {
        assert_eq!(fnv1a(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a("a"), fnv1a("a"));
        assert_ne!(fnv1a("a"), fnv1a("b"));
    }

    #[test]
    fn spans_map_back_to_surface_text() {
        let s = "Non-small cell carcinoma";
        let toks = tokenize_with_spans(s);
        assert_eq!(toks[0].0, "non");
        assert_eq!(&s[toks[0].1..toks[3].2], "Non-small cell carcinoma");
    }

    #[test]
    fn standalone_integer_parsing() {
        assert_eq!(first_standalone_integer("score: 4 / 5"), Some(4));
        assert_eq!(first_standalone_integer("six"), None);
        assert_eq!(first_standalone_integer("-2 stars"), Some(-2));
    }
}
