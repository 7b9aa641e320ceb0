use std::sync::LazyLock;

use regex::Regex;

use crate::corpus::normalize_whitespace;

const LETTERS: &str = "ABCDEF";

pub fn option_letter(index: usize) -> char {
    LETTERS.as_bytes()[index] as char
}

/// `A. first\nB. second ...`
pub fn format_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {}", option_letter(i), o))
        .collect::<Vec<_>>()
        .join("\n")
}

fn letter_index(c: &str, n: usize) -> Option<usize> {
    let ch = c.chars().next()?.to_ascii_uppercase();
    let idx = LETTERS.find(ch)?;
    (idx < n).then_some(idx)
}

static ANSWER_IS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\banswer(?:\s+is)?\s*[:\-]?\s*[\(\[]?\s*([a-f])\s*[\)\]]?(?:[^a-z0-9]|$)").unwrap()
});
static PAREN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)[\(\[]([a-f])[\)\]]").unwrap());
static LABEL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)(?:^|\s)([a-f])[.)](?:\s|$)").unwrap());

/// Lowercase "a" followed by a word reads as the article, not option A.
fn article(text: &str, m: &regex::Match) -> bool {
    m.as_str() == "a" && text[m.end()..].starts_with(|c: char| c == ' ') && text[m.end()..].trim_start().starts_with(|c: char| c.is_alphabetic())
}

/// Maps a free-form reply to an option index.
///
/// Cascade, first hit wins, case-insensitive:
/// 1. the whole reply is one letter (surrounding punctuation ignored);
/// 2. `answer is X` / `answer: X`, then `(X)`, then a `X.` or `X)` label;
/// 3. exactly one option's text occurs in the reply.
pub fn extract_choice(text: &str, options: &[String]) -> Option<usize> {
    let n = options.len().min(LETTERS.len());

    let bare = text.trim().trim_matches(|c: char| c.is_whitespace() || "()[]{}.,:;*\"'`".contains(c));
    if bare.chars().count() == 1 {
        if let Some(i) = letter_index(bare, n) {
            return Some(i);
        }
    }

    for re in [&*ANSWER_IS, &*PAREN, &*LABEL] {
        for c in re.captures_iter(text) {
            let m = c.get(1).expect("group 1");
            if re.as_str() == ANSWER_IS.as_str() && article(text, &m) {
                continue;
            }
            if let Some(i) = letter_index(m.as_str(), n) {
                return Some(i);
            }
        }
    }

    let hay = normalize_whitespace(text).to_lowercase();
    let mut hits = options
        .iter()
        .enumerate()
        .filter(|(_, o)| {
            let o = normalize_whitespace(o).to_lowercase();
            !o.is_empty() && contains_word(&hay, &o)
        })
        .map(|(i, _)| i);
    match (hits.next(), hits.next()) {
        (Some(i), None) => Some(i),
        _ => None,
    }
}

/// `needle` occurs in `hay` with no alphanumeric character on either side.
fn contains_word(hay: &str, needle: &str) -> bool {
    hay.match_indices(needle).any(|(at, _)| {
        let before = hay[..at].chars().next_back();
        let after = hay[at + needle.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn option_text_is_word_bounded() {
        let opts = vec!["x".to_string(), "y".to_string()];
        assert_eq!(extract_choice("hard to say", &opts), None);
        assert_eq!(extract_choice("I pick y here", &opts), Some(1));
    }

    fn opts(n: usize) -> Vec<String> {
        ["the cup falls", "the cup floats", "the cup melts", "the cup bounces", "nothing", "both"]
            .iter()
            .take(n)
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn bare_letter() {
        assert_eq!(extract_choice("B", &opts(4)), Some(1));
        assert_eq!(extract_choice(" (d). ", &opts(4)), Some(3));
        assert_eq!(extract_choice("E", &opts(4)), None);
    }

    #[test]
    fn answer_is_pattern() {
        assert_eq!(extract_choice("The answer is (c).", &opts(4)), Some(2));
        assert_eq!(extract_choice("Answer: B because it rolls", &opts(4)), Some(1));
        assert_eq!(extract_choice("I think the answer is D", &opts(4)), Some(3));
    }

    #[test]
    fn article_is_not_option_a() {
        assert_eq!(extract_choice("The answer is a cup that floats", &opts(2)), None);
        assert_eq!(extract_choice("answer is a", &opts(2)), Some(0));
    }

    #[test]
    fn label_patterns() {
        assert_eq!(extract_choice("(B) the cup floats", &opts(4)), Some(1));
        assert_eq!(extract_choice("C. the cup melts", &opts(4)), Some(2));
        assert_eq!(extract_choice("Looking closely:\nA) it falls", &opts(4)), Some(0));
    }

    #[test]
    fn option_text_containment() {
        assert_eq!(extract_choice("I believe THE CUP   MELTS here", &opts(4)), Some(2));
        let overlapping = vec!["red".to_string(), "red ball".to_string()];
        assert_eq!(extract_choice("a red ball", &overlapping), None);
    }

    #[test]
    fn ambiguous_pair_has_no_rule() {
        // Not a single letter; no answer/paren/label pattern; no option text.
        let o = opts(4);
        assert_eq!(extract_choice("both A and B", &o), None);
        let bare = "both A and B".trim();
        assert!(bare.chars().count() > 1);
        assert!(!ANSWER_IS.is_match(bare) && !PAREN.is_match(bare) && !LABEL.is_match(bare));
    }

    #[test]
    fn unparseable() {
        assert_eq!(extract_choice("I cannot tell from the text", &opts(4)), None);
        assert_eq!(extract_choice("", &opts(4)), None);
    }

    #[test]
    fn letters_and_listing() {
        assert_eq!(option_letter(5), 'F');
        assert_eq!(format_options(&opts(2)), "A. the cup falls\nB. the cup floats");
    }
}
