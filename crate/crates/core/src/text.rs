//! Tokenization and stemming shared by label matching and the metrics.

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Collapses runs of whitespace and lowercases; used for lexicon phrases
/// and label texts.
pub fn normalize_phrase(phrase: &str) -> String {
    phrase
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Deterministic suffix stripper covering the plural, past and progressive
/// inflections (`-s`, `-es`, `-ed`, `-ing`).
///
/// Short words are left alone so that `is`, `red`, `sing` survive.
pub fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    let n = w.chars().count();
    if n > 4 && w.ends_with("ing") {
        return w[..w.len() - 3].to_string();
    }
    if n > 3 && w.ends_with("ed") {
        return w[..w.len() - 2].to_string();
    }
    if n > 3 && w.ends_with("es") {
        let base = &w[..w.len() - 2];
        // Bases under three letters fall through to the plain -s rule.
        let sibilant = ["s", "x", "z", "ch", "sh"]
            .iter()
            .any(|s| base.ends_with(s));
        if base.len() >= 3 && sibilant {
            return base.to_string();
        }
    }
    if n > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") {
        return w[..w.len() - 1].to_string();
    }
    w
}

pub fn stem_all(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| stem(t)).collect()
}

/// True when `needle` occurs as a contiguous run inside `haystack`.
pub fn contains_subsequence(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_strips_punctuation_and_case() {
        assert_eq!(
            tokenize("Someone, back in elf guise, is trying."),
            vec!["someone", "back", "in", "elf", "guise", "is", "trying"]
        );
        assert!(tokenize("  ,,  ").is_empty());
    }

    #[test]
    fn stem_rules() {
        assert_eq!(stem("looks"), "look");
        assert_eq!(stem("look"), "look");
        assert_eq!(stem("walking"), "walk");
        assert_eq!(stem("opened"), "open");
        assert_eq!(stem("watches"), "watch");
        assert_eq!(stem("boxes"), "box");
        assert_eq!(stem("uses"), "use");
        assert_eq!(stem("glass"), "glass");
        assert_eq!(stem("is"), "is");
        assert_eq!(stem("red"), "red");
        assert_eq!(stem("sing"), "sing");
    }

    #[test]
    fn subsequence_match() {
        let hay = tokenize("someone looks up slowly");
        assert!(contains_subsequence(&hay, &tokenize("looks up")));
        assert!(!contains_subsequence(&hay, &tokenize("up looks")));
        assert!(!contains_subsequence(&hay, &[]));
    }
}
