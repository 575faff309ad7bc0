/// Lowercased word tokens; every punctuation character is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            flush(&mut word, &mut out);
            out.push(c.to_lowercase().collect());
        }
    }
    flush(&mut word, &mut out);
    out
}

fn flush(word: &mut String, out: &mut Vec<String>) {
    if !word.is_empty() {
        out.push(std::mem::take(word));
    }
}

/// Space-joined tokens. `tokenize(detokenize(t)) == t` for any token list
/// produced by [`tokenize`].
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(t.as_ref());
    }
    s
}

/// Speaker-prefixed utterance tokens, without the leading [CLS].
pub fn utterance_tokens(speaker: &str, text: &str) -> Vec<String> {
    let mut toks = tokenize(speaker);
    toks.push(":".to_string());
    toks.extend(tokenize(text));
    toks
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(tokenize("It's raining!"), ["it", "'", "s", "raining", "!"]);
        assert_eq!(tokenize("  a,b  "), ["a", ",", "b"]);
        assert!(tokenize("").is_empty());
        assert_eq!(utterance_tokens("Val", "it's raining!"), ["val", ":", "it", "'", "s", "raining", "!"]);
        assert_eq!(utterance_tokens("A", ""), ["a", ":"]);
    }

    #[test]
    fn specials_are_never_produced() {
        let toks = tokenize("[CLS] hello [MASK]");
        assert!(!toks.iter().any(|t| t.starts_with('[') && t.len() > 1));
    }

    proptest! {
        #[test]
        fn round_trip_up_to_whitespace(x in "[ -~]{0,40}") {
            let toks = tokenize(&x);
            let back = detokenize(&toks);
            let squash = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            prop_assert_eq!(squash(&back), squash(&x.to_lowercase()));
            // stable under repeated application
            prop_assert_eq!(detokenize(&tokenize(&back)), back);
        }
    }
}
