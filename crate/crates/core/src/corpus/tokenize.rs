use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub cjk_char_split: bool,
    pub min_token_len: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            cjk_char_split: true,
            min_token_len: 1,
        }
    }
}

/// Han ideographs and kana, which are written without word separators.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x309F        // hiragana
        | 0x30A0..=0x30FF      // katakana
        | 0x31F0..=0x31FF      // katakana phonetic extensions
        | 0x3400..=0x4DBF      // CJK extension A
        | 0x4E00..=0x9FFF      // CJK unified ideographs
        | 0xF900..=0xFAFF      // CJK compatibility ideographs
        | 0xFF66..=0xFF9F      // halfwidth katakana
        | 0x20000..=0x2FA1F    // CJK extensions B..F, compatibility supplement
    )
}

/// Splits text into runs of letters and digits. With `cjk_char_split`, each
/// CJK codepoint becomes its own token.
pub fn tokenize(text: &str, cfg: &TokenizerConfig) -> Vec<String> {
    let min_len = cfg.min_token_len.max(1);
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut current_chars = 0usize;

    let flush = |current: &mut String, count: &mut usize, tokens: &mut Vec<String>| {
        if *count >= min_len {
            tokens.push(std::mem::take(current));
        } else {
            current.clear();
        }
        *count = 0;
    };

    for c in text.chars() {
        if cfg.cjk_char_split && is_cjk(c) {
            flush(&mut current, &mut current_chars, &mut tokens);
            if min_len <= 1 {
                tokens.push(c.to_string());
            }
        } else if c.is_alphanumeric() {
            if cfg.lowercase {
                current.extend(c.to_lowercase());
            } else {
                current.push(c);
            }
            current_chars += 1;
        } else {
            flush(&mut current, &mut current_chars, &mut tokens);
        }
    }
    flush(&mut current, &mut current_chars, &mut tokens);
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tok(s: &str) -> Vec<String> {
        tokenize(s, &TokenizerConfig::default())
    }

    #[test]
    fn lowercases_and_splits() {
        assert_eq!(tok("The Cat sat"), vec!["the", "cat", "sat"]);
        assert_eq!(tok("hello, world!  42x"), vec!["hello", "world", "42x"]);
        assert!(tok("").is_empty());
        assert!(tok("  ,.; ").is_empty());
    }

    #[test]
    fn cjk_per_codepoint() {
        // expected value checked by a hand range check of each codepoint
        let expected: Vec<String> = "東京タワー"
            .chars()
            .filter(|&c| {
                let u = c as u32;
                (0x4E00..=0x9FFF).contains(&u) || (0x30A0..=0x30FF).contains(&u)
            })
            .map(|c| c.to_string())
            .chain(["is".to_string(), "tall".to_string()])
            .collect();
        assert_eq!(expected.len(), 7);
        assert_eq!(tok("東京タワー is tall"), expected);
        assert_eq!(tok("東京タワー is tall"), vec!["東", "京", "タ", "ワ", "ー", "is", "tall"]);
    }

    #[test]
    fn cjk_split_disabled_keeps_runs() {
        let cfg = TokenizerConfig {
            cjk_char_split: false,
            ..Default::default()
        };
        assert_eq!(tokenize("東京 tower", &cfg), vec!["東京", "tower"]);
    }

    #[test]
    fn min_len_and_case() {
        let cfg = TokenizerConfig {
            lowercase: false,
            cjk_char_split: true,
            min_token_len: 2,
        };
        assert_eq!(tokenize("A bb C dd 東", &cfg), vec!["bb", "dd"]);
    }

    proptest! {
        #[test]
        fn idempotent_on_joined_output(s in "[a-zA-Z0-9 ,.!?äöüÉß-]{0,60}") {
            let once = tok(&s);
            let twice = tok(&once.join(" "));
            prop_assert_eq!(once, twice);
        }
    }
}
