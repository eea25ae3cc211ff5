use std::collections::HashSet;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    #[default]
    CodeAwareDefault,
    /// Greedy longest-match subwords over a vocabulary file.
    ExternalVocab,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub mode: TokenizerMode,
    pub lowercase: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_path: Option<PathBuf>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            mode: TokenizerMode::CodeAwareDefault,
            lowercase: true,
            vocab_path: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("external_vocab mode requires a vocab_path")]
    MissingVocabPath,
    #[error("reading vocabulary {path}: {source}")]
    Vocab {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
struct Vocab {
    tokens: HashSet<String>,
    max_chars: usize,
}

impl Vocab {
    /// One token per line; blank lines and lines starting with `#` are skipped.
    fn parse(text: &str) -> Vocab {
        let tokens: HashSet<String> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.nfc().collect())
            .collect();
        let max_chars = tokens.iter().map(|t| t.chars().count()).max().unwrap_or(1);
        Vocab { tokens, max_chars }
    }

    fn segment(&self, word: &str, out: &mut Vec<String>) {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        while start < chars.len() {
            let longest = (start + 1..=chars.len().min(start + self.max_chars))
                .rev()
                .find(|&end| {
                    let piece: String = chars[start..end].iter().collect();
                    self.tokens.contains(&piece)
                })
                .unwrap_or(start + 1);
            out.push(chars[start..longest].iter().collect());
            start = longest;
        }
    }
}

/// Deterministic tokenizer for commit messages, queries and code.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    config: TokenizerConfig,
    vocab: Option<Vocab>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            config: TokenizerConfig::default(),
            vocab: None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Upper,
    Lower,
    Digit,
}

fn class_of(c: char) -> Class {
    if c.is_numeric() {
        Class::Digit
    } else if c.is_uppercase() {
        Class::Upper
    } else {
        Class::Lower
    }
}

/// Splits one alphanumeric run at camelCase and digit/letter boundaries.
fn split_identifier(word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    let mut start = 0;
    for i in 1..chars.len() {
        let prev = class_of(chars[i - 1]);
        let cur = class_of(chars[i]);
        let boundary = match (prev, cur) {
            (Class::Digit, c) | (c, Class::Digit) if c != Class::Digit => true,
            (Class::Lower, Class::Upper) => true,
            // "URLParser": the last capital of a run starts the next word
            (Class::Upper, Class::Upper) => chars
                .get(i + 1)
                .is_some_and(|&n| class_of(n) == Class::Lower),
            _ => false,
        };
        if boundary {
            out.push(chars[start..i].iter().collect());
            start = i;
        }
    }
    if start < chars.len() {
        out.push(chars[start..].iter().collect());
    }
}

impl Tokenizer {
    pub fn new(config: &TokenizerConfig) -> Result<Self, TokenizerError> {
        let vocab = match config.mode {
            TokenizerMode::CodeAwareDefault => None,
            TokenizerMode::ExternalVocab => {
                let path = config
                    .vocab_path
                    .as_ref()
                    .ok_or(TokenizerError::MissingVocabPath)?;
                let text = fs::read_to_string(path).map_err(|source| TokenizerError::Vocab {
                    path: path.clone(),
                    source,
                })?;
                Some(Vocab::parse(&text))
            }
        };
        Ok(Tokenizer {
            config: config.clone(),
            vocab,
        })
    }

    /// Builds an external-vocabulary tokenizer from in-memory vocabulary text.
    pub fn with_vocab_text(text: &str, lowercase: bool) -> Self {
        Tokenizer {
            config: TokenizerConfig {
                mode: TokenizerMode::ExternalVocab,
                lowercase,
                vocab_path: None,
            },
            vocab: Some(Vocab::parse(text)),
        }
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn name(&self) -> &'static str {
        match self.config.mode {
            TokenizerMode::CodeAwareDefault => "code_aware_default",
            TokenizerMode::ExternalVocab => "external_vocab",
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let normalized: String = text.nfc().collect();
        let mut pieces = Vec::new();
        for word in normalized
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            split_identifier(word, &mut pieces);
        }
        if self.config.lowercase {
            for p in &mut pieces {
                *p = p.to_lowercase();
            }
        }
        pieces.retain(|p| !p.is_empty());
        match &self.vocab {
            None => pieces,
            Some(vocab) => {
                let mut out = Vec::with_capacity(pieces.len());
                for p in &pieces {
                    vocab.segment(p, &mut out);
                }
                out
            }
        }
    }

    pub fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        Tokenizer::default().tokenize(s)
    }

    #[test]
    fn camel_case_and_acronyms() {
        assert_eq!(
            toks("Fix NullPointerException in parseURL"),
            ["fix", "null", "pointer", "exception", "in", "parse", "url"]
        );
        assert_eq!(toks("URLParser"), ["url", "parser"]);
        assert_eq!(toks("getHTTPResponseCode"), ["get", "http", "response", "code"]);
    }

    #[test]
    fn digits_and_separators() {
        assert_eq!(toks("foo_bar2baz"), ["foo", "bar", "2", "baz"]);
        assert_eq!(toks("utf8-decoder v12"), ["utf", "8", "decoder", "v", "12"]);
        assert_eq!(toks("a.b/c::d"), ["a", "b", "c", "d"]);
    }

    #[test]
    fn empty_and_punctuation_only() {
        assert!(toks("").is_empty());
        assert!(toks("  {}();, ").is_empty());
    }

    #[test]
    fn nfc_normalization() {
        // "é" decomposed vs precomposed
        assert_eq!(toks("cafe\u{0301}"), toks("caf\u{00e9}"));
        assert_eq!(toks("Café"), ["café"]);
    }

    #[test]
    fn case_preserved_when_requested() {
        let t = Tokenizer::new(&TokenizerConfig {
            lowercase: false,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(t.tokenize("parseURL"), ["parse", "URL"]);
    }

    #[test]
    fn external_vocab_longest_match() {
        let t = Tokenizer::with_vocab_text("# demo\npar\nparse\nr\nurl\n", true);
        assert_eq!(t.tokenize("parseURL parser"), ["parse", "url", "parse", "r"]);
        // unknown characters fall back to single-character pieces
        assert_eq!(t.tokenize("xy"), ["x", "y"]);
        assert_eq!(t.name(), "external_vocab");
    }

    #[test]
    fn external_vocab_requires_path() {
        let cfg = TokenizerConfig {
            mode: TokenizerMode::ExternalVocab,
            ..Default::default()
        };
        assert!(matches!(Tokenizer::new(&cfg), Err(TokenizerError::MissingVocabPath)));
        let cfg = TokenizerConfig {
            vocab_path: Some("/nonexistent/vocab.txt".into()),
            ..cfg
        };
        assert!(matches!(Tokenizer::new(&cfg), Err(TokenizerError::Vocab { .. })));
    }

    proptest::proptest! {
        #[test]
        fn deterministic_and_nonempty_tokens(s in ".{0,60}") {
            let t = Tokenizer::default();
            let a = t.tokenize(&s);
            proptest::prop_assert_eq!(&a, &t.tokenize(&s));
            proptest::prop_assert!(a.iter().all(|x| !x.is_empty()));
        }
    }
}
