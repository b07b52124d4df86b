//! Shared text normalization.
//!
//! Character rules, applied identically when normalizing entity surfaces and when
//! tokenizing free text for lexicon lookup:
//!
//! * letters and digits are kept and lowercased,
//! * apostrophes are dropped without splitting (`crohn's` -> `crohns`),
//! * every other character separates tokens.

/// Leading articles removed from entity surfaces.
pub const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '\u{2018}' | '\u{02BC}' | '`')
}

/// A lowercase word token with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits `text` into normalized word tokens, keeping byte offsets into the original.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut end = 0;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if current.is_empty() {
                start = i;
            }
            current.extend(c.to_lowercase());
            end = i + c.len_utf8();
        } else if is_apostrophe(c) && !current.is_empty() {
            // joins: nothing emitted, token continues
        } else if !current.is_empty() {
            tokens.push(Token {
                text: std::mem::take(&mut current),
                start,
                end,
            });
        }
    }
    if !current.is_empty() {
        tokens.push(Token {
            text: current,
            start,
            end,
        });
    }
    tokens
}

/// Lowercases, strips punctuation and collapses whitespace.
pub fn normalize_surface(text: &str) -> String {
    let words: Vec<String> = tokenize(text).into_iter().map(|t| t.text).collect();
    words.join(" ")
}

/// Word tokens of `text` as plain strings.
pub fn words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}

/// Drops leading articles from an already tokenized phrase.
pub fn strip_leading_articles(tokens: &[String]) -> &[String] {
    let skip = tokens
        .iter()
        .take_while(|t| ARTICLES.contains(&t.as_str()))
        .count();
    &tokens[skip..]
}

/// Whitespace-delimited word count, used as a token-budget proxy.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
