//! Word tokenization shared by the n-gram backend and frequency counting.
//!
//! Text is lowercased and split on whitespace; trailing punctuation on each
//! whitespace token is split off, one token per punctuation character.

/// Tokenizes `text` into owned lowercase tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for_each_token(text, |t| out.push(t.to_string()));
    out
}

/// Calls `f` on each token of `text` without allocating a token vector.
///
/// The lowercased token is passed as a borrowed slice of a reused buffer.
pub fn for_each_token(text: &str, mut f: impl FnMut(&str)) {
    let mut buf = String::new();
    for raw in text.split_whitespace() {
        let core = raw.trim_end_matches(|c: char| c.is_ascii_punctuation());
        if !core.is_empty() {
            buf.clear();
            buf.extend(core.chars().flat_map(char::to_lowercase));
            f(&buf);
        }
        let mut tmp = [0u8; 4];
        for c in raw[core.len()..].chars() {
            f(c.encode_utf8(&mut tmp));
        }
    }
}
