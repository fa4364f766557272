/// Lowercases and splits on every non-alphanumeric character, dropping empty
/// tokens. No stemming and no stopword removal.
///
/// Lowercasing happens before splitting so that every token is a fixed point:
/// `tokenize(t) == [t]` for any token `t` this function returns.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}
