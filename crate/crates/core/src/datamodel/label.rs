use crate::error::{Error, Result};

/// Splits an action label into lowercase words.
///
/// Separators are space, `_` and `-`; inside a token a new word starts at a
/// lower-to-upper transition (`PlayingGuitar`) or before the last capital of
/// an uppercase run followed by lowercase (`HTMLParser` -> `html`, `parser`).
pub fn parse_label(label: &str) -> Result<Vec<String>> {
    let mut words = Vec::new();
    for token in label.split([' ', '_', '-', '\t']).filter(|t| !t.is_empty()) {
        let chars: Vec<char> = token.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (prev, cur) = (chars[i - 1], chars[i]);
            let next_lower = chars.get(i + 1).is_some_and(|c| c.is_lowercase());
            let boundary = cur.is_uppercase()
                && (prev.is_lowercase() || prev.is_ascii_digit() || (prev.is_uppercase() && next_lower));
            if boundary {
                words.push(chars[start..i].iter().collect::<String>().to_lowercase());
                start = i;
            }
        }
        words.push(chars[start..].iter().collect::<String>().to_lowercase());
    }
    if words.is_empty() {
        return Err(Error::Empty("action label".into()));
    }
    Ok(words)
}
