const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e", "inc", "ltd",
    "co", "corp", "mt", "gen", "gov", "sen", "rep", "rev", "fig", "no", "jan", "feb", "mar", "apr",
    "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "u.s", "u.k",
];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

/// The word directly before byte offset `end`, lower-cased.
fn word_before(text: &str, end: usize) -> String {
    let start = text[..end]
        .rfind(|c: char| c.is_whitespace() || c == '(' || c == '"')
        .map_or(0, |i| i + 1);
    text[start..end].to_lowercase()
}

/// Splits on `.`, `!` or `?` followed by whitespace or the end of the text.
/// A period after a known abbreviation such as "Mr." does not end a
/// sentence.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminator(c) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < chars.len() && is_terminator(chars[j + 1].1) {
            j += 1;
        }
        while j + 1 < chars.len() && is_closer(chars[j + 1].1) {
            j += 1;
        }
        let boundary = j + 1 == chars.len() || chars[j + 1].1.is_whitespace();
        let guarded =
            c == '.' && j == i && ABBREVIATIONS.contains(&word_before(text, pos).as_str());
        if boundary && !guarded {
            let end = chars.get(j + 1).map_or(text.len(), |&(p, _)| p);
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = end;
        }
        i = j + 1;
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}
