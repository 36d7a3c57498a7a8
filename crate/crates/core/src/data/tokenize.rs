use super::DIGIT_TOKEN;

/// Lowercases `text`, splits on whitespace, emits every punctuation mark as
/// its own token, and replaces each maximal run of ASCII digits inside a
/// token with `<digit>`.
pub fn tokenize_and_normalize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(collapse_digits(word));
            word.clear();
        }
    };
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            flush(&mut word, &mut out);
            out.push(c.to_string());
        }
    }
    flush(&mut word, &mut out);
    out
}

fn collapse_digits(word: &str) -> String {
    let mut out = String::with_capacity(word.len());
    let mut in_run = false;
    for c in word.chars() {
        if c.is_ascii_digit() {
            if !in_run {
                out.push_str(DIGIT_TOKEN);
            }
            in_run = true;
        } else {
            out.push(c);
            in_run = false;
        }
    }
    out
}
