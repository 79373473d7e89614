//! Rule-based sentence segmentation for Japanese minutes text.

/// Always end a sentence (outside quotes).
const HARD_TERMINATORS: [char; 6] = ['。', '！', '？', '｡', '!', '?'];

fn opens(c: char) -> bool {
    matches!(c, '「' | '『' | '（' | '(')
}

fn closes(c: char) -> bool {
    matches!(c, '」' | '』' | '）' | ')')
}

/// Splits `text` after 。！？ (and half-width ｡!?), and after `.` when it is
/// followed by whitespace or the end of input. Terminators inside 「」, 『』
/// or parentheses do not split. Runs of terminators stay together. Output
/// sentences are trimmed and never empty.
pub fn segment(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut depth: usize = 0;
    let mut start = 0usize;
    let mut i = 0;
    while i < chars.len() {
        let (_, c) = chars[i];
        if opens(c) {
            depth += 1;
        } else if closes(c) {
            depth = depth.saturating_sub(1);
        }
        let next = chars.get(i + 1).map(|&(_, n)| n);
        let is_end = depth == 0
            && (HARD_TERMINATORS.contains(&c)
                || (c == '.' && next.is_none_or(char::is_whitespace)));
        if is_end {
            let mut j = i + 1;
            while j < chars.len()
                && (HARD_TERMINATORS.contains(&chars[j].1) || chars[j].1 == '.')
            {
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |&(b, _)| b);
            push_trimmed(&mut out, &text[start..end]);
            start = end;
            i = j;
            continue;
        }
        i += 1;
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let t = piece.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}
