//! Sentence-level step segmentation with lossless byte spans, and the mapping
//! from token offsets to per-step cumulative token counts.

use crate::error::{Error, Result};
use crate::trace::ByteSpan;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationRules {
    pub terminators: Vec<char>,
    pub break_on_blank_line: bool,
}

impl Default for SegmentationRules {
    fn default() -> Self {
        Self {
            terminators: vec!['.', '!', '?'],
            break_on_blank_line: true,
        }
    }
}

/// Characters that may trail a terminator and still belong to its sentence.
fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '”' | '’' | '*')
}

/// Split `text` into contiguous spans that cover it exactly.
///
/// A step ends after a run of terminators (plus any closing quotes or
/// brackets) that is followed by whitespace, or after whitespace containing a
/// blank line. The whitespace is attached to the preceding step. Whatever
/// remains at the end forms a final step.
pub fn segment(text: &str, rules: &SegmentationRules) -> Vec<ByteSpan> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut spans = Vec::new();
    let mut start = 0;
    let mut i = 0;

    while i < chars.len() {
        let (_, c) = chars[i];
        let boundary_ws = if rules.terminators.contains(&c) {
            let mut j = i + 1;
            while j < chars.len() && rules.terminators.contains(&chars[j].1) {
                j += 1;
            }
            while j < chars.len() && is_closer(chars[j].1) {
                j += 1;
            }
            if j < chars.len() && chars[j].1.is_whitespace() {
                Some(j)
            } else {
                i = j;
                continue;
            }
        } else if rules.break_on_blank_line && c == '\n' && blank_line_at(&chars, i) {
            Some(i)
        } else {
            None
        };

        match boundary_ws {
            Some(ws) => {
                let mut j = ws;
                while j < chars.len() && chars[j].1.is_whitespace() {
                    j += 1;
                }
                let end = chars.get(j).map_or(text.len(), |&(b, _)| b);
                spans.push(ByteSpan::new(start, end));
                start = end;
                i = j;
            }
            None => i += 1,
        }
    }
    if start < text.len() {
        spans.push(ByteSpan::new(start, text.len()));
    }
    spans
}

/// Whether the newline at `i` is followed (after horizontal whitespace) by
/// another newline.
fn blank_line_at(chars: &[(usize, char)], i: usize) -> bool {
    chars[i + 1..]
        .iter()
        .map(|&(_, c)| c)
        .take_while(|c| c.is_whitespace())
        .any(|c| c == '\n')
}

/// Move each span boundary forward to the next token boundary so that no
/// token straddles two steps. Spans that collapse to nothing are dropped.
pub fn align_to_tokens(spans: &[ByteSpan], token_offsets: &[usize], text_len: usize) -> Vec<ByteSpan> {
    let mut out: Vec<ByteSpan> = Vec::with_capacity(spans.len());
    let mut start = 0;
    for span in spans {
        let end = if span.end >= text_len {
            text_len
        } else {
            let idx = token_offsets.partition_point(|&o| o < span.end);
            token_offsets.get(idx).copied().unwrap_or(text_len)
        };
        if end > start {
            out.push(ByteSpan::new(start, end));
            start = end;
        }
    }
    if start < text_len {
        match out.last_mut() {
            Some(last) => last.end = text_len,
            None => out.push(ByteSpan::new(0, text_len)),
        }
    }
    out
}

/// Cumulative reasoning-token counts `T_0..T_n` at the end of each step.
///
/// `T_0 = 0` and `T_i` counts tokens starting before the end of step `i`.
/// Every span end except the end of text must sit on a token boundary.
pub fn cum_tokens_for_spans(spans: &[ByteSpan], token_offsets: &[usize]) -> Result<Vec<usize>> {
    if token_offsets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract("token offsets not strictly increasing".into()));
    }
    let text_end = spans.last().map(|s| s.end);
    let mut out = Vec::with_capacity(spans.len() + 1);
    out.push(0);
    for (j, span) in spans.iter().enumerate() {
        let count = token_offsets.partition_point(|&o| o < span.end);
        let on_boundary =
            Some(span.end) == text_end || count == token_offsets.len() || token_offsets[count] == span.end;
        if !on_boundary {
            return Err(Error::Alignment {
                span: j,
                token: count.saturating_sub(1),
                end: span.end,
            });
        }
        out.push(count);
    }
    if let Some(last) = out.last_mut() {
        if !spans.is_empty() {
            *last = token_offsets.len();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(s: &str) -> Vec<(usize, usize)> {
        segment(s, &SegmentationRules::default())
            .into_iter()
            .map(Into::into)
            .collect()
    }

    #[test]
    fn two_sentences() {
        assert_eq!(seg("First. Second."), vec![(0, 7), (7, 14)]);
    }

    #[test]
    fn empty_and_unterminated() {
        assert_eq!(seg(""), vec![]);
        assert_eq!(seg("no terminator here"), vec![(0, 18)]);
    }

    #[test]
    fn decimals_do_not_split() {
        assert_eq!(seg("pi is 3.14 ok. Yes"), vec![(0, 15), (15, 18)]);
    }

    #[test]
    fn terminator_runs_and_closers() {
        assert_eq!(seg("Wait?! \"Yes.\" Done"), vec![(0, 7), (7, 14), (14, 18)]);
    }

    #[test]
    fn blank_lines_break() {
        assert_eq!(seg("one\n\ntwo\nthree"), vec![(0, 5), (5, 14)]);
        let no_blank = SegmentationRules {
            break_on_blank_line: false,
            ..Default::default()
        };
        assert_eq!(segment("one\n\ntwo", &no_blank).len(), 1);
    }

    #[test]
    fn trailing_whitespace_joins_last_step() {
        assert_eq!(seg("Done.  \n"), vec![(0, 8)]);
        assert_eq!(seg("   "), vec![(0, 3)]);
    }

    #[test]
    fn cum_tokens_examples() {
        let spans = [ByteSpan::new(0, 8), ByteSpan::new(8, 16), ByteSpan::new(16, 24)];
        let offsets: Vec<usize> = (0..12).map(|t| t * 2).collect();
        assert_eq!(cum_tokens_for_spans(&spans, &offsets).unwrap(), vec![0, 4, 8, 12]);
        assert_eq!(cum_tokens_for_spans(&[], &[]).unwrap(), vec![0]);
        assert_eq!(
            cum_tokens_for_spans(&[ByteSpan::new(0, 10)], &[0, 2, 4, 6, 8]).unwrap(),
            vec![0, 5]
        );
    }

    #[test]
    fn split_token_is_reported() {
        let spans = [ByteSpan::new(0, 3), ByteSpan::new(3, 8)];
        let err = cum_tokens_for_spans(&spans, &[0, 2, 4, 6]).unwrap_err();
        assert!(matches!(
            err,
            Error::Alignment {
                span: 0,
                token: 1,
                end: 3
            }
        ));
    }

    #[test]
    fn alignment_moves_boundaries_forward() {
        let spans = [ByteSpan::new(0, 3), ByteSpan::new(3, 5), ByteSpan::new(5, 8)];
        // Tokens at 0, 4, 6: boundary 3 -> 4, boundary 5 -> 6.
        let aligned = align_to_tokens(&spans, &[0, 4, 6], 8);
        assert_eq!(
            aligned,
            vec![ByteSpan::new(0, 4), ByteSpan::new(4, 6), ByteSpan::new(6, 8)]
        );
        // One token covering everything collapses all steps into one.
        assert_eq!(align_to_tokens(&spans, &[0], 8), vec![ByteSpan::new(0, 8)]);
        assert_eq!(align_to_tokens(&[], &[], 0), vec![]);
    }
}
