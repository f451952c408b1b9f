//! Split a reasoning trace into steps and count tokens per step.
//!
//! ```text
//! cargo run --example segment_reasoning
//! ```

use trajgate::segment::{align_to_tokens, cum_tokens_for_spans, segment, SegmentationRules};

fn main() -> trajgate::Result<()> {
    let text = "The options are 2.5 and 3. Let me compare them!\n\nSo 3 is larger (by 0.5). Final check: yes.";
    // A toy tokenizer: a token starts at every word.
    let offsets: Vec<usize> = text
        .char_indices()
        .filter(|&(i, c)| i == 0 || (!c.is_whitespace() && text[..i].ends_with(char::is_whitespace)))
        .map(|(i, _)| i)
        .collect();

    let spans = align_to_tokens(&segment(text, &SegmentationRules::default()), &offsets, text.len());
    let cum = cum_tokens_for_spans(&spans, &offsets)?;
    for (i, span) in spans.iter().enumerate() {
        println!("step {:>2}  T={:>3}  {:?}", i + 1, cum[i + 1], &text[span.range()]);
    }
    println!("{} steps, {} tokens", spans.len(), offsets.len());
    Ok(())
}
