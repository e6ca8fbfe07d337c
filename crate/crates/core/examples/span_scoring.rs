//! Strict, relaxed and type scoring of predicted spans.

use tempalign::evaluation::{iob2_strings_to_spans, score, DocumentSpans};

fn main() -> tempalign::Result<()> {
    // "He left on March 3 at noon for two weeks"
    let gold = iob2_strings_to_spans(&["O", "O", "O", "B-DATE", "I-DATE", "O", "B-TIME", "O", "B-DURATION", "I-DURATION"])?;
    // Boundary error on the date, wrong type on the duration.
    let pred = iob2_strings_to_spans(&["O", "O", "B-DATE", "I-DATE", "I-DATE", "O", "B-TIME", "O", "B-SET", "I-SET"])?;

    let report = score(&[DocumentSpans::new("d1", gold)], &[DocumentSpans::new("d1", pred)])?;
    println!("{report}");
    println!("TempEval-style type score {:.4}", report.type_f1_tempeval());
    Ok(())
}
