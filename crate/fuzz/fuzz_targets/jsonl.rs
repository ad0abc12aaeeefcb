#![no_main]

use libfuzzer_sys::fuzz_target;
use ratlab::jsonl::{parse_jsonl, to_jsonl};
use ratlab::Vocab;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut vocab = Vocab::new();
    let report = parse_jsonl(text, &mut vocab, ".");
    for ex in &report.examples {
        ex.validate().expect("parser accepted an invalid example");
    }
    // accepted examples survive a round trip
    let again = to_jsonl(&report.examples, &vocab);
    let mut v2 = Vocab::new();
    let back = parse_jsonl(&again, &mut v2, ".");
    assert!(back.errors.is_empty());
    assert_eq!(back.examples.len(), report.examples.len());
});
