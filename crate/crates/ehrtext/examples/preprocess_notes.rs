//! Walks one note through the text pipeline: section removal, then
//! normalization, then tokenization and 256-token chunking.

use ehrtext::text::{chunk, normalize_text, strip_sections, Vocab, DEFAULT_DROP_HEADERS};

fn main() {
    let raw = "Summary: visit 3 recorded 2021-04-02.\n\
               Patient stable, mild fatigue reported (improving), BP 120/80.\n\
               Technique: standard intake form, revision 7.\n\
               Billing: code 99213, $140.00 charged.\n\
               Course: readings 4/4 noted 2021-04-03!\n\
               Follow-up in 2 weeks; continue current plan.\n";

    println!("raw note:\n{}", raw);

    let stripped = strip_sections(raw, DEFAULT_DROP_HEADERS);
    println!("after section removal (headers: {}):\n{}", DEFAULT_DROP_HEADERS.join(", "), stripped);

    let clean = normalize_text(&stripped);
    println!("after normalization:\n{}\n", clean);

    let vocab = Vocab::build(std::iter::once(clean.as_str()), 1);
    let ids = vocab.encode(&clean);
    let chunks = chunk(&ids);
    println!(
        "{} tokens, vocabulary of {}, packed into {} chunk(s) of sizes {:?}",
        ids.len(),
        vocab.len(),
        chunks.len(),
        chunks.chunks.iter().map(Vec::len).collect::<Vec<_>>()
    );
}
