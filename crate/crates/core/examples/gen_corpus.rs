//! Regenerates `data/synthetic_corpus.jsonl`.
//!
//! cargo run -p keystep --example gen_corpus

use std::path::Path;

use keystep::synthetic::bundled_corpus_records;

fn main() -> keystep::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_corpus.jsonl");
    keystep::io::write_jsonl(&path, &bundled_corpus_records())?;
    println!("wrote {}", path.display());
    Ok(())
}
