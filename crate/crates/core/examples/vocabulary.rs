// Text and caption vocabularies.

use memefier::dataset::{build_caption_vocab, build_vocab, BOS, EOS};

pub fn run_example() -> memefier::Result<()> {
    let corpus = ["When the code compiles", "when the TESTS pass!", "the code, again"];
    let vocab = build_vocab(&corpus, 2, 0.9)?;
    println!("text vocab {:?}, max_len {}", vocab.words(), vocab.max_len());
    println!("encoded: {:?}", vocab.encode("the code is unknown"));

    let captions = ["a cat on a mat", "a dog"];
    let cap = build_caption_vocab(&captions)?;
    let ids = cap.encode_caption("a cat");
    assert_eq!(ids.first(), Some(&BOS));
    assert!(ids.contains(&EOS));
    println!("caption ids {ids:?} -> {:?}", cap.decode(&ids));
    Ok(())
}

#[allow(dead_code)]
fn main() -> memefier::Result<()> {
    run_example()
}
