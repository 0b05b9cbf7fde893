//! Renders a five-shot chunking prompt and parses it back.

use cp_retrieval::corpus::{parse_conll, LabelScheme};
use cp_retrieval::prompting::{parse_prompt, render_prompt};

const FIXTURE: &str = include_str!("../tests/fixtures/chunk_prompt.txt");

fn main() -> cp_retrieval::Result<()> {
    let split = parse_conll(FIXTURE.as_bytes(), 1, LabelScheme::conll2000_chunk())?;
    let (test, demos) = split.sentences.split_last().expect("fixture has sentences");
    let demos: Vec<_> = demos.iter().collect();

    let prompt = render_prompt(&demos, test, &split.scheme)?;
    println!("{}", prompt.text);
    println!("-- sha256 {}", prompt.hash());

    let parsed = parse_prompt(&prompt.text)?;
    println!(
        "{} demonstrations, pending test sentence: {}",
        parsed.demonstrations.len(),
        parsed.tail.context.join(" ")
    );
    Ok(())
}
