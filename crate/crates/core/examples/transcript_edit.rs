//! Flips the sentiment of a transcript with the fewest antonym swaps.
//!
//! cargo run --example transcript_edit -- [words...]

use glitchloc::synthgen::{
    replacement_budget, select_replacements, sentiment_score, SentimentLexicon, Transcript,
};

fn main() -> glitchloc::Result<()> {
    let words: Vec<String> = std::env::args().skip(1).collect();
    let words: Vec<&str> = if words.is_empty() {
        "the food was good and the staff seemed happy".split(' ').collect()
    } else {
        words.iter().map(String::as_str).collect()
    };
    let lexicon = SentimentLexicon::bundled();
    let transcript = Transcript::from_words(&words);
    let duration = transcript.tokens().last().map_or(0.0, |t| t.end);
    let budget = replacement_budget(duration)?;

    let plan = select_replacements(&transcript, &lexicon, budget)?;
    let edited = transcript.apply(&plan);
    println!("original  {:?}  S = {:+.3}", transcript.text(), sentiment_score(&transcript, &lexicon));
    println!("edited    {:?}  S = {:+.3}", edited.text(), sentiment_score(&edited, &lexicon));
    for r in &plan.replacements {
        let tok = &transcript.tokens()[r.index];
        println!(
            "  token {} [{:.2}s, {:.2}s): {} -> {} (dS {:+.3})",
            r.index, tok.start, tok.end, r.original, r.replacement, r.delta
        );
    }
    println!("budget {budget}, total dS {:+.3}", plan.total_delta());
    Ok(())
}
