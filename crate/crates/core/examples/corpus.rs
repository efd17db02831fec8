//! Generate the synthetic order-2 Markov corpus, save it as a token file and
//! compare its entropy with the uniform baseline.

use spectron::net::{MarkovSource, TokenFile};

fn main() -> spectron::Result<()> {
    let vocab = 64;
    let source = MarkovSource::new(0, vocab)?;
    println!(
        "mean context entropy {:.4} nats (uniform {:.4}), sharpness {:.3}",
        source.mean_context_entropy(),
        (vocab as f64).ln(),
        source.sharpness()
    );
    let tokens = spectron::net::synth_corpus(0, vocab, 10_000)?;
    let path = std::env::temp_dir().join("spectron-corpus.sptk");
    TokenFile { vocab: vocab as u16, tokens }.write(&path)?;
    let back = TokenFile::read(&path)?;
    println!("wrote {} tokens to {}; first 16: {:?}", back.tokens.len(), path.display(), &back.tokens[..16]);
    Ok(())
}
