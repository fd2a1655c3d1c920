use rust_stemmers::{Algorithm, Stemmer};

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Tokenizer plus optional English stemming, applied identically to
/// documents and queries.
pub struct Analyzer {
    stemmer: Option<Stemmer>,
}

impl Analyzer {
    pub fn new(stemming: bool) -> Self {
        Analyzer {
            stemmer: stemming.then(|| Stemmer::create(Algorithm::English)),
        }
    }

    pub fn stemming(&self) -> bool {
        self.stemmer.is_some()
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        let tokens = tokenize(text);
        match &self.stemmer {
            None => tokens,
            Some(s) => tokens.iter().map(|t| s.stem(t).into_owned()).collect(),
        }
    }
}

impl std::fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Analyzer")
            .field("stemming", &self.stemming())
            .finish()
    }
}

impl Clone for Analyzer {
    fn clone(&self) -> Self {
        Analyzer::new(self.stemming())
    }
}
