//! Token vocabularies and mean-pooled prompt embeddings.

use std::collections::HashMap;
use std::fmt;

use ndarray::{Array1, Array2};

use super::{gauss2d, shapes16, ToyTask, COND_DIM};
use crate::error::{invalid, Error, Result};
use crate::rng;

/// Reserved token whose embedding stands for "no prompt".
pub const NULL_TOKEN: &str = "<null>";

/// An ordered list of tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prompt(Vec<String>);

impl Prompt {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(tokens.into_iter().map(Into::into).collect())
    }

    pub fn null() -> Self {
        Self::new([NULL_TOKEN])
    }

    /// Splits on whitespace or `+`.
    pub fn parse(s: &str) -> Self {
        Self::new(s.split(|c: char| c.is_whitespace() || c == '+').filter(|t| !t.is_empty()))
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join("+"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    table: Array2<f64>,
}

impl PromptVocabulary {
    /// Builds a vocabulary with seeded Gaussian rows; the null row is zero.
    pub fn new(tokens: &[&str], dim: usize, seed: u64) -> Result<Self> {
        let mut all: Vec<String> = vec![NULL_TOKEN.to_string()];
        all.extend(tokens.iter().map(|t| t.to_string()));
        let mut index = HashMap::new();
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(invalid(format!("duplicate token `{t}`")));
            }
        }
        let mut r = rng::seeded(seed);
        let mut table = rng::normal_matrix(&mut r, all.len(), dim);
        table.row_mut(0).fill(0.0);
        Ok(Self {
            tokens: all,
            index,
            table,
        })
    }

    /// Fixed vocabulary for a task; a pure function of the task.
    pub fn for_task(task: ToyTask) -> Self {
        let (tokens, seed): (Vec<String>, u64) = match task {
            ToyTask::Gauss2d => {
                let mut t: Vec<String> = (0..gauss2d::NUM_MODES).map(gauss2d::mode_token).collect();
                t.push(gauss2d::ALL_TOKEN.to_string());
                (t, 0x6a05_5e2d)
            }
            ToyTask::Shapes16 => (
                shapes16::all_tokens().iter().map(|s| s.to_string()).collect(),
                0x05ba_9e16,
            ),
        };
        let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
        Self::new(&refs, COND_DIM, seed).expect("static token lists are unique")
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn row(&self, token: &str) -> Result<Array1<f64>> {
        let i = self
            .index
            .get(token)
            .ok_or_else(|| Error::UnknownToken(token.to_string()))?;
        Ok(self.table.row(*i).to_owned())
    }

    pub fn null_row(&self) -> Array1<f64> {
        self.table.row(0).to_owned()
    }

    /// Embeds each prompt as one row.
    pub fn embed_all(&self, prompts: &[Prompt]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((prompts.len(), self.dim()));
        for (r, p) in prompts.iter().enumerate() {
            out.row_mut(r).assign(&embed_prompt(self, p)?);
        }
        Ok(out)
    }
}

/// Mean of the token rows; the lone null token maps to the null row.
pub fn embed_prompt(vocab: &PromptVocabulary, prompt: &Prompt) -> Result<Array1<f64>> {
    let tokens = prompt.tokens();
    if tokens.is_empty() {
        return Err(invalid("empty prompt"));
    }
    if tokens.iter().any(|t| t == NULL_TOKEN) {
        if tokens.len() > 1 {
            return Err(Error::Contradictory(format!(
                "`{NULL_TOKEN}` cannot be combined with other tokens"
            )));
        }
        return Ok(vocab.null_row());
    }
    let mut acc = Array1::zeros(vocab.dim());
    for t in tokens {
        acc += &vocab.row(t)?;
    }
    acc /= tokens.len() as f64;
    Ok(acc)
}
