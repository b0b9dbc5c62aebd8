//! Synthetic data, prompt vocabularies and auxiliary models.

pub mod autoencoder;
pub mod embedder;
pub mod gauss2d;
pub mod shapes16;
pub mod vocab;

use ndarray::Array2;
use rand::seq::IndexedRandom;

use crate::diffusion::ConditionalData;
use crate::error::{invalid, Result};
use crate::rng::LabRng;

pub use autoencoder::{distill_tiny_decoder, train_autoencoder, Autoencoder, Coder, Decoder, DecoderPair, Encoder};
pub use embedder::{train_toy_clip, JointEmbedder};
pub use gauss2d::gen_gauss2d;
pub use shapes16::gen_shapes16;
pub use vocab::{embed_prompt, Prompt, PromptVocabulary, NULL_TOKEN};

/// Conditioning dimension shared by every task.
pub const COND_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ToyTask {
    Gauss2d,
    Shapes16,
}

impl ToyTask {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gauss2d" => Ok(Self::Gauss2d),
            "shapes16" => Ok(Self::Shapes16),
            other => Err(invalid(format!("unknown task `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gauss2d => "gauss2d",
            Self::Shapes16 => "shapes16",
        }
    }

    /// Width of a sample in data space.
    pub fn data_dim(self) -> usize {
        match self {
            Self::Gauss2d => 2,
            Self::Shapes16 => shapes16::PIXELS,
        }
    }

    /// Width of the space diffusion runs in.
    pub fn latent_dim(self) -> usize {
        match self {
            Self::Gauss2d => 2,
            Self::Shapes16 => 16,
        }
    }

    pub fn vocabulary(self) -> PromptVocabulary {
        PromptVocabulary::for_task(self)
    }

    /// Every fully specified prompt of the task.
    pub fn full_prompts(self) -> Vec<Prompt> {
        match self {
            Self::Gauss2d => (0..gauss2d::NUM_MODES)
                .map(|k| Prompt::new([gauss2d::mode_token(k)]))
                .collect(),
            Self::Shapes16 => shapes16::full_prompts(),
        }
    }

    /// Draws one data-space sample for `prompt`.
    pub fn sample_one(self, prompt: &Prompt, rng: &mut LabRng) -> Result<Vec<f64>> {
        match self {
            Self::Gauss2d => gauss2d::sample_one(prompt, rng),
            Self::Shapes16 => shapes16::render_one(prompt, rng),
        }
    }

    /// Fails on unknown tokens and on prompts the generator cannot satisfy.
    pub fn check_prompt(self, prompt: &Prompt) -> Result<()> {
        match self {
            Self::Gauss2d => gauss2d::modes_for_prompt(prompt).map(|_| ()),
            Self::Shapes16 => shapes16::ShapeSpec::parse(prompt).map(|_| ()),
        }
    }

    /// One data-space row per prompt, in order.
    pub fn sample_for_prompts(self, prompts: &[Prompt], rng: &mut LabRng) -> Result<Array2<f64>> {
        let d = self.data_dim();
        let mut out = Array2::zeros((prompts.len(), d));
        for (r, p) in prompts.iter().enumerate() {
            let row = self.sample_one(p, rng)?;
            out.row_mut(r).assign(&ndarray::ArrayView1::from(&row[..]));
        }
        Ok(out)
    }
}

/// Parses a comma-separated prompt list; `full` expands to every fully
/// specified prompt of the task. Each prompt is checked against the task.
pub fn parse_prompt_set(task: ToyTask, spec: &str) -> Result<Vec<Prompt>> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim) {
        if item.is_empty() {
            return Err(invalid(format!("empty entry in prompt list `{spec}`")));
        }
        if item == "full" {
            out.extend(task.full_prompts());
            continue;
        }
        let p = Prompt::parse(item);
        task.check_prompt(&p)?;
        out.push(p);
    }
    Ok(out)
}

/// Draws `n` prompts uniformly (with replacement) from `set`.
pub fn draw_prompts(set: &[Prompt], n: usize, rng: &mut LabRng) -> Result<Vec<Prompt>> {
    if set.is_empty() {
        return Err(invalid("prompt set is empty"));
    }
    Ok((0..n)
        .map(|_| set.choose(rng).expect("non-empty").clone())
        .collect())
}

/// Training pairs for a task: prompts drawn from `prompts`, samples mapped to
/// latent space by `encoder`.
pub struct TaskData<'a> {
    pub task: ToyTask,
    pub prompts: &'a [Prompt],
    pub vocab: &'a PromptVocabulary,
    pub encoder: &'a Encoder,
}

impl ConditionalData for TaskData<'_> {
    fn data_dim(&self) -> usize {
        self.task.latent_dim()
    }

    fn cond_dim(&self) -> usize {
        self.vocab.dim()
    }

    fn sample(&self, n: usize, rng: &mut LabRng) -> Result<(Array2<f64>, Array2<f64>)> {
        let prompts = draw_prompts(self.prompts, n, rng)?;
        let x = self.task.sample_for_prompts(&prompts, rng)?;
        Ok((self.encoder.apply(x.view())?, self.vocab.embed_all(&prompts)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn full_expands_to_every_mode() {
        let set = parse_prompt_set(ToyTask::Gauss2d, "full, all8").unwrap();
        assert_eq!(set.len(), gauss2d::NUM_MODES + 1);
        assert_eq!(set[0], Prompt::parse("mode0"));
        assert_eq!(set[8], Prompt::parse("all8"));
    }

    #[test]
    fn bad_entries_are_rejected() {
        assert!(parse_prompt_set(ToyTask::Gauss2d, "mode0,,mode1").is_err());
        assert!(parse_prompt_set(ToyTask::Gauss2d, "mode8").is_err());
        assert!(parse_prompt_set(ToyTask::Shapes16, "mode0").is_err());
        assert!(ToyTask::Gauss2d.check_prompt(&Prompt::parse("triangle")).is_err());
    }

    #[test]
    fn draws_stay_in_the_set() {
        let set = parse_prompt_set(ToyTask::Gauss2d, "mode2,mode5").unwrap();
        let drawn = draw_prompts(&set, 200, &mut rng::seeded(1)).unwrap();
        assert!(drawn.iter().all(|p| set.contains(p)));
        assert!(set.iter().all(|p| drawn.contains(p)));
        assert!(draw_prompts(&[], 3, &mut rng::seeded(1)).is_err());
    }

    #[test]
    fn task_data_pairs_match_dimensions() {
        for task in [ToyTask::Gauss2d, ToyTask::Shapes16] {
            let prompts = task.full_prompts();
            let vocab = task.vocabulary();
            let enc = Coder::Identity;
            let data = TaskData { task, prompts: &prompts, vocab: &vocab, encoder: &enc };
            let (x, y) = data.sample(7, &mut rng::seeded(2)).unwrap();
            assert_eq!(x.dim(), (7, task.data_dim()));
            assert_eq!(y.dim(), (7, COND_DIM));
        }
    }

    #[test]
    fn samples_follow_their_prompt() {
        let prompts: Vec<Prompt> = (0..8).map(|k| Prompt::parse(&gauss2d::mode_token(k))).collect();
        let x = ToyTask::Gauss2d.sample_for_prompts(&prompts, &mut rng::seeded(3)).unwrap();
        for (k, row) in x.rows().into_iter().enumerate() {
            assert_eq!(gauss2d::nearest_mode([row[0], row[1]]), k);
        }
    }
}
