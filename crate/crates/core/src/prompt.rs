//! Token-budgeted prompt construction.
//!
//! A prompt is the textual state the predictor classifies: both drug names,
//! the sentences selected so far for each drug (in selection order), and a
//! task instruction, all inside a fixed template. Appending a sentence
//! never pushes the rendered length past the budget; the rejected append
//! leaves the prompt untouched and the caller halts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Drug, DrugIdx, Sentence};
use crate::error::PromptError;
use crate::text::token_count;

/// Instruction appended to every prompt, with `#Drug1`/`#Drug2` substituted.
pub const DEFAULT_INSTRUCTION_TEMPLATE: &str =
    "In the above context, we can predict that the drug-drug interaction between #Drug1 and #Drug2 is that:";

/// Identity of a selected sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentenceRef {
    pub drug: usize,
    pub index: usize,
}

impl SentenceRef {
    pub fn of(s: &Sentence) -> Self {
        SentenceRef { drug: s.drug.0, index: s.index }
    }
}

#[derive(Debug, Clone)]
struct Side {
    idx: DrugIdx,
    name: String,
    selected: Vec<Sentence>,
}

/// The incrementally built, budgeted textual state for one drug pair.
#[derive(Debug, Clone)]
pub struct Prompt {
    u: Side,
    v: Side,
    instruction: String,
    budget: usize,
    token_length: usize,
}

impl Prompt {
    /// Empty-selection prompt for a pair.
    pub fn new(u: &Drug, v: &Drug, instruction_template: &str, budget: usize) -> Self {
        let instruction = instruction_template
            .replace("#Drug1", &u.name)
            .replace("#Drug2", &v.name);
        let mut prompt = Prompt {
            u: Side { idx: u.idx, name: u.name.clone(), selected: Vec::new() },
            v: Side { idx: v.idx, name: v.name.clone(), selected: Vec::new() },
            instruction,
            budget,
            token_length: 0,
        };
        prompt.token_length = token_count(&prompt.render());
        prompt
    }

    /// Deterministic template rendering; selected sentences appear after
    /// their drug's name in selection order.
    pub fn render(&self) -> String {
        let join = |side: &Side| {
            side.selected
                .iter()
                .map(|s| s.text.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "[CLS] {}: {} {}: {} {} [SEP]",
            self.u.name,
            join(&self.u),
            self.v.name,
            join(&self.v),
            self.instruction
        )
    }

    /// Append `sentence` if the extended prompt still fits the budget.
    ///
    /// Returns `Ok(Some(extended))` on acceptance and `Ok(None)` on a
    /// budget rejection, in which case the caller keeps `self` as the
    /// final prompt.
    pub fn try_append(&self, sentence: &Sentence) -> Result<Option<Prompt>, PromptError> {
        let slot_is_u = if sentence.drug == self.u.idx {
            true
        } else if sentence.drug == self.v.idx {
            false
        } else {
            return Err(PromptError::ForeignSentence);
        };
        if self.contains(SentenceRef::of(sentence)) {
            return Err(PromptError::DuplicateSentence);
        }
        let mut next = self.clone();
        let side = if slot_is_u { &mut next.u } else { &mut next.v };
        side.selected.push(sentence.clone());
        next.token_length = token_count(&next.render());
        if next.token_length <= self.budget {
            Ok(Some(next))
        } else {
            Ok(None)
        }
    }

    pub fn contains(&self, r: SentenceRef) -> bool {
        self.u
            .selected
            .iter()
            .chain(self.v.selected.iter())
            .any(|s| SentenceRef::of(s) == r)
    }

    pub fn selected_refs(&self) -> impl Iterator<Item = SentenceRef> + '_ {
        self.u
            .selected
            .iter()
            .chain(self.v.selected.iter())
            .map(SentenceRef::of)
    }

    pub fn selected_count(&self) -> usize {
        self.u.selected.len() + self.v.selected.len()
    }

    pub fn token_length(&self) -> usize {
        self.token_length
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn pair(&self) -> (DrugIdx, DrugIdx) {
        (self.u.idx, self.v.idx)
    }
}

/// Uniformly draw unselected sentences from either drug until the first
/// budget rejection or exhaustion.
pub fn random_prompt<R: Rng>(
    u: &Drug,
    v: &Drug,
    instruction_template: &str,
    budget: usize,
    rng: &mut R,
) -> Prompt {
    let mut prompt = Prompt::new(u, v, instruction_template, budget);
    let pool: Vec<&Sentence> = u.sentences.iter().chain(v.sentences.iter()).collect();
    let mut remaining: Vec<usize> = (0..pool.len()).collect();
    while !remaining.is_empty() {
        let pick = rng.random_range(0..remaining.len());
        let sentence = pool[remaining.swap_remove(pick)];
        match prompt.try_append(sentence).expect("pool sentences belong to the pair") {
            Some(next) => prompt = next,
            None => break,
        }
    }
    prompt
}

/// Append sentences in description order, alternating between the drugs
/// starting with `u`, until the first budget rejection. A drug with no
/// sentences left is skipped.
pub fn truncated_prompt(u: &Drug, v: &Drug, instruction_template: &str, budget: usize) -> Prompt {
    let mut prompt = Prompt::new(u, v, instruction_template, budget);
    let mut next_u = 0usize;
    let mut next_v = 0usize;
    let mut take_u = true;
    loop {
        let sentence = if take_u && next_u < u.sentences.len() {
            let s = &u.sentences[next_u];
            next_u += 1;
            s
        } else if !take_u && next_v < v.sentences.len() {
            let s = &v.sentences[next_v];
            next_v += 1;
            s
        } else if next_u < u.sentences.len() {
            let s = &u.sentences[next_u];
            next_u += 1;
            s
        } else if next_v < v.sentences.len() {
            let s = &v.sentences[next_v];
            next_v += 1;
            s
        } else {
            break;
        };
        take_u = !take_u;
        match prompt.try_append(sentence).expect("pool sentences belong to the pair") {
            Some(next) => prompt = next,
            None => break,
        }
    }
    prompt
}

/// Budget-free prompt holding every sentence of both drugs, used for
/// length statistics.
pub fn full_prompt(u: &Drug, v: &Drug, instruction_template: &str) -> Prompt {
    let mut prompt = Prompt::new(u, v, instruction_template, usize::MAX);
    for s in u.sentences.iter().chain(v.sentences.iter()) {
        prompt = prompt
            .try_append(s)
            .expect("pool sentences belong to the pair")
            .expect("unbounded budget accepts everything");
    }
    prompt
}
