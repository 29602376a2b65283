//! The sentence-selection policy and its rollout machinery.
//!
//! At each step the policy scores every unselected sentence of the pair
//! with a one-hidden-layer tanh MLP over the concatenation of the
//! sentence encoding and the current prompt encoding, softmaxes the scores
//! into a distribution, and appends the chosen sentence to the prompt.
//! The reward for a step is the change in the predictor's quality score:
//! the weighted log-probability margin of the true interaction type over
//! the best incorrect one. A separate value head over the prompt encoding
//! estimates state values for advantage estimation.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;

use crate::corpus::{Drug, DrugIdx, Sentence};
use crate::error::TrainError;
use crate::prompt::{Prompt, SentenceRef};
use crate::textenc::{dot, EncoderParams, PredictorParams};

/// Reward shaping weights for correct (`lambda1`) and incorrect
/// (`lambda2`) predictions.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct RewardConfig {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { lambda1: 1.0, lambda2: 1.0 }
    }
}

/// Policy parameters: a private encoder copy, the action-scoring MLP, and
/// the state-value head.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub encoder: EncoderParams,
    pub hidden: usize,
    /// Row-major `hidden x 2*dim_embed` over `[enc(action) ; enc(state)]`.
    pub score_w1: Vec<f64>,
    pub score_b1: Vec<f64>,
    pub score_w2: Vec<f64>,
    pub score_b2: f64,
    /// Row-major `hidden x dim_embed` over `enc(state)`.
    pub value_w1: Vec<f64>,
    pub value_b1: Vec<f64>,
    pub value_w2: Vec<f64>,
    pub value_b2: f64,
}

impl PolicyParams {
    /// Hidden layers uniform in `[-0.5/fan_in, 0.5/fan_in]`; output heads
    /// zero so the first policy distribution is uniform and initial value
    /// estimates are zero.
    pub fn init<R: Rng>(encoder: EncoderParams, hidden: usize, rng: &mut R) -> Self {
        let d = encoder.dim_embed;
        let score_scale = 0.5 / (2 * d) as f64;
        let value_scale = 0.5 / d as f64;
        let score_w1 = (0..hidden * 2 * d)
            .map(|_| rng.random_range(-score_scale..=score_scale))
            .collect();
        let value_w1 = (0..hidden * d)
            .map(|_| rng.random_range(-value_scale..=value_scale))
            .collect();
        PolicyParams {
            encoder,
            hidden,
            score_w1,
            score_b1: vec![0.0; hidden],
            score_w2: vec![0.0; hidden],
            score_b2: 0.0,
            value_w1,
            value_b1: vec![0.0; hidden],
            value_w2: vec![0.0; hidden],
            value_b2: 0.0,
        }
    }
}

/// Unselected sentences of the pair, ordered `u` before `v`, then by index.
pub fn action_space<'a>(
    u_sentences: &'a [Sentence],
    v_sentences: &'a [Sentence],
    selected: &BTreeSet<SentenceRef>,
) -> Vec<&'a Sentence> {
    u_sentences
        .iter()
        .chain(v_sentences.iter())
        .filter(|s| !selected.contains(&SentenceRef::of(s)))
        .collect()
}

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

fn clamped_ln(p: f64) -> f64 {
    if p <= 0.0 {
        if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("zero probability clamped to 1e-12 before log");
        }
        return 1e-12f64.ln();
    }
    p.max(1e-12).ln()
}

/// Signed margin `log P(true) - max_{i' != true} log P(i')`, weighted by
/// `lambda1` when positive and `lambda2` otherwise.
pub fn quality(pred: &[f64], true_type: usize, cfg: &RewardConfig) -> f64 {
    assert!(pred.len() >= 2, "quality needs at least two interaction types");
    let correct = clamped_ln(pred[true_type]);
    let best_incorrect = pred
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != true_type)
        .map(|(_, &p)| clamped_ln(p))
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = correct - best_incorrect;
    if margin > 0.0 {
        cfg.lambda1 * margin
    } else {
        cfg.lambda2 * margin
    }
}

/// Per-step reward: the change in quality score.
pub fn step_reward(q_t: f64, q_prev: f64) -> f64 {
    q_t - q_prev
}

/// Cached forward pass of the policy at one state.
#[derive(Debug, Clone)]
pub struct StepEval {
    state_rows: (Vec<(usize, usize)>, usize),
    action_rows: Vec<(Vec<(usize, usize)>, usize)>,
    state_enc: Vec<f64>,
    action_encs: Vec<Vec<f64>>,
    hidden_acts: Vec<Vec<f64>>,
    value_hidden_act: Vec<f64>,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub entropy: f64,
    pub value: f64,
}

fn encode_rows(encoder: &EncoderParams, rows: &[(usize, usize)], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; encoder.dim_embed];
    if n == 0 {
        return out;
    }
    for &(r, count) in rows {
        let w = count as f64 / n as f64;
        for (o, &x) in out.iter_mut().zip(encoder.row(r)) {
            *o += w * x;
        }
    }
    out
}

/// Score every action against the current state and evaluate the value
/// head. Panics on an empty action set.
pub fn step_eval(params: &PolicyParams, state_text: &str, actions: &[&Sentence]) -> StepEval {
    assert!(!actions.is_empty(), "policy distribution over an empty action set");
    let d = params.encoder.dim_embed;
    let h = params.hidden;

    let (state_row_list, state_n) = params.encoder.token_rows(state_text);
    let state_enc = encode_rows(&params.encoder, &state_row_list, state_n);

    let mut action_rows = Vec::with_capacity(actions.len());
    let mut action_encs = Vec::with_capacity(actions.len());
    let mut hidden_acts = Vec::with_capacity(actions.len());
    let mut scores = Vec::with_capacity(actions.len());
    for action in actions {
        let (rows, n) = params.encoder.token_rows(&action.text);
        let enc = encode_rows(&params.encoder, &rows, n);
        let mut hidden = vec![0.0; h];
        for k in 0..h {
            let w = &params.score_w1[k * 2 * d..(k + 1) * 2 * d];
            let z = params.score_b1[k] + dot(&w[..d], &enc) + dot(&w[d..], &state_enc);
            hidden[k] = z.tanh();
        }
        scores.push(params.score_b2 + dot(&params.score_w2, &hidden));
        action_rows.push((rows, n));
        action_encs.push(enc);
        hidden_acts.push(hidden);
    }

    let probs = crate::textenc::softmax(&scores);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = scores.iter().map(|&s| (s - max).exp()).sum::<f64>().ln() + max;
    let log_probs: Vec<f64> = scores.iter().map(|&s| s - log_sum).collect();
    let entropy = -probs
        .iter()
        .zip(&log_probs)
        .map(|(&p, &lp)| if p > 0.0 { p * lp } else { 0.0 })
        .sum::<f64>();

    let mut value_hidden_act = vec![0.0; h];
    for k in 0..h {
        let w = &params.value_w1[k * d..(k + 1) * d];
        value_hidden_act[k] = (params.value_b1[k] + dot(w, &state_enc)).tanh();
    }
    let value = params.value_b2 + dot(&params.value_w2, &value_hidden_act);

    StepEval {
        state_rows: (state_row_list, state_n),
        action_rows,
        state_enc,
        action_encs,
        hidden_acts,
        value_hidden_act,
        probs,
        log_probs,
        entropy,
        value,
    }
}

/// Gradient of a linear combination of the step quantities with respect to
/// every policy parameter group.
#[derive(Debug, Clone)]
pub struct PolicyGrad {
    pub table: BTreeMap<usize, Vec<f64>>,
    pub score_w1: Vec<f64>,
    pub score_b1: Vec<f64>,
    pub score_w2: Vec<f64>,
    pub score_b2: f64,
    pub value_w1: Vec<f64>,
    pub value_b1: Vec<f64>,
    pub value_w2: Vec<f64>,
    pub value_b2: f64,
}

impl PolicyGrad {
    pub fn zeros(params: &PolicyParams) -> Self {
        PolicyGrad {
            table: BTreeMap::new(),
            score_w1: vec![0.0; params.score_w1.len()],
            score_b1: vec![0.0; params.score_b1.len()],
            score_w2: vec![0.0; params.score_w2.len()],
            score_b2: 0.0,
            value_w1: vec![0.0; params.value_w1.len()],
            value_b1: vec![0.0; params.value_b1.len()],
            value_w2: vec![0.0; params.value_w2.len()],
            value_b2: 0.0,
        }
    }
}

/// Accumulate the gradient of
/// `c_logp * log pi(chosen) + c_ent * H(pi) + c_value * V(state)`
/// into `grad`, flowing through the score MLP, the value head, and the
/// shared encoder via both the action and state encodings.
pub fn step_backward(
    params: &PolicyParams,
    eval: &StepEval,
    chosen: usize,
    c_logp: f64,
    c_ent: f64,
    c_value: f64,
    grad: &mut PolicyGrad,
) {
    let d = params.encoder.dim_embed;
    let h = params.hidden;
    let mut d_state = vec![0.0; d];

    for (j, hidden) in eval.hidden_acts.iter().enumerate() {
        let p = eval.probs[j];
        let lp = eval.log_probs[j];
        let indicator = if j == chosen { 1.0 } else { 0.0 };
        let ds = c_logp * (indicator - p) + c_ent * (-p * (lp + eval.entropy));
        if ds == 0.0 {
            continue;
        }
        grad.score_b2 += ds;
        let enc_a = &eval.action_encs[j];
        let mut d_action = vec![0.0; d];
        for k in 0..h {
            grad.score_w2[k] += ds * hidden[k];
            let delta = ds * params.score_w2[k] * (1.0 - hidden[k] * hidden[k]);
            if delta == 0.0 {
                continue;
            }
            grad.score_b1[k] += delta;
            let w = &params.score_w1[k * 2 * d..(k + 1) * 2 * d];
            let gw = &mut grad.score_w1[k * 2 * d..(k + 1) * 2 * d];
            for j2 in 0..d {
                gw[j2] += delta * enc_a[j2];
                gw[d + j2] += delta * eval.state_enc[j2];
                d_action[j2] += delta * w[j2];
                d_state[j2] += delta * w[d + j2];
            }
        }
        let (rows, n) = &eval.action_rows[j];
        if *n > 0 {
            for &(r, count) in rows {
                let w = count as f64 / *n as f64;
                let acc = grad.table.entry(r).or_insert_with(|| vec![0.0; d]);
                for (a, &g) in acc.iter_mut().zip(&d_action) {
                    *a += w * g;
                }
            }
        }
    }

    if c_value != 0.0 {
        grad.value_b2 += c_value;
        for k in 0..h {
            let hv = eval.value_hidden_act[k];
            grad.value_w2[k] += c_value * hv;
            let delta = c_value * params.value_w2[k] * (1.0 - hv * hv);
            if delta == 0.0 {
                continue;
            }
            grad.value_b1[k] += delta;
            let w = &params.value_w1[k * d..(k + 1) * d];
            let gw = &mut grad.value_w1[k * d..(k + 1) * d];
            for j2 in 0..d {
                gw[j2] += delta * eval.state_enc[j2];
                d_state[j2] += delta * w[j2];
            }
        }
    }

    let (rows, n) = &eval.state_rows;
    if *n > 0 && d_state.iter().any(|&g| g != 0.0) {
        for &(r, count) in rows {
            let w = count as f64 / *n as f64;
            let acc = grad.table.entry(r).or_insert_with(|| vec![0.0; d]);
            for (a, &g) in acc.iter_mut().zip(&d_state) {
                *a += w * g;
            }
        }
    }
}

/// Descent step on the policy with decoupled weight decay, scaled by the
/// minibatch size.
pub fn apply_policy_update(
    params: &mut PolicyParams,
    grad: &PolicyGrad,
    batch_len: usize,
    lr: f64,
    weight_decay: f64,
) {
    let scale = lr / batch_len as f64;
    let d = params.encoder.dim_embed;
    for (r, row) in &grad.table {
        let dst = &mut params.encoder.table[r * d..(r + 1) * d];
        for (p, g) in dst.iter_mut().zip(row) {
            *p -= scale * g;
        }
    }
    let pairs: [(&mut Vec<f64>, &Vec<f64>); 6] = [
        (&mut params.score_w1, &grad.score_w1),
        (&mut params.score_b1, &grad.score_b1),
        (&mut params.score_w2, &grad.score_w2),
        (&mut params.value_w1, &grad.value_w1),
        (&mut params.value_b1, &grad.value_b1),
        (&mut params.value_w2, &grad.value_w2),
    ];
    for (dst, src) in pairs {
        for (p, g) in dst.iter_mut().zip(src.iter()) {
            *p -= scale * g;
        }
    }
    params.score_b2 -= scale * grad.score_b2;
    params.value_b2 -= scale * grad.value_b2;
    if weight_decay != 0.0 {
        let decay = lr * weight_decay;
        for p in params.encoder.table.iter_mut() {
            *p -= decay * *p;
        }
        for dst in [
            &mut params.score_w1,
            &mut params.score_b1,
            &mut params.score_w2,
            &mut params.value_w1,
            &mut params.value_b1,
            &mut params.value_w2,
        ] {
            for p in dst.iter_mut() {
                *p -= decay * *p;
            }
        }
        params.score_b2 -= decay * params.score_b2;
        params.value_b2 -= decay * params.value_b2;
    }
}

/// Sampled versus greedy action selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Sample,
    Greedy,
}

/// One recorded selection step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub state_text: String,
    pub action: SentenceRef,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
}

/// One rollout over a drug pair.
#[derive(Debug, Clone)]
pub struct Episode {
    pub u: DrugIdx,
    pub v: DrugIdx,
    pub u_id: String,
    pub v_id: String,
    pub true_type: usize,
    pub u_sentences: Vec<Sentence>,
    pub v_sentences: Vec<Sentence>,
    pub q_initial: f64,
    pub steps: Vec<StepRecord>,
    pub final_prompt: Prompt,
}

impl Episode {
    /// Replay the action set the policy saw before step `t`.
    pub fn action_set_at(&self, t: usize) -> Vec<&Sentence> {
        let selected: BTreeSet<SentenceRef> = self.steps[..t].iter().map(|s| s.action).collect();
        action_space(&self.u_sentences, &self.v_sentences, &selected)
    }

    /// Index of the chosen action within [`Self::action_set_at`].
    pub fn chosen_index_at(&self, t: usize) -> usize {
        self.action_set_at(t)
            .iter()
            .position(|s| SentenceRef::of(s) == self.steps[t].action)
            .expect("chosen action is part of the replayed action set")
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Recorded per-step value estimates plus the terminal value 0.
    pub fn values_with_terminal(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.steps.iter().map(|s| s.value).collect();
        v.push(0.0);
        v
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Run one episode: score, choose, append until the first budget rejection
/// or exhaustion. Rewards are evaluated with the (frozen) predictor on each
/// intermediate prompt; a rejected append records nothing.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng>(
    u: &Drug,
    v: &Drug,
    true_type: usize,
    policy: &PolicyParams,
    predictor: &PredictorParams,
    budget: usize,
    instruction_template: &str,
    reward_cfg: &RewardConfig,
    mode: SelectionMode,
    rng: &mut R,
) -> Episode {
    let mut prompt = Prompt::new(u, v, instruction_template, budget);
    let mut q_prev = quality(&predictor.forward(&prompt.render()), true_type, reward_cfg);
    let q_initial = q_prev;
    let mut selected: BTreeSet<SentenceRef> = BTreeSet::new();
    let mut steps = Vec::new();

    loop {
        let actions = action_space(&u.sentences, &v.sentences, &selected);
        if actions.is_empty() {
            break;
        }
        let state_text = prompt.render();
        let eval = step_eval(policy, &state_text, &actions);
        let choice = match mode {
            SelectionMode::Greedy => {
                let mut best = 0;
                for (j, &p) in eval.probs.iter().enumerate() {
                    if p > eval.probs[best] {
                        best = j;
                    }
                }
                best
            }
            SelectionMode::Sample => {
                let draw: f64 = rng.random_range(0.0..1.0);
                let mut acc = 0.0;
                let mut picked = eval.probs.len() - 1;
                for (j, &p) in eval.probs.iter().enumerate() {
                    acc += p;
                    if draw < acc {
                        picked = j;
                        break;
                    }
                }
                picked
            }
        };
        match prompt.try_append(actions[choice]).expect("actions belong to the pair") {
            Some(next) => {
                let q = quality(&predictor.forward(&next.render()), true_type, reward_cfg);
                steps.push(StepRecord {
                    state_text,
                    action: SentenceRef::of(actions[choice]),
                    log_prob: eval.log_probs[choice],
                    value: eval.value,
                    reward: step_reward(q, q_prev),
                });
                selected.insert(SentenceRef::of(actions[choice]));
                q_prev = q;
                prompt = next;
            }
            None => break,
        }
    }

    Episode {
        u: u.idx,
        v: v.idx,
        u_id: u.id.clone(),
        v_id: v.id.clone(),
        true_type,
        u_sentences: u.sentences.clone(),
        v_sentences: v.sentences.clone(),
        q_initial,
        steps,
        final_prompt: prompt,
    }
}

const POLICY_MAGIC: &[u8; 4] = b"TXP1";

/// Flat binary checkpoint mirroring the predictor format: magic,
/// little-endian u32 dims, row-major f64s.
pub fn save_policy(params: &PolicyParams, path: &Path) -> Result<(), TrainError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(POLICY_MAGIC)?;
    for dim in [params.encoder.dim_hash, params.encoder.dim_embed, params.hidden] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for value in params
        .encoder
        .table
        .iter()
        .chain(params.score_w1.iter())
        .chain(params.score_b1.iter())
        .chain(params.score_w2.iter())
        .chain(std::iter::once(&params.score_b2))
        .chain(params.value_w1.iter())
        .chain(params.value_b1.iter())
        .chain(params.value_w2.iter())
        .chain(std::iter::once(&params.value_b2))
    {
        w.write_all(&value.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<PolicyParams, TrainError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != POLICY_MAGIC {
        return Err(TrainError::BadCheckpoint(format!("bad magic {magic:?}")));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        *d = u32::from_le_bytes(buf) as usize;
    }
    let [dim_hash, dim_embed, hidden] = dims;
    if !dim_hash.is_power_of_two() || dim_embed == 0 || hidden == 0 {
        return Err(TrainError::BadCheckpoint(format!("bad dims {dims:?}")));
    }
    let mut read_f64s = |count: usize| -> Result<Vec<f64>, TrainError> {
        let mut out = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    let table = read_f64s(dim_hash * dim_embed)?;
    let score_w1 = read_f64s(hidden * 2 * dim_embed)?;
    let score_b1 = read_f64s(hidden)?;
    let score_w2 = read_f64s(hidden)?;
    let score_b2 = read_f64s(1)?[0];
    let value_w1 = read_f64s(hidden * dim_embed)?;
    let value_b1 = read_f64s(hidden)?;
    let value_w2 = read_f64s(hidden)?;
    let value_b2 = read_f64s(1)?[0];
    Ok(PolicyParams {
        encoder: EncoderParams { dim_hash, dim_embed, table },
        hidden,
        score_w1,
        score_b1,
        score_w2,
        score_b2,
        value_w1,
        value_b1,
        value_w2,
        value_b2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    fn pair_corpus(u_desc: &str, v_desc: &str) -> Corpus {
        Corpus::build(
            vec![
                ("u".into(), "A".into(), 0, u_desc.into(), 0),
                ("v".into(), "B".into(), 1, v_desc.into(), 0),
            ],
            vec![
                (
                    crate::corpus::InteractionType {
                        id: 0,
                        template: "#Drug1 a #Drug2".into(),
                        definition: String::new(),
                    },
                    0,
                ),
                (
                    crate::corpus::InteractionType {
                        id: 1,
                        template: "#Drug1 b #Drug2".into(),
                        definition: String::new(),
                    },
                    0,
                ),
            ],
            vec![("u".into(), 0, "v".into(), crate::corpus::Polarity::Positive, 0)],
        )
        .unwrap()
    }

    fn random_policy(seed: u64, dim_hash: usize, dim_embed: usize, hidden: usize) -> PolicyParams {
        let mut rng = stream(seed, "policy", &[]);
        let encoder = EncoderParams::init(dim_hash, dim_embed, &mut rng);
        let mut p = PolicyParams::init(encoder, hidden, &mut rng);
        for w in p
            .score_w1
            .iter_mut()
            .chain(p.score_b1.iter_mut())
            .chain(p.score_w2.iter_mut())
            .chain(p.value_w1.iter_mut())
            .chain(p.value_b1.iter_mut())
            .chain(p.value_w2.iter_mut())
        {
            *w = rng.random_range(-0.8..=0.8);
        }
        p.score_b2 = rng.random_range(-0.5..=0.5);
        p.value_b2 = rng.random_range(-0.5..=0.5);
        p
    }

    fn random_predictor(seed: u64, n_types: usize) -> PredictorParams {
        let mut rng = stream(seed, "pred", &[]);
        let mut p = PredictorParams::init(256, 8, n_types, &mut rng);
        for w in p.head.iter_mut().chain(p.bias.iter_mut()) {
            *w = rng.random_range(-0.5..=0.5);
        }
        p
    }

    #[test]
    fn action_space_shrinks_and_orders() {
        let corpus = pair_corpus(
            "U0 a. U1 b. U2 c. U3 d. U4 e.",
            "V0 a. V1 b. V2 c. V3 d. V4 e.",
        );
        let u = corpus.drug(DrugIdx(0));
        let v = corpus.drug(DrugIdx(1));
        let empty = BTreeSet::new();
        let all = action_space(&u.sentences, &v.sentences, &empty);
        assert_eq!(all.len(), 10);
        assert!(all[..5].iter().all(|s| s.drug == DrugIdx(0)));
        assert!(all[5..].iter().all(|s| s.drug == DrugIdx(1)));

        let mut selected = BTreeSet::new();
        selected.insert(SentenceRef { drug: 0, index: 1 });
        selected.insert(SentenceRef { drug: 1, index: 0 });
        selected.insert(SentenceRef { drug: 1, index: 4 });
        assert_eq!(action_space(&u.sentences, &v.sentences, &selected).len(), 7);

        let everything: BTreeSet<SentenceRef> = all.iter().map(|s| SentenceRef::of(s)).collect();
        assert!(action_space(&u.sentences, &v.sentences, &everything).is_empty());
    }

    #[test]
    fn singleton_softmax_and_symmetry() {
        let corpus = pair_corpus("Same text here. Same text here again.", "Same text here.");
        let u = corpus.drug(DrugIdx(0));
        let v = corpus.drug(DrugIdx(1));
        let policy = random_policy(1, 256, 8, 4);

        let single = step_eval(&policy, "[CLS] state", &[&u.sentences[0]]);
        assert_abs_diff_eq!(single.probs[0], 1.0, epsilon = 1e-12);

        // u sentence 0 and v sentence 0 share the same text.
        let two = step_eval(&policy, "[CLS] state", &[&u.sentences[0], &v.sentences[0]]);
        assert_abs_diff_eq!(two.probs[0], two.probs[1], epsilon = 1e-12);
    }

    #[test]
    fn zero_mlp_weights_give_uniform_distribution() {
        let corpus = pair_corpus("U0 a. U1 bb. U2 ccc.", "V0 dddd.");
        let u = corpus.drug(DrugIdx(0));
        let v = corpus.drug(DrugIdx(1));
        let mut rng = stream(2, "zero", &[]);
        let policy = PolicyParams::init(EncoderParams::init(256, 8, &mut rng), 4, &mut rng);
        let actions = action_space(&u.sentences, &v.sentences, &BTreeSet::new());
        let eval = step_eval(&policy, "[CLS] anything", &actions);
        for &p in &eval.probs {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn distribution_is_invariant_to_score_shift() {
        let corpus = pair_corpus("U0 a. U1 b.", "V0 c.");
        let u = corpus.drug(DrugIdx(0));
        let v = corpus.drug(DrugIdx(1));
        let policy = random_policy(3, 256, 8, 4);
        let mut shifted = policy.clone();
        shifted.score_b2 += 57.0;
        let actions = action_space(&u.sentences, &v.sentences, &BTreeSet::new());
        let a = step_eval(&policy, "[CLS] s", &actions);
        let b = step_eval(&shifted, "[CLS] s", &actions);
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn quality_worked_example() {
        let cfg = RewardConfig::default();
        assert_abs_diff_eq!(
            quality(&[0.6, 0.3, 0.1], 0, &cfg),
            2.0f64.ln(),
            epsilon = 1e-12
        );
        // Tie gives exactly zero regardless of the weights.
        let cfg2 = RewardConfig { lambda1: 3.0, lambda2: 7.0 };
        assert_eq!(quality(&[0.4, 0.4, 0.2], 0, &cfg2), 0.0);
        // Unit weights reduce q to the raw margin.
        let margin = quality(&[0.2, 0.5, 0.3], 0, &cfg);
        assert_abs_diff_eq!(margin, (0.2f64).ln() - (0.5f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn quality_weights_scale_by_sign() {
        let cfg = RewardConfig { lambda1: 2.0, lambda2: 5.0 };
        let positive = quality(&[0.6, 0.3, 0.1], 0, &cfg);
        assert_abs_diff_eq!(positive, 2.0 * 2.0f64.ln(), epsilon = 1e-12);
        let negative = quality(&[0.3, 0.6, 0.1], 0, &cfg);
        assert_abs_diff_eq!(negative, 5.0 * (0.3f64.ln() - 0.6f64.ln()), epsilon = 1e-12);
        assert!(negative < 0.0);
    }

    #[test]
    fn step_rewards_from_a_quality_sequence() {
        let q = [-0.2, 0.1, 0.4];
        let rewards: Vec<f64> = q.windows(2).map(|w| step_reward(w[1], w[0])).collect();
        assert_abs_diff_eq!(rewards[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(rewards[1], 0.3, epsilon = 1e-12);
        assert_eq!(step_reward(0.5, 0.5), 0.0);
    }

    #[test]
    fn rewards_telescope_to_final_minus_initial_quality() {
        let corpus = pair_corpus(
            "U0 aa bb. U1 cc dd. U2 ee ff.",
            "V0 gg hh. V1 ii jj. V2 kk ll.",
        );
        let u = corpus.drug(DrugIdx(0));
        let v = corpus.drug(DrugIdx(1));
        let cfg = RewardConfig { lambda1: 1.5, lambda2: 0.5 };
        for seed in 0..50 {
            let policy = random_policy(seed, 256, 8, 4);
            let predictor = random_predictor(seed + 1000, 3);
            let mut rng = stream(seed, "roll", &[]);
            let ep = rollout(
                u, v, 1, &policy, &predictor, 60,
                crate::prompt::DEFAULT_INSTRUCTION_TEMPLATE,
                &cfg, SelectionMode::Sample, &mut rng,
            );
            let q_final = quality(&predictor.forward(&ep.final_prompt.render()), 1, &cfg);
            assert_abs_diff_eq!(ep.total_reward(), q_final - ep.q_initial, epsilon = 1e-9);
        }
    }

    #[test]
    fn greedy_rollout_is_deterministic() {
        let corpus = pair_corpus("U0 one two. U1 three four.", "V0 five six. V1 seven eight.");
        let u = corpus.drug(DrugIdx(0));
        let v = corpus.drug(DrugIdx(1));
        let policy = random_policy(5, 256, 8, 4);
        let predictor = random_predictor(6, 2);
        let cfg = RewardConfig::default();
        let run = || {
            rollout(
                u, v, 0, &policy, &predictor, 100,
                crate::prompt::DEFAULT_INSTRUCTION_TEMPLATE,
                &cfg, SelectionMode::Greedy, &mut stream(0, "unused", &[]),
            )
        };
        let a = run();
        let b = run();
        assert_eq!(a.final_prompt.render(), b.final_prompt.render());
        let refs_a: Vec<SentenceRef> = a.steps.iter().map(|s| s.action).collect();
        let refs_b: Vec<SentenceRef> = b.steps.iter().map(|s| s.action).collect();
        assert_eq!(refs_a, refs_b);
    }

    #[test]
    fn exhaustion_selects_every_sentence() {
        let corpus = pair_corpus("P. Q. R.", "X. Y. Z.");
        let u = corpus.drug(DrugIdx(0));
        let v = corpus.drug(DrugIdx(1));
        let policy = random_policy(7, 256, 8, 4);
        let predictor = random_predictor(8, 2);
        let ep = rollout(
            u, v, 0, &policy, &predictor, 10_000,
            crate::prompt::DEFAULT_INSTRUCTION_TEMPLATE,
            &RewardConfig::default(), SelectionMode::Sample,
            &mut stream(9, "exhaust", &[]),
        );
        assert_eq!(ep.steps.len(), 6);
        let mut chosen: Vec<SentenceRef> = ep.steps.iter().map(|s| s.action).collect();
        chosen.sort();
        let mut all: Vec<SentenceRef> = u
            .sentences
            .iter()
            .chain(v.sentences.iter())
            .map(SentenceRef::of)
            .collect();
        all.sort();
        assert_eq!(chosen, all);
    }

    #[test]
    fn degenerate_budget_yields_zero_steps() {
        let corpus = pair_corpus("Long sentence here with words.", "Another long sentence.");
        let u = corpus.drug(DrugIdx(0));
        let v = corpus.drug(DrugIdx(1));
        let policy = random_policy(10, 256, 8, 4);
        let predictor = random_predictor(11, 2);
        let ep = rollout(
            u, v, 0, &policy, &predictor, 3,
            crate::prompt::DEFAULT_INSTRUCTION_TEMPLATE,
            &RewardConfig::default(), SelectionMode::Greedy,
            &mut stream(12, "tiny", &[]),
        );
        assert!(ep.steps.is_empty());
        assert_eq!(ep.final_prompt.selected_count(), 0);
    }

    #[test]
    fn zero_policy_samples_uniformly_within_three_sigma() {
        let corpus = pair_corpus("A0 w. A1 w. A2 w. A3 w.", "B0 w. B1 w. B2 w. B3 w.");
        let u = corpus.drug(DrugIdx(0));
        let v = corpus.drug(DrugIdx(1));
        let mut rng = stream(13, "uniform", &[]);
        let policy = PolicyParams::init(EncoderParams::init(256, 8, &mut rng), 4, &mut rng);
        let actions = action_space(&u.sentences, &v.sentences, &BTreeSet::new());
        let eval = step_eval(&policy, "[CLS] state", &actions);
        let n = 10_000usize;
        let k = actions.len();
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut draw_rng = stream(14, "draw", &[i as u64]);
            let draw: f64 = draw_rng.random_range(0.0..1.0);
            let mut acc = 0.0;
            let mut picked = k - 1;
            for (j, &p) in eval.probs.iter().enumerate() {
                acc += p;
                if draw < acc {
                    picked = j;
                    break;
                }
            }
            counts[picked] += 1;
        }
        let p = 1.0 / k as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!(
                (c as f64 - n as f64 * p).abs() <= 3.0 * sigma,
                "count {c} outside 3 sigma of {}",
                n as f64 * p
            );
        }
    }

    #[test]
    fn step_backward_matches_finite_differences() {
        let corpus = pair_corpus("U0 aa bb. U1 cc dd.", "V0 ee ff. V1 gg hh.");
        let u = corpus.drug(DrugIdx(0));
        let v = corpus.drug(DrugIdx(1));
        let actions = action_space(&u.sentences, &v.sentences, &BTreeSet::new());
        let state = "[CLS] a: u0 aa bb b: partial state";
        let chosen = 2usize;
        let (c_logp, c_ent, c_value) = (0.7, -0.3, 1.2);

        let objective = |p: &PolicyParams| {
            let eval = step_eval(p, state, &actions);
            c_logp * eval.log_probs[chosen] + c_ent * eval.entropy + c_value * eval.value
        };

        for seed in 0..5u64 {
            let params = random_policy(seed + 100, 64, 4, 3);
            let eval = step_eval(&params, state, &actions);
            let mut grad = PolicyGrad::zeros(&params);
            step_backward(&params, &eval, chosen, c_logp, c_ent, c_value, &mut grad);

            let eps = 1e-5;
            let check = |analytic: f64, fd: f64| {
                let denom = analytic.abs().max(fd.abs()).max(1e-8);
                assert!(
                    ((analytic - fd) / denom).abs() < 1e-4,
                    "analytic {analytic} vs fd {fd}"
                );
            };

            macro_rules! check_dense {
                ($field:ident) => {
                    for j in 0..params.$field.len() {
                        let mut plus = params.clone();
                        plus.$field[j] += eps;
                        let mut minus = params.clone();
                        minus.$field[j] -= eps;
                        let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                        check(grad.$field[j], fd);
                    }
                };
            }
            check_dense!(score_w1);
            check_dense!(score_b1);
            check_dense!(score_w2);
            check_dense!(value_w1);
            check_dense!(value_b1);
            check_dense!(value_w2);
            for (field, g) in [(true, grad.score_b2), (false, grad.value_b2)] {
                let mut plus = params.clone();
                let mut minus = params.clone();
                if field {
                    plus.score_b2 += eps;
                    minus.score_b2 -= eps;
                } else {
                    plus.value_b2 += eps;
                    minus.value_b2 -= eps;
                }
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                check(g, fd);
            }
            let d = params.encoder.dim_embed;
            for (&r, row) in &grad.table {
                for j in 0..d {
                    let mut plus = params.clone();
                    plus.encoder.table[r * d + j] += eps;
                    let mut minus = params.clone();
                    minus.encoder.table[r * d + j] -= eps;
                    let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                    check(row[j], fd);
                }
            }
        }
    }

    #[test]
    fn policy_checkpoint_round_trips() {
        let params = random_policy(20, 256, 8, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.pol");
        save_policy(&params, &path).unwrap();
        let loaded = load_policy(&path).unwrap();
        assert_eq!(params, loaded);
    }
}
