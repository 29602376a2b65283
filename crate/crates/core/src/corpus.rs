//! Corpus ingestion and dataset splitting.
//!
//! A corpus is a set of drugs with dated textual descriptions, a dense set
//! of interaction types, and typed interaction triples between drugs.
//! Splits partition the drugs chronologically so that held-out ("new")
//! drugs never appear in any training triple, mirroring the setting where
//! interactions must be predicted for drugs unseen during training.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CorpusError;
use crate::prompt::{full_prompt, Prompt};
use crate::text::{segment_sentences, token_count};

/// Index of a drug within its corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DrugIdx(pub usize);

/// A drug with its segmented description.
#[derive(Debug, Clone)]
pub struct Drug {
    pub idx: DrugIdx,
    pub id: String,
    pub name: String,
    /// Development/approval order used for chronological splitting.
    pub date_rank: i64,
    pub sentences: Vec<Sentence>,
}

/// One sentence of a drug description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub drug: DrugIdx,
    pub index: usize,
    pub text: String,
    pub token_count: usize,
}

/// An interaction type with its fill-in template.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionType {
    pub id: usize,
    pub template: String,
    pub definition: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    #[default]
    Positive,
    Negative,
}

/// A typed interaction edge between two drugs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub u: DrugIdx,
    pub i: usize,
    pub v: DrugIdx,
    pub polarity: Polarity,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    drugs: Vec<Drug>,
    types: Vec<InteractionType>,
    triples: Vec<Triple>,
    by_id: BTreeMap<String, DrugIdx>,
}

/// One line of the corpus JSONL file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Drug {
        id: String,
        name: String,
        date_rank: i64,
        description: String,
    },
    Type {
        id: usize,
        template: String,
        definition: String,
    },
    Triple {
        u: String,
        i: usize,
        v: String,
        #[serde(default)]
        polarity: Polarity,
    },
}

impl Corpus {
    /// Build a corpus from raw parts, running all integrity checks.
    ///
    /// `line_of` maps a part back to its source line for error reporting;
    /// in-memory callers pass 0.
    pub fn build(
        drugs: Vec<(String, String, i64, String, usize)>,
        types: Vec<(InteractionType, usize)>,
        triples: Vec<(String, usize, String, Polarity, usize)>,
    ) -> Result<Self, CorpusError> {
        let mut by_id = BTreeMap::new();
        let mut built_drugs = Vec::with_capacity(drugs.len());
        for (pos, (id, name, date_rank, description, line)) in drugs.into_iter().enumerate() {
            if by_id.contains_key(&id) {
                return Err(CorpusError::DuplicateDrug { id, line });
            }
            let idx = DrugIdx(pos);
            let sentences = segment_sentences(&description)
                .into_iter()
                .enumerate()
                .map(|(index, text)| {
                    let token_count = token_count(&text);
                    Sentence { drug: idx, index, text, token_count }
                })
                .collect();
            by_id.insert(id.clone(), idx);
            built_drugs.push(Drug { idx, id, name, date_rank, sentences });
        }

        let mut seen_types = BTreeSet::new();
        let mut built_types = Vec::with_capacity(types.len());
        for (ty, line) in types {
            if !seen_types.insert(ty.id) {
                return Err(CorpusError::DuplicateType { id: ty.id, line });
            }
            for placeholder in ["#Drug1", "#Drug2"] {
                if !ty.template.contains(placeholder) {
                    return Err(CorpusError::BadTemplate { id: ty.id, placeholder });
                }
            }
            built_types.push(ty);
        }
        built_types.sort_by_key(|t| t.id);
        for (want, ty) in built_types.iter().enumerate() {
            if ty.id != want {
                return Err(CorpusError::SparseTypeIds { expected: built_types.len(), missing: want });
            }
        }

        let mut built_triples = Vec::with_capacity(triples.len());
        for (u, i, v, polarity, line) in triples {
            let u_idx = *by_id.get(&u).ok_or(CorpusError::DanglingDrug { id: u.clone(), line })?;
            let v_idx = *by_id.get(&v).ok_or(CorpusError::DanglingDrug { id: v.clone(), line })?;
            if u_idx == v_idx {
                return Err(CorpusError::SelfInteraction { id: u, line });
            }
            if i >= built_types.len() {
                return Err(CorpusError::DanglingType { id: i, line });
            }
            built_triples.push(Triple { u: u_idx, i, v: v_idx, polarity });
        }

        Ok(Corpus { drugs: built_drugs, types: built_types, triples: built_triples, by_id })
    }

    /// Load the JSONL corpus format.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, CorpusError> {
        let mut drugs = Vec::new();
        let mut types = Vec::new();
        let mut triples = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line)
                .map_err(|e| CorpusError::Malformed { line: lineno, message: e.to_string() })?;
            match record {
                Record::Drug { id, name, date_rank, description } => {
                    drugs.push((id, name, date_rank, description, lineno));
                }
                Record::Type { id, template, definition } => {
                    types.push((InteractionType { id, template, definition }, lineno));
                }
                Record::Triple { u, i, v, polarity } => {
                    triples.push((u, i, v, polarity, lineno));
                }
            }
        }
        Self::build(drugs, types, triples)
    }

    /// Write the corpus back out as JSONL (drugs, then types, then triples).
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for d in &self.drugs {
            let description = d.sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
            let rec = Record::Drug {
                id: d.id.clone(),
                name: d.name.clone(),
                date_rank: d.date_rank,
                description,
            };
            writeln!(w, "{}", serde_json::to_string(&rec).expect("serializable record"))?;
        }
        for t in &self.types {
            let rec = Record::Type { id: t.id, template: t.template.clone(), definition: t.definition.clone() };
            writeln!(w, "{}", serde_json::to_string(&rec).expect("serializable record"))?;
        }
        for t in &self.triples {
            let rec = Record::Triple {
                u: self.drugs[t.u.0].id.clone(),
                i: t.i,
                v: self.drugs[t.v.0].id.clone(),
                polarity: t.polarity,
            };
            writeln!(w, "{}", serde_json::to_string(&rec).expect("serializable record"))?;
        }
        Ok(())
    }

    pub fn drugs(&self) -> &[Drug] {
        &self.drugs
    }

    pub fn drug(&self, idx: DrugIdx) -> &Drug {
        &self.drugs[idx.0]
    }

    pub fn drug_by_id(&self, id: &str) -> Option<&Drug> {
        self.by_id.get(id).map(|&idx| &self.drugs[idx.0])
    }

    pub fn types(&self) -> &[InteractionType] {
        &self.types
    }

    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple(&self, idx: usize) -> &Triple {
        &self.triples[idx]
    }
}

/// How a corpus is partitioned for training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Chronological drug holdout: new drugs are invisible during training.
    ZeroShot,
    /// Zero-shot plus `k` seeded triples per new drug moved into training.
    FewShot(usize),
    /// Uniform triple split with every drug in the training drug set.
    Vanilla,
}

/// Drug and triple partitions produced by [`make_split`].
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub mode: SplitMode,
    pub seed: u64,
    pub d_tra: BTreeSet<DrugIdx>,
    pub d_val: BTreeSet<DrugIdx>,
    pub d_tst: BTreeSet<DrugIdx>,
    /// Indices into `corpus.triples()`.
    pub s_tra: Vec<usize>,
    pub s_val: Vec<usize>,
    pub s_tst: Vec<usize>,
}

/// JSON manifest form of a split, keyed by drug id strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub mode: SplitMode,
    pub seed: u64,
    pub d_tra: Vec<String>,
    pub d_val: Vec<String>,
    pub d_tst: Vec<String>,
    pub s_tra: Vec<ManifestTriple>,
    pub s_val: Vec<ManifestTriple>,
    pub s_tst: Vec<ManifestTriple>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestTriple {
    pub u: String,
    pub i: usize,
    pub v: String,
    pub polarity: Polarity,
}

/// Chronologically split drugs, then assign triples.
///
/// Zero-shot: drugs sorted by `(date_rank, id)`; the last `tst_fraction`
/// become test drugs and the preceding `val_fraction` validation drugs.
/// Training triples have both endpoints among training drugs; validation
/// triples touch validation drugs but no test drug; everything else
/// (including pairs spanning the validation and test drug sets) goes to
/// the test triples. Few-shot starts from zero-shot and moves `k` seeded
/// triples per new drug into training. Vanilla shuffles the triples and
/// splits them by the same fractions with every drug in `d_tra`.
pub fn make_split(
    corpus: &Corpus,
    mode: SplitMode,
    val_fraction: f64,
    tst_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    if !(0.0..1.0).contains(&val_fraction)
        || !(0.0..1.0).contains(&tst_fraction)
        || val_fraction <= 0.0
        || tst_fraction <= 0.0
        || val_fraction + tst_fraction >= 1.0
    {
        return Err(CorpusError::BadFractions { val: val_fraction, tst: tst_fraction });
    }

    match mode {
        SplitMode::Vanilla => vanilla_split(corpus, val_fraction, tst_fraction, seed),
        SplitMode::ZeroShot => zero_shot_split(corpus, val_fraction, tst_fraction, seed),
        SplitMode::FewShot(k) => {
            if !matches!(k, 1 | 3 | 5) {
                log::warn!("few-shot k={k} is outside the usual {{1,3,5}}");
            }
            let mut split = zero_shot_split(corpus, val_fraction, tst_fraction, seed)?;
            apply_few_shot(corpus, &mut split, k, seed);
            split.mode = SplitMode::FewShot(k);
            Ok(split)
        }
    }
}

fn zero_shot_split(
    corpus: &Corpus,
    val_fraction: f64,
    tst_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    let n = corpus.drugs().len();
    let n_tst = (n as f64 * tst_fraction).floor() as usize;
    let n_val = (n as f64 * val_fraction).floor() as usize;
    if n_tst + n_val >= n {
        return Err(CorpusError::EmptyTrain { n_drugs: n, val: val_fraction, tst: tst_fraction });
    }

    let mut order: Vec<&Drug> = corpus.drugs().iter().collect();
    order.sort_by(|a, b| a.date_rank.cmp(&b.date_rank).then_with(|| a.id.cmp(&b.id)));

    let n_tra = n - n_val - n_tst;
    let d_tra: BTreeSet<DrugIdx> = order[..n_tra].iter().map(|d| d.idx).collect();
    let d_val: BTreeSet<DrugIdx> = order[n_tra..n_tra + n_val].iter().map(|d| d.idx).collect();
    let d_tst: BTreeSet<DrugIdx> = order[n_tra + n_val..].iter().map(|d| d.idx).collect();

    let mut s_tra = Vec::new();
    let mut s_val = Vec::new();
    let mut s_tst = Vec::new();
    for (idx, t) in corpus.triples().iter().enumerate() {
        // Membership predicates checked in order train, validation, test;
        // val-tst pairs fall through to the test set.
        if d_tra.contains(&t.u) && d_tra.contains(&t.v) {
            s_tra.push(idx);
        } else if !d_tst.contains(&t.u) && !d_tst.contains(&t.v) {
            s_val.push(idx);
        } else {
            s_tst.push(idx);
        }
    }

    Ok(DatasetSplit { mode: SplitMode::ZeroShot, seed, d_tra, d_val, d_tst, s_tra, s_val, s_tst })
}

fn apply_few_shot(corpus: &Corpus, split: &mut DatasetSplit, k: usize, seed: u64) {
    use rand::seq::SliceRandom;

    let new_drugs: Vec<DrugIdx> = split.d_val.iter().chain(split.d_tst.iter()).copied().collect();
    let mut moved: BTreeSet<usize> = BTreeSet::new();
    for &drug in &new_drugs {
        let mut eligible: Vec<usize> = split
            .s_val
            .iter()
            .chain(split.s_tst.iter())
            .copied()
            .filter(|idx| !moved.contains(idx))
            .filter(|&idx| {
                let t = corpus.triple(idx);
                t.u == drug || t.v == drug
            })
            .collect();
        if eligible.len() < k {
            log::warn!(
                "drug {} has only {} eligible triples for k={k}; moving all of them",
                corpus.drug(drug).id,
                eligible.len()
            );
        }
        let mut rng = crate::rng::stream(seed, "few_shot", &[drug.0 as u64]);
        eligible.shuffle(&mut rng);
        moved.extend(eligible.into_iter().take(k));
    }
    split.s_val.retain(|idx| !moved.contains(idx));
    split.s_tst.retain(|idx| !moved.contains(idx));
    split.s_tra.extend(moved.iter().copied());
    split.s_tra.sort_unstable();
}

fn vanilla_split(
    corpus: &Corpus,
    val_fraction: f64,
    tst_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    use rand::seq::SliceRandom;

    let d_tra: BTreeSet<DrugIdx> = corpus.drugs().iter().map(|d| d.idx).collect();
    let mut order: Vec<usize> = (0..corpus.triples().len()).collect();
    let mut rng = crate::rng::stream(seed, "vanilla", &[]);
    order.shuffle(&mut rng);

    let n = order.len();
    let n_val = (n as f64 * val_fraction).floor() as usize;
    let n_tst = (n as f64 * tst_fraction).floor() as usize;
    let n_tra = n - n_val - n_tst;
    let mut s_tra: Vec<usize> = order[..n_tra].to_vec();
    let mut s_val: Vec<usize> = order[n_tra..n_tra + n_val].to_vec();
    let mut s_tst: Vec<usize> = order[n_tra + n_val..].to_vec();
    s_tra.sort_unstable();
    s_val.sort_unstable();
    s_tst.sort_unstable();

    Ok(DatasetSplit {
        mode: SplitMode::Vanilla,
        seed,
        d_tra,
        d_val: BTreeSet::new(),
        d_tst: BTreeSet::new(),
        s_tra,
        s_val,
        s_tst,
    })
}

impl DatasetSplit {
    pub fn to_manifest(&self, corpus: &Corpus) -> SplitManifest {
        let ids = |set: &BTreeSet<DrugIdx>| set.iter().map(|&d| corpus.drug(d).id.clone()).collect();
        let triples = |list: &[usize]| {
            list.iter()
                .map(|&idx| {
                    let t = corpus.triple(idx);
                    ManifestTriple {
                        u: corpus.drug(t.u).id.clone(),
                        i: t.i,
                        v: corpus.drug(t.v).id.clone(),
                        polarity: t.polarity,
                    }
                })
                .collect()
        };
        SplitManifest {
            mode: self.mode,
            seed: self.seed,
            d_tra: ids(&self.d_tra),
            d_val: ids(&self.d_val),
            d_tst: ids(&self.d_tst),
            s_tra: triples(&self.s_tra),
            s_val: triples(&self.s_val),
            s_tst: triples(&self.s_tst),
        }
    }

    pub fn from_manifest(manifest: &SplitManifest, corpus: &Corpus) -> Result<Self, CorpusError> {
        let drug_set = |ids: &[String]| -> Result<BTreeSet<DrugIdx>, CorpusError> {
            ids.iter()
                .map(|id| {
                    corpus
                        .drug_by_id(id)
                        .map(|d| d.idx)
                        .ok_or_else(|| CorpusError::ManifestDrug { id: id.clone() })
                })
                .collect()
        };
        let mut lookup: BTreeMap<(DrugIdx, usize, DrugIdx), Vec<usize>> = BTreeMap::new();
        for (idx, t) in corpus.triples().iter().enumerate() {
            lookup.entry((t.u, t.i, t.v)).or_default().push(idx);
        }
        let mut used: BTreeSet<usize> = BTreeSet::new();
        let mut triple_list = |list: &[ManifestTriple]| -> Result<Vec<usize>, CorpusError> {
            let mut out = Vec::with_capacity(list.len());
            for m in list {
                let missing = || CorpusError::ManifestTriple { u: m.u.clone(), i: m.i, v: m.v.clone() };
                let u = corpus.drug_by_id(&m.u).map(|d| d.idx).ok_or_else(missing)?;
                let v = corpus.drug_by_id(&m.v).map(|d| d.idx).ok_or_else(missing)?;
                let candidates = lookup.get(&(u, m.i, v)).ok_or_else(missing)?;
                let idx = candidates
                    .iter()
                    .copied()
                    .find(|i| !used.contains(i) && corpus.triple(*i).polarity == m.polarity)
                    .ok_or_else(missing)?;
                used.insert(idx);
                out.push(idx);
            }
            out.sort_unstable();
            Ok(out)
        };
        Ok(DatasetSplit {
            mode: manifest.mode,
            seed: manifest.seed,
            d_tra: drug_set(&manifest.d_tra)?,
            d_val: drug_set(&manifest.d_val)?,
            d_tst: drug_set(&manifest.d_tst)?,
            s_tra: triple_list(&manifest.s_tra)?,
            s_val: triple_list(&manifest.s_val)?,
            s_tst: triple_list(&manifest.s_tst)?,
        })
    }
}

/// Token-length histograms over descriptions and full pair prompts.
#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    /// (bucket_start, count) with 64-token buckets; empty buckets omitted.
    pub drug_hist: Vec<(usize, usize)>,
    pub pair_hist: Vec<(usize, usize)>,
    pub drug_max: usize,
    pub drug_mean: f64,
    pub pair_max: usize,
    pub pair_mean: f64,
    pub n_drugs: usize,
    pub n_pairs: usize,
}

pub const STATS_BUCKET: usize = 64;

/// Per-drug description lengths and per-triple full-prompt lengths.
pub fn corpus_stats(corpus: &Corpus, instruction_template: &str) -> StatsReport {
    let drug_lengths: Vec<usize> = corpus
        .drugs()
        .iter()
        .map(|d| d.sentences.iter().map(|s| s.token_count).sum())
        .collect();
    let pair_lengths: Vec<usize> = crate::par::map_ordered(corpus.triples(), |t| {
        let p: Prompt = full_prompt(corpus.drug(t.u), corpus.drug(t.v), instruction_template);
        p.token_length()
    });

    let hist = |lengths: &[usize]| {
        let mut buckets: BTreeMap<usize, usize> = BTreeMap::new();
        for &len in lengths {
            *buckets.entry(len / STATS_BUCKET * STATS_BUCKET).or_default() += 1;
        }
        buckets.into_iter().collect::<Vec<_>>()
    };
    let mean = |lengths: &[usize]| {
        if lengths.is_empty() {
            0.0
        } else {
            lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
        }
    };

    StatsReport {
        drug_hist: hist(&drug_lengths),
        pair_hist: hist(&pair_lengths),
        drug_max: drug_lengths.iter().copied().max().unwrap_or(0),
        drug_mean: mean(&drug_lengths),
        pair_max: pair_lengths.iter().copied().max().unwrap_or(0),
        pair_mean: mean(&pair_lengths),
        n_drugs: drug_lengths.len(),
        n_pairs: pair_lengths.len(),
    }
}

/// Render a histogram as the `bucket_start,count` CSV.
pub fn histogram_csv(hist: &[(usize, usize)]) -> String {
    let mut out = String::from("bucket_start,count\n");
    for (start, count) in hist {
        out.push_str(&format!("{start},{count}\n"));
    }
    out
}
