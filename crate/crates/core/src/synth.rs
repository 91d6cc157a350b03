//! Seeded synthetic corpora with controllable signal placement.
//!
//! Every patch carries two hidden bits. `s` lives in the learned space: it
//! shifts the first coordinate of the patched embedding (`+1.5` or `-1.5`)
//! and picks the identifier vocabulary of the diff. `f` lives in the
//! engineered space: `f = 1` wraps a call in a new `if` block, `f = 0`
//! changes a numeric constant. The label is `s`, `f` or `s xor f`,
//! depending on the mode.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label, PatchRecord};
use crate::embed::EmbeddingPair;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    /// Label = learned-space bit.
    Separable,
    /// Label = engineered flag.
    Engineered,
    /// Label = learned bit xor engineered flag.
    Xor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub mode: SynthMode,
    pub patches: usize,
    pub bugs: usize,
    /// Dimension of the emitted synthetic embeddings.
    pub dim: usize,
    /// Standard deviation of the embedding noise.
    pub noise: f64,
    /// Probability that each hidden bit is set. Away from 0.5 each bit alone
    /// carries some marginal signal about an XOR label.
    pub bit_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            mode: SynthMode::Separable,
            patches: 200,
            bugs: 40,
            dim: 8,
            noise: 0.3,
            bit_rate: 0.5,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenBits {
    pub learned: bool,
    pub engineered: bool,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub embeddings: Vec<EmbeddingPair>,
    pub bits: Vec<HiddenBits>,
}

const VOCAB_A: [&str; 4] = ["alpha", "apex", "axis", "amber"];
const VOCAB_B: [&str; 4] = ["bravo", "basil", "birch", "bison"];
const TOOLS: [&str; 4] = ["developer", "kPAR", "TBar", "jGenProg"];
const CALLS: [&str; 3] = ["update", "flush", "emit"];

fn diff_for(index: usize, s: bool, f: bool, r: &mut rng::Rng) -> String {
    let vocab = if s { &VOCAB_A } else { &VOCAB_B };
    let var = vocab.choose(r).expect("vocab");
    let source = vocab.choose(r).expect("vocab");
    let call = CALLS.choose(r).expect("calls");
    let n: u32 = r.gen_range(1..100);
    let m: u32 = r.gen_range(1..100);
    let line = 10 + r.gen_range(0..200);
    let mut d = format!("--- a/src/Synth{index}.java\n+++ b/src/Synth{index}.java\n");
    if f {
        d += &format!(
            "@@ -{line},3 +{line},5 @@\n int {var} = {source}({n});\n-{call}({var});\n+if ({var} > {m}) {{\n+    {call}({var});\n+}}\n return {var};\n"
        );
    } else {
        let m2 = m + r.gen_range(1..50);
        d += &format!(
            "@@ -{line},3 +{line},3 @@\n int {var} = {source}({n});\n-{call}({var}, {m});\n+{call}({var}, {m2});\n return {var};\n"
        );
    }
    d
}

pub fn generate(config: &SynthConfig) -> SynthCorpus {
    let mut r = rng::seeded(config.seed);
    let bugs = config.bugs.max(1);
    let mut records = Vec::with_capacity(config.patches);
    let mut embeddings = Vec::with_capacity(config.patches);
    let mut bits = Vec::with_capacity(config.patches);
    for i in 0..config.patches {
        let rate = config.bit_rate.clamp(0.0, 1.0);
        let s: bool = r.gen_bool(rate);
        let f: bool = r.gen_bool(rate);
        let label = match config.mode {
            SynthMode::Separable => s,
            SynthMode::Engineered => f,
            SynthMode::Xor => s ^ f,
        };
        records.push(PatchRecord {
            patch_id: format!("synth-{i:04}"),
            bug_id: format!("Synth-{}", i % bugs + 1),
            project: "Synth".to_string(),
            tool: TOOLS[i % TOOLS.len()].to_string(),
            label: if label {
                Label::Correct
            } else {
                Label::Incorrect
            },
            diff_text: diff_for(i, s, f, &mut r),
        });
        let dim = config.dim.max(1);
        let buggy: Vec<f64> = (0..dim).map(|_| rng::normal(&mut r)).collect();
        let mut patched: Vec<f64> = buggy
            .iter()
            .map(|b| b + config.noise * rng::normal(&mut r))
            .collect();
        patched[0] += if s { 1.5 } else { -1.5 };
        embeddings.push(EmbeddingPair {
            patch_id: format!("synth-{i:04}"),
            buggy_vec: buggy,
            patched_vec: patched,
            provider: "synthetic".to_string(),
        });
        bits.push(HiddenBits {
            learned: s,
            engineered: f,
        });
    }
    let (corpus, _) = Corpus::from_records(
        records,
        format!("synthetic mode={:?} seed={}", config.mode, config.seed).to_lowercase(),
    );
    SynthCorpus {
        corpus,
        embeddings,
        bits,
    }
}
