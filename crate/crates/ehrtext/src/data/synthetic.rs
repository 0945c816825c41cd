//! Synthetic paired data with a known latent alignment.
//!
//! Each pair shares a latent z ~ N(0, I_k). Numericals are a fixed linear
//! map of z plus noise, categoricals are quantile buckets of unit
//! projections of z, notes are topic-word samples weighted by
//! softmax(sharpness * z), and labels are Bernoulli(sigmoid(w'z + b)) per
//! task. Notes deliberately embed dates, numbers, punctuation, and decoy
//! sections so the text preprocessing path is exercised end to end.

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tabular::schema::{Cell, RawTable};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use super::types::{PairedDataset, Provenance};

/// One binary downstream task: label ~ Bernoulli(sigmoid(w'z + bias)).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelTask {
    pub name: String,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_pairs: usize,
    /// latent dimension k
    pub k: usize,
    pub n_num: usize,
    /// how many numerical columns carry signal; the rest are pure noise
    pub n_informative_num: usize,
    pub cat_cardinalities: Vec<usize>,
    /// one vocabulary of letter-only words per latent factor, disjoint
    pub topic_vocabs: Vec<Vec<String>>,
    /// words used only inside dropped decoy sections
    pub decoy_vocab: Vec<String>,
    /// inclusive bounds on content words per note
    pub words_per_note: (usize, usize),
    /// multiplier on z inside the topic softmax; higher = purer notes
    pub topic_sharpness: f64,
    /// noise scale on numerical columns
    pub sigma: f64,
    /// leading informative columns that load only on the last latent
    /// factor; with a small coefficient that factor is faint in the table
    /// while the notes still spell it out, so alignment has something the
    /// table alone gives up reluctantly. 0 restores isotropic loadings.
    pub salient_cols: usize,
    /// loading of each salient column on the last factor
    pub salient_coeff: f64,
    pub tasks: Vec<LabelTask>,
    pub seed: u64,
}

impl SynthConfig {
    /// Four latent factors, 16 numerical columns (6 informative, of which
    /// 3 carry only the last factor at a faint loading), four categorical
    /// columns confined to the leading factors, and two label tasks that
    /// lean on the last factor, with norm 4 and a ~0.35 base rate.
    pub fn standard(n_pairs: usize, seed: u64) -> SynthConfig {
        let task = |name: &str, dir: [f64; 4]| {
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            LabelTask {
                name: name.to_string(),
                weights: dir.iter().map(|v| 4.0 * v / norm).collect(),
                bias: -1.73,
            }
        };
        SynthConfig {
            n_pairs,
            k: 4,
            n_num: 16,
            n_informative_num: 6,
            cat_cardinalities: vec![3, 4, 2, 5],
            topic_vocabs: default_topic_vocabs(4, 40).expect("static vocab"),
            decoy_vocab: decoy_vocab(20),
            words_per_note: (60, 140),
            topic_sharpness: 2.0,
            sigma: 1.0,
            salient_cols: 3,
            salient_coeff: 0.5,
            tasks: vec![
                task("task_a", [0.45, 0.30, -0.25, 0.80]),
                task("task_b", [-0.30, 0.45, 0.35, -0.80]),
            ],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("latent dim k must be >= 1".to_string()));
        }
        if self.n_pairs == 0 {
            return Err(Error::Config("pair count must be >= 1".to_string()));
        }
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise scale must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if self.n_informative_num > self.n_num {
            return Err(Error::Config(format!(
                "{} informative columns exceed {} numerical columns",
                self.n_informative_num, self.n_num
            )));
        }
        if self.salient_cols > self.n_informative_num {
            return Err(Error::Config(format!(
                "{} salient columns exceed {} informative columns",
                self.salient_cols, self.n_informative_num
            )));
        }
        if self.salient_cols > 0 && self.k < 2 {
            return Err(Error::Config(
                "salient columns need at least two latent factors".to_string(),
            ));
        }
        if !self.salient_coeff.is_finite() || self.salient_coeff < 0.0 {
            return Err(Error::Config(format!(
                "salient loading must be finite and >= 0, got {}",
                self.salient_coeff
            )));
        }
        if self.n_num + self.cat_cardinalities.len() == 0 {
            return Err(Error::Config("table would have no columns".to_string()));
        }
        if let Some(c) = self.cat_cardinalities.iter().find(|&&c| c < 2) {
            return Err(Error::Config(format!(
                "categorical cardinality must be >= 2, got {c}"
            )));
        }
        if self.topic_vocabs.len() != self.k {
            return Err(Error::Config(format!(
                "{} topic vocabularies for k={}",
                self.topic_vocabs.len(),
                self.k
            )));
        }
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for (f, vocab) in self.topic_vocabs.iter().enumerate() {
            if vocab.is_empty() {
                return Err(Error::Config(format!("topic vocabulary {f} is empty")));
            }
            for w in vocab {
                check_word(w)?;
                if !seen.insert(w.as_str()) {
                    return Err(Error::Config(format!(
                        "word {w:?} appears in more than one topic vocabulary"
                    )));
                }
            }
        }
        if self.decoy_vocab.is_empty() {
            return Err(Error::Config("decoy vocabulary is empty".to_string()));
        }
        for w in &self.decoy_vocab {
            check_word(w)?;
            if seen.contains(w.as_str()) {
                return Err(Error::Config(format!(
                    "decoy word {w:?} collides with a topic vocabulary"
                )));
            }
        }
        let (lo, hi) = self.words_per_note;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "words_per_note bounds ({lo}, {hi}) invalid"
            )));
        }
        if !self.topic_sharpness.is_finite() || self.topic_sharpness <= 0.0 {
            return Err(Error::Config("topic sharpness must be positive".to_string()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one label task required".to_string()));
        }
        let mut names = BTreeSet::new();
        for t in &self.tasks {
            if t.weights.len() != self.k {
                return Err(Error::Config(format!(
                    "task {:?} has {} weights for k={}",
                    t.name,
                    t.weights.len(),
                    self.k
                )));
            }
            if !names.insert(t.name.as_str()) {
                return Err(Error::Config(format!("duplicate task name {:?}", t.name)));
            }
        }
        Ok(())
    }
}

fn check_word(w: &str) -> Result<()> {
    if w.is_empty() || !w.chars().all(|c| c.is_ascii_lowercase()) {
        return Err(Error::Config(format!(
            "vocabulary word {w:?} must be nonempty lowercase ascii letters"
        )));
    }
    Ok(())
}

const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
const FACTOR_CONSONANTS: [[char; 4]; 4] = [
    ['b', 'd', 'f', 'g'],
    ['j', 'k', 'l', 'm'],
    ['n', 'p', 'r', 's'],
    ['t', 'v', 'w', 'z'],
];
const DECOY_CONSONANTS: [char; 4] = ['q', 'x', 'c', 'h'];

fn words_from_pool(consonants: &[char], count: usize) -> Vec<String> {
    let syllables: Vec<String> = consonants
        .iter()
        .flat_map(|&c| VOWELS.iter().map(move |&v| format!("{c}{v}")))
        .collect();
    let s = syllables.len();
    let total = s * s * s;
    // stride coprime with the combination count, so indices never repeat
    let stride = 211;
    (0..count.min(total))
        .map(|i| {
            let idx = (i * stride) % total;
            format!(
                "{}{}{}",
                syllables[idx / (s * s)],
                syllables[(idx / s) % s],
                syllables[idx % s]
            )
        })
        .collect()
}

/// Disjoint-by-construction vocabularies: each factor draws syllables from
/// its own consonant pool, so no word can appear under two factors.
pub fn default_topic_vocabs(k: usize, words_per_factor: usize) -> Result<Vec<Vec<String>>> {
    if k == 0 || k > FACTOR_CONSONANTS.len() {
        return Err(Error::Config(format!(
            "default vocabularies support 1..={} factors, got {k}",
            FACTOR_CONSONANTS.len()
        )));
    }
    if words_per_factor == 0 {
        return Err(Error::Config("words_per_factor must be >= 1".to_string()));
    }
    Ok((0..k)
        .map(|f| words_from_pool(&FACTOR_CONSONANTS[f], words_per_factor))
        .collect())
}

/// Words reserved for decoy sections; their consonant pool overlaps no
/// topic pool.
pub fn decoy_vocab(count: usize) -> Vec<String> {
    words_from_pool(&DECOY_CONSONANTS, count)
}

/// Lower-tail inverse of the standard normal CDF (Acklam's rational
/// approximation, relative error below 1.2e-9).
fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unit_direction(r: &mut ChaCha12Rng, k: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| standard_normal(r)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Box-Muller; two uniforms per draw keeps the stream layout obvious.
fn standard_normal(r: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = r.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn softmax_scaled(z: &[f64], sharpness: f64) -> Vec<f64> {
    let m = z
        .iter()
        .map(|v| sharpness * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (sharpness * v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn sample_index(r: &mut ChaCha12Rng, weights: &[f64]) -> usize {
    let u: f64 = r.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn random_date(r: &mut ChaCha12Rng) -> String {
    const MON3: [&str; 12] = [
        "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
    ];
    const MONTH: [&str; 12] = [
        "January",
        "February",
        "March",
        "April",
        "May",
        "June",
        "July",
        "August",
        "September",
        "October",
        "November",
        "December",
    ];
    let y = r.gen_range(2015..=2023);
    let m = r.gen_range(1..=12usize);
    let d = r.gen_range(1..=28);
    match r.gen_range(0..4) {
        0 => format!("{y:04}-{m:02}-{d:02}"),
        1 => format!("{m}/{d}/{y}"),
        2 => format!("{d}-{}-{y}", MON3[m - 1]),
        _ => format!("{} {d}, {y}", MONTH[m - 1]),
    }
}

/// Joins words into lines of about nine words, sprinkling commas, a
/// parenthesized word, and terminal periods; all of it is noise the
/// normalizer must remove.
fn wrap_words(r: &mut ChaCha12Rng, words: &[String]) -> String {
    let mut out = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            if i % 9 == 0 {
                out.push('\n');
            } else {
                out.push(' ');
            }
        }
        if r.gen::<f64>() < 0.06 {
            out.push('(');
            out.push_str(w);
            out.push(')');
        } else {
            out.push_str(w);
            if r.gen::<f64>() < 0.12 {
                out.push(',');
            }
        }
    }
    out.push('.');
    out
}

fn build_note(r: &mut ChaCha12Rng, cfg: &SynthConfig, content: &[String]) -> String {
    let split = content.len() * 3 / 5;
    let (summary, course) = content.split_at(split);
    let decoy = |r: &mut ChaCha12Rng, n: usize| -> String {
        (0..n)
            .map(|_| {
                cfg.decoy_vocab
                    .choose(r)
                    .expect("validated nonempty")
                    .clone()
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut note = String::new();
    note.push_str(&format!(
        "Summary: visit {} recorded {}.\n",
        r.gen_range(1..400),
        random_date(r)
    ));
    note.push_str(&wrap_words(r, summary));
    note.push('\n');
    let tech_words = r.gen_range(3..=7);
    note.push_str(&format!("Technique: {}\n", decoy(r, tech_words)));
    if r.gen::<f64>() < 0.5 {
        let extra = r.gen_range(3..=6);
        note.push_str(&decoy(r, extra));
        note.push('\n');
    }
    let instr_words = r.gen_range(4..=8);
    note.push_str(&format!(
        "Discharge Instructions: {} on {}\n",
        decoy(r, instr_words),
        random_date(r)
    ));
    note.push_str(&format!(
        "Course: readings {}/{} noted {}!\n",
        r.gen_range(60..200),
        r.gen_range(40..120),
        random_date(r)
    ));
    note.push_str(&wrap_words(r, course));
    note.push('\n');
    note
}

/// Like [`generate_synthetic`] but also returns each pair's latent vector,
/// for oracle tests that need ground truth.
pub fn generate_synthetic_with_latents(
    cfg: &SynthConfig,
) -> Result<(PairedDataset, Vec<Vec<f64>>)> {
    cfg.validate()?;

    // With salient columns active, every other loading lives in the leading
    // k-1 factors, so the table's only window on the last factor is the
    // faint salient block.
    let lead = if cfg.salient_cols > 0 { cfg.k - 1 } else { cfg.k };
    let mut structure = stream(cfg.seed, "synth:structure");
    let lead_direction = |r: &mut ChaCha12Rng| {
        let mut d = unit_direction(r, lead);
        d.resize(cfg.k, 0.0);
        d
    };
    let a: Vec<Vec<f64>> = (0..cfg.n_num)
        .map(|row| {
            if row < cfg.salient_cols {
                let mut d = vec![0.0; cfg.k];
                d[cfg.k - 1] = cfg.salient_coeff;
                d
            } else if row < cfg.n_informative_num {
                lead_direction(&mut structure)
            } else {
                vec![0.0; cfg.k]
            }
        })
        .collect();
    let cat_dirs: Vec<Vec<f64>> = (0..cfg.cat_cardinalities.len())
        .map(|_| lead_direction(&mut structure))
        .collect();
    let cat_thresholds: Vec<Vec<f64>> = cfg
        .cat_cardinalities
        .iter()
        .map(|&c| {
            (1..c)
                .map(|i| normal_quantile(i as f64 / c as f64))
                .collect()
        })
        .collect();

    let mut columns: Vec<String> = (0..cfg.n_num).map(|j| format!("num_{j:02}")).collect();
    columns.extend((0..cfg.cat_cardinalities.len()).map(|j| format!("cat_{j}")));

    let mut r = stream(cfg.seed, "synth:pairs");
    let mut ids = Vec::with_capacity(cfg.n_pairs);
    let mut rows = Vec::with_capacity(cfg.n_pairs);
    let mut notes = Vec::with_capacity(cfg.n_pairs);
    let mut latents = Vec::with_capacity(cfg.n_pairs);
    let mut labels: BTreeMap<String, Vec<bool>> = cfg
        .tasks
        .iter()
        .map(|t| (t.name.clone(), Vec::with_capacity(cfg.n_pairs)))
        .collect();

    for i in 0..cfg.n_pairs {
        let z: Vec<f64> = (0..cfg.k).map(|_| standard_normal(&mut r)).collect();

        let mut row: Vec<Cell> = Vec::with_capacity(columns.len());
        for a_row in &a {
            let mean: f64 = a_row.iter().zip(&z).map(|(ai, zi)| ai * zi).sum();
            let v = mean + cfg.sigma * standard_normal(&mut r);
            row.push(Cell::Value(format!("{v:.6}")));
        }
        for (dir, thresholds) in cat_dirs.iter().zip(&cat_thresholds) {
            let v: f64 = dir.iter().zip(&z).map(|(d, zi)| d * zi).sum();
            let bucket = thresholds.iter().filter(|&&t| v > t).count();
            let letter = (b'a' + bucket as u8) as char;
            row.push(Cell::Value(letter.to_string()));
        }

        for t in &cfg.tasks {
            let logit: f64 = t.weights.iter().zip(&z).map(|(w, zi)| w * zi).sum::<f64>() + t.bias;
            let y = r.gen::<f64>() < sigmoid(logit);
            labels.get_mut(&t.name).expect("task registered").push(y);
        }

        let weights = softmax_scaled(&z, cfg.topic_sharpness);
        let n_words = r.gen_range(cfg.words_per_note.0..=cfg.words_per_note.1);
        let content: Vec<String> = (0..n_words)
            .map(|_| {
                let f = sample_index(&mut r, &weights);
                cfg.topic_vocabs[f]
                    .choose(&mut r)
                    .expect("validated nonempty")
                    .clone()
            })
            .collect();
        notes.push(build_note(&mut r, cfg, &content));

        ids.push(format!("p{i:05}"));
        rows.push(row);
        latents.push(z);
    }

    let ds = PairedDataset {
        ids,
        table: RawTable { columns, rows },
        notes,
        labels,
        pairing: (0..cfg.n_pairs).collect(),
        provenance: Provenance::Synthetic,
    };
    ds.validate()?;
    Ok((ds, latents))
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<PairedDataset> {
    generate_synthetic_with_latents(cfg).map(|(ds, _)| ds)
}
