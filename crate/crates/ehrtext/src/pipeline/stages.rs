//! Stage runners: masked pretraining, contrastive alignment, fine-tuning,
//! and inference from a fine-tuned checkpoint.

use std::collections::BTreeMap;

use crate::align;
use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::eval::auroc;
use crate::numerics::{AdamW, ParamStore, Tape, Tensor};
use crate::pipeline::checkpoint::Checkpoint;
use crate::pipeline::config::{RunConfig, Stage, TextProfile};
use crate::pipeline::head::{bce_mean, head_logits, init_head_params};
use crate::pipeline::logging::{LogRecord, RunLog};
use crate::pipeline::parallel::clip_batch_grads;
use crate::rng;
use crate::tabular::{
    apply_mask, build_schema, encode_rows, init_recon_params, recon_loss, RawTable, TabEncoder,
    TabularBatch, OUTPUT_DIM,
};
use crate::text::{chunk, clean_note, NoteChunks, TextEncoder, Vocab};

use rand::seq::SliceRandom;

/// Result of a fine-tuning run: the checkpoint captured at the epoch with the
/// best validation AUROC.
pub struct FinetuneOutcome {
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

fn shuffled(n: usize, seed: u64, label: &str) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, label);
    order.shuffle(&mut r);
    order
}

struct Snapshot {
    params: ParamStore<f32>,
    opt_t: u64,
    opt_m: BTreeMap<String, Tensor<f32>>,
    opt_v: BTreeMap<String, Tensor<f32>>,
}

fn snapshot(store: &ParamStore<f32>, opt: &AdamW<f32>) -> Snapshot {
    let (t, m, v) = opt.state();
    Snapshot { params: store.clone(), opt_t: t, opt_m: m.clone(), opt_v: v.clone() }
}

fn finish(
    stage: Stage,
    cfg: &RunConfig,
    schema: crate::tabular::FeatureSchema,
    vocab: Option<Vocab>,
    task: Option<String>,
    snap: Snapshot,
) -> Checkpoint {
    Checkpoint {
        stage,
        config: cfg.clone(),
        schema,
        vocab,
        task,
        params: snap.params,
        opt_t: snap.opt_t,
        opt_m: snap.opt_m,
        opt_v: snap.opt_v,
    }
}

fn is_divergence(err: &Error) -> bool {
    matches!(err, Error::DivergedForward(_) | Error::NonFinite(_))
}

/// Trains the tabular encoder with the masked-reconstruction objective on the
/// rows listed in `pool`. Nothing is frozen at this stage.
pub fn run_masked_pretrain(
    cfg: &RunConfig,
    ds: &PairedDataset,
    pool: &[usize],
    log: &mut RunLog,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::Data("masked pretraining pool is empty".into()));
    }
    let table = ds.subtable(pool);
    let schema = build_schema(&table, &[])?;
    let enc = TabEncoder::from_schema(&schema);
    let batch_all = encode_rows(&schema, &table)?;

    let mut store: ParamStore<f32> = ParamStore::new();
    enc.init_params(cfg.seed, &mut store);
    init_recon_params(&enc, cfg.seed, &mut store);
    let mut opt = AdamW::new(cfg.lr as f32, cfg.weight_decay as f32);
    let mut mask_rng = rng::stream(cfg.seed, "mask");

    let mut last_good: Option<Snapshot> = None;
    'epochs: for epoch in 0..cfg.epochs {
        let order = shuffled(pool.len(), cfg.seed, &format!("epoch:{}", epoch));
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for rows in order.chunks(cfg.batch_size) {
            let original = batch_all.select(rows);
            let (masked, info) = apply_mask(&original, cfg.mask_rate, &mut mask_rng)?;
            if info.total() == 0 {
                continue;
            }
            let mut tape: Tape<f32> = Tape::new();
            let vars = store.leaf_map(&mut tape);
            let step = (|| -> Result<f64> {
                let e = enc.forward(&mut tape, &vars, &masked)?;
                let loss = recon_loss(&mut tape, &vars, &enc, e, &original, &info);
                let value = tape.value(loss).data[0] as f64;
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("loss at epoch {}", epoch)));
                }
                let mut grads = tape.backward(loss);
                let gmap = store.grad_map(&vars, &mut grads);
                opt.step(&mut store, &gmap);
                Ok(value)
            })();
            match step {
                Ok(value) => {
                    epoch_loss += value;
                    n_batches += 1;
                }
                Err(e) if is_divergence(&e) => {
                    log::error!("masked pretraining diverged at epoch {}: {}", epoch, e);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let mean = epoch_loss / n_batches.max(1) as f64;
        log.push(LogRecord { stage: "masked".into(), epoch, loss: mean, metric: None });
        last_good = Some(snapshot(&store, &opt));
    }

    let snap = last_good
        .ok_or_else(|| Error::NonFinite("masked pretraining diverged before completing an epoch".into()))?;
    Ok(finish(Stage::Masked, cfg, schema, None, None, snap))
}

fn embed_pairs(
    tab: &TabEncoder,
    text: &TextEncoder,
    store: &ParamStore<f32>,
    batch: &TabularBatch,
    notes: &[NoteChunks],
    rows: &[usize],
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let mut tape: Tape<f32> = Tape::new();
    let vars = store.leaf_map(&mut tape);
    let sub = batch.select(rows);
    let subnotes: Vec<NoteChunks> = rows.iter().map(|&r| notes[r].clone()).collect();
    let e = tab.forward(&mut tape, &vars, &sub)?;
    let t = text.encode_batch(&mut tape, &vars, &subnotes)?;
    let (ze, zt) = align::project(&mut tape, &vars, e, t)?;
    Ok((tape.value(ze).clone(), tape.value(zt).clone()))
}

/// Aligns the pretrained tabular encoder with a text encoder over paired
/// notes using the contrastive objective. `init` must be a masked-stage
/// checkpoint; its reconstruction heads are discarded and the early tabular
/// layers are frozen, as is the lower half of the text encoder.
pub fn run_contrastive_pretrain(
    cfg: &RunConfig,
    ds: &PairedDataset,
    pool: &[usize],
    init: &Checkpoint,
    log: &mut RunLog,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if init.stage != Stage::Masked {
        return Err(Error::StageMismatch {
            expected: Stage::Masked.to_string(),
            found: init.stage.to_string(),
        });
    }
    if pool.len() < 2 {
        return Err(Error::Data(format!(
            "contrastive pretraining needs at least 2 pairs, got {}",
            pool.len()
        )));
    }

    let schema = init.schema.clone();
    let tab = TabEncoder::from_schema(&schema);
    let table = ds.subtable(pool);
    let batch_all = encode_rows(&schema, &table)?;

    let cleaned: Vec<String> = pool.iter().map(|&r| clean_note(ds.note_for(r))).collect();
    let vocab = Vocab::build(cleaned.iter().map(|s| s.as_str()), 1);
    let text = match cfg.text_profile {
        TextProfile::Standard => TextEncoder::standard(vocab.len()),
        TextProfile::Compact => TextEncoder::compact(vocab.len()),
    };
    let chunks: Vec<NoteChunks> = cleaned.iter().map(|s| chunk(&vocab.encode(s))).collect();

    let mut store: ParamStore<f32> = ParamStore::new();
    for (name, tensor) in init.params.iter() {
        if name.starts_with("tabular.") {
            store.insert(name, tensor.clone());
        }
    }
    text.init_params(cfg.seed, &mut store);
    align::init_projections(text.dim, OUTPUT_DIM, cfg.seed, &mut store);
    for p in TabEncoder::frozen_prefixes() {
        store.freeze_prefix(p);
    }
    for p in text.frozen_prefixes() {
        store.freeze_prefix(&p);
    }

    let order = shuffled(pool.len(), cfg.seed, "cl-holdout");
    let holdout_n = cfg.holdout.min(pool.len() / 2);
    let (train_local, held_local) = order.split_at(pool.len() - holdout_n);
    let train_local = train_local.to_vec();
    let held_local = held_local.to_vec();

    let mut opt = AdamW::new(cfg.lr as f32, cfg.weight_decay as f32);
    let mut last_good: Option<Snapshot> = None;
    'epochs: for epoch in 0..cfg.epochs {
        let mut order = train_local.clone();
        let mut r = rng::stream(cfg.seed, &format!("epoch:{}", epoch));
        order.shuffle(&mut r);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for rows in order.chunks(cfg.batch_size) {
            if rows.len() < 2 {
                continue;
            }
            let sub = batch_all.select(rows);
            let subnotes: Vec<NoteChunks> = rows.iter().map(|&r| chunks[r].clone()).collect();
            match clip_batch_grads(cfg.data_parallel, &tab, &text, &store, &sub, &subnotes, cfg.tau)
            {
                Ok((value, gmap)) => {
                    opt.step(&mut store, &gmap);
                    epoch_loss += value;
                    n_batches += 1;
                }
                Err(e) if is_divergence(&e) => {
                    log::error!("contrastive pretraining diverged at epoch {}: {}", epoch, e);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let mean = epoch_loss / n_batches.max(1) as f64;
        let metric = if held_local.len() >= 2 {
            let (ze, zt) = embed_pairs(&tab, &text, &store, &batch_all, &chunks, &held_local)?;
            Some(align::retrieval_recall_at_k(&ze, &zt, 1)?)
        } else {
            None
        };
        log.push(LogRecord { stage: "contrastive".into(), epoch, loss: mean, metric });
        last_good = Some(snapshot(&store, &opt));
    }

    let snap = last_good.ok_or_else(|| {
        Error::NonFinite("contrastive pretraining diverged before completing an epoch".into())
    })?;
    Ok(finish(Stage::Contrastive, cfg, schema, Some(vocab), None, snap))
}

fn scores_for(
    tab: &TabEncoder,
    store: &ParamStore<f32>,
    batch: &TabularBatch,
) -> Result<Vec<f64>> {
    let mut tape: Tape<f32> = Tape::new();
    let vars = store.leaf_map(&mut tape);
    let e = tab.forward(&mut tape, &vars, batch)?;
    let logits = head_logits(&mut tape, &vars, e);
    let probs = tape.sigmoid(logits);
    let out: Vec<f64> = tape.value(probs).data.iter().map(|&v| v as f64).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction produced a non-finite probability".into()));
    }
    Ok(out)
}

/// Fine-tunes a classification head (and the unfrozen upper tabular layers)
/// on `task`, selecting the epoch with the best validation AUROC.
pub fn run_finetune(
    cfg: &RunConfig,
    ds: &PairedDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    init: &Checkpoint,
    task: &str,
    log: &mut RunLog,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if init.stage == Stage::Finetune {
        return Err(Error::StageMismatch {
            expected: "masked or contrastive".into(),
            found: init.stage.to_string(),
        });
    }
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Data("fine-tuning needs non-empty train and validation sets".into()));
    }
    let all_labels = ds.labels_for(task)?;
    let train_labels: Vec<bool> = train_idx.iter().map(|&r| all_labels[r]).collect();
    let val_labels: Vec<bool> = val_idx.iter().map(|&r| all_labels[r]).collect();
    for (name, labels) in [("train", &train_labels), ("validation", &val_labels)] {
        let pos = labels.iter().filter(|&&b| b).count();
        if pos == 0 || pos == labels.len() {
            return Err(Error::UndefinedAuc(format!(
                "{} split for task {:?} has a single class",
                name, task
            )));
        }
    }

    let schema = init.schema.clone();
    let tab = TabEncoder::from_schema(&schema);
    let train_batch = encode_rows(&schema, &ds.subtable(train_idx))?;
    let val_batch = encode_rows(&schema, &ds.subtable(val_idx))?;

    let mut store: ParamStore<f32> = ParamStore::new();
    for (name, tensor) in init.params.iter() {
        if name.starts_with("tabular.") {
            store.insert(name, tensor.clone());
        }
    }
    init_head_params(cfg.seed, &mut store);
    for p in TabEncoder::frozen_prefixes() {
        store.freeze_prefix(p);
    }

    let mut opt = AdamW::new(cfg.lr as f32, cfg.weight_decay as f32);
    let mut best: Option<(f64, usize, Snapshot)> = None;
    'epochs: for epoch in 0..cfg.epochs {
        let order = shuffled(train_idx.len(), cfg.seed, &format!("epoch:{}", epoch));
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for rows in order.chunks(cfg.batch_size) {
            let sub = train_batch.select(rows);
            let y: Vec<bool> = rows.iter().map(|&r| train_labels[r]).collect();
            let mut tape: Tape<f32> = Tape::new();
            let vars = store.leaf_map(&mut tape);
            let step = (|| -> Result<f64> {
                let e = tab.forward(&mut tape, &vars, &sub)?;
                let logits = head_logits(&mut tape, &vars, e);
                let loss = bce_mean(&mut tape, logits, &y);
                let value = tape.value(loss).data[0] as f64;
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("loss at epoch {}", epoch)));
                }
                let mut grads = tape.backward(loss);
                let gmap = store.grad_map(&vars, &mut grads);
                opt.step(&mut store, &gmap);
                Ok(value)
            })();
            match step {
                Ok(value) => {
                    epoch_loss += value;
                    n_batches += 1;
                }
                Err(e) if is_divergence(&e) => {
                    log::error!("fine-tuning diverged at epoch {}: {}", epoch, e);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let mean = epoch_loss / n_batches.max(1) as f64;
        let val_scores = scores_for(&tab, &store, &val_batch)?;
        let val_auc = auroc(&val_scores, &val_labels)?;
        log.push(LogRecord {
            stage: "finetune".into(),
            epoch,
            loss: mean,
            metric: Some(val_auc),
        });
        if best.as_ref().map_or(true, |(b, _, _)| val_auc > *b) {
            best = Some((val_auc, epoch, snapshot(&store, &opt)));
        }
    }

    let (best_val_auc, best_epoch, snap) = best.ok_or_else(|| {
        Error::NonFinite("fine-tuning diverged before completing an epoch".into())
    })?;
    let checkpoint = finish(
        Stage::Finetune,
        cfg,
        schema,
        init.vocab.clone(),
        Some(task.to_string()),
        snap,
    );
    Ok(FinetuneOutcome { checkpoint, best_epoch, best_val_auc })
}

/// Scores every row of `table` with a fine-tuned checkpoint, returning one
/// probability per row.
pub fn predict(ckpt: &Checkpoint, table: &RawTable) -> Result<Vec<f64>> {
    if ckpt.stage != Stage::Finetune {
        return Err(Error::StageMismatch {
            expected: Stage::Finetune.to_string(),
            found: ckpt.stage.to_string(),
        });
    }
    let tab = TabEncoder::from_schema(&ckpt.schema);
    let batch = encode_rows(&ckpt.schema, table)?;
    scores_for(&tab, &ckpt.params, &batch)
}
