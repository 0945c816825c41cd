//! Masked feature reconstruction: the self-supervised warm-up for the
//! tabular encoder. Random cells are blanked (numericals to zero, categories
//! to the unknown index) and a small decoder head predicts the originals from
//! the encoding. Loss is charged on masked cells only.

use super::encoder::{linear, TabEncoder, OUTPUT_DIM};
use super::schema::TabularBatch;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real, Tape, Tensor, Var};
use crate::rng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;

/// Which cells were masked, and what the reconstruction targets are.
#[derive(Debug, Clone)]
pub struct MaskInfo {
    /// 0/1 per numerical cell, row-major [n_rows * n_num]
    pub num_mask: Vec<f64>,
    /// per categorical column: (row, original index) for each masked cell
    pub cat_masked: Vec<Vec<(usize, usize)>>,
    pub masked_num_cells: usize,
    pub masked_cat_cells: usize,
}

impl MaskInfo {
    pub fn total(&self) -> usize {
        self.masked_num_cells + self.masked_cat_cells
    }
}

/// Decoder head parameters: one linear map back to the numerical block and
/// one classifier per categorical column.
pub fn init_recon_params<T: Real>(enc: &TabEncoder, seed: u64, store: &mut ParamStore<T>) {
    let linear_init = |name: String, fan_in: usize, fan_out: usize, store: &mut ParamStore<T>| {
        let std = T::from_f64((2.0 / (fan_in + fan_out) as f64).sqrt());
        let wname = format!("{}.w", name);
        let mut r = ChaCha12Rng::seed_from_u64(rng::derive_seed(seed, &format!("init:{}", wname)));
        store.insert(&wname, Tensor::randn(&[fan_in, fan_out], std, &mut r));
        store.insert(&format!("{}.b", name), Tensor::zeros(&[fan_out]));
    };
    if enc.n_num > 0 {
        linear_init("recon.num".into(), OUTPUT_DIM, enc.n_num, store);
    }
    for (name, rows, _) in &enc.cat_cols {
        linear_init(format!("recon.cat.{}", name), OUTPUT_DIM, *rows, store);
    }
}

/// Draws a Bernoulli mask per cell and blanks the masked cells. If nothing
/// gets masked the draw is retried once; a second empty draw is an error.
pub fn apply_mask(
    batch: &TabularBatch,
    mask_rate: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(TabularBatch, MaskInfo)> {
    if !(0.0 < mask_rate && mask_rate < 1.0) {
        return Err(Error::Config(format!(
            "mask_rate must be in (0,1), got {}",
            mask_rate
        )));
    }
    for attempt in 0..2 {
        let (masked, info) = draw_mask(batch, mask_rate, rng);
        if info.total() > 0 {
            return Ok((masked, info));
        }
        log::debug!("mask draw {} hit zero cells, resampling", attempt);
    }
    Err(Error::Data(
        "masking produced zero masked cells twice in a row".into(),
    ))
}

fn draw_mask(batch: &TabularBatch, rate: f64, rng: &mut ChaCha12Rng) -> (TabularBatch, MaskInfo) {
    let mut masked = batch.clone();
    let mut num_mask = vec![0.0; batch.num.len()];
    let mut cat_masked = vec![Vec::new(); batch.n_cat];
    let mut masked_num_cells = 0;
    let mut masked_cat_cells = 0;

    for r in 0..batch.n_rows {
        for j in 0..batch.n_num {
            if rng.gen::<f64>() < rate {
                let at = r * batch.n_num + j;
                num_mask[at] = 1.0;
                masked.num[at] = 0.0;
                masked_num_cells += 1;
            }
        }
        for c in 0..batch.n_cat {
            if rng.gen::<f64>() < rate {
                let at = r * batch.n_cat + c;
                cat_masked[c].push((r, batch.cat[at]));
                masked.cat[at] = 0;
                masked_cat_cells += 1;
            }
        }
    }

    (
        masked,
        MaskInfo {
            num_mask,
            cat_masked,
            masked_num_cells,
            masked_cat_cells,
        },
    )
}

/// Reconstruction loss from the encoding of a masked batch: mean squared
/// error over masked numerical cells plus mean cross-entropy over masked
/// categorical cells, equally weighted.
pub fn recon_loss<T: Real>(
    tape: &mut Tape<T>,
    vars: &BTreeMap<String, Var>,
    enc: &TabEncoder,
    e: Var,
    original: &TabularBatch,
    info: &MaskInfo,
) -> Var {
    assert!(info.total() > 0, "reconstruction loss over zero masked cells");
    let mut terms: Vec<Var> = Vec::new();

    if info.masked_num_cells > 0 {
        let pred = linear(tape, vars, e, "recon.num");
        let target_data: Vec<T> = original.num.iter().map(|&x| T::from_f64(x)).collect();
        let target = Tensor::from_vec(&[original.n_rows, original.n_num], target_data);
        let mask_data: Vec<T> = info.num_mask.iter().map(|&x| T::from_f64(x)).collect();
        let mask = Tensor::from_vec(&[original.n_rows, original.n_num], mask_data);
        let sum = tape.mse_masked_sum(pred, target, mask);
        terms.push(tape.scale(sum, T::from_f64(1.0 / info.masked_num_cells as f64)));
    }

    if info.masked_cat_cells > 0 {
        let mut ce_sum: Option<Var> = None;
        for (ci, (name, _, _)) in enc.cat_cols.iter().enumerate() {
            if info.cat_masked[ci].is_empty() {
                continue;
            }
            let logits = linear(tape, vars, e, &format!("recon.cat.{}", name));
            let part = tape.ce_selected_sum(logits, &info.cat_masked[ci]);
            ce_sum = Some(match ce_sum {
                None => part,
                Some(acc) => tape.add(acc, part),
            });
        }
        let total = ce_sum.unwrap();
        terms.push(tape.scale(total, T::from_f64(1.0 / info.masked_cat_cells as f64)));
    }

    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = tape.add(loss, t);
    }
    loss
}
