//! Shared 128-d space: projection heads, the symmetric contrastive loss,
//! and retrieval diagnostics.
//!
//! Heads are bias-free single linear maps followed by L2 normalization, so
//! rescaling an input vector cannot move its projection.

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real, Tape, Tensor, Var};
use crate::rng;
use std::collections::BTreeMap;

pub const PROJ_DIM: usize = 128;
pub const DEFAULT_TAU: f64 = 0.1;

/// Inserts the two projection matrices under the `align.` prefix.
pub fn init_projections<T: Real>(
    text_dim: usize,
    ehr_dim: usize,
    seed: u64,
    store: &mut ParamStore<T>,
) {
    let mat = |name: &str, fan_in: usize, store: &mut ParamStore<T>| {
        let std = (2.0 / (fan_in + PROJ_DIM) as f64).sqrt();
        let mut r = rng::stream(seed, &format!("init:{}", name));
        store.insert(name, Tensor::randn(&[fan_in, PROJ_DIM], T::from_f64(std), &mut r));
    };
    mat("align.proj_text.w", text_dim, store);
    mat("align.proj_ehr.w", ehr_dim, store);
}

/// Projects record embeddings `e` and note embeddings `t` into the shared
/// space; every output row has unit L2 norm.
pub fn project<T: Real>(
    tape: &mut Tape<T>,
    vars: &BTreeMap<String, Var>,
    e: Var,
    t: Var,
) -> Result<(Var, Var)> {
    let (er, tr) = (tape.value(e).shape[0], tape.value(t).shape[0]);
    if er != tr {
        return Err(Error::ShapeMismatch(format!(
            "paired batch sides disagree: {} records vs {} notes",
            er, tr
        )));
    }
    let ze = tape.matmul(e, vars["align.proj_ehr.w"]);
    let ze = tape.l2norm_rows(ze)?;
    let zt = tape.matmul(t, vars["align.proj_text.w"]);
    let zt = tape.l2norm_rows(zt)?;
    Ok((ze, zt))
}

/// Symmetric contrastive loss over a batch of projected pairs: cosine
/// similarities scaled by 1/tau, then the sum of the record-to-note and
/// note-to-record mean cross-entropies against the diagonal.
pub fn clip_loss<T: Real>(tape: &mut Tape<T>, z_e: Var, z_t: Var, tau: f64) -> Result<Var> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {}", tau)));
    }
    let sim = tape.matmul_nt(z_e, z_t);
    let scaled = tape.scale(sim, T::from_f64(1.0 / tau));
    Ok(tape.clip_loss(scaled))
}

/// Cosine similarity matrix between the rows of `a` and the rows of `b`,
/// outside any tape. Errors if a row has near-zero norm.
pub fn cosine_similarity_matrix<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1] {
        return Err(Error::ShapeMismatch(format!(
            "cosine inputs {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let unit = |m: &Tensor<T>, side: &str| -> Result<Tensor<T>> {
        let mut out = m.clone();
        for r in 0..out.shape[0] {
            let row = out.row_mut(r);
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if norm.as_f64() < 1e-12 {
                return Err(Error::DegenerateVector(format!(
                    "{} row {} has near-zero norm",
                    side, r
                )));
            }
            let inv = norm.recip();
            for x in row {
                *x *= inv;
            }
        }
        Ok(out)
    };
    let ua = unit(a, "left")?;
    let ub = unit(b, "right")?;
    Ok(ua.matmul_nt(&ub))
}

/// Fraction of pairs whose own similarity ranks in the top k of their row.
/// Ties rank the lower column index first.
pub fn retrieval_recall_at_k<T: Real>(
    z_e: &Tensor<T>,
    z_t: &Tensor<T>,
    k: usize,
) -> Result<f64> {
    let n = z_e.shape[0];
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "recall@k needs 1 <= k <= batch ({} rows), got k={}",
            n, k
        )));
    }
    let s = cosine_similarity_matrix(z_e, z_t)?;
    let mut hits = 0usize;
    for i in 0..n {
        let row = s.row(i);
        let own = row[i];
        let ahead = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > own || (v == own && j < i))
            .count();
        if ahead < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}
