use super::real::Real;
use crate::error::{Error, Result};

fn check<T>(logits: &[T], ids: &[usize], mask: &[u8], vocab: usize) -> Result<usize> {
    if vocab == 0 || logits.len() != ids.len() * vocab {
        return Err(Error::LengthMismatch(logits.len(), ids.len() * vocab));
    }
    if mask.len() != ids.len() {
        return Err(Error::LengthMismatch(mask.len(), ids.len()));
    }
    let n = mask.iter().skip(1).filter(|&&m| m != 0).count();
    if n == 0 {
        return Err(Error::AllMasked);
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
        return Err(Error::IdOutOfRange { id, vocab_size: vocab });
    }
    Ok(n)
}

/// `-log softmax(row)[target]`, computed stably.
pub fn nll<T: Real>(row: &[T], target: usize) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
    lse - row[target]
}

/// Mean over supervised positions `pos ≥ 1` of `-log p(ids[pos] | ids[..pos])`,
/// where the prediction for `pos` is read from logit row `pos - 1`.
/// A mask bit at position 0 has nothing to predict it and is ignored.
pub fn xent_loss<T: Real>(logits: &[T], ids: &[usize], mask: &[u8], vocab: usize) -> Result<T> {
    let n = check(logits, ids, mask, vocab)?;
    let mut total = T::zero();
    for pos in 1..ids.len() {
        if mask[pos] != 0 {
            total += nll(&logits[(pos - 1) * vocab..pos * vocab], ids[pos]);
        }
    }
    Ok(total / T::of(n as f64))
}

/// Loss and its gradient w.r.t. the logits, scaled by `weight`.
pub fn xent_loss_grad<T: Real>(
    logits: &[T],
    ids: &[usize],
    mask: &[u8],
    vocab: usize,
    weight: T,
) -> Result<(T, Vec<T>)> {
    let n = check(logits, ids, mask, vocab)?;
    let inv_n = T::one() / T::of(n as f64);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for pos in 1..ids.len() {
        if mask[pos] == 0 {
            continue;
        }
        let row = &logits[(pos - 1) * vocab..pos * vocab];
        total += nll(row, ids[pos]);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let g = &mut grad[(pos - 1) * vocab..pos * vocab];
        let mut sum = T::zero();
        for (gi, &x) in g.iter_mut().zip(row) {
            *gi = (x - max).exp();
            sum += *gi;
        }
        let scale = weight * inv_n / sum;
        for gi in g.iter_mut() {
            *gi *= scale;
        }
        g[ids[pos]] -= weight * inv_n;
    }
    Ok((total * inv_n, grad))
}
