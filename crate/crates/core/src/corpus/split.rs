use rand::seq::SliceRandom;

use crate::error::{KbError, Result};

/// Shuffle with a seeded RNG and cut 80/10/10. Dev and test each take
/// `n / 10` items; the remainder goes to train.
pub fn split<T: Clone>(items: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if items.len() < 10 {
        return Err(KbError::Corpus(format!("need at least 10 examples to split, got {}", items.len())));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut numkit::rng::seeded(seed));
    let tenth = items.len() / 10;
    let n_train = items.len() - 2 * tenth;
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + tenth]),
        pick(&order[n_train + tenth..]),
    ))
}
