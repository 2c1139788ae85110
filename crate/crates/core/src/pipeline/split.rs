use rand::seq::SliceRandom;

use crate::corpus::Conversation;
use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// Conversation indices of each split.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split sizes by largest remainder, each at least one.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    if n < 3 {
        return Err(Error::Data(format!("{n} conversations cannot fill three splits")));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| ((e + 1e-9).floor() as usize).max(1)).collect();
    while sizes.iter().sum::<usize>() > n {
        let i = (0..3).filter(|&i| sizes[i] > 1).max_by(|&a, &b| {
            (sizes[a] as f64 - exact[a]).total_cmp(&(sizes[b] as f64 - exact[b]))
        });
        sizes[i.expect("n >= 3")] -= 1;
    }
    while sizes.iter().sum::<usize>() < n {
        let i = (0..3)
            .max_by(|&a, &b| (exact[a] - sizes[a] as f64).total_cmp(&(exact[b] - sizes[b] as f64)).then(b.cmp(&a)))
            .expect("three splits");
        sizes[i] += 1;
    }
    Ok([sizes[0], sizes[1], sizes[2]])
}

/// Shuffles conversations under `seed` and cuts them into train / valid / test.
pub fn split_corpus(conversations: &[Conversation], ratios: [f64; 3], seed: u64) -> Result<Split> {
    let [a, b, _] = split_sizes(conversations.len(), ratios)?;
    let mut order: Vec<usize> = (0..conversations.len()).collect();
    order.shuffle(&mut derive_rng(seed, &[0x5B]));
    let mut s = Split { train: order[..a].to_vec(), valid: order[a..a + b].to_vec(), test: order[a + b..].to_vec() };
    s.train.sort_unstable();
    s.valid.sort_unstable();
    s.test.sort_unstable();
    Ok(s)
}
