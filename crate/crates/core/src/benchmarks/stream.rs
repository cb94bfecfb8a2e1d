//! Fixed pixel permutations, one per task.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskStream {
    pub seed: u64,
    pub permutations: Vec<Vec<usize>>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.permutations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutations.is_empty()
    }

    pub fn task(&self, t: usize) -> &[usize] {
        &self.permutations[t]
    }
}

/// `tasks` shuffled permutations of `0..width` from the permutation stream
/// of `seed`. Task 0 is shuffled too.
pub fn permuted_stream(seed: u64, tasks: usize, width: usize) -> Result<TaskStream> {
    if tasks == 0 {
        return Err(Error::Config(
            "a task stream needs at least one task".into(),
        ));
    }
    let mut rng = rng::stream(seed, Stream::Permutation);
    let permutations = (0..tasks)
        .map(|_| {
            let mut p: Vec<usize> = (0..width).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    Ok(TaskStream { seed, permutations })
}

/// `out[j] = x[perm[j]]`
pub fn apply_permutation<T: Copy>(x: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&j| x[j]).collect()
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (j, &p) in perm.iter().enumerate() {
        inv[p] = j;
    }
    inv
}
