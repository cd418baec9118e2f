use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::Gamma;

use crate::error::{Error, Result};

/// Split sample ids across `k` shards with per-class Dirichlet(β·1) shares.
///
/// Samples of each class (in ascending id order) are assigned independently
/// according to that class's share vector. Any shard left empty receives
/// the last sample of the currently largest shard.
pub fn dirichlet_partition(labels: &[usize], k: usize, beta: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::usage("need at least one shard"));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::usage("Dirichlet concentration must be positive"));
    }
    let mut shards = vec![Vec::new(); k];
    if k == 1 {
        shards[0] = (0..labels.len()).collect();
        return Ok(shards);
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = crate::rng::rng_from(seed);
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::usage(e.to_string()))?;
    for class in 0..n_classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let mut shares: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        if shares.iter().sum::<f64>() <= 0.0 {
            // Every draw underflowed; fall back to a single random shard.
            shares = vec![0.0; k];
            shares[members.len() % k] = 1.0;
        }
        let pick = WeightedIndex::new(&shares).map_err(|e| Error::numeric(e.to_string()))?;
        for i in members {
            shards[pick.sample(&mut rng)].push(i);
        }
    }
    for s in 0..k {
        if shards[s].is_empty() {
            let largest = (0..k)
                .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
                .expect("k > 0");
            if shards[largest].len() < 2 {
                return Err(Error::usage("too few samples to give every shard one"));
            }
            let moved = shards[largest].pop().expect("non-empty");
            log::info!("shard {s} empty after partition; moved sample {moved} from shard {largest}");
            shards[s].push(moved);
        }
    }
    for shard in &mut shards {
        shard.sort_unstable();
    }
    Ok(shards)
}
