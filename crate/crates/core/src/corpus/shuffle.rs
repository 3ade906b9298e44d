use super::{Corpus, CorpusError, Result, Sample};
use crate::rng::Rng;

/// Sampled subset whose outputs were re-paired with other samples' inputs.
///
/// Sample `i` pairs the input of `base_ids[i]` with the output of
/// `base_ids[permutation[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffledCorpus {
    pub base_ids: Vec<String>,
    pub permutation: Vec<usize>,
    pub samples: Vec<Sample>,
}

impl ShuffledCorpus {
    pub fn from_parts(
        base_ids: Vec<String>,
        permutation: Vec<usize>,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let n = base_ids.len();
        if permutation.len() != n || samples.len() != n {
            return Err(CorpusError::Shuffle(format!(
                "length mismatch: {n} base ids, {} permutation entries, {} samples",
                permutation.len(),
                samples.len()
            )));
        }
        let mut hit = vec![false; n];
        for (i, &p) in permutation.iter().enumerate() {
            if p >= n || std::mem::replace(&mut hit[p], true) {
                return Err(CorpusError::Shuffle(
                    "permutation is not a bijection".into(),
                ));
            }
            if n >= 2 && p == i {
                return Err(CorpusError::Shuffle(format!(
                    "permutation has a fixed point at {i}"
                )));
            }
        }
        Ok(Self {
            base_ids,
            permutation,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Number of samples drawn for a given ratio, tolerant of float noise
/// such as `0.01 * 10000`.
pub(crate) fn selection_size(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Uniform permutation with no fixed points, by rejection.
fn derangement(n: usize, rng: &mut Rng) -> Vec<usize> {
    loop {
        let mut p: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut p);
        if p.iter().enumerate().all(|(i, &v)| i != v) {
            return p;
        }
    }
}

/// Samples `ceil(ratio * N)` items uniformly and re-pairs their outputs by
/// a random derangement. Role spans are dropped: they described the
/// original pairing.
pub fn shuffle_outputs(corpus: &Corpus, ratio: f64, seed: u64) -> Result<ShuffledCorpus> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(CorpusError::Shuffle(format!(
            "ratio {ratio} outside (0, 1]"
        )));
    }
    let n_total = corpus.len();
    let n = selection_size(ratio, n_total).min(n_total);
    if n < 2 {
        return Err(CorpusError::Shuffle(format!(
            "need at least 2 selected samples to derange, got {n} (N = {n_total}, ratio = {ratio})"
        )));
    }
    let mut rng = Rng::derive(seed, "shuffle");
    let mut picked = rng.sample_indices(n_total, n);
    picked.sort_unstable();
    let permutation = derangement(n, &mut rng);

    let base: Vec<&Sample> = picked.iter().map(|&i| &corpus.samples[i]).collect();
    let base_ids: Vec<String> = base.iter().map(|s| s.id.clone()).collect();
    let samples = (0..n)
        .map(|i| {
            let partner = base[permutation[i]];
            Sample {
                id: format!("{}~{}", base[i].id, partner.id),
                input: base[i].input.clone(),
                output: partner.output.clone(),
                role_spans: None,
            }
        })
        .collect();
    ShuffledCorpus::from_parts(base_ids, permutation, samples)
}
