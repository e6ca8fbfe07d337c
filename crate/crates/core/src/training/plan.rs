use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random streams used by the training loop; each gets its own generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Shuffle = 1,
    TaggerDropout = 2,
    DiscSample = 3,
    DiscDropout = 4,
    Probe = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generator that is a pure function of its coordinates.
pub fn stream_rng(seed: u64, stream: Stream, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for part in [stream as u64, epoch, index] {
        h = splitmix(h ^ part);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Indices of one monolingual batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Position of the corpus in the list the plan was built from.
    pub corpus: usize,
    pub indices: Vec<usize>,
}

/// The labeled batches of one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
}

impl BatchPlan {
    /// Shuffles each corpus, cuts it into batches and interleaves the corpora
    /// in proportion to their batch counts. Depends only on the arguments.
    pub fn new(sizes: &[usize], batch_size: usize, seed: u64, epoch: u64) -> Self {
        let batch_size = batch_size.max(1);
        let mut keyed = Vec::new();
        for (c, &n) in sizes.iter().enumerate() {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut stream_rng(seed, Stream::Shuffle, epoch, c as u64));
            let chunks: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
            let m = chunks.len();
            for (k, indices) in chunks.into_iter().enumerate() {
                // Fractional position within the corpus' own batch sequence.
                let key = (2 * k + 1) as f64 / (2 * m) as f64;
                keyed.push((key, c, Batch { corpus: c, indices }));
            }
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self {
            batches: keyed.into_iter().map(|(_, _, b)| b).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Number of discriminator steps this plan triggers with the given interval.
    pub fn discriminator_steps(&self, interval: usize) -> usize {
        self.len() / interval.max(1)
    }
}

/// Outcome of reporting one epoch's dev metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

/// Patience-based early stopping on a metric where higher is better.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    best: Option<f64>,
    best_epoch: Option<usize>,
    since: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: None,
            since: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> Observation {
        let improved = self.best.is_none_or(|b| metric > b);
        if improved {
            self.best = Some(metric);
            self.best_epoch = Some(epoch);
            self.since = 0;
        } else {
            self.since += 1;
        }
        Observation {
            improved,
            stop: !improved && self.since >= self.patience,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since
    }
}
