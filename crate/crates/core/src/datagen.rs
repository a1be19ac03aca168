//! Synthetic Gaussian-blob data and non-IID device partitions.
//!
//! Three label-skew regimes are supported: every device holds a single
//! class, every device holds two classes in equal shares, or each class is
//! spread over devices according to a symmetric Dirichlet draw.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{Batch, DenseMatrix};

/// Half-width of the hypercube cluster means are drawn from.
pub const CENTER_BOX: f64 = 1.0;

const MEAN_PLACEMENT_ATTEMPTS: usize = 1000;

/// Labeled samples with `class_count` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(inputs: DenseMatrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.inputs.cols()
    }

    /// Sample indices grouped by label.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            inputs: self.inputs.clone(),
            labels: self.labels.clone(),
        }
    }

    fn take(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }
}

/// Parameters of [`make_blobs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub dims: usize,
    pub per_class: usize,
    /// Per-coordinate standard deviation around each cluster mean.
    pub spread: f64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("classes", "need at least 2 classes"));
        }
        if self.dims < 2 {
            return Err(Error::config("dims", "need at least 2 input dimensions"));
        }
        if self.per_class < 1 {
            return Err(Error::config("per_class", "need at least 1 sample per class"));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::config(
                "spread",
                format!("{} must be positive", self.spread),
            ));
        }
        Ok(())
    }
}

/// One isotropic Gaussian cluster per class; samples are stored class by class.
///
/// Means are drawn uniformly from `[-CENTER_BOX, CENTER_BOX]^d`, redrawing a
/// mean that lands closer than `2·spread` to an earlier one (bounded retries).
pub fn make_blobs(spec: &BlobSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_dist_sq = (2.0 * spec.spread).powi(2);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        let mut candidate = Vec::new();
        for _ in 0..MEAN_PLACEMENT_ATTEMPTS {
            candidate = (0..spec.dims)
                .map(|_| rng.random_range(-CENTER_BOX..CENTER_BOX))
                .collect();
            let clear = means.iter().all(|m| {
                m.iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    >= min_dist_sq
            });
            if clear {
                break;
            }
        }
        means.push(candidate);
    }

    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * spec.dims);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..spec.per_class {
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + spec.spread * z);
            }
            labels.push(class);
        }
    }
    Dataset::new(DenseMatrix::new(n, spec.dims, data)?, labels, spec.classes)
}

/// Stratified split: `round(test_fraction · n_class)` samples of every class
/// go to the test set, the rest to training. Returns `(train, test)`.
pub fn train_test_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut idx in dataset.class_indices() {
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * test_fraction).round() as usize;
        let (t, r) = idx.split_at(k);
        test.extend_from_slice(t);
        train.extend_from_slice(r);
    }
    train.sort_unstable();
    test.sort_unstable();
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument("split leaves an empty side".into()));
    }
    Ok((dataset.take(&train), dataset.take(&test)))
}

/// Label-skew regime of a partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeterogeneityCase {
    SingleLabel,
    TwoLabel,
    Dirichlet { beta: f64 },
}

impl HeterogeneityCase {
    pub fn name(&self) -> &'static str {
        match self {
            HeterogeneityCase::SingleLabel => "single_label",
            HeterogeneityCase::TwoLabel => "two_label",
            HeterogeneityCase::Dirichlet { .. } => "dirichlet",
        }
    }
}

/// Case name without its parameter; `beta` is configured separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    SingleLabel,
    TwoLabel,
    Dirichlet,
}

impl FromStr for CaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_label" | "case1" | "1" => Ok(CaseKind::SingleLabel),
            "two_label" | "case2" | "2" => Ok(CaseKind::TwoLabel),
            "dirichlet" | "case3" | "3" => Ok(CaseKind::Dirichlet),
            other => Err(Error::config(
                "case",
                format!("unknown case `{other}` (single_label, two_label, dirichlet)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub case: HeterogeneityCase,
    pub device_count: usize,
    pub seed: u64,
}

/// Disjoint per-device index lists into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn device_count(&self) -> usize {
        self.assignments.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn used_count(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    fn check_non_empty(self) -> Result<Self> {
        if let Some(k) = self.assignments.iter().position(Vec::is_empty) {
            return Err(Error::InvalidArgument(format!(
                "device {k} received no samples; use fewer devices or more data"
            )));
        }
        Ok(self)
    }
}

pub fn partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    match spec.case {
        HeterogeneityCase::SingleLabel => partition_single_label(dataset, spec.device_count, spec.seed),
        HeterogeneityCase::TwoLabel => partition_two_label(dataset, spec.device_count, spec.seed),
        HeterogeneityCase::Dirichlet { beta } => {
            partition_dirichlet(dataset, spec.device_count, beta, spec.seed)
        }
    }
}

/// Splits `items` into `parts` contiguous chunks whose sizes differ by at most one.
fn deal_evenly(items: &[usize], parts: usize) -> Vec<&[usize]> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(&items[start..start + len]);
        start += len;
    }
    out
}

/// Device `k` gets class `k mod c`; each class is dealt evenly over its devices.
pub fn partition_single_label(dataset: &Dataset, device_count: usize, seed: u64) -> Result<Partition> {
    if device_count < 1 {
        return Err(Error::InvalidArgument("need at least one device".into()));
    }
    let c = dataset.class_count;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![Vec::new(); device_count];
    for (class, mut idx) in dataset.class_indices().into_iter().enumerate() {
        idx.shuffle(&mut rng);
        let holders: Vec<usize> = (class..device_count).step_by(c).collect();
        if holders.is_empty() {
            continue;
        }
        for (&device, chunk) in holders.iter().zip(deal_evenly(&idx, holders.len())) {
            assignments[device].extend_from_slice(chunk);
        }
    }
    Partition { assignments }.check_non_empty()
}

/// Device `k` gets classes `π[k mod c]` and `π[(k+1) mod c]` for a seeded
/// permutation `π`, with the same number of samples of each.
pub fn partition_two_label(dataset: &Dataset, device_count: usize, seed: u64) -> Result<Partition> {
    if device_count < 1 {
        return Err(Error::InvalidArgument("need at least one device".into()));
    }
    let c = dataset.class_count;
    if c < 2 {
        return Err(Error::InvalidArgument(
            "two-label partition needs at least 2 classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..c).collect();
    perm.shuffle(&mut rng);
    let pairs: Vec<[usize; 2]> = (0..device_count)
        .map(|k| [perm[k % c], perm[(k + 1) % c]])
        .collect();

    let mut holders = vec![Vec::new(); c];
    for (k, pair) in pairs.iter().enumerate() {
        for &class in pair {
            holders[class].push(k);
        }
    }
    let mut by_class = dataset.class_indices();
    for idx in &mut by_class {
        idx.shuffle(&mut rng);
    }
    let quota = (0..c)
        .filter(|&j| !holders[j].is_empty())
        .map(|j| by_class[j].len() / holders[j].len())
        .min()
        .unwrap_or(0);
    if quota == 0 {
        return Err(Error::InvalidArgument(
            "too few samples per class to give every device both of its labels".into(),
        ));
    }

    let mut assignments = vec![Vec::new(); device_count];
    for class in 0..c {
        for (slot, &device) in holders[class].iter().enumerate() {
            assignments[device].extend_from_slice(&by_class[class][slot * quota..(slot + 1) * quota]);
        }
    }
    Partition { assignments }.check_non_empty()
}

/// Integer counts summing to `total`, proportional to `weights`, by
/// largest-remainder rounding (ties go to the lower index).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet_draw<R: Rng + ?Sized>(beta: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(beta, 1.0).expect("beta validated positive");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter().map(|g| g / sum).collect()
    } else {
        // every gamma underflowed: all mass on one device
        let mut out = vec![0.0; n];
        out[rng.random_range(0..n)] = 1.0;
        out
    }
}

/// Per class, a `Dirichlet(beta, …, beta)` draw over devices sets each
/// device's share of that class. Devices left empty afterwards each take one
/// random sample from the currently largest device.
pub fn partition_dirichlet(
    dataset: &Dataset,
    device_count: usize,
    beta: f64,
    seed: u64,
) -> Result<Partition> {
    if device_count < 1 {
        return Err(Error::InvalidArgument("need at least one device".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::config("beta", format!("{beta} must be positive")));
    }
    if dataset.len() < device_count {
        return Err(Error::InsufficientDevices {
            needed: device_count,
            available: dataset.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![Vec::new(); device_count];
    for mut idx in dataset.class_indices() {
        idx.shuffle(&mut rng);
        let shares = dirichlet_draw(beta, device_count, &mut rng);
        let counts = largest_remainder(&shares, idx.len());
        let mut start = 0;
        for (device, &count) in counts.iter().enumerate() {
            assignments[device].extend_from_slice(&idx[start..start + count]);
            start += count;
        }
    }

    while let Some(empty) = assignments.iter().position(Vec::is_empty) {
        let donor = (0..device_count)
            .max_by(|&a, &b| assignments[a].len().cmp(&assignments[b].len()).then(b.cmp(&a)))
            .expect("at least one device");
        let pick = rng.random_range(0..assignments[donor].len());
        let sample = assignments[donor].swap_remove(pick);
        assignments[empty].push(sample);
    }
    Partition { assignments }.check_non_empty()
}

/// Per-device class histogram (`N × c`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionStats {
    pub counts: Vec<Vec<usize>>,
}

pub fn partition_stats(partition: &Partition, dataset: &Dataset) -> PartitionStats {
    let counts = partition
        .assignments
        .iter()
        .map(|idx| {
            let mut row = vec![0; dataset.class_count];
            for &i in idx {
                row[dataset.labels[i]] += 1;
            }
            row
        })
        .collect();
    PartitionStats { counts }
}

impl PartitionStats {
    /// CSV with header `device,class_0,...,class_{c-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let classes = self.counts.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["device".to_string()];
        header.extend((0..classes).map(|j| format!("class_{j}")));
        w.write_record(&header)?;
        for (device, row) in self.counts.iter().enumerate() {
            let mut record = vec![device.to_string()];
            record.extend(row.iter().map(usize::to_string));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(file).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
    }
}
