//! Data ingestion: IDX parsing, binary-task construction, per-agent
//! partitioning, the agent-corruption scenario and synthetic Gaussian
//! sources with known likelihood ratios.
//!
//! Everything here is deterministic given its inputs and a seed.

use rand::Rng;

use crate::error::{Result, SmlError};
use crate::seed;

pub type Label = i8;

/// Feature rows plus labels in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

impl LabeledDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(SmlError::Data(format!(
                "need matching nonempty features/labels, got {}/{}",
                features.len(),
                labels.len()
            )));
        }
        let dim = features[0].len();
        for row in &features {
            if row.len() != dim {
                return Err(SmlError::Shape("ragged feature rows".into()));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(SmlError::Data("non-finite feature entry".into()));
            }
        }
        if labels.iter().any(|&l| l != 1 && l != -1) {
            return Err(SmlError::Data("labels must be -1 or +1".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    /// Rows of the given class.
    pub fn class_features(&self, class: Label) -> Vec<&Vec<f64>> {
        self.features
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == class)
            .map(|(f, _)| f)
            .collect()
    }
}

pub const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
pub const IDX_MAGIC_LABELS: u32 = 0x0000_0801;

/// Raw IDX tensor: big-endian dims header plus row-major u8 payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(SmlError::IdxTruncated { expected: 4, got: bytes.len() });
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let ndims = match magic {
        IDX_MAGIC_IMAGES => 3,
        IDX_MAGIC_LABELS => 1,
        _ => return Err(SmlError::IdxBadMagic { magic }),
    };
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(SmlError::IdxTruncated { expected: header, got: bytes.len() });
    }
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let off = 4 + 4 * d;
        dims.push(u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(SmlError::IdxDimOverflow)?;
    let expected = header
        .checked_add(count)
        .ok_or(SmlError::IdxDimOverflow)?;
    if bytes.len() != expected {
        return Err(SmlError::IdxTruncated { expected, got: bytes.len() });
    }
    Ok(IdxTensor { magic, dims, payload: bytes[header..].to_vec() })
}

pub fn serialize_idx(t: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * t.dims.len() + t.payload.len());
    out.extend_from_slice(&t.magic.to_be_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&t.payload);
    out
}

/// Default pixel normalization: scale into [0, 1] so the Lemma-style input
/// bound holds with c = 1.
pub const DEFAULT_PIXEL_SCALE: f64 = 1.0 / 255.0;

/// Keep only two digits, flatten images, map `digit_pos` to +1 and
/// `digit_neg` to -1, and scale pixels by `scale`.
pub fn build_binary_task(
    images: &IdxTensor,
    labels: &IdxTensor,
    digit_neg: u8,
    digit_pos: u8,
    scale: f64,
) -> Result<LabeledDataset> {
    if images.magic != IDX_MAGIC_IMAGES || labels.magic != IDX_MAGIC_LABELS {
        return Err(SmlError::Data("expected an image tensor and a label vector".into()));
    }
    if images.dims[0] != labels.dims[0] {
        return Err(SmlError::Data(format!(
            "sample count mismatch: {} images vs {} labels",
            images.dims[0], labels.dims[0]
        )));
    }
    if digit_neg == digit_pos {
        return Err(SmlError::Data("digit filters must differ".into()));
    }
    let px = images.dims[1] * images.dims[2];
    let mut features = Vec::new();
    let mut out_labels = Vec::new();
    for (n, &digit) in labels.payload.iter().enumerate() {
        let cls = if digit == digit_pos {
            1
        } else if digit == digit_neg {
            -1
        } else {
            continue;
        };
        let row = images.payload[n * px..(n + 1) * px]
            .iter()
            .map(|&p| f64::from(p) * scale)
            .collect();
        features.push(row);
        out_labels.push(cls);
    }
    if !out_labels.contains(&1) || !out_labels.contains(&-1) {
        return Err(SmlError::Data(format!(
            "empty class after filtering to digits {digit_neg}/{digit_pos}"
        )));
    }
    LabeledDataset::new(features, out_labels)
}

/// Disjoint per-agent training sets plus the shared holdout remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentDataAssignment {
    pub training: Vec<LabeledDataset>,
    pub holdout: LabeledDataset,
    /// Original sample indices behind each agent's training set, for audit.
    pub training_indices: Vec<Vec<usize>>,
}

/// Seed-deterministic partition: each agent gets exactly `per_class` samples
/// of each class, pairwise disjoint; the remainder becomes the holdout pool.
pub fn partition_agents(
    data: &LabeledDataset,
    num_agents: usize,
    per_class: usize,
    master_seed: u64,
) -> Result<AgentDataAssignment> {
    let mut pos: Vec<usize> = (0..data.len()).filter(|&n| data.labels[n] == 1).collect();
    let mut neg: Vec<usize> = (0..data.len()).filter(|&n| data.labels[n] == -1).collect();
    let need = num_agents * per_class;
    if pos.len() < need || neg.len() < need {
        return Err(SmlError::Data(format!(
            "need {need} samples per class for {num_agents} agents, have {}/{}",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = seed::rng(master_seed, "partition", 0);
    shuffle(&mut pos, &mut rng);
    shuffle(&mut neg, &mut rng);

    let mut training = Vec::with_capacity(num_agents);
    let mut training_indices = Vec::with_capacity(num_agents);
    for a in 0..num_agents {
        let mut idx: Vec<usize> = pos[a * per_class..(a + 1) * per_class]
            .iter()
            .chain(&neg[a * per_class..(a + 1) * per_class])
            .copied()
            .collect();
        idx.sort_unstable();
        let feats = idx.iter().map(|&n| data.features[n].clone()).collect();
        let labels = idx.iter().map(|&n| data.labels[n]).collect();
        training.push(LabeledDataset::new(feats, labels)?);
        training_indices.push(idx);
    }
    let mut rest: Vec<usize> = pos[need..].iter().chain(&neg[need..]).copied().collect();
    rest.sort_unstable();
    if rest.is_empty() {
        return Err(SmlError::Data("no samples left for the holdout pool".into()));
    }
    let holdout = LabeledDataset::new(
        rest.iter().map(|&n| data.features[n].clone()).collect(),
        rest.iter().map(|&n| data.labels[n]).collect(),
    )?;
    Ok(AgentDataAssignment { training, holdout, training_indices })
}

/// Fisher-Yates driven by the given stream.
fn shuffle<T>(v: &mut [T], rng: &mut impl Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

/// Poisoned-agent scenario: agent `k` keeps its training set size but its
/// features are resampled (with replacement) from the class-+1 features of
/// its own allocation plus the holdout pool, and its labels are redrawn
/// i.i.d. uniform over {-1, +1}.
pub fn corrupt_agent(
    assignment: &mut AgentDataAssignment,
    k: usize,
    master_seed: u64,
) -> Result<()> {
    let num_agents = assignment.training.len();
    if k >= num_agents {
        return Err(SmlError::AgentIndex { index: k, num_agents });
    }
    let own = assignment.training[k].class_features(1);
    let pool_extra = assignment.holdout.class_features(1);
    let pool: Vec<&Vec<f64>> = own.into_iter().chain(pool_extra).collect();
    if pool.is_empty() {
        return Err(SmlError::Data(format!("no class-+1 features available to corrupt agent {k}")));
    }
    let n = assignment.training[k].len();
    let mut rng = seed::rng(master_seed, "corrupt", k as u64);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        features.push(pool[rng.gen_range(0..pool.len())].clone());
        labels.push(if rng.gen::<bool>() { 1 } else { -1 });
    }
    assignment.training[k] = LabeledDataset::new(features, labels)?;
    assignment.training_indices[k].clear();
    Ok(())
}

/// Symmetric Gaussian pair: class +1 at `+mean`, class -1 at `-mean`,
/// isotropic noise of deviation `std`. The exact log-likelihood ratio is
/// `2 m^T h / std^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSourceSpec {
    pub mean: Vec<f64>,
    pub std: f64,
    pub seed: u64,
}

impl GaussianSourceSpec {
    pub fn new(mean: Vec<f64>, std: f64, seed: u64) -> Result<Self> {
        if mean.is_empty() {
            return Err(SmlError::Data("gaussian source needs dimension >= 1".into()));
        }
        if !(std > 0.0) {
            return Err(SmlError::Data("gaussian std must be positive".into()));
        }
        Ok(Self { mean, std, seed })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn exact_llr(&self, h: &[f64]) -> f64 {
        let dot: f64 = self.mean.iter().zip(h).map(|(m, x)| m * x).sum();
        2.0 * dot / (self.std * self.std)
    }
}

/// Seed-deterministic feature stream following `label_schedule`, with the
/// exact log-likelihood ratio of every sample for oracle comparisons.
pub fn gaussian_stream(
    spec: &GaussianSourceSpec,
    label_schedule: &[Label],
    stream_tag: u64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    use rand_distr::StandardNormal;
    let mut rng = seed::rng(spec.seed, "gaussian", stream_tag);
    let mut features = Vec::with_capacity(label_schedule.len());
    let mut llrs = Vec::with_capacity(label_schedule.len());
    for &gamma in label_schedule {
        let h: Vec<f64> = spec
            .mean
            .iter()
            .map(|&m| f64::from(gamma) * m + spec.std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        llrs.push(spec.exact_llr(&h));
        features.push(h);
    }
    (features, llrs)
}

/// Balanced labeled training set from the Gaussian source: `per_class`
/// samples of each class, alternating labels.
pub fn gaussian_training_set(
    spec: &GaussianSourceSpec,
    per_class: usize,
    stream_tag: u64,
) -> Result<LabeledDataset> {
    let schedule: Vec<Label> = (0..2 * per_class).map(|n| if n % 2 == 0 { 1 } else { -1 }).collect();
    let (features, _) = gaussian_stream(spec, &schedule, stream_tag);
    LabeledDataset::new(features, schedule)
}

/// Class schedule of the prediction phase: -1 before `switch_at`, +1 after.
pub fn prediction_schedule(steps: usize, switch_at: usize) -> Result<Vec<Label>> {
    if switch_at > steps {
        return Err(SmlError::Data(format!(
            "switch_at {switch_at} out of range for {steps} steps"
        )));
    }
    Ok((0..steps).map(|i| if i < switch_at { -1 } else { 1 }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal_label_file() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 2, 1, 0];
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.dims, vec![2]);
        assert_eq!(t.payload, vec![1, 0]);
    }

    #[test]
    fn parse_rejects_bad_magic() {
        let bytes = [0, 0, 7, 1, 0, 0, 0, 1, 0];
        match parse_idx(&bytes) {
            Err(SmlError::IdxBadMagic { magic }) => assert_eq!(magic, 0x0000_0701),
            other => panic!("expected bad magic, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_truncation() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 5, 1, 0];
        assert!(matches!(parse_idx(&bytes), Err(SmlError::IdxTruncated { .. })));
    }

    #[test]
    fn parse_rejects_dim_overflow() {
        let mut bytes = vec![0, 0, 8, 3];
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        }
        assert!(matches!(parse_idx(&bytes), Err(SmlError::IdxDimOverflow)));
    }

    fn tiny_images(digits: &[u8]) -> (IdxTensor, IdxTensor) {
        let n = digits.len();
        let images = IdxTensor {
            magic: IDX_MAGIC_IMAGES,
            dims: vec![n, 2, 2],
            payload: (0..n * 4).map(|i| (i % 256) as u8).collect(),
        };
        let labels = IdxTensor {
            magic: IDX_MAGIC_LABELS,
            dims: vec![n],
            payload: digits.to_vec(),
        };
        (images, labels)
    }

    #[test]
    fn binary_task_filters_and_maps() {
        let (images, labels) = tiny_images(&[0, 1, 7, 1, 0]);
        let ds = build_binary_task(&images, &labels, 0, 1, DEFAULT_PIXEL_SCALE).unwrap();
        assert_eq!(ds.labels, vec![-1, 1, 1, -1]);
        assert_eq!(ds.dim(), 4);
    }

    #[test]
    fn binary_task_rejects_missing_class() {
        let (images, labels) = tiny_images(&[2, 3, 4, 5]);
        assert!(matches!(
            build_binary_task(&images, &labels, 0, 1, DEFAULT_PIXEL_SCALE),
            Err(SmlError::Data(_))
        ));
    }

    #[test]
    fn binary_task_scales_pixels() {
        let images = IdxTensor {
            magic: IDX_MAGIC_IMAGES,
            dims: vec![2, 1, 1],
            payload: vec![255, 0],
        };
        let labels = IdxTensor { magic: IDX_MAGIC_LABELS, dims: vec![2], payload: vec![1, 0] };
        let ds = build_binary_task(&images, &labels, 0, 1, DEFAULT_PIXEL_SCALE).unwrap();
        assert_eq!(ds.features[0][0], 1.0);
        assert_eq!(ds.features[1][0], 0.0);
    }

    fn synthetic_dataset(per_class: usize) -> LabeledDataset {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for n in 0..2 * per_class {
            let cls = if n % 2 == 0 { 1 } else { -1 };
            features.push(vec![n as f64, f64::from(cls)]);
            labels.push(cls);
        }
        LabeledDataset::new(features, labels).unwrap()
    }

    #[test]
    fn partition_is_disjoint_and_exhaustive() {
        let data = synthetic_dataset(30);
        let asg = partition_agents(&data, 4, 6, 42).unwrap();
        let mut seen = std::collections::HashSet::new();
        for (a, idx) in asg.training_indices.iter().enumerate() {
            assert_eq!(asg.training[a].labels.iter().filter(|&&l| l == 1).count(), 6);
            assert_eq!(asg.training[a].labels.iter().filter(|&&l| l == -1).count(), 6);
            for &n in idx {
                assert!(seen.insert(n), "index {n} assigned twice");
            }
        }
        assert_eq!(seen.len() + asg.holdout.len(), data.len());
    }

    #[test]
    fn partition_single_agent_single_pair() {
        let data = synthetic_dataset(2);
        let asg = partition_agents(&data, 1, 1, 0).unwrap();
        assert_eq!(asg.training[0].len(), 2);
        assert_eq!(asg.holdout.len(), 2);
    }

    #[test]
    fn partition_is_deterministic() {
        let data = synthetic_dataset(30);
        let a = partition_agents(&data, 3, 5, 9).unwrap();
        let b = partition_agents(&data, 3, 5, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_rejects_insufficient_data() {
        let data = synthetic_dataset(3);
        assert!(matches!(partition_agents(&data, 2, 2, 0), Err(SmlError::Data(_))));
    }

    #[test]
    fn corruption_leaves_only_positive_features_and_other_agents_intact() {
        let data = synthetic_dataset(40);
        let mut asg = partition_agents(&data, 3, 8, 7).unwrap();
        let before = asg.clone();
        corrupt_agent(&mut asg, 1, 7).unwrap();
        // class-+1 features in this synthetic set carry +1 in coordinate 1
        assert!(asg.training[1].features.iter().all(|f| f[1] == 1.0));
        assert_eq!(asg.training[1].len(), before.training[1].len());
        assert_eq!(asg.training[0], before.training[0]);
        assert_eq!(asg.training[2], before.training[2]);
        assert_eq!(asg.holdout, before.holdout);
    }

    #[test]
    fn corruption_labels_are_near_balanced() {
        let data = synthetic_dataset(600);
        let mut asg = partition_agents(&data, 1, 500, 3).unwrap();
        corrupt_agent(&mut asg, 0, 3).unwrap();
        let n = asg.training[0].len() as f64;
        let mean: f64 = asg.training[0].labels.iter().map(|&l| f64::from(l)).sum::<f64>() / n;
        assert!(mean.abs() < 3.0 / n.sqrt(), "label mean {mean} too far from 0");
    }

    #[test]
    fn corruption_rejects_bad_index() {
        let data = synthetic_dataset(10);
        let mut asg = partition_agents(&data, 2, 2, 0).unwrap();
        assert!(matches!(corrupt_agent(&mut asg, 5, 0), Err(SmlError::AgentIndex { .. })));
    }

    #[test]
    fn gaussian_zero_mean_has_zero_llr() {
        let spec = GaussianSourceSpec::new(vec![0.0, 0.0], 1.0, 5).unwrap();
        let (_, llrs) = gaussian_stream(&spec, &[1, -1, 1], 0);
        assert!(llrs.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn gaussian_llr_at_the_mean() {
        let spec = GaussianSourceSpec::new(vec![0.6, 0.8], 1.0, 5).unwrap();
        assert!((spec.exact_llr(&[0.6, 0.8]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_llr_matches_density_quotient() {
        let spec = GaussianSourceSpec::new(vec![0.3, -0.7], 1.3, 11).unwrap();
        let (features, llrs) = gaussian_stream(&spec, &[1, -1, 1, -1], 2);
        let log_density = |h: &[f64], sign: f64| -> f64 {
            h.iter()
                .zip(&spec.mean)
                .map(|(x, m)| {
                    let d = x - sign * m;
                    -d * d / (2.0 * spec.std * spec.std)
                })
                .sum()
        };
        for (h, llr) in features.iter().zip(&llrs) {
            let direct = log_density(h, 1.0) - log_density(h, -1.0);
            assert!((direct - llr).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_class_mean_concentrates() {
        let spec = GaussianSourceSpec::new(vec![1.5], 1.0, 99).unwrap();
        let schedule = vec![1; 4000];
        let (features, _) = gaussian_stream(&spec, &schedule, 0);
        let mean: f64 = features.iter().map(|f| f[0]).sum::<f64>() / 4000.0;
        assert!((mean - 1.5).abs() < 4.0 / (4000f64).sqrt());
    }

    #[test]
    fn schedule_boundaries() {
        assert_eq!(prediction_schedule(3, 0).unwrap(), vec![1, 1, 1]);
        assert_eq!(prediction_schedule(3, 3).unwrap(), vec![-1, -1, -1]);
        let s = prediction_schedule(1000, 500).unwrap();
        assert_eq!(s.iter().filter(|&&l| l == -1).count(), 500);
        assert_eq!(s.iter().filter(|&&l| l == 1).count(), 500);
        assert!(prediction_schedule(3, 4).is_err());
    }
}
