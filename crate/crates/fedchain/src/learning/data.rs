//! Federated dataset generation and CSV ingestion.
//!
//! Synthetic data draws each class from a Gaussian cluster in feature space.
//! Label skew follows the usual recipe: every client samples only from its
//! own random subset of `labels_per_client` labels; when that subset covers
//! all labels the partition is plain IID.

use rand::RngExt;
use rand_distr::{Distribution, Normal};

use super::LearningError;

/// One labelled observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Per-client training sets plus a held-out test set.
#[derive(Debug, Clone)]
pub struct FederatedDataset {
    pub clients: Vec<Vec<Sample>>,
    pub test_set: Vec<Sample>,
    pub label_count: usize,
    /// True when every client draws from the full label set.
    pub iid: bool,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DataSpec {
    pub n_clients: usize,
    pub per_client: usize,
    pub labels_per_client: usize,
    pub label_count: usize,
    pub feature_dim: usize,
    pub test_samples: usize,
    /// Scale of the Gaussian cluster centers.
    pub center_scale: f64,
    /// Within-cluster standard deviation.
    pub noise: f64,
}

impl FederatedDataset {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn validate(&self) -> Result<(), LearningError> {
        for (i, client) in self.clients.iter().enumerate() {
            if client.is_empty() {
                return Err(LearningError::InvalidDataConfig(format!(
                    "client {i} has no samples"
                )));
            }
        }
        for s in self.clients.iter().flatten().chain(self.test_set.iter()) {
            if s.label >= self.label_count {
                return Err(LearningError::LabelOutOfRange {
                    label: s.label,
                    label_count: self.label_count,
                });
            }
        }
        Ok(())
    }
}

/// Generate a synthetic federated dataset, deterministic per seed.
pub fn generate_federated(spec: &DataSpec, seed: u64) -> Result<FederatedDataset, LearningError> {
    if spec.labels_per_client == 0 || spec.labels_per_client > spec.label_count {
        return Err(LearningError::InvalidDataConfig(format!(
            "labels_per_client={} must be in 1..={}",
            spec.labels_per_client, spec.label_count
        )));
    }
    if spec.n_clients == 0 || spec.per_client == 0 {
        return Err(LearningError::InvalidDataConfig(
            "need at least one client and one sample per client".into(),
        ));
    }
    if spec.feature_dim == 0 || spec.label_count < 2 {
        return Err(LearningError::InvalidDataConfig(
            "feature_dim must be positive and label_count at least 2".into(),
        ));
    }
    let mut rng = crate::rngstream::derive_rng(seed, "learning/data");
    let center_dist = Normal::new(0.0, spec.center_scale).expect("finite center scale");
    let noise_dist = Normal::new(0.0, spec.noise).expect("finite noise");
    let centers: Vec<Vec<f64>> = (0..spec.label_count)
        .map(|_| {
            (0..spec.feature_dim)
                .map(|_| center_dist.sample(&mut rng))
                .collect()
        })
        .collect();

    let draw = |label: usize, rng: &mut rand_chacha::ChaCha20Rng| -> Sample {
        let features = centers[label]
            .iter()
            .map(|&c| c + noise_dist.sample(rng))
            .collect();
        Sample { features, label }
    };

    let iid = spec.labels_per_client == spec.label_count;
    let mut clients = Vec::with_capacity(spec.n_clients);
    for _ in 0..spec.n_clients {
        let allowed: Vec<usize> = if iid {
            (0..spec.label_count).collect()
        } else {
            // partial Fisher-Yates: first labels_per_client of a shuffle
            let mut all: Vec<usize> = (0..spec.label_count).collect();
            for i in 0..spec.labels_per_client {
                let j = rng.random_range(i..all.len());
                all.swap(i, j);
            }
            all.truncate(spec.labels_per_client);
            all
        };
        let samples = (0..spec.per_client)
            .map(|_| {
                let label = allowed[rng.random_range(0..allowed.len())];
                draw(label, &mut rng)
            })
            .collect();
        clients.push(samples);
    }
    let test_set = (0..spec.test_samples)
        .map(|_| {
            let label = rng.random_range(0..spec.label_count);
            draw(label, &mut rng)
        })
        .collect();
    let data = FederatedDataset {
        clients,
        test_set,
        label_count: spec.label_count,
        iid,
    };
    data.validate()?;
    Ok(data)
}

/// Load a dataset from CSV: one row per sample, feature columns followed by
/// an integer label column. Rows are shuffled per seed, a test fraction is
/// held out, and the rest is split evenly (IID) across clients.
pub fn load_csv(
    path: &std::path::Path,
    n_clients: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<FederatedDataset, LearningError> {
    let text = std::fs::read_to_string(path)?;
    let mut samples = Vec::new();
    let mut feature_dim = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(LearningError::CsvParse {
                line: lineno + 1,
                msg: "need at least one feature column and a label".into(),
            });
        }
        let dim = fields.len() - 1;
        if *feature_dim.get_or_insert(dim) != dim {
            return Err(LearningError::CsvParse {
                line: lineno + 1,
                msg: format!("inconsistent column count ({dim} features)"),
            });
        }
        let features = fields[..dim]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| LearningError::CsvParse {
                    line: lineno + 1,
                    msg: format!("bad feature {f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let label = fields[dim].parse::<usize>().map_err(|e| LearningError::CsvParse {
            line: lineno + 1,
            msg: format!("bad label {:?}: {e}", fields[dim]),
        })?;
        samples.push(Sample { features, label });
    }
    if samples.is_empty() {
        return Err(LearningError::InvalidDataConfig("csv contains no samples".into()));
    }
    if n_clients == 0 {
        return Err(LearningError::InvalidDataConfig("need at least one client".into()));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(LearningError::InvalidDataConfig(
            "test_fraction must be in [0, 1)".into(),
        ));
    }
    let label_count = samples.iter().map(|s| s.label).max().unwrap() + 1;
    if label_count < 2 {
        return Err(LearningError::InvalidDataConfig(
            "csv must contain at least two distinct labels".into(),
        ));
    }

    let mut rng = crate::rngstream::derive_rng(seed, "learning/csv");
    // Fisher-Yates shuffle
    for i in (1..samples.len()).rev() {
        let j = rng.random_range(0..=i);
        samples.swap(i, j);
    }
    let n_test = (samples.len() as f64 * test_fraction).floor() as usize;
    let n_train = samples.len() - n_test;
    if n_train < n_clients {
        return Err(LearningError::InvalidDataConfig(format!(
            "cannot split {n_train} training rows across {n_clients} clients"
        )));
    }
    let test_set = samples.split_off(n_train);
    let mut clients: Vec<Vec<Sample>> = (0..n_clients).map(|_| Vec::new()).collect();
    for (i, s) in samples.into_iter().enumerate() {
        clients[i % n_clients].push(s);
    }
    let data = FederatedDataset {
        clients,
        test_set,
        label_count,
        iid: true,
    };
    data.validate()?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn spec(labels_per_client: usize) -> DataSpec {
        DataSpec {
            n_clients: 8,
            per_client: 40,
            labels_per_client,
            label_count: 10,
            feature_dim: 6,
            test_samples: 50,
            center_scale: 3.0,
            noise: 1.0,
        }
    }

    #[test]
    fn iid_mode_covers_all_labels() {
        let mut s = spec(10);
        s.per_client = 200;
        let data = generate_federated(&s, 1).unwrap();
        assert!(data.iid);
        for client in &data.clients {
            let labels: BTreeSet<usize> = client.iter().map(|s| s.label).collect();
            // 200 draws over 10 labels: all present with overwhelming probability
            assert_eq!(labels.len(), 10, "seed produced a gap: {labels:?}");
        }
    }

    #[test]
    fn label_skew_restricts_each_client() {
        let data = generate_federated(&spec(5), 2).unwrap();
        assert!(!data.iid);
        for client in &data.clients {
            let labels: BTreeSet<usize> = client.iter().map(|s| s.label).collect();
            assert!(labels.len() <= 5, "client spans {} labels", labels.len());
        }
        // test set still covers everything
        let tl: BTreeSet<usize> = data.test_set.iter().map(|s| s.label).collect();
        assert_eq!(tl.len(), 10);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_federated(&spec(5), 33).unwrap();
        let b = generate_federated(&spec(5), 33).unwrap();
        assert_eq!(a.clients, b.clients);
        assert_eq!(a.test_set, b.test_set);
    }

    #[test]
    fn invalid_partitions_are_rejected() {
        let mut s = spec(11);
        assert!(generate_federated(&s, 1).is_err());
        s.labels_per_client = 0;
        assert!(generate_federated(&s, 1).is_err());
        let mut s = spec(5);
        s.per_client = 0;
        assert!(generate_federated(&s, 1).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let mut text = String::from("# toy data\n");
        for i in 0..40 {
            let label = i % 4;
            text.push_str(&format!("{}.5, {}.25, {label}\n", i, 2 * i));
        }
        std::fs::write(&path, text).unwrap();
        let data = load_csv(&path, 4, 0.25, 7).unwrap();
        assert_eq!(data.label_count, 4);
        assert_eq!(data.test_set.len(), 10);
        assert_eq!(data.clients.iter().map(Vec::len).sum::<usize>(), 30);
        assert!(data.clients.iter().all(|c| !c.is_empty()));
        // deterministic
        let again = load_csv(&path, 4, 0.25, 7).unwrap();
        assert_eq!(data.clients, again.clients);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1.0, 2.0, 0\n1.0, oops, 1\n").unwrap();
        match load_csv(&path, 1, 0.0, 1) {
            Err(LearningError::CsvParse { line: 2, .. }) => {}
            other => panic!("expected csv error on line 2, got {other:?}"),
        }
    }
}
