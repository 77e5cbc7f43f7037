//! Non-IID client partitions: pathological (M exclusive classes per client)
//! and Dirichlet (per-class client proportions).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{stage, stream, Domain};
use crate::scalar::Scalar;

use super::synthetic::GlobalDataset;

/// Partitioning scheme.
#[derive(Debug, Clone)]
pub enum PartitionScheme {
    /// Each client holds exactly `classes_per_client` classes, with a random
    /// fraction (uniform in `min_fraction..=max_fraction`) of its per-class
    /// allotment.
    Pathological {
        classes_per_client: usize,
        min_fraction: f64,
        max_fraction: f64,
    },
    /// Per-class client proportions drawn from a symmetric Dirichlet with
    /// concentration `alpha`.
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub num_clients: usize,
    /// Fraction of each client's samples held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

/// One client's private data with train/val/test index splits.
#[derive(Debug, Clone)]
pub struct ClientDataset<S> {
    pub client_id: usize,
    pub x: Matrix<S>,
    pub y: Vec<usize>,
    /// Index of each local sample in the global train set (audit only).
    pub source_indices: Vec<usize>,
    /// Per-class counts over all local samples.
    pub class_counts: BTreeMap<usize, usize>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl<S: Scalar> ClientDataset<S> {
    fn from_assignment(
        client_id: usize,
        global: &GlobalDataset<S>,
        source_indices: Vec<usize>,
        val_fraction: f64,
        split_rng: &mut impl Rng,
    ) -> Self {
        let x = global.train_x.gather_rows(&source_indices);
        let y: Vec<usize> = source_indices.iter().map(|&i| global.train_y[i]).collect();
        let mut class_counts = BTreeMap::new();
        for &label in &y {
            *class_counts.entry(label).or_insert(0) += 1;
        }
        let n = y.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(split_rng);
        let val_n = ((val_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
        let mut val_idx: Vec<usize> = order[..val_n].to_vec();
        let mut train_idx: Vec<usize> = order[val_n..].to_vec();
        val_idx.sort_unstable();
        train_idx.sort_unstable();
        ClientDataset {
            client_id,
            x,
            y,
            source_indices,
            class_counts,
            train_idx,
            val_idx,
            test_idx: Vec::new(),
        }
    }

    pub fn num_samples(&self) -> usize {
        self.y.len()
    }

    /// Materialized training split.
    pub fn train_data(&self) -> (Matrix<S>, Vec<usize>) {
        (
            self.x.gather_rows(&self.train_idx),
            self.train_idx.iter().map(|&i| self.y[i]).collect(),
        )
    }

    /// Materialized validation split.
    pub fn val_data(&self) -> (Matrix<S>, Vec<usize>) {
        (
            self.x.gather_rows(&self.val_idx),
            self.val_idx.iter().map(|&i| self.y[i]).collect(),
        )
    }

    /// Per-class counts over the training split (used as metric weights).
    pub fn train_class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &i in &self.train_idx {
            *counts.entry(self.y[i]).or_insert(0) += 1;
        }
        counts
    }

    /// Classes present in the training split.
    pub fn local_classes(&self) -> BTreeSet<usize> {
        self.train_idx.iter().map(|&i| self.y[i]).collect()
    }
}

/// Carve the global train set into per-client datasets.
pub fn partition<S: Scalar>(global: &GlobalDataset<S>, spec: &PartitionSpec) -> Result<Vec<ClientDataset<S>>> {
    if spec.num_clients < 2 {
        return Err(Error::Config(format!(
            "num_clients must be >= 2, got {}",
            spec.num_clients
        )));
    }
    if !(0.0..1.0).contains(&spec.val_fraction) {
        return Err(Error::Config(format!(
            "val_fraction must be in [0, 1), got {}",
            spec.val_fraction
        )));
    }
    let assignments = match &spec.scheme {
        PartitionScheme::Pathological {
            classes_per_client,
            min_fraction,
            max_fraction,
        } => assign_pathological(global, spec, *classes_per_client, *min_fraction, *max_fraction)?,
        PartitionScheme::Dirichlet { alpha } => assign_dirichlet(global, spec, *alpha)?,
    };
    Ok(assignments
        .into_iter()
        .enumerate()
        .map(|(client_id, source_indices)| {
            let mut split_rng = stream(spec.seed, Domain::Partition, client_id as u64, 1);
            ClientDataset::from_assignment(client_id, global, source_indices, spec.val_fraction, &mut split_rng)
        })
        .collect())
}

fn assign_pathological<S: Scalar>(
    global: &GlobalDataset<S>,
    spec: &PartitionSpec,
    classes_per_client: usize,
    min_fraction: f64,
    max_fraction: f64,
) -> Result<Vec<Vec<usize>>> {
    let c = global.num_classes;
    let l = spec.num_clients;
    let m = classes_per_client;
    if m == 0 || m > c {
        return Err(Error::Config(format!(
            "classes_per_client must be in 1..={c}, got {m}"
        )));
    }
    if l * m < c {
        return Err(Error::Config(format!(
            "{l} clients x {m} classes cannot cover all {c} classes; raise classes_per_client or num_clients"
        )));
    }
    if !(0.0 < min_fraction && min_fraction <= max_fraction && max_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "need 0 < min_fraction <= max_fraction <= 1, got {min_fraction}..{max_fraction}"
        )));
    }

    let mut rng = stage(spec.seed, Domain::Partition);
    let mut perm: Vec<usize> = (0..c).collect();
    perm.shuffle(&mut rng);
    // Round-robin walk over the permuted classes: client i takes the next M,
    // cycling so every class lands on at least one client.
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); c];
    for client in 0..l {
        for k in 0..m {
            let class = perm[(client * m + k) % c];
            holders[class].push(client);
        }
    }

    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); l];
    for (class, class_holders) in holders.iter().enumerate() {
        let mut samples = global.train_indices_of_class(class);
        if samples.is_empty() {
            return Err(Error::Data(format!("class {class} has no train samples")));
        }
        samples.shuffle(&mut rng);
        let chunks = near_equal_chunks(samples.len(), class_holders.len());
        let mut offset = 0;
        for (&client, &chunk_len) in class_holders.iter().zip(&chunks) {
            if chunk_len == 0 {
                return Err(Error::Config(format!(
                    "class {class} has too few samples for {} holding clients",
                    class_holders.len()
                )));
            }
            let fraction = rng.random_range(min_fraction..=max_fraction);
            let take = ((fraction * chunk_len as f64).floor() as usize).clamp(1, chunk_len);
            assignments[client].extend_from_slice(&samples[offset..offset + take]);
            offset += chunk_len;
        }
    }
    Ok(assignments)
}

/// One draw from a symmetric Dirichlet over `n` coordinates, via normalized
/// Gamma draws.
pub fn dirichlet_proportions(alpha: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha checked positive");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|g| g / sum).collect();
        }
        // Extremely small alpha can underflow every draw; redraw.
    }
}

fn assign_dirichlet<S: Scalar>(
    global: &GlobalDataset<S>,
    spec: &PartitionSpec,
    alpha: f64,
) -> Result<Vec<Vec<usize>>> {
    if alpha <= 0.0 {
        return Err(Error::Config(format!("dirichlet alpha must be > 0, got {alpha}")));
    }
    let mut rng = stage(spec.seed, Domain::Partition);
    let l = spec.num_clients;
    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); l];
    for class in 0..global.num_classes {
        let mut samples = global.train_indices_of_class(class);
        samples.shuffle(&mut rng);
        let proportions = dirichlet_proportions(alpha, l, &mut rng);
        let counts = largest_remainder(&proportions, samples.len());
        let mut offset = 0;
        for (client, &count) in counts.iter().enumerate() {
            assignments[client].extend_from_slice(&samples[offset..offset + count]);
            offset += count;
        }
        debug_assert_eq!(offset, samples.len());
    }
    Ok(assignments)
}

/// Near-equal integer chunks summing to `total` (first chunks get the
/// remainder).
fn near_equal_chunks(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

/// Apportion `total` by `proportions` using the largest-remainder rule, so
/// the counts sum to `total` exactly.
fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Structured-text audit of a partition: one line per client mapping it to
/// its realized class counts and split sizes.
pub fn partition_manifest<S: Scalar>(clients: &[ClientDataset<S>], spec: &PartitionSpec) -> String {
    let mut out = String::new();
    let scheme = match &spec.scheme {
        PartitionScheme::Pathological {
            classes_per_client,
            min_fraction,
            max_fraction,
        } => format!("pathological(classes_per_client={classes_per_client}, fraction={min_fraction}..{max_fraction})"),
        PartitionScheme::Dirichlet { alpha } => format!("dirichlet(alpha={alpha})"),
    };
    out.push_str(&format!(
        "# partition manifest\n# scheme: {scheme} clients={} seed={}\n",
        spec.num_clients, spec.seed
    ));
    for c in clients {
        let counts: Vec<String> = c.class_counts.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        out.push_str(&format!(
            "client {}: total={} train={} val={} classes {{{}}}\n",
            c.client_id,
            c.num_samples(),
            c.train_idx.len(),
            c.val_idx.len(),
            counts.join(", ")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn small_global(seed: u64) -> GlobalDataset<f64> {
        generate_synthetic(&SyntheticSpec {
            num_classes: 10,
            feature_dim: 4,
            train_per_class: 60,
            test_per_class: 5,
            cluster_spread: 0.5,
            seed,
        })
    }

    fn spec(scheme: PartitionScheme, seed: u64) -> PartitionSpec {
        PartitionSpec {
            scheme,
            num_clients: 10,
            val_fraction: 0.2,
            seed,
        }
    }

    fn assert_disjoint(clients: &[ClientDataset<f64>]) {
        let mut seen = std::collections::HashSet::new();
        for c in clients {
            for &i in &c.source_indices {
                assert!(seen.insert(i), "sample {i} assigned twice");
            }
        }
    }

    #[test]
    fn pathological_support_is_exactly_m() {
        for seed in 0..5 {
            let global = small_global(seed);
            let clients = partition(
                &global,
                &spec(
                    PartitionScheme::Pathological {
                        classes_per_client: 3,
                        min_fraction: 0.3,
                        max_fraction: 1.0,
                    },
                    seed,
                ),
            )
            .unwrap();
            for c in &clients {
                assert_eq!(c.class_counts.len(), 3, "client {}", c.client_id);
                assert!(c.class_counts.values().all(|&n| n > 0));
            }
            assert_disjoint(&clients);
        }
    }

    #[test]
    fn pathological_m_equals_c_gives_full_support() {
        let global = small_global(3);
        let clients = partition(
            &global,
            &spec(
                PartitionScheme::Pathological {
                    classes_per_client: 10,
                    min_fraction: 0.5,
                    max_fraction: 1.0,
                },
                3,
            ),
        )
        .unwrap();
        for c in &clients {
            assert_eq!(c.class_counts.len(), 10);
        }
    }

    #[test]
    fn pathological_single_class_clients_partition_all_classes() {
        // M=1, L=C: the round-robin walk hands each client one distinct class.
        let global = small_global(11);
        let clients = partition(
            &global,
            &spec(
                PartitionScheme::Pathological {
                    classes_per_client: 1,
                    min_fraction: 0.3,
                    max_fraction: 1.0,
                },
                11,
            ),
        )
        .unwrap();
        let mut covered = BTreeSet::new();
        for c in &clients {
            assert_eq!(c.class_counts.len(), 1);
            covered.insert(*c.class_counts.keys().next().unwrap());
        }
        assert_eq!(covered.len(), 10, "supports are disjoint and cover all classes");
    }

    #[test]
    fn pathological_rejects_uncoverable_configs() {
        let global = small_global(0);
        let bad = partition(
            &global,
            &PartitionSpec {
                scheme: PartitionScheme::Pathological {
                    classes_per_client: 2,
                    min_fraction: 0.3,
                    max_fraction: 1.0,
                },
                num_clients: 4, // 4 * 2 < 10 classes
                val_fraction: 0.2,
                seed: 0,
            },
        );
        assert!(matches!(bad, Err(Error::Config(_))));
        let bad = partition(
            &global,
            &spec(
                PartitionScheme::Pathological {
                    classes_per_client: 11,
                    min_fraction: 0.3,
                    max_fraction: 1.0,
                },
                0,
            ),
        );
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn dirichlet_conserves_every_sample() {
        for seed in 0..5 {
            let global = small_global(seed);
            let clients = partition(&global, &spec(PartitionScheme::Dirichlet { alpha: 0.5 }, seed)).unwrap();
            assert_disjoint(&clients);
            let total: usize = clients.iter().map(ClientDataset::num_samples).sum();
            assert_eq!(total, global.train_y.len());
            // Per-class conservation.
            let mut per_class = BTreeMap::new();
            for c in &clients {
                for (&k, &v) in &c.class_counts {
                    *per_class.entry(k).or_insert(0usize) += v;
                }
            }
            for class in 0..10 {
                assert_eq!(per_class[&class], 60);
            }
        }
    }

    #[test]
    fn dirichlet_proportions_are_a_simplex_point() {
        let mut rng = stage(7, Domain::Partition);
        for _ in 0..50 {
            let p = dirichlet_proportions(0.1, 10, &mut rng);
            assert!(p.iter().all(|v| *v >= 0.0));
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_alpha_approaches_uniform_shares() {
        // Law-of-large-numbers check: alpha -> inf concentrates on uniform.
        let global = small_global(1);
        let clients = partition(&global, &spec(PartitionScheme::Dirichlet { alpha: 1e6 }, 1)).unwrap();
        let expected = global.train_y.len() as f64 / 10.0;
        for c in &clients {
            let share = c.num_samples() as f64 / expected;
            assert!((share - 1.0).abs() < 0.05, "client {} share {share}", c.client_id);
        }
    }

    #[test]
    fn small_alpha_is_heterogeneous() {
        // At alpha = 0.1 some client concentrates most of its mass in <= 2
        // classes, for every seed in a small sweep.
        for seed in 0..20 {
            let global = small_global(seed);
            let clients = partition(&global, &spec(PartitionScheme::Dirichlet { alpha: 0.1 }, seed)).unwrap();
            let found = clients.iter().any(|c| {
                if c.num_samples() == 0 {
                    return false;
                }
                let mut counts: Vec<usize> = c.class_counts.values().copied().collect();
                counts.sort_unstable_by(|a, b| b.cmp(a));
                let top2: usize = counts.iter().take(2).sum();
                top2 as f64 / c.num_samples() as f64 > 0.5
            });
            assert!(found, "seed {seed}: no concentrated client");
        }
    }

    #[test]
    fn same_seed_reproduces_the_partition() {
        let global = small_global(2);
        let s = spec(PartitionScheme::Dirichlet { alpha: 0.3 }, 9);
        let a = partition(&global, &s).unwrap();
        let b = partition(&global, &s).unwrap();
        for (ca, cb) in a.iter().zip(&b) {
            assert_eq!(ca.source_indices, cb.source_indices);
            assert_eq!(ca.train_idx, cb.train_idx);
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover_samples() {
        let global = small_global(4);
        let clients = partition(&global, &spec(PartitionScheme::Dirichlet { alpha: 1.0 }, 4)).unwrap();
        for c in &clients {
            let train: BTreeSet<_> = c.train_idx.iter().collect();
            let val: BTreeSet<_> = c.val_idx.iter().collect();
            assert!(train.is_disjoint(&val));
            assert_eq!(train.len() + val.len(), c.num_samples());
        }
    }

    #[test]
    fn manifest_lists_every_client() {
        let global = small_global(5);
        let s = spec(
            PartitionScheme::Pathological {
                classes_per_client: 3,
                min_fraction: 0.3,
                max_fraction: 1.0,
            },
            5,
        );
        let clients = partition(&global, &s).unwrap();
        let manifest = partition_manifest(&clients, &s);
        for c in &clients {
            assert!(manifest.contains(&format!("client {}:", c.client_id)));
        }
    }
}
