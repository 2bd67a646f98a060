//! Expert-subset selection: rank experts by total combine mass and keep the
//! top k, plus the random-subset baseline and the exhaustive best-subset
//! oracle those rankings are measured against.

use crate::error::{Error, Result};
use crate::layer::{LayerActivations, SoftMoELayer};
use crate::tensor::{Matrix, RngStream};
use crate::training::Model;

/// A set of expert indices, sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetMask {
    indices: Vec<usize>,
}

impl SubsetMask {
    /// Build from arbitrary indices; duplicates are rejected.
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Result<SubsetMask> {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        for pair in indices.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::InvalidConfig {
                    message: format!("duplicate expert index {} in subset", pair[0]),
                });
            }
        }
        Ok(SubsetMask { indices })
    }

    /// All experts `{0, .., n-1}`.
    pub fn full(n: usize) -> SubsetMask {
        SubsetMask {
            indices: (0..n).collect(),
        }
    }

    pub fn empty() -> SubsetMask {
        SubsetMask {
            indices: Vec::new(),
        }
    }

    /// Subset size k.
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, expert: usize) -> bool {
        self.indices.binary_search(&expert).is_ok()
    }

    /// Check every index lies in `[0, n)`.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        match self.indices.last() {
            Some(&max) if max >= n => Err(Error::ExpertIndexOutOfRange { index: max, n }),
            _ => Ok(()),
        }
    }
}

/// Per-expert column sums of a combine matrix; the ranking statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct CombineMass {
    values: Vec<f64>,
}

impl CombineMass {
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Sum each column of `C`; rejects matrices whose rows do not sum to one
/// (within 1e-9), since the statistic is only meaningful for combine weights.
pub fn combine_mass(c: &Matrix) -> Result<CombineMass> {
    for i in 0..c.rows() {
        let sum: f64 = c.row(i).iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::RowNotStochastic { row: i, sum });
        }
    }
    let mut values = vec![0.0; c.cols()];
    for i in 0..c.rows() {
        for (v, x) in values.iter_mut().zip(c.row(i)) {
            *v += x;
        }
    }
    Ok(CombineMass { values })
}

/// Indices of the `k` largest mass entries; ties break toward the smaller index.
pub fn select_top_k(mass: &CombineMass, k: usize) -> Result<SubsetMask> {
    let n = mass.values.len();
    if k < 1 || k > n {
        return Err(Error::SubsetSizeOutOfRange { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        mass.values[b]
            .partial_cmp(&mass.values[a])
            .expect("combine mass is finite")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    SubsetMask::new(order)
}

/// Indices of the `k` smallest mass entries (first k of an ascending sort).
///
/// This mirrors implementations that sort the mass ascending and keep the
/// head of the sort. It is not used by any runner here; [`select_top_k`] is
/// the canonical rule.
pub fn select_bottom_k(mass: &CombineMass, k: usize) -> Result<SubsetMask> {
    let n = mass.values.len();
    if k < 1 || k > n {
        return Err(Error::SubsetSizeOutOfRange { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        mass.values[a]
            .partial_cmp(&mass.values[b])
            .expect("combine mass is finite")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    SubsetMask::new(order)
}

/// Select the top-k experts by combine mass, then run a masked forward pass
/// through only those experts. With `k = n` this is exactly a full forward.
pub fn algorithm1_forward(
    layer: &SoftMoELayer,
    x: &Matrix,
    k: usize,
) -> Result<LayerActivations> {
    let mask = algorithm1_mask(layer, x, k)?;
    layer.masked_forward(x, &mask)
}

/// Just the subset Algorithm 1 would pick for `x`, without running experts.
pub fn algorithm1_mask(layer: &SoftMoELayer, x: &Matrix, k: usize) -> Result<SubsetMask> {
    let c = layer.compute_combine(x)?;
    select_top_k(&combine_mass(&c)?, k)
}

/// Batched selection: per-item results are identical to [`algorithm1_forward`],
/// but each expert runs once on the stacked sub-batch of items that chose it.
pub fn batched_select(
    layer: &SoftMoELayer,
    xs: &[Matrix],
    k: usize,
) -> Result<Vec<LayerActivations>> {
    let n = layer.n();
    if k < 1 || k > n {
        return Err(Error::SubsetSizeOutOfRange { k, n });
    }
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let shape = xs[0].shape();
    for (i, x) in xs.iter().enumerate() {
        if x.shape() != shape {
            return Err(Error::RaggedBatch {
                expected: shape,
                got: x.shape(),
                item: i,
            });
        }
    }

    // Per-item routing: dispatch, combine, mixed inputs, selected subset.
    let mut items = Vec::with_capacity(xs.len());
    for x in xs {
        let dispatch = layer.compute_dispatch(x)?;
        let combine = layer.compute_combine(x)?;
        let expert_inputs = crate::tensor::matmul(&dispatch.transposed(), x)?;
        let mask = select_top_k(&combine_mass(&combine)?, k)?;
        items.push((dispatch, combine, expert_inputs, mask));
    }

    // One pass per expert over the sub-batch of items that selected it.
    let d = layer.d();
    let mut expert_outputs: Vec<Matrix> = xs.iter().map(|_| Matrix::zeros(n, d)).collect();
    for j in 0..n {
        let sub: Vec<usize> = (0..xs.len())
            .filter(|&t| items[t].3.contains(j))
            .collect();
        if sub.is_empty() {
            continue;
        }
        let mut stacked = Matrix::zeros(sub.len(), d);
        for (r, &t) in sub.iter().enumerate() {
            stacked.row_mut(r).copy_from_slice(items[t].2.row(j));
        }
        let outs = layer.bank.experts[j].forward_batch(&stacked)?;
        for (r, &t) in sub.iter().enumerate() {
            expert_outputs[t].row_mut(j).copy_from_slice(outs.row(r));
        }
    }

    let mut results = Vec::with_capacity(xs.len());
    for (t, x) in xs.iter().enumerate() {
        let (dispatch, combine, expert_inputs, mask) = items[t].clone();
        let output = crate::tensor::matmul(&combine, &expert_outputs[t])?;
        results.push(LayerActivations {
            input: x.clone(),
            dispatch,
            combine,
            expert_inputs,
            expert_outputs: expert_outputs[t].clone(),
            output,
            mask: Some(mask),
        });
    }
    Ok(results)
}

/// Uniform draw over all size-k subsets of `{0, .., n-1}`.
pub fn random_subset(n: usize, k: usize, stream: &mut RngStream) -> Result<SubsetMask> {
    if k < 1 || k > n {
        return Err(Error::SubsetSizeOutOfRange { k, n });
    }
    let picked = rand::seq::index::sample(stream, n, k);
    SubsetMask::new(picked)
}

/// Iterate all size-k subsets of `{0, .., n-1}` in lexicographic order.
pub fn k_subsets(n: usize, k: usize) -> KSubsets {
    KSubsets {
        n,
        k,
        next: if k <= n { Some((0..k).collect()) } else { None },
    }
}

/// Lexicographic subset enumerator returned by [`k_subsets`].
pub struct KSubsets {
    n: usize,
    k: usize,
    next: Option<Vec<usize>>,
}

impl Iterator for KSubsets {
    type Item = SubsetMask;

    fn next(&mut self) -> Option<SubsetMask> {
        let current = self.next.take()?;
        // advance: rightmost position that can still move up
        let mut succ = current.clone();
        let mut i = self.k;
        loop {
            if i == 0 {
                break; // exhausted
            }
            i -= 1;
            if succ[i] < self.n - self.k + i {
                succ[i] += 1;
                for j in i + 1..self.k {
                    succ[j] = succ[j - 1] + 1;
                }
                self.next = Some(succ);
                break;
            }
        }
        Some(SubsetMask { indices: current })
    }
}

/// Class prediction using Algorithm-1-selected experts in every layer.
/// Returns the predicted class and the subset each layer used.
pub fn algorithm1_predict(
    model: &Model,
    x: &Matrix,
    k: usize,
) -> Result<(usize, Vec<SubsetMask>)> {
    let mut tokens = x.clone();
    let mut masks = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let acts = algorithm1_forward(layer, &tokens, k)?;
        masks.push(acts.mask.clone().expect("masked pass records its subset"));
        tokens = acts.output;
    }
    let pred = crate::training::head_forward(&model.head, &tokens)?;
    Ok((pred.argmax_class()?, masks))
}

/// Brute-force search over all size-k subsets, in lexicographic order, for
/// one whose masked prediction equals `label`. Returns the first hit, or
/// `None` when no subset predicts correctly.
///
/// Only defined for single-layer models, where "a subset" is unambiguous.
pub fn exhaustive_best_subset(
    model: &Model,
    x: &Matrix,
    label: usize,
    k: usize,
) -> Result<Option<SubsetMask>> {
    let n = model.n();
    if k < 1 || k > n {
        return Err(Error::SubsetSizeOutOfRange { k, n });
    }
    if model.layers.len() != 1 {
        return Err(Error::InvalidConfig {
            message: "exhaustive subset search requires a single-layer model".to_string(),
        });
    }
    for mask in k_subsets(n, k) {
        if model.predict_masked(x, &mask)? == label {
            return Ok(Some(mask));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sample_gaussian;

    #[test]
    fn combine_mass_hand_case() {
        let c = Matrix::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.1, 0.6, 0.3]]).unwrap();
        let mass = combine_mass(&c).unwrap();
        let expect = [0.3, 1.1, 0.6];
        for (v, e) in mass.values().iter().zip(&expect) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn combine_mass_uniform_and_single_column() {
        let c = Matrix::from_vec(4, 2, vec![0.5; 8]).unwrap();
        let mass = combine_mass(&c).unwrap();
        assert_eq!(mass.values(), &[2.0, 2.0]);

        let ones = Matrix::from_vec(3, 1, vec![1.0; 3]).unwrap();
        assert_eq!(combine_mass(&ones).unwrap().values(), &[3.0]);
    }

    #[test]
    fn combine_mass_rejects_non_stochastic_rows() {
        let c = Matrix::from_vec(1, 2, vec![0.9, 0.3]).unwrap();
        assert!(matches!(
            combine_mass(&c),
            Err(Error::RowNotStochastic { row: 0, .. })
        ));
    }

    #[test]
    fn top_k_hand_case() {
        let mass = CombineMass {
            values: vec![0.3, 1.1, 0.6],
        };
        let mask = select_top_k(&mass, 2).unwrap();
        assert_eq!(mask.indices(), &[1, 2]);
    }

    #[test]
    fn top_k_full_and_ties() {
        let mass = CombineMass {
            values: vec![1.0, 1.0, 1.0, 1.0],
        };
        assert_eq!(select_top_k(&mass, 4).unwrap(), SubsetMask::full(4));
        // all-equal mass: ties go to the smaller indices
        assert_eq!(select_top_k(&mass, 2).unwrap().indices(), &[0, 1]);
    }

    #[test]
    fn top_k_range_checks() {
        let mass = CombineMass {
            values: vec![1.0, 2.0],
        };
        assert!(select_top_k(&mass, 0).is_err());
        assert!(select_top_k(&mass, 3).is_err());
    }

    #[test]
    fn bottom_k_is_the_ascending_variant() {
        let mass = CombineMass {
            values: vec![0.3, 1.1, 0.6],
        };
        assert_eq!(select_bottom_k(&mass, 2).unwrap().indices(), &[0, 2]);
    }

    #[test]
    fn algorithm1_full_k_is_bitwise_forward() {
        let mut stream = RngStream::new(10, "alg1");
        let layer = SoftMoELayer::init(3, 4, 8, &mut stream).unwrap();
        let x = sample_gaussian(&mut stream, 5, 3, 0.0, 1.0).unwrap();
        let full = layer.forward(&x).unwrap();
        let alg1 = algorithm1_forward(&layer, &x, 4).unwrap();
        assert_eq!(full.output, alg1.output);
        assert_eq!(full.expert_outputs, alg1.expert_outputs);
    }

    #[test]
    fn algorithm1_single_expert_equals_forward() {
        let mut stream = RngStream::new(11, "alg1-n1");
        let layer = SoftMoELayer::init(2, 1, 4, &mut stream).unwrap();
        let x = sample_gaussian(&mut stream, 3, 2, 0.0, 1.0).unwrap();
        let full = layer.forward(&x).unwrap();
        let alg1 = algorithm1_forward(&layer, &x, 1).unwrap();
        assert_eq!(full.output, alg1.output);
    }

    #[test]
    fn algorithm1_picks_the_favored_expert() {
        // phi = [[0, 5]] with positive tokens: combine mass concentrates on
        // expert 1, so k=1 keeps expert 1 and zeroes row 0 of Yhat
        use crate::experts::{ExpertBank, MlpExpert};
        use crate::layer::RouterParams;
        let layer = SoftMoELayer {
            router: RouterParams {
                phi: Matrix::from_vec(1, 2, vec![0.0, 5.0]).unwrap(),
            },
            bank: ExpertBank {
                experts: vec![MlpExpert::identity(1), MlpExpert::identity(1)],
                hidden_budget: 2,
            },
        };
        let x = Matrix::from_vec(2, 1, vec![2.0, 4.0]).unwrap();
        let acts = algorithm1_forward(&layer, &x, 1).unwrap();
        assert_eq!(acts.mask.as_ref().unwrap().indices(), &[1]);
        assert_eq!(acts.expert_outputs.get(0, 0), 0.0);
        assert!(acts.expert_outputs.get(1, 0) != 0.0);
    }

    #[test]
    fn batched_single_item_is_bitwise_unbatched() {
        let mut stream = RngStream::new(12, "batch1");
        let layer = SoftMoELayer::init(3, 4, 8, &mut stream).unwrap();
        let x = sample_gaussian(&mut stream, 5, 3, 0.0, 1.0).unwrap();
        let solo = algorithm1_forward(&layer, &x, 2).unwrap();
        let batch = batched_select(&layer, &[x], 2).unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch[0].output, solo.output);
        assert_eq!(batch[0].expert_outputs, solo.expert_outputs);
        assert_eq!(batch[0].mask, solo.mask);
    }

    #[test]
    fn batched_matches_per_item() {
        let mut stream = RngStream::new(13, "batch16");
        let layer = SoftMoELayer::init(4, 6, 12, &mut stream).unwrap();
        let xs: Vec<Matrix> = (0..16)
            .map(|_| sample_gaussian(&mut stream, 3, 4, 0.0, 1.0).unwrap())
            .collect();
        let batch = batched_select(&layer, &xs, 2).unwrap();
        for (x, b) in xs.iter().zip(&batch) {
            let solo = algorithm1_forward(&layer, x, 2).unwrap();
            for (a, s) in b.output.data().iter().zip(solo.output.data()) {
                assert!((a - s).abs() <= 1e-12);
            }
            assert_eq!(b.mask, solo.mask);
        }
    }

    #[test]
    fn batched_full_k_runs_every_expert_on_every_item() {
        let mut stream = RngStream::new(14, "batch-full");
        let layer = SoftMoELayer::init(2, 3, 6, &mut stream).unwrap();
        let xs: Vec<Matrix> = (0..4)
            .map(|_| sample_gaussian(&mut stream, 2, 2, 0.0, 1.0).unwrap())
            .collect();
        let batch = batched_select(&layer, &xs, 3).unwrap();
        for (x, b) in xs.iter().zip(&batch) {
            let full = layer.forward(x).unwrap();
            assert_eq!(b.output, full.output);
            assert_eq!(b.mask, Some(SubsetMask::full(3)));
        }
    }

    #[test]
    fn batched_rejects_ragged_input() {
        let mut stream = RngStream::new(15, "ragged");
        let layer = SoftMoELayer::init(2, 3, 6, &mut stream).unwrap();
        let xs = vec![Matrix::zeros(2, 2), Matrix::zeros(3, 2)];
        assert!(matches!(
            batched_select(&layer, &xs, 1),
            Err(Error::RaggedBatch { item: 1, .. })
        ));
    }

    #[test]
    fn random_subset_full_k() {
        let mut stream = RngStream::new(16, "rand-full");
        assert_eq!(
            random_subset(5, 5, &mut stream).unwrap(),
            SubsetMask::full(5)
        );
    }

    #[test]
    fn random_subset_is_reproducible() {
        let a: Vec<SubsetMask> = {
            let mut s = RngStream::new(17, "rand-repro");
            (0..20).map(|_| random_subset(6, 2, &mut s).unwrap()).collect()
        };
        let b: Vec<SubsetMask> = {
            let mut s = RngStream::new(17, "rand-repro");
            (0..20).map(|_| random_subset(6, 2, &mut s).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn random_subset_singleton_frequencies() {
        let mut stream = RngStream::new(18, "rand-freq");
        let mut count0 = 0usize;
        let draws = 10_000;
        for _ in 0..draws {
            if random_subset(2, 1, &mut stream).unwrap().contains(0) {
                count0 += 1;
            }
        }
        let freq = count0 as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.02, "frequency {freq}");
    }

    #[test]
    fn random_subset_marginal_inclusion_chi_square() {
        // each expert should appear with probability k/n
        let (n, k, draws) = (6usize, 2usize, 10_000usize);
        let mut stream = RngStream::new(19, "rand-chi2");
        let mut counts = vec![0f64; n];
        for _ in 0..draws {
            for &j in random_subset(n, k, &mut stream).unwrap().indices() {
                counts[j] += 1.0;
            }
        }
        let expected = draws as f64 * k as f64 / n as f64;
        let chi2: f64 = counts
            .iter()
            .map(|c| (c - expected) * (c - expected) / expected)
            .sum();
        // 5 dof, p > 0.001 -> chi2 below 20.5
        assert!(chi2 < 20.5, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn k_subsets_is_lexicographic_and_complete() {
        let all: Vec<SubsetMask> = k_subsets(5, 3).collect();
        assert_eq!(all.len(), 10); // C(5,3)
        assert_eq!(all[0].indices(), &[0, 1, 2]);
        assert_eq!(all[1].indices(), &[0, 1, 3]);
        assert_eq!(all.last().unwrap().indices(), &[2, 3, 4]);
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(all, sorted);
    }

    #[test]
    fn k_subsets_edge_sizes() {
        assert_eq!(k_subsets(4, 4).count(), 1);
        assert_eq!(k_subsets(4, 1).count(), 4);
        assert_eq!(k_subsets(3, 5).count(), 0);
    }

    /// d=1, m=1, n=2 single-layer model whose masked predictions are fully
    /// transparent: expert 0 is the identity, expert 1 outputs zero, and the
    /// head maps output y to logits [y, 0.1 - y, -5]. With x = 2: the full
    /// model and mask {0} predict class 0, mask {1} predicts class 1, and
    /// class 2 is unreachable.
    fn transparent_model() -> (Model, Matrix) {
        use crate::experts::{ExpertBank, MlpExpert};
        use crate::layer::RouterParams;
        use crate::training::{Head, LinearHead};
        let layer = SoftMoELayer {
            router: RouterParams {
                phi: Matrix::zeros(1, 2),
            },
            bank: ExpertBank {
                experts: vec![MlpExpert::identity(1), MlpExpert::zeros(1, 2)],
                hidden_budget: 2,
            },
        };
        let head = Head::Linear(LinearHead {
            w: Matrix::from_vec(1, 3, vec![1.0, -1.0, 0.0]).unwrap(),
            b: vec![0.0, 0.1, -5.0],
        });
        let model = Model {
            layers: vec![layer],
            head,
            tokens: 1,
            token_dim: 1,
        };
        (model, Matrix::from_vec(1, 1, vec![2.0]).unwrap())
    }

    #[test]
    fn exhaustive_finds_the_only_correct_singleton() {
        let (model, x) = transparent_model();
        // label 0 is only reachable through expert 0
        let found = exhaustive_best_subset(&model, &x, 0, 1).unwrap();
        assert_eq!(found.unwrap().indices(), &[0]);
        // label 1 is only reachable through expert 1
        let found = exhaustive_best_subset(&model, &x, 1, 1).unwrap();
        assert_eq!(found.unwrap().indices(), &[1]);
    }

    #[test]
    fn exhaustive_full_k_matches_full_prediction() {
        let (model, x) = transparent_model();
        assert_eq!(model.predict(&x).unwrap(), 0);
        let found = exhaustive_best_subset(&model, &x, 0, 2).unwrap();
        assert_eq!(found.unwrap(), SubsetMask::full(2));
    }

    #[test]
    fn exhaustive_reports_none_for_unreachable_labels() {
        let (model, x) = transparent_model();
        assert_eq!(exhaustive_best_subset(&model, &x, 2, 1).unwrap(), None);
        assert_eq!(exhaustive_best_subset(&model, &x, 2, 2).unwrap(), None);
    }

    #[test]
    fn exhaustive_requires_single_layer_models() {
        let (mut model, x) = transparent_model();
        model.layers.push(model.layers[0].clone());
        assert!(exhaustive_best_subset(&model, &x, 0, 1).is_err());
        assert!(matches!(
            exhaustive_best_subset(&transparent_model().0, &x, 0, 3),
            Err(Error::SubsetSizeOutOfRange { k: 3, n: 2 })
        ));
    }
}
