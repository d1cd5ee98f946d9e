//! Slow, obviously-correct reference computations used by the acceptance
//! suite. Nothing here shares code with `emergence-core`.

/// Emergence of a fully connected layered net by walking every path.
///
/// In layer `i` the first `active[i]` nodes are active. For each edge from an
/// inactive node to an active node in the next layer, every path that starts
/// at that head and stays on active nodes is counted, including the path of
/// length zero.
pub fn brute_emergence(sizes: &[usize], active: &[usize]) -> u128 {
    assert_eq!(sizes.len(), active.len());
    let mut total = 0;
    for i in 0..sizes.len().saturating_sub(1) {
        let inactive = (sizes[i] - active[i]) as u128;
        for _head in 0..active[i + 1] {
            total += inactive * walks_from(i + 1, active);
        }
    }
    total
}

fn walks_from(layer: usize, active: &[usize]) -> u128 {
    let mut count = 1;
    if layer + 1 < active.len() {
        for _next in 0..active[layer + 1] {
            count += walks_from(layer + 1, active);
        }
    }
    count
}

/// `−n_{i−1} + Σ_{j>i} Π_{k=i+1}^{j} n_k` with `n_0 = 0`, for 1-based `i`.
pub fn delta(sizes: &[usize], i: usize) -> i128 {
    let n = |k: usize| sizes[k - 1] as i128;
    let mut d = if i == 1 { 0 } else { -n(i - 1) };
    let mut prod = 1;
    for j in i + 1..=sizes.len() {
        prod *= n(j);
        d += prod;
    }
    d
}

/// Largest 1-based layer index whose delta is strictly positive.
pub fn last_positive_delta(sizes: &[usize]) -> Option<usize> {
    (1..=sizes.len()).rev().find(|&i| delta(sizes, i) > 0)
}
