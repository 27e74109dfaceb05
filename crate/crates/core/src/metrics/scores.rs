use crate::error::{Error, Result};

/// Largest `k` solved by exhaustive search in [`clustering_accuracy`].
const BRUTE_FORCE_MAX: usize = 6;

fn dense_ids(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut uniq = labels.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let ids = labels
        .iter()
        .map(|l| uniq.binary_search(l).expect("label present"))
        .collect();
    (ids, uniq.len())
}

/// `k_pred × k_true` count table over the distinct labels on each side.
pub fn contingency(pred: &[usize], truth: &[usize]) -> Result<Vec<Vec<usize>>> {
    if pred.len() != truth.len() {
        return Err(Error::shape("contingency", &[pred.len()], &[truth.len()]));
    }
    let (p, kp) = dense_ids(pred);
    let (t, kt) = dense_ids(truth);
    let mut table = vec![vec![0usize; kt]; kp];
    for (&a, &b) in p.iter().zip(&t) {
        table[a][b] += 1;
    }
    Ok(table)
}

fn square(weights: &[Vec<usize>]) -> (Vec<Vec<i64>>, usize) {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let k = rows.max(cols);
    let mut m = vec![vec![0i64; k]; k];
    for (i, row) in weights.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            m[i][j] = w as i64;
        }
    }
    (m, k)
}

/// Maximum total weight of a one-to-one row/column matching, by trying every
/// permutation.
pub fn assignment_brute_force(weights: &[Vec<usize>]) -> usize {
    let (m, k) = square(weights);
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0i64;
    permute(&mut perm, 0, &m, &mut best);
    best as usize
}

fn permute(perm: &mut [usize], at: usize, m: &[Vec<i64>], best: &mut i64) {
    if at == perm.len() {
        let total = perm.iter().enumerate().map(|(i, &j)| m[i][j]).sum();
        *best = (*best).max(total);
        return;
    }
    for i in at..perm.len() {
        perm.swap(at, i);
        permute(perm, at + 1, m, best);
        perm.swap(at, i);
    }
}

/// Maximum total weight of a one-to-one row/column matching via the
/// Hungarian method with potentials, `O(k³)`.
pub fn assignment_hungarian(weights: &[Vec<usize>]) -> usize {
    let (m, k) = square(weights);
    if k == 0 {
        return 0;
    }
    let top = m.iter().flatten().copied().max().unwrap_or(0);
    let cost = |i: usize, j: usize| top - m[i - 1][j - 1];
    // 1-based arrays; column 0 is a sentinel.
    let mut u = vec![0i64; k + 1];
    let mut v = vec![0i64; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for row in 1..=k {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=k).map(|j| m[owner[j] - 1][j - 1]).sum::<i64>() as usize
}

/// Fraction of samples matched under the best one-to-one mapping of
/// predicted clusters to true classes.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = contingency(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let k = table.len().max(table.first().map_or(0, Vec::len));
    let matched = if k <= BRUTE_FORCE_MAX {
        assignment_brute_force(&table)
    } else {
        assignment_hungarian(&table)
    };
    Ok(matched as f64 / pred.len() as f64)
}

struct Marginals {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    table: Vec<Vec<usize>>,
}

fn marginals(pred: &[usize], truth: &[usize]) -> Result<Marginals> {
    let table = contingency(pred, truth)?;
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..table.first().map_or(0, Vec::len))
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    Ok(Marginals {
        n: pred.len(),
        rows,
        cols,
        table,
    })
}

fn entropy(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_information(m: &Marginals) -> f64 {
    let n = m.n as f64;
    let mut total = 0.0;
    for (i, row) in m.table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                total += c / n * (n * c / (m.rows[i] as f64 * m.cols[j] as f64)).ln();
            }
        }
    }
    total.max(0.0)
}

/// `I(U;V) / sqrt(H(U)·H(V))`. Two single-cluster partitions score 1; a
/// single cluster against anything else scores 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let m = marginals(pred, truth)?;
    let (hu, hv) = (entropy(&m.rows, m.n), entropy(&m.cols, m.n));
    if hu == 0.0 || hv == 0.0 {
        return Ok(if hu == hv { 1.0 } else { 0.0 });
    }
    Ok((mutual_information(&m) / (hu * hv).sqrt()).min(1.0))
}

/// Expected mutual information of two random partitions with the given
/// marginals under the hypergeometric model.
fn expected_mutual_information(m: &Marginals) -> f64 {
    let n = m.n;
    let mut ln_fact = vec![0.0f64; n + 1];
    for i in 1..=n {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &m.rows {
        for &b in &m.cols {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            for nij in lo..=hi {
                let x = nij as f64;
                let term = x / nf * (nf * x / (a as f64 * b as f64)).ln();
                let ln_p = ln_fact[a] + ln_fact[b] + ln_fact[n - a] + ln_fact[n - b]
                    - ln_fact[n]
                    - ln_fact[nij]
                    - ln_fact[a - nij]
                    - ln_fact[b - nij]
                    - ln_fact[n + nij - a - b];
                emi += term * ln_p.exp();
            }
        }
    }
    emi
}

/// `(I − E[I]) / (mean(H(U), H(V)) − E[I])` with the arithmetic mean.
/// Two single-cluster partitions score 1.
pub fn ami(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let m = marginals(pred, truth)?;
    if m.rows.len() <= 1 && m.cols.len() <= 1 {
        return Ok(1.0);
    }
    let mi = mutual_information(&m);
    let emi = expected_mutual_information(&m);
    let mean_h = 0.5 * (entropy(&m.rows, m.n) + entropy(&m.cols, m.n));
    let mut denom = mean_h - emi;
    if denom.abs() < f64::EPSILON {
        denom = if denom < 0.0 { -f64::EPSILON } else { f64::EPSILON };
    }
    Ok((mi - emi) / denom)
}
