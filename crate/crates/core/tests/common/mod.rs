//! Brute-force oracles shared by the metric tests and the acceptance run.
#![allow(dead_code)]

pub fn pair_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

pub fn dcg(labels: &[u8]) -> f64 {
    let mut s = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        s += (2f64.powi(i32::from(l)) - 1.0) / ((i + 2) as f64).log2();
    }
    s
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

pub fn perm_ndcg(labels: &[u8]) -> Option<f64> {
    let best = permutations(labels.len())
        .iter()
        .map(|p| dcg(&p.iter().map(|&i| labels[i]).collect::<Vec<_>>()))
        .fold(0.0, f64::max);
    (best > 0.0).then(|| dcg(labels) / best)
}

pub fn pair_kendall(a: &[u32], b: &[u32]) -> f64 {
    let pos = |v: &[u32], x: u32| v.iter().position(|&y| y == x).unwrap();
    let m = a.len();
    if m < 2 {
        return 0.0;
    }
    let mut d = 0;
    for i in 0..m {
        for j in 0..m {
            let (x, y) = (a[i], a[j]);
            if i < j && pos(b, x) > pos(b, y) {
                d += 1;
            }
        }
    }
    d as f64 / (m * (m - 1) / 2) as f64
}
