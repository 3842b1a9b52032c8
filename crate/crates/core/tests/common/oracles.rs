//! Brute-force reference implementations. Each one is written for clarity
//! over speed and shares no code with the library beyond the matrix type.

use brainhg::augment::{census_weights, global_dynamic_fc};
use brainhg::autodiff::Matrix;
use brainhg::graphbuild::{
    block_adjacency, combine_hetero, community_level_hetero, node_level_hetero, threshold_normalize,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pearson correlation from raw sums, `n Sxy - Sx Sy` over the root of the
/// two variance terms.
pub fn naive_pearson(series: &Matrix) -> Matrix {
    let (n, t) = series.dim();
    let tf = t as f64;
    let mut out = Matrix::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for k in 0..t {
                let (x, y) = (series[[i, k]], series[[j, k]]);
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
            }
            let num = tf * sxy - sx * sy;
            let den = ((tf * sxx - sx * sx) * (tf * syy - sy * sy)).sqrt();
            out[[i, j]] = num / den;
        }
    }
    out
}

fn cosine_at(a: &Matrix, i: usize, b: &Matrix, j: usize) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for c in 0..a.ncols() {
        dot += a[[i, c]] * b[[j, c]];
    }
    for c in 0..a.ncols() {
        na += a[[i, c]] * a[[i, c]];
    }
    for c in 0..b.ncols() {
        nb += b[[j, c]] * b[[j, c]];
    }
    let (na, nb) = (f64::sqrt(na), f64::sqrt(nb));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Keep the `k` largest nonnegative cosine similarities per fMRI row after
/// a full stable sort (ties resolved by column order).
pub fn brute_top_k(a_f: &Matrix, a_d: &Matrix, k: usize) -> Matrix {
    let n_d = a_d.nrows();
    let mut out = Matrix::zeros((a_f.nrows(), n_d));
    for i in 0..a_f.nrows() {
        let sims: Vec<f64> = (0..n_d)
            .map(|j| cosine_at(a_f, i, a_d, j).max(0.0))
            .collect();
        let mut cols: Vec<usize> = (0..n_d).collect();
        cols.sort_by(|&x, &y| sims[y].partial_cmp(&sims[x]).unwrap());
        for &j in cols.iter().take(k) {
            out[[i, j]] = sims[j];
        }
    }
    out
}

/// Every unordered triple checked for closure in both graphs.
pub fn brute_shared_triangles(a_f: &Matrix, a_d: &Matrix) -> Matrix {
    let n = a_f.nrows();
    let both = |p: usize, q: usize| a_f[[p, q]] > 0.0 && a_d[[p, q]] > 0.0;
    let mut out = Matrix::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                if both(i, j) && both(j, k) && both(i, k) {
                    for (p, q) in [(i, j), (j, i), (j, k), (k, j), (i, k), (k, i)] {
                        out[[p, q]] = 1.0;
                    }
                }
            }
        }
    }
    out
}

fn largest(m: &Matrix) -> f64 {
    let mut best = 0.0;
    for &v in m.iter() {
        if v > best {
            best = v;
        }
    }
    best
}

/// Sum, then divide by the largest entry if it is positive.
pub fn brute_combine(node: &Matrix, community: &Matrix) -> Matrix {
    let sum = node + community;
    let top = largest(&sum);
    if top > 0.0 {
        sum.mapv(|v| v / top)
    } else {
        sum
    }
}

/// Zero below `tau` and on the diagonal, then divide by the largest
/// survivor.
pub fn brute_threshold(raw: &Matrix, tau: f64) -> Matrix {
    let n = raw.nrows();
    let mut m = Matrix::zeros(raw.dim());
    for i in 0..n {
        for j in 0..raw.ncols() {
            if i != j && raw[[i, j]] >= tau {
                m[[i, j]] = raw[[i, j]];
            }
        }
    }
    let top = largest(&m);
    if top > 0.0 {
        m.mapv_inplace(|v| v / top);
    }
    m
}

/// `[[A_f, A_fd], [A_fd^T, A_d]]` filled entry by entry.
pub fn brute_block(a_f: &Matrix, a_fd: &Matrix, a_d: &Matrix) -> Matrix {
    let (nf, nd) = (a_f.nrows(), a_d.nrows());
    let mut out = Matrix::zeros((nf + nd, nf + nd));
    for r in 0..nf + nd {
        for c in 0..nf + nd {
            out[[r, c]] = match (r < nf, c < nf) {
                (true, true) => a_f[[r, c]],
                (true, false) => a_fd[[r, c - nf]],
                (false, true) => a_fd[[c, r - nf]],
                (false, false) => a_d[[r - nf, c - nf]],
            };
        }
    }
    out
}

/// Windows as explicit column copies.
pub fn brute_windows(series: &Matrix, width: usize, stride: usize) -> Vec<Matrix> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + width <= series.ncols() {
        out.push(Matrix::from_shape_fn((series.nrows(), width), |(r, c)| {
            series[[r, start + c]]
        }));
        start += stride;
    }
    out
}

/// Counts of third nodes `k` around edge `(i, j)` by the number of the
/// three pair edges present in every window.
pub fn brute_census(fcs: &[Matrix], i: usize, j: usize) -> [u32; 3] {
    let shared = |p: usize, q: usize| fcs.iter().all(|f| f[[p, q]] > 0.0);
    let mut counts = [0u32; 3];
    if i == j || !shared(i, j) {
        return counts;
    }
    for k in 0..fcs[0].nrows() {
        if k == i || k == j {
            continue;
        }
        let edges = [shared(i, j), shared(j, k), shared(i, k)]
            .iter()
            .filter(|&&e| e)
            .count();
        counts[edges - 1] += 1;
    }
    counts
}

/// Probability that a random positive outscores a random negative, ties
/// counting half.
pub fn mann_whitney_auc(scores: &[f64], labels: &[usize]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (a, &ya) in labels.iter().enumerate() {
        for (b, &yb) in labels.iter().enumerate() {
            if ya == 1 && yb == 0 {
                pairs += 1.0;
                if scores[a] > scores[b] {
                    wins += 1.0;
                } else if scores[a] == scores[b] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Central difference of `f` along every entry of `x`.
pub fn finite_difference<F: Fn(&Matrix) -> f64>(f: F, x: &Matrix, step: f64) -> Matrix {
    let mut grad = Matrix::zeros(x.dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + step;
        let up = f(&probe);
        probe[idx] = orig - step;
        let down = f(&probe);
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * step);
    }
    grad
}

/// Block-diagonal assignment `[[D_f, 0], [0, D_d]]`.
pub fn padded_assignment(d_f: &Matrix, d_d: &Matrix) -> Matrix {
    let (nf, kf) = d_f.dim();
    let (nd, kd) = d_d.dim();
    let mut p = Matrix::zeros((nf + nd, kf + kd));
    for r in 0..nf {
        for c in 0..kf {
            p[[r, c]] = d_f[[r, c]];
        }
    }
    for r in 0..nd {
        for c in 0..kd {
            p[[nf + r, kf + c]] = d_d[[r, c]];
        }
    }
    p
}

/// Triple-loop matrix product.
pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros((a.nrows(), b.ncols()));
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut s = 0.0;
            for k in 0..a.ncols() {
                s += a[[i, k]] * b[[k, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// `P^T A P` on the full padded matrices.
pub fn padded_pool(p: &Matrix, a: &Matrix) -> Matrix {
    naive_matmul(&naive_matmul(&p.t().to_owned(), a), p)
}

/// Random symmetric weighted adjacency with empty diagonal. With `ties`
/// the weights come from a four-level grid.
pub fn random_adjacency(rng: &mut ChaCha8Rng, n: usize, density: f64, ties: bool) -> Matrix {
    let mut m = Matrix::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < density {
                let w = if ties {
                    f64::from(rng.random_range(1..=4u8)) / 4.0
                } else {
                    rng.random_range(0.05..1.0)
                };
                m[[i, j]] = w;
                m[[j, i]] = w;
            }
        }
    }
    m
}

pub fn random_binary(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Matrix {
    random_adjacency(rng, n, density, true).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub name: &'static str,
    pub instances: usize,
    pub mismatches: usize,
    pub first_failure: Option<String>,
}

impl OracleCheck {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            instances: 0,
            mismatches: 0,
            first_failure: None,
        }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.instances += 1;
        if !ok {
            self.mismatches += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(detail());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.mismatches == 0 && self.instances > 0
    }
}

/// Compare the construction steps with the brute-force oracles on
/// `instances` random graphs of 3 to 12 nodes. Matches must be exact.
pub fn run_oracle_suite(seed: u64, instances: usize) -> Vec<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut top_k = OracleCheck::new("node-level top-k");
    let mut triangles = OracleCheck::new("shared triangles");
    let mut combine = OracleCheck::new("combine and normalise");
    let mut threshold = OracleCheck::new("threshold and normalise");
    let mut block = OracleCheck::new("block assembly");
    let mut census = OracleCheck::new("window triple census");
    for inst in 0..instances {
        let n = rng.random_range(3..=12usize);
        let ties = inst % 2 == 0;
        let density = rng.random_range(0.2..0.9);
        let a_f = random_adjacency(&mut rng, n, density, ties);
        let density = rng.random_range(0.2..0.9);
        let a_d = random_adjacency(&mut rng, n, density, ties);
        let k = rng.random_range(1..=n);

        let got = node_level_hetero(&a_f, &a_d, k).expect("valid top-k input");
        let want = brute_top_k(&a_f, &a_d, k);
        top_k.record(got == want, || format!("instance {inst}: n={n} k={k}"));

        let got_tri = community_level_hetero(&a_f, &a_d).expect("square blocks");
        let want_tri = brute_shared_triangles(&a_f, &a_d);
        triangles.record(got_tri == want_tri, || format!("instance {inst}: n={n}"));

        let got_c = combine_hetero(&got, &got_tri).expect("same shape");
        combine.record(got_c == brute_combine(&want, &want_tri), || {
            format!("instance {inst}: n={n}")
        });

        let raw = Matrix::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        let tau = rng.random_range(-0.5..0.8);
        threshold.record(
            threshold_normalize(&raw, tau) == brute_threshold(&raw, tau),
            || format!("instance {inst}: n={n} tau={tau}"),
        );

        let n_d = rng.random_range(1..=12usize);
        let a_d2 = random_adjacency(&mut rng, n_d, 0.5, ties);
        let a_fd = Matrix::from_shape_fn((n, n_d), |_| rng.random::<f64>());
        block.record(
            block_adjacency(&a_f, &a_fd, &a_d2) == brute_block(&a_f, &a_fd, &a_d2),
            || format!("instance {inst}: {n}+{n_d}"),
        );

        let windows = rng.random_range(2..=4usize);
        let density = rng.random_range(0.5..0.95);
        let fcs: Vec<Matrix> = (0..windows)
            .map(|_| random_binary(&mut rng, n, density))
            .collect();
        let alpha = [
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
        ];
        let weights = census_weights(&fcs, &alpha);
        let mut ok = true;
        for i in 0..n {
            for j in 0..n {
                let c = if i == j {
                    [0; 3]
                } else {
                    brute_census(&fcs, i, j)
                };
                let w = alpha[0] * f64::from(c[0])
                    + alpha[1] * f64::from(c[1])
                    + alpha[2] * f64::from(c[2]);
                ok &= weights[[i, j]] == w;
            }
        }
        let tau_g = rng.random_range(0.0..0.5);
        ok &= global_dynamic_fc(&fcs, &alpha, tau_g).expect("nonnegative alpha")
            == brute_threshold_keep_diag(&weights, tau_g);
        census.record(ok, || format!("instance {inst}: n={n} windows={windows}"));
    }
    vec![top_k, triangles, combine, threshold, block, census]
}

/// Zero below `tau`, then divide by the largest survivor. The diagonal of a
/// census matrix is already zero.
pub fn brute_threshold_keep_diag(raw: &Matrix, tau: f64) -> Matrix {
    let mut m = raw.mapv(|v| if v >= tau { v } else { 0.0 });
    let top = largest(&m);
    if top > 0.0 {
        m.mapv_inplace(|v| v / top);
    }
    m
}
