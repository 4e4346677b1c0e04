//! k-means with k-means++ seeding and Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the relative inertia decrease falls below this.
    pub tol: f64,
}

impl KMeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    /// `[k x F]`.
    pub centroids: Tensor<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step; non-increasing.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest row of `c`; ties go to the
/// lowest index.
fn nearest(x: &[f64], c: &Tensor<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..c.rows() {
        let d = sq_dist(x, c.row(j));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus(x: &Tensor<f64>, k: usize, rng: &mut impl Rng) -> Result<Tensor<f64>> {
    let (m, f) = x.dims2()?;
    let mut centroids = Vec::with_capacity(k * f);
    let first = rng.random_range(0..m);
    centroids.extend_from_slice(x.row(first));
    let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateClustering(format!(
                "only {c} distinct points for k = {k}"
            )));
        }
        let mut r = rng.random::<f64>() * total;
        let mut pick = m - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && r < d {
                pick = i;
                break;
            }
            r -= d;
        }
        while d2[pick] <= 0.0 {
            pick -= 1;
        }
        let row = x.row(pick).to_vec();
        for (i, di) in d2.iter_mut().enumerate() {
            *di = di.min(sq_dist(x.row(i), &row));
        }
        centroids.extend_from_slice(&row);
    }
    Tensor::new(&[k, f], centroids)
}

/// Clusters the rows of `x` into `opts.k` groups.
pub fn kmeans<T: Scalar>(x: &Tensor<T>, opts: &KMeansOptions) -> Result<KMeans> {
    let x: Tensor<f64> = x.cast();
    let (m, f) = x.dims2()?;
    let k = opts.k;
    if k == 0 || m < k {
        return Err(Error::Size(format!("k-means needs 1 <= k <= M, got k = {k}, M = {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut centroids = seed_plus_plus(&x, k, &mut rng)?;
    let mut assignments = vec![0; m];
    let mut dists = vec![0.0; m];
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..opts.max_iter.max(1) {
        for i in 0..m {
            let (j, d) = nearest(x.row(i), &centroids);
            assignments[i] = j;
            dists[i] = d;
        }
        // empty clusters take the point farthest from its centroid
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let (far, _) = dists
                .iter()
                .enumerate()
                .filter(|(i, _)| counts[assignments[*i]] > 1)
                .fold((usize::MAX, -1.0), |b, (i, &d)| if d > b.1 { (i, d) } else { b });
            if far == usize::MAX {
                return Err(Error::DegenerateClustering(format!(
                    "cannot fill empty cluster {j}"
                )));
            }
            counts[assignments[far]] -= 1;
            counts[j] = 1;
            assignments[far] = j;
            dists[far] = 0.0;
            centroids.row_mut(j).copy_from_slice(x.row(far));
        }
        let inertia: f64 = dists.iter().sum();
        if let Some(&prev) = history.last() {
            debug_assert!(
                inertia <= prev * (1.0 + 1e-12) + 1e-300,
                "inertia increased: {prev} -> {inertia}"
            );
        }
        history.push(inertia);
        // update step
        let mut sums = vec![0.0; k * f];
        for (i, &a) in assignments.iter().enumerate() {
            for (s, &v) in sums[a * f..(a + 1) * f].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            let inv = 1.0 / counts[j] as f64;
            for (c, s) in centroids.row_mut(j).iter_mut().zip(&sums[j * f..(j + 1) * f]) {
                *c = s * inv;
            }
        }
        let n = history.len();
        if n >= 2 {
            let prev = history[n - 2];
            if prev <= 0.0 || (prev - inertia) / prev < opts.tol {
                break;
            }
        }
    }
    // final assignment against the updated centroids
    let mut inertia = 0.0;
    for i in 0..m {
        let (j, d) = nearest(x.row(i), &centroids);
        assignments[i] = j;
        inertia += d;
    }
    if let Some(&prev) = history.last() {
        debug_assert!(inertia <= prev * (1.0 + 1e-12) + 1e-300);
        if inertia < prev {
            history.push(inertia);
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        inertia,
        history,
    })
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    /// Nearest-centroid label for every row of `x`.
    pub fn assign<T: Scalar>(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let (_, f) = x.dims2()?;
        if f != self.centroids.last_dim() {
            return Err(Error::dim(format!(
                "features have width {f}, centroids {}",
                self.centroids.last_dim()
            )));
        }
        let x: Tensor<f64> = x.cast();
        Ok((0..x.rows()).map(|i| nearest(x.row(i), &self.centroids).0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> (Tensor<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -5.0 } else { 5.0 };
            data.push(centre + noise.sample(&mut rng));
            data.push(centre + noise.sample(&mut rng));
            truth.push(c);
        }
        (Tensor::new(&[n, 2], data).unwrap(), truth)
    }

    #[test]
    fn k_equals_m_gives_zero_inertia() {
        let (x, _) = blobs(7, 1);
        let r = kmeans(&x, &KMeansOptions::new(7, 3)).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 7);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let (x, _) = blobs(20, 2);
        let r = kmeans(&x, &KMeansOptions::new(1, 0)).unwrap();
        let mean = x.mean_rows().unwrap();
        for (c, m) in r.centroids.data().iter().zip(mean.data()) {
            assert!((c - m).abs() < 1e-12);
        }
        assert!(r.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn separated_blobs_recovered_up_to_permutation() {
        let (x, truth) = blobs(200, 5);
        let r = kmeans(&x, &KMeansOptions::new(2, 9)).unwrap();
        // brute-force nearest-centroid oracle
        for i in 0..x.rows() {
            let d: Vec<f64> = (0..2).map(|j| sq_dist(x.row(i), r.centroids.row(j))).collect();
            let best = if d[1] < d[0] { 1 } else { 0 };
            assert_eq!(r.assignments[i], best);
        }
        let flip = r.assignments[0] != truth[0];
        for (a, t) in r.assignments.iter().zip(&truth) {
            assert_eq!(*a, if flip { 1 - t } else { *t });
        }
    }

    #[test]
    fn inertia_history_is_non_increasing_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..600).map(|_| rng.random::<f64>()).collect();
        let x = Tensor::new(&[200, 3], data).unwrap();
        let opts = KMeansOptions {
            tol: 0.0,
            ..KMeansOptions::new(8, 1)
        };
        let r = kmeans(&x, &opts).unwrap();
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        assert_eq!(r, kmeans(&x, &opts).unwrap());
    }

    #[test]
    fn errors() {
        let x = Tensor::<f64>::zeros(&[5, 2]);
        assert!(matches!(
            kmeans(&x, &KMeansOptions::new(2, 0)),
            Err(Error::DegenerateClustering(_))
        ));
        assert!(matches!(kmeans(&x, &KMeansOptions::new(6, 0)), Err(Error::Size(_))));
        let r = kmeans(&x, &KMeansOptions::new(1, 0)).unwrap();
        assert_eq!(r.assignments, vec![0; 5]);
    }
}
