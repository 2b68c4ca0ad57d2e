//! Bag-of-words descriptors over blob pairs.
//!
//! Each surface's blobs are paired, every pair becomes a 5-dimensional
//! feature `(distance, r1, r2, resp1, resp2)` with `r1 <= r2`, features are
//! z-scored and quantized against a k-means codebook, and the per-surface
//! word counts are L1-normalized.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{Blob, Polarity};
use crate::error::{Error, Result};

pub const FEATURE_DIMS: usize = 5;
pub const DEFAULT_MAX_PAIRS: usize = 64;
pub const DEFAULT_WORDS: usize = 16;
pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobPairFeature {
    pub distance: f64,
    pub r1: f64,
    pub r2: f64,
    pub resp1: f64,
    pub resp2: f64,
    pub polarity: (Polarity, Polarity),
}

impl BlobPairFeature {
    pub fn from_pair(a: &Blob, b: &Blob) -> Self {
        let (s, l) = if a.radius <= b.radius { (a, b) } else { (b, a) };
        let distance = (0..3)
            .map(|i| (a.position[i] - b.position[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        BlobPairFeature {
            distance,
            r1: s.radius,
            r2: l.radius,
            resp1: s.response,
            resp2: l.response,
            polarity: (s.polarity, l.polarity),
        }
    }

    pub fn as_array(&self) -> [f64; FEATURE_DIMS] {
        [self.distance, self.r1, self.r2, self.resp1, self.resp2]
    }
}

/// All unordered pairs among the `max_pairs` strongest blobs (by
/// `|response|`, ties by input order).
pub fn make_pairs(blobs: &[Blob], max_pairs: usize) -> Vec<BlobPairFeature> {
    let mut order: Vec<usize> = (0..blobs.len()).collect();
    if blobs.len() * blobs.len().saturating_sub(1) / 2 > max_pairs {
        order.sort_by(|&i, &j| {
            blobs[j]
                .response
                .abs()
                .total_cmp(&blobs[i].response.abs())
                .then(i.cmp(&j))
        });
        order.truncate(max_pairs);
        order.sort_unstable();
    }
    let mut out = Vec::new();
    for (a, &i) in order.iter().enumerate() {
        for &j in &order[a + 1..] {
            out.push(BlobPairFeature::from_pair(&blobs[i], &blobs[j]));
        }
    }
    out
}

/// Feature normalization plus k-means centroids in normalized space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    #[serde(rename = "W")]
    pub words: usize,
    pub dims: usize,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub centroids: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn validate(&self) -> Result<()> {
        let ok = self.words >= 2
            && self.dims == FEATURE_DIMS
            && self.means.len() == self.dims
            && self.stds.len() == self.dims
            && self.stds.iter().all(|&s| s > 0.0 && s.is_finite())
            && self.centroids.len() == self.words
            && self
                .centroids
                .iter()
                .all(|c| c.len() == self.dims && c.iter().all(|x| x.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::Argument("malformed codebook".into()))
        }
    }

    pub fn normalize(&self, f: &BlobPairFeature) -> [f64; FEATURE_DIMS] {
        let mut x = f.as_array();
        for (d, xd) in x.iter_mut().enumerate() {
            *xd = (*xd - self.means[d]) / self.stds[d];
        }
        x
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn assign(&self, f: &BlobPairFeature) -> usize {
        nearest(&self.centroids, &self.normalize(f)).0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("codebook serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cb: Codebook = serde_json::from_str(text)?;
        cb.validate()?;
        Ok(cb)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Z-scores the corpus and runs seeded k-means++ / Lloyd with `words` clusters.
pub fn train_codebook(features: &[BlobPairFeature], words: usize, seed: u64) -> Result<Codebook> {
    if words < 2 {
        return Err(Error::Argument(format!(
            "codebook needs at least 2 words, got {words}"
        )));
    }
    if features.len() < words {
        return Err(Error::InsufficientData(format!(
            "{} blob-pair features for a {words}-word codebook",
            features.len()
        )));
    }

    let n = features.len() as f64;
    let mut means = vec![0.0; FEATURE_DIMS];
    for f in features {
        for (m, x) in means.iter_mut().zip(f.as_array()) {
            *m += x / n;
        }
    }
    let mut stds = vec![0.0; FEATURE_DIMS];
    for f in features {
        for d in 0..FEATURE_DIMS {
            stds[d] += (f.as_array()[d] - means[d]).powi(2) / n;
        }
    }
    for s in &mut stds {
        *s = s.sqrt();
        // constant dimension: leave it unscaled
        if !(*s > 0.0) {
            *s = 1.0;
        }
    }

    let mut cb = Codebook {
        words,
        dims: FEATURE_DIMS,
        means,
        stds,
        centroids: Vec::new(),
    };
    let points: Vec<[f64; FEATURE_DIMS]> = features.iter().map(|f| cb.normalize(f)).collect();
    cb.centroids = kmeans(&points, words, seed);
    Ok(cb)
}

fn kmeans_pp_init(points: &[[f64; FEATURE_DIMS]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = d2.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            // fewer distinct points than words
            centroids.len() % points.len()
        };
        centroids.push(points[pick].to_vec());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn kmeans(points: &[[f64; FEATURE_DIMS]], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(points, k, &mut rng);
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0; FEATURE_DIMS]; k];
        let mut counts = vec![0usize; k];
        let mut inertia = 0.0;
        for p in points {
            let (i, d) = nearest(&centroids, p);
            inertia += d;
            counts[i] += 1;
            for (s, x) in sums[i].iter_mut().zip(p) {
                *s += x;
            }
        }
        // empty clusters keep their previous centroid
        for i in 0..k {
            if counts[i] > 0 {
                centroids[i] = sums[i].iter().map(|s| s / counts[i] as f64).collect();
            }
        }
        let change = (prev_inertia - inertia).abs();
        if inertia == 0.0 || change <= KMEANS_REL_TOL * inertia {
            break;
        }
        prev_inertia = inertia;
    }
    centroids
}

/// Sum of squared distances from each (normalized) feature to its centroid.
pub fn inertia(features: &[BlobPairFeature], cb: &Codebook) -> f64 {
    features
        .iter()
        .map(|f| nearest(&cb.centroids, &cb.normalize(f)).1)
        .sum()
}

/// L1-normalized word histogram; all-zero when there are no features.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorVector(pub Vec<f64>);

impl DescriptorVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

pub fn encode(features: &[BlobPairFeature], cb: &Codebook) -> DescriptorVector {
    let mut hist = vec![0.0; cb.words];
    for f in features {
        hist[cb.assign(f)] += 1.0;
    }
    if !features.is_empty() {
        let n = features.len() as f64;
        hist.iter_mut().for_each(|h| *h /= n);
    }
    DescriptorVector(hist)
}

/// `surface_id,b0,...,b{W-1}` rows.
pub fn descriptors_to_csv(rows: &[(String, DescriptorVector)], words: usize) -> String {
    let mut out = String::from("surface_id");
    for w in 0..words {
        write!(out, ",b{w}").unwrap();
    }
    out.push('\n');
    for (id, d) in rows {
        out.push_str(id);
        for x in &d.0 {
            write!(out, ",{}", crate::fmt_f64(*x)).unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::ResponseKind;

    fn blob(pos: [f64; 3], radius: f64, response: f64) -> Blob {
        Blob {
            vertex: 0,
            position: pos,
            t: radius * radius / 2.0,
            radius,
            response,
            polarity: Polarity::Max,
            kind: ResponseKind::Detsum,
            level: 1,
        }
    }

    fn feat(x: [f64; 5]) -> BlobPairFeature {
        BlobPairFeature {
            distance: x[0],
            r1: x[1],
            r2: x[2],
            resp1: x[3],
            resp2: x[4],
            polarity: (Polarity::Max, Polarity::Max),
        }
    }

    #[test]
    fn pair_counts() {
        assert!(make_pairs(&[blob([0.0; 3], 1.0, 1.0)], 64).is_empty());
        assert!(make_pairs(&[], 64).is_empty());
        let three: Vec<Blob> = (0..3)
            .map(|i| blob([i as f64, 0.0, 0.0], 1.0, 1.0))
            .collect();
        assert_eq!(make_pairs(&three, 64).len(), 3);
    }

    #[test]
    fn pair_ordering_contract() {
        let a = blob([0.0, 0.0, 0.0], 2.0, 7.0);
        let b = blob([3.0, 4.0, 0.0], 1.0, 9.0);
        let f = make_pairs(&[a, b], 64)[0];
        assert_eq!(
            (f.distance, f.r1, f.r2, f.resp1, f.resp2),
            (5.0, 1.0, 2.0, 9.0, 7.0)
        );
    }

    #[test]
    fn pairs_are_capped_to_strongest_blobs() {
        let blobs: Vec<Blob> = (0..10)
            .map(|i| blob([i as f64, 0.0, 0.0], 1.0, i as f64))
            .collect();
        let pairs = make_pairs(&blobs, 4);
        assert_eq!(pairs.len(), 6);
        assert!(pairs
            .iter()
            .all(|p| p.resp1.abs() >= 6.0 && p.resp2.abs() >= 6.0));
    }

    #[test]
    fn exact_fit_on_w_points() {
        let pts: Vec<BlobPairFeature> = (0..4)
            .map(|i| feat([i as f64, (i * i) as f64, 1.0, -(i as f64), 2.0]))
            .collect();
        let cb = train_codebook(&pts, 4, 11).unwrap();
        assert!(inertia(&pts, &cb) < 1e-20);
        let mut hit: Vec<usize> = pts.iter().map(|p| cb.assign(p)).collect();
        hit.sort_unstable();
        assert_eq!(hit, vec![0, 1, 2, 3]);
    }

    #[test]
    fn training_is_deterministic() {
        let pts: Vec<BlobPairFeature> = (0..50)
            .map(|i| {
                let x = i as f64;
                feat([x.sin(), (0.3 * x).cos(), x % 7.0, x * 0.1, (x * 1.7).sin()])
            })
            .collect();
        let a = train_codebook(&pts, 5, 42).unwrap();
        let b = train_codebook(&pts, 5, 42).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(Codebook::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn insufficient_data() {
        let pts = vec![feat([1.0; 5])];
        assert!(matches!(
            train_codebook(&pts, 2, 0),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            train_codebook(&pts, 1, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn encode_contract() {
        let pts: Vec<BlobPairFeature> = (0..6).map(|i| feat([i as f64; 5])).collect();
        let cb = train_codebook(&pts, 3, 1).unwrap();
        assert_eq!(encode(&[], &cb).0, vec![0.0; 3]);
        let d = encode(&pts, &cb);
        assert!((d.sum() - 1.0).abs() < 1e-12);
        assert!(d.0.iter().all(|&x| x >= 0.0));

        let only = vec![pts[0]; 4];
        let word = cb.assign(&pts[0]);
        let d = encode(&only, &cb);
        assert_eq!(d.0[word], 1.0);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cb = Codebook {
            words: 2,
            dims: 5,
            means: vec![0.0; 5],
            stds: vec![1.0; 5],
            centroids: vec![
                vec![1.0, 0.0, 0.0, 0.0, 0.0],
                vec![-1.0, 0.0, 0.0, 0.0, 0.0],
            ],
        };
        assert_eq!(cb.assign(&feat([0.0; 5])), 0);
    }

    #[test]
    fn csv_layout() {
        let rows = vec![("a".to_string(), DescriptorVector(vec![0.5, 0.5]))];
        let csv = descriptors_to_csv(&rows, 2);
        assert!(csv.starts_with("surface_id,b0,b1\na,"));
    }
}
