//! k-means on 3-D points: k-means++ seeding, Lloyd iterations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<[f64; 3]>,
    pub labels: Vec<usize>,
    pub iterations: usize,
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Index of the nearest centre; ties go to the smaller index.
pub fn nearest(centers: &[[f64; 3]], p: &[f64; 3]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in centers.iter().enumerate() {
        let d = d2(c, p);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

pub fn kmeans(points: &[[f64; 3]], k: usize, max_iter: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || points.len() < k {
        return Err(Error::InvalidInput(format!("k-means needs 1 <= k <= {} points, got k = {k}", points.len())));
    }
    let mut rng = stream(seed, "kmeans");
    let mut centers = vec![points[rng.gen_range(0..points.len())]];
    let mut dist: Vec<f64> = points.iter().map(|p| d2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total <= 0.0 {
            // duplicates only: take the first point not already a centre
            points.iter().position(|p| !centers.contains(p)).unwrap_or(0)
        } else {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in dist.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        };
        centers.push(points[next]);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(d2(p, &points[next]));
        }
    }
    let mut labels = vec![0usize; points.len()];
    let mut it = 0;
    loop {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let n = nearest(&centers, p);
            if *l != n || it == 0 {
                changed |= *l != n;
                *l = n;
            }
        }
        it += 1;
        let mut sum = vec![[0.0; 3]; k];
        let mut cnt = vec![0usize; k];
        for (l, p) in labels.iter().zip(points) {
            for a in 0..3 {
                sum[*l][a] += p[a];
            }
            cnt[*l] += 1;
        }
        for c in 0..k {
            if cnt[c] > 0 {
                centers[c] = [sum[c][0] / cnt[c] as f64, sum[c][1] / cnt[c] as f64, sum[c][2] / cnt[c] as f64];
            } else {
                // empty cluster: move it to the point farthest from its centre
                let far = (0..points.len())
                    .max_by(|&a, &b| d2(&points[a], &centers[labels[a]]).total_cmp(&d2(&points[b], &centers[labels[b]])).then(b.cmp(&a)))
                    .unwrap();
                centers[c] = points[far];
                labels[far] = c;
                changed = true;
            }
        }
        if (!changed && it > 1) || it >= max_iter {
            break;
        }
    }
    Ok(KMeans { centers, labels, iterations: it })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_blobs() {
        let mut pts = Vec::new();
        for i in 0..50 {
            let t = i as f64 * 0.01;
            pts.push([t, 0.0, 0.0]);
            pts.push([10.0 + t, 0.0, 0.0]);
            pts.push([0.0, 10.0 + t, 0.0]);
        }
        let km = kmeans(&pts, 3, 100, 1).unwrap();
        for c in 0..3 {
            let l = km.labels[c];
            assert!((0..50).all(|i| km.labels[3 * i + c] == l));
        }
        let mut ls = km.labels[..3].to_vec();
        ls.sort();
        ls.dedup();
        assert_eq!(ls.len(), 3);
    }

    #[test]
    fn duplicates_and_errors() {
        let pts = vec![[1.0, 1.0, 1.0]; 5];
        let km = kmeans(&pts, 2, 10, 0).unwrap();
        assert_eq!(km.centers.len(), 2);
        assert!(kmeans(&pts, 6, 10, 0).is_err());
        assert!(kmeans(&pts, 0, 10, 0).is_err());
    }
}
