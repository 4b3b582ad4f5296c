use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Table, EMBED_INIT_BOUND};
use crate::kgdata::ModalityFeatures;
use crate::real::Real;

const MISSING_SCALE: f64 = 1e-3;
const TINY: f64 = 1e-12;

/// Coordinates of every present row along the top-`k` principal directions
/// (centered, unscaled), as an `n_present × k'` matrix with
/// `k' = min(k, d^m, n_present)` and the row order of `present`.
///
/// Columns are sorted by decreasing variance; each direction's sign is fixed
/// so its largest-magnitude loading is positive.
pub fn pca_project(features: &ModalityFeatures, present: &[usize], k: usize) -> DMatrix<f64> {
    let n = present.len();
    let dim = features.dim;
    let mut x = DMatrix::<f64>::zeros(n, dim);
    for (i, &e) in present.iter().enumerate() {
        for (j, &v) in features.row(e).iter().enumerate() {
            x[(i, j)] = v as f64;
        }
    }
    for j in 0..dim {
        let mean = x.column(j).sum() / n as f64;
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let k = k.min(dim).min(n);

    if dim <= n {
        // covariance route: eigenvectors are the directions
        let cov = x.transpose() * &x / n as f64;
        let eig = SymmetricEigen::new(cov);
        let order = sorted_desc(eig.eigenvalues.as_slice());
        let mut dirs = DMatrix::<f64>::zeros(dim, k);
        for (c, &idx) in order.iter().take(k).enumerate() {
            let mut v = eig.eigenvectors.column(idx).into_owned();
            fix_sign(v.as_mut_slice());
            dirs.set_column(c, &v);
        }
        &x * dirs
    } else {
        // Gram route for wide data: X Xᵀ = U S Uᵀ, projections are U √S
        let gram = &x * x.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = sorted_desc(eig.eigenvalues.as_slice());
        let mut out = DMatrix::<f64>::zeros(n, k);
        for (c, &idx) in order.iter().take(k).enumerate() {
            let s = eig.eigenvalues[idx].max(0.0).sqrt();
            let u = eig.eigenvectors.column(idx);
            let mut col: Vec<f64> = u.iter().map(|&v| v * s).collect();
            // sign fixed through the implied direction Xᵀu
            let dir: Vec<f64> = (0..dim).map(|j| x.column(j).dot(&u)).collect();
            if leading_sign(&dir) < 0.0 {
                col.iter_mut().for_each(|v| *v = -*v);
            }
            out.set_column(c, &nalgebra::DVector::from_vec(col));
        }
        out
    }
}

fn sorted_desc(vals: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    idx
}

fn leading_sign(v: &[f64]) -> f64 {
    v.iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .map(|x| if x < 0.0 { -1.0 } else { 1.0 })
        .unwrap_or(1.0)
}

fn fix_sign(v: &mut [f64]) {
    if leading_sign(v) < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Initial task-specific table for a feature modality: principal-component
/// coordinates scaled to unit variance per dimension. Components beyond the
/// data's rank and rows of masked entities get small seeded random values.
pub fn pca_init<T: Real>(features: &ModalityFeatures, k: usize, rng: &mut ChaCha8Rng) -> Table<T> {
    let n = features.num_entities();
    let present: Vec<usize> = (0..n).filter(|&e| features.mask[e]).collect();
    if present.is_empty() {
        log::warn!("{:?} features fully masked; random task-embedding init", features.modality);
        return Table::uniform(n, k, EMBED_INIT_BOUND, rng);
    }
    let proj = pca_project(features, &present, k);
    let mut out = Table::<T>::zeros(n, k);
    for v in out.data.iter_mut() {
        *v = T::lit(rng.random_range(-MISSING_SCALE..MISSING_SCALE));
    }
    for c in 0..proj.ncols() {
        let col = proj.column(c);
        let var = col.iter().map(|v| v * v).sum::<f64>() / present.len() as f64;
        let scale = if var.sqrt() > TINY { 1.0 / var.sqrt() } else { 1.0 };
        for (i, &e) in present.iter().enumerate() {
            out.row_mut(e)[c] = T::lit(col[i] * scale);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgdata::Modality;
    use crate::rng::{stream, Stream};

    fn feats(rows: &[&[f32]]) -> ModalityFeatures {
        let dim = rows[0].len();
        let mut f = ModalityFeatures::empty(Modality::Visual, rows.len(), dim);
        for (e, r) in rows.iter().enumerate() {
            f.row_mut(e).copy_from_slice(r);
            f.mask[e] = true;
        }
        f
    }

    #[test]
    fn antipodal_points() {
        // ±v with |v| = 5
        let f = feats(&[&[3.0, 4.0, 0.0], &[-3.0, -4.0, 0.0]]);
        let p = pca_project(&f, &[0, 1], 3);
        assert_eq!(p.ncols(), 2);
        assert!((p[(0, 0)].abs() - 5.0).abs() < 1e-9);
        assert!((p[(0, 0)] + p[(1, 0)]).abs() < 1e-9);
        assert!(p[(0, 1)].abs() < 1e-9 && p[(1, 1)].abs() < 1e-9);
    }

    #[test]
    fn line_through_origin() {
        let dir = [0.6f32, 0.0, -0.8];
        let ts = [-2.0f32, -0.5, 0.0, 1.0, 1.5];
        let rows: Vec<Vec<f32>> = ts.iter().map(|&t| dir.iter().map(|&d| d * t).collect()).collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let f = feats(&refs);
        let p = pca_project(&f, &[0, 1, 2, 3, 4], 1);
        let mean_t = ts.iter().sum::<f32>() / 5.0;
        let sign = if p[(0, 0)] * ((ts[0] - mean_t) as f64) > 0.0 { 1.0 } else { -1.0 };
        for (i, &t) in ts.iter().enumerate() {
            assert!((sign * p[(i, 0)] - (t - mean_t) as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn init_standardizes_and_fills_masked_rows() {
        let mut f = feats(&[&[1.0, 2.0], &[2.0, 1.0], &[0.0, 0.5], &[4.0, 3.0], &[9.0, 9.0]]);
        f.remove(4);
        let t: Table<f64> = pca_init(&f, 4, &mut stream(0, Stream::Init));
        assert_eq!(t.shape(), (5, 4));
        for c in 0..2 {
            let var = (0..4).map(|e| t.row(e)[c].powi(2)).sum::<f64>() / 4.0;
            assert!((var - 1.0).abs() < 1e-9);
        }
        // padded dims and the masked row stay small
        assert!(t.row(4).iter().all(|v| v.abs() <= 1e-3));
        assert!((0..5).all(|e| t.row(e)[3].abs() <= 1e-3));
    }

    #[test]
    fn all_masked_falls_back_to_random() {
        let f = ModalityFeatures::empty(Modality::Textual, 3, 4);
        let t: Table<f32> = pca_init(&f, 2, &mut stream(0, Stream::Init));
        assert!(t.data.iter().all(|v| v.abs() <= EMBED_INIT_BOUND as f32));
        assert!(t.data.iter().any(|&v| v != 0.0));
    }
}
