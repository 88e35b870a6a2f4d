//! Z-score normalization and linear PCA fitted on training flights.
//!
//! Both transforms use population moments (denominator n). Test flights are
//! always transformed with the parameters fitted on the training set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::FrameSeries;
use crate::matrix::Matrix;

/// Features whose standard deviation falls below this are unusable.
pub const MIN_STD: f64 = 1e-12;

pub const NORMALIZATION_KIND: &str = "normalization";
pub const PCA_KIND: &str = "pca";
pub const TRANSFORM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn stacked(series: &[FrameSeries]) -> Result<(Vec<String>, Vec<&[f64]>)> {
    let first = series
        .first()
        .ok_or_else(|| Error::Data("no frame series to fit on".into()))?;
    for s in series {
        if s.feature_names != first.feature_names {
            return Err(Error::Data(format!(
                "flight {} has a different feature set from flight {}",
                s.flight_id, first.flight_id
            )));
        }
    }
    let rows = series.iter().flat_map(|s| s.frames.iter_rows()).collect();
    Ok((first.feature_names.clone(), rows))
}

impl NormalizationParams {
    /// Fit on the concatenation of all `series`.
    pub fn fit(series: &[FrameSeries]) -> Result<Self> {
        let (names, rows) = stacked(series)?;
        if rows.len() < 2 {
            return Err(Error::Data("z-score fit needs at least 2 frames".into()));
        }
        let d = names.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for row in &rows {
            for (m, v) in mean.iter_mut().zip(*row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in &rows {
            for ((s, v), m) in var.iter_mut().zip(*row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        for (name, s) in names.iter().zip(&std) {
            if !(*s >= MIN_STD) {
                return Err(Error::Data(format!(
                    "feature '{name}' has standard deviation {s:e}; it should have been rejected"
                )));
            }
        }
        Ok(Self {
            feature_names: names,
            mean,
            std,
        })
    }

    fn check(&self, frames: &FrameSeries) -> Result<()> {
        if frames.feature_names != self.feature_names {
            return Err(Error::Data(format!(
                "flight {}: features do not match the fitted normalization",
                frames.flight_id
            )));
        }
        Ok(())
    }

    pub fn apply(&self, frames: &FrameSeries) -> Result<FrameSeries> {
        self.check(frames)?;
        let mut out = frames.frames.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        frames.with_frames(self.feature_names.clone(), out)
    }

    pub fn invert(&self, frames: &FrameSeries) -> Result<FrameSeries> {
        self.check(frames)?;
        let mut out = frames.frames.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        frames.with_frames(self.feature_names.clone(), out)
    }
}

pub fn fit_zscore(frames: &FrameSeries) -> Result<NormalizationParams> {
    NormalizationParams::fit(std::slice::from_ref(frames))
}

pub fn apply_zscore(frames: &FrameSeries, params: &NormalizationParams) -> Result<FrameSeries> {
    params.apply(frames)
}

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum ComponentCount {
    /// Exactly this many (error when larger than the input dimension).
    Fixed(usize),
    /// Smallest k whose cumulative explained-variance ratio reaches the target.
    VarianceTarget(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub input_names: Vec<String>,
    pub input_mean: Vec<f64>,
    /// `[input_dim × k]`, orthonormal columns.
    pub components: Matrix,
    /// Eigenvalues of the kept components, descending.
    pub explained_variance: Vec<f64>,
    /// Trace of the covariance matrix (sum over all eigenvalues).
    pub total_variance: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn k(&self) -> usize {
        self.components.cols()
    }

    pub fn output_names(&self) -> Vec<String> {
        (0..self.k()).map(|i| format!("pc{i}")).collect()
    }

    pub fn fit(series: &[FrameSeries], count: ComponentCount) -> Result<Self> {
        let (names, rows) = stacked(series)?;
        let d = names.len();
        let (cov, mean) = covariance(&rows, d);
        let (values, vectors) = symmetric_eigen(&cov)?;
        let total_variance: f64 = values.iter().map(|v| v.max(0.0)).sum();

        let k = match count {
            ComponentCount::Fixed(k) => {
                if k == 0 || k > d {
                    return Err(Error::Config(format!(
                        "PCA component count {k} must lie in 1..={d}"
                    )));
                }
                k
            }
            ComponentCount::VarianceTarget(target) => {
                if !(target > 0.0 && target <= 1.0) {
                    return Err(Error::Config(format!(
                        "PCA variance target {target} must lie in (0, 1]"
                    )));
                }
                let ratios = cumulative_ratios(&values, total_variance);
                // Guard against round-off leaving the final ratio a hair under 1.
                ratios
                    .iter()
                    .position(|&r| r >= target - 1e-12)
                    .map_or(d, |i| i + 1)
            }
        };
        if rows.len() <= k {
            return Err(Error::Data(format!(
                "PCA needs more frames ({}) than components ({k})",
                rows.len()
            )));
        }

        let components = Matrix::from_fn(d, k, |r, c| vectors[(r, c)]);
        Ok(Self {
            input_names: names,
            input_mean: mean,
            components,
            explained_variance: values[..k].iter().map(|v| v.max(0.0)).collect(),
            total_variance,
        })
    }

    pub fn apply(&self, frames: &FrameSeries) -> Result<FrameSeries> {
        if frames.n_features() != self.input_dim() {
            return Err(Error::Dimension {
                context: "PCA input",
                expected: self.input_dim(),
                actual: frames.n_features(),
            });
        }
        if frames.feature_names != self.input_names {
            return Err(Error::Data(format!(
                "flight {}: features do not match the fitted PCA",
                frames.flight_id
            )));
        }
        let k = self.k();
        let mut out = Matrix::zeros(frames.len(), k);
        let mut centered = vec![0.0; self.input_dim()];
        for (r, row) in frames.frames.iter_rows().enumerate() {
            for ((c, v), m) in centered.iter_mut().zip(row).zip(&self.input_mean) {
                *c = v - m;
            }
            let dst = out.row_mut(r);
            self.components.tr_mul_vec_add(&centered, dst);
        }
        frames.with_frames(self.output_names(), out)
    }

    /// Map projected frames back to input space.
    pub fn back_project(&self, projected: &FrameSeries) -> Result<FrameSeries> {
        if projected.n_features() != self.k() {
            return Err(Error::Dimension {
                context: "PCA back-projection",
                expected: self.k(),
                actual: projected.n_features(),
            });
        }
        let mut out = Matrix::zeros(projected.len(), self.input_dim());
        for (r, row) in projected.frames.iter_rows().enumerate() {
            let dst = out.row_mut(r);
            dst.copy_from_slice(&self.input_mean);
            self.components.mul_vec_add(row, dst);
        }
        projected.with_frames(self.input_names.clone(), out)
    }

    /// Cumulative explained-variance ratios of the kept components.
    pub fn variance_report(&self) -> Vec<f64> {
        cumulative_ratios(&self.explained_variance, self.total_variance)
    }
}

pub fn fit_pca(frames: &FrameSeries, k: usize) -> Result<PcaModel> {
    PcaModel::fit(std::slice::from_ref(frames), ComponentCount::Fixed(k))
}

pub fn apply_pca(frames: &FrameSeries, model: &PcaModel) -> Result<FrameSeries> {
    model.apply(frames)
}

pub fn variance_report(model: &PcaModel) -> Vec<f64> {
    model.variance_report()
}

fn cumulative_ratios(values: &[f64], total: f64) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .iter()
        .map(|v| {
            acc += v.max(0.0);
            if total > 0.0 {
                (acc / total).min(1.0)
            } else {
                1.0
            }
        })
        .collect()
}

/// Population covariance and column means of `rows`.
fn covariance(rows: &[&[f64]], d: usize) -> (Matrix, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(*row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in rows {
        for ((c, v), m) in centered.iter_mut().zip(*row).zip(&mean) {
            *c = v - m;
        }
        cov.add_outer(&centered, &centered);
    }
    for i in 0..d {
        for j in 0..d {
            cov[(i, j)] /= n;
        }
    }
    // Symmetrize so tiny accumulation differences cannot bias the rotations.
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (cov, mean)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns. Each eigenvector is sign-normalized so that its largest-magnitude
/// entry is positive.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    const MAX_SWEEPS: usize = 100;

    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dimension {
            context: "symmetric eigen (square)",
            expected: n,
            actual: a.cols(),
        });
    }
    if !a.is_finite() {
        return Err(Error::Numeric("covariance matrix is not finite".into()));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let mut diag: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    let mut b = diag.clone();
    let mut z = vec![0.0; n];

    let mut converged = n < 2;
    for sweep in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m[(p, q)].abs())
            .sum();
        if off == 0.0 {
            converged = true;
            break;
        }
        let threshold = if sweep < 3 {
            0.2 * off / (n * n) as f64
        } else {
            0.0
        };
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let g = 100.0 * apq.abs();
                // After a few sweeps, drop elements that no longer affect the diagonal.
                if sweep > 3
                    && diag[p].abs() + g == diag[p].abs()
                    && diag[q].abs() + g == diag[q].abs()
                {
                    m[(p, q)] = 0.0;
                    m[(q, p)] = 0.0;
                    continue;
                }
                if apq.abs() <= threshold {
                    continue;
                }
                let h = diag[q] - diag[p];
                let t = if h.abs() + g == h.abs() {
                    apq / h
                } else {
                    let theta = 0.5 * h / apq;
                    let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let h = t * apq;
                z[p] -= h;
                z[q] += h;
                diag[p] -= h;
                diag[q] += h;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let g = m[(r, p)];
                    let hh = m[(r, q)];
                    let new_rp = g - s * (hh + g * tau);
                    let new_rq = hh + s * (g - hh * tau);
                    m[(r, p)] = new_rp;
                    m[(p, r)] = new_rp;
                    m[(r, q)] = new_rq;
                    m[(q, r)] = new_rq;
                }
                for r in 0..n {
                    let g = v[(r, p)];
                    let hh = v[(r, q)];
                    v[(r, p)] = g - s * (hh + g * tau);
                    v[(r, q)] = hh + s * (g - hh * tau);
                }
            }
        }
        for p in 0..n {
            b[p] += z[p];
            diag[p] = b[p];
            z[p] = 0.0;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut pivot = 0;
        for r in 0..n {
            if v[(r, src)].abs() > v[(pivot, src)].abs() {
                pivot = r;
            }
        }
        let sign = if v[(pivot, src)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, col)] = sign * v[(r, src)];
        }
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(rows: Vec<Vec<f64>>) -> FrameSeries {
        let n = rows.len();
        let d = rows[0].len();
        FrameSeries::new(
            "t",
            (0..d).map(|i| format!("f{i}")).collect(),
            (0..n as i64).map(|i| i * 100).collect(),
            Matrix::from_rows(&rows).unwrap(),
            vec![false; n],
        )
        .unwrap()
    }

    #[test]
    fn zscore_moments_of_one_two_three() {
        let p = fit_zscore(&series(vec![vec![1.0], vec![2.0], vec![3.0]])).unwrap();
        assert_eq!(p.mean[0], 2.0);
        assert!((p.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_feature_cannot_be_normalized() {
        let err = fit_zscore(&series(vec![vec![5.0], vec![5.0], vec![5.0]])).unwrap_err();
        assert!(err.to_string().contains("f0"));
    }

    #[test]
    fn zscore_maps_mean_and_one_sigma() {
        let s = series(vec![vec![1.0], vec![3.0]]);
        let p = fit_zscore(&s).unwrap();
        let probe = series(vec![vec![p.mean[0]], vec![p.mean[0] + p.std[0]]]);
        let z = p.apply(&probe).unwrap();
        assert_eq!(z.frames.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn mismatched_features_rejected() {
        let p = fit_zscore(&series(vec![vec![1.0, 2.0], vec![3.0, 5.0]])).unwrap();
        let mut other = series(vec![vec![1.0, 2.0], vec![3.0, 5.0]]);
        other.feature_names[1] = "zz".into();
        assert!(p.apply(&other).is_err());
    }

    #[test]
    fn rank_one_data_explains_everything() {
        let rows = (0..20)
            .map(|i| {
                let t = i as f64 * 0.37 - 2.0;
                vec![t, 2.0 * t, -0.5 * t]
            })
            .collect();
        let m = fit_pca(&series(rows), 1).unwrap();
        assert!((m.variance_report()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn too_many_components_rejected() {
        let s = series(vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]]);
        assert!(fit_pca(&s, 3).is_err());
    }

    #[test]
    fn full_rank_projection_is_invertible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = (0..200)
            .map(|_| (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let s = series(rows);
        let m = fit_pca(&s, 10).unwrap();
        let back = m.back_project(&m.apply(&s).unwrap()).unwrap();
        assert!(back.frames.max_abs_diff(&s.frames) < 1e-8);
        assert!((m.variance_report()[9] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projecting_a_component_gives_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = (0..50)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut m = fit_pca(&series(rows), 4).unwrap();
        m.input_mean = vec![0.0; 4];
        let zero = m.apply(&series(vec![vec![0.0; 4]])).unwrap();
        assert!(zero.frames.as_slice().iter().all(|&v| v == 0.0));
        let col = m.components.column(2);
        let out = m.apply(&series(vec![col])).unwrap();
        for (i, v) in out.frames.row(0).iter().enumerate() {
            let want = if i == 2 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "{i}: {v}");
        }
    }

    #[test]
    fn variance_target_picks_smallest_sufficient_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows = (0..300)
            .map(|_| {
                vec![
                    10.0 * rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    0.01 * rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();
        let m = PcaModel::fit(&[series(rows)], ComponentCount::VarianceTarget(0.98)).unwrap();
        assert_eq!(m.k(), 1);
    }

    #[test]
    fn eigen_of_diagonal_matrix() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        assert_eq!(vals, vec![4.0, 1.0]);
        assert_eq!(vecs.column(0), vec![0.0, 1.0]);
    }
}
