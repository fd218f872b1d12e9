//! Correlation statistics, grouped cross-validation, significance testing,
//! algorithm ranking and runtime normalisation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{make_folds, RecordKey};
use crate::error::{Error, Result};
use crate::regressor::{train_svr, SvrParams};

pub const DEFAULT_FOLDS: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.05;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: a.len(),
        });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson linear correlation.
pub fn pcc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            out[i] = avg;
        }
        start = end;
    }
    out
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn scc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    pcc(&ranks(a), &ranks(b))
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok((a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt())
}

/// Sample median; an even count takes the midpoint of the central pair.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldScores {
    pub pcc: f64,
    pub scc: f64,
    pub rmse: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_folds: usize,
    pub seed: u64,
    pub svr: SvrParams,
    pub median_pcc: f64,
    pub median_scc: f64,
    pub median_rmse: f64,
    /// Folds where a correlation was undefined (constant predictions or
    /// targets on the test side); their correlations are recorded as 0.
    pub degenerate_folds: usize,
    pub folds: Vec<FoldScores>,
}

impl EvalReport {
    /// `#`-prefixed summary lines followed by a tab-separated per-fold table.
    pub fn to_text(&self, header: &[String]) -> String {
        let mut s = String::new();
        for line in header {
            let _ = writeln!(s, "# {line}");
        }
        let _ = writeln!(s, "# n_folds: {}", self.n_folds);
        let _ = writeln!(s, "# seed: {}", self.seed);
        let _ = writeln!(s, "# svr_c: {}", self.svr.c);
        let _ = writeln!(s, "# svr_tube_epsilon: {}", self.svr.tube_epsilon);
        let _ = writeln!(s, "# median_pcc: {}", self.median_pcc);
        let _ = writeln!(s, "# median_scc: {}", self.median_scc);
        let _ = writeln!(s, "# median_rmse: {}", self.median_rmse);
        let _ = writeln!(s, "# degenerate_folds: {}", self.degenerate_folds);
        s.push_str("fold\tpcc\tscc\trmse\tn_train\tn_test\n");
        for (i, f) in self.folds.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{}\t{}\t{}\t{}\t{}", f.pcc, f.scc, f.rmse, f.n_train, f.n_test);
        }
        s
    }
}

fn or_zero(r: Result<f64>, degenerate: &mut bool) -> Result<f64> {
    match r {
        Err(Error::ZeroVariance) => {
            *degenerate = true;
            Ok(0.0)
        }
        other => other,
    }
}

/// Grouped folds as index lists into `keys`; each side holds at least two records.
pub fn fold_indices(keys: &[RecordKey], n_folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let index: HashMap<&RecordKey, usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
    if index.len() != keys.len() {
        return Err(Error::Manifest("duplicate record keys".into()));
    }
    make_folds(&keys.iter().cloned().collect(), n_folds, seed)?
        .into_iter()
        .map(|fold| {
            if fold.train.len() < 2 || fold.test.len() < 2 {
                return Err(Error::InfeasibleSplit(format!(
                    "fold with {} train and {} test records",
                    fold.train.len(),
                    fold.test.len()
                )));
            }
            let ix = |ks: &[RecordKey]| ks.iter().map(|k| index[k]).collect::<Vec<_>>();
            Ok((ix(&fold.train), ix(&fold.test)))
        })
        .collect()
}

/// Repeated ≈80/20 grouped splits: fit the SVR on the training side, score the
/// test side, report per-fold statistics and their medians. Folds are
/// independent and reduced in fold order, so the result does not depend on
/// the thread count.
pub fn cross_validate(
    rows: &[Vec<f64>],
    targets: &[f64],
    keys: &[RecordKey],
    n_folds: usize,
    seed: u64,
    svr: SvrParams,
) -> Result<EvalReport> {
    if rows.len() != targets.len() {
        return Err(Error::LengthMismatch(rows.len(), targets.len()));
    }
    if rows.len() != keys.len() {
        return Err(Error::LengthMismatch(rows.len(), keys.len()));
    }
    let folds = fold_indices(keys, n_folds, seed)?;
    let results: Vec<(FoldScores, bool)> = folds
        .par_iter()
        .map(|(train, test)| {
            let pick = |ix: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
                ix.iter().map(|&i| (rows[i].clone(), targets[i])).unzip()
            };
            let (tx, ty) = pick(train);
            let (sx, sy) = pick(test);
            let model = train_svr(&tx, &ty, svr)?;
            let pred = sx.iter().map(|h| model.predict(h)).collect::<Result<Vec<_>>>()?;
            let mut degenerate = false;
            let scores = FoldScores {
                pcc: or_zero(pcc(&pred, &sy), &mut degenerate)?,
                scc: or_zero(scc(&pred, &sy), &mut degenerate)?,
                rmse: rmse(&pred, &sy)?,
                n_train: tx.len(),
                n_test: sx.len(),
            };
            Ok((scores, degenerate))
        })
        .collect::<Result<_>>()?;
    let folds: Vec<FoldScores> = results.iter().map(|r| r.0).collect();
    let col = |f: fn(&FoldScores) -> f64| median(&folds.iter().map(f).collect::<Vec<_>>());
    Ok(EvalReport {
        n_folds,
        seed,
        svr,
        median_pcc: col(|f| f.pcc),
        median_scc: col(|f| f.scc),
        median_rmse: col(|f| f.rmse),
        degenerate_folds: results.iter().filter(|r| r.1).count(),
        folds,
    })
}

/// Per-fold test PCC of an externally computed score, after a least-squares
/// affine map to the targets fitted on the training side. Uses the same folds
/// as [`cross_validate`] for equal `keys`, `n_folds` and `seed`.
pub fn external_fold_pcc(
    scores: &[f64],
    targets: &[f64],
    keys: &[RecordKey],
    n_folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if scores.len() != targets.len() {
        return Err(Error::LengthMismatch(scores.len(), targets.len()));
    }
    if scores.len() != keys.len() {
        return Err(Error::LengthMismatch(scores.len(), keys.len()));
    }
    fold_indices(keys, n_folds, seed)?
        .par_iter()
        .map(|(train, test)| {
            let pick = |ix: &[usize], v: &[f64]| ix.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let (a, b) = match affine_fit(&pick(train, scores), &pick(train, targets)) {
                Ok(fit) => fit,
                Err(Error::ZeroVariance) => return Ok(0.0),
                Err(e) => return Err(e),
            };
            let pred: Vec<f64> = pick(test, scores).iter().map(|x| a * x + b).collect();
            or_zero(pcc(&pred, &pick(test, targets)), &mut false)
        })
        .collect()
}

/// Two-sample t-test variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTest {
    /// Unequal variances with Welch–Satterthwaite degrees of freedom.
    #[default]
    Welch,
    /// Pooled variance, n₁ + n₂ − 2 degrees of freedom.
    Pooled,
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Two-sided p-value for equal means.
pub fn t_test_p(a: &[f64], b: &[f64], kind: TTest) -> Result<f64> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: s.len(),
            });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a), variance(b));
    let diff = mean(a) - mean(b);
    let (se, df) = match kind {
        TTest::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            (se2.sqrt(), se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0)))
        }
        TTest::Pooled => {
            let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            ((sp2 * (1.0 / na + 1.0 / nb)).sqrt(), na + nb - 2.0)
        }
    };
    if se == 0.0 {
        return Ok(if diff == 0.0 { 1.0 } else { 0.0 });
    }
    let t = (diff / se).abs();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidParam(e.to_string()))?;
    Ok((2.0 * dist.sf(t)).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceMatrix {
    pub names: Vec<String>,
    /// `entries[i][j]` is 1 when metric i is significantly better than j, −1 when worse.
    pub entries: Vec<Vec<i8>>,
    pub alpha: f64,
    pub test: TTest,
}

/// Pairwise t-tests over per-fold samples of each metric.
pub fn significance_matrix(
    names: &[String],
    samples: &[Vec<f64>],
    alpha: f64,
    test: TTest,
) -> Result<SignificanceMatrix> {
    if names.len() != samples.len() {
        return Err(Error::LengthMismatch(names.len(), samples.len()));
    }
    if let Some(s) = samples.iter().find(|s| s.len() < 2) {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: s.len(),
        });
    }
    let n = names.len();
    let mut entries = vec![vec![0i8; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let p = t_test_p(&samples[i], &samples[j], test)?;
            let diff = mean(&samples[i]) - mean(&samples[j]);
            let e = if p < alpha && diff != 0.0 { diff.signum() as i8 } else { 0 };
            entries[i][j] = e;
            entries[j][i] = -e;
        }
    }
    Ok(SignificanceMatrix {
        names: names.to_vec(),
        entries,
        alpha,
        test,
    })
}

/// Groups ordered by mean score, highest first unless `ascending`; equal means
/// fall back to the group name.
pub fn rank_algorithms(scores: &BTreeMap<String, Vec<f64>>, ascending: bool) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(scores.len());
    for (name, v) in scores {
        if v.is_empty() {
            return Err(Error::EmptyGroup(name.clone()));
        }
        out.push((name.clone(), mean(v)));
    }
    out.sort_by(|a, b| {
        let ord = if ascending { a.1.total_cmp(&b.1) } else { b.1.total_cmp(&a.1) };
        ord.then_with(|| a.0.cmp(&b.0))
    });
    Ok(out)
}

/// Kendall rank correlation between two orderings of the same items.
pub fn kendall_tau(a: &[String], b: &[String]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let pos: HashMap<&String, usize> = b.iter().enumerate().map(|(i, s)| (s, i)).collect();
    if pos.len() != b.len() || a.iter().any(|s| !pos.contains_key(s)) {
        return Err(Error::InvalidParam("orderings do not hold the same items".into()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mut score = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            score += if pos[&a[i]] < pos[&a[j]] { 1 } else { -1 };
        }
    }
    Ok(score as f64 / (n * (n - 1) / 2) as f64)
}

/// Runtime relative to the PSNR baseline.
pub fn normalized_time(t_metric: f64, t_psnr: f64) -> Result<f64> {
    if t_psnr.is_nan() || t_psnr <= 0.0 {
        return Err(Error::NonPositiveBaseline(t_psnr));
    }
    Ok(t_metric / t_psnr)
}

/// One line of a scores file.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub metric: String,
    pub key: RecordKey,
    pub score: f64,
}

/// Comma-separated `metric, record_key, score` lines; `#` starts a comment.
pub fn parse_scores(text: &str) -> Result<Vec<ScoreRow>> {
    let mut rows = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Manifest(format!("scores line {}: `{line}`", no + 1));
        if parts.len() != 3 {
            return Err(bad());
        }
        let score: f64 = parts[2].parse().map_err(|_| bad())?;
        rows.push(ScoreRow {
            metric: parts[0].to_string(),
            key: parts[1].parse()?,
            score,
        });
    }
    Ok(rows)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_scores(&fs::read_to_string(path)?)
}

pub fn format_scores(rows: &[ScoreRow], header: &[String]) -> String {
    let mut s = String::new();
    for line in header {
        let _ = writeln!(s, "# {line}");
    }
    for r in rows {
        let _ = writeln!(s, "{}, {}, {}", r.metric, r.key, r.score);
    }
    s
}

/// Least-squares map `a·x + b` from raw scores to targets, used to compare
/// external metrics on the target scale.
pub fn affine_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let a = sxy / sxx;
    Ok((a, my - a * mx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{Signed, ToPrimitive, Zero};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn exact(v: f64) -> BigRational {
        BigRational::from_float(v).unwrap()
    }

    /// Exact-arithmetic Pearson: r² is formed as a rational and only the final
    /// square root is taken in floating point.
    fn pcc_oracle(a: &[f64], b: &[f64]) -> f64 {
        let n = BigRational::from_integer(BigInt::from(a.len()));
        let xa: Vec<BigRational> = a.iter().map(|&v| exact(v)).collect();
        let xb: Vec<BigRational> = b.iter().map(|&v| exact(v)).collect();
        let ma = xa.iter().fold(BigRational::zero(), |s, v| s + v) / &n;
        let mb = xb.iter().fold(BigRational::zero(), |s, v| s + v) / &n;
        let (mut sab, mut saa, mut sbb) = (BigRational::zero(), BigRational::zero(), BigRational::zero());
        for (x, y) in xa.iter().zip(&xb) {
            let (dx, dy) = (x - &ma, y - &mb);
            sab += &dx * &dy;
            saa += &dx * &dx;
            sbb += &dy * &dy;
        }
        let r2 = (&sab * &sab) / (saa * sbb);
        let r = r2.to_f64().unwrap().sqrt();
        if sab.is_negative() {
            -r
        } else {
            r
        }
    }

    fn rmse_oracle(a: &[f64], b: &[f64]) -> f64 {
        let n = BigRational::from_integer(BigInt::from(a.len()));
        let s = a
            .iter()
            .zip(b)
            .fold(BigRational::zero(), |s, (x, y)| {
                let d = exact(*x) - exact(*y);
                s + &d * &d
            });
        (s / n).to_f64().unwrap().sqrt()
    }

    #[test]
    fn correlation_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pcc(&x, &x).unwrap(), 1.0);
        assert_eq!(pcc(&x, &neg).unwrap(), -1.0);
        assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        let b = [1.0, 2.0, 3.0, 5.0];
        assert!((pcc(&x, &b).unwrap() - pcc_oracle(&x, &b)).abs() < 1e-12);
        assert!((scc(&x, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rmse(&x, &b).unwrap(), 0.5);
        assert!(matches!(pcc(&x, &[1.0]), Err(Error::LengthMismatch(4, 1))));
        assert!(matches!(pcc(&x, &[2.0; 4]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn matches_exact_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let n = rng.random_range(2..30);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            assert!((pcc(&a, &b).unwrap() - pcc_oracle(&a, &b)).abs() < 1e-12);
            assert!((scc(&a, &b).unwrap() - pcc_oracle(&ranks(&a), &ranks(&b))).abs() < 1e-12);
            assert!((rmse(&a, &b).unwrap() - rmse_oracle(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn average_ranks_for_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    proptest! {
        #[test]
        fn correlation_ranges_and_invariances(
            pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
            scale in 0.1f64..10.0,
            shift in -50.0f64..50.0,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(pcc(&a, &b).is_ok());
            let r = pcc(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&r));
            let s = scc(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!(rmse(&a, &b).unwrap() >= 0.0);
            let moved: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
            prop_assert!((pcc(&moved, &b).unwrap() - r).abs() < 1e-12);
            let cubed: Vec<f64> = a.iter().map(|v| v.powi(3) + v).collect();
            prop_assert!((scc(&cubed, &b).unwrap() - s).abs() < 1e-12);
        }
    }

    fn grouped_keys(n: usize) -> Vec<RecordKey> {
        (0..n)
            .map(|i| RecordKey {
                content_id: format!("c{}", i / 4),
                viewpoint_id: format!("v{}", (i / 2) % 2),
                algorithm_id: format!("A{}", i % 2),
                rotation: 0,
            })
            .collect()
    }

    #[test]
    fn planted_targets_cross_validate_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|h| 1.0 + 2.0 * h[0] - h[3]).collect();
        let keys = grouped_keys(60);
        let p = SvrParams { c: 1e3, tube_epsilon: 0.0 };
        let rep = cross_validate(&rows, &y, &keys, 20, 5, p).unwrap();
        assert_eq!(rep.folds.len(), 20);
        assert!(rep.median_pcc > 1.0 - 1e-9);
        assert!(rep.median_rmse < 1e-6);
        let again = cross_validate(&rows, &y, &keys, 20, 5, p).unwrap();
        assert_eq!(again, rep);
        let text = rep.to_text(&["run: test".into()]);
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 21);
        assert!(text.contains("# seed: 5"));
    }

    #[test]
    fn external_scores_share_folds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let good: Vec<f64> = y.iter().map(|v| 3.0 - 2.0 * v).collect();
        let keys = grouped_keys(40);
        let pccs = external_fold_pcc(&good, &y, &keys, 10, 1).unwrap();
        assert_eq!(pccs.len(), 10);
        assert!(pccs.iter().all(|p| (p - 1.0).abs() < 1e-12));
        let rows: Vec<Vec<f64>> = good.iter().map(|g| vec![*g]).collect();
        let rep = cross_validate(&rows, &y, &keys, 10, 1, SvrParams::default()).unwrap();
        let folds = fold_indices(&keys, 10, 1).unwrap();
        for (f, (train, test)) in rep.folds.iter().zip(&folds) {
            assert_eq!((f.n_train, f.n_test), (train.len(), test.len()));
        }
    }

    #[test]
    fn noise_targets_stay_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..6).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let rep = cross_validate(&rows, &y, &grouped_keys(200), 30, 1, SvrParams::default()).unwrap();
        assert!(rep.median_pcc.abs() < 0.3, "{}", rep.median_pcc);
    }

    #[test]
    fn significance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hi = Normal::new(0.8, 0.01).unwrap();
        let lo = Normal::new(0.7, 0.01).unwrap();
        let a: Vec<f64> = (0..1000).map(|_| hi.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..1000).map(|_| lo.sample(&mut rng)).collect();
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        for test in [TTest::Welch, TTest::Pooled] {
            let m = significance_matrix(&names, &[a.clone(), b.clone(), a.clone()], 0.05, test).unwrap();
            assert_eq!(m.entries, vec![vec![0, 1, 0], vec![-1, 0, -1], vec![0, 1, 0]]);
        }
        assert!(significance_matrix(&names[..1], &[vec![1.0]], 0.05, TTest::Welch).is_err());
    }

    #[test]
    fn welch_p_value_matches_reference() {
        // reference p-values computed with scipy.stats.ttest_ind
        let a = [19.1, 20.3, 21.0, 18.7, 20.9];
        let b = [22.4, 21.8, 23.0, 22.9, 21.5, 22.2];
        let p = t_test_p(&a, &b, TTest::Welch).unwrap();
        let pooled = t_test_p(&a, &b, TTest::Pooled).unwrap();
        assert!((p - 0.0046533754998123915).abs() < 1e-9, "{p}");
        assert!((pooled - 0.001306855888798944).abs() < 1e-9, "{pooled}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn significance_is_antisymmetric(seed in 0u64..10_000, k in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let names: Vec<String> = (0..k).map(|i| format!("m{i}")).collect();
            let samples: Vec<Vec<f64>> = (0..k)
                .map(|i| (0..20).map(|_| rng.random::<f64>() + 0.05 * i as f64).collect())
                .collect();
            let m = significance_matrix(&names, &samples, 0.05, TTest::Welch).unwrap();
            for i in 0..k {
                prop_assert_eq!(m.entries[i][i], 0);
                for j in 0..k {
                    prop_assert_eq!(m.entries[i][j], -m.entries[j][i]);
                }
            }
        }
    }

    #[test]
    fn ranking_and_tau() {
        let mut s = BTreeMap::new();
        s.insert("A2".to_string(), vec![2.0, 2.2]);
        s.insert("A1".to_string(), vec![3.0]);
        s.insert("A3".to_string(), vec![1.0, 0.5]);
        s.insert("A0".to_string(), vec![2.1]);
        let r: Vec<String> = rank_algorithms(&s, false).unwrap().into_iter().map(|x| x.0).collect();
        assert_eq!(r, vec!["A1", "A0", "A2", "A3"]);
        let planted: Vec<String> = ["A1", "A0", "A2", "A3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(kendall_tau(&planted, &r).unwrap(), 1.0);
        let rev: Vec<String> = planted.iter().rev().cloned().collect();
        assert_eq!(kendall_tau(&planted, &rev).unwrap(), -1.0);
        s.insert("A9".to_string(), vec![]);
        assert!(matches!(rank_algorithms(&s, false), Err(Error::EmptyGroup(_))));
        let mut ties = BTreeMap::new();
        ties.insert("b".to_string(), vec![1.0]);
        ties.insert("a".to_string(), vec![1.0]);
        assert_eq!(rank_algorithms(&ties, true).unwrap()[0].0, "a");
    }

    #[test]
    fn normalized_time_examples() {
        assert_eq!(normalized_time(0.05, 0.05).unwrap(), 1.0);
        assert!((normalized_time(7.85, 0.05).unwrap() - 157.0).abs() < 1e-9);
        assert!(matches!(normalized_time(1.0, 0.0), Err(Error::NonPositiveBaseline(_))));
    }

    #[test]
    fn scores_file_round_trip() {
        let rows = vec![
            ScoreRow {
                metric: "psnr".into(),
                key: "c1/v2/A3/0".parse().unwrap(),
                score: 31.25,
            },
            ScoreRow {
                metric: "ours".into(),
                key: "c1/v2/A3/90".parse().unwrap(),
                score: -0.5,
            },
        ];
        let text = format_scores(&rows, &["seed: 1".into()]);
        assert!(text.starts_with("# seed: 1\n"));
        assert_eq!(parse_scores(&text).unwrap(), rows);
        assert!(parse_scores("psnr, c1/v2/A3/0").is_err());
    }

    #[test]
    fn affine_fit_recovers_line() {
        let (a, b) = affine_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    }
}
