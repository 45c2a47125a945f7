//! Image-quality metrics: correlation, SNR, CNR, CV, Fisher criterion,
//! Bayes probability of error, and the paired two-tailed z-test.
//!
//! Conventions, pinned so reported tables are reproducible bit-for-bit:
//! ROI statistics (SNR/CNR/CV/FC) and the maximum-likelihood Gaussian fits
//! in P(e) use population (N-divisor) variance — they describe the region
//! itself. The paired z-test uses sample (N−1) standard deviation of the
//! differences — it estimates a population parameter. Logarithms are
//! base-10 per the dB convention. All functions are pure and run their
//! reductions in input order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{NcbcError, Result};
use crate::field::{Field, LatticeDims};

/// Named rectangular region of interest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub name: String,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Roi {
    pub fn validate(&self, dims: LatticeDims) -> Result<()> {
        if self.name.is_empty() {
            return Err(NcbcError::Validation("roi with empty name".into()));
        }
        if self.w == 0 || self.h == 0 {
            return Err(NcbcError::Validation(format!("roi '{}' has zero extent", self.name)));
        }
        if self.x + self.w > dims.width || self.y + self.h > dims.height {
            return Err(NcbcError::Validation(format!(
                "roi '{}' ({},{} {}x{}) exceeds image bounds {}x{}",
                self.name, self.x, self.y, self.w, self.h, dims.width, dims.height
            )));
        }
        Ok(())
    }
}

/// Extract the ROI pixels in raster order.
pub fn roi_values(img: &Field, roi: &Roi) -> Result<Vec<f64>> {
    roi.validate(img.dims())?;
    let mut out = Vec::with_capacity(roi.w * roi.h);
    for y in roi.y..roi.y + roi.h {
        for x in roi.x..roi.x + roi.w {
            out.push(img.get(x, y));
        }
    }
    Ok(out)
}

/// Metric values for one image; absent inputs leave fields unset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cnr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fisher: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_error: Option<f64>,
}

/// Metrics for a set of images plus optional cross-case p-values,
/// keyed method → metric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images: BTreeMap<String, MetricSet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_values: Option<BTreeMap<String, BTreeMap<String, f64>>>,
}

// ---------------------------------------------------------------------------
// Basic statistics
// ---------------------------------------------------------------------------

/// Two-pass population mean and variance (N divisor).
fn population_stats(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mut sum = 0.0;
    for &v in vals {
        sum += v;
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for &v in vals {
        let d = v - mean;
        ss += d * d;
    }
    (mean, ss / n)
}

/// Φ(x), the standard normal CDF.
#[cfg(test)]
fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn require_finite(vals: &[f64], what: &str) -> Result<()> {
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(NcbcError::Data(format!("{what} contains non-finite values")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Pearson correlation over all pixels of two same-sized fields.
pub fn correlation_coefficient(a: &Field, b: &Field) -> Result<f64> {
    crate::field::check_same_dims(a.dims(), b.dims(), "correlation operand")?;
    require_finite(a.values(), "correlation operand")?;
    require_finite(b.values(), "correlation operand")?;
    let (ma, va) = population_stats(a.values());
    let (mb, vb) = population_stats(b.values());
    if va == 0.0 || vb == 0.0 {
        return Err(NcbcError::Degeneracy(
            "correlation is undefined for a constant image".into(),
        ));
    }
    let mut cov = 0.0;
    for (&x, &y) in a.values().iter().zip(b.values()) {
        cov += (x - ma) * (y - mb);
    }
    cov /= a.values().len() as f64;
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

fn roi_stats_for(img: &Field, roi: &Roi, metric: &str) -> Result<(f64, f64)> {
    let vals = roi_values(img, roi)?;
    if vals.len() < 2 {
        return Err(NcbcError::Validation(format!(
            "roi '{}' needs at least 2 pixels for {metric}",
            roi.name
        )));
    }
    require_finite(&vals, "roi")?;
    Ok(population_stats(&vals))
}

/// SNR = 20·log10(mean / std) over the ROI, population std.
pub fn snr_db(img: &Field, roi: &Roi) -> Result<f64> {
    let (mean, var) = roi_stats_for(img, roi, "snr")?;
    if var == 0.0 {
        return Err(NcbcError::Degeneracy(format!("roi '{}' has zero variance", roi.name)));
    }
    if mean <= 0.0 {
        return Err(NcbcError::Degeneracy(format!("roi '{}' has nonpositive mean", roi.name)));
    }
    Ok(20.0 * (mean / var.sqrt()).log10())
}

/// CNR = 20·log10(|mean_b − mean_p| / std_b), std of the background ROI.
pub fn cnr_db(img: &Field, roi_p: &Roi, roi_b: &Roi) -> Result<f64> {
    let (mean_p, _) = roi_stats_for(img, roi_p, "cnr")?;
    let (mean_b, var_b) = roi_stats_for(img, roi_b, "cnr")?;
    if var_b == 0.0 {
        return Err(NcbcError::Degeneracy(format!("roi '{}' has zero variance", roi_b.name)));
    }
    if mean_b == mean_p {
        return Err(NcbcError::Degeneracy("cnr is undefined for equal ROI means".into()));
    }
    Ok(20.0 * ((mean_b - mean_p).abs() / var_b.sqrt()).log10())
}

/// Coefficient of variation: population std / mean.
pub fn cv(img: &Field, roi: &Roi) -> Result<f64> {
    let (mean, var) = roi_stats_for(img, roi, "cv")?;
    if mean <= 0.0 {
        return Err(NcbcError::Degeneracy(format!("roi '{}' has nonpositive mean", roi.name)));
    }
    Ok(var.sqrt() / mean)
}

/// Fisher criterion: |mean_b − mean_p|² / (var_b + var_p), population variances.
pub fn fisher_criterion(img: &Field, roi_p: &Roi, roi_b: &Roi) -> Result<f64> {
    let (mean_p, var_p) = roi_stats_for(img, roi_p, "fisher")?;
    let (mean_b, var_b) = roi_stats_for(img, roi_b, "fisher")?;
    if var_p + var_b == 0.0 {
        return Err(NcbcError::Degeneracy("fisher criterion needs a nonzero variance".into()));
    }
    let d = mean_b - mean_p;
    Ok(d * d / (var_b + var_p))
}

/// Bayes probability of error between two sample classes.
///
/// Each class gets a maximum-likelihood Gaussian fit (mean, population
/// variance); the error is ∫ min(prior_p·pdf_p, prior_b·pdf_b) dl over
/// [min(μ−10σ), max(μ+10σ)], by adaptive Simpson quadrature to absolute
/// tolerance 1e-6.
pub fn probability_of_error(samples_p: &[f64], samples_b: &[f64], prior_p: f64) -> Result<f64> {
    if samples_p.len() < 2 || samples_b.len() < 2 {
        return Err(NcbcError::Validation(
            "probability_of_error needs at least 2 samples per class".into(),
        ));
    }
    require_finite(samples_p, "class samples")?;
    require_finite(samples_b, "class samples")?;
    if !prior_p.is_finite() || prior_p <= 0.0 || prior_p >= 1.0 {
        return Err(NcbcError::Config(format!("prior must be in (0, 1), got {prior_p}")));
    }
    let prior_b = 1.0 - prior_p;
    let (mu_p, var_p) = population_stats(samples_p);
    let (mu_b, var_b) = population_stats(samples_b);
    if var_p == 0.0 || var_b == 0.0 {
        return Err(NcbcError::Degeneracy("class with zero variance in probability_of_error".into()));
    }
    let (sd_p, sd_b) = (var_p.sqrt(), var_b.sqrt());

    let pdf = |x: f64, mu: f64, sd: f64| {
        let z = (x - mu) / sd;
        (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    };
    let integrand =
        |x: f64| (prior_p * pdf(x, mu_p, sd_p)).min(prior_b * pdf(x, mu_b, sd_b));

    let lo = (mu_p - 10.0 * sd_p).min(mu_b - 10.0 * sd_b);
    let hi = (mu_p + 10.0 * sd_p).max(mu_b + 10.0 * sd_b);

    // Seed the recursion on 8 panels: the integrand has a kink where the
    // weighted densities cross, and a single panel converges slowly there.
    const PANELS: usize = 8;
    const TOL: f64 = 1e-6;
    let step = (hi - lo) / PANELS as f64;
    let mut total = 0.0;
    for i in 0..PANELS {
        let a = lo + step * i as f64;
        let b = if i == PANELS - 1 { hi } else { lo + step * (i + 1) as f64 };
        total += adaptive_simpson(&integrand, a, b, TOL / PANELS as f64);
    }
    Ok(total)
}

/// Paired two-tailed z-test on differences `after − before`.
///
/// z = mean(d)·√n / std_sample(d); p = 2·(1 − Φ(|z|)), clamped to
/// [1e-300, 1]. All-zero differences give p = 1; zero spread with a
/// nonzero mean gives the clamp value.
pub fn paired_p_value(before: &[f64], after: &[f64]) -> Result<f64> {
    if before.len() != after.len() {
        return Err(NcbcError::Validation(format!(
            "paired test needs equal lengths, got {} and {}",
            before.len(),
            after.len()
        )));
    }
    let n = before.len();
    if n < 2 {
        return Err(NcbcError::Validation("paired test needs at least 2 cases".into()));
    }
    require_finite(before, "paired samples")?;
    require_finite(after, "paired samples")?;

    let d: Vec<f64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
    let mut sum = 0.0;
    for &x in &d {
        sum += x;
    }
    let mean = sum / n as f64;
    let mut ss = 0.0;
    for &x in &d {
        let e = x - mean;
        ss += e * e;
    }
    let sd = (ss / (n as f64 - 1.0)).sqrt();
    if sd == 0.0 {
        return Ok(if mean == 0.0 { 1.0 } else { 1e-300 });
    }
    let z = mean * (n as f64).sqrt() / sd;
    // 2·(1 − Φ(|z|)) computed as erfc for full precision in the far tail.
    let p = libm::erfc(z.abs() / std::f64::consts::SQRT_2);
    Ok(p.clamp(1e-300, 1.0))
}

/// Adaptive Simpson quadrature with Richardson correction.
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, m, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    m: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, lm, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, rm, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::LatticeDims;

    fn field(w: usize, h: usize, vals: Vec<f64>) -> Field {
        Field::from_vec(LatticeDims::new(w, h).unwrap(), vals).unwrap()
    }

    fn roi(name: &str, x: usize, y: usize, w: usize, h: usize) -> Roi {
        Roi { name: name.into(), x, y, w, h }
    }

    #[test]
    fn correlation_of_an_image_with_itself_is_one() {
        let a = field(2, 2, vec![1.0, 2.0, 3.0, 5.0]);
        let r = correlation_coefficient(&a, &a).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_with_a_negated_shift_is_minus_one() {
        let a = field(2, 2, vec![1.0, 2.0, 3.0, 5.0]);
        let b = field(2, 2, a.values().iter().map(|v| -v + 7.0).collect());
        let r = correlation_coefficient(&a, &b).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_matches_the_direct_formula_on_a_random_pair() {
        let mut av = Vec::new();
        let mut bv = Vec::new();
        for i in 0..16u64 {
            av.push(crate::rng::unit_uniform(crate::rng::mix3(5, i, 0)));
            bv.push(crate::rng::unit_uniform(crate::rng::mix3(5, i, 1)));
        }
        let n = 16.0;
        let ma: f64 = av.iter().sum::<f64>() / n;
        let mb: f64 = bv.iter().sum::<f64>() / n;
        let num: f64 = av.iter().zip(&bv).map(|(a, b)| (a - ma) * (b - mb)).sum();
        let da: f64 = av.iter().map(|a| (a - ma) * (a - ma)).sum::<f64>().sqrt();
        let db: f64 = bv.iter().map(|b| (b - mb) * (b - mb)).sum::<f64>().sqrt();
        let expect = num / (da * db);
        let got =
            correlation_coefficient(&field(4, 4, av.clone()), &field(4, 4, bv.clone())).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn constant_image_correlation_is_degenerate() {
        let a = field(2, 1, vec![3.0, 3.0]);
        let b = field(2, 1, vec![1.0, 2.0]);
        assert!(matches!(correlation_coefficient(&a, &b), Err(NcbcError::Degeneracy(_))));
    }

    #[test]
    fn snr_of_nine_and_eleven_is_twenty_db() {
        let img = field(2, 1, vec![9.0, 11.0]);
        let snr = snr_db(&img, &roi("r", 0, 0, 2, 1)).unwrap();
        assert!((snr - 20.0).abs() < 1e-12);
    }

    #[test]
    fn snr_is_invariant_under_positive_scaling() {
        let img = field(3, 1, vec![4.0, 5.0, 6.3]);
        let scaled = field(3, 1, img.values().iter().map(|v| 17.0 * v).collect());
        let r = roi("r", 0, 0, 3, 1);
        let a = snr_db(&img, &r).unwrap();
        let b = snr_db(&scaled, &r).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn snr_matches_the_direct_formula_on_a_seeded_roi() {
        let vals: Vec<f64> =
            (0..64u64).map(|i| 5.0 + crate::rng::unit_uniform(crate::rng::mix3(8, i, 0))).collect();
        let img = field(8, 8, vals.clone());
        let n = 64.0;
        let mean: f64 = vals.iter().sum::<f64>() / n;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expect = 20.0 * (mean / var.sqrt()).log10();
        let got = snr_db(&img, &roi("r", 0, 0, 8, 8)).unwrap();
        assert!((got - expect).abs() < 1e-10);
    }

    #[test]
    fn cnr_of_the_hand_example_is_twenty_db() {
        // roi_p constant 20, roi_b = {9, 11}: |10 − 20| / 1 → 20 dB.
        let img = field(2, 2, vec![20.0, 20.0, 9.0, 11.0]);
        let c = cnr_db(&img, &roi("p", 0, 0, 2, 1), &roi("b", 0, 1, 2, 1)).unwrap();
        assert!((c - 20.0).abs() < 1e-12);
    }

    #[test]
    fn cnr_numerator_is_symmetric_under_roi_swap() {
        let img = field(2, 2, vec![19.0, 21.0, 9.0, 11.0]);
        let p = roi("p", 0, 0, 2, 1);
        let b = roi("b", 0, 1, 2, 1);
        // Same |Δmean| in both directions; only the std differs (equal here).
        let ab = cnr_db(&img, &p, &b).unwrap();
        let ba = cnr_db(&img, &b, &p).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn cv_of_one_and_three_is_half() {
        let img = field(2, 1, vec![1.0, 3.0]);
        assert_eq!(cv(&img, &roi("r", 0, 0, 2, 1)).unwrap(), 0.5);
    }

    #[test]
    fn cv_is_scale_invariant() {
        let img = field(2, 2, vec![1.0, 1.4, 2.0, 2.6]);
        let scaled = field(2, 2, img.values().iter().map(|v| 3.5 * v).collect());
        let r = roi("r", 0, 0, 2, 2);
        assert!((cv(&img, &r).unwrap() - cv(&scaled, &r).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fisher_criterion_analytic_case() {
        // Classes with means 0 and 1, variance 0.5 each → J = 1.
        let s = 0.5f64.sqrt();
        let img = field(2, 2, vec![-s, s, 1.0 - s, 1.0 + s]);
        let j = fisher_criterion(&img, &roi("p", 0, 0, 2, 1), &roi("b", 0, 1, 2, 1)).unwrap();
        assert!((j - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fisher_criterion_is_zero_for_identical_distributions() {
        let img = field(2, 2, vec![1.0, 3.0, 1.0, 3.0]);
        let j = fisher_criterion(&img, &roi("p", 0, 0, 2, 1), &roi("b", 0, 1, 2, 1)).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn overlapping_identical_classes_err_half() {
        let p = probability_of_error(&[1.0, 3.0], &[1.0, 3.0], 0.5).unwrap();
        assert!((p - 0.5).abs() < 1e-4, "p = {p}");
    }

    #[test]
    fn far_separated_classes_have_negligible_error() {
        let p = probability_of_error(&[0.0, 2.0], &[200.0, 202.0], 0.5).unwrap();
        assert!(p < 1e-6, "p = {p}");
    }

    #[test]
    fn equal_variance_error_matches_the_closed_form() {
        // Two-point samples {μ−σ, μ+σ} fit exactly (μ, σ²); for equal
        // variances and priors the Bayes error is Φ(−Δ/(2σ)).
        let p = probability_of_error(&[-1.0, 1.0], &[1.0, 3.0], 0.5).unwrap();
        let expect = normal_cdf(-1.0);
        assert!((p - expect).abs() < 1e-4, "p = {p}, closed form {expect}");
    }

    #[test]
    fn zero_variance_class_is_degenerate() {
        assert!(matches!(
            probability_of_error(&[2.0, 2.0], &[1.0, 3.0], 0.5),
            Err(NcbcError::Degeneracy(_))
        ));
    }

    #[test]
    fn unchanged_pairs_give_p_one() {
        let x = [3.0, 4.0, 5.0];
        assert_eq!(paired_p_value(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn antisymmetric_differences_give_p_one() {
        let before = [0.0, 0.0, 0.0, 0.0];
        let after = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(paired_p_value(&before, &after).unwrap(), 1.0);
    }

    #[test]
    fn fourteen_case_differences_match_the_direct_z_formula() {
        let diffs = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 2.0, 2.0, 1.0, 1.0, 2.0];
        let before = vec![10.0; 14];
        let after: Vec<f64> = diffs.iter().map(|d| 10.0 + d).collect();
        let n = 14.0;
        let mean: f64 = diffs.iter().sum::<f64>() / n;
        let sd: f64 =
            (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        let z = mean * n.sqrt() / sd;
        let expect = libm::erfc(z.abs() / std::f64::consts::SQRT_2);
        let got = paired_p_value(&before, &after).unwrap();
        assert!((got - expect).abs() < 1e-10);
    }

    #[test]
    fn degenerate_differences_clamp_instead_of_failing() {
        let before = [1.0, 2.0, 3.0];
        let after = [2.0, 3.0, 4.0]; // all differences exactly 1
        assert_eq!(paired_p_value(&before, &after).unwrap(), 1e-300);
    }

    #[test]
    fn roi_violations_are_named() {
        let img = field(4, 4, vec![1.0; 16]);
        let bad = roi("edge_box", 2, 2, 4, 4);
        let err = roi_values(&img, &bad).unwrap_err();
        assert!(err.to_string().contains("edge_box"));
        let err = snr_db(&img, &roi("tiny", 0, 0, 1, 1)).unwrap_err();
        assert!(err.to_string().contains("tiny"));
    }

    #[test]
    fn degeneracy_errors_for_undefined_metrics() {
        let img = field(2, 2, vec![5.0, 5.0, 5.0, 5.0]);
        let r = roi("r", 0, 0, 2, 2);
        assert!(matches!(snr_db(&img, &r), Err(NcbcError::Degeneracy(_))));
        assert!(matches!(cv(&field(2, 1, vec![-2.0, 0.0]), &roi("r", 0, 0, 2, 1)),
            Err(NcbcError::Degeneracy(_))));
        let eq = field(2, 2, vec![1.0, 3.0, 3.0, 1.0]);
        assert!(matches!(
            cnr_db(&eq, &roi("p", 0, 0, 2, 1), &roi("b", 0, 1, 2, 1)),
            Err(NcbcError::Degeneracy(_))
        ));
    }

    #[test]
    fn mismatched_paired_lengths_are_rejected() {
        assert!(paired_p_value(&[1.0, 2.0], &[1.0]).is_err());
        assert!(paired_p_value(&[1.0], &[1.0]).is_err());
    }
}
