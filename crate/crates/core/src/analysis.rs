//! Factor aggregation, Welch t-test, linear trends, rank correlation and
//! spectral features, with CSV export of plot data.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::bws::ScoreTable;
use crate::concealer::Approach;
use crate::gengrid::parse_stimulus_id;
use crate::tf::{Stft, StftParams, TfError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no rows to aggregate")]
    Empty,
    #[error("sample '{0}' needs at least 2 values")]
    TooFewValues(&'static str),
    #[error("both samples have zero variance")]
    ZeroVariance,
    #[error("linear fit needs at least 2 distinct x values")]
    DegenerateX,
    #[error("'{0}' is silent")]
    Silent(String),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("unknown factor '{0}'")]
    UnknownFactor(String),
    #[error("stimulus id '{0}' does not encode grid factors")]
    UnparsableId(String),
    #[error(transparent)]
    Tf(#[from] TfError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One scored stimulus with its grid factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub stimulus_id: String,
    pub source_id: String,
    pub positive_id: String,
    pub approach: Approach,
    pub delta_laeq: f64,
    pub score: f64,
}

/// Rows for every id of `table`; ids must follow the stimulus naming scheme.
pub fn score_rows(table: &ScoreTable) -> Result<Vec<ScoreRow>, AnalysisError> {
    table
        .scores
        .iter()
        .map(|(id, &score)| {
            let spec = parse_stimulus_id(id).ok_or_else(|| AnalysisError::UnparsableId(id.clone()))?;
            Ok(ScoreRow {
                stimulus_id: spec.id,
                source_id: spec.source_id,
                positive_id: spec.positive_id,
                approach: spec.approach,
                delta_laeq: spec.delta_laeq,
                score,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Source,
    Positive,
    Approach,
    DeltaLaeq,
}

impl Factor {
    pub fn name(self) -> &'static str {
        match self {
            Factor::Source => "source_id",
            Factor::Positive => "positive_id",
            Factor::Approach => "approach",
            Factor::DeltaLaeq => "delta_laeq",
        }
    }

    fn value(self, row: &ScoreRow) -> String {
        match self {
            Factor::Source => row.source_id.clone(),
            Factor::Positive => row.positive_id.clone(),
            Factor::Approach => row.approach.to_string(),
            Factor::DeltaLaeq => row.delta_laeq.to_string(),
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Factor {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "source" | "source_id" => Ok(Factor::Source),
            "positive" | "positive_id" => Ok(Factor::Positive),
            "approach" => Ok(Factor::Approach),
            "delta_laeq" | "delta" => Ok(Factor::DeltaLaeq),
            _ => Err(AnalysisError::UnknownFactor(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStat {
    pub key: Vec<String>,
    pub mean: f64,
    /// Standard error `sd/√n`; absent for a single value.
    pub se: Option<f64>,
    pub n: usize,
}

/// Compares numerically when both sides parse as numbers.
fn key_cmp(a: &[String], b: &[String]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(p), Ok(q)) => p.total_cmp(&q),
            _ => x.cmp(y),
        };
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Mean and sample standard deviation. Values are summed in sorted order
/// so the result does not depend on input order.
pub fn mean_sd(values: &[f64]) -> (f64, Option<f64>) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, None);
    }
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, Some((dev.iter().sum::<f64>() / (n - 1.0)).sqrt()))
}

pub fn aggregate(rows: &[ScoreRow], group_by: &[Factor]) -> Result<Vec<GroupStat>, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut groups: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    for row in rows {
        let key = group_by.iter().map(|f| f.value(row)).collect();
        groups.entry(key).or_default().push(row.score);
    }
    let mut out: Vec<GroupStat> = groups
        .into_iter()
        .map(|(key, values)| {
            let (mean, sd) = mean_sd(&values);
            GroupStat {
                key,
                mean,
                se: sd.map(|s| s / (values.len() as f64).sqrt()),
                n: values.len(),
            }
        })
        .collect();
    out.sort_by(|a, b| key_cmp(&a.key, &b.key));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, AnalysisError> {
    if a.len() < 2 {
        return Err(AnalysisError::TooFewValues("a"));
    }
    if b.len() < 2 {
        return Err(AnalysisError::TooFewValues("b"));
    }
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let va = sa.unwrap().powi(2) / a.len() as f64;
    let vb = sb.unwrap().powi(2) / b.len() as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive and finite");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult { t, df, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// 1 when the residuals vanish, including a constant `y`.
    pub r2: f64,
    pub n: usize,
}

/// Ordinary least squares `y = slope·x + intercept`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<LinearFit, AnalysisError> {
    let n = points.len();
    if n < 2 {
        return Err(AnalysisError::DegenerateX);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::DegenerateX);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit { slope, intercept, r2, n })
}

/// Score trend against ΔL_Aeq, one fit per approach.
pub fn trends(rows: &[ScoreRow]) -> Result<Vec<(Approach, LinearFit)>, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut by: BTreeMap<Approach, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        by.entry(r.approach).or_default().push((r.delta_laeq, r.score));
    }
    by.into_iter().map(|(a, pts)| Ok((a, linear_fit(&pts)?))).collect()
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFewValues("x"));
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

/// Kendall's tau-b.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFewValues("x"));
    }
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i].total_cmp(&x[j]);
            let dy = y[i].total_cmp(&y[j]);
            match (dx, dy) {
                (Ordering::Equal, Ordering::Equal) => {}
                (Ordering::Equal, _) => tie_x += 1,
                (_, Ordering::Equal) => tie_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n1 = (concordant + discordant + tie_x) as f64;
    let n2 = (concordant + discordant + tie_y) as f64;
    Ok((concordant - discordant) as f64 / (n1 * n2).sqrt())
}

/// Spearman correlation between a score table and reference values.
pub fn table_spearman(table: &ScoreTable, reference: &std::collections::HashMap<String, f64>) -> Result<f64, AnalysisError> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (id, s) in &table.scores {
        if let Some(r) = reference.get(id) {
            x.push(*s);
            y.push(*r);
        }
    }
    spearman(&x, &y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralFeatures {
    pub entropy: f64,
    pub centroid_hz: f64,
    pub bandwidth_hz: f64,
    pub contrast_db: f64,
    pub flatness: f64,
}

const MAG_FLOOR: f64 = 1e-12;
const CONTRAST_BANDS: usize = 6;
const CONTRAST_LOW_HZ: f64 = 200.0;
const CONTRAST_QUANTILE: f64 = 0.02;

/// Features of the mean magnitude spectrum over STFT frames.
pub fn spectral_features(buf: &AudioBuffer, params: StftParams) -> Result<SpectralFeatures, AnalysisError> {
    if buf.is_silent() {
        return Err(AnalysisError::Silent(buf.label().to_string()));
    }
    let spec = Stft::new(params)?.analyze(buf)?;
    let mag = spec.magnitude();
    let mut mean = vec![0.0; mag.bins()];
    for f in 0..mag.frames() {
        for (m, v) in mean.iter_mut().zip(mag.frame(f)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= mag.frames() as f64;
    }
    let freqs: Vec<f64> = (0..mean.len()).map(|k| spec.bin_frequency(k)).collect();
    Ok(features_of_spectrum(&mean, &freqs))
}

/// Features of one magnitude spectrum sampled at `freqs`.
pub fn features_of_spectrum(mag: &[f64], freqs: &[f64]) -> SpectralFeatures {
    let n = mag.len() as f64;
    let total: f64 = mag.iter().sum();
    let flatness = if mag.iter().all(|&m| m == mag[0]) {
        1.0
    } else {
        let log_mean = mag.iter().map(|m| m.max(MAG_FLOOR).ln()).sum::<f64>() / n;
        (log_mean.exp() / (total / n)).min(1.0)
    };
    let centroid = mag.iter().zip(freqs).map(|(m, f)| m * f).sum::<f64>() / total;
    let bandwidth = (mag.iter().zip(freqs).map(|(m, f)| m * (f - centroid).powi(2)).sum::<f64>() / total).sqrt();

    let power_total: f64 = mag.iter().map(|m| m * m).sum();
    let entropy = if mag.len() < 2 {
        0.0
    } else {
        -mag.iter()
            .map(|m| m * m / power_total)
            .filter(|&q| q > 0.0)
            .map(|q| q * q.ln())
            .sum::<f64>()
            / n.ln()
    };

    let mut contrasts = Vec::new();
    for band in 0..CONTRAST_BANDS {
        let lo = CONTRAST_LOW_HZ * 2f64.powi(band as i32);
        let mut v: Vec<f64> = mag
            .iter()
            .zip(freqs)
            .filter(|(_, &f)| f >= lo && f < 2.0 * lo)
            .map(|(m, _)| *m)
            .collect();
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let k = ((v.len() as f64 * CONTRAST_QUANTILE).round() as usize).max(1);
        let valley = v[..k].iter().sum::<f64>() / k as f64;
        let peak = v[v.len() - k..].iter().sum::<f64>() / k as f64;
        contrasts.push(20.0 * (peak.max(MAG_FLOOR) / valley.max(MAG_FLOOR)).log10());
    }
    let contrast_db = if contrasts.is_empty() {
        0.0
    } else {
        contrasts.iter().sum::<f64>() / contrasts.len() as f64
    };
    SpectralFeatures {
        entropy,
        centroid_hz: centroid,
        bandwidth_hz: bandwidth,
        contrast_db,
        flatness,
    }
}

/// Factor columns, then `mean,se,n`.
pub fn write_aggregates_csv<W: Write>(group_by: &[Factor], stats: &[GroupStat], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = group_by.iter().map(|f| f.name()).collect();
    header.extend(["mean", "se", "n"]);
    w.write_record(&header)?;
    for s in stats {
        let mut rec = s.key.clone();
        rec.push(s.mean.to_string());
        rec.push(s.se.map(|v| v.to_string()).unwrap_or_default());
        rec.push(s.n.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_trends_csv<W: Write>(fits: &[(Approach, LinearFit)], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["approach", "slope", "intercept", "r2", "n"])?;
    for (a, f) in fits {
        w.write_record([
            a.to_string(),
            f.slope.to_string(),
            f.intercept.to_string(),
            f.r2.to_string(),
            f.n.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_features_csv<W: Write>(features: &[(String, SpectralFeatures)], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sound_id", "entropy", "centroid_hz", "bandwidth_hz", "contrast_db", "flatness"])?;
    for (id, f) in features {
        w.write_record([
            id.clone(),
            f.entropy.to_string(),
            f.centroid_hz.to_string(),
            f.bandwidth_hz.to_string(),
            f.contrast_db.to_string(),
            f.flatness.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_rows() -> Vec<ScoreRow> {
        let mut rows = Vec::new();
        let mut i = 0.0;
        for s in ["ventil1", "ventil2"] {
            for p in synth::POSITIVE_IDS {
                for a in [Approach::Masker, Approach::Concealer3] {
                    for d in [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0] {
                        let id = crate::gengrid::stimulus_id(s, p, a, d);
                        rows.push(ScoreRow {
                            stimulus_id: id,
                            source_id: s.into(),
                            positive_id: p.into(),
                            approach: a,
                            delta_laeq: d,
                            score: (i * 0.37f64).sin(),
                        });
                        i += 1.0;
                    }
                }
            }
        }
        rows
    }

    #[test]
    fn aggregate_group_sizes() {
        let rows = grid_rows();
        let by_a = aggregate(&rows, &[Factor::Approach]).unwrap();
        assert_eq!(by_a.iter().map(|g| g.n).collect::<Vec<_>>(), vec![70, 70]);
        let by_ad = aggregate(&rows, &[Factor::Approach, Factor::DeltaLaeq]).unwrap();
        assert_eq!(by_ad.len(), 14);
        assert!(by_ad.iter().all(|g| g.n == 10));
        assert_eq!(by_ad[1].key, vec!["concealer-3".to_string(), "0.5".to_string()]);
        let single = aggregate(&rows[..1], &[Factor::Source]).unwrap();
        assert_eq!(single[0].se, None);
        assert!(aggregate(&[], &[Factor::Source]).is_err());
    }

    #[test]
    fn aggregate_se_by_hand() {
        let rows: Vec<ScoreRow> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&s| ScoreRow {
                stimulus_id: String::new(),
                source_id: "a".into(),
                positive_id: "b".into(),
                approach: Approach::Masker,
                delta_laeq: 0.0,
                score: s,
            })
            .collect();
        let g = &aggregate(&rows, &[Factor::Source]).unwrap()[0];
        assert!((g.mean - 7.0 / 3.0).abs() < 1e-15);
        // sd = sqrt(7/3)
        assert!((g.se.unwrap() - (7.0f64 / 3.0).sqrt() / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn welch_reference_values() {
        let r = welch_t_test(&[2.1, 2.5, 2.3], &[3.0, 3.2, 3.1]).unwrap();
        assert!((r.t + 6.19677335393187).abs() < 1e-9);
        assert!((r.df - 2.941176470588237).abs() < 1e-9);
        assert!((r.p - 0.008970686501523004).abs() < 1e-6);
        let r = welch_t_test(&[1.2, 3.4, 2.2, 5.0, 4.1], &[2.0, 2.5, 2.9, 3.3, 1.0, 4.4]).unwrap();
        assert!((r.t - 0.6031795489296673).abs() < 1e-9);
        assert!((r.df - 7.46019769975759).abs() < 1e-9);
        assert!((r.p - 0.5642710081433997).abs() < 1e-6);
    }

    #[test]
    fn welch_edge_cases() {
        let same = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(same.t, 0.0);
        assert_eq!(same.p, 1.0);
        let a = [0.0, 1e-3, -1e-3, 2e-3];
        let b = [1.0, 1.0 + 1e-3, 1.0 - 1e-3, 1.0 + 2e-3];
        assert!(welch_t_test(&a, &b).unwrap().p < 1e-4);
        assert!(matches!(welch_t_test(&[1.0], &b), Err(AnalysisError::TooFewValues("a"))));
        assert!(matches!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]), Err(AnalysisError::ZeroVariance)));
    }

    #[test]
    fn linear_fit_examples() {
        let f = linear_fit(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let f = linear_fit(&[(0.0, 4.0), (1.0, 4.0), (3.0, 4.0)]).unwrap();
        assert_eq!(f.slope, 0.0);
        assert!(linear_fit(&[(1.0, 1.0), (1.0, 2.0)]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = rand_distr::Normal::new(0.0, 0.01).unwrap();
        let pts: Vec<(f64, f64)> = (0..140)
            .map(|i| {
                let x = (i % 7) as f64 * 0.5;
                (x, -0.1 * x + 0.5 + rng.sample(normal))
            })
            .collect();
        let f = linear_fit(&pts).unwrap();
        assert!((f.slope + 0.1).abs() < 0.01);
    }

    #[test]
    fn rank_correlations_match_reference() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [2.0, 1.0, 4.0, 3.0, 6.0, 5.0];
        assert!((spearman(&x, &y).unwrap() - 0.8285714285714287).abs() < 1e-12);
        assert!((kendall_tau(&x, &y).unwrap() - 0.6).abs() < 1e-12);
        let x = [1.0, 2.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 2.0, 5.0];
        assert!((spearman(&x, &y).unwrap() - 0.7631578947368421).abs() < 1e-12);
        assert!((kendall_tau(&x, &y).unwrap() - 0.6666666666666666).abs() < 1e-12);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn features_of_reference_signals() {
        let fs = 44_100;
        let params = StftParams::default();
        let white = synth::white_noise(fs as usize * 2, fs, 4, 0.1);
        let w = spectral_features(&white, params).unwrap();
        assert!(w.flatness > 0.95, "{}", w.flatness);
        assert!(w.entropy > 0.95, "{}", w.entropy);

        let bin = fs as f64 / params.window_length as f64;
        let sine = synth::sine(1000.0, 0.5, fs as usize * 2, fs);
        let s = spectral_features(&sine, params).unwrap();
        assert!(s.flatness < 0.01, "{}", s.flatness);
        assert!((s.centroid_hz - 1000.0).abs() <= bin, "{}", s.centroid_hz);

        let pink = synth::pink_noise(fs as usize * 2, fs, 4);
        let p = spectral_features(&pink, params).unwrap();
        assert!(p.centroid_hz < w.centroid_hz);
        assert!(w.contrast_db < s.contrast_db);

        let silent = AudioBuffer::zeros(4096, fs, "z").unwrap();
        assert!(matches!(spectral_features(&silent, params), Err(AnalysisError::Silent(_))));
    }

    #[test]
    fn flat_spectrum_has_unit_flatness() {
        let freqs: Vec<f64> = (0..100).map(|k| k as f64 * 10.0).collect();
        for c in [1e-3, 0.1, 0.7, 3.3] {
            let f = features_of_spectrum(&[c; 100], &freqs);
            assert_eq!(f.flatness, 1.0);
            assert!((f.entropy - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_exports() {
        let rows = grid_rows();
        let stats = aggregate(&rows, &[Factor::Approach]).unwrap();
        let mut out = Vec::new();
        write_aggregates_csv(&[Factor::Approach], &stats, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("approach,mean,se,n\n"));

        let stats = aggregate(&rows, &[Factor::Approach, Factor::DeltaLaeq]).unwrap();
        let mut out = Vec::new();
        write_aggregates_csv(&[Factor::Approach, Factor::DeltaLaeq], &stats, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 15);

        let feats: Vec<(String, SpectralFeatures)> = synth::POSITIVE_IDS
            .iter()
            .map(|id| {
                let w = synth::water(id, 44_100, 44_100, 1).unwrap();
                (id.to_string(), spectral_features(&w, StftParams::default()).unwrap())
            })
            .collect();
        let mut out = Vec::new();
        write_features_csv(&feats, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 6);

        let fits = trends(&rows).unwrap();
        let mut out = Vec::new();
        write_trends_csv(&fits, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 3);
    }

    proptest! {
        #[test]
        fn flatness_in_unit_interval(mag in proptest::collection::vec(0.0f64..10.0, 2..64)) {
            prop_assume!(mag.iter().any(|&m| m > 0.0));
            let freqs: Vec<f64> = (0..mag.len()).map(|k| k as f64).collect();
            let f = features_of_spectrum(&mag, &freqs);
            prop_assert!(f.flatness > 0.0 && f.flatness <= 1.0);
        }

        #[test]
        fn welch_is_symmetric(
            a in proptest::collection::vec(-10.0f64..10.0, 2..12),
            b in proptest::collection::vec(-10.0f64..10.0, 2..12),
        ) {
            if let (Ok(x), Ok(y)) = (welch_t_test(&a, &b), welch_t_test(&b, &a)) {
                prop_assert_eq!(x.t, -y.t);
                prop_assert_eq!(x.p, y.p);
                prop_assert_eq!(x.df, y.df);
            }
        }

        #[test]
        fn aggregate_is_order_invariant(seed in 0u64..1000) {
            let rows = grid_rows();
            let mut shuffled = rows.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let by = [Factor::Positive, Factor::DeltaLaeq];
            prop_assert_eq!(aggregate(&rows, &by).unwrap(), aggregate(&shuffled, &by).unwrap());
        }
    }
}
