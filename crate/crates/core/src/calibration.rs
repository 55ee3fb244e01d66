//! Calibrating a single-agent model from a historical technology series.
//!
//! Performance is regressed linearly on cumulative investment through the
//! state-of-the-art anchor `(I_S, G_S)`; the slope and residual scale are
//! then converted to the dimensionless `(kappa, sigma, c)` of the quality
//! and cost models.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::model::{AgentTypeSpec, ProblemSpec, ValueSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    #[serde(default)]
    pub year: Option<i32>,
    /// Cumulative investment, in currency millions.
    pub investment: f64,
    /// Best performance to date, in physical units.
    pub performance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalSeries {
    records: Vec<Record>,
    pub units: String,
    pub source: String,
}

impl HistoricalSeries {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::Calibration(format!(
                "a series needs at least 2 records, found {}",
                records.len()
            )));
        }
        for (n, r) in records.iter().enumerate() {
            if !(r.investment.is_finite() && r.performance.is_finite()) {
                return Err(Error::Calibration(format!("record {n} is not finite")));
            }
        }
        for (n, w) in records.windows(2).enumerate() {
            if w[1].investment < w[0].investment {
                return Err(Error::Calibration(format!(
                    "investment decreases between records {n} and {}",
                    n + 1
                )));
            }
            if w[1].performance < w[0].performance {
                return Err(Error::Calibration(format!(
                    "performance decreases between records {n} and {}",
                    n + 1
                )));
            }
        }
        Ok(Self {
            records,
            units: String::new(),
            source: String::new(),
        })
    }

    /// Parses delimited text with a `year,investment,performance` header.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let records = rdr
            .deserialize::<Record>()
            .enumerate()
            .map(|(n, r)| r.map_err(|e| Error::Calibration(format!("data row {}: {e}", n + 1))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(records)
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The most recent record, the conventional state of the art.
    pub fn last(&self) -> Record {
        *self.records.last().expect("validated non-empty")
    }
}

/// How the residual scale is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaConvention {
    /// Mean squared residual, as the estimator is usually written down.
    #[default]
    MeanSquare,
    /// Its square root, which has the units of performance.
    RootMeanSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub anchor_investment: f64,
    pub anchor_performance: f64,
    pub a_hat: f64,
    /// `(1/S) sum r_i^2`.
    pub mean_square_residual: f64,
}

impl LinearFit {
    pub fn sigma_hat(&self, convention: SigmaConvention) -> f64 {
        match convention {
            SigmaConvention::MeanSquare => self.mean_square_residual,
            SigmaConvention::RootMeanSquare => self.mean_square_residual.sqrt(),
        }
    }

    pub fn predict(&self, investment: f64) -> f64 {
        self.anchor_performance + self.a_hat * (investment - self.anchor_investment)
    }

    /// Pointwise normal band `mean ± z * scale`, with the root-mean-square
    /// residual as scale.
    pub fn prediction_band(&self, investment: f64, z: f64) -> (f64, f64) {
        let m = self.predict(investment);
        let s = self.mean_square_residual.sqrt();
        (m - z * s, m + z * s)
    }
}

/// Least squares through the anchor. `anchor` defaults to the last record.
pub fn fit_linear_model(series: &HistoricalSeries, anchor: Option<(f64, f64)>) -> Result<LinearFit> {
    let (i_s, g_s) = anchor.unwrap_or_else(|| {
        let r = series.last();
        (r.investment, r.performance)
    });
    let sxx: f64 = series.records.iter().map(|r| (r.investment - i_s).powi(2)).sum();
    let first = series.records[0].investment;
    if series.records.iter().all(|r| r.investment == first) {
        return Err(Error::Calibration("all investments are equal; the slope is not identified".into()));
    }
    if !(sxx > 0.0) {
        return Err(Error::Calibration("zero design variance about the anchor".into()));
    }
    let sxy: f64 = series
        .records
        .iter()
        .map(|r| (r.investment - i_s) * (r.performance - g_s))
        .sum();
    let a_hat = sxy / sxx;
    let mean_square_residual = series
        .records
        .iter()
        .map(|r| (g_s + a_hat * (r.investment - i_s) - r.performance).powi(2))
        .sum::<f64>()
        / series.len() as f64;
    Ok(LinearFit {
        anchor_investment: i_s,
        anchor_performance: g_s,
        a_hat,
        mean_square_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInputs {
    /// Required performance `G^r`.
    pub requirement: f64,
    pub state_of_art_performance: f64,
    pub state_of_art_investment: f64,
    /// Engineer cost per unit time, in the currency scale of investments.
    pub engineer_cost_rate: f64,
    pub horizon: f64,
    pub engineer_count: f64,
    pub system_value: f64,
}

impl CalibrationInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.requirement > self.state_of_art_performance) {
            return Err(Error::Calibration(format!(
                "requirement {} does not exceed the state of the art {}",
                self.requirement, self.state_of_art_performance
            )));
        }
        check_positive("engineer_cost_rate", self.engineer_cost_rate)?;
        check_positive("horizon", self.horizon)?;
        check_positive("engineer_count", self.engineer_count)?;
        check_positive("system_value", self.system_value)
    }

    fn gap(&self) -> f64 {
        self.requirement - self.state_of_art_performance
    }

    fn engineer_budget(&self) -> f64 {
        self.engineer_cost_rate * self.horizon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub a_hat: f64,
    pub sigma_hat: f64,
    pub sigma_convention: SigmaConvention,
    pub kappa: f64,
    pub sigma: f64,
    pub cost_coeff: f64,
}

impl CalibrationResult {
    pub fn agent_type(&self) -> AgentTypeSpec {
        AgentTypeSpec::new(self.kappa, self.cost_coeff, self.sigma)
    }

    /// Single-agent moral-hazard problem with the calibrated type.
    pub fn to_problem(&self, value: ValueSpec) -> ProblemSpec {
        ProblemSpec::moral_hazard(self.agent_type(), value)
    }
}

/// `(A_hat, Sigma_hat)` to `(kappa, sigma, c)`.
pub fn derive_model_params(
    a_hat: f64,
    sigma_hat: f64,
    sigma_convention: SigmaConvention,
    inputs: &CalibrationInputs,
) -> Result<CalibrationResult> {
    inputs.validate()?;
    check_positive("a_hat", a_hat)?;
    if !(sigma_hat >= 0.0 && sigma_hat.is_finite()) {
        return Err(Error::Calibration(format!("residual scale {sigma_hat} is invalid")));
    }
    let budget = inputs.engineer_count * inputs.engineer_budget();
    Ok(CalibrationResult {
        a_hat,
        sigma_hat,
        sigma_convention,
        kappa: budget * a_hat / inputs.gap(),
        sigma: sigma_hat / inputs.gap(),
        cost_coeff: budget / inputs.system_value,
    })
}

/// Fit and derive in one step.
pub fn calibrate(
    series: &HistoricalSeries,
    inputs: &CalibrationInputs,
    convention: SigmaConvention,
) -> Result<CalibrationResult> {
    let fit = fit_linear_model(
        series,
        Some((inputs.state_of_art_investment, inputs.state_of_art_performance)),
    )?;
    derive_model_params(fit.a_hat, fit.sigma_hat(convention), convention, inputs)
}

/// `(G - G_S) / (G^r - G_S)`: 0 at the state of the art, 1 at the requirement.
pub fn scaled_quality(performance: f64, inputs: &CalibrationInputs) -> f64 {
    (performance - inputs.state_of_art_performance) / inputs.gap()
}

/// Investment beyond the state of the art in units of one engineer over the
/// horizon, or of the whole team when `team` is set.
pub fn effort_from_investment(investment: f64, inputs: &CalibrationInputs, team: bool) -> f64 {
    let scale = if team {
        inputs.engineer_count * inputs.engineer_budget()
    } else {
        inputs.engineer_budget()
    };
    (investment - inputs.state_of_art_investment) / scale
}

/// A stand-in for the propulsion series, built so that the anchored fit
/// gives `A_hat = 0.0133` s per M USD and a root-mean-square residual of
/// exactly `0.12` s, with both columns nondecreasing.
pub fn synthetic_satellite_series() -> HistoricalSeries {
    const S: usize = 21;
    const I_S: f64 = 149.1;
    const G_S: f64 = 252.0;
    const SLOPE: f64 = 0.0133;
    const RMS: f64 = 0.12;
    let inv: Vec<f64> = (0..S).map(|i| 9.1 + 7.0 * i as f64).collect();
    let d: Vec<f64> = inv.iter().map(|x| x - I_S).collect();
    // two humps of noise, orthogonalized against the regressor so the
    // slope estimate is untouched; the anchor residual is zero already
    let mut v: Vec<f64> = (0..S)
        .map(|i| (2.0 * std::f64::consts::PI * i as f64 / (S - 1) as f64).sin())
        .collect();
    v[S - 1] = 0.0;
    let dd: f64 = d.iter().map(|x| x * x).sum();
    let vd: f64 = v.iter().zip(&d).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(&d).for_each(|(a, b)| *a -= b * vd / dd);
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let scale = (RMS * RMS * S as f64 / vv).sqrt();
    let records = (0..S)
        .map(|i| Record {
            year: Some(1999 + i as i32),
            investment: inv[i],
            performance: G_S + SLOPE * d[i] + scale * v[i],
        })
        .collect();
    let mut series = HistoricalSeries::new(records).expect("synthetic series is monotone");
    series.units = "investment: M USD; performance: s (specific impulse)".into();
    series.source = "synthetic".into();
    series
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn row1() -> CalibrationInputs {
        CalibrationInputs {
            requirement: 252.2,
            state_of_art_performance: 252.0,
            state_of_art_investment: 149.1,
            engineer_cost_rate: 0.12,
            horizon: 1.0,
            engineer_count: 200.0,
            system_value: 50.0,
        }
    }

    fn series(points: &[(f64, f64)]) -> HistoricalSeries {
        HistoricalSeries::new(
            points
                .iter()
                .map(|&(investment, performance)| Record {
                    year: None,
                    investment,
                    performance,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_line() {
        let s = series(&[(1.0, 6.0), (2.0, 8.0), (4.0, 12.0), (5.0, 14.0)]);
        let fit = fit_linear_model(&s, None).unwrap();
        assert_relative_eq!(fit.a_hat, 2.0, epsilon = 1e-12);
        assert!(fit.mean_square_residual < 1e-24);
    }

    #[test]
    fn two_points_give_the_secant() {
        let s = series(&[(1.0, 3.0), (4.0, 4.5)]);
        let fit = fit_linear_model(&s, None).unwrap();
        assert_relative_eq!(fit.a_hat, 0.5, epsilon = 1e-15);
        assert_eq!(fit.mean_square_residual, 0.0);
    }

    #[test]
    fn rejects_degenerate_series() {
        let s = series(&[(2.0, 1.0), (2.0, 3.0)]);
        assert!(matches!(fit_linear_model(&s, None), Err(Error::Calibration(_))));
        assert!(HistoricalSeries::new(vec![Record {
            year: None,
            investment: 1.0,
            performance: 1.0
        }])
        .is_err());
        let down = HistoricalSeries::new(vec![
            Record { year: None, investment: 1.0, performance: 2.0 },
            Record { year: None, investment: 2.0, performance: 1.0 },
        ]);
        assert!(down.is_err());
    }

    #[test]
    fn table_rows() {
        let r = derive_model_params(0.0133, 0.12, SigmaConvention::RootMeanSquare, &row1()).unwrap();
        assert_relative_eq!(r.kappa, 1.596, epsilon = 1e-9);
        assert_relative_eq!(r.sigma, 0.6, epsilon = 1e-9);
        assert_relative_eq!(r.cost_coeff, 0.48, epsilon = 1e-12);
        let row2 = CalibrationInputs {
            requirement: 252.25,
            system_value: 60.0,
            ..row1()
        };
        let r = derive_model_params(0.0133, 0.12, SigmaConvention::RootMeanSquare, &row2).unwrap();
        assert_relative_eq!(r.kappa, 1.2768, epsilon = 1e-9);
        assert_relative_eq!(r.sigma, 0.48, epsilon = 1e-9);
        assert_relative_eq!(r.cost_coeff, 0.40, epsilon = 1e-12);
    }

    #[test]
    fn team_size_scales_kappa_and_cost() {
        let one = derive_model_params(0.0133, 0.12, SigmaConvention::MeanSquare, &row1()).unwrap();
        let two = derive_model_params(
            0.0133,
            0.12,
            SigmaConvention::MeanSquare,
            &CalibrationInputs {
                engineer_count: 400.0,
                ..row1()
            },
        )
        .unwrap();
        assert_relative_eq!(two.kappa, 2.0 * one.kappa, epsilon = 1e-12);
        assert_relative_eq!(two.cost_coeff, 2.0 * one.cost_coeff, epsilon = 1e-12);
        assert_eq!(two.sigma, one.sigma);
    }

    #[test]
    fn requirement_must_exceed_state_of_art() {
        let bad = CalibrationInputs {
            requirement: 251.0,
            ..row1()
        };
        assert!(derive_model_params(0.0133, 0.12, SigmaConvention::MeanSquare, &bad).is_err());
    }

    #[test]
    fn scaling_conventions() {
        let inp = row1();
        assert_eq!(scaled_quality(252.0, &inp), 0.0);
        assert_relative_eq!(scaled_quality(252.2, &inp), 1.0, epsilon = 1e-12);
        assert_relative_eq!(scaled_quality(252.1, &inp), 0.5, epsilon = 1e-9);
        assert_eq!(effort_from_investment(149.1, &inp, false), 0.0);
        assert_relative_eq!(effort_from_investment(149.1 + 0.12, &inp, false), 1.0, epsilon = 1e-9);
        assert_relative_eq!(effort_from_investment(149.1 + 24.0, &inp, true), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn synthetic_series_hits_targets() {
        let s = synthetic_satellite_series();
        let fit = fit_linear_model(&s, None).unwrap();
        assert_relative_eq!(fit.a_hat, 0.0133, epsilon = 1e-12);
        assert_relative_eq!(fit.sigma_hat(SigmaConvention::RootMeanSquare), 0.12, epsilon = 1e-12);
        assert_eq!(s.last().investment, 149.1);
        assert_eq!(s.last().performance, 252.0);
    }

    #[test]
    fn csv_roundtrip() {
        let text = "year,investment,performance\n2001, 1.0, 10.0\n2002,3.0,11.0\n";
        let s = HistoricalSeries::from_csv(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.records()[0].year, Some(2001));
        let err = HistoricalSeries::from_csv("year,investment,performance\n2001,x,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("data row 1"), "{err}");
    }

    #[test]
    fn model_round_trip() {
        // quality at the regression mean equals scaled quality of the mean
        let inp = row1();
        let r = derive_model_params(0.0133, 0.12, SigmaConvention::RootMeanSquare, &inp).unwrap();
        let fit = LinearFit {
            anchor_investment: 149.1,
            anchor_performance: 252.0,
            a_hat: 0.0133,
            mean_square_residual: 0.0144,
        };
        let invest = 149.1 + 10.0;
        let e = effort_from_investment(invest, &inp, true);
        let q = r.agent_type().quality(e, 0.0).unwrap();
        assert_relative_eq!(q, scaled_quality(fit.predict(invest), &inp), epsilon = 1e-9);
    }
}
