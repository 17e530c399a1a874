//! Physical-layer and service-market math for one BS–user pair.
//!
//! The effective channel gain under maximum-ratio transmission with M
//! Rayleigh branches is Gamma(M, θ) distributed, so the received SNR at
//! transmit power P is Gamma(M, s) with scale s = θ·P·D^{−α}/σ². Everything
//! else here is derived from that density: outage probability is its CDF at
//! the outage threshold, data rate is the ergodic log-capacity integral,
//! throughput is their product, and the market utility maps a QoS metric
//! through a normalization window into payment minus power cost.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, NumericsError};

#[derive(Debug, Error)]
pub enum WirelessError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("no feasible power setting: {0}")]
    Infeasible(String),
    #[error("no QoS bounds configured for metric {0}")]
    UnknownBounds(QosMetric),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Physical-layer constants of one BS–user link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Number of transmit antennas M.
    pub num_antennas: u32,
    /// Mean of each squared channel gain |h_j|² (exponential scale θ).
    pub fading_scale: f64,
    /// Transmission distance D in meters.
    pub distance: f64,
    /// Path-loss exponent α.
    pub path_loss_exponent: f64,
    /// Noise power σ² in watts.
    pub noise_power: f64,
    /// Bandwidth B in Hz.
    pub bandwidth: f64,
    /// Outage threshold γ_th as a linear SNR (dB conversion happens at the
    /// config boundary, never here).
    pub outage_threshold: f64,
}

impl ChannelParams {
    pub fn new(
        num_antennas: u32,
        fading_scale: f64,
        distance: f64,
        path_loss_exponent: f64,
        noise_power: f64,
        bandwidth: f64,
        outage_threshold: f64,
    ) -> Result<Self, WirelessError> {
        let ch = Self {
            num_antennas,
            fading_scale,
            distance,
            path_loss_exponent,
            noise_power,
            bandwidth,
            outage_threshold,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<(), WirelessError> {
        if self.num_antennas < 1 {
            return Err(WirelessError::Domain("num_antennas must be >= 1".into()));
        }
        for (name, v, strict) in [
            ("fading_scale", self.fading_scale, true),
            ("distance", self.distance, true),
            ("path_loss_exponent", self.path_loss_exponent, true),
            ("noise_power", self.noise_power, true),
            ("bandwidth", self.bandwidth, false),
            ("outage_threshold", self.outage_threshold, false),
        ] {
            if !v.is_finite() || (strict && v <= 0.0) || (!strict && v < 0.0) {
                return Err(WirelessError::Domain(format!("{name} out of range: {v}")));
            }
        }
        Ok(())
    }

    /// Gamma scale of the SNR distribution: s = θ·P·D^{−α}/σ².
    fn snr_scale(&self, power: f64) -> f64 {
        self.fading_scale * power * self.distance.powf(-self.path_loss_exponent)
            / self.noise_power
    }

    fn require_positive_power(&self, power: f64) -> Result<(), WirelessError> {
        if !(power > 0.0) || !power.is_finite() {
            return Err(WirelessError::Domain(format!(
                "transmit power must be > 0 W, got {power}"
            )));
        }
        Ok(())
    }
}

/// Converts a dB quantity to linear scale. Config files carry γ_th in dB.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// PDF of the received SNR at power `power`, evaluated at `z`.
pub fn snr_pdf(z: f64, ch: &ChannelParams, power: f64) -> Result<f64, WirelessError> {
    ch.validate()?;
    ch.require_positive_power(power)?;
    if !(z >= 0.0) {
        return Err(WirelessError::Domain(format!("SNR value must be >= 0, got {z}")));
    }
    let m = ch.num_antennas as f64;
    let s = ch.snr_scale(power);
    if z == 0.0 {
        // z^{M-1} is 1 for M = 1 and 0 for M >= 2.
        return Ok(if ch.num_antennas == 1 { 1.0 / s } else { 0.0 });
    }
    let log_pdf = (m - 1.0) * z.ln() - z / s - numerics::ln_gamma(m) - m * s.ln();
    Ok(log_pdf.exp())
}

/// Regularized lower incomplete gamma P(a, x); re-exported numeric primitive.
pub fn regularized_lower_gamma(a: f64, x: f64) -> Result<f64, WirelessError> {
    Ok(numerics::regularized_lower_gamma(a, x)?)
}

/// Outage probability: the SNR CDF at γ_th, i.e. P(M, γ_th/s).
///
/// Uses the lower incomplete form so that OP → 0 as P → ∞ and OP → 1 as
/// P → 0.
pub fn outage_probability(ch: &ChannelParams, power: f64) -> Result<f64, WirelessError> {
    ch.validate()?;
    ch.require_positive_power(power)?;
    if ch.outage_threshold == 0.0 {
        return Ok(0.0);
    }
    let x = ch.outage_threshold / ch.snr_scale(power);
    regularized_lower_gamma(ch.num_antennas as f64, x)
}

/// Upper integration cutoff for the Gamma(M, 1) tail: mass beyond it is far
/// below every tolerance used in this crate.
fn gamma_tail_cutoff(m: f64) -> f64 {
    m + 40.0 * m.sqrt() + 60.0
}

const QUAD_REL_TOL: f64 = 1e-9;
const QUAD_MAX_EVALS: usize = 1_000_000;

/// Ergodic data rate B·∫₀^∞ log₂(1+z)·f_SNR(z) dz in bit/s, by deterministic
/// adaptive quadrature on the substituted integral
/// (1/Γ(M))·∫₀^∞ log₂(1+s·u)·u^{M−1}e^{−u} du.
pub fn data_rate(ch: &ChannelParams, power: f64) -> Result<f64, WirelessError> {
    ch.validate()?;
    ch.require_positive_power(power)?;
    if ch.bandwidth == 0.0 {
        return Ok(0.0);
    }
    let m = ch.num_antennas as f64;
    let s = ch.snr_scale(power);
    let log_norm = numerics::ln_gamma(m);
    let integrand = move |u: f64| {
        if u <= 0.0 {
            return 0.0; // ln(1+s·0) = 0 kills the M = 1 boundary value too
        }
        ((m - 1.0) * u.ln() - u - log_norm).exp() * (s * u).ln_1p()
    };
    let q = numerics::integrate(
        integrand,
        0.0,
        gamma_tail_cutoff(m),
        QUAD_REL_TOL,
        0.0,
        QUAD_MAX_EVALS,
    )?;
    Ok(ch.bandwidth * q.value / std::f64::consts::LN_2)
}

/// Throughput (1 − OP)·DR in bit/s.
pub fn throughput(ch: &ChannelParams, power: f64) -> Result<f64, WirelessError> {
    let op = outage_probability(ch, power)?;
    let dr = data_rate(ch, power)?;
    Ok((1.0 - op) * dr)
}

/// Draws `n` SNR samples at power `power`: each is P·D^{−α}·Σ_j |h_j|²/σ²
/// with |h_j|² exponential of mean θ. Deterministic given `seed`.
pub fn sample_snr_monte_carlo(
    ch: &ChannelParams,
    power: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, WirelessError> {
    ch.validate()?;
    ch.require_positive_power(power)?;
    if n == 0 {
        return Err(WirelessError::Domain("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = power * ch.distance.powf(-ch.path_loss_exponent) / ch.noise_power;
    let theta = ch.fading_scale;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut sum = 0.0;
        for _ in 0..ch.num_antennas {
            let u: f64 = rng.random();
            sum += -theta * (1.0 - u).ln(); // inverse-CDF exponential draw
        }
        out.push(gain * sum);
    }
    Ok(out)
}

/// Which QoS metric a requirement cares about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QosMetric {
    /// 1 − OP, dimensionless in [0, 1].
    #[serde(rename = "OP-complement")]
    OpComplement,
    /// Data rate in bit/s.
    #[serde(rename = "DR")]
    DataRate,
    /// Throughput (1 − OP)·DR in bit/s.
    #[serde(rename = "TP")]
    Throughput,
}

impl QosMetric {
    pub const ALL: [QosMetric; 3] =
        [QosMetric::OpComplement, QosMetric::DataRate, QosMetric::Throughput];

    pub fn label(&self) -> &'static str {
        match self {
            QosMetric::OpComplement => "OP-complement",
            QosMetric::DataRate => "DR",
            QosMetric::Throughput => "TP",
        }
    }
}

impl fmt::Display for QosMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A metric tagged with its measured value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosValue {
    pub metric: QosMetric,
    pub value: f64,
}

impl QosValue {
    pub fn new(metric: QosMetric, value: f64) -> Result<Self, WirelessError> {
        if !value.is_finite() || value < 0.0 {
            return Err(WirelessError::Domain(format!("QoS value out of range: {value}")));
        }
        if metric == QosMetric::OpComplement && value > 1.0 {
            return Err(WirelessError::Domain(format!(
                "OP-complement must lie in [0,1], got {value}"
            )));
        }
        Ok(Self { metric, value })
    }
}

/// Computes the QoS value of `metric` at transmit power `power`.
pub fn qos_value(ch: &ChannelParams, metric: QosMetric, power: f64) -> Result<QosValue, WirelessError> {
    let value = match metric {
        QosMetric::OpComplement => 1.0 - outage_probability(ch, power)?,
        QosMetric::DataRate => data_rate(ch, power)?,
        QosMetric::Throughput => throughput(ch, power)?,
    };
    QosValue::new(metric, value)
}

/// Normalization window (Q_min, Q_max) for one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosBounds {
    pub min: f64,
    pub max: f64,
}

impl QosBounds {
    pub fn new(min: f64, max: f64) -> Result<Self, WirelessError> {
        if !min.is_finite() || !max.is_finite() || max <= min {
            return Err(WirelessError::Domain(format!(
                "QoS bounds require max > min, got min={min}, max={max}"
            )));
        }
        Ok(Self { min, max })
    }
}

/// Economic constants and the discrete power grid of the service market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Unit payment coefficient β₁.
    pub payment_coeff: f64,
    /// Power cost coefficient β₂ per watt.
    pub cost_coeff: f64,
    /// Available power settings {P₁…P_L} in watts, strictly increasing.
    pub power_grid: Vec<f64>,
    /// Transmit power threshold P_th in watts.
    pub power_threshold: f64,
    /// Per-metric normalization windows.
    pub qos_bounds: BTreeMap<QosMetric, QosBounds>,
}

/// Default power grid {5, 10, …, 50} W.
pub fn default_power_grid() -> Vec<f64> {
    (1..=10).map(|i| 5.0 * i as f64).collect()
}

pub const DEFAULT_POWER_THRESHOLD: f64 = 50.0;

impl MarketParams {
    pub fn new(
        payment_coeff: f64,
        cost_coeff: f64,
        power_grid: Vec<f64>,
        power_threshold: f64,
    ) -> Result<Self, WirelessError> {
        let mp = Self {
            payment_coeff,
            cost_coeff,
            power_grid,
            power_threshold,
            qos_bounds: BTreeMap::new(),
        };
        mp.validate()?;
        Ok(mp)
    }

    pub fn validate(&self) -> Result<(), WirelessError> {
        if !self.payment_coeff.is_finite() || self.payment_coeff < 0.0 {
            return Err(WirelessError::Domain("payment_coeff must be >= 0".into()));
        }
        if !self.cost_coeff.is_finite() || self.cost_coeff < 0.0 {
            return Err(WirelessError::Domain("cost_coeff must be >= 0".into()));
        }
        if !(self.power_threshold > 0.0) {
            return Err(WirelessError::Domain("power_threshold must be > 0".into()));
        }
        if self.power_grid.is_empty() {
            return Err(WirelessError::Domain("power_grid must be nonempty".into()));
        }
        let mut prev = 0.0;
        for &p in &self.power_grid {
            if !(p > prev) || !p.is_finite() {
                return Err(WirelessError::Domain(format!(
                    "power_grid must be strictly increasing and positive, offending entry {p}"
                )));
            }
            if p > self.power_threshold {
                return Err(WirelessError::Domain(format!(
                    "power_grid entry {p} W exceeds power_threshold {} W",
                    self.power_threshold
                )));
            }
            prev = p;
        }
        for (metric, b) in &self.qos_bounds {
            QosBounds::new(b.min, b.max)
                .map_err(|e| WirelessError::Domain(format!("bounds for {metric}: {e}")))?;
        }
        Ok(())
    }

    /// Fills any missing normalization window with its default: (0, 1) for
    /// the OP complement, (0, value at P_th) for DR and TP.
    pub fn resolve_default_bounds(&mut self, ch: &ChannelParams) -> Result<(), WirelessError> {
        if !self.qos_bounds.contains_key(&QosMetric::OpComplement) {
            self.qos_bounds.insert(QosMetric::OpComplement, QosBounds::new(0.0, 1.0)?);
        }
        if !self.qos_bounds.contains_key(&QosMetric::DataRate) {
            let hi = data_rate(ch, self.power_threshold)?;
            self.qos_bounds.insert(QosMetric::DataRate, QosBounds::new(0.0, hi)?);
        }
        if !self.qos_bounds.contains_key(&QosMetric::Throughput) {
            let hi = throughput(ch, self.power_threshold)?;
            self.qos_bounds.insert(QosMetric::Throughput, QosBounds::new(0.0, hi)?);
        }
        Ok(())
    }

    pub fn bounds_for(&self, metric: QosMetric) -> Result<QosBounds, WirelessError> {
        self.qos_bounds
            .get(&metric)
            .copied()
            .ok_or(WirelessError::UnknownBounds(metric))
    }
}

/// Channel plus market parameters for one of the K independent BS–user pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirelessContext {
    pub channel: ChannelParams,
    pub market: MarketParams,
    /// 1-based pair index k.
    pub pair_index: u32,
    /// Configured number of users K.
    pub num_users: u32,
}

impl WirelessContext {
    pub fn new(
        channel: ChannelParams,
        market: MarketParams,
        pair_index: u32,
        num_users: u32,
    ) -> Result<Self, WirelessError> {
        channel.validate()?;
        market.validate()?;
        if num_users < 1 || pair_index < 1 || pair_index > num_users {
            return Err(WirelessError::Domain(format!(
                "pair_index {pair_index} not in [1, {num_users}]"
            )));
        }
        Ok(Self { channel, market, pair_index, num_users })
    }

    /// Single-pair context with the default per-metric bounds resolved.
    pub fn single_pair(
        channel: ChannelParams,
        mut market: MarketParams,
    ) -> Result<Self, WirelessError> {
        market.resolve_default_bounds(&channel)?;
        Self::new(channel, market, 1, 1)
    }
}

/// The utility map F of the market model: (q − Q_min)/(Q_max − Q_min).
///
/// Deliberately not clamped; values outside [0, 1] indicate mis-calibrated
/// bounds and are logged as warnings.
pub fn normalized_utility(q: &QosValue, mp: &MarketParams) -> Result<f64, WirelessError> {
    let b = mp.bounds_for(q.metric)?;
    let f = (q.value - b.min) / (b.max - b.min);
    if !(0.0..=1.0).contains(&f) {
        log::warn!(
            "normalized {} utility {f:.6} outside [0,1]; check bounds ({}, {})",
            q.metric,
            b.min,
            b.max
        );
    }
    Ok(f)
}

/// One evaluated point of the market objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityPoint {
    pub power: f64,
    pub qos: QosValue,
    /// Normalized QoS value F.
    pub normalized: f64,
    /// β₁·F − β₂·P.
    pub utility: f64,
    /// Whether this point satisfies the QoS floor Q >= Q_min.
    pub feasible: bool,
}

/// Evaluates the market objective at an arbitrary power (no grid constraint);
/// used for dense sweeps.
pub fn evaluate_utility(
    ctx: &WirelessContext,
    metric: QosMetric,
    power: f64,
) -> Result<UtilityPoint, WirelessError> {
    let qos = qos_value(&ctx.channel, metric, power)?;
    let normalized = normalized_utility(&qos, &ctx.market)?;
    let utility = ctx.market.payment_coeff * normalized - ctx.market.cost_coeff * power;
    let feasible = qos.value >= ctx.market.bounds_for(metric)?.min;
    Ok(UtilityPoint { power, qos, normalized, utility, feasible })
}

/// Market objective at a grid power setting, enforcing the grid and
/// threshold constraints. Points violating the QoS floor are flagged
/// infeasible, never silently dropped.
pub fn nsp_utility(
    ctx: &WirelessContext,
    metric: QosMetric,
    power: f64,
) -> Result<UtilityPoint, WirelessError> {
    if power > ctx.market.power_threshold {
        return Err(WirelessError::Constraint(format!(
            "power {power} W exceeds threshold {} W",
            ctx.market.power_threshold
        )));
    }
    if !ctx.market.power_grid.iter().any(|&p| p == power) {
        return Err(WirelessError::Constraint(format!(
            "power {power} W is not one of the available settings"
        )));
    }
    evaluate_utility(ctx, metric, power)
}

/// Result of the exhaustive grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalPower {
    pub best_power: f64,
    pub best_utility: f64,
    /// Every grid point, feasible or not, in ascending power order.
    pub sweep: Vec<UtilityPoint>,
}

/// Ground-truth oracle for the market problem: evaluates every grid point
/// and returns the feasible argmax, ties broken toward the lowest power.
pub fn brute_force_optimal_power(
    ctx: &WirelessContext,
    metric: QosMetric,
) -> Result<OptimalPower, WirelessError> {
    let mut sweep = Vec::with_capacity(ctx.market.power_grid.len());
    for &p in &ctx.market.power_grid {
        sweep.push(nsp_utility(ctx, metric, p)?);
    }
    let best = sweep
        .iter()
        .filter(|pt| pt.feasible)
        .fold(None::<&UtilityPoint>, |acc, pt| match acc {
            Some(cur) if pt.utility > cur.utility => Some(pt),
            None => Some(pt),
            _ => acc,
        });
    match best {
        Some(pt) => Ok(OptimalPower {
            best_power: pt.power,
            best_utility: pt.utility,
            sweep,
        }),
        None => Err(WirelessError::Infeasible(format!(
            "no grid point satisfies the {metric} QoS floor"
        ))),
    }
}

/// Formats a float with 12 significant digits in plain decimal notation.
/// All CSV exports use this so repeated runs diff cleanly.
pub fn format_sig12(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".to_string()
        } else if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let exp10 = v.abs().log10().floor() as i32;
    let decimals = (11 - exp10).clamp(0, 17) as usize;
    format!("{v:.decimals$}")
}

/// CSV header shared by all utility-sweep exports.
pub const SWEEP_CSV_HEADER: &str = "P_watts,metric,qos_value,F,utility,feasible";

/// Renders sweep rows as CSV (header included).
pub fn sweep_to_csv(rows: &[UtilityPoint]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            format_sig12(r.power),
            r.qos.metric,
            format_sig12(r.qos.value),
            format_sig12(r.normalized),
            format_sig12(r.utility),
            r.feasible
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_channel() -> ChannelParams {
        // M=10, θ=6, D=10, α=2, σ²=1, B=1e6, γ_th = 10 dB -> linear 10
        ChannelParams::new(10, 6.0, 10.0, 2.0, 1.0, 1e6, db_to_linear(10.0)).unwrap()
    }

    fn paper_context() -> WirelessContext {
        let market =
            MarketParams::new(1.0, 0.003, default_power_grid(), DEFAULT_POWER_THRESHOLD).unwrap();
        WirelessContext::single_pair(paper_channel(), market).unwrap()
    }

    fn rel_err(got: f64, want: f64) -> f64 {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }

    /// Quadrature of the PDF over [0, hi]; the oracle route for the OP
    /// closed form.
    fn pdf_mass(ch: &ChannelParams, power: f64, hi: f64) -> f64 {
        numerics::integrate(
            |z| snr_pdf(z, ch, power).unwrap(),
            0.0,
            hi,
            1e-12,
            1e-14,
            1_000_000,
        )
        .unwrap()
        .value
    }

    #[test]
    fn pdf_at_origin() {
        let mut ch = paper_channel();
        ch.num_antennas = 1;
        // M = 1: exponential density at origin is 1/s = σ²/(θ·P·D^{-α})
        let s = 6.0 * 20.0 * 0.01;
        assert!(rel_err(snr_pdf(0.0, &ch, 20.0).unwrap(), 1.0 / s) < 1e-14);
        ch.num_antennas = 2;
        assert_eq!(snr_pdf(0.0, &ch, 20.0).unwrap(), 0.0);
    }

    #[test]
    fn pdf_rejects_bad_inputs() {
        let ch = paper_channel();
        assert!(matches!(snr_pdf(1.0, &ch, 0.0), Err(WirelessError::Domain(_))));
        assert!(matches!(snr_pdf(-1.0, &ch, 5.0), Err(WirelessError::Domain(_))));
    }

    #[test]
    fn pdf_normalizes_across_parameter_grid() {
        for m in [1u32, 2, 4, 10] {
            for p in [1.0, 10.0, 100.0] {
                for theta in [1.0, 6.0] {
                    for alpha in [2.0, 3.0] {
                        let ch = ChannelParams::new(m, theta, 10.0, alpha, 1.0, 1e6, 10.0).unwrap();
                        let s = theta * p * 10f64.powf(-alpha);
                        let hi = s * (m as f64 + 40.0 * (m as f64).sqrt() + 60.0);
                        let mass = pdf_mass(&ch, p, hi);
                        assert!(
                            (mass - 1.0).abs() < 1e-9,
                            "M={m} P={p} θ={theta} α={alpha}: mass={mass}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn outage_zero_threshold() {
        let mut ch = paper_channel();
        ch.outage_threshold = 0.0;
        assert_eq!(outage_probability(&ch, 20.0).unwrap(), 0.0);
    }

    #[test]
    fn outage_exponential_special_case() {
        // M = 1 reduces to 1 - e^{-x} with x = σ²·γ_th·D^α/(θ·P)
        let mut ch = paper_channel();
        ch.num_antennas = 1;
        for p in [2.0, 20.0, 200.0] {
            let x = ch.outage_threshold * 100.0 / (6.0 * p);
            let want = 1.0 - (-x).exp();
            assert!(rel_err(outage_probability(&ch, p).unwrap(), want) < 1e-12);
        }
    }

    #[test]
    fn outage_matches_pdf_quadrature() {
        let ch = paper_channel();
        let closed = outage_probability(&ch, 20.0).unwrap();
        let quad = pdf_mass(&ch, 20.0, ch.outage_threshold);
        assert!((closed - quad).abs() <= 1e-8, "closed={closed} quad={quad}");
        // Frozen reference computed from the Poisson-tail identity:
        // x = 1000/120 = 25/3, P(10, 25/3) = 0.32549983646402834
        assert!(rel_err(closed, 0.325_499_836_464_028_34) < 1e-12);
    }

    #[test]
    fn outage_strictly_decreasing_in_power() {
        // Below ~3 W the OP saturates to 1.0 in f64, so start where the
        // value is representably below 1.
        let ch = paper_channel();
        let mut prev = outage_probability(&ch, 4.0).unwrap();
        assert!(prev < 1.0);
        for i in 5..=100 {
            let op = outage_probability(&ch, i as f64).unwrap();
            assert!(op < prev, "OP not strictly decreasing at P={i}");
            prev = op;
        }
    }

    #[test]
    fn data_rate_zero_bandwidth() {
        let mut ch = paper_channel();
        ch.bandwidth = 0.0;
        assert_eq!(data_rate(&ch, 20.0).unwrap(), 0.0);
    }

    #[test]
    fn data_rate_matches_m1_closed_form() {
        // (B/ln2)·e^c·E₁(c) with c = σ²·D^α/(θ·P); verified against
        // independent quadrature before adoption.
        let mut ch = paper_channel();
        ch.num_antennas = 1;
        for p in [5.0f64, 20.0, 50.0] {
            let c = 100.0 / (6.0 * p);
            let closed = ch.bandwidth / std::f64::consts::LN_2
                * c.exp()
                * numerics::exp_integral_e1(c).unwrap();
            let dr = data_rate(&ch, p).unwrap();
            assert!(rel_err(dr, closed) < 1e-6, "P={p}: dr={dr} closed={closed}");
        }
    }

    #[test]
    fn data_rate_frozen_reference_values() {
        // High-precision quadrature values computed ahead of the build.
        let ch = paper_channel();
        assert!(rel_err(data_rate(&ch, 20.0).unwrap(), 3_638_753.370_108_430_7) < 1e-8);
        assert!(rel_err(data_rate(&ch, 5.0).unwrap(), 1_960_096.924_771_469_7) < 1e-8);
        let mut ch1 = ch.clone();
        ch1.num_antennas = 1;
        assert!(rel_err(data_rate(&ch1, 20.0).unwrap(), 971_165.384_158_817_3) < 1e-8);
    }

    #[test]
    fn data_rate_monotone_in_power_and_bandwidth() {
        let ch = paper_channel();
        let mut prev = 0.0;
        for p in [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0] {
            let dr = data_rate(&ch, p).unwrap();
            assert!(dr > prev, "DR not strictly increasing at P={p}");
            prev = dr;
        }
        let mut chb = ch.clone();
        chb.bandwidth = 2e6;
        assert!(data_rate(&chb, 20.0).unwrap() > data_rate(&ch, 20.0).unwrap());
    }

    #[test]
    fn throughput_composition() {
        let ch = paper_channel();
        let tp = throughput(&ch, 20.0).unwrap();
        let op = outage_probability(&ch, 20.0).unwrap();
        let dr = data_rate(&ch, 20.0).unwrap();
        assert!(rel_err(tp, (1.0 - op) * dr) < 1e-14);
        assert!(rel_err(tp, 2_454_339.743_205_204_6) < 1e-8); // frozen composition

        let mut ch0 = ch.clone();
        ch0.outage_threshold = 0.0;
        assert!(rel_err(throughput(&ch0, 20.0).unwrap(), data_rate(&ch0, 20.0).unwrap()) < 1e-15);
        ch0.bandwidth = 0.0;
        assert_eq!(throughput(&ch0, 20.0).unwrap(), 0.0);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_unbiased() {
        let ch = paper_channel();
        let a = sample_snr_monte_carlo(&ch, 20.0, 1, 7).unwrap();
        let b = sample_snr_monte_carlo(&ch, 20.0, 1, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_snr_monte_carlo(&ch, 20.0, 1, 8).unwrap());

        // Law of large numbers: mean of Σ|h_j|² is M·θ within 1%.
        let n = 1_000_000;
        let samples = sample_snr_monte_carlo(&ch, 20.0, n, 42).unwrap();
        let gain = 20.0 * 0.01 / 1.0;
        let mean_y: f64 = samples.iter().map(|s| s / gain).sum::<f64>() / n as f64;
        assert!(rel_err(mean_y, 60.0) < 0.01, "mean Σh² = {mean_y}, want 60 ± 1%");
    }

    #[test]
    fn monte_carlo_outage_fraction_matches_closed_form() {
        let ch = paper_channel();
        let n = 1_000_000;
        let samples = sample_snr_monte_carlo(&ch, 20.0, n, 123).unwrap();
        let frac =
            samples.iter().filter(|&&s| s < ch.outage_threshold).count() as f64 / n as f64;
        let op = outage_probability(&ch, 20.0).unwrap();
        let band = 3.0 * (op * (1.0 - op) / n as f64).sqrt();
        assert!(
            (frac - op).abs() <= band,
            "empirical {frac} vs closed form {op} (band {band})"
        );
    }

    #[test]
    fn normalized_utility_window() {
        let mp = {
            let mut m =
                MarketParams::new(1.0, 0.0, default_power_grid(), DEFAULT_POWER_THRESHOLD).unwrap();
            m.qos_bounds.insert(QosMetric::DataRate, QosBounds::new(2.0, 10.0).unwrap());
            m
        };
        let at = |v: f64| QosValue::new(QosMetric::DataRate, v).unwrap();
        assert_eq!(normalized_utility(&at(2.0), &mp).unwrap(), 0.0);
        assert_eq!(normalized_utility(&at(10.0), &mp).unwrap(), 1.0);
        assert_eq!(normalized_utility(&at(6.0), &mp).unwrap(), 0.5);
        // Out-of-window values pass through un-clamped.
        assert!(normalized_utility(&at(14.0), &mp).unwrap() > 1.0);
        assert!(matches!(
            normalized_utility(&at(5.0), &MarketParams::new(1.0, 0.0, vec![5.0], 50.0).unwrap()),
            Err(WirelessError::UnknownBounds(_))
        ));
    }

    #[test]
    fn bounds_reject_inverted_window() {
        assert!(QosBounds::new(3.0, 3.0).is_err());
        assert!(QosBounds::new(5.0, 2.0).is_err());
    }

    #[test]
    fn market_params_reject_bad_grids() {
        assert!(MarketParams::new(1.0, 0.003, vec![], 50.0).is_err());
        assert!(MarketParams::new(1.0, 0.003, vec![10.0, 10.0], 50.0).is_err());
        assert!(MarketParams::new(1.0, 0.003, vec![10.0, 5.0], 50.0).is_err());
        assert!(MarketParams::new(1.0, 0.003, vec![10.0, 60.0], 50.0).is_err());
        assert!(MarketParams::new(1.0, 0.003, vec![-5.0], 50.0).is_err());
    }

    #[test]
    fn nsp_utility_linear_composition() {
        let ctx = paper_context();
        let pt = nsp_utility(&ctx, QosMetric::OpComplement, 20.0).unwrap();
        // β₁ = 1, β₂ = 0.003, P = 20: utility = F - 0.06
        assert!(rel_err(pt.utility, pt.normalized - 0.06) < 1e-12);

        let mut free = paper_context();
        free.market.cost_coeff = 0.0;
        let pt = nsp_utility(&free, QosMetric::OpComplement, 20.0).unwrap();
        assert_eq!(pt.utility, pt.normalized);
    }

    #[test]
    fn nsp_utility_enforces_grid_and_threshold() {
        let ctx = paper_context();
        assert!(matches!(
            nsp_utility(&ctx, QosMetric::Throughput, 22.0),
            Err(WirelessError::Constraint(_))
        ));
        assert!(matches!(
            nsp_utility(&ctx, QosMetric::Throughput, 60.0),
            Err(WirelessError::Constraint(_))
        ));
    }

    #[test]
    fn brute_force_singleton_and_cost_domination() {
        let ch = paper_channel();
        let market = MarketParams::new(1.0, 0.003, vec![20.0], 50.0).unwrap();
        let ctx = WirelessContext::single_pair(ch.clone(), market).unwrap();
        let best = brute_force_optimal_power(&ctx, QosMetric::Throughput).unwrap();
        assert_eq!(best.best_power, 20.0);
        assert_eq!(best.sweep.len(), 1);

        let mut costly = paper_context();
        costly.market.cost_coeff = 1e6;
        let best = brute_force_optimal_power(&costly, QosMetric::Throughput).unwrap();
        assert_eq!(best.best_power, 5.0, "enormous power cost must pick the lowest setting");
    }

    #[test]
    fn brute_force_matches_per_point_utilities() {
        let ctx = paper_context();
        for metric in QosMetric::ALL {
            let result = brute_force_optimal_power(&ctx, metric).unwrap();
            assert_eq!(result.sweep.len(), ctx.market.power_grid.len());
            for pt in &result.sweep {
                let direct = nsp_utility(&ctx, metric, pt.power).unwrap();
                assert_eq!(pt, &direct, "sweep row must equal direct evaluation");
            }
            let manual_best = result
                .sweep
                .iter()
                .filter(|p| p.feasible)
                .fold(f64::NEG_INFINITY, |m, p| m.max(p.utility));
            assert_eq!(result.best_utility, manual_best);
        }
    }

    #[test]
    fn brute_force_infeasible_grid() {
        let mut ctx = paper_context();
        // Raise the TP floor far above anything attainable.
        ctx.market
            .qos_bounds
            .insert(QosMetric::Throughput, QosBounds::new(1e12, 2e12).unwrap());
        assert!(matches!(
            brute_force_optimal_power(&ctx, QosMetric::Throughput),
            Err(WirelessError::Infeasible(_))
        ));
    }

    #[test]
    fn argmax_invariant_under_coefficient_scaling() {
        let ctx = paper_context();
        for metric in QosMetric::ALL {
            let base = brute_force_optimal_power(&ctx, metric).unwrap();
            for scale in [0.01, 3.0, 1e4] {
                let mut scaled = ctx.clone();
                scaled.market.payment_coeff *= scale;
                scaled.market.cost_coeff *= scale;
                let got = brute_force_optimal_power(&scaled, metric).unwrap();
                assert_eq!(got.best_power, base.best_power, "scale={scale} metric={metric}");
            }
        }
    }

    /// Counts peaks reached by an ascent: i > 0 with v[i] > v[i-1] and
    /// (i last or v[i] > v[i+1]). The left edge of a power sweep sits in a
    /// cost-dominated dip for the OP/TP metrics and is not a peak of
    /// interest.
    fn ascent_peaks(v: &[f64]) -> usize {
        (1..v.len())
            .filter(|&i| v[i] > v[i - 1] && (i == v.len() - 1 || v[i] > v[i + 1]))
            .count()
    }

    #[test]
    fn utility_sweeps_are_unimodal() {
        let ctx = paper_context();
        let lo = ctx.market.power_grid[0];
        let hi = ctx.market.power_threshold;
        for metric in QosMetric::ALL {
            // Dense 200-point sweep.
            let dense: Vec<f64> = (0..200)
                .map(|i| {
                    let p = lo + (hi - lo) * i as f64 / 199.0;
                    evaluate_utility(&ctx, metric, p).unwrap().utility
                })
                .collect();
            assert_eq!(ascent_peaks(&dense), 1, "{metric} dense sweep is not unimodal");

            // The decision grid itself, which is what the gating interval
            // property relies on.
            let grid: Vec<f64> = ctx
                .market
                .power_grid
                .iter()
                .map(|&p| nsp_utility(&ctx, metric, p).unwrap().utility)
                .collect();
            assert_eq!(ascent_peaks(&grid), 1, "{metric} grid sweep is not unimodal");
        }
    }

    #[test]
    fn sig12_formatting() {
        assert_eq!(format_sig12(0.0), "0");
        assert_eq!(format_sig12(5.0), "5.00000000000");
        assert_eq!(format_sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_sig12(-2454339.7432052046), "-2454339.74321");
        assert_eq!(format_sig12(9.6e-7), "0.00000096000000000");
        // round-trips well within the 12 significant digits
        for &v in &[0.3254998364640283, 3638753.3701084307, 1e-9, -0.06] {
            let parsed: f64 = format_sig12(v).parse().unwrap();
            assert!(rel_err(parsed, v) < 1e-11);
        }
    }

    #[test]
    fn sweep_csv_shape() {
        let ctx = paper_context();
        let sweep = brute_force_optimal_power(&ctx, QosMetric::Throughput).unwrap().sweep;
        let csv = sweep_to_csv(&sweep);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(SWEEP_CSV_HEADER));
        assert_eq!(lines.count(), 10);
        assert!(csv.contains(",TP,"));
        assert!(csv.contains(",true\n"));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn pdf_nonnegative(z in 0.0f64..1e4, m in 1u32..12, p in 0.1f64..200.0) {
                let ch = ChannelParams::new(m, 6.0, 10.0, 2.0, 1.0, 1e6, 10.0).unwrap();
                prop_assert!(snr_pdf(z, &ch, p).unwrap() >= 0.0);
            }

            #[test]
            fn outage_is_probability(m in 1u32..12, p in 0.1f64..200.0, gth in 0.0f64..100.0) {
                let ch = ChannelParams::new(m, 6.0, 10.0, 2.0, 1.0, 1e6, gth).unwrap();
                let op = outage_probability(&ch, p).unwrap();
                prop_assert!((0.0..=1.0).contains(&op));
            }

            #[test]
            fn throughput_nonnegative(m in 1u32..8, p in 0.5f64..100.0) {
                let ch = ChannelParams::new(m, 6.0, 10.0, 2.0, 1.0, 1e6, 10.0).unwrap();
                prop_assert!(throughput(&ch, p).unwrap() >= 0.0);
            }
        }
    }
}
