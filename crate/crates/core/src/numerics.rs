//! Scalar special functions and deterministic adaptive quadrature.
//!
//! Everything here is pure f64 math with no global state: the gamma family
//! (`ln_gamma`, [`regularized_lower_gamma`]), the exponential integral E₁,
//! and a Gauss–Kronrod adaptive integrator used for the channel-metric
//! integrals.

use thiserror::Error;

/// Maximum iterations for series / continued-fraction evaluation.
const MAX_ITER: usize = 400;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("failed to converge: {0}")]
    Convergence(String),
}

/// Natural log of the gamma function for x > 0 (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma function P(a, x) = γ(a, x) / Γ(a).
///
/// P is the CDF of a Gamma(a, 1) variable: P(a, 0) = 0, P(a, x) → 1 as
/// x → ∞, monotone nondecreasing in x. Uses the series expansion for
/// x < a + 1 and the Lentz continued fraction for the complement otherwise,
/// which avoids cancellation on both ends.
pub fn regularized_lower_gamma(a: f64, x: f64) -> Result<f64, NumericsError> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(NumericsError::Domain(format!("shape a must be > 0, got {a}")));
    }
    if !(x >= 0.0) {
        return Err(NumericsError::Domain(format!("x must be >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    // exp(-x + a ln x - lnΓ(a)), the common prefactor of both expansions.
    let prefactor = (-x + a * x.ln() - ln_gamma(a)).exp();
    if x < a + 1.0 {
        lower_series(a, x).map(|s| (prefactor * s).min(1.0))
    } else {
        upper_continued_fraction(a, x).map(|q| (1.0 - prefactor * q).clamp(0.0, 1.0))
    }
}

/// Series for P(a, x) / prefactor = Σ_{n≥0} x^n / (a (a+1) ⋯ (a+n)).
fn lower_series(a: f64, x: f64) -> Result<f64, NumericsError> {
    let mut denom = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON {
            return Ok(sum);
        }
    }
    Err(NumericsError::Convergence(format!(
        "lower gamma series stalled at a={a}, x={x}"
    )))
}

/// Modified Lentz continued fraction for Q(a, x) / prefactor.
fn upper_continued_fraction(a: f64, x: f64) -> Result<f64, NumericsError> {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut f = d;
    for n in 1..=MAX_ITER {
        let an = -(n as f64) * (n as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        f *= delta;
        if (delta - 1.0).abs() < f64::EPSILON {
            return Ok(f);
        }
    }
    Err(NumericsError::Convergence(format!(
        "upper gamma continued fraction stalled at a={a}, x={x}"
    )))
}

/// Exponential integral E₁(x) = ∫ₓ^∞ e^{−t}/t dt for x > 0.
///
/// Power series below 1, Lentz continued fraction above.
pub fn exp_integral_e1(x: f64) -> Result<f64, NumericsError> {
    if !(x > 0.0) {
        return Err(NumericsError::Domain(format!("E1 requires x > 0, got {x}")));
    }
    if x <= 1.0 {
        // E1(x) = -γ - ln x + Σ_{k≥1} (-1)^{k+1} x^k / (k·k!)
        const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 1..=MAX_ITER {
            term *= -x / k as f64;
            let contrib = -term / k as f64;
            sum += contrib;
            if contrib.abs() < sum.abs() * f64::EPSILON {
                return Ok(-EULER_GAMMA - x.ln() + sum);
            }
        }
        Err(NumericsError::Convergence(format!("E1 series stalled at x={x}")))
    } else {
        // E1(x) = e^{-x} / (x + 1 - 1²/(x + 3 - 2²/(x + 5 - ...)))
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut f = d;
        for n in 1..=MAX_ITER {
            let an = -((n * n) as f64);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            f *= delta;
            if (delta - 1.0).abs() < f64::EPSILON {
                return Ok(f * (-x).exp());
            }
        }
        Err(NumericsError::Convergence(format!(
            "E1 continued fraction stalled at x={x}"
        )))
    }
}

// 15-point Kronrod abscissae on [-1, 1] (positive half; symmetric).
const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_7,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Embedded 7-point Gauss weights (odd-indexed Kronrod nodes plus center).
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

/// Result of an adaptive quadrature run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

/// One Gauss–Kronrod 7/15 panel: (kronrod value, |kronrod − gauss|).
fn gk15_panel<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for (i, (&x, &wk)) in KRONROD_NODES.iter().zip(&KRONROD_WEIGHTS).enumerate() {
        let (lo, hi) = (f(center - half * x), f(center + half * x));
        // The center node appears once, all others twice.
        let pair = if x == 0.0 { lo } else { lo + hi };
        kronrod += wk * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        } else if x == 0.0 {
            gauss += GAUSS_WEIGHTS[3] * pair;
        }
    }
    (kronrod * half, (kronrod - gauss).abs() * half)
}

/// Deterministic globally adaptive Gauss–Kronrod integration of `f` over
/// [a, b].
///
/// Bisects the segment with the largest error estimate until the summed
/// error satisfies `abs_tol` or `rel_tol`, or fails once the evaluation
/// budget `max_evals` is spent.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_evals: usize,
) -> Result<Quadrature, NumericsError> {
    if !a.is_finite() || !b.is_finite() || a > b {
        return Err(NumericsError::Domain(format!("bad interval [{a}, {b}]")));
    }
    if a == b {
        return Ok(Quadrature { value: 0.0, abs_error: 0.0, evaluations: 0 });
    }

    struct Segment {
        a: f64,
        b: f64,
        value: f64,
        error: f64,
    }

    let (value, error) = gk15_panel(&mut f, a, b);
    let mut segments = vec![Segment { a, b, value, error }];
    let mut evals = 15usize;

    loop {
        let total: f64 = segments.iter().map(|s| s.value).sum();
        let err: f64 = segments.iter().map(|s| s.error).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(Quadrature { value: total, abs_error: err, evaluations: evals });
        }
        if evals + 30 > max_evals {
            return Err(NumericsError::Convergence(format!(
                "quadrature needs more than {max_evals} evaluations \
                 (error {err:.3e} over [{a}, {b}])"
            )));
        }
        // Split the worst segment.
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|(_, s), (_, t)| s.error.total_cmp(&t.error))
            .map(|(i, _)| i)
            .expect("segment list never empty");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval no longer splittable in f64; accept its estimate.
            segments.push(Segment { error: 0.0, ..seg });
            continue;
        }
        let (lv, le) = gk15_panel(&mut f, seg.a, mid);
        let (rv, re) = gk15_panel(&mut f, mid, seg.b);
        evals += 30;
        segments.push(Segment { a: seg.a, b: mid, value: lv, error: le });
        segments.push(Segment { a: mid, b: seg.b, value: rv, error: re });
    }
}
