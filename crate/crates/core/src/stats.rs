//! Comparison methodology: three-period splits of training logs, Welch's
//! unequal-variance t-test, exact binomial sign tests, and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{CoreError, Result};
use crate::trainlog::TrainLog;

/// Per-episode returns of a log split into equal thirds of the frame budget.
#[derive(Debug, Clone, Default)]
pub struct PeriodSplit {
    pub initial: Vec<f64>,
    pub middle: Vec<f64>,
    pub end: Vec<f64>,
}

pub const PERIODS: [&str; 3] = ["Initial", "Middle", "End"];

/// Assigns each episode by its end frame: boundaries at `total/3` and
/// `2*total/3`, with an episode ending exactly on a boundary going to the
/// earlier period. Episodes that overshoot the budget land in End.
pub fn period_split(log: &TrainLog, total_frames: u64) -> Result<PeriodSplit> {
    if total_frames == 0 {
        return Err(CoreError::Usage("period split needs a positive frame budget".into()));
    }
    let mut split = PeriodSplit::default();
    for e in &log.episodes {
        let r = e.return_raw as f64;
        if 3 * e.end_frame <= total_frames {
            split.initial.push(r);
        } else if 3 * e.end_frame <= 2 * total_frames {
            split.middle.push(r);
        } else {
            split.end.push(r);
        }
    }
    Ok(split)
}

impl PeriodSplit {
    pub fn period(&self, idx: usize) -> &[f64] {
        match idx {
            0 => &self.initial,
            1 => &self.middle,
            _ => &self.end,
        }
    }
}

/// Welch's t-test result.
#[derive(Debug, Clone, Copy)]
pub struct TTestResult {
    pub t: f64,
    /// Two-sided p value.
    pub p: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub var_a: f64,
    pub var_b: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Which two-sample t-test the comparison uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TestFamily {
    /// Unequal-variance Welch t (default).
    #[default]
    Welch,
    /// Student's pooled-variance t.
    StudentPooled,
}

/// Student's pooled-variance t with `n_a + n_b - 2` degrees of freedom.
pub fn student_t_pooled(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(CoreError::Usage(format!(
            "student_t_pooled needs at least 2 samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mean_a, var_a) = mean_var(a);
    let (mean_b, var_b) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let sp2 = ((na - 1.0) * var_a + (nb - 1.0) * var_b) / df;
    let se2 = sp2 * (1.0 / na + 1.0 / nb);
    let (t, p) = if se2 == 0.0 {
        if mean_a == mean_b {
            (0.0, 1.0)
        } else if mean_a > mean_b {
            (f64::INFINITY, 0.0)
        } else {
            (f64::NEG_INFINITY, 0.0)
        }
    } else {
        let t = (mean_a - mean_b) / se2.sqrt();
        (t, student_t_two_sided_p(t, df))
    };
    Ok(TTestResult {
        t,
        p,
        df,
        n_a: a.len(),
        n_b: b.len(),
        mean_a,
        mean_b,
        var_a,
        var_b,
    })
}

/// Welch's unequal-variance t with Welch-Satterthwaite degrees of freedom;
/// two-sided p from the t distribution. Requires two samples per side.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(CoreError::Usage(format!(
            "welch_t needs at least 2 samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mean_a, var_a) = mean_var(a);
    let (mean_b, var_b) = mean_var(b);
    let sa = var_a / a.len() as f64;
    let sb = var_b / b.len() as f64;
    let se2 = sa + sb;
    if se2 == 0.0 {
        // both samples constant
        let (t, p) = if mean_a == mean_b {
            (0.0, 1.0)
        } else if mean_a > mean_b {
            (f64::INFINITY, 0.0)
        } else {
            (f64::NEG_INFINITY, 0.0)
        };
        return Ok(TTestResult {
            t,
            p,
            df: (a.len() + b.len() - 2) as f64,
            n_a: a.len(),
            n_b: b.len(),
            mean_a,
            mean_b,
            var_a,
            var_b,
        });
    }
    let t = (mean_a - mean_b) / se2.sqrt();
    let df = se2 * se2
        / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let p = student_t_two_sided_p(t, df);
    Ok(TTestResult {
        t,
        p,
        df,
        n_a: a.len(),
        n_b: b.len(),
        mean_a,
        mean_b,
        var_a,
        var_b,
    })
}

/// Two-sided p for a t statistic: `I_x(df/2, 1/2)` with `x = df/(df + t^2)`.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if !t.is_finite() {
        return 0.0;
    }
    reg_inc_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g=7, n=9
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)` via the Lentz continued fraction.
fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - reg_inc_beta(b, a, 1.0 - x)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// How ties enter the sign-test sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieRule {
    /// `n = wins + losses` (default).
    Drop,
    /// `n = wins + losses + ties`.
    Count,
}

/// Sign-test convention: tie handling plus the optional mid-p correction.
#[derive(Debug, Clone, Copy)]
pub struct SignConvention {
    pub ties: TieRule,
    pub midp: bool,
}

impl Default for SignConvention {
    fn default() -> Self {
        Self {
            ties: TieRule::Drop,
            midp: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SignTestResult {
    pub wins: u32,
    pub losses: u32,
    pub ties: u32,
    pub n: u32,
    /// One-sided p (exact summation; mid-p when the convention asks for it).
    pub p: f64,
    /// Exact fraction `p = num / 2^k` when computed in integer arithmetic.
    pub exact: Option<(u128, u128)>,
}

fn binom_coefficients(n: u32) -> Vec<u128> {
    let mut row = vec![1u128];
    for k in 1..=n as usize {
        let prev = row[k - 1];
        row.push(prev * (n as u128 - k as u128 + 1) / k as u128);
    }
    row
}

/// Exact one-sided binomial sign test: `p = P(X >= wins | n, 1/2)` by integer
/// summation of binomial coefficients (mid-p subtracts half the boundary
/// term). Falls back to floating summation only for n > 126.
pub fn binomial_sign(
    wins: u32,
    losses: u32,
    ties: u32,
    convention: SignConvention,
) -> Result<SignTestResult> {
    if wins + losses == 0 {
        return Err(CoreError::Usage("sign test needs at least one decisive outcome".into()));
    }
    let n = match convention.ties {
        TieRule::Drop => wins + losses,
        TieRule::Count => wins + losses + ties,
    };
    let (p, exact) = if n <= 126 {
        let coef = binom_coefficients(n);
        let tail: u128 = (wins..=n).map(|k| coef[k as usize]).sum();
        if convention.midp {
            // 2*P(X > wins) + P(X = wins) over 2^(n+1)
            let above: u128 = tail - coef[wins as usize];
            let num = 2 * above + coef[wins as usize];
            let den = 1u128 << (n + 1);
            (num as f64 / den as f64, Some((num, den)))
        } else {
            let den = 1u128 << n;
            (tail as f64 / den as f64, Some((tail, den)))
        }
    } else {
        let mut ln_c = 0.0f64; // ln C(n, 0)
        let mut p = 0.0f64;
        let ln_half_n = n as f64 * 0.5f64.ln();
        for k in 0..=n {
            if k >= wins {
                let w = if convention.midp && k == wins { 0.5 } else { 1.0 };
                p += w * (ln_c + ln_half_n).exp();
            }
            if k < n {
                ln_c += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
            }
        }
        (p, None)
    };
    Ok(SignTestResult {
        wins,
        losses,
        ties,
        n,
        p,
        exact,
    })
}

/// Cell classification of one env/period comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    ABetter,
    BBetter,
    NoDifference,
    /// Too few episodes on one side to test.
    NotEnoughData,
}

impl Outcome {
    fn label(self) -> &'static str {
        match self {
            Outcome::ABetter => "A-better",
            Outcome::BBetter => "B-better",
            Outcome::NoDifference => "none",
            Outcome::NotEnoughData => "insufficient",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompareCell {
    pub outcome: Outcome,
    pub test: Option<TTestResult>,
}

#[derive(Debug, Clone)]
pub struct EnvComparison {
    pub env: String,
    /// Indexed by period: Initial, Middle, End.
    pub cells: [CompareCell; 3],
}

/// Full comparison of two variants over a shared environment set.
#[derive(Debug, Clone)]
pub struct CompareReport {
    pub variant_a: String,
    pub variant_b: String,
    pub alpha: f64,
    pub convention: SignConvention,
    pub family: TestFamily,
    pub envs: Vec<EnvComparison>,
    /// Sign test over env-level End-period outcomes (A's wins), when any
    /// environment was decisive.
    pub sign_test: Option<SignTestResult>,
    pub config_hashes: Vec<String>,
}

/// Pools per-episode returns across seeds within each period and compares the
/// two variants env by env with Welch's t; the End-period outcomes feed a
/// binomial sign test.
pub fn compare_report(
    a_logs: &[TrainLog],
    b_logs: &[TrainLog],
    alpha: f64,
    convention: SignConvention,
) -> Result<CompareReport> {
    compare_report_with(a_logs, b_logs, alpha, convention, TestFamily::Welch)
}

/// [`compare_report`] with an explicit t-test family.
pub fn compare_report_with(
    a_logs: &[TrainLog],
    b_logs: &[TrainLog],
    alpha: f64,
    convention: SignConvention,
    family: TestFamily,
) -> Result<CompareReport> {
    if a_logs.is_empty() || b_logs.is_empty() {
        return Err(CoreError::Usage("comparison needs logs on both sides".into()));
    }
    if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
        return Err(CoreError::Config(format!("alpha {alpha} outside (0,1)")));
    }
    let group = |logs: &[TrainLog]| -> BTreeMap<String, Vec<TrainLog>> {
        let mut m: BTreeMap<String, Vec<TrainLog>> = BTreeMap::new();
        for log in logs {
            m.entry(log.env.clone()).or_default().push(log.clone());
        }
        m
    };
    let by_env_a = group(a_logs);
    let by_env_b = group(b_logs);
    let envs_a: Vec<&String> = by_env_a.keys().collect();
    let envs_b: Vec<&String> = by_env_b.keys().collect();
    if envs_a != envs_b {
        return Err(CoreError::Data(format!(
            "environment sets differ: {envs_a:?} vs {envs_b:?}"
        )));
    }

    let pool = |logs: &[TrainLog]| -> Result<PeriodSplit> {
        let mut pooled = PeriodSplit::default();
        for log in logs {
            let s = period_split(log, log.total_frames)?;
            pooled.initial.extend(s.initial);
            pooled.middle.extend(s.middle);
            pooled.end.extend(s.end);
        }
        Ok(pooled)
    };

    let mut envs = Vec::new();
    let mut wins = 0u32;
    let mut losses = 0u32;
    let mut ties = 0u32;
    for (env, a_group) in &by_env_a {
        let b_group = &by_env_b[env];
        let pa = pool(a_group)?;
        let pb = pool(b_group)?;
        let mut cells = Vec::with_capacity(3);
        for period in 0..3 {
            let (xa, xb) = (pa.period(period), pb.period(period));
            if xa.len() < 2 || xb.len() < 2 {
                cells.push(CompareCell {
                    outcome: Outcome::NotEnoughData,
                    test: None,
                });
                continue;
            }
            let test = match family {
                TestFamily::Welch => welch_t(xa, xb)?,
                TestFamily::StudentPooled => student_t_pooled(xa, xb)?,
            };
            let outcome = if test.p < alpha {
                if test.t > 0.0 {
                    Outcome::ABetter
                } else {
                    Outcome::BBetter
                }
            } else {
                Outcome::NoDifference
            };
            cells.push(CompareCell {
                outcome,
                test: Some(test),
            });
        }
        match cells[2].outcome {
            Outcome::ABetter => wins += 1,
            Outcome::BBetter => losses += 1,
            _ => ties += 1,
        }
        envs.push(EnvComparison {
            env: env.clone(),
            cells: cells.try_into().map_err(|_| CoreError::Data("period count".into()))?,
        });
    }

    let sign_test = if wins + losses > 0 {
        Some(binomial_sign(wins, losses, ties, convention)?)
    } else {
        None
    };

    let mut hashes: Vec<String> = a_logs
        .iter()
        .chain(b_logs)
        .map(|l| l.config_hash.clone())
        .collect();
    hashes.sort();
    hashes.dedup();

    Ok(CompareReport {
        variant_a: a_logs[0].variant.clone(),
        variant_b: b_logs[0].variant.clone(),
        alpha,
        convention,
        family,
        envs,
        sign_test,
        config_hashes: hashes,
    })
}

impl CompareReport {
    fn header(&self) -> String {
        let mut out = String::new();
        let tie = match self.convention.ties {
            TieRule::Drop => "drop",
            TieRule::Count => "count",
        };
        out.push_str("# compare report v1\n");
        let family = match self.family {
            TestFamily::Welch => "welch",
            TestFamily::StudentPooled => "student-pooled",
        };
        let _ = writeln!(
            out,
            "# variant_a={} variant_b={} alpha={} t_test={family} tie_rule={tie} midp={}",
            self.variant_a, self.variant_b, self.alpha, self.convention.midp
        );
        let _ = writeln!(out, "# configs={}", self.config_hashes.join(","));
        out.push_str(
            "# convention: one-sided exact binomial P(X >= wins | n, 1/2) over env-level End \
             outcomes; ties dropped unless tie_rule=count; --midp halves the boundary term\n",
        );
        out.push_str(
            "# reference points for reading published sign tests: 15/20 -> 0.020695 exact; \
             14/20 -> 0.057659 exact, 0.039177 mid-p; 8/20 -> 0.868412 exact, 0.808345 mid-p. \
             A p of 0.021 quoted for 14 wins of 20 corresponds to P(X >= 15), not P(X >= 14).\n",
        );
        out
    }

    /// Machine-readable rows: env, then per period outcome/t/p.
    pub fn to_tsv(&self) -> String {
        let mut out = self.header();
        out.push_str("env");
        for p in PERIODS {
            let _ = write!(out, "\t{p}_outcome\t{p}_t\t{p}_p");
        }
        out.push('\n');
        for e in &self.envs {
            out.push_str(&e.env);
            for c in &e.cells {
                match &c.test {
                    Some(t) => {
                        let _ = write!(out, "\t{}\t{:.6}\t{:.6e}", c.outcome.label(), t.t, t.p);
                    }
                    None => {
                        let _ = write!(out, "\t{}\t\t", c.outcome.label());
                    }
                }
            }
            out.push('\n');
        }
        match &self.sign_test {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "sign_test\twins={}\tlosses={}\tties={}\tn={}\tp={:.6}",
                    s.wins, s.losses, s.ties, s.n, s.p
                );
            }
            None => {
                out.push_str("sign_test\tno-decision\n");
            }
        }
        out
    }

    /// Plain-text table mirroring the three-period layout.
    pub fn render(&self) -> String {
        let mut out = self.header();
        let _ = writeln!(
            out,
            "{:<16} {:>24} {:>24} {:>24}",
            "Game", "Initial (t, p)", "Middle (t, p)", "End (t, p)"
        );
        for e in &self.envs {
            let cell = |c: &CompareCell| -> String {
                match &c.test {
                    Some(t) => format!("{:>8.3} {:>9.2e} {}", t.t, t.p, short(c.outcome)),
                    None => "insufficient".to_string(),
                }
            };
            let _ = writeln!(
                out,
                "{:<16} {:>24} {:>24} {:>24}",
                e.env,
                cell(&e.cells[0]),
                cell(&e.cells[1]),
                cell(&e.cells[2])
            );
        }
        match &self.sign_test {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "{} better in {} of {} decisive environments (ties: {}); binomial p = {:.4}",
                    self.variant_a,
                    s.wins,
                    s.wins + s.losses,
                    s.ties,
                    s.p
                );
            }
            None => {
                let _ = writeln!(out, "no decisive environments; no sign test");
            }
        }
        out
    }
}

fn short(o: Outcome) -> &'static str {
    match o {
        Outcome::ABetter => "[A]",
        Outcome::BBetter => "[B]",
        Outcome::NoDifference => "[ ]",
        Outcome::NotEnoughData => "[?]",
    }
}
