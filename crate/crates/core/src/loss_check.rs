//! Verification driver for the loss kernels: a line-based fixture format with
//! expected values, plus a seeded central-finite-difference gradient suite.
//!
//! Fixture lines are `kernel key=value ...`; `#` starts a comment. Lists are
//! comma separated and `anchor`, `cluster`, `background` may repeat.
//!
//! ```text
//! smooth_l1 x=2 expected=1.5
//! frcnn p=0.5,0.5 u=1 t=0.5,0,0,0 v=0,0,0,0 lambda=1 expected=0.8181471805599453
//! rpn n_cls=4 n_reg=2 lambda=1 anchor=0.5,neg,3,0,0,0,0,0,0,0 expected=0.17328679513998632
//! pcl proposals=2 classes=1 cluster=0.5,0,0.8,0.6 expected=0.17833747196936622
//! pcl proposals=1 classes=1 background=1,0 expected=domain
//! ```
//!
//! An anchor is `prob,pos|neg,t0..t3,target0..target3`; a cluster is
//! `confidence,label,score...`; a background entry is `weight,score`.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::loss::*;

pub const FIXTURE_TOLERANCE: f64 = 1e-9;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
const FD_STEP: f64 = 1e-6;
const FD_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct FixtureError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expected {
    Value(f64),
    DomainError,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossCase {
    SmoothL1(f64),
    Frcnn {
        p: ClassDistribution<f64>,
        u: usize,
        t: RegressionTarget<f64>,
        lambda: f64,
    },
    Rpn(RpnBatchInput<f64>),
    Pcl(BagLossInput<f64>),
}

impl LossCase {
    pub fn kernel(&self) -> &'static str {
        match self {
            LossCase::SmoothL1(_) => "smooth_l1",
            LossCase::Frcnn { .. } => "frcnn",
            LossCase::Rpn(_) => "rpn",
            LossCase::Pcl(_) => "pcl",
        }
    }

    pub fn evaluate(&self) -> Result<f64, LossError> {
        match self {
            LossCase::SmoothL1(x) => Ok(smooth_l1(*x)),
            LossCase::Frcnn { p, u, t, lambda } => frcnn_loss(p, *u, t, *lambda),
            LossCase::Rpn(b) => rpn_loss(b),
            LossCase::Pcl(b) => pcl_bag_loss(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureCase {
    pub line: usize,
    pub case: LossCase,
    pub expected: Expected,
}

struct Fields<'a> {
    line: usize,
    map: BTreeMap<&'a str, Vec<&'a str>>,
}

impl<'a> Fields<'a> {
    fn err(&self, message: impl Into<String>) -> FixtureError {
        FixtureError {
            line: self.line,
            message: message.into(),
        }
    }

    fn all(&self, key: &str) -> &[&'a str] {
        self.map.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    fn one(&self, key: &str) -> Result<&'a str, FixtureError> {
        match self.all(key) {
            [v] => Ok(v),
            [] => Err(self.err(format!("missing key {key:?}"))),
            _ => Err(self.err(format!("key {key:?} repeated"))),
        }
    }

    fn num(&self, key: &str) -> Result<f64, FixtureError> {
        let raw = self.one(key)?;
        self.parse_num(key, raw)
    }

    fn num_or(&self, key: &str, default: f64) -> Result<f64, FixtureError> {
        if self.all(key).is_empty() {
            Ok(default)
        } else {
            self.num(key)
        }
    }

    fn parse_num(&self, key: &str, raw: &str) -> Result<f64, FixtureError> {
        raw.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(format!("{key}: invalid number {raw:?}")))
    }

    fn list(&self, key: &str, raw: &str) -> Result<Vec<f64>, FixtureError> {
        raw.split(',').map(|v| self.parse_num(key, v)).collect()
    }

    fn quad(&self, key: &str, v: &[f64]) -> Result<[f64; 4], FixtureError> {
        v.try_into().map_err(|_| self.err(format!("{key}: expected 4 values")))
    }

    fn index(&self, key: &str, raw: &str) -> Result<usize, FixtureError> {
        raw.trim()
            .parse()
            .map_err(|_| self.err(format!("{key}: invalid index {raw:?}")))
    }

    fn count(&self, key: &str) -> Result<usize, FixtureError> {
        let raw = self.one(key)?;
        self.index(key, raw)
    }
}

fn invalid(f: &Fields<'_>, e: LossError) -> FixtureError {
    f.err(e.to_string())
}

pub fn parse_fixtures(text: &str) -> Result<Vec<FixtureCase>, FixtureError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let kernel = tokens.next().unwrap_or_default();
        let mut fields = Fields {
            line,
            map: BTreeMap::new(),
        };
        for tok in tokens {
            let (k, v) = tok.split_once('=').ok_or_else(|| fields.err(format!("expected key=value, got {tok:?}")))?;
            fields.map.entry(k).or_default().push(v);
        }
        let expected = match fields.one("expected")? {
            "domain" => Expected::DomainError,
            raw => Expected::Value(fields.parse_num("expected", raw)?),
        };
        let case = match kernel {
            "smooth_l1" => LossCase::SmoothL1(fields.num("x")?),
            "frcnn" => {
                let p = ClassDistribution::new(fields.list("p", fields.one("p")?)?).map_err(|e| invalid(&fields, e))?;
                let t = fields.quad("t", &fields.list("t", fields.one("t")?)?)?;
                let v = fields.quad("v", &fields.list("v", fields.one("v")?)?)?;
                LossCase::Frcnn {
                    p,
                    u: fields.count("u")?,
                    t: RegressionTarget::new(t, v).map_err(|e| invalid(&fields, e))?,
                    lambda: fields.num_or("lambda", 1.0)?,
                }
            }
            "rpn" => {
                let anchors = fields
                    .all("anchor")
                    .iter()
                    .map(|raw| parse_anchor(&fields, raw))
                    .collect::<Result<_, _>>()?;
                let batch = RpnBatchInput {
                    anchors,
                    n_cls: fields.num("n_cls")?,
                    n_reg: fields.num("n_reg")?,
                    lambda: fields.num_or("lambda", 1.0)?,
                };
                batch.validate().map_err(|e| invalid(&fields, e))?;
                LossCase::Rpn(batch)
            }
            "pcl" => {
                let clusters = fields
                    .all("cluster")
                    .iter()
                    .map(|raw| parse_cluster(&fields, raw))
                    .collect::<Result<_, _>>()?;
                let background = fields
                    .all("background")
                    .iter()
                    .map(|raw| match fields.list("background", raw)?.as_slice() {
                        &[weight, score] => Ok(BackgroundProposal { weight, score }),
                        _ => Err(fields.err("background: expected weight,score")),
                    })
                    .collect::<Result<_, _>>()?;
                let input = BagLossInput {
                    proposal_count: fields.count("proposals")?,
                    class_count: fields.count("classes")?,
                    clusters,
                    background,
                };
                input.validate().map_err(|e| invalid(&fields, e))?;
                LossCase::Pcl(input)
            }
            other => return Err(fields.err(format!("unknown kernel {other:?}"))),
        };
        out.push(FixtureCase { line, case, expected });
    }
    Ok(out)
}

fn parse_anchor(f: &Fields<'_>, raw: &str) -> Result<RpnAnchor<f64>, FixtureError> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 10 {
        return Err(f.err("anchor: expected prob,pos|neg and 8 coordinates"));
    }
    let positive = match parts[1] {
        "pos" => true,
        "neg" => false,
        other => return Err(f.err(format!("anchor: label must be pos or neg, got {other:?}"))),
    };
    let nums = parts[2..]
        .iter()
        .map(|v| f.parse_num("anchor", v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RpnAnchor {
        prob: f.parse_num("anchor", parts[0])?,
        positive,
        coords: f.quad("anchor", &nums[..4])?,
        target_coords: f.quad("anchor", &nums[4..])?,
    })
}

fn parse_cluster(f: &Fields<'_>, raw: &str) -> Result<BagCluster<f64>, FixtureError> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() < 3 {
        return Err(f.err("cluster: expected confidence,label,score..."));
    }
    Ok(BagCluster {
        confidence: f.parse_num("cluster", parts[0])?,
        label: f.index("cluster", parts[1])?,
        member_scores: parts[2..]
            .iter()
            .map(|v| f.parse_num("cluster", v))
            .collect::<Result<_, _>>()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub line: usize,
    pub kernel: &'static str,
    pub expected: Expected,
    pub got: Result<f64, LossError>,
    pub passed: bool,
}

pub fn check_fixtures(cases: &[FixtureCase]) -> Vec<CaseResult> {
    cases
        .iter()
        .map(|c| {
            let got = c.case.evaluate();
            let passed = match (&c.expected, &got) {
                (Expected::Value(e), Ok(v)) => (e - v).abs() <= FIXTURE_TOLERANCE,
                (Expected::DomainError, Err(LossError::Domain(_))) => true,
                _ => false,
            };
            CaseResult {
                line: c.line,
                kernel: c.case.kernel(),
                expected: c.expected.clone(),
                got,
                passed,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub kernel: &'static str,
    pub points: usize,
    pub max_error: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.max_error < GRADIENT_TOLERANCE
    }
}

fn central<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Away from the smooth-L1 kink at `|x| = 1`.
fn off_kink(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let x: f64 = rng.random_range(lo..hi);
        if !(0.999..=1.001).contains(&x.abs()) {
            return x;
        }
    }
}

fn quad(rng: &mut ChaCha8Rng) -> [f64; 4] {
    std::array::from_fn(|_| off_kink(rng, -3.0, 3.0))
}

/// Probability vector with every entry at least `0.05 / n`.
fn distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn fd_smooth_l1(rng: &mut ChaCha8Rng) -> f64 {
    (0..FD_POINTS)
        .map(|_| {
            let x = off_kink(rng, -3.0, 3.0);
            (central(smooth_l1, x) - smooth_l1_grad(x)).abs()
        })
        .fold(0.0, f64::max)
}

#[allow(clippy::needless_range_loop)]
fn fd_frcnn(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..FD_POINTS {
        let n = rng.random_range(2..5);
        let probs = distribution(rng, n);
        let u = rng.random_range(0..n);
        let lambda = rng.random_range(0.0..2.0);
        let t = RegressionTarget::new(quad(rng), [0.0; 4]).unwrap();
        let p = ClassDistribution::new(probs.clone()).unwrap();
        let (d_pu, d_t) = frcnn_loss_grad(&p, u, &t, lambda).unwrap();

        // p_u enters only through -ln p_u; perturb it without renormalising
        let cls = |x: f64| -x.ln();
        worst = worst.max((central(cls, probs[u]) - d_pu).abs());
        for i in 0..4 {
            let f = |x: f64| {
                let mut tt = t;
                tt.predicted[i] = x;
                frcnn_loss(&p, u, &tt, lambda).unwrap()
            };
            worst = worst.max((central(f, t.predicted[i]) - d_t[i]).abs());
        }
    }
    worst
}

#[allow(clippy::needless_range_loop)]
fn fd_rpn(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..FD_POINTS {
        let anchors: Vec<RpnAnchor<f64>> = (0..rng.random_range(1..5))
            .map(|_| RpnAnchor {
                prob: rng.random_range(0.05..0.95),
                positive: rng.random_bool(0.5),
                coords: quad(rng),
                target_coords: [0.0; 4],
            })
            .collect();
        let batch = RpnBatchInput {
            n_cls: anchors.len() as f64,
            n_reg: rng.random_range(1.0..4.0),
            lambda: rng.random_range(0.0..2.0),
            anchors,
        };
        let grads = rpn_loss_grad(&batch).unwrap();
        for (a, (d_p, d_t)) in grads.iter().enumerate() {
            let fp = |x: f64| {
                let mut b = batch.clone();
                b.anchors[a].prob = x;
                rpn_loss(&b).unwrap()
            };
            worst = worst.max((central(fp, batch.anchors[a].prob) - d_p).abs());
            for i in 0..4 {
                let ft = |x: f64| {
                    let mut b = batch.clone();
                    b.anchors[a].coords[i] = x;
                    rpn_loss(&b).unwrap()
                };
                worst = worst.max((central(ft, batch.anchors[a].coords[i]) - d_t[i]).abs());
            }
        }
    }
    worst
}

fn fd_pcl(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..FD_POINTS {
        let clusters: Vec<BagCluster<f64>> = (0..rng.random_range(0..3))
            .map(|_| BagCluster {
                confidence: rng.random_range(0.0..1.0),
                label: 0,
                member_scores: (0..rng.random_range(1..4)).map(|_| rng.random_range(0.05..0.95)).collect(),
            })
            .collect();
        let background: Vec<BackgroundProposal<f64>> = (0..rng.random_range(usize::from(clusters.is_empty())..3))
            .map(|_| BackgroundProposal {
                weight: rng.random_range(0.0..1.0),
                score: rng.random_range(0.05..0.95),
            })
            .collect();
        let input = BagLossInput {
            proposal_count: clusters.iter().map(|c| c.member_scores.len()).sum::<usize>() + background.len(),
            class_count: 1,
            clusters,
            background,
        };
        let (d_members, d_bg) = pcl_bag_loss_grad(&input).unwrap();
        for (n, grads) in d_members.iter().enumerate() {
            for (m, g) in grads.iter().enumerate() {
                let f = |x: f64| {
                    let mut b = input.clone();
                    b.clusters[n].member_scores[m] = x;
                    pcl_bag_loss(&b).unwrap()
                };
                worst = worst.max((central(f, input.clusters[n].member_scores[m]) - g).abs());
            }
        }
        for (r, g) in d_bg.iter().enumerate() {
            let f = |x: f64| {
                let mut b = input.clone();
                b.background[r].score = x;
                pcl_bag_loss(&b).unwrap()
            };
            worst = worst.max((central(f, input.background[r].score) - g).abs());
        }
    }
    worst
}

/// Compare analytic gradients with central differences at seeded random points.
pub fn gradient_suite(seed: u64) -> Vec<GradientCheck> {
    type Probe = fn(&mut ChaCha8Rng) -> f64;
    let suites: [(&'static str, Probe); 4] = [
        ("smooth_l1", fd_smooth_l1),
        ("frcnn", fd_frcnn),
        ("rpn", fd_rpn),
        ("pcl", fd_pcl),
    ];
    suites
        .iter()
        .enumerate()
        .map(|(i, (kernel, run))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            GradientCheck {
                kernel,
                points: FD_POINTS,
                max_error: run(&mut rng),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossCheckReport {
    pub cases: Vec<CaseResult>,
    pub gradients: Vec<GradientCheck>,
}

impl LossCheckReport {
    pub fn run(fixtures: &[FixtureCase], seed: u64) -> Self {
        Self {
            cases: check_fixtures(fixtures),
            gradients: gradient_suite(seed),
        }
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed) && self.gradients.iter().all(GradientCheck::passed)
    }
}

impl fmt::Display for LossCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        for c in &self.cases {
            let expected = match c.expected {
                Expected::Value(v) => format!("{v:.12}"),
                Expected::DomainError => "domain error".into(),
            };
            let got = match &c.got {
                Ok(v) => format!("{v:.12}"),
                Err(e) => e.to_string(),
            };
            writeln!(
                f,
                "{} fixture line {} {}: expected {expected}, got {got}",
                verdict(c.passed),
                c.line,
                c.kernel
            )?;
        }
        for g in &self.gradients {
            writeln!(
                f,
                "{} gradient {}: max error {:.3e} over {} points",
                verdict(g.passed()),
                g.kernel,
                g.max_error,
                g.points
            )?;
        }
        Ok(())
    }
}
