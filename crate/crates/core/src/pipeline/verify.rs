//! Self-check harness behind `rawbmamba verify`.

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::bimamba::{reverse_sequence, BiMambaModel, FusionMode};
use crate::error::{Error, Result};
use crate::frontend::{BlockPlan, Frontend, FrontendConfig, SincFilterbank};
use crate::layers::{Parameterized, SeededRng};
use crate::mamba::{MambaConfig, MambaLayer, MambaStack};
use crate::metrics::{asoftmax_loss, compute_eer, compute_min_tdcf, AsvRates, Label, ScoreRecord, TdcfCosts};
use crate::ssm::{causal_convolve, discretize_zoh, discretize_zoh_with, lti_kernel, selective_scan, ZohForm};
use crate::tensor::{finite_difference_check, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

impl FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            _ => Err(Error::Config(format!("unknown verify level `{s}` (quick, full)"))),
        }
    }
}

/// Deliberate defects used to confirm that the harness can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Evaluate the ZOH input coefficient as `(exp(ΔA) − 1) / A`.
    NaiveZoh,
}

impl FromStr for Fault {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive-zoh" => Ok(Fault::NaiveZoh),
            _ => Err(Error::Config(format!("unknown fault `{s}` (naive-zoh)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Human-readable bound, e.g. `< 1e-10` or `>= 20`.
    pub tolerance: String,
    pub observed: f64,
    pub pass: bool,
    pub seconds: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<34} observed {:<12.3e} tolerance {} ({:.2}s)", self.name, self.observed, self.tolerance, self.seconds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub level: Level,
    pub faults: Vec<Fault>,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

enum Bound {
    Below(f64),
    AtMost(f64),
    AtLeast(f64),
}

impl Bound {
    fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::Below(t) => v < t,
            Bound::AtMost(t) => v <= t,
            Bound::AtLeast(t) => v >= t,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Below(t) => write!(f, "< {t:e}"),
            Bound::AtMost(t) => write!(f, "<= {t:e}"),
            Bound::AtLeast(t) => write!(f, ">= {t}"),
        }
    }
}

struct Runner {
    checks: Vec<CheckResult>,
}

impl Runner {
    fn run(&mut self, name: &str, bound: Bound, check: impl FnOnce() -> Result<f64>) {
        let t0 = Instant::now();
        // an error inside a check is a failure of that check, not of the harness
        let observed = check().unwrap_or(f64::NAN);
        self.checks.push(CheckResult {
            name: name.to_string(),
            tolerance: bound.to_string(),
            observed,
            pass: bound.holds(observed),
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
}

pub fn verify(level: Level, faults: &[Fault]) -> VerifyReport {
    let zoh = if faults.contains(&Fault::NaiveZoh) { ZohForm::Naive } else { ZohForm::Stable };
    let scale = if level == Level::Full { 5 } else { 1 };
    let mut r = Runner { checks: Vec::new() };

    r.run("scan_kernel_equivalence", Bound::Below(1e-10), || scan_vs_kernel(100 * scale, zoh));
    r.run("zoh_closed_form", Bound::Below(1e-12), || zoh_closed_form(zoh));
    r.run("zoh_small_step_limit", Bound::Below(1e-15), || zoh_small_step(zoh));
    r.run("gradcheck_selective_scan", Bound::Below(1e-4), gradcheck_scan);
    r.run("gradcheck_mamba_stack", Bound::Below(1e-4), gradcheck_stack);
    for mode in FusionMode::ALL {
        r.run(&format!("gradcheck_model_{mode}"), Bound::Below(1e-4), || gradcheck_model(mode));
    }
    if level == Level::Full {
        r.run("gradcheck_frontend", Bound::Below(1e-3), gradcheck_frontend);
    }
    r.run("bidirectional_symmetry", Bound::AtMost(0.0), || symmetry(20));
    r.run("mamba_causality", Bound::AtMost(0.0), causality);
    r.run("filterbank_stopband_db", Bound::AtLeast(20.0), || filterbank(10 * scale).map(|f| f.0));
    r.run("filterbank_dc_gain", Bound::Below(1e-6), || filterbank(10 * scale).map(|f| f.1));
    r.run("eer_sweep_oracle", Bound::AtMost(0.0), || eer_oracle(50 * scale));
    r.run("min_tdcf_oracle", Bound::Below(1e-12), || tdcf_oracle(50 * scale));
    r.run("eer_monotone_invariance", Bound::AtMost(0.0), || eer_monotone(50 * scale));

    VerifyReport { level, faults: faults.to_vec(), checks: r.checks }
}

fn rand_tensor(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(rng.uniform_vec(n, lo, hi), shape).expect("shape matches")
}

fn scan_vs_kernel(instances: usize, zoh: ZohForm) -> Result<f64> {
    let mut rng = SeededRng::new(101);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (e, n, l) = (1 + rng.below(4), 1 + rng.below(8), 1 + rng.below(32));
        let delta = rng.uniform(0.01, 1.0);
        let a = rand_tensor(&mut rng, &[e, n], -2.0, -0.05);
        let b = rand_tensor(&mut rng, &[n], -1.0, 1.0);
        let c = rand_tensor(&mut rng, &[n], -1.0, 1.0);
        let x = rand_tensor(&mut rng, &[1, l, e], -1.0, 1.0);
        let b_sel = Tensor::new(b.data().repeat(l), &[1, l, n])?;
        let c_sel = Tensor::new(c.data().repeat(l), &[1, l, n])?;
        let pair = discretize_zoh_with(&a, &Tensor::full(&[1, l, e], delta), &b_sel, &x, zoh)?;
        let scan = selective_scan(&pair, &c_sel)?;
        let conv = causal_convolve(&x, &lti_kernel(&a, delta, &b, &c, l)?)?;
        for (p, q) in scan.data().iter().zip(conv.data()) {
            worst = worst.max((p - q).abs());
        }
    }
    Ok(worst)
}

fn scalar_zoh(a: f64, delta: f64, zoh: ZohForm) -> Result<(f64, f64)> {
    let one = |v: f64| Tensor::full(&[1, 1, 1], v);
    let pair = discretize_zoh_with(&Tensor::full(&[1, 1], a), &one(delta), &one(1.0), &one(1.0), zoh)?;
    Ok((pair.a_bar.data()[0], pair.b_bar_x.data()[0]))
}

fn zoh_closed_form(zoh: ZohForm) -> Result<f64> {
    let (a_bar, coef) = scalar_zoh(-1.0, LN_2, zoh)?;
    Ok((a_bar - 0.5).abs().max((coef - 0.5).abs()))
}

fn zoh_small_step(zoh: ZohForm) -> Result<f64> {
    let (a, d) = (-1.0, 1e-12);
    let (_, coef) = scalar_zoh(a, d, zoh)?;
    let x = d * a;
    let series = d * (1.0 + x / 2.0 + x * x / 6.0);
    Ok((coef - series).abs() / series.abs())
}

fn gradcheck_scan() -> Result<f64> {
    let mut rng = SeededRng::new(202);
    let (b, l, e, n) = (2, 5, 3, 2);
    let params = vec![
        rand_tensor(&mut rng, &[e, n], -1.5, -0.2),
        rand_tensor(&mut rng, &[b, l, e], 0.05, 0.8),
        rand_tensor(&mut rng, &[b, l, n], -1.0, 1.0),
        rand_tensor(&mut rng, &[b, l, e], -1.0, 1.0),
        rand_tensor(&mut rng, &[b, l, n], -1.0, 1.0),
    ];
    let w = rand_tensor(&mut rng, &[b, l, e], -1.0, 1.0);
    let f = |p: &[Tensor]| -> Result<Tensor> {
        let pair = discretize_zoh(&p[0], &p[1], &p[2], &p[3])?;
        Ok(selective_scan(&pair, &p[4])?.mul(&w)?.sum())
    };
    Ok(finite_difference_check(f, &params, 1e-6)?.max_error())
}

/// Parameters of `model` followed by `extra`, for substitution-based checks.
fn with_params<M: Parameterized>(model: &M, extra: Tensor) -> Vec<Tensor> {
    let mut p: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t).collect();
    p.push(extra);
    p
}

fn substitute<M: Parameterized + Clone>(model: &M, p: &[Tensor]) -> (M, usize) {
    let mut m = model.clone();
    let mut k = 0;
    m.visit_params_mut("", &mut |_, t| {
        *t = p[k].clone();
        k += 1;
    });
    (m, k)
}

fn gradcheck_stack() -> Result<f64> {
    let mut rng = SeededRng::new(303);
    let stack = MambaStack::new(&mut rng, MambaConfig::new(4, 4), 2);
    let x = rand_tensor(&mut rng, &[1, 8, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[1, 8, 4], -1.0, 1.0);
    let f = |p: &[Tensor]| -> Result<Tensor> {
        let (s, k) = substitute(&stack, p);
        Ok(s.forward(&p[k])?.mul(&w)?.sum())
    };
    Ok(finite_difference_check(f, &with_params(&stack, x), 1e-5)?.max_error())
}

fn gradcheck_model(mode: FusionMode) -> Result<f64> {
    let mut rng = SeededRng::new(404);
    let model = BiMambaModel::new(&mut rng, MambaConfig::new(4, 4), 1, mode, None, 4);
    let x = rand_tensor(&mut rng, &[1, 12, 4], -1.0, 1.0);
    let f = |p: &[Tensor]| -> Result<Tensor> {
        let (m, k) = substitute(&model, p);
        let out = m.forward(&p[k])?;
        asoftmax_loss(&m.fusion.head, &out.hidden, &[1], 3.0)
    };
    // selection gradients are tiny at initialization; a larger step keeps
    // rounding noise below the tolerance
    Ok(finite_difference_check(f, &with_params(&model, x), 1e-3)?.max_error())
}

fn gradcheck_frontend() -> Result<f64> {
    let cfg = FrontendConfig {
        n_filters: 4,
        sinc_pool: 4,
        blocks: vec![BlockPlan { channels: 4, pool: (2, 2) }],
        ..FrontendConfig::paper()
    };
    let mut rng = SeededRng::new(505);
    let fe = Frontend::new(&mut rng, cfg)?;
    let wave = rand_tensor(&mut rng, &[1, 512], -0.8, 0.8);
    let n = fe.forward(&wave)?.sequence.numel();
    let w = rand_tensor(&mut rng, &[n], -1.0, 1.0);
    let params: Vec<Tensor> = fe.named_params().into_iter().map(|(_, t)| t).collect();
    let f = |p: &[Tensor]| -> Result<Tensor> {
        let (m, _) = substitute(&fe, p);
        let seq = m.forward(&wave)?.sequence;
        Ok(seq.reshape(&[seq.numel()])?.mul(&w)?.sum())
    };
    Ok(finite_difference_check(f, &params, 1e-6)?.max_error())
}

fn symmetry(inputs: usize) -> Result<f64> {
    let mut rng = SeededRng::new(606);
    let mut model = BiMambaModel::new(&mut rng, MambaConfig::new(4, 4), 2, FusionMode::Concat, None, 4);
    model.backward_stack = model.forward_stack.clone();
    let mut worst = 0.0f64;
    for _ in 0..inputs {
        let l = 1 + rng.below(24);
        let x = rand_tensor(&mut rng, &[2, l, 4], -2.0, 2.0);
        let (_, bwd) = model.bidirectional_forward(&x)?;
        let reference = model.forward_stack.forward(&reverse_sequence(&x)?)?;
        for (p, q) in bwd.data().iter().zip(reference.data()) {
            worst = worst.max((p - q).abs());
        }
    }
    Ok(worst)
}

/// Largest change at any position before the perturbed one.
fn causality() -> Result<f64> {
    let mut rng = SeededRng::new(707);
    let layer = MambaLayer::new(&mut rng, MambaConfig::new(4, 4));
    let l = 16;
    let x = rand_tensor(&mut rng, &[1, l, 4], -1.0, 1.0);
    let base = layer.forward(&x)?;
    let mut worst = 0.0f64;
    for pos in 0..l {
        let mut data = x.to_vec();
        for c in 0..4 {
            data[pos * 4 + c] += 0.5;
        }
        let y = layer.forward(&Tensor::new(data, &[1, l, 4])?)?;
        for i in 0..pos * 4 {
            worst = worst.max((y.data()[i] - base.data()[i]).abs());
        }
    }
    Ok(worst)
}

fn dtft_magnitude(h: &[f64], freq: f64, sr: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (n, &v) in h.iter().enumerate() {
        let w = 2.0 * PI * freq * n as f64 / sr;
        re += v * w.cos();
        im -= v * w.sin();
    }
    re.hypot(im)
}

/// Random bands with f1 in [1000, 2500] Hz and width in [600, 1500] Hz so
/// both octave probes stay inside (0, Nyquist]. Returns the smallest
/// stop-band attenuation (dB) and the largest |DC gain|.
pub fn filterbank_response(filters: usize, seed: u64) -> Result<(f64, f64)> {
    let cfg = FrontendConfig::paper();
    let mut rng = SeededRng::new(seed);
    let mut low = Vec::new();
    let mut band = Vec::new();
    for _ in 0..filters {
        let f1 = rng.uniform(1000.0, 2500.0);
        let w = rng.uniform(600.0, 1500.0);
        low.push(f1 - cfg.min_low_hz);
        band.push(w - cfg.min_band_hz);
    }
    let bank = SincFilterbank::from_raw(&cfg, low, band);
    let k = bank.kernels()?;
    let len = cfg.kernel_len;
    let sr = cfg.sample_rate as f64;
    let (mut min_db, mut max_dc) = (f64::INFINITY, 0.0f64);
    for (i, (f1, f2)) in bank.bands().into_iter().enumerate() {
        let h = &k.data()[i * len..(i + 1) * len];
        max_dc = max_dc.max(h.iter().sum::<f64>().abs());
        let center = dtft_magnitude(h, (f1 + f2) / 2.0, sr);
        for outside in [f1 / 2.0, 2.0 * f2] {
            min_db = min_db.min(-20.0 * (dtft_magnitude(h, outside, sr) / center).log10());
        }
    }
    Ok((min_db, max_dc))
}

fn filterbank(filters: usize) -> Result<(f64, f64)> {
    filterbank_response(filters, 808)
}

fn random_records(rng: &mut SeededRng, coarse: bool) -> Vec<ScoreRecord> {
    let nb = 1 + rng.below(20);
    let ns = 1 + rng.below(20);
    let score = |rng: &mut SeededRng| {
        if coarse {
            rng.below(6) as f64 / 5.0
        } else {
            rng.uniform(-3.0, 3.0)
        }
    };
    let mut v = Vec::new();
    for i in 0..nb {
        v.push(ScoreRecord::new(format!("b{i}"), Label::Bonafide, score(rng)));
    }
    for i in 0..ns {
        v.push(ScoreRecord::new(format!("s{i}"), Label::Spoof, score(rng)));
    }
    v
}

/// Error rates at threshold `t` by direct counting: reject bonafide below
/// `t`, accept spoof at or above it.
fn rates_at(records: &[ScoreRecord], t: f64) -> (f64, f64) {
    let nb = records.iter().filter(|r| r.label == Label::Bonafide).count() as f64;
    let ns = records.len() as f64 - nb;
    let miss = records.iter().filter(|r| r.label == Label::Bonafide && r.score < t).count() as f64;
    let fa = records.iter().filter(|r| r.label == Label::Spoof && r.score >= t).count() as f64;
    (miss / nb, fa / ns)
}

/// Candidate thresholds: every score, plus +inf.
fn sweep(records: &[ScoreRecord]) -> Vec<(f64, f64)> {
    let mut ts: Vec<f64> = records.iter().map(|r| r.score).collect();
    ts.push(f64::INFINITY);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.into_iter().map(|t| rates_at(records, t)).collect()
}

fn eer_by_sweep(records: &[ScoreRecord]) -> f64 {
    let pts = sweep(records);
    let i = pts.iter().position(|(frr, far)| frr - far >= 0.0).expect("+inf point has FRR 1");
    if i == 0 {
        return (pts[0].0 + pts[0].1) / 2.0;
    }
    let ((fp, ap), (fc, ac)) = (pts[i - 1], pts[i]);
    let (dp, dc) = (fp - ap, fc - ac);
    let alpha = dp / (dp - dc);
    let frr = fp + alpha * (fc - fp);
    let far = ap + alpha * (ac - ap);
    (frr + far) / 2.0
}

fn eer_oracle(sets: usize) -> Result<f64> {
    let mut rng = SeededRng::new(909);
    let mut worst = 0.0f64;
    for i in 0..sets {
        let recs = random_records(&mut rng, i % 2 == 0);
        worst = worst.max((compute_eer(&recs)?.eer - eer_by_sweep(&recs)).abs());
    }
    Ok(worst)
}

fn tdcf_oracle(sets: usize) -> Result<f64> {
    let mut rng = SeededRng::new(1010);
    let asv = AsvRates::default();
    let costs = TdcfCosts::default();
    let c1 = costs.p_tar * (costs.c_miss_cm - costs.c_miss_asv * asv.p_miss)
        - costs.p_non * costs.c_fa_asv * asv.p_fa;
    let c2 = costs.c_fa_cm * costs.p_spoof * (1.0 - asv.p_miss_spoof);
    let mut worst = 0.0f64;
    for i in 0..sets {
        let recs = random_records(&mut rng, i % 2 == 0);
        let brute = sweep(&recs)
            .into_iter()
            .map(|(frr, far)| (c1 * frr + c2 * far) / c1.min(c2))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max((compute_min_tdcf(&recs, &asv, &costs)?.min_tdcf - brute).abs());
    }
    Ok(worst)
}

fn eer_monotone(sets: usize) -> Result<f64> {
    let mut rng = SeededRng::new(1111);
    let mut worst = 0.0f64;
    for i in 0..sets {
        let recs = random_records(&mut rng, i % 2 == 0);
        let mapped: Vec<ScoreRecord> = recs
            .iter()
            .map(|r| ScoreRecord::new(r.utt_id.clone(), r.label, (2.0 * r.score).exp() + 3.0))
            .collect();
        worst = worst.max((compute_eer(&recs)?.eer - compute_eer(&mapped)?.eer).abs());
    }
    Ok(worst)
}
