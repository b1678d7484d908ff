//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when a criterion fails that is not listed in `RECORDED_FAILURES`.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use boundselect::catalog::{balke_pearl_ate_spec, manski_binary_spec};
use boundselect::gauss::{solve_location, tn_cdf, TruncatedNormal};
use boundselect::linalg::dot;
use boundselect::lpbounds::{balke_pearl_latent, lp_to_bounds_spec, manski_binary_latent, DEFAULT_ENUM_CAP};
use boundselect::sim::{run, Dgp, Experiment, ExperimentReport, Sampling, SimConfig, SimRule, SpecKind, LENGTH_LEVELS};
use boundselect::{
    conditional_ci, conventional_ci, fixed_target, hybrid_ci, projection_ci, rule_cms, rule_weighted,
    truncation_bounds, BoundsSpec, CiKind, CriticalValues, DirectionData, Matrix, Piece, Polyhedron, ReducedForm,
    UpperTarget,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Criteria known to fail; the reason and measured values are in the README.
const RECORDED_FAILURES: &[&str] = &["2"];

const DGP_LABELS: [&str; 3] = ["calibrated", "uniform", "informative"];
const CALIBRATED_P: [f64; 6] = [0.08, 0.001, 0.001, 0.073, 0.139, 0.473];

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    details: Vec<String>,
    secs: f64,
}

struct Check {
    pass: bool,
    details: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check {
            pass: true,
            details: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.details
            .push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }
}

fn timed(id: &'static str, title: &'static str, f: impl FnOnce() -> Check) -> Outcome {
    let t = Instant::now();
    let c = f();
    Outcome {
        id,
        title,
        pass: c.pass,
        details: c.details,
        secs: t.elapsed().as_secs_f64(),
    }
}

fn load_config(name: &str) -> SimConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    SimConfig::from_json(&std::fs::read_to_string(path).expect("config readable")).expect("config valid")
}

/// `P(Y=y, D=d | Z=z)` indexed `[z][y][d]`.
fn cells(p: &[f64]) -> [[[f64; 2]; 2]; 2] {
    let mut t = [[[0.0; 2]; 2]; 2];
    for z in 0..2 {
        t[z][1][0] = p[3 * z];
        t[z][0][1] = p[3 * z + 1];
        t[z][1][1] = p[3 * z + 2];
        t[z][0][0] = 1.0 - p[3 * z] - p[3 * z + 1] - p[3 * z + 2];
    }
    t
}

fn manski_direct(p: &[f64], d: usize) -> (f64, f64) {
    let c = cells(p);
    (c[0][1][d].max(c[1][1][d]), (1.0 - c[0][0][d]).min(1.0 - c[1][0][d]))
}

fn bp_direct(p: &[f64]) -> (f64, f64) {
    let c = cells(p);
    let q = |y: usize, d: usize, z: usize| c[z][y][d];
    let lower = [
        q(1, 1, 1) + q(0, 0, 0) - 1.0,
        q(1, 1, 0) + q(0, 0, 1) - 1.0,
        q(1, 1, 0) - q(1, 1, 1) - q(1, 0, 1) - q(0, 1, 0) - q(1, 0, 0),
        q(1, 1, 1) - q(1, 1, 0) - q(1, 0, 0) - q(0, 1, 1) - q(1, 0, 1),
        -q(0, 1, 1) - q(1, 0, 1),
        -q(0, 1, 0) - q(1, 0, 0),
        q(0, 0, 1) - q(0, 1, 1) - q(1, 0, 1) - q(0, 1, 0) - q(0, 0, 0),
        q(0, 0, 0) - q(0, 1, 0) - q(1, 0, 0) - q(0, 1, 1) - q(0, 0, 1),
    ];
    let upper = [
        1.0 - q(0, 1, 1) - q(1, 0, 0),
        1.0 - q(0, 1, 0) - q(1, 0, 1),
        -q(0, 1, 0) + q(0, 1, 1) + q(0, 0, 1) + q(1, 1, 0) + q(0, 0, 0),
        -q(0, 1, 1) + q(1, 1, 1) + q(0, 0, 1) + q(0, 1, 0) + q(0, 0, 0),
        q(1, 1, 1) + q(0, 0, 1),
        q(1, 1, 0) + q(0, 0, 0),
        -q(1, 0, 1) + q(1, 1, 1) + q(0, 0, 1) + q(1, 1, 0) + q(1, 0, 0),
        -q(1, 0, 0) + q(1, 1, 0) + q(0, 0, 0) + q(1, 1, 1) + q(1, 0, 1),
    ];
    (
        lower.into_iter().fold(f64::NEG_INFINITY, f64::max),
        upper.into_iter().fold(f64::INFINITY, f64::min),
    )
}

fn random_feasible_p(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p = Vec::with_capacity(6);
    for _ in 0..2 {
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0) + 1e-4).collect();
        let s: f64 = w.iter().sum();
        p.extend(w[1..].iter().map(|x| x / s));
    }
    p
}

fn criterion_1(report: &ExperimentReport) -> Check {
    let mut c = Check::new();
    let conv = [0.95, 0.85, 0.95];
    let proj = [0.99, 0.96, 0.99];
    for (i, label) in DGP_LABELS.iter().enumerate() {
        let d = report.dgps.iter().find(|d| d.label == *label).expect("dgp present");
        let cov = |k| d.coverage_of(k).expect("kind present").coverage;
        let (cv, cd, cp, ch) = (
            cov(CiKind::Conventional),
            cov(CiKind::Conditional),
            cov(CiKind::Projection),
            cov(CiKind::Hybrid),
        );
        c.record(
            (cv - conv[i]).abs() <= 0.02,
            format!("{label} conventional {cv:.4} vs {:.2} +/- 0.02", conv[i]),
        );
        c.record(
            (cd - 0.95).abs() <= 0.015,
            format!("{label} conditional {cd:.4} vs 0.95 +/- 0.015"),
        );
        c.record(
            (ch - 0.95).abs() <= 0.015,
            format!("{label} hybrid {ch:.4} vs 0.95 +/- 0.015"),
        );
        c.record(
            cp >= 0.945 && (cp - proj[i]).abs() <= 0.02,
            format!("{label} projection {cp:.4} vs {:.2} +/- 0.02, >= 0.945", proj[i]),
        );
    }
    c
}

fn criterion_2() -> Check {
    let cfg = load_config("figure2.json");
    let report = run(&cfg).expect("length run");
    let mut c = Check::new();
    let median = LENGTH_LEVELS.iter().position(|&l| l == 0.5).expect("median level");
    let q95 = LENGTH_LEVELS.iter().position(|&l| l == 0.95).expect("95th level");
    let dgp = |label: &str| report.dgps.iter().find(|d| d.label == label).expect("dgp present");
    for label in ["calibrated", "informative"] {
        let r = dgp(label).length_of(CiKind::Hybrid).expect("hybrid lengths").ratios[median];
        c.record(
            r <= 0.85,
            format!("{label} hybrid/projection median ratio {r:.4} <= 0.85"),
        );
    }
    let ratios = &dgp("uniform").length_of(CiKind::Hybrid).expect("hybrid lengths").ratios;
    let worst = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    c.record(
        worst <= 1.12,
        format!("uniform hybrid/projection max ratio {worst:.4} <= 1.12 over {ratios:.4?}"),
    );
    let blowups: Vec<f64> = DGP_LABELS
        .iter()
        .map(|l| {
            dgp(l)
                .length_of(CiKind::Conditional)
                .expect("conditional lengths")
                .ratios[q95]
        })
        .collect();
    let best = blowups.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    c.record(
        best > 1.5,
        format!("max conditional/projection 95th-quantile ratio {best:.3} > 1.5 (per dgp {blowups:.3?})"),
    );
    c
}

fn criterion_3() -> Check {
    let mut c = Check::new();
    let (lo, hi) = bp_direct(&CALIBRATED_P);
    let width = hi - lo;
    let inside: Vec<f64> = (0..=4).map(|k| lo + width * k as f64 / 4.0).collect();
    let outside = [lo - 2.0 * width, hi + 2.0 * width];
    let mut grid = inside.clone();
    grid.extend(outside);
    let mut cfg = load_config("figure1.json");
    cfg.name = "acceptance_power".into();
    cfg.dgps = vec![Dgp::new("calibrated_n1000", CALIBRATED_P.to_vec(), 1000).expect("dgp")];
    cfg.w0_grid = grid;
    cfg.validate().expect("power config");
    let report = run(&cfg).expect("power run");
    let d = &report.dgps[0];
    let dl = (d.identified.0 - lo).abs().max((d.identified.1 - hi).abs());
    c.record(
        dl <= 1e-12,
        format!(
            "identified ({:.6}, {:.6}) vs direct formulas, max deviation {dl:.1e} <= 1e-12",
            d.identified.0, d.identified.1
        ),
    );
    let cat = balke_pearl_ate_spec::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let p = random_feasible_p(&mut rng);
        let ob = cat.evaluate(&p).expect("evaluate").options[0];
        let (a, b) = bp_direct(&p);
        worst = worst.max((ob.l_hat - a).abs()).max((ob.u_hat - b).abs());
    }
    c.record(
        worst <= 1e-12,
        format!("catalog vs direct formulas on 200 points, max deviation {worst:.1e} <= 1e-12"),
    );
    let power = d.power_of(CiKind::Hybrid).expect("hybrid power");
    for pt in &power.points {
        if inside.contains(&pt.w0) {
            let lim = cfg.alpha + 0.02;
            c.record(
                pt.rejection <= lim,
                format!("w0 {:+.4} inside: rejection {:.4} <= {lim:.2}", pt.w0, pt.rejection),
            );
        } else {
            c.record(
                pt.rejection >= 0.9,
                format!(
                    "w0 {:+.4} two widths outside: rejection {:.4} >= 0.9",
                    pt.w0, pt.rejection
                ),
            );
        }
    }
    c
}

fn random_event(rng: &mut ChaCha8Rng, violate_zero_row: bool) -> (Polyhedron<f64>, DirectionData<f64>, usize, f64) {
    let k = rng.random_range(2..6);
    let m = rng.random_range(1..9);
    let n = rng.random_range(10..500);
    let sqrt_n = (n as f64).sqrt();
    let b: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let z: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
    let s0 = rng.random_range(-3.0..3.0);
    let x0: Vec<f64> = z.iter().zip(&b).map(|(zi, bi)| zi + bi * s0).collect();
    let mut poly = Polyhedron::empty(k);
    for i in 0..=m {
        let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        if i == m {
            let t = dot(&row, &b) / dot(&b, &b);
            for (r, bi) in row.iter_mut().zip(&b) {
                *r -= t * bi;
            }
        }
        let slack = if i == m && violate_zero_row {
            -0.5
        } else {
            rng.random_range(0.0..2.0)
        };
        poly.push(&row, (dot(&row, &x0) + slack) / sqrt_n, String::new());
    }
    let dd = DirectionData {
        b,
        z_stat: z,
        s_obs: s0,
        var_s: 1.0,
    };
    (poly, dd, n, s0)
}

fn criterion_4a() -> Check {
    let mut c = Check::new();
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let (mut points, mut wrong) = (0usize, 0usize);
    for case in 0..200 {
        let (poly, dd, n, s0) = random_event(&mut rng, case % 5 == 4);
        let w = truncation_bounds(&poly, &dd, n);
        let lo = if w.v_minus.is_finite() { w.v_minus } else { s0 - 10.0 } - 3.0;
        let hi = if w.v_plus.is_finite() { w.v_plus } else { s0 + 10.0 } + 3.0;
        let width = if w.v_minus.is_finite() && w.v_plus.is_finite() && w.v_plus > w.v_minus {
            w.v_plus - w.v_minus
        } else {
            hi - lo
        };
        let step = 1e-3 * width;
        let sqrt_n = (n as f64).sqrt();
        let mut s = lo;
        while s <= hi {
            if (s - w.v_minus).abs() >= 1e-6 && (s - w.v_plus).abs() >= 1e-6 {
                let x = dd.reconstruct(s);
                let member = (0..poly.rows()).all(|r| dot(poly.a().row(r), &x) <= sqrt_n * poly.c()[r]);
                points += 1;
                wrong += usize::from(member != w.admits(s));
            }
            s += step;
        }
    }
    c.record(
        wrong == 0,
        format!("200 polyhedra, {points} grid points, {wrong} misclassified"),
    );
    c
}

fn rf(p: &[f64]) -> ReducedForm<f64> {
    ReducedForm::new(100, p.to_vec(), Matrix::identity(p.len()).scale(0.2)).expect("reduced form")
}

fn eval(pc: &Piece<f64>, p: &[f64]) -> f64 {
    pc.c + dot(&pc.v, p)
}

fn argmax_first(vals: impl Iterator<Item = f64>) -> (usize, f64) {
    vals.enumerate().fold(
        (0, f64::NEG_INFINITY),
        |best, (i, v)| if v > best.1 { (i, v) } else { best },
    )
}

fn argmin_first(vals: impl Iterator<Item = f64>) -> (usize, f64) {
    vals.enumerate().fold(
        (0, f64::INFINITY),
        |best, (i, v)| if v < best.1 { (i, v) } else { best },
    )
}

/// Discrete outcome each side's event pins down, recomputed from the pieces.
fn weighted_keys(spec: &BoundsSpec<f64>, p: &[f64], wl: f64, wu: f64) -> (Vec<i64>, Vec<i64>) {
    let t = spec.num_options();
    let lows: Vec<(usize, f64)> = (0..t)
        .map(|d| argmax_first(spec.lower(d).iter().map(|pc| eval(pc, p))))
        .collect();
    let ups: Vec<(usize, f64)> = (0..t)
        .map(|d| argmin_first(spec.upper(d).iter().map(|pc| eval(pc, p))))
        .collect();
    let (d, _) = argmax_first((0..t).map(|d| wl * lows[d].1 + wu * ups[d].1));
    let jl = lows.iter().map(|x| x.0 as i64);
    let ju = ups.iter().map(|x| x.0 as i64);
    let d64 = d as i64;
    if wu == 0.0 {
        (
            vec![d64, lows[d].0 as i64],
            vec![d64, lows[d].0 as i64, ups[d].0 as i64],
        )
    } else if wl == 0.0 {
        let mut lo = vec![d64, lows[d].0 as i64];
        lo.extend(ju.clone());
        let mut up = vec![d64];
        up.extend(ju);
        (lo, up)
    } else {
        let mut k = vec![d64];
        k.extend(jl);
        k.extend(ju);
        (k.clone(), k)
    }
}

fn cms_keys(target: &BoundsSpec<f64>, family: &BoundsSpec<f64>, p: &[f64], eps: &[Vec<f64>]) -> (Vec<i64>, Vec<i64>) {
    let mut total = 0.0;
    let mut tail = Vec::new();
    for e in eps {
        let x: Vec<f64> = p.iter().zip(e).map(|(a, b)| a + b).collect();
        let (ku, bu) = argmin_first(family.upper(0).iter().map(|pc| eval(pc, &x)));
        let (kl, bl) = argmax_first(family.lower(0).iter().map(|pc| eval(pc, &x)));
        total += bu.max(0.0) + bl.min(0.0);
        tail.push([
            ku as i64,
            kl as i64,
            if bl >= 0.0 { 1 } else { -1 },
            if bu >= 0.0 { 1 } else { -1 },
        ]);
    }
    let d = usize::from(total >= 0.0);
    let jl = argmax_first(target.lower(d).iter().map(|pc| eval(pc, p))).0 as i64;
    let ju = argmin_first(target.upper(d).iter().map(|pc| eval(pc, p))).0 as i64;
    let mut common: Vec<i64> = vec![d as i64];
    for f in 0..4 {
        common.extend(tail.iter().map(|t| t[f]));
    }
    let mut lo = common.clone();
    lo.push(jl);
    let mut up = common;
    up.push(ju);
    (lo, up)
}

/// Random point near `p0` half of the time so both outcomes occur.
fn probe(rng: &mut ChaCha8Rng, p0: &[f64]) -> Vec<f64> {
    if rng.random_bool(0.5) {
        let nd = Normal::new(0.0, 0.02).expect("normal");
        p0.iter().map(|x| x + nd.sample(rng)).collect()
    } else {
        random_feasible_p(rng)
    }
}

fn criterion_4b() -> Check {
    let mut c = Check::new();
    let spec = manski_binary_spec::<f64>();
    for (case, (wl, wu)) in [(1.0, 0.0), (0.0, 1.0), (0.3, 0.7)].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(410 + case as u64);
        let (mut agree, mut total, mut inside) = (0, 0, 0);
        for _ in 0..40 {
            let p0 = random_feasible_p(&mut rng);
            let sel = rule_weighted(&spec, &rf(&p0), wl, wu).expect("weighted rule");
            let want = weighted_keys(&spec, &p0, wl, wu);
            for _ in 0..25 {
                let p = probe(&mut rng, &p0);
                let got = weighted_keys(&spec, &p, wl, wu);
                for (poly, same) in [(&sel.poly_l, got.0 == want.0), (&sel.poly_u, got.1 == want.1)] {
                    let member = poly.contains(&p, 0.0);
                    total += 1;
                    inside += usize::from(member);
                    agree += usize::from(member == same);
                }
            }
        }
        c.record(
            agree == total,
            format!(
                "weighted case {} (w_l={wl}, w_u={wu}): {agree}/{total} agree, {inside} inside",
                case + 1
            ),
        );
    }
    let family = balke_pearl_ate_spec::<f64>();
    for m in [1usize, 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(420 + m as u64);
        let (mut agree, mut total, mut inside) = (0, 0, 0);
        for _ in 0..40 {
            let p0 = random_feasible_p(&mut rng);
            let sel = rule_cms(&spec, &family, &rf(&p0), m, &mut rng).expect("quasi-Bayesian rule");
            let eps = sel.cms_draws.clone().expect("draws recorded");
            let want = cms_keys(&spec, &family, &p0, &eps);
            for _ in 0..25 {
                let p = probe(&mut rng, &p0);
                let got = cms_keys(&spec, &family, &p, &eps);
                for (poly, same) in [(&sel.poly_l, got.0 == want.0), (&sel.poly_u, got.1 == want.1)] {
                    let member = poly.contains(&p, 0.0);
                    total += 1;
                    inside += usize::from(member);
                    agree += usize::from(member == same);
                }
            }
        }
        c.record(
            agree == total,
            format!("quasi-Bayesian m={m}: {agree}/{total} agree, {inside} inside"),
        );
    }
    c
}

fn criterion_4c() -> Check {
    let mut c = Check::new();
    let (manski, _) = lp_to_bounds_spec(&manski_binary_latent(), DEFAULT_ENUM_CAP).expect("manski lp");
    let (bp, _) = lp_to_bounds_spec(&[balke_pearl_latent()], DEFAULT_ENUM_CAP).expect("balke-pearl lp");
    let mut rng = ChaCha8Rng::seed_from_u64(430);
    let (mut dm, mut db): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let p = random_feasible_p(&mut rng);
        let em = manski.evaluate(&p).expect("evaluate");
        for d in 0..2 {
            let (l, u) = manski_direct(&p, d);
            dm = dm
                .max((em.options[d].l_hat - l).abs())
                .max((em.options[d].u_hat - u).abs());
        }
        let eb = bp.evaluate(&p).expect("evaluate").options[0];
        let (l, u) = bp_direct(&p);
        db = db.max((eb.l_hat - l).abs()).max((eb.u_hat - u).abs());
    }
    c.record(dm <= 1e-9, format!("manski: max abs deviation {dm:.1e} on 200 points"));
    c.record(
        db <= 1e-9,
        format!("balke-pearl: max abs deviation {db:.1e} on 200 points"),
    );
    c
}

fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn criterion_4d() -> Check {
    let mut c = Check::new();
    let mut rng = ChaCha8Rng::seed_from_u64(440);
    let (mut worst, mut worst_indep, mut tails, mut indep): (f64, f64, usize, usize) = (0.0, 0.0, 0, 0);
    let mut failures = 0;
    for i in 0..1000 {
        let center = rng.random_range(-20.0..20.0);
        let s2: f64 = rng.random_range(0.05..9.0);
        let w = rng.random_range(0.05..10.0);
        let u = rng.random_range(0.02..0.98);
        let target = rng.random_range(0.01..0.99);
        let s = s2.sqrt();
        let tail = i % 3 == 0;
        let lo = if tail { center + 20.0 * s } else { center };
        let hi = if i % 7 == 0 { f64::INFINITY } else { lo + w * s };
        let t = if hi.is_finite() {
            lo + u * (hi - lo)
        } else {
            lo + u * w * s
        };
        tails += usize::from(tail);
        let Ok(r) = solve_location(t, target, s2, lo, hi) else {
            failures += 1;
            continue;
        };
        let back = tn_cdf(t, &TruncatedNormal::new(r.mu, s2, lo, hi).expect("tn")).expect("cdf");
        worst = worst.max((back - target).abs());
        let (a, b, x) = (phi((lo - r.mu) / s), phi((hi - r.mu) / s), phi((t - r.mu) / s));
        if b - a > 1e-2 {
            indep += 1;
            worst_indep = worst_indep.max(((x - a) / (b - a) - target).abs());
        }
    }
    c.record(
        failures == 0 && worst <= 1e-8,
        format!(
            "1000 configs ({tails} with 20-sigma tail windows): {failures} failures, max residual {worst:.1e} <= 1e-8"
        ),
    );
    c.record(
        worst_indep <= 1e-8,
        format!("direct-formula residual on {indep} untruncated-mass configs {worst_indep:.1e} <= 1e-8"),
    );
    let cv = CriticalValues::new(100_000, 441);
    let oracle = [
        (0.9, 1.281_551_565_544_600_4),
        (0.95, 1.644_853_626_951_472_2),
        (0.975, 1.959_963_984_540_054),
        (0.99, 2.326_347_874_040_840_8),
    ];
    for var in [1.0, 4.0] {
        let cov = Matrix::from_rows(&[vec![var]], 1).expect("1x1");
        for (level, z) in oracle {
            let q = cv.quantile(&cov, level).expect("critical value");
            c.record(
                (q - z).abs() <= 0.01,
                format!("1-D studentized critical value var={var} level={level}: {q:.4} vs {z:.4}"),
            );
        }
    }
    c
}

fn criterion_5(table1: &ExperimentReport) -> Check {
    let mut c = Check::new();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let draws = 100_000;
    let (alpha1, alpha2) = (0.025, 0.025);
    let z: f64 = 1.959_963_984_540_054;
    let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mc_se = (0.975f64 * 0.025 / draws as f64).sqrt() / density;
    // Half-width of the 99% band of the Monte Carlo 0.975 quantile.
    let mc_tol = 2.575_829_303_548_900_4 * mc_se;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..50 {
        let dim = rng.random_range(1..4);
        let vl: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vu: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = BoundsSpec::new(
            1,
            dim,
            vec![vec![Piece::new(-0.5, vl.clone())]],
            vec![vec![Piece::new(0.5, vu.clone())]],
        )
        .expect("spec");
        let f: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut sigma = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                sigma[i * dim + j] =
                    (0..dim).map(|k| f[i * dim + k] * f[j * dim + k]).sum::<f64>() + if i == j { 0.1 } else { 0.0 };
            }
        }
        let sigma = Matrix::from_row_major(dim, dim, sigma).expect("sigma");
        let n = rng.random_range(50..5000);
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
        let r = ReducedForm::new(n, p, sigma.clone()).expect("reduced form");
        let sel = fixed_target(&spec, &r, 0).expect("fixed target");
        let cv = CriticalValues::new(draws, rng.random());
        let cis = [
            conventional_ci(&spec, &r, &sel, alpha1, alpha2).expect("conventional"),
            conditional_ci(&spec, &r, &sel, alpha1, alpha2).expect("conditional"),
            projection_ci(&spec, &r, &sel, alpha1, alpha2, &cv).expect("projection"),
            hybrid_ci(&spec, &r, &sel, alpha1, alpha2, 0.1, UpperTarget::Symmetric, &cv).expect("hybrid"),
        ];
        let sqrt_n = (n as f64).sqrt();
        let tol_l = 2.0 * mc_tol * sigma.quad_form(&vl).sqrt() / sqrt_n;
        let tol_u = 2.0 * mc_tol * sigma.quad_form(&vu).sqrt() / sqrt_n;
        for a in &cis {
            for b in &cis {
                worst_ratio = worst_ratio
                    .max((a.lower - b.lower).abs() / tol_l)
                    .max((a.upper - b.upper).abs() / tol_u);
            }
        }
    }
    c.record(worst_ratio <= 1.0, format!("50 single-piece configurations: max endpoint gap {worst_ratio:.3} x (2 x 99% MC band of the critical value)"));
    for d in &table1.dgps {
        let v = d.hybrid_containment_violations;
        c.record(
            v == 0,
            format!(
                "{} hybrid inside beta-projection on {} replications: {v} violations",
                d.label, d.completed
            ),
        );
    }
    c
}

fn criterion_6() -> Check {
    let mut c = Check::new();
    let cfg = SimConfig {
        name: "determinism".into(),
        experiments: vec![Experiment::Coverage, Experiment::Length, Experiment::Power],
        dgps: vec![
            Dgp::new("calibrated", CALIBRATED_P.to_vec(), 200).expect("dgp"),
            Dgp::new("uniform", vec![0.25; 6], 150).expect("dgp"),
        ],
        rule: SimRule::MaxLower,
        kinds: CiKind::ALL.to_vec(),
        alpha: 0.05,
        reps: 120,
        seed: 606,
        draws: 5000,
        beta_frac: 0.1,
        upper_target: UpperTarget::Symmetric,
        spec: SpecKind::ManskiBinary,
        sampling: Sampling::Multinomial,
        w0_grid: vec![0.0, 0.3, 0.6, 0.9],
    };
    let in_pool = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("pool");
        let r = pool.install(|| run(&cfg)).expect("run");
        (r.to_csv(), r.to_json(), r.to_dat())
    };
    let a = in_pool(1);
    let b = in_pool(1);
    let d = in_pool(4);
    c.record(a == b, "repeat run with 1 thread is byte-identical".into());
    c.record(a == d, "1 thread vs 4 threads is byte-identical".into());
    let mut g = cfg.clone();
    g.sampling = Sampling::Gaussian;
    g.seed = 607;
    let ga = rayon::ThreadPoolBuilder::new()
        .num_threads(2)
        .build()
        .expect("pool")
        .install(|| run(&g))
        .expect("run");
    let gb = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .expect("pool")
        .install(|| run(&g))
        .expect("run");
    c.record(
        ga.to_csv() == gb.to_csv() && ga.to_json() == gb.to_json(),
        "gaussian sampling, 2 vs 3 threads is byte-identical".into(),
    );
    c
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut outcomes = Vec::new();
    let t1 = Instant::now();
    let table1_cfg = load_config("table1.json");
    assert_eq!(table1_cfg.reps, 2000);
    let table1 = run(&table1_cfg).expect("coverage run");
    let t1_secs = t1.elapsed().as_secs_f64();
    let mut o1 = timed("1", "coverage study, configs/table1.json, 2000 replications", || {
        criterion_1(&table1)
    });
    o1.secs += t1_secs;
    outcomes.push(o1);
    outcomes.push(timed("2", "length ratios, configs/figure2.json", criterion_2));
    outcomes.push(timed("3", "Power at the calibrated DGP, n=1000", criterion_3));
    outcomes.push(timed("4a", "truncation window vs brute-force membership", criterion_4a));
    outcomes.push(timed(
        "4b",
        "selection polyhedra vs direct rule recomputation",
        criterion_4b,
    ));
    outcomes.push(timed("4c", "LP-derived bounds vs analytic formulas", criterion_4c));
    outcomes.push(timed(
        "4d",
        "location solver residuals and 1-D critical values",
        criterion_4d,
    ));
    outcomes.push(timed("5", "degenerate configurations and hybrid containment", || {
        criterion_5(&table1)
    }));
    outcomes.push(timed("6", "determinism across runs and thread counts", criterion_6));

    let mut unexpected = 0;
    for o in &outcomes {
        for d in &o.details {
            println!("    {d}");
        }
        let mut pass = o.pass;
        if o.id.starts_with('4') && o.secs > 60.0 {
            pass = false;
            println!("    FAIL took {:.1}s, budget 60s", o.secs);
        }
        let recorded = RECORDED_FAILURES.contains(&o.id);
        let note = match (pass, recorded) {
            (false, true) => " (recorded deviation)",
            (true, true) => " (recorded deviation no longer reproduces)",
            _ => "",
        };
        println!(
            "{} criterion {}: {} [{:.1}s]{note}",
            if pass { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            o.secs
        );
        if !pass && !recorded {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
