//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tucker_opt::geometry::{approx_proj_cone, partial_projections, retract_hosvd};
use tucker_opt::matkernels::{orthonormalize, proj_matrix_tangent_cone, project_out, thin_svd};
use tucker_opt::solvers::{SolverTrace, TraceEvent};
use tucker_opt::tucker::{exact_tucker_rank, hosvd};
use tucker_opt::{
    Ambient, CompletionObjective, ConeBasisChoice, DenseLeastSquares, DenseTensor, Matrix, Objective,
    SampleSet, Shape, TuckerRank, TuckerTensor,
};
use tucker_opt_cli::*;

const LS: ConeBasisChoice = ConeBasisChoice::LeadingSingular;
const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Traces collected from criteria 1 to 5 for the audit in criterion 7.
struct Audit {
    traces: Vec<(String, SolverTrace, TuckerRank)>,
}

impl Audit {
    fn add(&mut self, label: String, t: &SolverTrace, r: &[usize]) {
        self.traces.push((label, t.clone(), TuckerRank(r.to_vec())));
    }
}

fn cfg(seed: u64, rank: usize, init: usize, solver: SolverKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(vec![60, 60, 60], vec![4, 4, 4], vec![rank; 3], 0.3, seed, solver);
    c.init_rank = vec![init; 3];
    c
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn criterion_1(audit: &mut Audit) -> Verdict {
    let c = ApocalypseConfig { n: 10, alpha: 0.3, iters: 30 };
    let (run, secs) = timed(|| run_apocalypse(&c).unwrap());
    let dev = apocalypse_deviation(&c, &run).unwrap();
    let s = &run.final_stationarity;
    audit.add("apocalypse".into(), &run.output.trace, &[2, 2, 2]);
    let pass = run.output.iterates.len() == 31
        && dev <= 1e-10
        && s.approx_cone <= 1e-4
        && s.ambient >= 1.0
        && secs < 5.0;
    verdict(
        pass,
        format!(
            "max deviation {dev:.1e}, approx-cone {:.2e}, ambient {:.4}, {secs:.2} s",
            s.approx_cone, s.ambient
        ),
    )
}

fn first_below(t: &SolverTrace, tol: f64) -> Option<usize> {
    t.records.iter().find(|r| r.train_error <= tol).map(|r| r.iter)
}

fn criterion_2(audit: &mut Audit, grap_iters: &mut Vec<Option<usize>>) -> Verdict {
    let mut ok = 0;
    let mut worst = 0.0f64;
    for seed in SEEDS {
        let ((_, out), secs) = timed(|| run_experiment(&cfg(seed, 4, 4, SolverKind::Grap)).unwrap());
        let t = &out.trace;
        let reached = first_below(t, 1e-10).is_some_and(|i| i <= 500);
        let test = t.last().test_error.unwrap();
        if reached && test <= 1e-6 && secs < 60.0 {
            ok += 1;
        }
        worst = worst.max(secs);
        grap_iters.push(first_below(t, 1e-8));
        audit.add(format!("grap seed {seed}"), t, &[4, 4, 4]);
    }
    verdict(ok >= 9, format!("{ok}/10 seeds, slowest run {worst:.1} s"))
}

fn criterion_3(audit: &mut Audit) -> Verdict {
    let mut ok = 0;
    let mut worst = 0.0f64;
    for seed in SEEDS {
        let ((_, out), secs) = timed(|| run_experiment(&cfg(seed, 6, 6, SolverKind::Tram)).unwrap());
        let t = &out.trace;
        if t.last().rank == vec![4, 4, 4] && t.last().test_error.unwrap() <= 1e-6 && secs < 120.0 {
            ok += 1;
        }
        worst = worst.max(secs);
        audit.add(format!("tram r=6 seed {seed}"), t, &[6, 6, 6]);
    }
    verdict(ok >= 8, format!("{ok}/10 seeds, slowest run {worst:.1} s"))
}

fn criterion_4(audit: &mut Audit) -> Verdict {
    let mut ok = 0;
    for seed in SEEDS {
        let (_, out) = run_experiment(&cfg(seed, 4, 1, SolverKind::Tram)).unwrap();
        let t = &out.trace;
        let monotone = t.records.windows(2).all(|w| w[0].rank.iter().zip(&w[1].rank).all(|(a, b)| a <= b));
        if monotone && t.last().rank == vec![4, 4, 4] && t.last().test_error.unwrap() <= 1e-6 {
            ok += 1;
        }
        audit.add(format!("tram from (1,1,1) seed {seed}"), t, &[4, 4, 4]);
    }
    verdict(ok >= 8, format!("{ok}/10 seeds"))
}

fn criterion_5(audit: &mut Audit, grap_iters: &[Option<usize>]) -> Verdict {
    let mut reached = 0;
    let mut no_retraction = true;
    let mut slower = 0;
    for (seed, g) in SEEDS.zip(grap_iters) {
        let mut c = cfg(seed, 4, 4, SolverKind::Rfgrap);
        c.stops.max_iters = 5000;
        let (_, out) = run_experiment(&c).unwrap();
        let t = &out.trace;
        let own = first_below(t, 1e-8);
        if own.is_some() {
            reached += 1;
        }
        no_retraction &=
            t.records[1..].iter().all(|r| r.event != TraceEvent::None || r.hosvd_truncations == 0);
        if let (Some(a), Some(b)) = (own, g) {
            if a >= *b {
                slower += 1;
            }
        }
        audit.add(format!("rfgrap seed {seed}"), t, &[4, 4, 4]);
    }
    verdict(
        reached == 10 && no_retraction && slower >= 7,
        format!(
            "{reached}/10 reach 1e-8, no retraction on plain steps: {no_retraction}, at least as many iterations as GRAP on {slower}/10"
        ),
    )
}

fn gauss_tensor(g: &mut ChaCha8Rng, dims: &[usize]) -> DenseTensor {
    let shape = Shape::new(dims.to_vec()).unwrap();
    let n = shape.numel();
    DenseTensor::new(shape, (0..n).map(|_| g.sample(StandardNormal)).collect()).unwrap()
}

fn gauss_matrix(g: &mut ChaCha8Rng, m: usize, n: usize) -> Matrix {
    Matrix::from_fn(m, n, |_, _| g.sample(StandardNormal))
}

fn random_tucker(g: &mut ChaCha8Rng, dims: &[usize], r: &[usize]) -> TuckerTensor {
    let core = gauss_tensor(g, r);
    let factors =
        dims.iter().zip(r).map(|(&n, &k)| orthonormalize(&gauss_matrix(g, n, k)).unwrap()).collect();
    TuckerTensor::new(core, factors).unwrap()
}

/// A point of exact rank `rb` and a bound `r >= rb`, shapes at most `max_n`.
fn random_setting(g: &mut ChaCha8Rng, d: usize, max_n: usize) -> (TuckerTensor, TuckerRank) {
    loop {
        let dims: Vec<usize> = (0..d).map(|_| g.random_range(2..=max_n)).collect();
        let rb: Vec<usize> = dims.iter().map(|&n| g.random_range(1..=n.min(3))).collect();
        let attainable =
            (0..d).all(|k| rb[k] <= (0..d).filter(|&j| j != k).map(|j| rb[j]).product::<usize>());
        if !attainable {
            continue;
        }
        let r = dims.iter().zip(&rb).map(|(&n, &b)| g.random_range(b..=n.min(b + 2))).collect();
        return (random_tucker(g, &dims, &rb), TuckerRank(r));
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn check_identity(g: &mut ChaCha8Rng) -> bool {
    (0..200).all(|i| {
        let (x, r) = random_setting(g, [2, 3, 3, 4][i % 4], 5);
        let a = gauss_tensor(g, x.shape().dims());
        let p = approx_proj_cone(&x, &a, &r, LS).unwrap().to_dense(&x);
        rel_gap(a.inner(&p).unwrap(), p.fro_norm().powi(2)) <= 1e-10
    })
}

fn check_retraction(g: &mut ChaCha8Rng) -> bool {
    (0..100).all(|_| {
        let (x, r) = random_setting(g, 3, 6);
        let a = gauss_tensor(g, x.shape().dims());
        let s = g.random_range(0.01..3.0);
        let v = approx_proj_cone(&x, &a, &r, LS).unwrap();
        let y = retract_hosvd(&x, &v, s, &r).unwrap();
        x.to_dense().sub(&y.to_dense()).unwrap().fro_norm() <= 2.5 * s * v.norm(&x) * (1.0 + 1e-12)
    })
}

fn check_single_blocks(g: &mut ChaCha8Rng) -> bool {
    (0..25).all(|_| {
        let (x, r) = random_setting(g, 3, 6);
        let a = gauss_tensor(g, x.shape().dims());
        partial_projections(&x, &a, &r, LS).unwrap().iter().all(|b| {
            [0.3, 1.0, 5.0].iter().all(|&s| {
                let mut y = x.to_dense();
                y.axpy(s, &b.to_dense(&x)).unwrap();
                exact_tucker_rank(&y, 1e-8).unwrap().le(&r)
            })
        })
    })
}

fn check_matrix_case(g: &mut ChaCha8Rng) -> bool {
    let sh = Shape::new(vec![7, 6]).unwrap();
    (0..20).all(|t| {
        let (rb, r) = (1 + t % 3, 2 + t % 3 + t % 2);
        let xm = gauss_matrix(g, 7, rb) * gauss_matrix(g, rb, 6);
        let am = gauss_matrix(g, 7, 6);
        let x = hosvd(&DenseTensor::fold(&xm, 0, &sh).unwrap(), &TuckerRank(vec![rb, rb])).unwrap();
        let a = DenseTensor::fold(&am, 0, &sh).unwrap();
        let bound = TuckerRank(vec![r, r]);
        let p = approx_proj_cone(&x, &a, &bound, LS).unwrap().to_dense(&x).unfold(0).unwrap();
        let exact = proj_matrix_tangent_cone(&xm, &am, r).unwrap();

        let (u, v) = (x.factor(0), x.factor(1));
        let (pu, pv) = (u * u.transpose(), v * v.transpose());
        let residual = project_out(u, &project_out(v, &am.transpose()).transpose());
        let svd = thin_svd(&residual, 1e-12).unwrap();
        let k = (r - rb).min(svd.s.len());
        let (u1, v1) = (svd.u.columns(0, k).into_owned(), svd.v.columns(0, k).into_owned());
        let ps = &pu + &u1 * u1.transpose();
        let pt = &pv + &v1 * v1.transpose();
        let want = [&ps * &am * &pt, &am * &pv - &pu * &am * &pv, &pu * &am - &pu * &am * &pv];
        let parts = partial_projections(&x, &a, &bound, LS).unwrap();
        let blocks_ok = parts
            .iter()
            .zip(&want)
            .all(|(b, w)| (b.to_dense(&x).unfold(0).unwrap() - w).norm() <= 1e-10 * am.norm());
        (&p - &exact).norm() <= 1e-10 * exact.norm() && blocks_ok
    })
}

/// Central differences along core perturbations of a random Tucker point,
/// against `-<neg_grad, D>`.
fn fd_check<O: Objective>(g: &mut ChaCha8Rng, obj: &O, dims: &[usize]) -> bool {
    (0..10).all(|_| {
        let x = random_tucker(g, dims, &[3, 3, 3]);
        let c = gauss_tensor(g, &[3, 3, 3]);
        let at = |h: f64| {
            let mut core = x.core().clone();
            core.axpy(h, &c).unwrap();
            TuckerTensor::new(core, x.factors().to_vec()).unwrap()
        };
        let (_, ng) = obj.evaluate(&x).unwrap();
        let dir = TuckerTensor::new(c.clone(), x.factors().to_vec()).unwrap();
        let an = -ng.to_dense().inner(&dir.to_dense()).unwrap();
        let h = 1e-5;
        let fd = (obj.value(&at(h)).unwrap() - obj.value(&at(-h)).unwrap()) / (2.0 * h);
        (fd - an).abs() <= 1e-6 * an.abs().max(1e-3)
    })
}

fn check_gradients(g: &mut ChaCha8Rng) -> bool {
    let dims = [6, 5, 7];
    let lsq = DenseLeastSquares::new(gauss_tensor(g, &dims));
    let target = random_tucker(g, &dims, &[2, 2, 2]);
    let shape = Shape::new(dims.to_vec()).unwrap();
    let idx =
        rand::seq::index::sample(g, shape.numel(), 80).into_iter().map(|l| shape.multi_index(l)).collect();
    let comp = CompletionObjective::new(SampleSet::from_tucker(&target, idx).unwrap()).unwrap();
    fd_check(g, &lsq, &dims) && fd_check(g, &comp, &dims)
}

fn criterion_6() -> Verdict {
    let mut g = ChaCha8Rng::seed_from_u64(606);
    let (checks, secs) = timed(|| {
        [
            ("identity", check_identity(&mut g)),
            ("retraction", check_retraction(&mut g)),
            ("single blocks", check_single_blocks(&mut g)),
            ("d = 2", check_matrix_case(&mut g)),
            ("gradients", check_gradients(&mut g)),
        ]
    });
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = if failed.is_empty() {
        format!("all five checks hold, {secs:.2} s")
    } else {
        format!("failed: {}, {secs:.2} s", failed.join(", "))
    };
    verdict(failed.is_empty() && secs < 120.0, detail)
}

fn criterion_7(audit: &Audit) -> Verdict {
    let mut bad = Vec::new();
    for (label, t, r) in &audit.traces {
        let monotone = t.records.windows(2).all(|w| w[1].f <= w[0].f);
        let feasible = t.records.iter().all(|rec| TuckerRank(rec.exact_rank.clone()).le(r));
        if !(monotone && feasible) {
            bad.push(label.clone());
        }
    }
    let n = audit.traces.len();
    if bad.is_empty() {
        verdict(true, format!("{n} traces audited"))
    } else {
        verdict(false, format!("{} of {n} traces fail: {}", bad.len(), bad.join("; ")))
    }
}

fn main() {
    let mut audit = Audit { traces: Vec::new() };
    let mut grap_iters = Vec::new();
    let mut all = true;
    let mut report = |n: usize, name: &str, v: Verdict| {
        all &= v.pass;
        println!("criterion {n} [{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    report(1, "apocalypse regression", criterion_1(&mut audit));
    report(2, "GRAP exact recovery", criterion_2(&mut audit, &mut grap_iters));
    report(3, "TRAM over-rank recovery", criterion_3(&mut audit));
    report(4, "TRAM under-rank start", criterion_4(&mut audit));
    report(5, "rfGRAP parity", criterion_5(&mut audit, &grap_iters));
    report(6, "geometry property suite", criterion_6());
    report(7, "monotonicity and feasibility audit", criterion_7(&audit));
    if !all {
        std::process::exit(1);
    }
}
