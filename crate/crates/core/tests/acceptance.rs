//! Acceptance criteria for the joint rate / beampattern precoder design.
//! Runs as a plain binary so each criterion prints one PASS/FAIL line.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rsma_radcom::admm::{self, AdmmStatus};
use rsma_radcom::harness::{self, ExperimentSpec, RunRecord};
use rsma_radcom::model::equivalent_channel_amplitude;
use rsma_radcom::sdr::{self, SdrSettings};
use rsma_radcom::{wmmse, AdmmConfig, AdmmOutcome, CMatrix, CVector, Method, Scenario, ScenarioConfig};

const SEEDS: u64 = 20;

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn record(&mut self, name: &str, passed: bool, detail: String) {
        let line = format!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((passed, line));
    }
}

fn cgauss(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| cgauss(rng) * scale)
}

/// SINRs written out directly: common stream decoded first against all
/// private streams, then the own private stream against the other private ones.
fn reference_rates(p: &CMatrix, channels: &[CVector], noise: f64) -> (Vec<f64>, Vec<f64>) {
    let mut common = Vec::new();
    let mut private = Vec::new();
    for (k, h) in channels.iter().enumerate() {
        let gains: Vec<f64> = (0..p.ncols()).map(|i| h.dotc(&p.column(i)).norm_sqr()).collect();
        let all_private: f64 = gains[1..].iter().sum();
        common.push((1.0 + gains[0] / (all_private + noise)).log2());
        private.push((1.0 + gains[k + 1] / (all_private - gains[k + 1] + noise)).log2());
    }
    (common, private)
}

fn rate_wmmse_equivalence(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let nt = rng.random_range(1..=6);
        let k = rng.random_range(1..=4);
        let scale = 10f64.powf(rng.random_range(-1.0..1.5));
        let noise = 10f64.powf(rng.random_range(-1.0..1.0));
        let channels: Vec<CVector> = (0..k)
            .map(|_| CVector::from_fn(nt, |_, _| cgauss(&mut rng)))
            .collect();
        let p = random_matrix(&mut rng, nt, k + 1, scale);
        let (wc, wp) = wmmse::rates_via_wmmse(&p, &channels, noise).unwrap();
        let (rc, rp) = reference_rates(&p, &channels, noise);
        for (a, b) in wc.iter().zip(&rc).chain(wp.iter().zip(&rp)) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-300));
        }
    }
    report.record(
        "rate-wmmse equivalence (100 cases, 1e-9 relative)",
        worst <= 1e-9,
        format!("max relative error {worst:.2e}"),
    );
}

fn closed_form_u_update(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        let s = ScenarioConfig::default().with_seed(case).build().unwrap();
        let scale = 10f64.powf(rng.random_range(-1.0..1.5));
        let target = random_matrix(&mut rng, s.num_antennas, s.num_streams(), scale);
        let rho = 10f64.powf(rng.random_range(-1.0..1.0));
        let out = sdr::solve_u_for_target(&s, Method::Rsma, &target, rho, 0.0, &SdrSettings::default(), None).unwrap();
        let row_norm = s.antenna_power().sqrt();
        let mut expected = target.clone();
        for mut row in expected.row_iter_mut() {
            let n = row.norm();
            row *= Complex64::new(row_norm / n, 0.0);
        }
        worst = worst.max((&out.precoders - &expected).camax());
    }
    report.record(
        "lambda=0 u-update equals row projection (50 targets, 1e-8)",
        worst <= 1e-8,
        format!("max entry deviation {worst:.2e}"),
    );
}

/// max over antenna rows of norm √(P_t/2) of ‖Pᴴh‖², by grid search with
/// successive zooming around the incumbent.
fn brute_force_gain(h: &CVector, power: f64) -> f64 {
    let amp = (power / 2.0).sqrt();
    let gain = |x: &[f64; 5]| {
        let [b1, f1, b2, f2, psi] = *x;
        let r1 = [Complex64::new(b1.cos(), 0.0), Complex64::from_polar(b1.sin(), f1)];
        let rot = Complex64::from_polar(1.0, psi);
        let r2 = [rot * b2.cos(), rot * Complex64::from_polar(b2.sin(), f2)];
        (0..2)
            .map(|i| (h[0] * r1[i].conj() * amp + h[1] * r2[i].conj() * amp).norm_sqr())
            .sum::<f64>()
    };
    let lo = [0.0, 0.0, 0.0, 0.0, 0.0];
    let hi = [PI / 2.0, 2.0 * PI, PI / 2.0, 2.0 * PI, 2.0 * PI];
    let mut best = ([0.0; 5], f64::NEG_INFINITY);
    let coarse = [10usize, 16, 10, 16, 16];
    let mut idx = [0usize; 5];
    loop {
        let x: [f64; 5] = std::array::from_fn(|d| lo[d] + (hi[d] - lo[d]) * idx[d] as f64 / coarse[d] as f64);
        let g = gain(&x);
        if g > best.1 {
            best = (x, g);
        }
        let mut d = 0;
        while d < 5 {
            idx[d] += 1;
            if idx[d] <= coarse[d] {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == 5 {
            break;
        }
    }
    let mut width: [f64; 5] = std::array::from_fn(|d| (hi[d] - lo[d]) / coarse[d] as f64);
    for _ in 0..40 {
        let center = best.0;
        for offsets in 0..3usize.pow(5) {
            let mut o = offsets;
            let x: [f64; 5] = std::array::from_fn(|d| {
                let step = (o % 3) as f64 - 1.0;
                o /= 3;
                center[d] + step * width[d] * 0.5
            });
            let g = gain(&x);
            if g > best.1 {
                best = (x, g);
            }
        }
        if best.0 == center {
            width.iter_mut().for_each(|w| *w *= 0.5);
        }
    }
    best.1
}

fn brute_force_end_to_end(report: &mut Report, outcomes: &mut Vec<(Scenario, AdmmOutcome)>) {
    let config = AdmmConfig {
        lambda: 0.0,
        ..AdmmConfig::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let cfg = ScenarioConfig {
            num_antennas: 2,
            num_users: 1,
            ..ScenarioConfig::default()
        };
        let s = cfg.with_seed(seed).build().unwrap();
        let out = harness::solve(&s, Method::Rsma, &config).unwrap();
        let best = brute_force_gain(&s.channels[0], s.power_budget);
        let oracle = s.user_weights[0] * (1.0 + best / s.noise_power).log2();
        worst = worst.max((out.rates.weighted_sum_rate - oracle).abs());
        outcomes.push((s, out));
    }
    report.record(
        "brute-force Nt=2 K=1 lambda=0 WSR (5 draws, 1e-2 bits)",
        worst <= 1e-2,
        format!("max |WSR - grid optimum| {worst:.2e}"),
    );
}

fn default_runs() -> Vec<(Scenario, AdmmOutcome, AdmmOutcome)> {
    let config = AdmmConfig::default();
    (0..SEEDS)
        .map(|seed| {
            let s = ScenarioConfig::default().with_seed(seed).build().unwrap();
            let init = harness::mrc_initialization(&s).unwrap();
            let rsma = admm::run(&s, Method::Rsma, &config, init.clone()).unwrap();
            let sdma = harness::solve_sdma(&s, &config, &init).unwrap();
            (s, rsma, sdma)
        })
        .collect()
}

fn convergence(report: &mut Report, runs: &[(Scenario, AdmmOutcome, AdmmOutcome)]) {
    let eps = AdmmConfig::default().epsilon;
    let ok: Vec<bool> = runs
        .iter()
        .map(|(_, r, _)| {
            let last = r.history.last().unwrap();
            r.status == AdmmStatus::Converged && last.primal_residual <= eps && last.dual_residual <= eps
        })
        .collect();
    let count = ok.iter().filter(|&&b| b).count();
    let iters: Vec<usize> = runs.iter().map(|(_, r, _)| r.iterations).collect();
    report.record(
        "convergence within 200 iterations (>= 90% of 20 seeds)",
        count * 10 >= runs.len() * 9,
        format!("{count}/{} converged, iterations {iters:?}", runs.len()),
    );
}

fn rsma_vs_sdma(report: &mut Report, runs: &[(Scenario, AdmmOutcome, AdmmOutcome)]) {
    let config = AdmmConfig::default();
    let mut wins = 0;
    let mut diffs = Vec::new();
    let mut worst_containment = f64::NEG_INFINITY;
    for (s, rsma, sdma) in runs {
        let d = rsma.objective - sdma.objective;
        diffs.push(d);
        if d >= 0.0 {
            wins += 1;
        }
        // The SDMA design is a feasible RSMA design; score it under the RSMA objective.
        let at_sdma = admm::joint_objective(s, &sdma.solution, config.lambda).unwrap();
        worst_containment = worst_containment.max(at_sdma - rsma.objective);
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    report.record(
        "RSMA objective >= SDMA at lambda=1e-3 (>= 80% of seeds and in the mean)",
        wins * 5 >= runs.len() * 4 && mean >= 0.0,
        format!("{wins}/{} seeds, mean difference {mean:.4}", runs.len()),
    );
    report.record(
        "RSMA objective at the SDMA solution never exceeds the RSMA solution (tolerance = epsilon)",
        worst_containment <= config.epsilon,
        format!("largest excess {worst_containment:.2e}"),
    );
}

fn per_antenna_power(report: &mut Report, outcomes: &[(&Scenario, &AdmmOutcome)], exported: &RunRecord) {
    let worst = outcomes
        .iter()
        .map(|(s, o)| o.solution.per_antenna_error(s.antenna_power()))
        .fold(0.0, f64::max);
    // The exported per-antenna file, read back from disk.
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::default();
    let files = harness::export_artifacts(&spec, std::slice::from_ref(exported), &[], dir.path()).unwrap();
    let file = files
        .iter()
        .find(|p| p.to_string_lossy().ends_with("_antenna_power.csv"))
        .unwrap();
    let text = std::fs::read_to_string(file).unwrap();
    let bars: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let s = &exported.scenario;
    let bar_error = bars
        .iter()
        .map(|b| (b - s.antenna_power()).abs() / s.antenna_power())
        .fold(0.0, f64::max);
    report.record(
        "per-antenna power exact on every reported precoder (1e-8 relative)",
        worst <= 1e-8 && bar_error <= 1e-8 && bars.len() == s.num_antennas,
        format!(
            "max row error {worst:.2e} over {} runs; exported {} bars, max error {bar_error:.2e}",
            outcomes.len(),
            bars.len()
        ),
    );
}

fn sdp_bound(report: &mut Report, runs: &[(Scenario, AdmmOutcome, AdmmOutcome)]) {
    let bounds: Vec<_> = runs.iter().flat_map(|(_, r, _)| r.bounds.iter().copied()).collect();
    // The solver's objective is only accurate to its tolerance, so the
    // comparison uses the certified dual bound, with rounding slack only.
    let below = bounds
        .iter()
        .filter(|b| b.extracted_objective < b.sdp_lower_bound - 1e-12 * b.sdp_lower_bound.abs().max(1.0))
        .count();
    let looseness = bounds
        .iter()
        .map(|b| (b.sdp_objective - b.sdp_lower_bound) / b.sdp_objective.abs().max(1.0))
        .fold(0.0, f64::max);
    let stride = (bounds.len() / 20).max(1);
    let sampled: Vec<f64> = bounds.iter().step_by(stride).take(20).map(|b| b.relative_gap()).collect();
    let max_gap = sampled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    report.record(
        "extracted objective >= SDP optimum on every u-update",
        below == 0,
        format!(
            "{below} of {} u-updates below the certified bound (bound within {looseness:.1e} relative of the solver value)",
            bounds.len()
        ),
    );
    report.record(
        "SDP gap <= 10% on 20 sampled u-updates",
        sampled.len() == 20 && max_gap <= 0.1,
        format!("largest sampled relative gap {max_gap:.2e}"),
    );
}

fn beam_migration(report: &mut Report, runs: &[(Scenario, AdmmOutcome, AdmmOutcome)]) {
    let mut qualifying = 0;
    let mut migrated = 0;
    for (s, rsma, sdma) in runs {
        let broadside = rsma.beampattern.nearest_index(0.0);
        let above_median = s.channels.iter().all(|h| {
            let phi = equivalent_channel_amplitude(h, &s.angle_grid, s.element_spacing).unwrap();
            let mut sorted = phi.clone();
            sorted.sort_by(f64::total_cmp);
            phi[broadside] > sorted[sorted.len() / 2]
        });
        if !above_median {
            continue;
        }
        qualifying += 1;
        let common = harness::stream_shares(&rsma.beampattern, 0.0)[0];
        let private_max = harness::stream_shares(&sdma.beampattern, 0.0)[1..]
            .iter()
            .copied()
            .fold(0.0, f64::max);
        if common > private_max {
            migrated += 1;
        }
    }
    report.record(
        "common stream forms the broadside beam (diagnostic, >= 60% of qualifying seeds)",
        qualifying > 0 && migrated * 5 >= qualifying * 3,
        format!("{migrated}/{qualifying} qualifying seeds (both users' amplitude at 0 deg above the grid median)"),
    );
}

fn tradeoff(report: &mut Report) -> Vec<harness::SweepRow> {
    let spec = ExperimentSpec {
        seeds: vec![0, 1, 2],
        ..ExperimentSpec::default()
    };
    let rows = harness::tradeoff_sweep(&spec).unwrap();
    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    let eps = spec.config.epsilon;
    let mut comparisons = 0;
    let mut violations = Vec::new();
    for &method in &spec.methods {
        for &seed in &spec.seeds {
            let mut series: Vec<_> = rows
                .iter()
                .filter(|r| r.method == method && r.seed == seed)
                .filter_map(|r| r.result.as_ref().ok().map(|s| (r.lambda, s.clone())))
                .collect();
            series.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in series.windows(2) {
                let (l0, a) = &w[0];
                let (l1, b) = &w[1];
                comparisons += 2;
                if b.weighted_sum_rate > a.weighted_sum_rate + eps {
                    violations.push(format!("{method} seed {seed} WSR rises {l0}->{l1}"));
                }
                if b.mse_sum > a.mse_sum * (1.0 + 1e-6) {
                    violations.push(format!("{method} seed {seed} MSE rises {l0}->{l1}"));
                }
            }
        }
    }
    let frac = violations.len() as f64 / comparisons.max(1) as f64;
    report.record(
        "tradeoff: larger lambda lowers MSE and WSR (<= 5% violations)",
        failed == 0 && frac <= 0.05,
        format!(
            "{} violations in {comparisons} comparisons ({:.1}%), {failed} failed runs {violations:?}",
            violations.len(),
            100.0 * frac
        ),
    );
    // The scalarized objective is what each run maximizes, so "matches or
    // dominates" at equal λ is read on it, within the ADMM tolerance.
    let mut pairs = 0;
    let mut dominated = 0;
    for r in rows.iter().filter(|r| r.method == Method::Rsma) {
        let twin = rows
            .iter()
            .find(|s| s.method == Method::Sdma && s.seed == r.seed && s.lambda == r.lambda);
        if let (Ok(a), Some(Ok(b))) = (&r.result, twin.map(|t| &t.result)) {
            pairs += 1;
            if a.objective >= b.objective - eps {
                dominated += 1;
            }
        }
    }
    report.record(
        "tradeoff: RSMA matches or beats SDMA at equal lambda (>= 80% of seed/lambda pairs)",
        pairs > 0 && dominated * 5 >= pairs * 4,
        format!("{dominated}/{pairs} pairs"),
    );
    for r in &rows {
        if let Ok(s) = &r.result {
            println!(
                "    sweep lambda={} {} seed={} wsr={:.4} mse={:.2} iters={} {}",
                r.lambda,
                r.method,
                r.seed,
                s.weighted_sum_rate,
                s.mse_sum,
                s.iterations,
                s.status.label()
            );
        }
    }
    rows
}

fn main() {
    let start = Instant::now();
    let mut report = Report { lines: Vec::new() };

    rate_wmmse_equivalence(&mut report);
    closed_form_u_update(&mut report);
    let mut small = Vec::new();
    brute_force_end_to_end(&mut report, &mut small);

    let runs = default_runs();
    convergence(&mut report, &runs);
    rsma_vs_sdma(&mut report, &runs);
    let mut outcomes: Vec<(&Scenario, &AdmmOutcome)> = runs.iter().flat_map(|(sc, r, s)| [(sc, r), (sc, s)]).collect();
    outcomes.extend(small.iter().map(|(sc, o)| (sc, o)));
    let exported = RunRecord {
        scenario: runs[0].0.clone(),
        lambda: AdmmConfig::default().lambda,
        outcome: runs[0].1.clone(),
    };
    per_antenna_power(&mut report, &outcomes, &exported);
    sdp_bound(&mut report, &runs);
    beam_migration(&mut report, &runs);
    tradeoff(&mut report);

    let failed = report.lines.iter().filter(|(ok, _)| !ok).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.0?}",
        report.lines.len() - failed,
        start.elapsed()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
