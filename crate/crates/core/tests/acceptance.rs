//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::process::Command;
use std::time::{Duration, Instant};

use zfsp::analytics::{
    cdf_conditional, outage_cdf, outage_cdf_hypergeometric, outage_perfect_csi, pdf_r_sq, rate_to_threshold,
};
use zfsp::channel::{derive_stats, SystemConfig};
use zfsp::montecarlo::{estimate_mean_snr, estimate_outage, TrialPlan};
use zfsp::numerics::gauss_laguerre_nodes;
use zfsp::planner::{
    design_rate, error_prob_finite_blocklength, goodput_lower_bound, lb_sum_closed, lb_sum_direct,
    optimize_streams, StreamFamily,
};

type Check = Result<String, String>;

fn cfg(n: usize, m: usize, p: f64, l: usize) -> SystemConfig {
    SystemConfig::identical(n, m, p, 0.1, l).expect("valid configuration")
}

fn db(v: f64) -> f64 {
    10f64.powf(v / 10.0)
}

/// `(N, M)` pairs with `N - M ∈ {0, 1, 2, 8, 32}` and powers giving `pσ²_h ∈ {0.1, 1, 10}`.
fn identity_grid() -> Vec<SystemConfig> {
    let mut out = Vec::new();
    for k in [0usize, 1, 2, 8, 32] {
        for beta in [0.1, 1.0, 10.0] {
            out.push(cfg(2 + k, 2, beta / 0.1, 300));
        }
    }
    out
}

const GRID_X: [f64; 4] = [0.01, 0.1, 1.0, 5.0];

fn c1_outage_forms() -> Check {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for c in identity_grid() {
        let st = derive_stats(&c).unwrap();
        for x in GRID_X {
            let a = outage_cdf(&c, &st, 0, x).map_err(|e| e.to_string())?;
            let b = outage_cdf_hypergeometric(&c, &st, 0, x).map_err(|e| e.to_string())?;
            worst = worst.max((a - b).abs());
            points += 1;
        }
    }
    let msg = format!("finite sum vs 1F1 form: max |diff| {worst:.2e} <= 1e-9 over {points} points");
    if worst <= 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// `∫ F(x|y) f(y) dy` with a 128-node Gauss–Laguerre rule in `t = y/σ²_ĥ`,
/// the Gamma density evaluated explicitly.
fn mixing_integral(c: &SystemConfig, x: f64) -> f64 {
    let st = derive_stats(c).unwrap();
    let scale = st.sigma_hhat_sq[0];
    gauss_laguerre_nodes(128)
        .unwrap()
        .into_iter()
        .map(|(t, w)| {
            let y = scale * t;
            let weight = w * t.exp() * scale;
            if weight == 0.0 {
                return 0.0;
            }
            weight * pdf_r_sq(c, &st, 0, y).unwrap() * cdf_conditional(&st, 0, y, x).unwrap()
        })
        .sum()
}

fn c2_mixing_integral() -> Check {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for c in identity_grid() {
        let st = derive_stats(&c).unwrap();
        for x in GRID_X {
            let a = outage_cdf(&c, &st, 0, x).map_err(|e| e.to_string())?;
            worst = worst.max((a - mixing_integral(&c, x)).abs());
            points += 1;
        }
    }
    let msg = format!("closed form vs conditional-CDF mixing integral: max |diff| {worst:.2e} <= 1e-6 over {points} points");
    if worst <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c3_monte_carlo_outage() -> Check {
    let x = rate_to_threshold(0.1);
    let plan = TrialPlan::new(1_000_000, 2024).unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    for (n, m) in [(2, 2), (4, 2), (8, 4)] {
        for p_db in [10.0, 20.0] {
            let r = estimate_outage(&cfg(n, m, db(p_db), 300), &plan, 0, x).map_err(|e| e.to_string())?;
            ok &= r.pass;
            lines.push(format!(
                "({n},{m},{p_db}dB) analytic {:.4e} empirical {:.4e} z {:.2}{}",
                r.analytic,
                r.empirical,
                r.z_score(),
                if r.low_event_warning { " [low events]" } else { "" }
            ));
        }
    }
    let msg = format!("10^6 frames, 4 binomial s.e.: {}", lines.join("; "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c4_average_snr() -> Check {
    let plan = TrialPlan::new(1_000_000, 77).unwrap();
    let r = estimate_mean_snr(&cfg(4, 2, 10.0, 300), &plan, 0).map_err(|e| e.to_string())?;
    let hp = estimate_mean_snr(&cfg(4, 2, 1e4, 300), &plan, 0).map_err(|e| e.to_string())?;
    let asymptote = 1e4 * 0.1 * 3.0;
    let ratio = hp.empirical / asymptote;
    let band = hp.confidence_sigmas * hp.standard_error / asymptote;
    let asym_ok = (ratio - 1.0).abs() <= band;
    let msg = format!(
        "mean {:.5} vs {:.5} (z {:.2}); p=1e4 ratio to asymptote {ratio:.5}, CI half-width {band:.5}",
        r.empirical,
        r.analytic,
        r.z_score()
    );
    if r.pass && asym_ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c5_rate_round_trip() -> Check {
    let mut worst: f64 = 0.0;
    for (n, m, p) in [(4, 2, 100.0), (2, 2, 10.0), (16, 4, 31.6)] {
        let c = cfg(n, m, p, 300);
        let st = derive_stats(&c).unwrap();
        for eps in [1e-1, 1e-3, 1e-5] {
            let r = design_rate(&c, &st, 0, eps).map_err(|e| e.to_string())?;
            let back = outage_cdf(&c, &st, 0, rate_to_threshold(r)).unwrap();
            worst = worst.max((back - eps).abs());
        }
    }
    let msg = format!("max |F(e^R* - 1) - eps| {worst:.2e} <= 1e-9");
    if worst <= 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c6_blocklength_convergence() -> Check {
    let mut ok = true;
    let mut lines = Vec::new();
    for (n, m, p_db, rate) in [(4, 2, 10.0, 0.1), (8, 4, 10.0, 0.5), (2, 2, 20.0, 0.05)] {
        let c = cfg(n, m, db(p_db), 300);
        let st = derive_stats(&c).unwrap();
        let f = outage_cdf(&c, &st, 0, rate_to_threshold(rate)).unwrap();
        let gaps = [100usize, 300, 1000, 10_000]
            .iter()
            .map(|&l| error_prob_finite_blocklength(&c, &st, 0, rate, l).map(|v| (v - f).abs()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
        ok &= monotone && gaps[3] <= 1e-3;
        lines.push(format!(
            "({n},{m},{p_db}dB,R={rate}) |P_err - F| {:.2e} {:.2e} {:.2e} {:.2e}",
            gaps[0], gaps[1], gaps[2], gaps[3]
        ));
    }
    let msg = format!("L = 100, 300, 1000, 1e4: {}", lines.join("; "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c7_fig1_properties() -> Check {
    let grid: Vec<f64> = (0..=15).map(|k| 2.0 * k as f64).collect();
    let mut problems = Vec::new();
    for rate in [0.05, 0.1, 0.5] {
        let x = rate_to_threshold(rate);
        let mut ratios = Vec::new();
        for n in [2usize, 4, 8, 16] {
            let mut last = f64::INFINITY;
            for &p_db in &grid {
                let c = cfg(n, 2, db(p_db), 300);
                let st = derive_stats(&c).unwrap();
                let imp = outage_cdf(&c, &st, 0, x).unwrap();
                let perf = outage_perfect_csi(&c, 0, x).unwrap();
                if !(imp < last) {
                    problems.push(format!("N={n} R={rate}: not decreasing at {p_db} dB"));
                }
                last = imp;
                // with N = M the two coincide exactly
                if imp < perf * (1.0 - 1e-12) || (n > 2 && imp <= perf) {
                    problems.push(format!("N={n} R={rate}: imperfect {imp:e} below perfect {perf:e} at {p_db} dB"));
                }
            }
            let c = cfg(n, 2, 10.0, 300);
            let st = derive_stats(&c).unwrap();
            ratios.push(outage_cdf(&c, &st, 0, x).unwrap() / outage_perfect_csi(&c, 0, x).unwrap());
        }
        if !ratios.windows(2).all(|w| w[1] > w[0]) {
            problems.push(format!("R={rate}: gap ratio at 10 dB not increasing in N: {ratios:?}"));
        }
        if rate == 0.1 {
            let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3e}")).collect();
            println!("      gap ratios at 10 dB, R = 0.1, N = 2, 4, 8, 16: {}", shown.join(", "));
        }
    }
    if problems.is_empty() {
        Ok("outage decreasing in p, imperfect >= perfect (equal only at N = M), gap ratio at 10 dB increasing in N for R = 0.05, 0.1, 0.5".into())
    } else {
        Err(problems.join("; "))
    }
}

fn fig2_power() -> f64 {
    100.0 / 128f64.sqrt()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (j, &g)| if g > b.1 { (j, g) } else { b })
        .0
        + 1
}

fn unimodal(v: &[f64]) -> bool {
    let peak = argmax(v) - 1;
    v[..=peak].windows(2).all(|w| w[1] > w[0]) && v[peak..].windows(2).all(|w| w[1] <= w[0])
}

fn c8_fig2_properties() -> Check {
    let p = fig2_power();
    let mut problems = Vec::new();
    let mut lines = Vec::new();
    for rate in [0.05, 0.1, 0.5] {
        for outage_form in [false, true] {
            let fam = StreamFamily::identical(128, 128, p, 0.1, rate, 200);
            let choice = optimize_streams(&fam, outage_form).map_err(|e| e.to_string())?;
            let g = &choice.goodputs;
            let label = if outage_form { "outage G" } else { "finite-L G" };
            if !unimodal(g) {
                problems.push(format!("R={rate} {label}: not unimodal"));
            }
            if choice.m_star != choice.exhaustive_argmax {
                problems.push(format!(
                    "R={rate} {label}: scan {} vs argmax {}",
                    choice.m_star, choice.exhaustive_argmax
                ));
            }
            let lb: Vec<f64> = (1..=128)
                .map(|m| goodput_lower_bound(&cfg(128, m, p, 200), m, rate).unwrap())
                .collect();
            let above = (0..128).filter(|&k| lb[k] > g[k]).count();
            let peak = choice.exhaustive_argmax - 1;
            let tight = lb[peak] / g[peak];
            lines.push(format!(
                "R={rate} {label}: M* {} (argmax {}), G_LB > G at {above} M, G_LB/G at peak {tight:.4}",
                choice.m_star, choice.exhaustive_argmax
            ));
            if outage_form && rate <= 0.1 && above > 0 {
                problems.push(format!("R={rate}: G_LB exceeds G at {above} values of M"));
            }
            if rate == 0.05 && (tight - 1.0).abs() > 0.1 {
                problems.push(format!("R={rate} {label}: G_LB/G at peak {tight}"));
            }
        }
    }
    for l in &lines {
        println!("      {l}");
    }
    if problems.is_empty() {
        Ok("G unimodal, scan = exhaustive argmax, G_LB <= G (outage form) for R <= 0.1, G_LB within 10% at the peak for R = 0.05".into())
    } else {
        Err(problems.join("; "))
    }
}

/// The sum expansion exactly as printed alongside the bound.
fn printed_sum_expansion(a: f64, b: f64, k: f64) -> f64 {
    (a - 1.0).powi(-2) * (1.0 + a + b * (a.powf(k) * (a * (1.0 + b + b * k) - b * (2.0 + k) - 1.0) - 1.0))
}

fn c9_bound_sum() -> Check {
    let mut worst: f64 = 0.0;
    for a in [0.01, 0.1, 0.5, 0.9] {
        for b in [0.01, 0.05, 0.5] {
            for k in [0usize, 1, 8, 126] {
                let d = lb_sum_direct(a, b, k);
                worst = worst.max((d - lb_sum_closed(a, b, k as f64)).abs() / d);
            }
        }
    }
    let direct = lb_sum_direct(0.5, 1.0, 1);
    let printed = printed_sum_expansion(0.5, 1.0, 1.0);
    let msg = format!(
        "direct vs closed form: max rel diff {worst:.2e} <= 1e-12; printed expansion at A=0.5,B=1,K=1 gives {printed} against direct {direct} (quarantined)"
    );
    if worst <= 1e-12 && direct == 3.5 && (printed - direct).abs() > 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c10_blocklength_changes_m_star() -> Check {
    let p = fig2_power();
    let mut differs = false;
    let mut lines = Vec::new();
    for rate in [0.05, 0.1, 0.5] {
        let mut stars = Vec::new();
        for l in [200usize, 10_000] {
            let fam = StreamFamily::identical(128, 128, p, 0.1, rate, l);
            stars.push(optimize_streams(&fam, false).map_err(|e| e.to_string())?.m_star);
        }
        differs |= stars[0] != stars[1];
        lines.push(format!("R={rate}: M*(L=200) = {}, M*(L=1e4) = {}", stars[0], stars[1]));
    }
    let msg = lines.join("; ");
    if differs {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c11_determinism() -> Check {
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_zfsp"))
            .args(["validate", "--seed", "42"])
            .env("RUST_LOG", "off")
            .output()
            .map_err(|e| e.to_string())
    };
    let a = run()?;
    let b = run()?;
    if !a.status.success() || !b.status.success() {
        return Err(format!("validate exited with {:?} and {:?}", a.status.code(), b.status.code()));
    }
    let msg = format!("two `validate --seed 42` runs, {} report bytes each", a.stdout.len());
    if a.stdout == b.stdout && !a.stdout.is_empty() {
        Ok(msg)
    } else {
        Err(format!("reports differ: {msg}"))
    }
}

fn main() {
    let criteria: [(u32, &str, Duration, fn() -> Check); 11] = [
        (1, "outage CDF forms agree", Duration::from_secs(5), c1_outage_forms),
        (2, "mixing-integral oracle", Duration::from_secs(30), c2_mixing_integral),
        (3, "Monte-Carlo outage agreement", Duration::from_secs(300), c3_monte_carlo_outage),
        (4, "average SNR", Duration::from_secs(120), c4_average_snr),
        (5, "rate design round trip", Duration::from_secs(1), c5_rate_round_trip),
        (6, "finite-blocklength convergence", Duration::from_secs(60), c6_blocklength_convergence),
        (7, "outage-vs-SNR curve properties", Duration::from_secs(60), c7_fig1_properties),
        (8, "goodput-vs-M curve properties", Duration::from_secs(120), c8_fig2_properties),
        (9, "goodput-bound sum", Duration::from_secs(1), c9_bound_sum),
        (10, "blocklength changes M*", Duration::from_secs(120), c10_blocklength_changes_m_star),
        (11, "validation report determinism", Duration::from_secs(600), c11_determinism),
    ];
    let mut failed = 0;
    for (id, title, limit, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let (pass, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} {title}: {detail} [{:.2} s, limit {} s{}]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", over time" }
        );
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
