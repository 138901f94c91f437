//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 3 to 7 run through the same entry point as the CLI
//! and are checked on the written files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use neurofab::config::{self, RunConfig};
use neurofab::dynamics::{dpi_inject_spike, dpi_step, DpiParams, DpiState, Polarity};
use neurofab::delaylab::{build_delay_element, measure_delay, probe_element, ProbeOptions};
use neurofab::experiments::select_by_latency;
use neurofab::fabric::*;
use neurofab::run;
use neurofab::sim::{simulate, SimOptions};
use neurofab::stimulus::gen_single;
use tempfile::TempDir;

type Outcome = Result<String, String>;

const DELAY_TARGET: f64 = 15e-3;
const PROMINENCE: f64 = 0.2;

fn config(body: &str) -> RunConfig {
    config::parse(body).expect("acceptance config parses")
}

fn experiment(name: &str) -> RunConfig {
    config(&format!(r#"{{"schema_version":1,"experiment":"{name}","seed":1}}"#))
}

fn execute(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Duration, String> {
    let t = Instant::now();
    run::execute(cfg, out, jobs).map_err(|e| e.to_string())?;
    Ok(t.elapsed())
}

fn within(limit: Duration, took: Duration) -> Result<(), String> {
    if took <= limit {
        Ok(())
    } else {
        Err(format!("took {:.1} s, limit {:.0} s", took.as_secs_f64(), limit.as_secs_f64()))
    }
}

fn read_rows(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = r.headers().map_err(|e| e.to_string())?.clone();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            Ok(headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        })
        .collect()
}

fn column(rows: &[BTreeMap<String, String>], name: &str) -> Vec<f64> {
    rows.iter().map(|r| r[name].parse().unwrap()).collect()
}

fn tuning(path: &Path) -> Result<(Vec<f64>, Vec<f64>), String> {
    let rows = read_rows(path)?;
    Ok((column(&rows, "isi_s"), column(&rows, "mean_spikes")))
}

/// Local maxima of `ys` with their topographic prominence.
fn prominences(ys: &[f64]) -> Vec<(usize, f64)> {
    let n = ys.len();
    (0..n)
        .filter(|&k| (k == 0 || ys[k] > ys[k - 1]) && (k + 1 == n || ys[k] >= ys[k + 1]))
        .map(|k| {
            let side = |range: Box<dyn Iterator<Item = usize>>| {
                let mut low = ys[k];
                for j in range {
                    if ys[j] > ys[k] {
                        return Some(low);
                    }
                    low = low.min(ys[j]);
                }
                None
            };
            let left = side(Box::new((0..k).rev()));
            let right = side(Box::new(k + 1..n));
            let base = match (left, right) {
                (Some(a), Some(b)) => a.max(b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => ys.iter().cloned().fold(f64::INFINITY, f64::min),
            };
            (k, ys[k] - base)
        })
        .collect()
}

/// Peaks of the smoothed histogram whose trough to any higher peak is at
/// least `PROMINENCE` of the tallest peak.
fn significant_modes(hist: &[BTreeMap<String, String>]) -> Vec<f64> {
    let ys = column(hist, "smoothed");
    let xs = column(hist, "bin_center_s");
    let top = ys.iter().cloned().fold(0.0, f64::max);
    prominences(&ys)
        .into_iter()
        .filter(|&(_, p)| p >= PROMINENCE * top)
        .map(|(k, _)| xs[k])
        .collect()
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Closed-form DPI output for rectangular pulses at `onsets`.
fn dpi_exact(p: &DpiParams, onsets: &[f64], t: f64) -> f64 {
    let g = p.i_th / p.i_tau;
    onsets
        .iter()
        .filter(|&&t0| t > t0)
        .map(|&t0| {
            let on = (t - t0).min(p.t_pulse);
            g * p.w_syn * (1.0 - (-on / p.tau).exp()) * (-(t - t0 - on) / p.tau).exp()
        })
        .sum()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let p = DpiParams {
        tau: 9.8e-3,
        i_tau: 1e-12,
        i_th: 2e-12,
        w_syn: 5e-9,
        t_pulse: 10e-6,
        polarity: Polarity::Excitatory,
    };
    let dt = 1e-5;
    let onsets_k = [0usize, 150, 600, 610, 2000];
    let onsets: Vec<f64> = onsets_k.iter().map(|&k| k as f64 * dt).collect();
    let mut s = DpiState::default();
    let mut worst: f64 = 0.0;
    for k in 0..6000 {
        if onsets_k.contains(&k) {
            s = dpi_inject_spike(&s, &p);
        }
        s = dpi_step(&s, &p, dt).map_err(|e| e.to_string())?;
        let exact = dpi_exact(&p, &onsets, (k + 1) as f64 * dt);
        worst = worst.max((s.i_out - exact).abs() / exact);
    }
    within(Duration::from_secs(1), t.elapsed())?;
    if worst < 1e-6 {
        Ok(format!("max relative error {worst:.2e}"))
    } else {
        Err(format!("max relative error {worst:.2e} >= 1e-6"))
    }
}

fn criterion_2(dir: &Path) -> Outcome {
    let cfg = config(
        r#"{"schema_version":1,"experiment":"trace","seed":1,
            "fabric":{"mismatch":{"cv_neuron":0.0,"cv_cam":0.0}}}"#,
    );
    let out = dir.join("c2");
    let took = execute(&cfg, &out, 0)?;
    within(Duration::from_secs(5), took)?;
    let trace = read_rows(&out.join("trace_nominal.csv"))?;
    let (ts, vs) = (column(&trace, "t_s"), column(&trace, "V_volts"));
    let pre: Vec<f64> = ts.iter().zip(&vs).filter(|(t, _)| **t < 0.0).map(|(_, v)| *v).collect();
    let baseline = pre.iter().sum::<f64>() / pre.len() as f64;
    let post: Vec<f64> = ts.iter().zip(&vs).filter(|(t, _)| **t >= 0.0).map(|(_, v)| *v).collect();
    let mut shape = Vec::new();
    for k in 1..post.len() - 1 {
        let (a, b, c) = (post[k - 1], post[k], post[k + 1]);
        if b < a && b <= c && b < baseline - 1e-9 {
            shape.push("min");
        } else if b > a && b >= c && b > baseline + 1e-9 {
            shape.push("max");
        } else if (b < a && b <= c) || (b > a && b >= c) {
            if (b - baseline).abs() > 1e-9 {
                shape.push("other");
            }
        }
    }
    if shape != ["min", "max"] {
        return Err(format!("extrema sequence {shape:?}"));
    }
    let delays = read_rows(&out.join("delays.csv"))?;
    let d: f64 = delays[0]["delay_s"].parse().map_err(|_| "no delay measured".to_string())?;
    if (d - DELAY_TARGET).abs() <= 0.2 * DELAY_TARGET {
        Ok(format!("dip then peak, delay {:.2} ms ({:.1} s)", d * 1e3, took.as_secs_f64()))
    } else {
        Err(format!("delay {:.2} ms outside 15 ms +/- 20%", d * 1e3))
    }
}

fn criterion_3(out: &Path, took: Duration) -> Outcome {
    within(Duration::from_secs(120), took)?;
    let rows = read_rows(&out.join("delays.csv"))?;
    if rows.len() != 256 {
        return Err(format!("{} elements, expected 256", rows.len()));
    }
    let measured: Vec<&BTreeMap<String, String>> = rows.iter().filter(|r| !r["delay_s"].is_empty()).collect();
    let delays: Vec<f64> = measured.iter().map(|r| r["delay_s"].parse().unwrap()).collect();
    let spiking = measured.iter().filter(|r| r["spiked"] == "true").count() as f64 / measured.len() as f64;
    let sd = std_dev(&delays);
    let modes = significant_modes(&read_rows(&out.join("histogram.csv"))?);
    let detail = format!(
        "modes {:?} ms, std {:.1} ms, spiking fraction {:.2}, {} of 256 measured ({:.1} s)",
        modes.iter().map(|m| (m * 1e4).round() / 10.0).collect::<Vec<_>>(),
        sd * 1e3,
        spiking,
        measured.len(),
        took.as_secs_f64()
    );
    let ok = modes.len() == 1
        && (10e-3..=20e-3).contains(&modes[0])
        && (2e-3..=15e-3).contains(&sd)
        && (0.3..=0.7).contains(&spiking);
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_4(out: &Path, took: Duration) -> Outcome {
    within(Duration::from_secs(120), took)?;
    let rows = read_rows(&out.join("delays.csv"))?;
    let spiking = rows.iter().filter(|r| r["spiked"] == "true").count();
    let silent = rows.iter().filter(|r| r["spiked"] == "false").count();
    let modes = significant_modes(&read_rows(&out.join("histogram.csv"))?);
    let detail = format!(
        "{} slot pairs, {spiking} spiking, {silent} not, modes {:?} ms ({:.1} s)",
        rows.len(),
        modes.iter().map(|m| (m * 1e4).round() / 10.0).collect::<Vec<_>>(),
        took.as_secs_f64()
    );
    if rows.len() == 256 && spiking > 0 && silent > 0 && modes.len() >= 2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_5(out: &Path, took: Duration, cfg: &RunConfig) -> Outcome {
    within(Duration::from_secs(300), took)?;
    let mut totals = Vec::new();
    let mut selective = Vec::new();
    for fine in &cfg.weight_sweep.fine_values {
        let (isis, m) = tuning(&out.join(format!("tuning_pair_exc_fine{fine:03}.csv")))?;
        if isis.len() != 11 {
            return Err(format!("{} ISI points", isis.len()));
        }
        let interior = m[1..m.len() - 1].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if interior >= m[0] + 0.5 && interior >= m[m.len() - 1] + 0.5 {
            selective.push(*fine);
        }
        totals.push(m.iter().sum::<f64>());
    }
    let monotone = totals.windows(2).all(|w| w[1] >= w[0]) && totals.last() > totals.first();
    let detail = format!(
        "selective at fine {selective:?}, totals {:?} ({:.1} s)",
        totals.iter().map(|t| (t * 100.0).round() / 100.0).collect::<Vec<_>>(),
        took.as_secs_f64()
    );
    if !selective.is_empty() && monotone {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn triplet_check(m: &[f64]) -> Result<String, String> {
    let (first, last) = (m[0], m[m.len() - 1]);
    let baseline = 0.5 * (first + last);
    let peak = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut band = 0;
    let mut run = 0;
    for &x in &m[1..m.len() - 1] {
        run = if x >= baseline + 0.5 { run + 1 } else { 0 };
        band = band.max(run);
    }
    let detail = format!("curve {m:?}, baseline {baseline:.2}, peak {peak:.2}, band {band}");
    let ok = (first - 2.0).abs() <= 0.3 && (last - 2.0).abs() <= 0.3 && band >= 3 && peak >= baseline + 0.8;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6(out: &Path, took: Duration) -> Outcome {
    within(Duration::from_secs(300), took)?;
    let (_, m) = tuning(&out.join("tuning_triplet.csv"))?;
    triplet_check(&m).map(|d| format!("{d} ({:.1} s)", took.as_secs_f64()))
}

fn criterion_7(out: &Path) -> Outcome {
    let (_, sel) = tuning(&out.join("tuning_selected.csv"))?;
    let (_, per) = tuning(&out.join("tuning_permuted.csv"))?;
    let range = |m: &[f64]| {
        m.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - m.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let kept = triplet_check(&sel);
    let detail = format!("selected range {:.2}, permuted range {:.2}", range(&sel), range(&per));
    if kept.is_ok() && range(&per) <= 0.3 {
        Ok(detail)
    } else {
        Err(format!("{detail}; selected: {}", kept.unwrap_or_else(|e| e)))
    }
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap_or_default()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_8(dir: &Path, runs: &[(&str, RunConfig)]) -> Outcome {
    let mut files = 0;
    for (name, cfg) in runs {
        let a = dir.join(format!("{name}-jobs1"));
        execute(cfg, &a, 1)?;
        let b = dir.join(format!("{name}-jobs8"));
        let (ta, tb) = (tree(&a), tree(&b));
        if ta.is_empty() || ta != tb {
            let differing: Vec<_> = ta
                .iter()
                .zip(&tb)
                .filter(|(x, y)| x != y)
                .map(|(x, _)| x.0.display().to_string())
                .collect();
            return Err(format!("{name}: outputs differ {differing:?}"));
        }
        files += ta.len();
    }
    Ok(format!("{files} files byte-identical across {} runs", runs.len()))
}

fn criterion_9() -> Outcome {
    let mut checks = Vec::new();

    let a = Address::new(1, 2, 3).map_err(|e| e.to_string())?;
    let mut f = Fabric::with_mismatch(MismatchConfig::default());
    for k in 0..64 {
        f.connect(a, SourceTag(k), SynapseType::ExcSlow).map_err(|e| e.to_string())?;
    }
    let cam_full = matches!(
        f.connect(a, SourceTag(64), SynapseType::ExcSlow),
        Err(FabricError::CapacityExceeded { .. })
    );
    let core_full = CoreId::new(0, 0).unwrap().neuron(256).is_err();
    checks.push(("capacity", cam_full && core_full));

    let mut increasing = true;
    for level in [CurrentLevel::H, CurrentLevel::L] {
        for coarse in 0..8u8 {
            for fine in 0..=255u8 {
                let i = bias_to_current(BiasCode::new(coarse, fine, level));
                if fine < 255 && bias_to_current(BiasCode::new(coarse, fine + 1, level)) <= i {
                    increasing = false;
                }
                if coarse < 7 && bias_to_current(BiasCode::new(coarse + 1, fine, level)) <= i {
                    increasing = false;
                }
            }
        }
    }
    checks.push(("bias monotonicity", increasing));

    let mut f = Fabric::with_mismatch(MismatchConfig::homogeneous(11));
    let neurons: Vec<Address> = [(0, 0, 0), (1, 3, 200), (3, 1, 77)]
        .iter()
        .map(|&(c, k, n)| Address::new(c, k, n).unwrap())
        .collect();
    for &n in &neurons {
        f.configure_connection(n, 0, SourceTag(5), SynapseType::ExcSlow).map_err(|e| e.to_string())?;
        f.configure_connection(n, 1, SourceTag(5), SynapseType::InhSubtractive).map_err(|e| e.to_string())?;
    }
    let opts = SimOptions { record_trace: true, ..SimOptions::default() };
    let traces: Vec<_> = neurons
        .iter()
        .map(|&n| simulate(&f, n, &gen_single(SourceTag(5)), &opts).map(|r| r.trace))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    checks.push(("cv=0 homogeneity", traces.windows(2).all(|w| w[0] == w[1])));

    let mut delays = Vec::new();
    for inh_fine in [138u8, 69, 45, 34] {
        let mut f = Fabric::with_mismatch(MismatchConfig::homogeneous(1));
        let core = CoreId::new(0, 0).unwrap();
        for (name, fine) in [(BiasName::NpdpieTauSP, 16u8), (BiasName::NpdpiiTauFP, inh_fine)] {
            let code = f.core_biases(core).get(name);
            f.set_bias(core, name, BiasCode { fine, ..code }).map_err(|e| e.to_string())?;
        }
        let e = build_delay_element(&mut f, core.neuron(0).unwrap(), 0, 1, SourceTag(9)).map_err(|e| e.to_string())?;
        let tr = probe_element(&f, &e, &ProbeOptions::default()).map_err(|e| e.to_string())?;
        delays.push(measure_delay(&tr).map_err(|e| e.to_string())?.delay);
    }
    checks.push(("delay monotonic in tau_inh", delays.windows(2).all(|w| w[1] >= w[0])));

    let lat = [20e-3, 15e-3, 10e-3];
    let (order, _) = select_by_latency(&lat, 3, 5e-3).map_err(|e| e.to_string())?;
    let peaks: Vec<f64> = order.iter().enumerate().map(|(i, &c)| i as f64 * 5e-3 + lat[c]).collect();
    checks.push(("selection arithmetic", peaks.iter().all(|p| (p - peaks[0]).abs() < 1e-12)));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let names: Vec<&str> = checks.iter().map(|(n, _)| *n).collect();
    if failed.is_empty() {
        Ok(names.join(", "))
    } else {
        Err(format!("failed: {}", failed.join(", ")))
    }
}

fn main() -> ExitCode {
    let tmp = TempDir::new().expect("temp dir");
    let dir = tmp.path();

    let runs: Vec<(&str, RunConfig)> = vec![
        ("population", experiment("characterize-population")),
        ("cams", experiment("characterize-cams")),
        ("weights", experiment("sweep-weights")),
        ("triplet", experiment("sweep-triplet")),
        ("permutation", experiment("permutation-control")),
    ];
    let mut timed: BTreeMap<&str, Result<(PathBuf, Duration), String>> = BTreeMap::new();
    for (name, cfg) in &runs {
        let out = dir.join(format!("{name}-jobs8"));
        timed.insert(name, execute(cfg, &out, 8).map(|t| (out, t)));
    }
    let with = |name: &str, f: &dyn Fn(&Path, Duration) -> Outcome| -> Outcome {
        match &timed[name] {
            Ok((out, took)) => f(out, *took),
            Err(e) => Err(format!("run failed: {e}")),
        }
    };

    let weights_cfg = runs[2].1.clone();
    let results: Vec<(u32, &str, Outcome)> = vec![
        (1, "DPI oracle", criterion_1()),
        (2, "delay-element shape", criterion_2(dir)),
        (3, "population distribution", with("population", &criterion_3)),
        (4, "CAM-combination bimodality", with("cams", &criterion_4)),
        (5, "pair selectivity", with("weights", &|o, t| criterion_5(o, t, &weights_cfg))),
        (6, "triplet tuning", with("triplet", &criterion_6)),
        (7, "permutation control", with("permutation", &|o, _| criterion_7(o))),
        (8, "jobs 1 vs 8 determinism", criterion_8(dir, &runs)),
        (9, "property suites", criterion_9()),
    ];

    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(d) => println!("PASS criterion {n} ({name}): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {d}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
