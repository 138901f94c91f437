use neurofab::dynamics::*;
use proptest::prelude::*;

fn dpi(tau: f64, gain: f64, w: f64, t_pulse: f64) -> DpiParams {
    DpiParams {
        tau,
        i_tau: 1e-12,
        i_th: gain * 1e-12,
        w_syn: w,
        t_pulse,
        polarity: Polarity::Excitatory,
    }
}

/// Closed-form output of `tau dI/dt + I = G I_in` for a train of
/// non-overlapping rectangular pulses, evaluated at `t`.
fn dpi_closed_form(p: &DpiParams, onsets: &[f64], t: f64) -> f64 {
    let g = p.i_th / p.i_tau;
    onsets
        .iter()
        .filter(|&&t0| t > t0)
        .map(|&t0| {
            let on = (t - t0).min(p.t_pulse);
            let peak = g * p.w_syn * (1.0 - (-on / p.tau).exp());
            peak * (-(t - t0 - on) / p.tau).exp()
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dpi_matches_closed_form(
        tau in 1e-3f64..30e-3,
        gain in 0.5f64..4.0,
        w in 1e-10f64..1e-7,
        t_pulse in 5e-6f64..50e-6,
        gaps in prop::collection::vec(1e-4f64..5e-3, 1..5),
        dt in prop::sample::select(vec![1e-6, 3e-6, 7e-6, 1e-5, 2.5e-5]),
    ) {
        let p = dpi(tau, gain, w, t_pulse);
        let mut onsets = Vec::new();
        let mut t = 0.0;
        for g in &gaps {
            onsets.push(t);
            t += g.max(t_pulse) + 1e-6;
        }
        // Align onsets to the step grid, as the simulator does.
        let onsets: Vec<f64> = onsets.iter().map(|t| (t / dt).round() * dt).collect();
        let n = ((t + 20e-3) / dt).round() as usize;
        let mut s = DpiState::default();
        let mut next = 0;
        let mut max_err: f64 = 0.0;
        for k in 0..n {
            while next < onsets.len() && ((onsets[next] / dt).round() as usize) <= k {
                s = dpi_inject_spike(&s, &p);
                next += 1;
            }
            s = dpi_step(&s, &p, dt).unwrap();
            let exact = dpi_closed_form(&p, &onsets, (k + 1) as f64 * dt);
            if exact > 1e-30 {
                max_err = max_err.max((s.i_out - exact).abs() / exact);
            }
        }
        prop_assert!(max_err < 1e-6, "relative error {max_err}");
    }

    #[test]
    fn leak_relaxation_is_log_linear(
        c in 0.5e-12f64..5e-12,
        g_l in 0.2e-9f64..3e-9,
        dv in prop_oneof![-0.1f64..-0.01, 0.01f64..0.05],
    ) {
        let p = NeuronParams { c, g_l, mode: AdexMode::Subthreshold, ..NeuronParams::default() };
        let mut s = NeuronState::new(p.e_l + dv);
        let dt = 1e-5;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for k in 0..((2.0 * p.tau_m() / dt) as usize) {
            xs.push(k as f64 * dt);
            ys.push((s.v - p.e_l).abs().ln());
            s = step_neuron(&s, &p, 0.0, dt).unwrap().0;
        }
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let slope = sxy / sxx;
        let r2 = sxy * sxy / (sxx * syy);
        prop_assert!(r2 > 0.999, "r2 {r2}");
        prop_assert!((slope + g_l / c).abs() < 1e-3 * g_l / c, "slope {slope} vs {}", -g_l / c);
    }

    #[test]
    fn reset_is_exact(i_in in 0.5e-9f64..5e-9, b in 0.0f64..1e-9, steps in 100usize..2000) {
        let p = NeuronParams { b, ..NeuronParams::default() };
        let p0 = NeuronParams { b: 0.0, ..p };
        let mut s = NeuronState::at_rest(&p, 0.0);
        let mut spikes = 0;
        for _ in 0..steps {
            let (next, spiked) = step_neuron(&s, &p, i_in, 1e-5).unwrap();
            if spiked {
                spikes += 1;
                let (without_b, spiked0) = step_neuron(&s, &p0, i_in, 1e-5).unwrap();
                prop_assert!(spiked0);
                prop_assert_eq!(next.v, p.v_r);
                prop_assert_eq!(next.w, without_b.w + b);
            }
            s = next;
        }
        prop_assert!(spikes > 0 || steps < 300);
    }

    #[test]
    fn trace_stays_within_rails(
        currents in prop::collection::vec(-50e-9f64..50e-9, 1..20),
        full in any::<bool>(),
    ) {
        let p = NeuronParams {
            mode: if full { AdexMode::Full } else { AdexMode::Subthreshold },
            ..NeuronParams::default()
        };
        let mut s = NeuronState::at_rest(&p, 0.0);
        for i in currents {
            for _ in 0..200 {
                s = step_neuron(&s, &p, i, 1e-5).unwrap().0;
                prop_assert!(s.v >= p.v_rail_lo && s.v <= p.v_rail_hi, "v {}", s.v);
            }
        }
    }

    #[test]
    fn full_and_simplified_agree_far_below_threshold(i_in in -2e-10f64..2e-11) {
        let full = NeuronParams { a: 0.0, b: 0.0, ..NeuronParams::default() };
        let simple = NeuronParams { mode: AdexMode::Subthreshold, ..full };
        let ceiling = full.v_t - 10.0 * full.delta_t;
        let (mut a, mut b) = (NeuronState::new(full.e_l), NeuronState::new(full.e_l));
        for _ in 0..2000 {
            a = step_neuron(&a, &full, i_in, 1e-5).unwrap().0;
            b = step_neuron(&b, &simple, i_in, 1e-5).unwrap().0;
            prop_assume!(a.v < ceiling);
            prop_assert!((a.v - b.v).abs() <= 1e-3 * b.v.abs());
        }
    }
}

/// Max deviation of a trace at step `dt` from a reference at `dt / 64`,
/// compared on the coarse grid.
fn integration_error(p: &NeuronParams, i_in: f64, dt: f64, t_end: f64) -> f64 {
    let run = |h: f64| {
        let mut s = NeuronState::new(p.e_l);
        let n = (t_end / h).round() as usize;
        let mut out = vec![s.v];
        for _ in 0..n {
            s = step_neuron(&s, p, i_in, h).unwrap().0;
            out.push(s.v);
        }
        out
    };
    let coarse = run(dt);
    let fine = run(dt / 64.0);
    coarse
        .iter()
        .enumerate()
        .map(|(k, v)| (v - fine[k * 64]).abs())
        .fold(0.0, f64::max)
}

#[test]
fn midpoint_rule_is_second_order() {
    // Subthreshold but with the exponential term active.
    let p = NeuronParams { c: 20e-12, ..NeuronParams::default() };
    let i_in = 0.07e-9;
    let e1 = integration_error(&p, i_in, 8e-5, 0.02);
    let e2 = integration_error(&p, i_in, 4e-5, 0.02);
    let ratio = e1 / e2;
    assert!((3.2..=4.8).contains(&ratio), "error ratio {ratio} ({e1:e} / {e2:e})");
}
