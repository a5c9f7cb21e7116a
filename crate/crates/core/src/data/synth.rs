//! Synthetic stand-in for the 14-cell cycling dataset.
//!
//! Each cell runs `max_cycles` cycles and reaches end of life at the last
//! one, so RUL = max_cycles - cycle_index and the RUL marginal is uniform.
//! Time features fade with age along a per-cell curve; every measurement
//! carries bounded multiplicative noise of at most `NOISE` (relative).

use rand::Rng;

use super::split::rng;
use super::table::{Sample, SampleTable};

pub const NOISE: f64 = 0.01;

pub fn synth_samples(n_batteries: usize, max_cycles: usize, seed: u64) -> Vec<Sample> {
    assert!(n_batteries >= 1, "need at least one battery");
    assert!(max_cycles >= 10, "need at least 10 cycles per battery");
    let mut rng = rng(seed);
    let mut out = Vec::with_capacity(n_batteries * max_cycles);
    for _ in 0..n_batteries {
        let discharge0 = rng.random_range(6500.0..7500.0);
        let fade = rng.random_range(0.30..0.45);
        let cv0 = rng.random_range(4800.0..5600.0);
        let cc0 = rng.random_range(5500.0..6500.0);
        let dec0 = rng.random_range(1000.0..1300.0);
        let charge0 = rng.random_range(9000.0..10500.0);
        let vmax0 = rng.random_range(4.18..4.22);
        let vmin0 = rng.random_range(3.20..3.26);

        for cycle in 1..=max_cycles {
            let age = (cycle - 1) as f64 / (max_cycles - 1) as f64;
            let mut jitter = || 1.0 + rng.random_range(-NOISE..=NOISE);
            let discharge = discharge0 * (1.0 - fade * age.powf(1.1)) * jitter();
            let charging = charge0 * (1.0 - 0.2 * age) * jitter();
            out.push(Sample {
                cycle_index: cycle as f64,
                discharge_time_s: discharge,
                time_at_4p15v_s: cv0 * (1.0 - 0.55 * age) * jitter(),
                time_constant_current_s: cc0 * (1.0 - 0.45 * age) * jitter(),
                decrement_3p6_3p4v_s: dec0 * (1.0 - 0.5 * age.powf(0.9)) * jitter(),
                max_voltage_discharge_v: (vmax0 - 0.25 * age) * jitter(),
                min_voltage_charge_v: (vmin0 + 0.35 * age) * jitter(),
                charging_time_s: charging,
                total_time_s: Some(discharge + charging),
                rul: (max_cycles - cycle) as f64,
            });
        }
    }
    out
}

pub fn synth_generate(n_batteries: usize, max_cycles: usize, seed: u64) -> SampleTable {
    SampleTable::from_samples(&synth_samples(n_batteries, max_cycles, seed))
}
