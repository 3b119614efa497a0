use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::record::Channel;
use super::window::GaitWindow;

pub const DEFAULT_CONTACT_THRESHOLD_N: f64 = 20.0;

/// Locomotor band, Hz, half-open.
pub const LOCOMOTOR_BAND_HZ: (f64, f64) = (0.5, 3.0);
/// Freezing band, Hz, half-open.
pub const FREEZE_BAND_HZ: (f64, f64) = (3.0, 8.0);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FootPair {
    pub left: f64,
    pub right: f64,
}

impl FootPair {
    pub fn mean(&self) -> f64 {
        0.5 * (self.left + self.right)
    }
}

/// Gait summary of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatures {
    /// Mean heel-strike to heel-strike interval per foot; 0 with fewer than
    /// two heel strikes on that foot.
    pub stride_time_s: FootPair,
    pub stance_fraction: f64,
    pub cadence_steps_per_min: f64,
    /// Peak of each per-foot total; this is the "stride amplitude" indicator.
    pub peak_force_n: FootPair,
    pub freeze_index: f64,
    pub step_count: u32,
    /// Set when no foot contact was detected.
    pub no_steps: bool,
}

#[derive(Debug, Default)]
struct FootEvents {
    heel_strikes: Vec<usize>,
    /// Maximal runs of samples at or above the contact threshold.
    contact_runs: u32,
    contact_samples: usize,
    /// Stance fractions of complete heel-strike-to-heel-strike cycles.
    cycle_stance: Vec<f64>,
}

fn foot_events(signal: &[f64], threshold: f64) -> FootEvents {
    let contact: Vec<bool> = signal.iter().map(|&x| x >= threshold).collect();
    let mut ev = FootEvents { contact_samples: contact.iter().filter(|&&c| c).count(), ..Default::default() };
    if contact.first() == Some(&true) {
        ev.contact_runs += 1;
    }
    for i in 1..contact.len() {
        if contact[i] && !contact[i - 1] {
            ev.heel_strikes.push(i);
            ev.contact_runs += 1;
        }
    }
    for pair in ev.heel_strikes.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let stance = contact[a..b].iter().filter(|&&c| c).count();
        ev.cycle_stance.push(stance as f64 / (b - a) as f64);
    }
    ev
}

fn mean_stride_s(heel_strikes: &[usize], rate: f64) -> f64 {
    if heel_strikes.len() < 2 {
        return 0.0;
    }
    let span = (heel_strikes[heel_strikes.len() - 1] - heel_strikes[0]) as f64;
    span / (heel_strikes.len() - 1) as f64 / rate
}

/// Detects heel strikes and toe-offs as threshold crossings on the per-foot
/// totals and summarises the window.
pub fn extract_features(window: &GaitWindow, contact_threshold_n: f64) -> WindowFeatures {
    let left = window.channel(Channel::LTotal);
    let right = window.channel(Channel::RTotal);
    let rate = window.sample_rate_hz;
    let n = left.len();

    let l = foot_events(left, contact_threshold_n);
    let r = foot_events(right, contact_threshold_n);

    let peak = |s: &[f64]| s.iter().copied().fold(0.0f64, f64::max);
    let peak_force_n = FootPair { left: peak(left), right: peak(right) };

    let step_count = l.contact_runs + r.contact_runs;
    if step_count == 0 || n == 0 {
        return WindowFeatures {
            stride_time_s: FootPair::default(),
            stance_fraction: 0.0,
            cadence_steps_per_min: 0.0,
            peak_force_n,
            freeze_index: 0.0,
            step_count: 0,
            no_steps: true,
        };
    }

    let cycles: Vec<f64> = l.cycle_stance.iter().chain(&r.cycle_stance).copied().collect();
    let stance_fraction = if cycles.is_empty() {
        // No complete cycle: fall back to the overall contact share.
        (l.contact_samples + r.contact_samples) as f64 / (2 * n) as f64
    } else {
        cycles.iter().sum::<f64>() / cycles.len() as f64
    };

    let window_seconds = n as f64 / rate;
    let total: Vec<f64> = left.iter().zip(right).map(|(a, b)| a + b).collect();

    WindowFeatures {
        stride_time_s: FootPair {
            left: mean_stride_s(&l.heel_strikes, rate),
            right: mean_stride_s(&r.heel_strikes, rate),
        },
        stance_fraction: stance_fraction.clamp(0.0, 1.0),
        cadence_steps_per_min: 60.0 * step_count as f64 / window_seconds,
        peak_force_n,
        freeze_index: freeze_index(&total, rate),
        step_count,
        no_steps: false,
    }
}

/// Ratio of freezing-band to locomotor-band power of the mean-removed
/// signal. Zero when the locomotor band carries no power.
pub fn freeze_index(signal: &[f64], sample_rate_hz: f64) -> f64 {
    let (freeze, locomotor) = band_powers(signal, sample_rate_hz);
    if locomotor > 0.0 {
        freeze / locomotor
    } else {
        0.0
    }
}

/// One-sided DFT power summed over the freezing and locomotor bands.
pub fn band_powers(signal: &[f64], sample_rate_hz: f64) -> (f64, f64) {
    let n = signal.len();
    if n < 2 {
        return (0.0, 0.0);
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let mut freeze = 0.0;
    let mut locomotor = 0.0;
    for (k, x) in buf.iter().enumerate().take(n / 2 + 1).skip(1) {
        let f = k as f64 * sample_rate_hz / n as f64;
        let p = x.norm_sqr();
        if (FREEZE_BAND_HZ.0..FREEZE_BAND_HZ.1).contains(&f) {
            freeze += p;
        } else if (LOCOMOTOR_BAND_HZ.0..LOCOMOTOR_BAND_HZ.1).contains(&f) {
            locomotor += p;
        }
    }
    (freeze, locomotor)
}
