//! Spectral behavior of materialized filters: band placement, −3 dB
//! points, and stop-band attenuation, measured from the sampled DTFT.

use csnc_core::sinc::{frequency_response, mel_init, SincFilterParams};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const N_POINTS: usize = 4096;

#[test]
fn minus3db_points_bracket_cutoffs_for_long_kernels() {
    // Bands are drawn wide enough to be resolvable at these kernel
    // lengths; sub-resolution bands cannot place band edges at all.
    for &kernel_len in &[129usize, 251] {
        let mut rng = ChaCha8Rng::seed_from_u64(kernel_len as u64);
        for draw in 0..40 {
            let a1 = rng.random_range(0.02..0.2);
            let a2 = a1 + rng.random_range(0.04..0.2);
            let p = SincFilterParams::from_effective(&[(a1, a2)], kernel_len, 16000.0, true)
                .unwrap();
            let resp = frequency_response(&p, 0, N_POINTS).unwrap();
            let (lo, hi) = resp.minus3db_points();
            assert!(
                (lo - a1).abs() <= 0.01,
                "len {kernel_len} draw {draw}: lower −3 dB {lo} vs a1 {a1}"
            );
            assert!(
                (hi - a2).abs() <= 0.01,
                "len {kernel_len} draw {draw}: upper −3 dB {hi} vs a2 {a2}"
            );
            let peak = resp.peak_freq();
            assert!(
                peak >= a1 - 0.01 && peak <= a2 + 0.01,
                "len {kernel_len} draw {draw}: peak {peak} outside [{a1}, {a2}]"
            );
        }
    }
}

#[test]
fn stopband_attenuation_at_one_point_five_upper_cutoff() {
    for &kernel_len in &[129usize, 251] {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + kernel_len as u64);
        // transition width of a Hamming-windowed design
        let transition = 3.3 / kernel_len as f64;
        for draw in 0..40 {
            let a1 = rng.random_range(0.02..0.15);
            let a2 = a1 + rng.random_range(0.04..0.15);
            let probe = 1.5 * a2;
            if probe >= 0.5 || probe < a2 + transition {
                continue; // measurement point inside transition band or past Nyquist
            }
            let p = SincFilterParams::from_effective(&[(a1, a2)], kernel_len, 16000.0, true)
                .unwrap();
            let resp = frequency_response(&p, 0, N_POINTS).unwrap();
            let db = resp.db_at(probe);
            assert!(
                db <= -20.0,
                "len {kernel_len} draw {draw}: {db} dB at {probe} (band {a1}..{a2})"
            );
        }
    }
}

#[test]
fn mel_initialized_bank_orders_peaks_with_frequency() {
    let p = mel_init(12, 16000.0, 400.0, 7600.0, 251, true).unwrap();
    let mut last_peak = 0.0;
    for f in 0..p.count() {
        let resp = frequency_response(&p, f, N_POINTS).unwrap();
        let peak = resp.peak_freq();
        assert!(peak > last_peak, "filter {f}: peak {peak} <= {last_peak}");
        last_peak = peak;
    }
}

#[test]
fn unwindowed_kernels_show_more_stopband_ripple_than_windowed() {
    let cut = (0.1, 0.2);
    let mk = |window| {
        SincFilterParams::from_effective(&[cut], 251, 16000.0, window).unwrap()
    };
    let probe = 0.35;
    let windowed = frequency_response(&mk(true), 0, N_POINTS).unwrap().db_at(probe);
    let bare = frequency_response(&mk(false), 0, N_POINTS).unwrap().db_at(probe);
    assert!(
        windowed < bare - 10.0,
        "windowed {windowed} dB vs unwindowed {bare} dB"
    );
}
