//! Thread-local real FFT helpers shared by the effects and the surrogate embedder.

use std::cell::RefCell;

use realfft::RealFftPlanner;
use rustfft::num_complex::Complex64;

thread_local! {
    static PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

/// Forward real FFT of `x` zero-padded to `len` (len/2 + 1 bins, unnormalized).
pub(crate) fn rfft_padded(x: &[f64], len: usize) -> Vec<Complex64> {
    debug_assert!(x.len() <= len);
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len));
    let mut input = vec![0.0; len];
    input[..x.len()].copy_from_slice(x);
    let mut out = plan.make_output_vec();
    plan.process(&mut input, &mut out)
        .expect("buffer sizes come from the plan");
    out
}

/// Inverse real FFT including the 1/len normalization.
pub(crate) fn irfft(spectrum: &[Complex64], len: usize) -> Vec<f64> {
    debug_assert_eq!(spectrum.len(), len / 2 + 1);
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len));
    let mut input = spectrum.to_vec();
    // The imaginary parts of DC (and Nyquist for even lengths) must be zero
    // for a real signal; the planner rejects anything else.
    input[0].im = 0.0;
    if len.is_multiple_of(2) {
        input[len / 2].im = 0.0;
    }
    let mut out = plan.make_output_vec();
    plan.process(&mut input, &mut out)
        .expect("buffer sizes come from the plan");
    let scale = 1.0 / len as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// FFT length used for linear (non-wrapping) filtering of `n` samples against
/// a kernel of at most `n` samples.
pub(crate) fn linear_fft_len(n: usize) -> usize {
    (2 * n.max(1)).next_power_of_two()
}

/// One-sided-spectrum weight: DC and Nyquist appear once, other bins twice.
pub(crate) fn bin_weight(k: usize, len: usize) -> f64 {
    if k == 0 || (len.is_multiple_of(2) && k == len / 2) {
        1.0
    } else {
        2.0
    }
}
