use std::cell::RefCell;
use std::sync::Arc;

use rustfft::{Fft, FftDirection, FftPlanner};

use crate::C64;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// Unnormalized forward transform, kernel `exp(-j 2 pi k n / N)`, in place.
pub(crate) fn fft_in_place(buf: &mut [C64]) {
    plan(buf.len(), FftDirection::Forward).process(buf);
}

/// Unnormalized inverse transform, kernel `exp(+j 2 pi k n / N)`, in place.
pub(crate) fn ifft_in_place(buf: &mut [C64]) {
    plan(buf.len(), FftDirection::Inverse).process(buf);
}

pub(crate) fn mean_power(buf: &[C64]) -> f64 {
    if buf.is_empty() {
        return 0.0;
    }
    buf.iter().map(|z| z.norm_sqr()).sum::<f64>() / buf.len() as f64
}
