//! Small shared helpers.

use std::sync::Once;

static POOL_INIT: Once = Once::new();

/// Installs the global worker pool, honoring the `COLABEL_THREADS` cap.
///
/// Called lazily from every parallel entry point; later calls are no-ops, as
/// is the whole function when the pool already exists (e.g. under a test
/// harness that installed one).
pub(crate) fn ensure_thread_pool() {
    POOL_INIT.call_once(|| {
        if let Ok(v) = std::env::var("COLABEL_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    // Ignore failure: a pool may already be installed.
                    let _ = rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build_global();
                }
            }
        }
    });
}

/// Numerically stable in-place softmax of `-costs`: `out_l = exp(-c_l) / sum`.
///
/// Shared by initialization and the update step so that "zero extra terms"
/// reduces the step to initialization bit-for-bit.
#[inline]
pub(crate) fn softmax_neg_into(costs: &[f64], out: &mut [f64]) {
    debug_assert_eq!(costs.len(), out.len());
    let mut min = f64::INFINITY;
    for &c in costs {
        if c < min {
            min = c;
        }
    }
    let mut sum = 0.0;
    for (o, &c) in out.iter_mut().zip(costs) {
        let e = (-(c - min)).exp();
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}
