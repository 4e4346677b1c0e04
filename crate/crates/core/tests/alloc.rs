//! Measured heap high-water mark of an inference forward pass against the
//! analytic estimate.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sslab_core::bench::{estimate_peak_memory, synthetic_wave};
use sslab_core::blocks::config::FrontendSpec;
use sslab_core::blocks::{BlockKind, Encoder, EncoderConfig, ParamStore};

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::SeqCst) + layout.size();
            PEAK.fetch_max(now, Ordering::SeqCst);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::SeqCst);
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

#[test]
fn estimate_is_within_twice_the_high_water_mark() {
    for kind in BlockKind::ALL {
        let mut cfg = EncoderConfig::tiny(kind, 32, 2);
        cfg.frontend = FrontendSpec::standard(16);
        let encoder = Encoder::new(&cfg).unwrap();
        let params: ParamStore<f64> = encoder.init(&mut ChaCha8Rng::seed_from_u64(0));
        let param_bytes = cfg.param_count() * 8;
        for seconds in [4.0, 16.0] {
            let wave: Vec<f64> = synthetic_wave(seconds, 1);
            let base = CURRENT.load(Ordering::SeqCst);
            PEAK.store(base, Ordering::SeqCst);
            let states = encoder.forward(&params, &wave).unwrap();
            let measured = PEAK.load(Ordering::SeqCst) - base + param_bytes;
            drop(states);
            let est = estimate_peak_memory(&cfg, seconds, 1, 8) as f64;
            let ratio = est / measured as f64;
            assert!((0.5..=2.0).contains(&ratio), "{kind:?} {seconds} s: estimate {est} measured {measured}");
        }
    }
}
