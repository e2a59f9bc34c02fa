use std::time::Instant;

use holomem::optics::{propagate, ComplexField, Sampling};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::Outcome;

const N: usize = 256;

/// Random spectrum inside a disk of radius N/4 frequency samples, transformed
/// back to the spatial domain.
fn band_limited_field(seed: u64) -> ComplexField<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signed = |k: usize| if k < N / 2 { k as f64 } else { k as f64 - N as f64 };
    let radius = (N / 4) as f64;
    let mut data: Vec<Complex64> = (0..N * N)
        .map(|i| {
            let (k, l) = (signed(i / N), signed(i % N));
            if k * k + l * l <= radius * radius {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let ifft = FftPlanner::new().plan_fft_inverse(N);
    for row in data.chunks_exact_mut(N) {
        ifft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); N];
    for c in 0..N {
        for r in 0..N {
            col[r] = data[r * N + c];
        }
        ifft.process(&mut col);
        for r in 0..N {
            data[r * N + c] = col[r] / (N * N) as f64;
        }
    }
    ComplexField::new(data, N, N, Sampling::helium_neon_4um()).unwrap()
}

pub fn criterion_1() -> Vec<(String, Outcome)> {
    let fields: Vec<_> = (0..3).map(|s| band_limited_field(100 + s)).collect();
    let mut worst = [0.0f64; 3];
    let mut slowest = [0.0f64; 3];
    for u in &fields {
        for z in [0.05, -0.1, 0.2] {
            let t = Instant::now();
            let back = propagate(&propagate(u, z).unwrap(), -z).unwrap();
            slowest[0] = slowest[0].max(t.elapsed().as_secs_f64());
            worst[0] = worst[0].max(back.relative_linf(u));

            let t = Instant::now();
            let e = propagate(u, z).unwrap().energy();
            slowest[1] = slowest[1].max(t.elapsed().as_secs_f64());
            worst[1] = worst[1].max(((e - u.energy()) / u.energy()).abs());
        }
        for (z1, z2) in [(0.02, 0.03), (0.1, -0.04), (0.15, 0.05)] {
            let t = Instant::now();
            let two = propagate(&propagate(u, z1).unwrap(), z2).unwrap();
            let one = propagate(u, z1 + z2).unwrap();
            slowest[2] = slowest[2].max(t.elapsed().as_secs_f64());
            worst[2] = worst[2].max(two.relative_linf(&one));
        }
    }
    let limits = [1e-8, 1e-10, 1e-8];
    let names = ["round trip", "energy", "semigroup"];
    let pass = (0..3).all(|i| worst[i] < limits[i] && slowest[i] < 1.0);
    let detail = (0..3)
        .map(|i| format!("{} {:.1e} (< {:.0e}, {:.3} s)", names[i], worst[i], limits[i], slowest[i]))
        .collect::<Vec<_>>()
        .join("; ");
    vec![("1 optics invariants".into(), Outcome::new(pass, detail))]
}
