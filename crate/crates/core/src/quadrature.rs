//! Gauss–Legendre rules and a globally adaptive Gauss–Kronrod integrator for
//! vector-valued integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights mapped to `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "at least one node required");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x runs from +1 downwards; store ascending on [0, 1]
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

// 15-point Kronrod extension of the 7-point Gauss rule on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

struct Panel {
    lo: f64,
    hi: f64,
    value: Vec<f64>,
    error: Vec<f64>,
    worst: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.worst == other.worst
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.worst.total_cmp(&other.worst)
    }
}

/// Settings for [`integrate_vec`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
    pub initial_panels: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-12,
            max_panels: 20_000,
            initial_panels: 8,
        }
    }
}

fn gk15<F>(f: &mut F, lo: f64, hi: f64, dim: usize, buf: &mut [f64]) -> Panel
where
    F: FnMut(f64, &mut [f64]),
{
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    for (idx, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let pts: &[f64] = if x == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
        for &sgn in pts {
            f(c + sgn * x * h, buf);
            for d in 0..dim {
                kron[d] += wk * buf[d];
            }
            // odd indices are the embedded Gauss nodes
            if idx % 2 == 1 {
                let wg = WG[idx / 2];
                for d in 0..dim {
                    gauss[d] += wg * buf[d];
                }
            }
        }
    }
    let mut worst: f64 = 0.0;
    let mut error = vec![0.0; dim];
    for d in 0..dim {
        kron[d] *= h;
        gauss[d] *= h;
        error[d] = (kron[d] - gauss[d]).abs();
        worst = worst.max(error[d]);
    }
    Panel {
        lo,
        hi,
        value: kron,
        error,
        worst,
    }
}

/// Integrates a vector-valued function over `[lo, hi]`.
///
/// `f(x, out)` writes the `dim` components at `x`. Panels are bisected in
/// order of their largest component error until every component's summed
/// error estimate is below `max(abs_tol, rel_tol * |integral|)`.
pub fn integrate_vec<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    dim: usize,
    opts: AdaptiveOptions,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    let mut buf = vec![0.0; dim];
    let mut heap = BinaryHeap::new();
    let n0 = opts.initial_panels.max(1);
    let width = (hi - lo) / n0 as f64;
    for p in 0..n0 {
        let a = lo + p as f64 * width;
        let b = if p + 1 == n0 { hi } else { a + width };
        heap.push(gk15(&mut f, a, b, dim, &mut buf));
    }
    let mut panels = n0;
    let mut total = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    for panel in heap.iter() {
        for d in 0..dim {
            total[d] += panel.value[d];
            err[d] += panel.error[d];
        }
    }
    loop {
        let converged = (0..dim).all(|d| err[d] <= opts.abs_tol.max(opts.rel_tol * total[d].abs()));
        if converged {
            // re-sum to shed the drift of the running totals
            let mut exact = vec![0.0; dim];
            for panel in heap.iter() {
                for d in 0..dim {
                    exact[d] += panel.value[d];
                }
            }
            return Ok(exact);
        }
        if panels >= opts.max_panels {
            let (achieved, target) = (0..dim)
                .map(|d| (err[d], opts.abs_tol.max(opts.rel_tol * total[d].abs())))
                .max_by(|a, b| (a.0 / a.1).total_cmp(&(b.0 / b.1)))
                .unwrap_or((0.0, opts.abs_tol));
            return Err(Error::Quadrature { achieved, target });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        let left = gk15(&mut f, worst.lo, mid, dim, &mut buf);
        let right = gk15(&mut f, mid, worst.hi, dim, &mut buf);
        for d in 0..dim {
            total[d] += left.value[d] + right.value[d] - worst.value[d];
            err[d] = (err[d] + left.error[d] + right.error[d] - worst.error[d]).max(0.0);
        }
        heap.push(left);
        heap.push(right);
        panels += 1;
    }
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(mut f: F, lo: f64, hi: f64, opts: AdaptiveOptions) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    integrate_vec(|x, out| out[0] = f(x), lo, hi, 1, opts).map(|v| v[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..=16 {
            let (x, w) = gauss_legendre_unit(n);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for deg in 0..(2 * n) {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = 1.0 / (deg as f64 + 1.0);
                assert!((approx - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn adaptive_handles_oscillation_and_peaks() {
        let v = integrate(|x| (50.0 * x).sin() * (-x).exp(), 0.0, 10.0, AdaptiveOptions::default()).unwrap();
        // closed form of ∫ e^{-x} sin(ax) on [0, 10]
        let a: f64 = 50.0;
        let e = (-10.0f64).exp();
        let exact = (a - e * ((10.0 * a).sin() + a * (10.0 * a).cos())) / (1.0 + a * a);
        assert!((v - exact).abs() < 1e-10);

        let peak = integrate(|x| 1.0 / (1e-4 + (x - 0.3).powi(2)), 0.0, 1.0, AdaptiveOptions::default()).unwrap();
        let exact = 100.0 * ((0.7f64 / 1e-2).atan() + (0.3f64 / 1e-2).atan());
        assert!((peak - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn panel_budget_exhaustion_reports_tolerance() {
        let opts = AdaptiveOptions {
            max_panels: 4,
            initial_panels: 1,
            abs_tol: 1e-15,
            rel_tol: 0.0,
        };
        let err = integrate(|x| (1000.0 * x).sin(), 0.0, 10.0, opts).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }
}
