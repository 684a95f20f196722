//! Globally adaptive 15-point Gauss–Kronrod quadrature of vector-valued integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
/// Gauss weights for the odd-indexed Kronrod nodes (and the centre).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct Integral<const N: usize> {
    pub value: [f64; N],
    /// Per-component absolute error estimate.
    pub error: [f64; N],
    pub converged: bool,
}

struct Segment<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: [f64; N],
}

impl<const N: usize> Segment<N> {
    fn worst(&self) -> f64 {
        self.error.iter().copied().fold(0.0, f64::max)
    }
}

impl<const N: usize> PartialEq for Segment<N> {
    fn eq(&self, other: &Self) -> bool {
        self.worst() == other.worst()
    }
}
impl<const N: usize> Eq for Segment<N> {}
impl<const N: usize> PartialOrd for Segment<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for Segment<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.worst().total_cmp(&other.worst())
    }
}

fn gauss_kronrod<const N: usize, F: Fn(f64) -> [f64; N]>(f: &F, a: f64, b: f64) -> Segment<N> {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = [0.0; N];
    let mut gauss = [0.0; N];

    let fc = f(centre);
    for k in 0..N {
        kronrod[k] = WGK[7] * fc[k];
        gauss[k] = WG[3] * fc[k];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(centre - dx);
        let f2 = f(centre + dx);
        for k in 0..N {
            let s = f1[k] + f2[k];
            kronrod[k] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * s;
            }
        }
    }
    let mut value = [0.0; N];
    let mut error = [0.0; N];
    for k in 0..N {
        value[k] = kronrod[k] * half;
        error[k] = ((kronrod[k] - gauss[k]) * half).abs();
    }
    Segment { a, b, value, error }
}

/// Integrates `f` over `[a, b]` until the summed error estimate of every
/// component is below `abs_tol`. Interior `breakpoints` (kinks of the
/// integrand) seed the initial partition.
pub fn integrate<const N: usize, F: Fn(f64) -> [f64; N]>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    abs_tol: f64,
    max_segments: usize,
) -> Integral<N> {
    let mut edges: Vec<f64> = std::iter::once(a)
        .chain(breakpoints.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let mut heap: BinaryHeap<Segment<N>> = edges
        .windows(2)
        .map(|w| gauss_kronrod(&f, w[0], w[1]))
        .collect();

    let totals = |heap: &BinaryHeap<Segment<N>>| {
        let mut value = [0.0; N];
        let mut error = [0.0; N];
        for s in heap.iter() {
            for k in 0..N {
                value[k] += s.value[k];
                error[k] += s.error[k];
            }
        }
        (value, error)
    };

    loop {
        let (value, error) = totals(&heap);
        let worst = error.iter().copied().fold(0.0, f64::max);
        if worst <= abs_tol {
            return Integral {
                value,
                error,
                converged: true,
            };
        }
        if heap.len() >= max_segments {
            return Integral {
                value,
                error,
                converged: false,
            };
        }
        let seg = heap.pop().expect("non-empty partition");
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // interval cannot be split further in floating point
            heap.push(seg);
            let (value, error) = totals(&heap);
            return Integral {
                value,
                error,
                converged: false,
            };
        }
        heap.push(gauss_kronrod(&f, seg.a, mid));
        heap.push(gauss_kronrod(&f, mid, seg.b));
    }
}
