//! Periodic cubic interpolation on a uniform grid.

/// Natural periodic cubic spline through `values[i]` at `u = i * h`,
/// with period `values.len() * h`.
#[derive(Debug, Clone)]
pub struct PeriodicSpline {
    values: Vec<f64>,
    second: Vec<f64>,
    h: f64,
}

impl PeriodicSpline {
    pub fn new(values: Vec<f64>, h: f64) -> Self {
        let n = values.len();
        assert!(n >= 3, "periodic spline needs at least 3 knots");
        let rhs: Vec<f64> = (0..n)
            .map(|i| {
                let prev = values[(i + n - 1) % n];
                let next = values[(i + 1) % n];
                6.0 * (next - 2.0 * values[i] + prev) / (h * h)
            })
            .collect();
        let second = solve_cyclic(1.0, 4.0, 1.0, &rhs);
        PeriodicSpline { values, second, h }
    }

    pub fn period(&self) -> f64 {
        self.values.len() as f64 * self.h
    }

    fn locate(&self, u: f64) -> (usize, f64) {
        let n = self.values.len();
        let x = (u / self.h).rem_euclid(n as f64);
        let i = (x.floor() as usize).min(n - 1);
        (i, x - i as f64)
    }

    pub fn eval(&self, u: f64) -> f64 {
        let n = self.values.len();
        let (i, s) = self.locate(u);
        let j = (i + 1) % n;
        let (a, b) = (1.0 - s, s);
        let h2 = self.h * self.h;
        a * self.values[i]
            + b * self.values[j]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[j]) * h2 / 6.0
    }

    pub fn derivative(&self, u: f64) -> f64 {
        let n = self.values.len();
        let (i, s) = self.locate(u);
        let j = (i + 1) % n;
        let (a, b) = (1.0 - s, s);
        (self.values[j] - self.values[i]) / self.h
            + self.h / 6.0 * (-(3.0 * a * a - 1.0) * self.second[i] + (3.0 * b * b - 1.0) * self.second[j])
    }
}

/// Solves the cyclic tridiagonal system with constant bands
/// `lower x[i-1] + diag x[i] + upper x[i+1] = rhs[i]` (indices mod n)
/// by Sherman–Morrison on top of the Thomas algorithm.
fn solve_cyclic(lower: f64, diag: f64, upper: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let gamma = -diag;
    let mut b = vec![diag; n];
    b[0] = diag - gamma;
    b[n - 1] = diag - upper * lower / gamma;
    let x = thomas(lower, &b, upper, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = lower;
    let z = thomas(lower, &b, upper, &u);
    let fact = (x[0] + upper * x[n - 1] / gamma) / (1.0 + z[0] + upper * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

fn thomas(lower: f64, diag: &[f64], upper: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower * c[i - 1];
        c[i] = upper / m;
        d[i] = (rhs[i] - lower * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Five-point Gauss–Legendre nodes and weights on `[-1, 1]`.
pub const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

/// Integrates `f` over `[a, b]` with five-point Gauss–Legendre.
pub fn gauss5<F: FnMut(f64) -> f64>(a: f64, b: f64, mut f: F) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    GAUSS5.iter().map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}
