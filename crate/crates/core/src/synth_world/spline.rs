//! Natural cubic spline over uniformly spaced knots, with analytic
//! first-derivative evaluation.

pub(crate) struct CubicSpline {
    x0: f64,
    h: f64,
    ys: Vec<f64>,
    /// Second derivatives at the knots (natural boundary: zero at the ends).
    m: Vec<f64>,
}

impl CubicSpline {
    /// Fits a natural cubic spline through `ys` at knots `x0 + i*h`.
    pub fn natural_uniform(x0: f64, h: f64, ys: Vec<f64>) -> Self {
        let n = ys.len();
        assert!(n >= 2, "spline needs at least two knots");
        assert!(h > 0.0);
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system: m[0] = m[n-1] = 0,
            // h/6*m[i-1] + 2h/3*m[i] + h/6*m[i+1] = (y[i+1]-2y[i]+y[i-1])/h
            let k = n - 2;
            let mut diag = vec![2.0 * h / 3.0; k];
            let off = h / 6.0;
            let mut rhs: Vec<f64> = (1..n - 1)
                .map(|i| (ys[i + 1] - 2.0 * ys[i] + ys[i - 1]) / h)
                .collect();
            // Thomas algorithm
            for i in 1..k {
                let w = off / diag[i - 1];
                diag[i] -= w * off;
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - off * m[i + 2]) / diag[i];
            }
        }
        Self { x0, h, ys, m }
    }

    fn segment(&self, x: f64) -> (usize, f64) {
        let n = self.ys.len();
        let mut i = ((x - self.x0) / self.h).floor() as isize;
        i = i.clamp(0, n as isize - 2);
        let i = i as usize;
        let t = x - (self.x0 + i as f64 * self.h);
        (i, t)
    }

    pub fn value(&self, x: f64) -> f64 {
        let (i, t) = self.segment(x);
        let h = self.h;
        let (y0, y1, m0, m1) = (self.ys[i], self.ys[i + 1], self.m[i], self.m[i + 1]);
        let a = t / h;
        let b = 1.0 - a;
        b * y0 + a * y1
            + ((b * b * b - b) * m0 + (a * a * a - a) * m1) * h * h / 6.0
    }
}
