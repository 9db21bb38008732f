//! Compact limited-memory representation `B = θI − W M Wᵀ`, the generalized
//! Cauchy point and the subspace minimization over free variables.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::Bounds;

pub(super) struct Memory {
    capacity: usize,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    theta: f64,
    // M, 2k x 2k
    m: DMatrix<f64>,
    // W row-major, n x 2k; rebuilt whenever the pairs change
    w: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Memory {
    pub(super) fn new(capacity: usize) -> Self {
        Self {
            capacity,
            s: VecDeque::new(),
            y: VecDeque::new(),
            theta: 1.0,
            m: DMatrix::zeros(0, 0),
            w: Vec::new(),
        }
    }

    pub(super) fn len(&self) -> usize {
        self.s.len()
    }

    pub(super) fn theta(&self) -> f64 {
        self.theta
    }

    pub(super) fn reset(&mut self) {
        self.s.clear();
        self.y.clear();
        self.theta = 1.0;
        self.m = DMatrix::zeros(0, 0);
        self.w.clear();
    }

    /// Adds a correction pair. Returns false (and resets) if the middle
    /// matrix became singular.
    pub(super) fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        self.theta = dot(&y, &y) / sy;
        if self.s.len() == self.capacity {
            self.s.pop_front();
            self.y.pop_front();
        }
        self.s.push_back(s);
        self.y.push_back(y);
        if self.rebuild() {
            true
        } else {
            self.reset();
            false
        }
    }

    fn rebuild(&mut self) -> bool {
        let k = self.len();
        let theta = self.theta;
        let mut kmat = DMatrix::zeros(2 * k, 2 * k);
        for i in 0..k {
            for j in 0..k {
                let sy = dot(&self.s[i], &self.y[j]);
                if i == j {
                    kmat[(i, i)] = -sy;
                } else if i > j {
                    // L in the lower-left block, Lᵀ in the upper-right one
                    kmat[(k + i, j)] = sy;
                    kmat[(j, k + i)] = sy;
                }
                if i >= j {
                    let ss = theta * dot(&self.s[i], &self.s[j]);
                    kmat[(k + i, k + j)] = ss;
                    kmat[(k + j, k + i)] = ss;
                }
            }
        }
        let Some(m) = kmat.try_inverse() else {
            return false;
        };
        if m.iter().any(|v| !v.is_finite()) {
            return false;
        }
        self.m = m;
        let n = self.s[0].len();
        self.w = vec![0.0; n * 2 * k];
        for i in 0..n {
            let row = &mut self.w[i * 2 * k..(i + 1) * 2 * k];
            for j in 0..k {
                row[j] = self.y[j][i];
                row[k + j] = theta * self.s[j][i];
            }
        }
        true
    }

    fn width(&self) -> usize {
        2 * self.len()
    }

    fn w_row(&self, i: usize) -> &[f64] {
        let k2 = self.width();
        &self.w[i * k2..(i + 1) * k2]
    }

    fn wt_times(&self, v: &[f64]) -> DVector<f64> {
        let k2 = self.width();
        let mut out = DVector::zeros(k2);
        if k2 == 0 {
            return out;
        }
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                for (o, w) in out.iter_mut().zip(self.w_row(i)) {
                    *o += w * vi;
                }
            }
        }
        out
    }
}

/// Generalized Cauchy point along the projected steepest-descent path.
/// Returns the point and `c = Wᵀ(xcp − x)`.
pub(super) fn cauchy_point(x: &[f64], g: &[f64], bounds: &Bounds, mem: &Memory) -> (Vec<f64>, DVector<f64>) {
    let n = x.len();
    let theta = mem.theta();
    let mut xcp = x.to_vec();
    let mut d = vec![0.0; n];
    let mut tb = vec![f64::INFINITY; n];
    for i in 0..n {
        let t = if g[i] < 0.0 {
            (x[i] - bounds.upper) / g[i]
        } else if g[i] > 0.0 {
            (x[i] - bounds.lower) / g[i]
        } else {
            f64::INFINITY
        };
        tb[i] = t;
        if t > 0.0 {
            d[i] = -g[i];
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| d[i] != 0.0 && tb[i].is_finite()).collect();
    order.sort_by(|&a, &b| tb[a].total_cmp(&tb[b]).then(a.cmp(&b)));

    let mut p = mem.wt_times(&d);
    let mut c = DVector::zeros(p.len());
    let mut fp = -dot(&d, &d);
    if fp >= 0.0 {
        return (xcp, c);
    }
    let mut fpp = -theta * fp - p.dot(&(&mem.m * &p));
    let fpp0 = fpp;
    let mut dt_min = -fp / fpp;
    let mut t_old = 0.0;
    for &b in &order {
        let t = tb[b];
        let dt = t - t_old;
        if dt_min < dt {
            break;
        }
        xcp[b] = if d[b] > 0.0 { bounds.upper } else { bounds.lower };
        let zb = xcp[b] - x[b];
        c += dt * &p;
        let gb = g[b];
        let wb = DVector::from_column_slice(mem.w_row(b));
        let mw = &mem.m * &wb;
        fp += dt * fpp + gb * gb + theta * gb * zb - gb * mw.dot(&c);
        fpp -= theta * gb * gb + 2.0 * gb * mw.dot(&p) + gb * gb * mw.dot(&wb);
        fpp = fpp.max(f64::EPSILON * fpp0);
        p += gb * &wb;
        d[b] = 0.0;
        dt_min = -fp / fpp;
        t_old = t;
    }
    let dt_min = dt_min.max(0.0);
    let t = t_old + dt_min;
    for i in 0..n {
        if d[i] != 0.0 {
            xcp[i] = bounds.clamp(x[i] + t * d[i]);
        }
    }
    c += dt_min * &p;
    (xcp, c)
}

/// Minimizes the quadratic model over the variables left free at the Cauchy
/// point, then projects back onto the box. Falls back to the Cauchy point
/// when the projected step is not a descent direction.
pub(super) fn subspace_step(
    x: &[f64],
    g: &[f64],
    xcp: &[f64],
    c: &DVector<f64>,
    bounds: &Bounds,
    mem: &Memory,
) -> Vec<f64> {
    let free: Vec<usize> = (0..x.len())
        .filter(|&i| xcp[i] > bounds.lower && xcp[i] < bounds.upper)
        .collect();
    if free.is_empty() {
        return xcp.to_vec();
    }
    let theta = mem.theta();
    let k2 = mem.width();
    let mc = &mem.m * c;
    let r: Vec<f64> = free
        .iter()
        .map(|&i| {
            let wmc: f64 = if k2 == 0 { 0.0 } else { dot(mem.w_row(i), mc.as_slice()) };
            g[i] + theta * (xcp[i] - x[i]) - wmc
        })
        .collect();
    let mut du: Vec<f64> = r.iter().map(|ri| -ri / theta).collect();
    if k2 > 0 {
        let mut wtzr = DVector::zeros(k2);
        let mut wzzw = DMatrix::zeros(k2, k2);
        for (&i, &ri) in free.iter().zip(&r) {
            let wi = DVector::from_column_slice(mem.w_row(i));
            wtzr += ri * &wi;
            wzzw.ger(1.0, &wi, &wi, 1.0);
        }
        let v = &mem.m * wtzr;
        let nmat = DMatrix::identity(k2, k2) - (&mem.m * wzzw) / theta;
        let Some(v) = nmat.lu().solve(&v) else {
            return xcp.to_vec();
        };
        for (j, &i) in free.iter().enumerate() {
            du[j] -= dot(mem.w_row(i), v.as_slice()) / (theta * theta);
        }
    }
    let mut xbar = xcp.to_vec();
    for (j, &i) in free.iter().enumerate() {
        xbar[i] = bounds.clamp(xcp[i] + du[j]);
    }
    let descent: f64 = xbar.iter().zip(x).zip(g).map(|((a, b), gi)| (a - b) * gi).sum();
    if descent < 0.0 {
        xbar
    } else {
        xcp.to_vec()
    }
}
