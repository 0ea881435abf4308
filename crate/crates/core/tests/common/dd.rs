//! Double-double arithmetic and a transmission evaluator built on it, used
//! as a finite-difference oracle with roughly 32 significant digits.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn from(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs_approx(self) -> f64 {
        self.hi.abs()
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let p = self.hi * b.hi;
        let e = self.hi.mul_add(b.hi, -p);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::from(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Cdd {
    pub re: Dd,
    pub im: Dd,
}

impl Cdd {
    pub fn new(re: Dd, im: Dd) -> Self {
        Self { re, im }
    }

    fn add(self, b: Cdd) -> Cdd {
        Cdd::new(self.re + b.re, self.im + b.im)
    }

    fn sub(self, b: Cdd) -> Cdd {
        Cdd::new(self.re - b.re, self.im - b.im)
    }

    fn mul(self, b: Cdd) -> Cdd {
        Cdd::new(self.re * b.re - self.im * b.im, self.re * b.im + self.im * b.re)
    }

    fn div(self, b: Cdd) -> Cdd {
        let d = b.re * b.re + b.im * b.im;
        Cdd::new((self.re * b.re + self.im * b.im) / d, (self.im * b.re - self.re * b.im) / d)
    }

    fn norm_approx(self) -> f64 {
        self.re.hi.hypot(self.im.hi)
    }

    pub fn norm_sqr(self) -> Dd {
        self.re * self.re + self.im * self.im
    }
}

/// `|H21|^2` of a swap-background model, `H21 = 1 - q^T M^-1 q` with
/// `q = K[:, 0]` and `M = i(omega - W) + K K^T / 2`, solved by Gaussian
/// elimination with partial pivoting in double-double.
pub fn transmission_dd(freqs: &[Dd], coupling: &[[Dd; 2]], omega: f64) -> Dd {
    let n = freqs.len();
    let half = Dd::from(0.5);
    let mut m = vec![vec![Cdd::new(Dd::ZERO, Dd::ZERO); n]; n];
    for r in 0..n {
        for c in 0..n {
            let kk = coupling[r][0] * coupling[c][0] + coupling[r][1] * coupling[c][1];
            let im = if r == c { Dd::from(omega) - freqs[r] } else { Dd::ZERO };
            m[r][c] = Cdd::new(half * kk, im);
        }
    }
    let q: Vec<Cdd> = coupling.iter().map(|k| Cdd::new(k[0], Dd::ZERO)).collect();
    let mut rhs = q.clone();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a][col].norm_approx().total_cmp(&m[b][col].norm_approx()))
            .unwrap();
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col].div(m[col][col]);
            for c in col..n {
                let t = f.mul(m[col][c]);
                m[r][c] = m[r][c].sub(t);
            }
            rhs[r] = rhs[r].sub(f.mul(rhs[col]));
        }
    }
    let mut u = vec![Cdd::new(Dd::ZERO, Dd::ZERO); n];
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in r + 1..n {
            acc = acc.sub(m[r][c].mul(u[c]));
        }
        u[r] = acc.div(m[r][r]);
    }
    let mut qu = Cdd::new(Dd::ZERO, Dd::ZERO);
    for i in 0..n {
        qu = qu.add(q[i].mul(u[i]));
    }
    Cdd::new(Dd::ONE, Dd::ZERO).sub(qu).norm_sqr()
}

/// Central difference of the transmission w.r.t. parameter `i` (resonances,
/// then row-major couplings) with step `h`, evaluated in double-double.
pub fn fd_transmission(params: &[f64], n_modes: usize, omega: f64, i: usize, h: f64) -> f64 {
    let eval = |delta: f64| {
        let mut p: Vec<Dd> = params.iter().map(|&v| Dd::from(v)).collect();
        p[i] = p[i] + Dd::from(delta);
        let freqs = &p[..n_modes];
        let coupling: Vec<[Dd; 2]> = (0..n_modes).map(|m| [p[n_modes + 2 * m], p[n_modes + 2 * m + 1]]).collect();
        transmission_dd(freqs, &coupling, omega)
    };
    ((eval(h) - eval(-h)) / Dd::from(2.0 * h)).to_f64()
}
