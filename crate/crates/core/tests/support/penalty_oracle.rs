//! Reference penalty values in double-double arithmetic (about 32 significant
//! digits), so central differences of the penalty are not swamped by f64
//! rounding when a coordinate's gradient is many orders of magnitude below
//! the penalty itself.

use patchtune_core::regularizers::{PenaltyForm, RegConfig, RegKind};

#[derive(Debug, Clone, Copy)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd {
        hi: s,
        lo: (a - (s - bb)) + (b - bb),
    }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

impl Dd {
    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        quick_two_sum(s.hi, s.lo + self.lo + o.lo)
    }

    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p) + self.hi * o.lo + self.lo * o.hi;
        quick_two_sum(p, e)
    }

    pub fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::from(0.0);
        }
        let s = self.hi.sqrt();
        let r = self.sub(Dd::from(s).mul(Dd::from(s)));
        two_sum(s, r.hi / (2.0 * s))
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Penalty value for `cfg`, with EWC weights F (squared form) or F² (norm
/// form).
pub fn penalty_value(theta: &[f64], prev: &[f64], fisher: &[f64], cfg: &RegConfig) -> Dd {
    let mut sum = Dd::from(0.0);
    for i in 0..theta.len() {
        let d = two_sum(theta[i], -prev[i]);
        let w = match (cfg.kind, cfg.form) {
            (RegKind::None, _) => return Dd::from(0.0),
            (RegKind::MoveNorm, _) => Dd::from(1.0),
            (RegKind::Ewc, PenaltyForm::Squared) => Dd::from(fisher[i]),
            (RegKind::Ewc, PenaltyForm::Norm) => Dd::from(fisher[i]).mul(Dd::from(fisher[i])),
        };
        sum = sum.add(w.mul(d.mul(d)));
    }
    let lambda = Dd::from(cfg.lambda);
    match cfg.form {
        PenaltyForm::Squared => lambda.mul(sum),
        PenaltyForm::Norm => {
            let eps = Dd::from(cfg.epsilon);
            lambda.mul(sum.add(eps).sqrt().sub(eps.sqrt()))
        }
    }
}

/// Central difference of the reference penalty along coordinate `i`.
pub fn central_difference(theta: &[f64], prev: &[f64], fisher: &[f64], cfg: &RegConfig, i: usize, h: f64) -> f64 {
    let mut up = theta.to_vec();
    let mut down = theta.to_vec();
    up[i] += h;
    down[i] -= h;
    let rise = penalty_value(&up, prev, fisher, cfg).sub(penalty_value(&down, prev, fisher, cfg));
    let run = two_sum(up[i], -down[i]);
    rise.to_f64() / run.to_f64()
}
