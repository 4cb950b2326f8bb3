//! Closed-form scalar profiles of one variable (lapse, radius, rotation angle,
//! bump envelopes).

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalyticFn {
    Const(f64),
    /// `offset + slope*t + amplitude*sin(frequency*t + phase)`
    SinAffine {
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        slope: f64,
        #[serde(default)]
        amplitude: f64,
        #[serde(default)]
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Smooth compactly supported bump `height * exp(1 - 1/(1-u^2))`,
    /// `u = (t-center)/half_width`.
    Bump { center: f64, half_width: f64, height: f64 },
    Product(Vec<AnalyticFn>),
}

impl Default for AnalyticFn {
    fn default() -> Self {
        AnalyticFn::Const(1.0)
    }
}

pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

impl AnalyticFn {
    pub fn constant(v: f64) -> Self {
        AnalyticFn::Const(v)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            AnalyticFn::Const(v) => *v,
            AnalyticFn::SinAffine { offset, slope, amplitude, frequency, phase } => {
                offset + slope * t + amplitude * (frequency * t + phase).sin()
            }
            AnalyticFn::Bump { center, half_width, height } => {
                height * bump((t - center) / half_width)
            }
            AnalyticFn::Product(fs) => fs.iter().map(|f| f.eval(t)).product(),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            AnalyticFn::Const(_) => true,
            AnalyticFn::SinAffine { slope, amplitude, frequency, .. } => {
                *slope == 0.0 && (*amplitude == 0.0 || *frequency == 0.0)
            }
            AnalyticFn::Bump { height, .. } => *height == 0.0,
            AnalyticFn::Product(fs) => fs.iter().all(AnalyticFn::is_constant),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AnalyticFn::Const(v) if !v.is_finite() => Err(precondition("non-finite constant")),
            AnalyticFn::SinAffine { offset, slope, amplitude, frequency, phase }
                if ![offset, slope, amplitude, frequency, phase].iter().all(|v| v.is_finite()) =>
            {
                Err(precondition("non-finite sin_affine coefficient"))
            }
            AnalyticFn::Bump { half_width, .. } if !(*half_width > 0.0) => {
                Err(precondition("bump half_width must be positive"))
            }
            AnalyticFn::Product(fs) => fs.iter().try_for_each(AnalyticFn::validate),
            _ => Ok(()),
        }
    }

    /// Maximum over `[a, b]`: dense sampling followed by golden-section
    /// refinement around the best sample.
    pub fn max_on(&self, a: f64, b: f64) -> f64 {
        extremum(|t| self.eval(t), a, b)
    }

    pub fn min_on(&self, a: f64, b: f64) -> f64 {
        -extremum(|t| -self.eval(t), a, b)
    }
}

fn extremum(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    if b - a == 0.0 {
        return f(a);
    }
    const SAMPLES: usize = 512;
    let h = (b - a) / SAMPLES as f64;
    let mut best_i = 0;
    let mut best = f(a);
    for i in 1..=SAMPLES {
        let v = f(a + h * i as f64);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let mut lo = (a + h * (best_i as f64 - 1.0)).max(a);
    let mut hi = (a + h * (best_i as f64 + 1.0)).min(b);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
        if hi - lo < 1e-13 * (1.0 + hi.abs()) {
            break;
        }
    }
    best.max(f1).max(f2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serde_shapes() {
        let f: AnalyticFn = serde_json::from_str(r#"{"sin_affine":{"offset":1.0,"amplitude":0.3,"frequency":6.283185307179586}}"#).unwrap();
        assert!((f.eval(0.25) - 1.3).abs() < 1e-15);
        let g: AnalyticFn = serde_json::from_str(r#"{"const":2.0}"#).unwrap();
        assert_eq!(g.eval(10.0), 2.0);
        assert!(serde_json::from_str::<AnalyticFn>(r#"{"sin_affine":{"offsett":1.0}}"#).is_err());
    }

    #[test]
    fn max_refines_between_samples() {
        let f = AnalyticFn::SinAffine { offset: 1.0, slope: 0.0, amplitude: 0.5, frequency: 3.0, phase: 0.1 };
        let m = f.max_on(0.0, 2.0);
        assert!((m - 1.5).abs() < 1e-12);
        assert!((f.min_on(0.0, 2.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bump_is_compact() {
        let b = AnalyticFn::Bump { center: 0.5, half_width: 0.1, height: 2.0 };
        assert_eq!(b.eval(0.39), 0.0);
        assert_eq!(b.eval(0.5), 2.0);
        assert!(b.eval(0.45) > 0.0);
    }
}
