//! Declarative deterministic functions of time, used by configs and the
//! delay model.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Deterministic function of one time variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    /// A bare number is a constant.
    Number(f64),
    Tagged(TaggedProfile),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaggedProfile {
    Constant { value: f64 },
    /// `c0 + c1 t + c2 t^2 + ...`
    Polynomial { coefficients: Vec<f64> },
    /// `scale * exp(rate * t)`
    Exponential { scale: f64, rate: f64 },
    /// Piecewise-linear interpolation, held constant outside the table.
    Table { times: Vec<f64>, values: Vec<f64> },
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Number(0.0)
    }
}

impl From<f64> for Profile {
    fn from(v: f64) -> Self {
        Profile::Number(v)
    }
}

impl Profile {
    pub fn constant(c: f64) -> Self {
        Profile::Number(c)
    }

    pub fn polynomial(coefficients: Vec<f64>) -> Self {
        Profile::Tagged(TaggedProfile::Polynomial { coefficients })
    }

    pub fn exponential(scale: f64, rate: f64) -> Self {
        Profile::Tagged(TaggedProfile::Exponential { scale, rate })
    }

    pub fn table(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let p = Profile::Tagged(TaggedProfile::Table { times, values });
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Profile::Number(v) | Profile::Tagged(TaggedProfile::Constant { value: v }) => {
                if !v.is_finite() {
                    return invalid("profile constant is not finite");
                }
            }
            Profile::Tagged(TaggedProfile::Polynomial { coefficients }) => {
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return invalid("polynomial coefficients must be finite");
                }
            }
            Profile::Tagged(TaggedProfile::Exponential { scale, rate }) => {
                if !scale.is_finite() || !rate.is_finite() {
                    return invalid("exponential profile parameters must be finite");
                }
            }
            Profile::Tagged(TaggedProfile::Table { times, values }) => {
                if times.is_empty() || times.len() != values.len() {
                    return invalid("profile table needs matching, non-empty times and values");
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return invalid("profile table times must be strictly increasing");
                }
                if times.iter().chain(values).any(|v| !v.is_finite()) {
                    return invalid("profile table has non-finite entries");
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Profile::Number(v) => *v,
            Profile::Tagged(p) => match p {
                TaggedProfile::Constant { value } => *value,
                TaggedProfile::Polynomial { coefficients } => {
                    coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c)
                }
                TaggedProfile::Exponential { scale, rate } => scale * (rate * t).exp(),
                TaggedProfile::Table { times, values } => interpolate(times, values, t),
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Profile::Number(v) => *v == 0.0,
            Profile::Tagged(TaggedProfile::Constant { value }) => *value == 0.0,
            Profile::Tagged(TaggedProfile::Polynomial { coefficients }) => {
                coefficients.iter().all(|c| *c == 0.0)
            }
            Profile::Tagged(TaggedProfile::Exponential { scale, .. }) => *scale == 0.0,
            Profile::Tagged(TaggedProfile::Table { values, .. }) => values.iter().all(|v| *v == 0.0),
        }
    }
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    if t <= times[0] {
        return values[0];
    }
    let last = times.len() - 1;
    if t >= times[last] {
        return values[last];
    }
    let idx = times.partition_point(|&x| x <= t);
    let (t0, t1) = (times[idx - 1], times[idx]);
    let w = (t - t0) / (t1 - t0);
    values[idx - 1] * (1.0 - w) + values[idx] * w
}

/// Deterministic function of two time variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile2 {
    Number(f64),
    Tagged(TaggedProfile2),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaggedProfile2 {
    Constant { value: f64 },
    /// `scale * left(t) * right(s)`
    Separable {
        #[serde(default = "one")]
        scale: f64,
        left: Profile,
        right: Profile,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for Profile2 {
    fn default() -> Self {
        Profile2::Number(0.0)
    }
}

impl From<f64> for Profile2 {
    fn from(v: f64) -> Self {
        Profile2::Number(v)
    }
}

impl Profile2 {
    pub fn separable(scale: f64, left: Profile, right: Profile) -> Self {
        Profile2::Tagged(TaggedProfile2::Separable { scale, left, right })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Profile2::Number(v) | Profile2::Tagged(TaggedProfile2::Constant { value: v }) => {
                if !v.is_finite() {
                    return invalid("kernel constant is not finite");
                }
                Ok(())
            }
            Profile2::Tagged(TaggedProfile2::Separable { scale, left, right }) => {
                if !scale.is_finite() {
                    return invalid("separable kernel scale is not finite");
                }
                left.validate()?;
                right.validate()
            }
        }
    }

    pub fn eval(&self, t: f64, s: f64) -> f64 {
        match self {
            Profile2::Number(v) | Profile2::Tagged(TaggedProfile2::Constant { value: v }) => *v,
            Profile2::Tagged(TaggedProfile2::Separable { scale, left, right }) => {
                scale * left.eval(t) * right.eval(s)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Profile2::Number(v) | Profile2::Tagged(TaggedProfile2::Constant { value: v }) => {
                *v == 0.0
            }
            Profile2::Tagged(TaggedProfile2::Separable { scale, left, right }) => {
                *scale == 0.0 || left.is_zero() || right.is_zero()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_each_form() {
        assert_eq!(Profile::constant(2.0).eval(5.0), 2.0);
        assert_eq!(Profile::polynomial(vec![1.0, 2.0, 3.0]).eval(2.0), 17.0);
        assert!((Profile::exponential(2.0, 1.0).eval(1.0) - 2.0 * 1f64.exp()).abs() < 1e-15);
        let tab = Profile::table(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 0.0]).unwrap();
        assert_eq!(tab.eval(-1.0), 0.0);
        assert_eq!(tab.eval(0.5), 1.0);
        assert_eq!(tab.eval(2.0), 1.0);
        assert_eq!(tab.eval(9.0), 0.0);
        assert!(Profile::table(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());

        let k = Profile2::separable(0.5, Profile::constant(2.0), Profile::polynomial(vec![0.0, 1.0]));
        assert_eq!(k.eval(7.0, 3.0), 3.0);
    }

    #[derive(Deserialize)]
    struct Holder {
        a: Profile,
        b: Profile,
        k: Profile2,
    }

    #[test]
    fn parses_from_toml_shapes() {
        let h: Holder = toml::from_str(
            r#"
            a = 1.5
            b = { kind = "exponential", scale = 1.0, rate = -0.5 }
            k = { kind = "separable", left = 2.0, right = { kind = "polynomial", coefficients = [1.0, 1.0] } }
            "#,
        )
        .unwrap();
        assert_eq!(h.a.eval(0.0), 1.5);
        assert_eq!(h.b.eval(0.0), 1.0);
        assert_eq!(h.k.eval(0.0, 1.0), 4.0);
    }
}
