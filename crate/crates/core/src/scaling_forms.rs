//! The four parametric error models and their log-space gradients.
//!
//! | form             | f(x, n)                                                     |
//! |------------------|-------------------------------------------------------------|
//! | `mult`           | `α ∏ x_k^-a_k n^-d + ε`                                     |
//! | `add`            | `Σ α_k x_k^-a_k + ξ n^-d + ε`                               |
//! | `add_interact_s` | `Σ α_k x_k^-a_k + Σ β_k x_k^b_k n^-d + ε`                   |
//! | `add_interact`   | `Σ α_k x_k^-a_k + Σ β_k x_k^b_k n^-d + ξ n^-d + ε`          |
//!
//! Coefficients (α, β, ξ, ε) are non-negative; exponents (a, b, d) are free.
//! Factors are ordered (N, T, V) when K = 3.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Scaling factors a model can depend on: LM size, frames, tokens per frame.
pub const MAX_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormTag {
    Mult,
    Add,
    AddInteractS,
    AddInteract,
}

impl FormTag {
    pub const ALL: [FormTag; 4] = [FormTag::Mult, FormTag::Add, FormTag::AddInteractS, FormTag::AddInteract];

    pub fn has_beta(self) -> bool {
        matches!(self, FormTag::AddInteractS | FormTag::AddInteract)
    }

    pub fn has_xi(self) -> bool {
        matches!(self, FormTag::Add | FormTag::AddInteract)
    }

    /// Whether the compute-optimal factors can move with data size.
    pub fn optimum_depends_on_n(self) -> bool {
        self.has_beta()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FormTag::Mult => "mult",
            FormTag::Add => "add",
            FormTag::AddInteractS => "add_interact_s",
            FormTag::AddInteract => "add_interact",
        }
    }
}

impl fmt::Display for FormTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FormTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "mult" => Ok(FormTag::Mult),
            "add" => Ok(FormTag::Add),
            "add_interact_s" => Ok(FormTag::AddInteractS),
            "add_interact" => Ok(FormTag::AddInteract),
            _ => Err(invalid(format!("unknown parametric form {s:?}"))),
        }
    }
}

/// A form tag together with the number of scaling factors it models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParametricForm {
    pub tag: FormTag,
    #[serde(rename = "K")]
    pub k: usize,
}

impl ParametricForm {
    pub fn new(tag: FormTag, k: usize) -> Result<Self> {
        if k == 0 || k > MAX_K {
            return Err(invalid(format!("a parametric form uses 1 to {MAX_K} scaling factors, got {k}")));
        }
        Ok(Self { tag, k })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.tag, self.k)
    }

    pub fn num_params(&self) -> usize {
        self.layout().len
    }
}

impl fmt::Display for ParametricForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(K={})", self.tag, self.k)
    }
}

/// Positions of each parameter group inside the flat vector
/// `[alpha.., beta.., xi, epsilon, a.., b.., d]`; absent groups take no slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub tag: FormTag,
    pub k: usize,
    pub alpha: usize,
    pub n_alpha: usize,
    pub beta: Option<usize>,
    pub xi: Option<usize>,
    pub epsilon: usize,
    pub a: usize,
    pub b: Option<usize>,
    pub d: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(tag: FormTag, k: usize) -> Self {
        let n_alpha = if tag == FormTag::Mult { 1 } else { k };
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let alpha = take(n_alpha);
        let beta = tag.has_beta().then(|| take(k));
        let xi = tag.has_xi().then(|| take(1));
        let epsilon = take(1);
        let a = take(k);
        let b = tag.has_beta().then(|| take(k));
        let d = take(1);
        Self { tag, k, alpha, n_alpha, beta, xi, epsilon, a, b, d, len: at }
    }

    /// `true` for slots holding a non-negative coefficient.
    pub fn coefficient_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len];
        mask[self.alpha..self.alpha + self.n_alpha].iter_mut().for_each(|m| *m = true);
        if let Some(b) = self.beta {
            mask[b..b + self.k].iter_mut().for_each(|m| *m = true);
        }
        if let Some(x) = self.xi {
            mask[x] = true;
        }
        mask[self.epsilon] = true;
        mask
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.len];
        for i in 0..self.n_alpha {
            names[self.alpha + i] = format!("alpha[{i}]");
        }
        for k in 0..self.k {
            names[self.a + k] = format!("a[{k}]");
            if let Some(b) = self.beta {
                names[b + k] = format!("beta[{k}]");
            }
            if let Some(b) = self.b {
                names[b + k] = format!("b[{k}]");
            }
        }
        if let Some(x) = self.xi {
            names[x] = "xi".into();
        }
        names[self.epsilon] = "epsilon".into();
        names[self.d] = "d".into();
        names
    }
}

/// Coefficients and exponents of one parametric form.
///
/// Groups a form does not use are `None` and are omitted from JSON, so the
/// form can be recovered from the file alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "RawParams<T>")]
pub struct Params<T = f64> {
    pub form: FormTag,
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: Vec<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<T>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<T>,
    pub epsilon: T,
    pub a: Vec<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<T>>,
    pub d: T,
}

#[derive(Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawParams<T> {
    form: FormTag,
    #[serde(rename = "K")]
    k: usize,
    alpha: Vec<T>,
    beta: Option<Vec<T>>,
    xi: Option<T>,
    epsilon: T,
    a: Vec<T>,
    b: Option<Vec<T>>,
    d: T,
}

impl<T: Scalar> TryFrom<RawParams<T>> for Params<T> {
    type Error = Error;

    fn try_from(r: RawParams<T>) -> Result<Self> {
        let p = Params { form: r.form, k: r.k, alpha: r.alpha, beta: r.beta, xi: r.xi, epsilon: r.epsilon, a: r.a, b: r.b, d: r.d };
        p.validate()?;
        Ok(p)
    }
}

impl<T: Scalar> Params<T> {
    /// All coefficients and exponents zero, laid out for `form`.
    pub fn zeros(form: ParametricForm) -> Self {
        Self::from_flat(form, &vec![T::zero(); form.num_params()]).expect("length matches layout")
    }

    pub fn form(&self) -> ParametricForm {
        ParametricForm { tag: self.form, k: self.k }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.form, self.k)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        if k == 0 || k > MAX_K {
            return Err(Error::Layout(format!("K must be between 1 and {MAX_K}")));
        }
        let n_alpha = if self.form == FormTag::Mult { 1 } else { k };
        if self.alpha.len() != n_alpha {
            return Err(Error::Layout(format!("{} expects {n_alpha} alpha, got {}", self.form, self.alpha.len())));
        }
        if self.a.len() != k {
            return Err(Error::Layout(format!("expected {k} exponents a, got {}", self.a.len())));
        }
        let beta_ok = match (&self.beta, self.form.has_beta()) {
            (Some(v), true) => v.len() == k,
            (None, false) => true,
            _ => false,
        };
        let b_ok = match (&self.b, self.form.has_beta()) {
            (Some(v), true) => v.len() == k,
            (None, false) => true,
            _ => false,
        };
        if !beta_ok || !b_ok {
            return Err(Error::Layout(format!("{} interaction terms must be {}", self.form, if self.form.has_beta() { "present with length K" } else { "absent" })));
        }
        if self.xi.is_some() != self.form.has_xi() {
            return Err(Error::Layout(format!("{} xi must be {}", self.form, if self.form.has_xi() { "present" } else { "absent" })));
        }
        let flat = self.to_flat();
        let mask = self.layout().coefficient_mask();
        for ((v, is_coef), name) in flat.iter().zip(&mask).zip(self.layout().names()) {
            if !v.is_finite() {
                return Err(invalid(format!("parameter {name} is not finite")));
            }
            if *is_coef && *v < T::zero() {
                return Err(invalid(format!("coefficient {name} is negative")));
            }
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.layout().len);
        out.extend_from_slice(&self.alpha);
        if let Some(beta) = &self.beta {
            out.extend_from_slice(beta);
        }
        if let Some(xi) = self.xi {
            out.push(xi);
        }
        out.push(self.epsilon);
        out.extend_from_slice(&self.a);
        if let Some(b) = &self.b {
            out.extend_from_slice(b);
        }
        out.push(self.d);
        out
    }

    pub fn from_flat(form: ParametricForm, flat: &[T]) -> Result<Self> {
        let l = form.layout();
        if flat.len() != l.len {
            return Err(Error::Layout(format!("{form} has {} parameters, got {}", l.len, flat.len())));
        }
        let k = form.k;
        Ok(Self {
            form: form.tag,
            k,
            alpha: flat[l.alpha..l.alpha + l.n_alpha].to_vec(),
            beta: l.beta.map(|i| flat[i..i + k].to_vec()),
            xi: l.xi.map(|i| flat[i]),
            epsilon: flat[l.epsilon],
            a: flat[l.a..l.a + k].to_vec(),
            b: l.b.map(|i| flat[i..i + k].to_vec()),
            d: flat[l.d],
        })
    }

    fn check_point(&self, factors: &[T]) -> Result<()> {
        if factors.len() != self.k {
            return Err(Error::Layout(format!("model has K={} factors, point has {}", self.k, factors.len())));
        }
        Ok(())
    }

    /// Linear-space prediction at raw factor values.
    pub fn eval(&self, factors: &[T], n: T) -> Result<T> {
        self.check_point(factors)?;
        let n_d = n.powf(-self.d);
        let mut f = self.epsilon;
        match self.form {
            FormTag::Mult => {
                let prod = factors.iter().zip(&self.a).fold(T::one(), |acc, (&x, &a)| acc * x.powf(-a));
                f = f + self.alpha[0] * prod * n_d;
            }
            _ => {
                for k in 0..self.k {
                    f = f + self.alpha[k] * factors[k].powf(-self.a[k]);
                }
                if let (Some(beta), Some(b)) = (&self.beta, &self.b) {
                    for k in 0..self.k {
                        f = f + beta[k] * factors[k].powf(b[k]) * n_d;
                    }
                }
                if let Some(xi) = self.xi {
                    f = f + xi * n_d;
                }
            }
        }
        Ok(f)
    }

    /// Log of the prediction, and optionally its gradient with respect to the
    /// flat parameter vector.
    ///
    /// Every additive term is carried as a log so that large factor values
    /// with large exponents neither overflow nor underflow before the sum.
    pub fn eval_log(&self, factors: &[T], n: T, grad: Option<&mut [T]>) -> Result<T> {
        self.check_point(factors)?;
        let k = self.k;
        let ln_n = n.ln();
        let mut lx = [T::zero(); MAX_K];
        for (l, &x) in lx.iter_mut().zip(factors) {
            *l = x.ln();
        }
        let lx = &lx[..k];
        let log_or_neg_inf = |c: T| if c > T::zero() { c.ln() } else { T::neg_infinity() };

        // (log term, slot of the coefficient) for every additive term.
        let l = self.layout();
        let mut buf = [T::zero(); 2 * MAX_K + 2];
        let mut len = 0;
        let mut push = |t: T| {
            buf[len] = t;
            len += 1;
        };
        match self.form {
            FormTag::Mult => {
                let s = lx.iter().zip(&self.a).fold(T::zero(), |acc, (&lx, &a)| acc - a * lx);
                push(log_or_neg_inf(self.alpha[0]) + s - self.d * ln_n);
            }
            _ => {
                for i in 0..k {
                    push(log_or_neg_inf(self.alpha[i]) - self.a[i] * lx[i]);
                }
                if let (Some(beta), Some(b)) = (&self.beta, &self.b) {
                    for i in 0..k {
                        push(log_or_neg_inf(beta[i]) + b[i] * lx[i] - self.d * ln_n);
                    }
                }
                if let Some(xi) = self.xi {
                    push(log_or_neg_inf(xi) - self.d * ln_n);
                }
            }
        }
        push(log_or_neg_inf(self.epsilon));

        let terms = &buf[..len];
        let log_f = log_sum_exp(terms)?;
        let Some(g) = grad else { return Ok(log_f) };
        if g.len() != l.len {
            return Err(Error::Layout(format!("gradient buffer has {} slots, layout needs {}", g.len(), l.len)));
        }
        let share = |t: T| (t - log_f).exp();
        let mut d_grad = T::zero();
        match self.form {
            FormTag::Mult => {
                let s = lx.iter().zip(&self.a).fold(T::zero(), |acc, (&lx, &a)| acc - a * lx) - self.d * ln_n;
                let w = share(terms[0]);
                g[l.alpha] = (s - log_f).exp();
                for i in 0..k {
                    g[l.a + i] = -lx[i] * w;
                }
                d_grad = d_grad - ln_n * w;
            }
            _ => {
                for i in 0..k {
                    g[l.alpha + i] = (-self.a[i] * lx[i] - log_f).exp();
                    g[l.a + i] = -lx[i] * share(terms[i]);
                }
                let mut next = k;
                if let (Some(bi), Some(bx), Some(b)) = (l.beta, l.b, &self.b) {
                    for i in 0..k {
                        let w = share(terms[next + i]);
                        g[bi + i] = (b[i] * lx[i] - self.d * ln_n - log_f).exp();
                        g[bx + i] = lx[i] * w;
                        d_grad = d_grad - ln_n * w;
                    }
                    next += k;
                }
                if let Some(xi) = l.xi {
                    let w = share(terms[next]);
                    g[xi] = (-self.d * ln_n - log_f).exp();
                    d_grad = d_grad - ln_n * w;
                }
            }
        }
        g[l.epsilon] = (-log_f).exp();
        g[l.d] = d_grad;
        Ok(log_f)
    }

    /// `β_k x^b_k + ξ`: the coefficient on `n^-d` contributed at factor value
    /// `x`, with ξ taken as zero for `add_interact_s`.
    pub fn reducible_data_coefficient(&self, x: T, k: usize) -> Result<T> {
        let (Some(beta), Some(b)) = (&self.beta, &self.b) else {
            return Err(invalid(format!("{} has no interaction terms", self.form)));
        };
        if k >= self.k {
            return Err(invalid(format!("factor index {k} out of range for K={}", self.k)));
        }
        Ok(beta[k] * x.powf(b[k]) + self.xi.unwrap_or_else(T::zero))
    }
}

/// Stable `ln Σ exp(t)`; `-inf` terms contribute nothing.
pub fn log_sum_exp<T: Scalar>(terms: &[T]) -> Result<T> {
    let m = terms.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return Err(Error::ZeroPrediction);
    }
    if !m.is_finite() {
        return Ok(m);
    }
    let s = terms.iter().fold(T::zero(), |acc, &t| acc + (t - m).exp());
    Ok(m + s.ln())
}

/// A scaling-factor vector and data size at which a model is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EvalPoint<T = f64> {
    pub factors: Vec<T>,
    pub n: T,
}

impl<T: Scalar> EvalPoint<T> {
    pub fn new(factors: Vec<T>, n: T) -> Result<Self> {
        let p = Self { factors, n };
        p.validate()?;
        Ok(p)
    }

    pub fn single(x: T, n: T) -> Result<Self> {
        Self::new(vec![x], n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(invalid("evaluation point has no factors"));
        }
        if !self.factors.iter().all(|&x| x > T::zero() && x.is_finite()) || !(self.n > T::zero() && self.n.is_finite()) {
            return Err(invalid("evaluation point components must be positive and finite"));
        }
        Ok(())
    }
}

fn check_form<T: Scalar>(form: &ParametricForm, theta: &Params<T>) -> Result<()> {
    if theta.form() != *form {
        return Err(Error::Layout(format!("parameters are {} but form is {form}", theta.form())));
    }
    Ok(())
}

/// Predicted error of `theta` at `p`.
pub fn evaluate<T: Scalar>(form: &ParametricForm, theta: &Params<T>, p: &EvalPoint<T>) -> Result<T> {
    check_form(form, theta)?;
    theta.eval(&p.factors, p.n)
}

/// Log of the predicted error, computed without leaving log space.
pub fn evaluate_log<T: Scalar>(form: &ParametricForm, theta: &Params<T>, p: &EvalPoint<T>) -> Result<T> {
    check_form(form, theta)?;
    theta.eval_log(&p.factors, p.n, None)
}

/// Gradient of the log prediction with respect to the flat parameter vector.
pub fn gradient<T: Scalar>(form: &ParametricForm, theta: &Params<T>, p: &EvalPoint<T>) -> Result<Vec<T>> {
    check_form(form, theta)?;
    let mut g = vec![T::zero(); form.num_params()];
    theta.eval_log(&p.factors, p.n, Some(&mut g))?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn form(tag: FormTag, k: usize) -> ParametricForm {
        ParametricForm::new(tag, k).unwrap()
    }

    fn k1_interact() -> Params<f64> {
        Params {
            form: FormTag::AddInteract,
            k: 1,
            alpha: vec![2.0],
            beta: Some(vec![1.0]),
            xi: Some(1.0),
            epsilon: 0.5,
            a: vec![1.0],
            b: Some(vec![0.0]),
            d: 0.5,
        }
    }

    #[test]
    fn layout_sizes() {
        assert_eq!(form(FormTag::Mult, 3).num_params(), 6);
        assert_eq!(form(FormTag::Add, 3).num_params(), 9);
        assert_eq!(form(FormTag::AddInteractS, 3).num_params(), 14);
        assert_eq!(form(FormTag::AddInteract, 3).num_params(), 15);
        assert_eq!(form(FormTag::AddInteract, 1).num_params(), 7);
        let l = form(FormTag::AddInteract, 2).layout();
        let mask = l.coefficient_mask();
        assert_eq!(mask, vec![true, true, true, true, true, true, false, false, false, false, false]);
    }

    #[test]
    fn epsilon_only() {
        let f = form(FormTag::AddInteract, 3);
        let mut theta = Params::<f64>::zeros(f);
        theta.epsilon = 7.0;
        let p = EvalPoint::new(vec![7.5e9, 32.0, 196.0], 1e6).unwrap();
        assert_eq!(evaluate(&f, &theta, &p).unwrap(), 7.0);
        assert_relative_eq!(evaluate_log(&f, &theta, &p).unwrap(), 7f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn hand_examples() {
        let f = form(FormTag::Mult, 3);
        let mut theta = Params::<f64>::zeros(f);
        theta.alpha = vec![10.0];
        theta.a = vec![1.0, 0.0, 0.0];
        theta.d = 1.0;
        let p = EvalPoint::new(vec![2.0, 3.0, 4.0], 5.0).unwrap();
        assert_relative_eq!(evaluate(&f, &theta, &p).unwrap(), 1.0, max_relative = 1e-15);

        let theta = k1_interact();
        let p = EvalPoint::single(2.0, 4.0).unwrap();
        assert_relative_eq!(theta.eval(&p.factors, p.n).unwrap(), 2.5, max_relative = 1e-15);
        assert_relative_eq!(theta.eval_log(&p.factors, p.n, None).unwrap(), 2.5f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn log_of_unit_is_zero() {
        let f = form(FormTag::Add, 1);
        let mut theta = Params::<f64>::zeros(f);
        theta.epsilon = 1.0;
        assert_eq!(theta.eval_log(&[3.0], 2.0, None).unwrap(), 0.0);
    }

    #[test]
    fn all_zero_terms_rejected() {
        let f = form(FormTag::Add, 2);
        let theta = Params::<f64>::zeros(f);
        assert!(matches!(theta.eval_log(&[1.0, 2.0], 3.0, None), Err(Error::ZeroPrediction)));
    }

    #[test]
    fn extreme_exponents_stay_finite() {
        let f = form(FormTag::AddInteract, 1);
        let mut theta = Params::<f64>::zeros(f);
        theta.alpha = vec![1e-3];
        theta.a = vec![0.9];
        theta.beta = Some(vec![1e3]);
        theta.b = Some(vec![30.0]);
        theta.d = 0.9;
        theta.xi = Some(0.0);
        for x in [1e10, 1e-10] {
            let v = theta.eval_log(&[x], 1e10, None).unwrap();
            assert!(v.is_finite(), "x={x}: {v}");
        }
        // f32 with a huge product that overflows in linear space
        let mut t32 = Params::<f32>::zeros(form(FormTag::Mult, 1));
        t32.alpha = vec![1e30];
        t32.a = vec![-5.0];
        let v = t32.eval_log(&[1e10], 1.0, None).unwrap();
        assert!(v.is_finite());
        assert!(t32.eval(&[1e10], 1.0).unwrap().is_infinite());
    }

    #[test]
    fn simple_gradients() {
        let theta = k1_interact();
        let g = gradient(&theta.form(), &theta, &EvalPoint::single(2.0, 4.0).unwrap()).unwrap();
        let l = theta.layout();
        assert_relative_eq!(g[l.epsilon], 1.0 / 2.5, max_relative = 1e-14);
        // df/dalpha = x^-a
        assert_relative_eq!(g[l.alpha] * 2.5, 0.5, max_relative = 1e-14);
    }

    #[test]
    fn mismatched_layout() {
        let theta = k1_interact();
        assert!(evaluate(&form(FormTag::Add, 1), &theta, &EvalPoint::single(1.0, 1.0).unwrap()).is_err());
        assert!(theta.eval(&[1.0, 2.0], 1.0).is_err());
        let mut bad = theta.clone();
        bad.xi = None;
        assert!(bad.validate().is_err());
        let mut neg = theta;
        neg.alpha[0] = -1.0;
        assert!(neg.validate().is_err());
    }

    #[test]
    fn reducible_coefficient_examples() {
        let mut theta = k1_interact();
        theta.beta = Some(vec![1.0]);
        theta.b = Some(vec![1.0]);
        theta.xi = Some(0.0);
        assert_eq!(theta.reducible_data_coefficient(4.0, 0).unwrap(), 4.0);
        theta.b = Some(vec![0.0]);
        theta.xi = Some(0.25);
        assert_eq!(theta.reducible_data_coefficient(123.0, 0).unwrap(), 1.25);
        theta.beta = Some(vec![2.0]);
        theta.b = Some(vec![0.5]);
        theta.xi = Some(1.0);
        assert_eq!(theta.reducible_data_coefficient(9.0, 0).unwrap(), 7.0);
        let add = Params::<f64>::zeros(form(FormTag::Add, 1));
        assert!(add.reducible_data_coefficient(9.0, 0).is_err());
        assert!(theta.reducible_data_coefficient(9.0, 1).is_err());
    }

    #[test]
    fn json_omits_absent_groups() {
        let mut theta = Params::<f64>::zeros(form(FormTag::Add, 3));
        theta.epsilon = 1.0;
        let s = serde_json::to_string(&theta).unwrap();
        assert!(s.contains("\"form\":\"add\"") && s.contains("\"K\":3"));
        assert!(!s.contains("beta") && !s.contains("\"b\""));
        let back: Params<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, theta);
        // mult with an xi present does not parse
        let bad = r#"{"form":"mult","K":1,"alpha":[1],"xi":1,"epsilon":0,"a":[0],"d":0}"#;
        assert!(serde_json::from_str::<Params<f64>>(bad).is_err());
    }

    fn arb_params(tag: FormTag, k: usize) -> impl Strategy<Value = Params<f64>> {
        let f = ParametricForm::new(tag, k).unwrap();
        let mask = f.layout().coefficient_mask();
        let parts: Vec<BoxedStrategy<f64>> = mask
            .into_iter()
            .map(|c| if c { (0.0..30.0).boxed() } else { (-1.0..1.0).boxed() })
            .collect();
        parts.prop_map(move |v| Params::from_flat(f, &v).unwrap())
    }

    proptest! {
        #[test]
        fn nesting_of_forms(
            theta in arb_params(FormTag::AddInteract, 3),
            x in proptest::collection::vec(1.0..200.0f64, 3),
            n in 0.1..10.0f64,
        ) {
            let mut no_beta = theta.clone();
            no_beta.beta = Some(vec![0.0; 3]);
            let add = Params { form: FormTag::Add, beta: None, b: None, ..theta.clone() };
            prop_assert_eq!(no_beta.eval(&x, n).unwrap(), add.eval(&x, n).unwrap());

            let mut no_xi = theta.clone();
            no_xi.xi = Some(0.0);
            let s = Params { form: FormTag::AddInteractS, xi: None, ..theta.clone() };
            prop_assert_eq!(no_xi.eval(&x, n).unwrap(), s.eval(&x, n).unwrap());
        }

        #[test]
        fn log_matches_linear(
            tag in prop::sample::select(FormTag::ALL.to_vec()),
            seed in any::<u64>(),
        ) {
            let f = ParametricForm::new(tag, 3).unwrap();
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            use rand::Rng;
            let mask = f.layout().coefficient_mask();
            let flat: Vec<f64> = mask.iter().map(|&c| if c { rng.random_range(0.0..30.0) } else { rng.random_range(-1.0..1.0) }).collect();
            let theta = Params::from_flat(f, &flat).unwrap();
            let x = [rng.random_range(1.0..10.0), rng.random_range(1.0..128.0), rng.random_range(1.0..784.0)];
            let n = rng.random_range(0.1..10.0);
            let lin = theta.eval(&x, n).unwrap();
            let lg = theta.eval_log(&x, n, None).unwrap();
            prop_assert!((lg - lin.ln()).abs() <= 1e-12 * lin.ln().abs().max(1.0));
        }

        #[test]
        fn data_coefficient_monotone_in_x(
            beta in 0.01..10.0f64, b in 0.01..2.0f64, xi in 0.0..5.0f64,
            x1 in 1.0..100.0f64, dx in 0.5..100.0f64,
        ) {
            let mut theta = k1_interact();
            theta.beta = Some(vec![beta]);
            theta.xi = Some(xi);
            theta.b = Some(vec![b]);
            let lo = theta.reducible_data_coefficient(x1, 0).unwrap();
            let hi = theta.reducible_data_coefficient(x1 + dx, 0).unwrap();
            prop_assert!(hi > lo);
            theta.b = Some(vec![-b]);
            let lo = theta.reducible_data_coefficient(x1, 0).unwrap();
            let hi = theta.reducible_data_coefficient(x1 + dx, 0).unwrap();
            prop_assert!(hi < lo);
        }

        #[test]
        fn data_slope_steeper_for_larger_x(
            beta in 0.1..10.0f64, b in 0.05..2.0f64, d in 0.05..1.0f64,
            x1 in 1.0..100.0f64, dx in 1.0..100.0f64, n in 0.5..10.0f64,
        ) {
            let mut theta = k1_interact();
            theta.beta = Some(vec![beta]);
            theta.b = Some(vec![b]);
            theta.d = d;
            // slope from the coefficient identity and from a central difference of f
            let slope = |x: f64| -d * theta.reducible_data_coefficient(x, 0).unwrap() * n.powf(-d - 1.0);
            let h = 1e-6 * n;
            let fd = |x: f64| (theta.eval(&[x], n + h).unwrap() - theta.eval(&[x], n - h).unwrap()) / (2.0 * h);
            prop_assert!((slope(x1) - fd(x1)).abs() <= 1e-5 * slope(x1).abs().max(1e-3));
            prop_assert!(slope(x1 + dx).abs() > slope(x1).abs());
        }

        #[test]
        fn decreasing_in_factors_and_data(
            alpha in proptest::collection::vec(0.1..30.0f64, 3),
            a in proptest::collection::vec(0.05..1.0f64, 3),
            xi in 0.1..30.0f64, d in 0.05..1.0f64,
            x in proptest::collection::vec(1.0..100.0f64, 3),
            k in 0usize..3, dx in 0.5..50.0f64, dn in 0.1..5.0f64, n in 0.1..10.0f64,
        ) {
            let theta = Params { form: FormTag::Add, k: 3, alpha, beta: None, xi: Some(xi), epsilon: 1.0, a, b: None, d };
            let base = theta.eval(&x, n).unwrap();
            let mut bigger = x.clone();
            bigger[k] += dx;
            prop_assert!(theta.eval(&bigger, n).unwrap() < base);
            prop_assert!(theta.eval(&x, n + dn).unwrap() < base);
        }
    }
}
