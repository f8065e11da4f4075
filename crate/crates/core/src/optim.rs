//! Box-constrained limited-memory BFGS.
//!
//! Iterates stay inside `[lower, upper]` by projection. Variables pinned at a
//! bound whose gradient pushes outward are frozen for the step, the two-loop
//! recursion runs over the remaining free variables, and an Armijo backtracking
//! search is done along the projected path.

use std::collections::VecDeque;

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Bounds<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> Bounds<T> {
    pub fn unbounded(dim: usize) -> Self {
        Self { lower: vec![T::neg_infinity(); dim], upper: vec![T::infinity(); dim] }
    }

    /// Lower bound of zero where `mask` is set, free elsewhere.
    pub fn nonnegative(mask: &[bool]) -> Self {
        Self {
            lower: mask.iter().map(|&m| if m { T::zero() } else { T::neg_infinity() }).collect(),
            upper: vec![T::infinity(); mask.len()],
        }
    }

    pub fn project(&self, x: &mut [T]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.max(lo).min(hi);
        }
    }

    fn dim(&self) -> usize {
        self.lower.len()
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsConfig<T> {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once the projected gradient's largest component is this small.
    pub grad_tolerance: T,
    /// Stop when the objective improved by less than this over `stagnation_window` iterations.
    pub stagnation_tolerance: T,
    pub stagnation_window: usize,
    pub armijo: T,
    pub max_backtracks: usize,
}

impl<T: Scalar> Default for LbfgsConfig<T> {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 1000,
            grad_tolerance: T::lit(1e-8),
            stagnation_tolerance: T::lit(1e-12),
            stagnation_window: 10,
            armijo: T::lit(1e-4),
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    Stagnation,
    MaxIterations,
    LineSearchFailed,
    NonFiniteStart,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::GradientTolerance | Termination::Stagnation)
    }
}

#[derive(Debug, Clone)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub initial_value: T,
    pub iterations: usize,
    pub termination: Termination,
}

impl<T> Minimum<T> {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T], free: &[bool]) -> T {
    a.iter()
        .zip(b)
        .zip(free)
        .fold(T::zero(), |acc, ((&x, &y), &f)| if f { acc + x * y } else { acc })
}

/// Minimize `objective` from `x0` within `bounds`.
///
/// `objective(x, grad)` returns the value and writes the gradient. A
/// non-finite value marks `x` as outside the domain; the line search backs
/// off from such points.
pub fn minimize<T, F>(mut objective: F, x0: &[T], bounds: &Bounds<T>, cfg: &LbfgsConfig<T>) -> Minimum<T>
where
    T: Scalar,
    F: FnMut(&[T], &mut [T]) -> T,
{
    let dim = x0.len();
    assert_eq!(bounds.dim(), dim, "bounds dimension");
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut g = vec![T::zero(); dim];
    let mut f = objective(&x, &mut g);
    let initial_value = f;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Minimum { x, value: f, initial_value, iterations: 0, termination: Termination::NonFiniteStart };
    }

    let mut history: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(cfg.memory);
    let mut recent: VecDeque<T> = VecDeque::with_capacity(cfg.stagnation_window + 1);
    recent.push_back(f);

    let mut free = vec![true; dim];
    let mut d = vec![T::zero(); dim];
    let mut alphas = vec![T::zero(); cfg.memory];
    let mut x_new = vec![T::zero(); dim];
    let mut g_new = vec![T::zero(); dim];

    let mut iterations = 0;
    let termination = loop {
        // projected gradient test
        let mut pg = T::zero();
        for i in 0..dim {
            let step = (x[i] - g[i]).max(bounds.lower[i]).min(bounds.upper[i]) - x[i];
            pg = pg.max(step.abs());
            free[i] = !((x[i] <= bounds.lower[i] && g[i] > T::zero()) || (x[i] >= bounds.upper[i] && g[i] < T::zero()));
        }
        if pg <= cfg.grad_tolerance {
            break Termination::GradientTolerance;
        }
        if iterations >= cfg.max_iterations {
            break Termination::MaxIterations;
        }

        let mut accepted = false;
        let mut f_accepted = f;
        for attempt in 0..2 {
            if attempt == 1 {
                history.clear();
            }
            // two-loop recursion on the free subspace
            for i in 0..dim {
                d[i] = if free[i] { g[i] } else { T::zero() };
            }
            for (j, (s, y, rho)) in history.iter().enumerate().rev() {
                let a = *rho * dot(s, &d, &free);
                alphas[j] = a;
                for i in 0..dim {
                    if free[i] {
                        d[i] = d[i] - a * y[i];
                    }
                }
            }
            let gamma = match history.back() {
                Some((s, y, _)) => {
                    let yy = dot(y, y, &free);
                    if yy > T::zero() { dot(s, y, &free) / yy } else { T::one() }
                }
                None => {
                    let norm = dot(&d, &d, &free).sqrt();
                    T::one() / norm.max(T::one())
                }
            };
            for v in d.iter_mut() {
                *v = *v * gamma;
            }
            for (j, (s, y, rho)) in history.iter().enumerate() {
                let b = *rho * dot(y, &d, &free);
                for i in 0..dim {
                    if free[i] {
                        d[i] = d[i] + (alphas[j] - b) * s[i];
                    }
                }
            }
            for v in d.iter_mut() {
                *v = -*v;
            }
            if dot(&d, &g, &free) >= T::zero() {
                continue;
            }

            let mut t = T::one();
            for _ in 0..cfg.max_backtracks {
                for i in 0..dim {
                    x_new[i] = x[i] + t * d[i];
                }
                bounds.project(&mut x_new);
                let mut decrease = T::zero();
                let mut moved = false;
                for i in 0..dim {
                    let step = x_new[i] - x[i];
                    moved |= step != T::zero();
                    decrease = decrease + g[i] * step;
                }
                if !moved {
                    break;
                }
                let f_new = objective(&x_new, &mut g_new);
                if f_new.is_finite() && g_new.iter().all(|v| v.is_finite()) && f_new <= f + cfg.armijo * decrease {
                    accepted = true;
                    f_accepted = f_new;
                    break;
                }
                t = t * T::lit(0.5);
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            break Termination::LineSearchFailed;
        }

        let s: Vec<T> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let all = vec![true; dim];
        let sy = dot(&s, &y, &all);
        if sy > T::epsilon() * dot(&y, &y, &all) {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, T::one() / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_accepted;
        iterations += 1;

        recent.push_back(f);
        if recent.len() > cfg.stagnation_window {
            let old = recent.pop_front().unwrap();
            if old - f < cfg.stagnation_tolerance {
                break Termination::Stagnation;
            }
        }
    };

    Minimum { x, value: f, initial_value, iterations, termination }
}
