//! Interpolation-free recombining-free trees: every node carries its own
//! state, so the backward recursion involves no grid error at all.
//!
//! [`solve_dpp_tree`] runs the same min-over-controls / sup-over-volatility
//! recursion as the grid lattice. [`brute_force_value`] builds the full game
//! tree explicitly and evaluates it independently; [`strategy_enumeration_value`]
//! enumerates every adapted control and volatility strategy on very shallow
//! trees as a literal inf-sup cross-check.

use crate::error::{Error, Result};
use crate::lattice::driver_step;
use crate::problem::{control_points, ControlProblem};
use crate::scalar::Scalar;

/// Upper bound on the number of leaf evaluations in a tree recursion.
pub const MAX_TREE_LEAVES: f64 = 5e7;
pub const MAX_BRUTE_FORCE_DEPTH: usize = 4;
pub const MAX_BRUTE_FORCE_CONTROLS: usize = 3;

/// Evaluation of the backward recursion on an explicit (non-recombining) tree.
pub struct TreeRecursion<'a, S> {
    pub problem: &'a ControlProblem<S>,
    pub controls: &'a [S],
    pub levels: &'a [S],
    pub t0: S,
    pub delta: S,
    pub steps: usize,
    /// Terminal data as a function of state.
    pub terminal: &'a (dyn Fn(S) -> Result<S> + Sync),
}

impl<S: Scalar> TreeRecursion<'_, S> {
    fn check_size(&self) -> Result<()> {
        let branching = self.controls.len() * self.levels.len() * 2;
        let leaves = (branching as f64).powi(self.steps as i32);
        if self.controls.is_empty() || self.levels.is_empty() || leaves > MAX_TREE_LEAVES {
            return Err(Error::DepthTooLarge {
                depth: self.steps,
                branching,
            });
        }
        Ok(())
    }

    pub fn value(&self, x0: S) -> Result<S> {
        self.check_size()?;
        if !(self.delta > S::zero()) {
            return Err(Error::NonPositiveStep(self.delta.as_f64()));
        }
        self.node(0, x0)
    }

    fn node(&self, k: usize, x: S) -> Result<S> {
        if k == self.steps {
            return (self.terminal)(x);
        }
        let p = self.problem;
        let t = self.t0 + self.delta * S::lit(k as f64);
        let sqrt_delta = self.delta.sqrt();
        let mut best_u = S::infinity();
        for &u in self.controls {
            let b = p.drift(t, x, u)?;
            let h = p.qv_drift(t, x, u)?;
            let s = p.vol(t, x, u)?;
            let mut best_q = S::neg_infinity();
            for &q in self.levels {
                let q2_delta = q * q * self.delta;
                let center = x + b * self.delta + h * q2_delta;
                let spread = s * q * sqrt_delta;
                let (xp, xm) = (center + spread, center - spread);
                let yp = self.node(k + 1, xp)?;
                let ym = self.node(k + 1, xm)?;
                let m = S::half() * (yp + ym);
                let zeta = if xp != xm { s * (yp - ym) / (xp - xm) } else { S::zero() };
                let v = driver_step(p, t, x, u, m, zeta, self.delta, q2_delta)?;
                best_q = best_q.max(v);
            }
            best_u = best_u.min(best_q);
        }
        Ok(best_u)
    }
}

/// Tree-mode DPP value at `(0, x0)` with `steps` steps over `[0, T]`, the
/// given control grid and volatility levels.
pub fn solve_dpp_tree<S: Scalar>(
    p: &ControlProblem<S>,
    x0: S,
    steps: usize,
    controls: &[S],
    levels: &[S],
) -> Result<S> {
    if steps < 1 {
        return Err(Error::Config("tree needs at least one step".into()));
    }
    let terminal = |x: S| p.terminal(x);
    TreeRecursion {
        problem: p,
        controls,
        levels,
        t0: S::zero(),
        delta: p.horizon / S::lit(steps as f64),
        steps,
        terminal: &terminal,
    }
    .value(x0)
}

fn check_brute_force(steps: usize, n_u_bf: usize, n_levels: usize) -> Result<()> {
    if steps == 0 || steps > MAX_BRUTE_FORCE_DEPTH || n_u_bf == 0 || n_u_bf > MAX_BRUTE_FORCE_CONTROLS {
        return Err(Error::DepthTooLarge {
            depth: steps,
            branching: n_u_bf * n_levels * 2,
        });
    }
    Ok(())
}

/// Brute-force game value with endpoint volatilities and `n_u_bf` controls
/// spread over `[u_min, u_max]`; see [`brute_force_value_with`].
pub fn brute_force_value<S: Scalar>(p: &ControlProblem<S>, x0: S, steps: usize, n_u_bf: usize) -> Result<S> {
    let levels = p.gamma.scalar_levels(2)?;
    brute_force_value_with(p, x0, steps, n_u_bf, &levels)
}

struct Move {
    q: usize,
    plus: usize,
    minus: usize,
}

struct GameNode<S> {
    k: usize,
    x: S,
    /// `moves[u]` lists the children for control index `u`, one per level.
    moves: Vec<Vec<Move>>,
}

/// Builds the complete game tree (every control, every volatility level, both
/// signs) forward from `x0`, then evaluates inf over controls of sup over
/// volatility levels by backward induction over the stored arena. Controls
/// observe the full history, including realised volatility, so the
/// backward-induction value equals the inf over adapted control strategies of
/// the sup over adapted volatility strategies.
pub fn brute_force_value_with<S: Scalar>(
    p: &ControlProblem<S>,
    x0: S,
    steps: usize,
    n_u_bf: usize,
    levels: &[S],
) -> Result<S> {
    check_brute_force(steps, n_u_bf, levels.len())?;
    let controls = control_points(p.u_min, p.u_max, n_u_bf);
    let delta = p.horizon / S::lit(steps as f64);
    let root_delta = delta.sqrt();

    let mut arena = vec![GameNode {
        k: 0,
        x: x0,
        moves: Vec::new(),
    }];
    let mut cursor = 0;
    while cursor < arena.len() {
        let (k, x) = (arena[cursor].k, arena[cursor].x);
        if k < steps {
            let t = delta * S::lit(k as f64);
            let mut moves = Vec::with_capacity(controls.len());
            for &u in &controls {
                let (b, h, s) = (p.drift(t, x, u)?, p.qv_drift(t, x, u)?, p.vol(t, x, u)?);
                let mut per_q = Vec::with_capacity(levels.len());
                for (qi, &q) in levels.iter().enumerate() {
                    let qv = q * q * delta;
                    let shock = s * q * root_delta;
                    let drift = b * delta + h * qv;
                    let plus = arena.len();
                    arena.push(GameNode {
                        k: k + 1,
                        x: x + drift + shock,
                        moves: Vec::new(),
                    });
                    arena.push(GameNode {
                        k: k + 1,
                        x: x + drift - shock,
                        moves: Vec::new(),
                    });
                    per_q.push(Move {
                        q: qi,
                        plus,
                        minus: plus + 1,
                    });
                }
                moves.push(per_q);
            }
            arena[cursor].moves = moves;
        }
        cursor += 1;
    }

    // Children always sit after their parent, so a reverse sweep sees them first.
    let mut value = vec![S::zero(); arena.len()];
    for idx in (0..arena.len()).rev() {
        let node = &arena[idx];
        if node.k == steps {
            value[idx] = p.terminal(node.x)?;
            continue;
        }
        let t = delta * S::lit(node.k as f64);
        let mut inf = S::infinity();
        for (ui, per_q) in node.moves.iter().enumerate() {
            let u = controls[ui];
            let s = p.vol(t, node.x, u)?;
            let mut sup = S::neg_infinity();
            for mv in per_q {
                let q = levels[mv.q];
                let (yp, ym) = (value[mv.plus], value[mv.minus]);
                let (xp, xm) = (arena[mv.plus].x, arena[mv.minus].x);
                let mean = (yp + ym) / S::two();
                let z = if xp == xm { S::zero() } else { s * (yp - ym) / (xp - xm) };
                let f = p.driver(t, node.x, mean, z, u)?;
                let g = p.qv_driver(t, node.x, mean, z, u)?;
                let y = mean + f * delta + g * (q * q * delta);
                if y > sup {
                    sup = y;
                }
            }
            if sup < inf {
                inf = sup;
            }
        }
        value[idx] = inf;
    }
    Ok(value[0])
}

/// Literal inf-sup over strategies: every assignment of a control to each
/// control history (past volatility indices and signs) and of a volatility
/// level to each sign history. Only feasible for depth ≤ 2.
pub fn strategy_enumeration_value<S: Scalar>(
    p: &ControlProblem<S>,
    x0: S,
    steps: usize,
    n_u_bf: usize,
    levels: &[S],
) -> Result<S> {
    let controls = control_points(p.u_min, p.u_max, n_u_bf);
    let (nu, nq) = (controls.len(), levels.len());
    let fan = 2 * nq;
    let control_histories: usize = (0..steps).map(|k| fan.pow(k as u32)).sum();
    let vol_histories: usize = (1usize << steps) - 1;
    let n_alpha = (nu as f64).powi(control_histories as i32);
    let n_beta = (nq as f64).powi(vol_histories as i32);
    if steps == 0 || n_alpha * n_beta > 1e7 {
        return Err(Error::DepthTooLarge {
            depth: steps,
            branching: nu * fan,
        });
    }
    let delta = p.horizon / S::lit(steps as f64);

    // Y at the node reached by the given histories, under strategies alpha, beta.
    #[allow(clippy::too_many_arguments)]
    fn eval<S: Scalar>(
        p: &ControlProblem<S>,
        controls: &[S],
        levels: &[S],
        alpha: &[usize],
        beta: &[usize],
        delta: S,
        steps: usize,
        k: usize,
        x: S,
        c_node: usize,
        v_node: usize,
    ) -> Result<S> {
        if k == steps {
            return p.terminal(x);
        }
        let t = delta * S::lit(k as f64);
        let u = controls[alpha[c_node]];
        let qi = beta[v_node];
        let q = levels[qi];
        let (b, h, s) = (p.drift(t, x, u)?, p.qv_drift(t, x, u)?, p.vol(t, x, u)?);
        let base = x + b * delta + h * q * q * delta;
        let shock = s * q * delta.sqrt();
        let fan = 2 * levels.len();
        let mut ys = [S::zero(); 2];
        let xs = [base + shock, base - shock];
        for (sign, y) in ys.iter_mut().enumerate() {
            let c_child = c_node * fan + 1 + qi * 2 + sign;
            let v_child = v_node * 2 + 1 + sign;
            *y = eval(p, controls, levels, alpha, beta, delta, steps, k + 1, xs[sign], c_child, v_child)?;
        }
        let m = S::half() * (ys[0] + ys[1]);
        let z = if xs[0] == xs[1] {
            S::zero()
        } else {
            s * (ys[0] - ys[1]) / (xs[0] - xs[1])
        };
        driver_step(p, t, x, u, m, z, delta, q * q * delta)
    }

    let mut alpha = vec![0usize; control_histories];
    let mut best = S::infinity();
    loop {
        let mut beta = vec![0usize; vol_histories];
        let mut worst = S::neg_infinity();
        loop {
            let y = eval(p, &controls, levels, &alpha, &beta, delta, steps, 0, x0, 0, 0)?;
            worst = worst.max(y);
            if !advance(&mut beta, nq) {
                break;
            }
        }
        best = best.min(worst);
        if !advance(&mut alpha, nu) {
            break;
        }
    }
    Ok(best)
}

/// Mixed-radix increment; false once every assignment has been visited.
fn advance(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}
