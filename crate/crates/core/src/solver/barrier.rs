//! Log-barrier interior-point method for [`ConvexSubproblem`].
//!
//! Each covariance is stored through a Cholesky factor `X = L·Lᴴ` and Newton
//! steps are taken in the scaled coordinates `X(Δ) = L·(I + Δ)·Lᴴ`, where the
//! log-det barrier has identity Hessian. All SNRs and per-BS powers are
//! linear in `Δ`, so every other term contributes rank-one curvature. Terms
//! confined to one block are added to that block's dense Hessian; terms that
//! couple blocks or scalars are eliminated with the Woodbury identity.
//!
//! Internally bandwidth is in MHz and rates in Mbit/s.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{infeasible, BeamformMatrix, ConvexSubproblem, FeasibilityReport, SnrCase, SolveResult, SolverOptions};
use super::FEASIBILITY_TOLERANCE;
use crate::error::{Error, Result};
use crate::linalg::{hmat, hvec, hvec_outer, CMatrix, CVector, C64};
use crate::phy::{self, MIN_URLLC_SNR};

const LN2: f64 = std::f64::consts::LN_2;
const MHZ: f64 = 1e6;
/// Normalized slack that phase one aims for before handing over.
const PHASE_ONE_MARGIN: f64 = 0.05;
const NEWTON_TOL: f64 = 1e-9;
const BARRIER_GROWTH: f64 = 100.0;

#[derive(Clone, Copy, Debug)]
enum Omega {
    Var(usize),
    Fixed(f64),
}

#[derive(Clone, Debug)]
enum Role {
    Embb { src: usize, rate: f64, omega: Omega },
    Urllc { src: usize, f: usize, bits: f64, q: f64 },
}

#[derive(Clone, Debug)]
struct Block {
    role: Role,
    weight: f64,
    chans: Vec<CVector>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Var {
    Y(usize, usize),
    P(usize, usize),
    Z(usize),
}

#[derive(Clone, Copy, Debug)]
enum Con {
    Qos { b: usize, c: usize },
    Slack { b: usize },
    MinSnr { b: usize },
    Power { j: usize },
    Bandwidth,
    Soc,
    Positive { z: usize },
    SFloor,
}

impl Con {
    fn relaxed(self) -> bool {
        matches!(self, Con::Qos { .. } | Con::Slack { .. } | Con::MinSnr { .. } | Con::Power { .. } | Con::Bandwidth)
    }

    fn barrier_weight(self) -> f64 {
        if matches!(self, Con::Soc) { 2.0 } else { 1.0 }
    }
}

struct Eval {
    g: f64,
    grad: Vec<(Var, f64)>,
    hess: Vec<(Var, f64)>,
}

#[derive(Clone, Debug)]
struct Feat {
    y: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
struct State {
    l: Vec<CMatrix>,
    z: Vec<f64>,
}

struct Geo {
    u: Vec<Vec<DVector<f64>>>,
    pv: Vec<Vec<DVector<f64>>>,
    feat: Feat,
}

/// Block-sparse vector over all variables.
#[derive(Clone)]
struct Sparse {
    blocks: Vec<(usize, DVector<f64>)>,
    z: DVector<f64>,
}

struct Model<'a> {
    prob: &'a ConvexSubproblem,
    n: usize,
    kant: usize,
    nbs: usize,
    blocks: Vec<Block>,
    /// Scalar count excluding the phase-one variable.
    nz: usize,
    omega_vars: Vec<usize>,
    tau: Option<usize>,
    phase_one: bool,
    w_avail: f64,
    mean: Vec<f64>,
    var: Vec<f64>,
    margin: f64,
    budgets: Vec<f64>,
    eta: f64,
    cons: Vec<Con>,
}

enum Setup<'a> {
    Model(Model<'a>),
    /// Nothing to optimize; carries whether the constant constraints hold.
    Trivial(bool),
}

impl<'a> Model<'a> {
    fn build(prob: &'a ConvexSubproblem) -> Result<Setup<'a>> {
        let n = prob.dim();
        let scale = 1.0 / prob.noise_floor_w.sqrt();
        let terms = prob.reservation_terms();
        let margin = prob.reservation_margin()?;
        let mut blocks = Vec::new();
        let mut nz = 0;
        let mut omega_vars = Vec::new();
        let mut fixed_total = 0.0;
        for (src, e) in prob.embb.iter().enumerate() {
            if !e.accepted {
                continue;
            }
            let omega = match e.fixed_bandwidth_hz {
                Some(w) => {
                    if w <= 0.0 {
                        return Ok(Setup::Trivial(false));
                    }
                    fixed_total += w / MHZ;
                    Omega::Fixed(w / MHZ)
                }
                None => {
                    omega_vars.push(nz);
                    nz += 1;
                    Omega::Var(nz - 1)
                }
            };
            blocks.push(Block {
                role: Role::Embb { src, rate: e.min_rate_bps / MHZ, omega },
                weight: 1.0,
                chans: e.channels.iter().map(|h| h * C64::new(scale, 0.0)).collect(),
            });
        }
        let mut mean = Vec::new();
        let mut var = Vec::new();
        for (src, u) in prob.urllc.iter().enumerate() {
            if !u.active {
                continue;
            }
            blocks.push(Block {
                role: Role::Urllc { src, f: nz, bits: u.packet_bits, q: phy::q_inverse(u.decode_error)? },
                weight: prob.priority_weight,
                chans: vec![&u.channel * C64::new(scale, 0.0)],
            });
            nz += 1;
            mean.push(terms[src].mean / MHZ);
            var.push(terms[src].var / (MHZ * MHZ));
        }
        let w_avail = prob.total_bandwidth_hz / MHZ - fixed_total;
        let has_urllc = !mean.is_empty();
        let tau = if has_urllc && margin > 0.0 && var.iter().any(|&v| v > 0.0) {
            nz += 1;
            Some(nz - 1)
        } else {
            None
        };
        if blocks.is_empty() {
            return Ok(Setup::Trivial(w_avail >= -1e-12));
        }
        if omega_vars.is_empty() && !has_urllc && w_avail < -1e-12 {
            return Ok(Setup::Trivial(false));
        }

        let mut cons = Vec::new();
        for (b, blk) in blocks.iter().enumerate() {
            match blk.role {
                Role::Embb { .. } => cons.extend((0..blk.chans.len()).map(|c| Con::Qos { b, c })),
                Role::Urllc { f, .. } => {
                    cons.push(Con::Slack { b });
                    cons.push(Con::Positive { z: f });
                    if prob.snr_case == SnrCase::Enforced {
                        cons.push(Con::MinSnr { b });
                    }
                }
            }
        }
        cons.extend((0..prob.num_bs).map(|j| Con::Power { j }));
        if !omega_vars.is_empty() || has_urllc {
            cons.push(Con::Bandwidth);
        }
        if tau.is_some() {
            cons.push(Con::Soc);
        }
        cons.extend(omega_vars.iter().map(|&z| Con::Positive { z }));

        Ok(Setup::Model(Model {
            prob,
            n,
            kant: prob.antennas_per_bs,
            nbs: prob.num_bs,
            blocks,
            nz,
            omega_vars,
            tau,
            phase_one: false,
            w_avail,
            mean,
            var,
            margin,
            budgets: prob.bs_power_budget_w.clone(),
            eta: prob.efficiency_coeff,
            cons,
        }))
    }

    fn d(&self) -> usize {
        self.n * self.n
    }

    fn nzt(&self) -> usize {
        self.nz + usize::from(self.phase_one)
    }

    fn s_index(&self) -> usize {
        self.nz
    }

    fn nu(&self) -> f64 {
        let mut nu = (self.blocks.len() * self.n) as f64;
        nu += self.cons.iter().map(|c| c.barrier_weight()).sum::<f64>();
        if self.phase_one {
            nu += 1.0;
        }
        nu
    }

    fn scale(&self, con: Con) -> f64 {
        match con {
            Con::MinSnr { .. } => MIN_URLLC_SNR,
            Con::Power { j } => self.budgets[j],
            Con::Bandwidth => self.prob.total_bandwidth_hz / MHZ,
            _ => 1.0,
        }
    }

    fn urllc_index(&self, b: usize) -> usize {
        // URLLC blocks follow eMBB blocks in the same order as `mean`/`var`.
        let first = self.blocks.iter().position(|x| matches!(x.role, Role::Urllc { .. })).unwrap_or(0);
        b - first
    }

    fn eval_raw(&self, con: Con, feat: &Feat, z: &[f64]) -> Option<Eval> {
        match con {
            Con::Qos { b, c } => {
                let y = feat.y[b][c];
                if y <= -1.0 {
                    return None;
                }
                let Role::Embb { rate, omega, .. } = self.blocks[b].role else { unreachable!() };
                let lg = y.ln_1p() / LN2;
                let dy = 1.0 / ((1.0 + y) * LN2);
                let hy = -dy / (1.0 + y);
                match omega {
                    Omega::Var(i) => {
                        let w = z[i];
                        if w <= 0.0 {
                            return None;
                        }
                        Some(Eval {
                            g: lg - rate / w,
                            grad: vec![(Var::Y(b, c), dy), (Var::Z(i), rate / (w * w))],
                            hess: vec![(Var::Y(b, c), hy), (Var::Z(i), -2.0 * rate / (w * w * w))],
                        })
                    }
                    Omega::Fixed(w) => Some(Eval {
                        g: lg - rate / w,
                        grad: vec![(Var::Y(b, c), dy)],
                        hess: vec![(Var::Y(b, c), hy)],
                    }),
                }
            }
            Con::Slack { b } => {
                let y = feat.y[b][0];
                let Role::Urllc { f, bits, q, .. } = self.blocks[b].role else { unreachable!() };
                let fv = z[f];
                if y <= -1.0 || fv <= 0.0 {
                    return None;
                }
                let sf = fv.sqrt();
                let psi = (bits + q * sf) / fv;
                let dpsi = -bits / (fv * fv) - 0.5 * q / (fv * sf);
                let d2psi = 2.0 * bits / (fv * fv * fv) + 0.75 * q / (fv * fv * sf);
                let dy = 1.0 / ((1.0 + y) * LN2);
                Some(Eval {
                    g: y.ln_1p() / LN2 - psi,
                    grad: vec![(Var::Y(b, 0), dy), (Var::Z(f), -dpsi)],
                    hess: vec![(Var::Y(b, 0), -dy / (1.0 + y)), (Var::Z(f), -d2psi)],
                })
            }
            Con::MinSnr { b } => Some(Eval { g: feat.y[b][0] - MIN_URLLC_SNR, grad: vec![(Var::Y(b, 0), 1.0)], hess: vec![] }),
            Con::Power { j } => {
                let used: f64 = feat.p.iter().map(|p| p[j]).sum();
                Some(Eval {
                    g: self.budgets[j] - used,
                    grad: (0..self.blocks.len()).map(|b| (Var::P(b, j), -1.0)).collect(),
                    hess: vec![],
                })
            }
            Con::Bandwidth => {
                let mut g = self.w_avail;
                let mut grad = Vec::new();
                for &i in &self.omega_vars {
                    g -= z[i];
                    grad.push((Var::Z(i), -1.0));
                }
                for (b, blk) in self.blocks.iter().enumerate() {
                    if let Role::Urllc { f, .. } = blk.role {
                        let a = self.mean[self.urllc_index(b)];
                        g -= a * z[f];
                        grad.push((Var::Z(f), -a));
                    }
                }
                if let Some(t) = self.tau {
                    g -= self.margin * z[t];
                    grad.push((Var::Z(t), -self.margin));
                }
                Some(Eval { g, grad, hess: vec![] })
            }
            Con::Soc => {
                let t = self.tau.expect("SOC without epigraph variable");
                let tv = z[t];
                if tv <= 0.0 {
                    return None;
                }
                let mut g = tv * tv;
                let mut grad = vec![(Var::Z(t), 2.0 * tv)];
                let mut hess = vec![(Var::Z(t), 2.0)];
                for (b, blk) in self.blocks.iter().enumerate() {
                    if let Role::Urllc { f, .. } = blk.role {
                        let c = self.var[self.urllc_index(b)];
                        g -= c * z[f] * z[f];
                        grad.push((Var::Z(f), -2.0 * c * z[f]));
                        hess.push((Var::Z(f), -2.0 * c));
                    }
                }
                Some(Eval { g, grad, hess })
            }
            Con::Positive { z: i } => Some(Eval { g: z[i], grad: vec![(Var::Z(i), 1.0)], hess: vec![] }),
            Con::SFloor => {
                let s = self.s_index();
                Some(Eval { g: z[s] + 1.0, grad: vec![(Var::Z(s), 1.0)], hess: vec![] })
            }
        }
    }

    fn eval(&self, con: Con, feat: &Feat, z: &[f64]) -> Option<Eval> {
        let mut e = self.eval_raw(con, feat, z)?;
        if self.phase_one && con.relaxed() {
            let k = 1.0 / self.scale(con);
            e.g = e.g * k + z[self.s_index()];
            for (_, v) in e.grad.iter_mut().chain(e.hess.iter_mut()) {
                *v *= k;
            }
            e.grad.push((Var::Z(self.s_index()), 1.0));
        }
        Some(e)
    }

    fn all_cons(&self) -> Vec<Con> {
        let mut cons = self.cons.clone();
        if self.phase_one {
            cons.push(Con::SFloor);
        }
        cons
    }

    /// Objective to minimize (before multiplying by `t`).
    fn f0(&self, feat: &Feat, z: &[f64]) -> f64 {
        if self.phase_one {
            return z[self.s_index()];
        }
        let mut v = 0.0;
        for (b, blk) in self.blocks.iter().enumerate() {
            let profit: f64 = feat.y[b].iter().map(|y| y.ln_1p()).sum();
            let power: f64 = feat.p[b].iter().sum();
            v += blk.weight * (-profit + self.eta * power);
        }
        v
    }

    fn geometry(&self, st: &State) -> Geo {
        let mut u = Vec::with_capacity(self.blocks.len());
        let mut pv = Vec::with_capacity(self.blocks.len());
        let mut y = Vec::with_capacity(self.blocks.len());
        let mut p = Vec::with_capacity(self.blocks.len());
        for (b, blk) in self.blocks.iter().enumerate() {
            let lh = st.l[b].adjoint();
            let mut ub = Vec::with_capacity(blk.chans.len());
            let mut yb = Vec::with_capacity(blk.chans.len());
            for h in &blk.chans {
                let w = &lh * h;
                yb.push(w.norm_squared());
                ub.push(hvec_outer(&w));
            }
            let mut pb = Vec::with_capacity(self.nbs);
            let mut pvb = Vec::with_capacity(self.nbs);
            for j in 0..self.nbs {
                let rows = st.l[b].rows(j * self.kant, self.kant);
                let m = rows.adjoint() * rows;
                pb.push((0..self.n).map(|k| m[(k, k)].re).sum());
                pvb.push(hvec(&m));
            }
            u.push(ub);
            y.push(yb);
            p.push(pb);
            pv.push(pvb);
        }
        Geo { u, pv, feat: Feat { y, p } }
    }

    /// Barrier value relative to the current log-det, `+∞` outside the domain.
    fn value(&self, t: f64, feat: &Feat, z: &[f64], logdet_delta: f64) -> f64 {
        let mut v = t * self.f0(feat, z) - logdet_delta;
        for con in self.all_cons() {
            match self.eval(con, feat, z) {
                Some(e) if e.g > 0.0 => v -= con.barrier_weight() * e.g.ln(),
                _ => return f64::INFINITY,
            }
        }
        v
    }

    fn sparse_from(&self, geo: &Geo, grad: &[(Var, f64)]) -> Sparse {
        let d = self.d();
        let mut blocks: Vec<(usize, DVector<f64>)> = Vec::new();
        let mut z = DVector::zeros(self.nzt());
        for &(var, coef) in grad {
            let (b, vec) = match var {
                Var::Y(b, c) => (b, &geo.u[b][c]),
                Var::P(b, j) => (b, &geo.pv[b][j]),
                Var::Z(i) => {
                    z[i] += coef;
                    continue;
                }
            };
            match blocks.iter_mut().find(|(k, _)| *k == b) {
                Some((_, acc)) => acc.axpy(coef, vec, 1.0),
                None => {
                    let mut acc = DVector::zeros(d);
                    acc.axpy(coef, vec, 1.0);
                    blocks.push((b, acc));
                }
            }
        }
        Sparse { blocks, z }
    }

    /// Newton direction in scaled coordinates, and the gradient.
    fn newton(&self, st: &State, geo: &Geo, t: f64) -> Result<(Vec<DVector<f64>>, DVector<f64>, f64)> {
        let d = self.d();
        let nb = self.blocks.len();
        let nzt = self.nzt();
        let mut cy: Vec<Vec<f64>> = geo.feat.y.iter().map(|v| vec![0.0; v.len()]).collect();
        let mut hy = cy.clone();
        let mut cp: Vec<Vec<f64>> = vec![vec![0.0; self.nbs]; nb];
        let mut gz = DVector::zeros(nzt);
        let mut hz = DMatrix::zeros(nzt, nzt);
        let mut inblock: Vec<(usize, DVector<f64>, f64)> = Vec::new();
        let mut globals: Vec<(Sparse, f64)> = Vec::new();

        if self.phase_one {
            gz[self.s_index()] += t;
        } else {
            for (b, blk) in self.blocks.iter().enumerate() {
                for (c, &y) in geo.feat.y[b].iter().enumerate() {
                    cy[b][c] -= t * blk.weight / (1.0 + y);
                    hy[b][c] += t * blk.weight / ((1.0 + y) * (1.0 + y));
                }
                for j in 0..self.nbs {
                    cp[b][j] += t * blk.weight * self.eta;
                }
            }
        }

        for con in self.all_cons() {
            let e = self
                .eval(con, &geo.feat, &st.z)
                .filter(|e| e.g > 0.0)
                .ok_or_else(|| Error::Numerical(format!("iterate left the domain of {con:?}")))?;
            let w = con.barrier_weight();
            let inv = w / e.g;
            for &(var, coef) in &e.grad {
                match var {
                    Var::Y(b, c) => cy[b][c] -= inv * coef,
                    Var::P(b, j) => cp[b][j] -= inv * coef,
                    Var::Z(i) => gz[i] -= inv * coef,
                }
            }
            for &(var, coef) in &e.hess {
                match var {
                    Var::Y(b, c) => hy[b][c] -= inv * coef,
                    Var::Z(i) => hz[(i, i)] -= inv * coef,
                    Var::P(..) => unreachable!("power features enter linearly"),
                }
            }
            let weight = w / (e.g * e.g);
            let sp = self.sparse_from(geo, &e.grad);
            let z_touched = sp.z.iter().any(|&v| v != 0.0);
            if !z_touched && sp.blocks.len() == 1 {
                let (b, v) = sp.blocks.into_iter().next().expect("one block");
                inblock.push((b, v, weight));
            } else if sp.blocks.is_empty() {
                hz.ger(weight, &sp.z, &sp.z, 1.0);
            } else {
                globals.push((sp, weight));
            }
        }

        // Assemble block gradients and Hessians.
        let mut grad_b = Vec::with_capacity(nb);
        let mut chol_b = Vec::with_capacity(nb);
        for b in 0..nb {
            let mut g = DVector::zeros(d);
            for k in 0..self.n {
                g[k] = -1.0;
            }
            let mut h = DMatrix::identity(d, d);
            for (c, u) in geo.u[b].iter().enumerate() {
                g.axpy(cy[b][c], u, 1.0);
                if hy[b][c] != 0.0 {
                    h.ger(hy[b][c], u, u, 1.0);
                }
            }
            for j in 0..self.nbs {
                g.axpy(cp[b][j], &geo.pv[b][j], 1.0);
            }
            for (k, v, w) in &inblock {
                if *k == b {
                    h.ger(*w, v, v, 1.0);
                }
            }
            grad_b.push(g);
            chol_b.push(Cholesky::new(h).ok_or_else(|| Error::Numerical("block Hessian not positive definite".into()))?);
        }
        let chol_z = if nzt > 0 {
            Some(Cholesky::new(hz).ok_or_else(|| Error::Numerical("scalar Hessian not positive definite".into()))?)
        } else {
            None
        };

        let dinv = |v: &Sparse| -> Sparse {
            Sparse {
                blocks: v.blocks.iter().map(|(b, x)| (*b, chol_b[*b].solve(x))).collect(),
                z: match &chol_z {
                    Some(c) => c.solve(&v.z),
                    None => v.z.clone(),
                },
            }
        };
        let rhs = Sparse { blocks: grad_b.iter().enumerate().map(|(b, g)| (b, -g)).collect(), z: -&gz };
        let x0 = dinv(&rhs);
        let mut dx_b: Vec<DVector<f64>> = vec![DVector::zeros(d); nb];
        for (b, v) in &x0.blocks {
            dx_b[*b] += v;
        }
        let mut dz = x0.z.clone();

        if !globals.is_empty() {
            let p = globals.len();
            let dinv_a: Vec<Sparse> = globals.iter().map(|(a, _)| dinv(a)).collect();
            let mut cap = DMatrix::zeros(p, p);
            for l in 0..p {
                cap[(l, l)] += 1.0 / globals[l].1;
                for m in l..p {
                    let v = sparse_dot(&globals[l].0, &dinv_a[m]);
                    cap[(l, m)] += v;
                    if m != l {
                        cap[(m, l)] += v;
                    }
                }
            }
            let proj = DVector::from_iterator(p, globals.iter().map(|(a, _)| sparse_dot(a, &x0)));
            let coef = Cholesky::new(cap)
                .ok_or_else(|| Error::Numerical("capacitance matrix not positive definite".into()))?
                .solve(&proj);
            for (l, da) in dinv_a.iter().enumerate() {
                for (b, v) in &da.blocks {
                    dx_b[*b].axpy(-coef[l], v, 1.0);
                }
                dz.axpy(-coef[l], &da.z, 1.0);
            }
        }

        let mut slope = gz.dot(&dz);
        for b in 0..nb {
            slope += grad_b[b].dot(&dx_b[b]);
        }
        Ok((dx_b, dz, slope))
    }

    /// Damped Newton step; returns the Newton decrement `λ²` before the step.
    fn step(&self, st: &mut State, t: f64) -> Result<f64> {
        let geo = self.geometry(st);
        let (dx_b, dz, slope) = self.newton(st, &geo, t)?;
        let lambda2 = -slope;
        if !(lambda2.is_finite()) {
            return Err(Error::Numerical("non-finite Newton decrement".into()));
        }
        if lambda2 / 2.0 <= NEWTON_TOL {
            return Ok(lambda2);
        }
        let deltas: Vec<CMatrix> = dx_b.iter().map(|v| hmat(v.as_slice(), self.n)).collect();
        let eigs: Vec<Vec<f64>> = deltas.iter().map(crate::linalg::eigenvalues).collect();
        let mut amax = f64::INFINITY;
        for e in &eigs {
            if e[0] < 0.0 {
                amax = amax.min(-1.0 / e[0]);
            }
        }
        let mut positive: Vec<usize> = self.omega_vars.clone();
        for blk in &self.blocks {
            if let Role::Urllc { f, .. } = blk.role {
                positive.push(f);
            }
        }
        positive.extend(self.tau);
        for &i in &positive {
            if dz[i] < 0.0 {
                amax = amax.min(-st.z[i] / dz[i]);
            }
        }
        if self.phase_one {
            let s = self.s_index();
            if dz[s] < 0.0 {
                amax = amax.min(-(st.z[s] + 1.0) / dz[s]);
            }
        }
        let dy: Vec<Vec<f64>> = geo.u.iter().zip(&dx_b).map(|(ub, d)| ub.iter().map(|u| u.dot(d)).collect()).collect();
        let dp: Vec<Vec<f64>> = geo.pv.iter().zip(&dx_b).map(|(pb, d)| pb.iter().map(|p| p.dot(d)).collect()).collect();

        let base = self.value(t, &geo.feat, &st.z, 0.0);
        let mut alpha = (0.99 * amax).min(1.0);
        let mut trial_z = st.z.clone();
        loop {
            let feat = Feat {
                y: geo.feat.y.iter().zip(&dy).map(|(y, d)| y.iter().zip(d).map(|(a, b)| a + alpha * b).collect()).collect(),
                p: geo.feat.p.iter().zip(&dp).map(|(p, d)| p.iter().zip(d).map(|(a, b)| a + alpha * b).collect()).collect(),
            };
            for (k, v) in trial_z.iter_mut().enumerate() {
                *v = st.z[k] + alpha * dz[k];
            }
            let logdet: f64 = eigs.iter().flatten().map(|l| (alpha * l).ln_1p()).sum();
            let v = self.value(t, &feat, &trial_z, logdet);
            if v <= base + 0.25 * alpha * slope {
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-14 {
                return Err(Error::Numerical("line search failed".into()));
            }
        }
        for (b, delta) in deltas.iter().enumerate() {
            let m = CMatrix::identity(self.n, self.n) + delta * C64::new(alpha, 0.0);
            let c = Cholesky::new(m).ok_or_else(|| Error::Numerical("step left the PSD cone".into()))?;
            st.l[b] = &st.l[b] * c.l();
        }
        st.z = trial_z;
        Ok(lambda2)
    }

    fn initial_state(&self) -> State {
        let nb = self.blocks.len();
        let emin = self.budgets.iter().cloned().fold(f64::INFINITY, f64::min);
        let eps = 0.5 * emin / (self.kant * nb) as f64;
        let l = vec![CMatrix::identity(self.n, self.n) * C64::new(eps.sqrt(), 0.0); nb];
        let mut z = vec![0.0; self.nzt()];
        let share = if self.omega_vars.is_empty() {
            0.0
        } else {
            self.w_avail.max(1e-3) / (2.0 * self.omega_vars.len() as f64)
        };
        for &i in &self.omega_vars {
            z[i] = share;
        }
        let mut soc = 0.0;
        for (b, blk) in self.blocks.iter().enumerate() {
            if let Role::Urllc { f, bits, q, .. } = blk.role {
                let y: f64 = blk.chans[0].norm_squared() * eps;
                let c = phy::capacity(y).max(1e-6);
                z[f] = 1.5 * phy::channel_uses_at_capacity(bits, c, q);
                soc += self.var[self.urllc_index(b)] * z[f] * z[f];
            }
        }
        if let Some(t) = self.tau {
            z[t] = 1.5 * soc.sqrt() + 1e-9;
        }
        State { l, z }
    }

    fn max_violation(&self, st: &State) -> f64 {
        let geo = self.geometry(st);
        let mut worst = f64::NEG_INFINITY;
        for &con in &self.cons {
            if con.relaxed() {
                let e = self.eval_raw(con, &geo.feat, &st.z).expect("initial point inside variable domains");
                worst = worst.max(-e.g / self.scale(con));
            }
        }
        worst
    }
}

fn sparse_dot(a: &Sparse, b: &Sparse) -> f64 {
    let mut s = a.z.dot(&b.z);
    for (i, x) in &a.blocks {
        if let Some((_, y)) = b.blocks.iter().find(|(j, _)| j == i) {
            s += x.dot(y);
        }
    }
    s
}

struct Runner {
    steps: usize,
    max_steps: usize,
}

enum PhaseOne {
    Interior(State),
    /// Optimal violation estimate and the certified lower bound.
    Infeasible(f64),
    Boundary(f64),
}

impl Runner {
    fn bump(&mut self) -> Result<()> {
        self.steps += 1;
        if self.steps > self.max_steps {
            return Err(Error::Numerical(format!("Newton step cap {} reached", self.max_steps)));
        }
        Ok(())
    }

    /// Minimizes the phase-one violation `s` until it drops below `-target`.
    fn phase_one(&mut self, model: &mut Model, target: f64) -> Result<PhaseOne> {
        model.phase_one = true;
        let mut st = model.initial_state();
        let s = model.s_index();
        let worst = model.max_violation(&st);
        if worst < -target {
            st.z[s] = worst;
            return Ok(PhaseOne::Interior(st));
        }
        st.z[s] = worst.max(0.0) + 1.0;
        let nu = model.nu();
        let mut t = nu / (st.z[s] + 1.0);
        loop {
            loop {
                if st.z[s] < -target {
                    return Ok(PhaseOne::Interior(st));
                }
                self.bump()?;
                let l2 = model.step(&mut st, t)?;
                if l2 / 2.0 <= NEWTON_TOL {
                    break;
                }
            }
            let lower = st.z[s] - nu / t;
            if lower > FEASIBILITY_TOLERANCE {
                return Ok(PhaseOne::Infeasible(st.z[s]));
            }
            // Strictly interior, and the requested margin is provably out of reach.
            if st.z[s] < 0.0 && lower > -target {
                return Ok(PhaseOne::Interior(st));
            }
            if nu / t < 1e-2 * FEASIBILITY_TOLERANCE {
                if st.z[s] < 0.0 {
                    return Ok(PhaseOne::Interior(st));
                }
                return Ok(PhaseOne::Boundary(st.z[s]));
            }
            t *= BARRIER_GROWTH;
        }
    }
}

pub(super) fn feasibility(prob: &ConvexSubproblem, options: &SolverOptions) -> Result<FeasibilityReport> {
    let mut model = match Model::build(prob)? {
        Setup::Trivial(ok) => {
            return Ok(FeasibilityReport { feasible: ok, violation: if ok { 0.0 } else { f64::INFINITY }, reason: None });
        }
        Setup::Model(m) => m,
    };
    let mut runner = Runner { steps: 0, max_steps: options.max_newton_steps };
    Ok(match runner.phase_one(&mut model, 0.0)? {
        PhaseOne::Interior(st) => FeasibilityReport { feasible: true, violation: st.z[model.s_index()], reason: None },
        PhaseOne::Boundary(v) => FeasibilityReport { feasible: true, violation: v, reason: Some("feasible set has no interior".into()) },
        PhaseOne::Infeasible(v) => FeasibilityReport { feasible: false, violation: v, reason: None },
    })
}

pub(super) fn solve(prob: &ConvexSubproblem, options: &SolverOptions) -> Result<SolveResult> {
    let mut model = match Model::build(prob)? {
        Setup::Trivial(true) => return Ok(trivial_result(prob)),
        Setup::Trivial(false) => return Err(infeasible(f64::INFINITY)),
        Setup::Model(m) => m,
    };
    let mut runner = Runner { steps: 0, max_steps: options.max_newton_steps };
    let mut st = match runner.phase_one(&mut model, PHASE_ONE_MARGIN)? {
        PhaseOne::Interior(st) => st,
        PhaseOne::Infeasible(v) => return Err(infeasible(v)),
        PhaseOne::Boundary(v) => {
            return Err(Error::Numerical(format!("feasible set has no interior (violation {v:.3e})")));
        }
    };
    model.phase_one = false;
    st.z.truncate(model.nz);

    let nu = model.nu();
    let geo = model.geometry(&st);
    let f0 = model.f0(&geo.feat, &st.z);
    let mut t = (nu / f0.abs().max(1.0)).max(1e-3);
    let mut best = st.clone();
    loop {
        loop {
            if let Err(e) = runner.bump() {
                return Err(match e {
                    Error::Numerical(_) => Error::MaxIterations {
                        iterations: runner.steps - 1,
                        best: Box::new(finish(&model, &best, nu / t, runner.steps - 1)),
                    },
                    other => other,
                });
            }
            let l2 = model.step(&mut st, t)?;
            best = st.clone();
            if l2 / 2.0 <= NEWTON_TOL {
                break;
            }
        }
        let geo = model.geometry(&st);
        let f0 = model.f0(&geo.feat, &st.z);
        if nu / t <= options.tolerance * f0.abs().max(1.0) {
            return Ok(finish(&model, &st, nu / t, runner.steps));
        }
        t *= BARRIER_GROWTH;
    }
}

fn trivial_result(prob: &ConvexSubproblem) -> SolveResult {
    let n = prob.dim();
    SolveResult {
        objective: prob.constant_utility(),
        embb_bandwidth_hz: prob
            .embb
            .iter()
            .map(|e| if e.accepted { e.fixed_bandwidth_hz.unwrap_or(0.0) } else { 0.0 })
            .collect(),
        v: vec![BeamformMatrix::zeros(n); prob.embb.len()],
        g: vec![BeamformMatrix::zeros(n); prob.urllc.len()],
        channel_uses: vec![0.0; prob.urllc.len()],
        urllc_bandwidth_hz: 0.0,
        newton_steps: 0,
        duality_gap: 0.0,
    }
}

fn finish(model: &Model, st: &State, gap: f64, steps: usize) -> SolveResult {
    let prob = model.prob;
    let n = prob.dim();
    let mut out = trivial_result(prob);
    let mut vm = vec![CMatrix::zeros(n, n); prob.embb.len()];
    let mut gm = vec![CMatrix::zeros(n, n); prob.urllc.len()];
    for (b, blk) in model.blocks.iter().enumerate() {
        let x = &st.l[b] * st.l[b].adjoint();
        let x = crate::linalg::hermitian_part(&x);
        match blk.role {
            Role::Embb { src, omega, .. } => {
                out.embb_bandwidth_hz[src] = match omega {
                    Omega::Var(i) => st.z[i] * MHZ,
                    Omega::Fixed(w) => w * MHZ,
                };
                vm[src] = x;
            }
            Role::Urllc { src, bits, q, .. } => {
                let y = crate::linalg::quad_form(&x, &prob.urllc[src].channel) / prob.noise_floor_w;
                out.channel_uses[src] = phy::channel_uses_at_capacity(bits, phy::capacity(y), q);
                gm[src] = x;
            }
        }
    }
    let terms = prob.reservation_terms();
    let mask: Vec<bool> = prob.urllc.iter().map(|u| u.active).collect();
    out.urllc_bandwidth_hz = phy::reserved_bandwidth(&terms, model.margin, &mask, &out.channel_uses);
    out.objective = prob.utility(&vm, &gm);
    out.v = vm.into_iter().map(BeamformMatrix::new).collect();
    out.g = gm.into_iter().map(BeamformMatrix::new).collect();
    out.newton_steps = steps;
    out.duality_gap = gap;
    out
}
