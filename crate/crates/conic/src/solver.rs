//! Homogeneous self-dual interior-point method with Nesterov-Todd scaling
//! and a Mehrotra predictor-corrector.

use crate::cones::{identity_elem, jdiv, jprod, max_step, min_cone_eig, Cone, Op, Scaling};
use crate::equil::Equilibration;
use crate::kkt::{norm_inf, Kkt};
use crate::program::ConicProgram;
use crate::{ConicError, Real};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    /// primal infeasible; `y`, `z` hold a Farkas certificate
    Infeasible,
    /// dual infeasible; `x`, `s` hold an improving ray
    Unbounded,
    NumericalFailure,
}

#[derive(Clone, Debug)]
pub struct Settings<T> {
    /// relative residual and gap tolerance
    pub tol: T,
    /// accept a stalled iterate as optimal when all measures are below this
    pub tol_reduced: T,
    pub max_iter: usize,
    pub step_fraction: T,
    pub equilibrate: bool,
    pub equil_iters: usize,
    /// Mehrotra corrector; when off a fixed centering σ is used
    pub predictor_corrector: bool,
    pub fixed_centering: T,
    pub refine_steps: usize,
}

impl<T: Real> Default for Settings<T> {
    fn default() -> Self {
        let eps = T::machine_eps();
        // f32 cannot reach 1e-8
        let tol = if eps > T::lit(1e-10) { T::lit(1e-5) } else { T::lit(1e-8) };
        Self {
            tol,
            tol_reduced: tol * T::lit(1e3),
            max_iter: 100,
            step_fraction: T::lit(0.99),
            equilibrate: true,
            equil_iters: 15,
            predictor_corrector: true,
            fixed_centering: T::lit(0.1),
            refine_steps: 3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub pcost: f64,
    pub dcost: f64,
    pub pres: f64,
    pub dres: f64,
    pub gap: f64,
    pub step: f64,
    pub mu: f64,
}

#[derive(Clone, Debug)]
pub struct ConicSolution<T> {
    pub status: Status,
    /// set when the iterate met `tol_reduced` but not `tol`
    pub reduced_accuracy: bool,
    pub x: Vec<T>,
    pub s: Vec<T>,
    pub y: Vec<T>,
    pub z: Vec<T>,
    pub primal_objective: T,
    pub dual_objective: T,
    pub primal_residual: T,
    pub dual_residual: T,
    pub gap: T,
    pub iterations: usize,
    pub history: Vec<IterationLog>,
}

struct Problem<'a, T> {
    orig: &'a ConicProgram<T>,
    sc: ConicProgram<T>,
    eq: Equilibration<T>,
}

#[derive(Clone)]
struct Iterate<T> {
    x: Vec<T>,
    y: Vec<T>,
    z: Vec<T>,
    s: Vec<T>,
    tau: T,
    kappa: T,
}

struct Metrics<T> {
    pres: T,
    dres: T,
    pcost: T,
    dcost: T,
    gap: T,
    relgap: T,
    pinf: Option<T>,
    dinf: Option<T>,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

fn nrm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    y.iter_mut().zip(x).for_each(|(a, b)| *a += alpha * *b);
}

impl<'a, T: Real> Problem<'a, T> {
    /// Convergence and infeasibility measures in the original data space.
    fn metrics(&self, it: &Iterate<T>) -> Metrics<T> {
        let p = self.orig;
        let x = self.eq.unscale_x(&it.x);
        let y = self.eq.unscale_y(&it.y);
        let z = self.eq.unscale_z(&it.z);
        let s = self.eq.unscale_s(&it.s);
        let tau = it.tau;
        let one = T::one();
        let nb = nrm2(&p.b).max(one);
        let nh = nrm2(&p.h).max(one);
        let nc = nrm2(&p.c).max(one);

        let mut ry = vec![T::zero(); p.b.len()];
        p.a.gemv(one, &x, &mut ry);
        let ax_norm = nrm2(&ry);
        axpy(-tau, &p.b, &mut ry);
        let mut rz = s.clone();
        p.g.gemv(one, &x, &mut rz);
        let gxs_norm = nrm2(&rz);
        axpy(-tau, &p.h, &mut rz);
        let mut rx = vec![T::zero(); p.c.len()];
        p.a.gemv_t(one, &y, &mut rx);
        p.g.gemv_t(one, &z, &mut rx);
        let atz_norm = nrm2(&rx);
        axpy(tau, &p.c, &mut rx);

        let cx = dot(&p.c, &x);
        let by_hz = dot(&p.b, &y) + dot(&p.h, &z);
        let pres = (nrm2(&ry) / nb).max(nrm2(&rz) / nh) / tau;
        let dres = nrm2(&rx) / nc / tau;
        let pcost = cx / tau;
        let dcost = -by_hz / tau;
        let gap = dot(&s, &z) / (tau * tau);
        let relgap = gap / pcost.abs().max(dcost.abs()).max(one);
        let pinf = if by_hz < T::zero() { Some(atz_norm / nc / (-by_hz)) } else { None };
        let dinf = if cx < T::zero() { Some((ax_norm / nb).max(gxs_norm / nh) / (-cx)) } else { None };
        Metrics { pres, dres, pcost, dcost, gap, relgap, pinf, dinf }
    }
}

/// Solve a cone program.
pub fn solve<T: Real>(prog: &ConicProgram<T>, settings: &Settings<T>) -> Result<ConicSolution<T>, ConicError> {
    prog.validate()?;
    let mut sc = prog.clone();
    let eq = if settings.equilibrate {
        Equilibration::apply(&mut sc, settings.equil_iters)
    } else {
        Equilibration::identity(&sc)
    };
    let pb = Problem { orig: prog, sc, eq };
    Ok(run(&pb, settings))
}

fn run<T: Real>(pb: &Problem<T>, st: &Settings<T>) -> ConicSolution<T> {
    let p = &pb.sc;
    let cones: &[Cone] = &p.cones;
    let (n, me, mg) = (p.c.len(), p.b.len(), p.h.len());
    let one = T::one();
    let zero = T::zero();
    let nu = T::from_usize(cones.iter().map(|c| c.degree()).sum::<usize>()).unwrap();
    let mut kkt = Kkt::new(&p.a, &p.g, cones);
    let mut e = vec![zero; mg];
    identity_elem(cones, &mut e);

    // starting point: least-squares primal and dual, shifted into the cone
    let id = Scaling::identity(cones);
    let mut history = vec![];
    if !kkt.factor(&id) {
        return failure(pb, None, 0, history);
    }
    let zeros_n = vec![zero; n];
    let zeros_me = vec![zero; me];
    let zeros_mg = vec![zero; mg];
    let (x0, _, zp) = kkt.solve(&id, &zeros_n, &p.b, &p.h, st.refine_steps);
    let mut s0: Vec<T> = zp.iter().map(|v| -*v).collect();
    let negc: Vec<T> = p.c.iter().map(|v| -*v).collect();
    let (_, y0, mut z0) = kkt.solve(&id, &negc, &zeros_me, &zeros_mg, st.refine_steps);
    for v in [&mut s0, &mut z0] {
        let t = -min_cone_eig(cones, v);
        let nrm = nrm2(v).max(one);
        if t >= -T::lit(1e-8) * nrm {
            axpy(one + t, &e, v);
        }
    }
    let mut it = Iterate { x: x0, y: y0, z: z0, s: s0, tau: one, kappa: one };
    let mut best: Option<(T, Iterate<T>)> = None;
    let mut stalls = 0;

    for k in 0..st.max_iter {
        let m = pb.metrics(&it);
        let measure = m.pres.max(m.dres).max(m.relgap);
        if best.as_ref().map_or(true, |(b, _)| measure < *b) {
            best = Some((measure, it.clone()));
        }
        if m.pres <= st.tol && m.dres <= st.tol && m.relgap <= st.tol {
            return finish(pb, &it, Status::Optimal, false, k, history);
        }
        if let Some(r) = m.pinf {
            if r <= st.tol {
                return finish(pb, &it, Status::Infeasible, false, k, history);
            }
        }
        if let Some(r) = m.dinf {
            if r <= st.tol {
                return finish(pb, &it, Status::Unbounded, false, k, history);
            }
        }

        let Some(scal) = Scaling::nt(cones, &it.s, &it.z) else {
            return failure(pb, best, k, history);
        };
        if !kkt.factor(&scal) {
            return failure(pb, best, k, history);
        }

        // residuals of the embedding (scaled data)
        let mut rx = vec![zero; n];
        p.a.gemv_t(one, &it.y, &mut rx);
        p.g.gemv_t(one, &it.z, &mut rx);
        axpy(it.tau, &p.c, &mut rx);
        let mut ry = vec![zero; me];
        p.a.gemv(one, &it.x, &mut ry);
        axpy(-it.tau, &p.b, &mut ry);
        let mut rz = it.s.clone();
        p.g.gemv(one, &it.x, &mut rz);
        axpy(-it.tau, &p.h, &mut rz);
        let rt = it.kappa + dot(&p.c, &it.x) + dot(&p.b, &it.y) + dot(&p.h, &it.z);

        let mu = (dot(&it.s, &it.z) + it.tau * it.kappa) / (nu + one);
        let (x1, y1, z1) = kkt.solve(&scal, &negc, &p.b, &p.h, st.refine_steps);
        let denom = dot(&p.c, &x1) + dot(&p.b, &y1) + dot(&p.h, &z1) - it.kappa / it.tau;

        let mut lam2 = vec![zero; mg];
        jprod(cones, &scal.lambda, &scal.lambda, &mut lam2);

        let direction = |eta: T, ds_target: &[T], dtk_target: T| {
            let mut q = vec![zero; mg];
            jdiv(cones, &scal, ds_target, &mut q);
            let mut wq = q.clone();
            scal.apply(cones, Op::WT, &mut wq);
            let bx: Vec<T> = rx.iter().map(|v| -eta * *v).collect();
            let by: Vec<T> = ry.iter().map(|v| -eta * *v).collect();
            let bz: Vec<T> = rz.iter().zip(&wq).map(|(a, b)| -eta * *a - *b).collect();
            let (x2, y2, z2) = kkt.solve(&scal, &bx, &by, &bz, st.refine_steps);
            let num = -eta * rt - dtk_target / it.tau - (dot(&p.c, &x2) + dot(&p.b, &y2) + dot(&p.h, &z2));
            let dtau = num / denom;
            let mut dx = x2;
            axpy(dtau, &x1, &mut dx);
            let mut dy = y2;
            axpy(dtau, &y1, &mut dy);
            let mut dz = z2;
            axpy(dtau, &z1, &mut dz);
            let dkappa = (dtk_target - it.kappa * dtau) / it.tau;
            let mut dzt = dz.clone();
            scal.apply(cones, Op::W, &mut dzt);
            let dst: Vec<T> = q.iter().zip(&dzt).map(|(a, b)| *a - *b).collect();
            (dx, dy, dz, dst, dzt, dtau, dkappa)
        };

        let step_len = |dst: &[T], dzt: &[T], dtau: T, dkappa: T| {
            let cap = T::lit(1e30);
            let mut a = max_step(cones, &scal, dst, cap).min(max_step(cones, &scal, dzt, cap));
            if dtau < zero {
                a = a.min(-it.tau / dtau);
            }
            if dkappa < zero {
                a = a.min(-it.kappa / dkappa);
            }
            a
        };

        let (sigma, ds_target, dtk_target) = if st.predictor_corrector {
            let aff_target: Vec<T> = lam2.iter().map(|v| -*v).collect();
            let (_, _, _, dsa, dza, dta, dka) = direction(one, &aff_target, -it.tau * it.kappa);
            let aa = step_len(&dsa, &dza, dta, dka).min(one);
            let sigma = (one - aa).powi(3).max(zero).min(one);
            let mut corr = vec![zero; mg];
            jprod(cones, &dsa, &dza, &mut corr);
            let t: Vec<T> = (0..mg).map(|i| -lam2[i] - corr[i] + sigma * mu * e[i]).collect();
            (sigma, t, -it.tau * it.kappa - dta * dka + sigma * mu)
        } else {
            let sigma = st.fixed_centering;
            let t: Vec<T> = (0..mg).map(|i| -lam2[i] + sigma * mu * e[i]).collect();
            (sigma, t, -it.tau * it.kappa + sigma * mu)
        };
        let (dx, dy, dz, dst, dzt, dtau, dkappa) = direction(one - sigma, &ds_target, dtk_target);
        let amax = step_len(&dst, &dzt, dtau, dkappa);
        let alpha = (st.step_fraction * amax).min(one);
        let mut ds = dst.clone();
        scal.apply(cones, Op::WT, &mut ds);

        history.push(IterationLog {
            iter: k,
            pcost: m.pcost.to_f(),
            dcost: m.dcost.to_f(),
            pres: m.pres.to_f(),
            dres: m.dres.to_f(),
            gap: m.gap.to_f(),
            step: alpha.to_f(),
            mu: mu.to_f(),
        });
        log::debug!(
            "it {k:3} pcost {:+.8e} dcost {:+.8e} pres {:.2e} dres {:.2e} gap {:.2e} step {:.3} reg {:.1e}",
            m.pcost.to_f(),
            m.dcost.to_f(),
            m.pres.to_f(),
            m.dres.to_f(),
            m.gap.to_f(),
            alpha.to_f(),
            kkt.reg.to_f()
        );

        let finite = dx.iter().chain(&dy).chain(&dz).chain(&ds).all(|v| v.is_finite_val())
            && dtau.is_finite_val()
            && dkappa.is_finite_val();
        if !finite {
            return failure(pb, best, k, history);
        }
        axpy(alpha, &dx, &mut it.x);
        axpy(alpha, &dy, &mut it.y);
        axpy(alpha, &dz, &mut it.z);
        axpy(alpha, &ds, &mut it.s);
        it.tau += alpha * dtau;
        it.kappa += alpha * dkappa;

        if alpha < T::lit(1e-8) {
            stalls += 1;
            if stalls >= 3 {
                return failure(pb, best, k + 1, history);
            }
        } else {
            stalls = 0;
        }
        // keep (τ, x, y, z, s) from overflowing on infeasible problems
        let big = norm_inf(&it.x).max(norm_inf(&it.z)).max(norm_inf(&it.s)).max(it.tau);
        if big > T::lit(1e20) {
            let f = one / big;
            for v in [&mut it.x, &mut it.y, &mut it.z, &mut it.s] {
                v.iter_mut().for_each(|a| *a *= f);
            }
            it.tau *= f;
            it.kappa *= f;
        }
    }
    let m = pb.metrics(&it);
    let measure = m.pres.max(m.dres).max(m.relgap);
    if best.as_ref().map_or(true, |(b, _)| measure < *b) {
        best = Some((measure, it));
    }
    failure(pb, best, st.max_iter, history)
}

fn failure<T: Real>(pb: &Problem<T>, best: Option<(T, Iterate<T>)>, iters: usize, history: Vec<IterationLog>) -> ConicSolution<T> {
    let tol_red = Settings::<T>::default().tol_reduced;
    match best {
        Some((measure, it)) if measure <= tol_red => finish(pb, &it, Status::Optimal, true, iters, history),
        Some((_, it)) => finish(pb, &it, Status::NumericalFailure, false, iters, history),
        None => {
            let n = pb.orig.c.len();
            let z = T::zero();
            ConicSolution {
                status: Status::NumericalFailure,
                reduced_accuracy: false,
                x: vec![z; n],
                s: vec![z; pb.orig.h.len()],
                y: vec![z; pb.orig.b.len()],
                z: vec![z; pb.orig.h.len()],
                primal_objective: T::lit(f64::NAN),
                dual_objective: T::lit(f64::NAN),
                primal_residual: T::lit(f64::INFINITY),
                dual_residual: T::lit(f64::INFINITY),
                gap: T::lit(f64::INFINITY),
                iterations: iters,
                history,
            }
        }
    }
}

fn finish<T: Real>(
    pb: &Problem<T>,
    it: &Iterate<T>,
    status: Status,
    reduced: bool,
    iters: usize,
    history: Vec<IterationLog>,
) -> ConicSolution<T> {
    let m = pb.metrics(it);
    let p = pb.orig;
    let mut x = pb.eq.unscale_x(&it.x);
    let mut y = pb.eq.unscale_y(&it.y);
    let mut z = pb.eq.unscale_z(&it.z);
    let mut s = pb.eq.unscale_s(&it.s);
    let scale = |v: &mut Vec<T>, f: T| v.iter_mut().for_each(|a| *a *= f);
    match status {
        Status::Infeasible => {
            let f = -T::one() / (dot(&p.b, &y) + dot(&p.h, &z));
            scale(&mut y, f);
            scale(&mut z, f);
        }
        Status::Unbounded => {
            let f = -T::one() / dot(&p.c, &x);
            scale(&mut x, f);
            scale(&mut s, f);
        }
        _ => {
            let f = T::one() / it.tau;
            scale(&mut x, f);
            scale(&mut y, f);
            scale(&mut z, f);
            scale(&mut s, f);
        }
    }
    ConicSolution {
        status,
        reduced_accuracy: reduced,
        x,
        s,
        y,
        z,
        primal_objective: m.pcost,
        dual_objective: m.dcost,
        primal_residual: m.pres,
        dual_residual: m.dres,
        gap: m.gap,
        iterations: iters,
        history,
    }
}
