//! Construction of the expansion state: the slow profiles V_k on a uniform
//! checkpoint grid in slow time, the correctors W_k as τ-indexed field
//! families, and reconstruction/assembly of the profiles U_k.
//!
//! Per order k the recursion is
//!
//! W_k(t,τ,x) = ∫₀^τ [ Σ_i (ã_i − α_i(σ))·∇V_{k−1−i}
//!                     + Σ_i ( ⟨α_i·∇W_{k−1−i}⟩ − α_i(σ)·∇W_{k−1−i}(σ) )
//!                     + ( ⟨∂_t W_{k−1}⟩ − ∂_t W_{k−1}(σ) ) ](t,·,x) dσ,
//!
//! ∂_t V_k + ã_0·∇V_k = −⟨∂_t W_k + α_0·∇W_k⟩
//!                      − Σ_{i≥1} ( ã_i·∇V_{k−i} + ⟨α_i·∇W_{k−i}⟩ ),
//!
//! with ⟨·⟩ the τ-average, V_0(0) = u⁰, V_k(0) = 0 and W_0 = 0. Every
//! integrand above is the τ-average defect of a θ-periodic quantity, so
//! the cumulative integral closes (W_k(θ) = 0) by construction; the
//! closure residual is recorded anyway as a diagnostic. U_k is then
//! reconstructed as V_k(t, X(−τ;x,t;0)) + W_k(t, τ, X(−τ;x,t;0)) and the
//! expansion assembled as Σ ε^k U_k(t, t/ε mod θ, x).

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::Arc;

use rayon::prelude::*;

use super::averaged::EngineContext;
use super::taufield::{TauFamily, TauFamilyInterp};
use super::transport::solve_transport;
use crate::numerics::quad::close_period;
use crate::numerics::{gradient, Coord, ScalarField, SplineInterp, VectorField};
use crate::{CoreError, Result};

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Highest expansion order K.
    pub order: usize,
    /// Slow-time horizon T.
    pub horizon: f64,
    /// Checkpoint intervals over [0, T]; V_k and W_k live on the nodes.
    pub steps: usize,
    /// Keep W families at every checkpoint (needed by the residual
    /// diagnostics); otherwise only the final checkpoint is retained.
    pub retain_all: bool,
}

impl EngineConfig {
    pub fn new(order: usize, horizon: f64, steps: usize) -> Self {
        Self { order, horizon, steps, retain_all: false }
    }

    pub fn retain_all(mut self) -> Self {
        self.retain_all = true;
        self
    }
}

/// Built expansion: everything needed to evaluate Σ ε^k U_k at any ε.
pub struct ExpansionState {
    ctx: EngineContext,
    cfg: EngineConfig,
    times: Vec<f64>,
    /// v[k][m]: V_k at checkpoint m.
    v: Vec<Vec<ScalarField>>,
    /// Cached ã_i fields, [i][m].
    a_tilde: Vec<Vec<VectorField>>,
    /// W families retained at every checkpoint, [k-1][m] (order ≥ 1).
    w_all: Vec<Vec<Arc<TauFamily>>>,
    /// W families at the final checkpoint, index k−1.
    w_final: Vec<Arc<TauFamily>>,
    /// Per order k ≥ 1: max over checkpoints of the relative closure
    /// residual max_x |W_k(t, θ, x)| / (1 + max|W_k|).
    closure_rel: Vec<f64>,
}

struct Builder {
    ctx: EngineContext,
    cfg: EngineConfig,
    times: Vec<f64>,
    v: Vec<Vec<ScalarField>>,
    a_tilde: Vec<Vec<VectorField>>,
    memo: HashMap<(usize, usize), Arc<TauFamily>>,
    memo_order: VecDeque<(usize, usize)>,
    memo_cap: usize,
    closure_rel: Vec<f64>,
    zero_family: Arc<TauFamily>,
}

/// Slow-time derivative stencil across checkpoints: returns the three
/// checkpoint indices and weights (per 1/(2Δt)) for ∂_t at checkpoint m.
/// Second-order centered in the interior, one-sided at t = 0 and t = T.
fn dt_stencil(m: usize, last: usize) -> ([usize; 3], [f64; 3]) {
    if m == 0 {
        ([0, 1, 2], [-3.0, 4.0, -1.0])
    } else if m == last {
        ([last - 2, last - 1, last], [1.0, -4.0, 3.0])
    } else {
        ([m - 1, m, m + 1], [-1.0, 0.0, 1.0])
    }
}

impl Builder {
    fn new(ctx: EngineContext, cfg: EngineConfig) -> Result<Self> {
        if cfg.steps < 2 {
            return Err(CoreError::config(format!(
                "need at least 3 time checkpoints (2 steps), got {} steps",
                cfg.steps
            )));
        }
        if !(cfg.horizon.is_finite() && cfg.horizon > 0.0) {
            return Err(CoreError::config(format!("horizon must be positive, got {}", cfg.horizon)));
        }
        let times: Vec<f64> = (0..=cfg.steps)
            .map(|m| cfg.horizon * m as f64 / cfg.steps as f64)
            .collect();
        let zero_family = Arc::new(TauFamily::zeros(Arc::clone(&ctx.grid)));
        let memo_cap = 6 * (cfg.order + 1) + 8;
        Ok(Self {
            ctx,
            cfg,
            times,
            v: Vec::new(),
            a_tilde: Vec::new(),
            memo: HashMap::new(),
            memo_order: VecDeque::new(),
            memo_cap,
            closure_rel: Vec::new(),
            zero_family,
        })
    }

    /// Cache ã_i(t_m, ·) for all orders and checkpoints; one τ-sweep per
    /// node shared across the orders.
    fn cache_a_tilde(&mut self) -> Result<()> {
        let grid = Arc::clone(&self.ctx.grid);
        let orders = self.cfg.order + 1;
        let nt = grid.tau_points();
        let dims = grid.dims();
        for _ in 0..orders {
            self.a_tilde.push(Vec::with_capacity(self.times.len()));
        }
        for &t in &self.times {
            let ctx = &self.ctx;
            let per_node: Vec<Vec<Coord>> = (0..grid.len())
                .into_par_iter()
                .map_init(Vec::new, |table, flat| -> Result<Vec<Coord>> {
                    let x = grid.node(flat);
                    ctx.alpha_table(orders, t, &x, table)?;
                    let mut means = vec![[0.0; crate::numerics::MAX_DIM]; orders];
                    for row in table.iter() {
                        for (i, a) in row.iter().enumerate() {
                            for d in 0..dims {
                                means[i][d] += a[d];
                            }
                        }
                    }
                    for mi in &mut means {
                        for v in mi.iter_mut().take(dims) {
                            *v /= nt as f64;
                        }
                    }
                    Ok(means)
                })
                .collect::<Result<Vec<_>>>()?;
            for i in 0..orders {
                let mut comps = Vec::with_capacity(dims);
                for d in 0..dims {
                    let vals: Vec<f64> = per_node.iter().map(|row| row[i][d]).collect();
                    comps.push(ScalarField::new(Arc::clone(&grid), vals)?);
                }
                self.a_tilde[i].push(VectorField::new(comps)?);
            }
        }
        Ok(())
    }

    fn memo_insert(&mut self, key: (usize, usize), fam: Arc<TauFamily>) {
        if self.memo.insert(key, fam).is_none() {
            self.memo_order.push_back(key);
            while self.memo_order.len() > self.memo_cap {
                if let Some(old) = self.memo_order.pop_front() {
                    self.memo.remove(&old);
                }
            }
        }
    }

    /// W_k family at checkpoint m, memoized. k = 0 is the zero family.
    fn w_family(&mut self, k: usize, m: usize) -> Result<Arc<TauFamily>> {
        if k == 0 {
            return Ok(Arc::clone(&self.zero_family));
        }
        if let Some(f) = self.memo.get(&(k, m)) {
            return Ok(Arc::clone(f));
        }
        if self.v.len() < k {
            return Err(CoreError::Sequencing(format!(
                "W_{k} requires V_0..V_{} to be built",
                k - 1
            )));
        }
        let fam = self.build_w(k, m)?;
        let fam = Arc::new(fam);
        self.memo_insert((k, m), Arc::clone(&fam));
        Ok(fam)
    }

    /// ∂_t W_{k−1} slices at checkpoint m (τ-major, node-minor), or None
    /// for k = 1 where W_0 ≡ 0.
    fn dt_w_slices(&mut self, k: usize, m: usize) -> Result<Option<Vec<Vec<f64>>>> {
        if k == 0 {
            return Ok(None);
        }
        let last = self.times.len() - 1;
        let dt = self.times[1] - self.times[0];
        let (idx, wgt) = dt_stencil(m, last);
        let fams = [self.w_family(k, idx[0])?, self.w_family(k, idx[1])?, self.w_family(k, idx[2])?];
        let nt = self.ctx.grid.tau_points();
        let n = self.ctx.grid.len();
        let mut out = Vec::with_capacity(nt);
        for j in 0..nt {
            let mut slice = vec![0.0f64; n];
            for (f, w) in fams.iter().zip(wgt) {
                if w == 0.0 {
                    continue;
                }
                let vals = f.slice(j).values();
                for (o, v) in slice.iter_mut().zip(vals) {
                    *o += w * v;
                }
            }
            let inv = 1.0 / (2.0 * dt);
            for o in slice.iter_mut() {
                *o *= inv;
            }
            out.push(slice);
        }
        Ok(Some(out))
    }

    /// Build the W_k family at checkpoint m from lower-order data.
    fn build_w(&mut self, k: usize, m: usize) -> Result<TauFamily> {
        let grid = Arc::clone(&self.ctx.grid);
        let nt = grid.tau_points();
        let n = grid.len();
        let dims = grid.dims();
        let t = self.times[m];
        let h_tau = grid.tau_spacing();

        // ∇V_{k−1−i}(t_m) for i = 0..k−1.
        let grad_v: Vec<VectorField> =
            (0..k).map(|i| gradient(&self.v[k - 1 - i][m])).collect();

        // W_{k−1−i}[m] slice gradients for the orders that are nonzero
        // (k−1−i ≥ 1), keyed by i.
        let mut grad_w: Vec<Option<Vec<VectorField>>> = Vec::with_capacity(k);
        for i in 0..k {
            let ord = k - 1 - i;
            if ord == 0 {
                grad_w.push(None);
            } else {
                let fam = self.w_family(ord, m)?;
                let grads = (0..nt).map(|j| gradient(fam.slice(j))).collect();
                grad_w.push(Some(grads));
            }
        }

        // ∂_t W_{k−1} slices, None when k = 1.
        let dtw = self.dt_w_slices(k - 1, m)?;

        let ctx = &self.ctx;
        let a_tilde = &self.a_tilde;

        // Node-major [node][τ] W values plus per-node closure defect.
        let results: Vec<(Vec<f64>, f64)> = (0..n)
            .into_par_iter()
            .map_init(
                || (Vec::new(), vec![0.0f64; nt]),
                |(table, integrand), flat| -> Result<(Vec<f64>, f64)> {
                    let x = grid.node(flat);
                    ctx.alpha_table(k, t, &x, table)?;
                    // τ-averages of α_i·∇W_{k−1−i} and of ∂_tW_{k−1}.
                    let mut mean_aw = vec![0.0f64; k];
                    for (i, gw) in grad_w.iter().enumerate() {
                        if let Some(gw) = gw {
                            for (j, gwj) in gw.iter().enumerate() {
                                let g = gwj.at(flat);
                                let a = &table[j][i];
                                let mut dot = 0.0;
                                for d in 0..dims {
                                    dot += a[d] * g[d];
                                }
                                mean_aw[i] += dot;
                            }
                            mean_aw[i] /= nt as f64;
                        }
                    }
                    let mut mean_dtw = 0.0;
                    if let Some(dtw) = &dtw {
                        for slice in dtw {
                            mean_dtw += slice[flat];
                        }
                        mean_dtw /= nt as f64;
                    }

                    for j in 0..nt {
                        let mut s = 0.0;
                        for i in 0..k {
                            let gv = grad_v[i].at(flat);
                            let ai = a_tilde[i][m].at(flat);
                            let aj = &table[j][i];
                            for d in 0..dims {
                                s += (ai[d] - aj[d]) * gv[d];
                            }
                            if let Some(gw) = &grad_w[i] {
                                let g = gw[j].at(flat);
                                let mut dot = 0.0;
                                for d in 0..dims {
                                    dot += aj[d] * g[d];
                                }
                                s += mean_aw[i] - dot;
                            }
                        }
                        if let Some(dtw) = &dtw {
                            s += mean_dtw - dtw[j][flat];
                        }
                        integrand[j] = s;
                    }

                    let mut col = Vec::with_capacity(nt);
                    let mut acc = 0.0;
                    col.push(0.0);
                    for j in 1..nt {
                        acc += 0.5 * h_tau * (integrand[j - 1] + integrand[j]);
                        col.push(acc);
                    }
                    let defect = close_period(integrand, acc, h_tau);
                    Ok((col, defect))
                },
            )
            .collect::<Result<Vec<_>>>()?;

        // Transpose to τ-major slices and record the closure residual.
        let mut slices = Vec::with_capacity(nt);
        for j in 0..nt {
            let vals: Vec<f64> = results.iter().map(|(col, _)| col[j]).collect();
            slices.push(ScalarField::new(Arc::clone(&grid), vals)?);
        }
        let fam = TauFamily::new(grid, slices);
        let defect = results.iter().fold(0.0f64, |a, (_, d)| a.max(d.abs()));
        let rel = defect / (1.0 + fam.max_abs());
        while self.closure_rel.len() < k {
            self.closure_rel.push(0.0);
        }
        if rel > self.closure_rel[k - 1] {
            self.closure_rel[k - 1] = rel;
        }
        Ok(fam)
    }

    /// Right-hand side of the V_k transport equation at checkpoint m.
    fn build_source(&mut self, k: usize, m: usize) -> Result<ScalarField> {
        let grid = Arc::clone(&self.ctx.grid);
        let nt = grid.tau_points();
        let dims = grid.dims();
        let t = self.times[m];

        let wk = self.w_family(k, m)?;
        let grad_wk: Vec<VectorField> = (0..nt).map(|j| gradient(wk.slice(j))).collect();
        let dtwk = self.dt_w_slices(k, m)?.expect("k >= 1");

        // ∇W_{k−i}[m] for i = 1..k−1 (i = k is W_0 ≡ 0).
        let mut grad_lower: Vec<(usize, Vec<VectorField>)> = Vec::new();
        for i in 1..k {
            let fam = self.w_family(k - i, m)?;
            let grads = (0..nt).map(|j| gradient(fam.slice(j))).collect();
            grad_lower.push((i, grads));
        }
        let grad_v: Vec<VectorField> = (1..=k).map(|i| gradient(&self.v[k - i][m])).collect();

        let ctx = &self.ctx;
        let a_tilde = &self.a_tilde;
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map_init(Vec::new, |table, flat| -> Result<f64> {
                let x = grid.node(flat);
                ctx.alpha_table(k + 1, t, &x, table)?;

                // ⟨∂_t W_k + α_0·∇W_k⟩
                let mut lead = 0.0;
                for j in 0..nt {
                    let g = grad_wk[j].at(flat);
                    let a0 = &table[j][0];
                    let mut dot = 0.0;
                    for d in 0..dims {
                        dot += a0[d] * g[d];
                    }
                    lead += dtwk[j][flat] + dot;
                }
                lead /= nt as f64;

                let mut tail = 0.0;
                for i in 1..=k {
                    let ai = a_tilde[i][m].at(flat);
                    let gv = grad_v[i - 1].at(flat);
                    for d in 0..dims {
                        tail += ai[d] * gv[d];
                    }
                }
                for (i, grads) in &grad_lower {
                    let mut mean = 0.0;
                    for (j, gj) in grads.iter().enumerate() {
                        let g = gj.at(flat);
                        let a = &table[j][*i];
                        for d in 0..dims {
                            mean += a[d] * g[d];
                        }
                    }
                    tail += mean / nt as f64;
                }
                Ok(-lead - tail)
            })
            .collect::<Result<Vec<_>>>()?;
        ScalarField::new(grid, values)
    }

    fn build(mut self, u0: &ScalarField) -> Result<ExpansionState> {
        let order = self.cfg.order;
        let retain_all = self.cfg.retain_all;
        let last = self.cfg.steps;

        // Degenerate input short-circuits: zero data stays zero at every
        // order.
        if u0.max_abs() == 0.0 {
            let zeros: Vec<ScalarField> =
                self.times.iter().map(|_| ScalarField::zeros(Arc::clone(&self.ctx.grid))).collect();
            let v = vec![zeros; order + 1];
            let w_final = vec![Arc::clone(&self.zero_family); order];
            let w_all = if retain_all {
                vec![vec![Arc::clone(&self.zero_family); last + 1]; order]
            } else {
                Vec::new()
            };
            self.cache_a_tilde()?;
            return Ok(ExpansionState {
                ctx: self.ctx,
                cfg: self.cfg,
                times: self.times,
                v,
                a_tilde: self.a_tilde,
                w_all,
                w_final,
                closure_rel: vec![0.0; order],
            });
        }

        self.cache_a_tilde()?;
        let b: Vec<VectorField> = self.a_tilde[0].clone();

        let v0 = solve_transport(&b, None, u0, &self.times)?;
        self.v.push(v0);

        let mut w_final = Vec::new();
        let mut w_all: Vec<Vec<Arc<TauFamily>>> = Vec::new();
        for k in 1..=order {
            let mut sources = Vec::with_capacity(self.times.len());
            let mut retained = Vec::with_capacity(self.times.len());
            for m in 0..=last {
                sources.push(self.build_source(k, m)?);
                if retain_all {
                    retained.push(self.w_family(k, m)?);
                }
            }
            let init = ScalarField::zeros(Arc::clone(&self.ctx.grid));
            let vk = solve_transport(&b, Some(&sources), &init, &self.times)?;
            self.v.push(vk);
            w_final.push(self.w_family(k, last)?);
            if retain_all {
                w_all.push(retained);
            }
        }

        Ok(ExpansionState {
            ctx: self.ctx,
            cfg: self.cfg,
            times: self.times,
            v: self.v,
            a_tilde: self.a_tilde,
            w_all,
            w_final,
            closure_rel: self.closure_rel,
        })
    }
}

/// Build the full expansion state for a problem: V_0..V_K on the
/// checkpoint grid and the correctors W_1..W_K.
pub fn build_state(ctx: EngineContext, cfg: EngineConfig, u0: &ScalarField) -> Result<ExpansionState> {
    Builder::new(ctx, cfg)?.build(u0)
}

impl ExpansionState {
    pub fn order(&self) -> usize {
        self.cfg.order
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.cfg.horizon
    }

    pub fn context(&self) -> &EngineContext {
        &self.ctx
    }

    pub fn v(&self, k: usize, m: usize) -> &ScalarField {
        &self.v[k][m]
    }

    pub fn a_tilde_field(&self, i: usize, m: usize) -> &VectorField {
        &self.a_tilde[i][m]
    }

    /// W_k family at checkpoint m (k ≥ 1).
    pub fn w_family(&self, k: usize, m: usize) -> Result<&Arc<TauFamily>> {
        if k == 0 || k > self.cfg.order {
            return Err(CoreError::invalid(format!("no W family for order {k}")));
        }
        if m == self.times.len() - 1 {
            return Ok(&self.w_final[k - 1]);
        }
        if !self.cfg.retain_all {
            return Err(CoreError::Sequencing(
                "interior W families were not retained; build with retain_all".to_string(),
            ));
        }
        Ok(&self.w_all[k - 1][m])
    }

    /// Max over checkpoints of the relative closure residual of W_k.
    pub fn closure_residual(&self, k: usize) -> f64 {
        if k == 0 || k > self.closure_rel.len() {
            0.0
        } else {
            self.closure_rel[k - 1]
        }
    }

    pub fn max_closure_residual(&self) -> f64 {
        self.closure_rel.iter().fold(0.0f64, |a, &b| a.max(b))
    }

    /// Fitted interpolants for U_k reconstruction at checkpoint m.
    pub fn fit_order(&self, k: usize, m: usize) -> Result<OrderInterp> {
        let v = SplineInterp::new(&self.v[k][m]);
        let w = if k == 0 { None } else { Some(self.w_family(k, m)?.fit()) };
        Ok(OrderInterp { v, w })
    }

    /// U_k(t_m, τ, x) = V_k(t, X(−τ;x)) + W_k(t, τ, X(−τ;x)).
    pub fn reconstruct_at(&self, k: usize, m: usize, tau: f64, x: &Coord) -> Result<f64> {
        let interp = self.fit_order(k, m)?;
        self.reconstruct_with(&interp, m, tau, x)
    }

    /// Same, with prefitted interpolants (for loops over many points).
    pub fn reconstruct_with(&self, interp: &OrderInterp, m: usize, tau: f64, x: &Coord) -> Result<f64> {
        let t = self.times[m];
        let y = self.ctx.flow.advance(-tau, x, t, 0.0)?;
        let mut val = interp.v.eval(&y);
        if let Some(w) = &interp.w {
            val += w.eval(tau, &y);
        }
        Ok(val)
    }

    /// U_k(t_m, τ, ·) materialized on the grid.
    pub fn reconstruct_slice(&self, k: usize, m: usize, tau: f64) -> Result<ScalarField> {
        let interp = self.fit_order(k, m)?;
        let grid = Arc::clone(&self.ctx.grid);
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|flat| self.reconstruct_with(&interp, m, tau, &grid.node(flat)))
            .collect::<Result<Vec<_>>>()?;
        ScalarField::new(grid, values)
    }

    /// Σ_{k≤K} ε^k U_k(t_m, (t_m/ε) mod θ, ·) on the grid. All the
    /// τ-dependence is θ-periodic, so the fast phase is reduced mod θ.
    pub fn assemble(&self, eps: f64, k_max: usize, m: usize) -> Result<ScalarField> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(CoreError::invalid(format!("eps must be positive, got {eps}")));
        }
        if k_max > self.cfg.order {
            return Err(CoreError::Sequencing(format!(
                "state was built to order {}, asked for {k_max}",
                self.cfg.order
            )));
        }
        let t = self.times[m];
        let theta = self.ctx.flow.theta();
        let tau = (t / eps).rem_euclid(theta);
        let interps: Vec<OrderInterp> =
            (0..=k_max).map(|k| self.fit_order(k, m)).collect::<Result<Vec<_>>>()?;
        let grid = Arc::clone(&self.ctx.grid);
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|flat| -> Result<f64> {
                let x = grid.node(flat);
                let y = self.ctx.flow.advance(-tau, &x, t, 0.0)?;
                let mut acc = 0.0;
                let mut scale = 1.0;
                for interp in &interps {
                    let mut u = interp.v.eval(&y);
                    if let Some(w) = &interp.w {
                        u += w.eval(tau, &y);
                    }
                    acc += scale * u;
                    scale *= eps;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        ScalarField::new(grid, values)
    }
}

/// Prefitted interpolants of one expansion order at one checkpoint.
pub struct OrderInterp {
    pub(crate) v: SplineInterp,
    pub(crate) w: Option<TauFamilyInterp>,
}
