//! Graph-regularized completion of the anchor tensor.
//!
//! Minimizes
//!
//! ```text
//! Θ(A) = ‖T − A ×₁ T_tag ×₂ I_m ×₃ U_m‖² + α‖A − A0‖² + β‖A‖²
//!      + (λ1/2) Σ W_I[i,j] ‖A ×₂ a_i − A ×₂ a_j‖²
//!      + (λ2/2) Σ W_U[i,j] ‖A ×₃ b_i − A ×₃ b_j‖²
//! ```
//!
//! where `a_i` and `b_i` are rows of `I_m` and `U_m`, with the multiplicative
//! update `A ← A ⊙ (H + αA0 + λ1 Q + λ2 P) ⊘ (G + (α+β)A + λ1 U + λ2 V)`.
//! The pair sums inside `Q, U, P, V` collapse to small anchor-by-anchor
//! matrices computed once per solve.

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::AdjacencySet;
use crate::matrix::{DenseMatrix, MatrixOperand, SparseMatrix};
use crate::tensor::{mode_product_sparse, DenseTensor3, Mode, SparseTensor3};

pub const INIT_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub init_noise_scale: f64,
    pub seed: u64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.005,
            beta: 0.001,
            lambda1: 0.1,
            lambda2: 0.05,
            max_iters: 2000,
            rel_tol: 1e-5,
            init_noise_scale: 0.01,
            seed: 0,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("init_noise_scale", self.init_noise_scale),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("must be a nonnegative number, got {v}")));
            }
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::param("rel_tol", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionState {
    pub a: DenseTensor3,
    /// Objective before the first update and after every update.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Entries whose update was skipped because the denominator vanished.
    pub skipped_updates: usize,
}

/// `Mᵀ W M` and `Mᵀ D M` with `D` the diagonal of row sums of `W`.
pub fn pair_contractions(m: &SparseMatrix, w: &SparseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let dense = m.to_dense();
    let mt = m.transpose();
    let wm = w.mul_dense(&dense)?;
    let q = mt.mul_dense(&wm)?;
    let d = w.row_sums();
    let dm = SparseMatrix::diagonal(&d)?.mul_dense(&dense)?;
    let u = mt.mul_dense(&dm)?;
    Ok((q, u))
}

/// The same contractions without materializing `W = M Λ⁻¹ Mᵀ`:
/// `Mᵀ W M = (MᵀM) Λ⁺ (MᵀM)` and `Mᵀ D M = Mᵀ diag(r) M`, where `r` are the row
/// sums of `M` over columns with positive `Λ`.
pub fn implicit_pair_contractions(m: &SparseMatrix, lambda: &[f64]) -> Result<(DenseMatrix, DenseMatrix)> {
    let gram = m.to_dense().gram();
    let inv: Vec<f64> = lambda.iter().map(|&l| if l > 0.0 { 1.0 / l } else { 0.0 }).collect();
    let scaled = SparseMatrix::diagonal(&inv)?.mul_dense(&gram)?;
    let q = gram.matmul(&scaled)?;
    let r: Vec<f64> = (0..m.rows())
        .map(|i| m.row_entries(i).filter(|&(a, _)| lambda[a] > 0.0).map(|(_, v)| v).sum())
        .collect();
    let dm = SparseMatrix::diagonal(&r)?.mul_dense(&m.to_dense())?;
    let u = m.transpose().mul_dense(&dm)?;
    Ok((q, u))
}

/// Tensor-valued pieces of the update at one iterate.
#[derive(Clone, Debug)]
pub struct Intermediates {
    pub g: DenseTensor3,
    pub q: DenseTensor3,
    pub u: DenseTensor3,
    pub p: DenseTensor3,
    pub v: DenseTensor3,
}

/// Everything that does not depend on `A`, computed once per solve.
#[derive(Clone, Debug)]
pub struct Solver<'a> {
    cfg: &'a CompletionConfig,
    a0: &'a DenseTensor3,
    dims: (usize, usize, usize),
    t_norm_sq: f64,
    h: DenseTensor3,
    tag_gram: DenseMatrix,
    image_gram: DenseMatrix,
    user_gram: DenseMatrix,
    image_q: DenseMatrix,
    image_u: DenseMatrix,
    user_p: DenseMatrix,
    user_v: DenseMatrix,
}

fn check_square(m: &SparseMatrix, n: usize, context: &'static str) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            context,
            expected: (n, n, 0),
            found: (m.rows(), m.cols(), 0),
        });
    }
    Ok(())
}

fn check_shape(m: &SparseMatrix, shape: (usize, usize), context: &'static str) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::ShapeMismatch {
            context,
            expected: (shape.0, shape.1, 0),
            found: (m.rows(), m.cols(), 0),
        });
    }
    Ok(())
}

impl<'a> Solver<'a> {
    pub fn new(
        t: &SparseTensor3,
        a0: &'a DenseTensor3,
        adj: &AdjacencySet,
        cfg: &'a CompletionConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let (n_tags, n_images, n_users) = t.dims();
        let dims = a0.dims();
        let (m_tags, m_images, m_users) = dims;
        if m_tags != n_tags {
            return Err(Error::ShapeMismatch {
                context: "anchor tensor tag mode",
                expected: (n_tags, m_images, m_users),
                found: dims,
            });
        }
        check_square(&adj.t, n_tags, "tag adjacency T")?;
        check_shape(&adj.i_m, (n_images, m_images), "image inter-adjacency I_m")?;
        check_shape(&adj.u_m, (n_users, m_users), "user inter-adjacency U_m")?;
        check_square(&adj.w_i, n_images, "image intra-adjacency W_I")?;
        check_square(&adj.w_u, n_users, "user intra-adjacency W_U")?;

        // Contract the image mode first: it shrinks the most.
        let h = mode_product_sparse(t, &adj.i_m.transpose(), Mode::Two)?
            .mode_product(&adj.u_m.transpose(), Mode::Three)?
            .mode_product(&adj.t.transpose(), Mode::One)?;
        let (image_q, image_u) = pair_contractions(&adj.i_m, &adj.w_i)?;
        let (user_p, user_v) = pair_contractions(&adj.u_m, &adj.w_u)?;
        Ok(Self {
            cfg,
            a0,
            dims,
            t_norm_sq: t.frob_norm_sq(),
            h,
            tag_gram: adj.t.to_dense().gram(),
            image_gram: adj.i_m.to_dense().gram(),
            user_gram: adj.u_m.to_dense().gram(),
            image_q,
            image_u,
            user_p,
            user_v,
        })
    }

    fn check(&self, a: &DenseTensor3) -> Result<()> {
        if a.dims() != self.dims {
            return Err(Error::ShapeMismatch {
                context: "anchor tensor",
                expected: self.dims,
                found: a.dims(),
            });
        }
        Ok(())
    }

    /// `T ×₁ T_tagᵀ ×₂ I_mᵀ ×₃ U_mᵀ`.
    pub fn h(&self) -> &DenseTensor3 {
        &self.h
    }

    pub fn intermediates(&self, a: &DenseTensor3) -> Result<Intermediates> {
        self.check(a)?;
        let g = a
            .mode_product(&self.tag_gram, Mode::One)?
            .mode_product(&self.image_gram, Mode::Two)?
            .mode_product(&self.user_gram, Mode::Three)?;
        Ok(Intermediates {
            g,
            q: a.mode_product(&self.image_q, Mode::Two)?,
            u: a.mode_product(&self.image_u, Mode::Two)?,
            p: a.mode_product(&self.user_p, Mode::Three)?,
            v: a.mode_product(&self.user_v, Mode::Three)?,
        })
    }

    /// Θ evaluated from the intermediates at `a`.
    pub fn objective_at(&self, a: &DenseTensor3, im: &Intermediates) -> f64 {
        let c = self.cfg;
        let fit = self.t_norm_sq - 2.0 * self.h.dot(a) + a.dot(&im.g);
        let anchor = a.sub(self.a0).frob_norm_sq();
        let graph_i = a.dot(&im.u) - a.dot(&im.q);
        let graph_u = a.dot(&im.v) - a.dot(&im.p);
        fit + c.alpha * anchor + c.beta * a.frob_norm_sq() + c.lambda1 * graph_i + c.lambda2 * graph_u
    }

    pub fn objective(&self, a: &DenseTensor3) -> Result<f64> {
        let im = self.intermediates(a)?;
        Ok(self.objective_at(a, &im))
    }

    /// Numerator and denominator of the multiplicative update.
    pub fn update_terms(&self, a: &DenseTensor3, im: &Intermediates) -> (DenseTensor3, DenseTensor3) {
        let c = self.cfg;
        let mut num = self.h.clone();
        num.axpy(c.alpha, self.a0);
        num.axpy(c.lambda1, &im.q);
        num.axpy(c.lambda2, &im.p);
        let mut den = im.g.clone();
        den.axpy(c.alpha + c.beta, a);
        den.axpy(c.lambda1, &im.u);
        den.axpy(c.lambda2, &im.v);
        (num, den)
    }

    /// `∂Θ/∂A = 2 (denominator − numerator)`.
    pub fn gradient(&self, a: &DenseTensor3) -> Result<DenseTensor3> {
        let im = self.intermediates(a)?;
        let (num, den) = self.update_terms(a, &im);
        Ok(den.sub(&num).scaled(2.0))
    }

    /// One multiplicative update in place. Returns the number of entries left
    /// unchanged because their denominator was zero with a positive numerator.
    pub fn update(&self, a: &mut DenseTensor3, im: &Intermediates) -> usize {
        let (num, den) = self.update_terms(a, im);
        a.values_mut()
            .par_iter_mut()
            .zip(num.values().par_iter().zip(den.values().par_iter()))
            .map(|(x, (&n, &d))| {
                if d > 0.0 {
                    *x *= n / d;
                    0
                } else {
                    usize::from(n > 0.0)
                }
            })
            .sum()
    }

    /// `A0 + E` with `E` uniform on `(−ε, ε)`, clamped to a small positive floor.
    pub fn initial(&self) -> DenseTensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let eps = self.cfg.init_noise_scale;
        let mut a = self.a0.clone();
        for x in a.values_mut() {
            if eps > 0.0 {
                *x += rng.random_range(-eps..eps);
            }
            *x = x.max(INIT_FLOOR);
        }
        a
    }

    /// Iterate from `state` until the relative change of Θ drops below
    /// `rel_tol` or `max_iters` updates have been made in total.
    pub fn run(&self, mut state: CompletionState) -> Result<CompletionState> {
        self.check(&state.a)?;
        loop {
            let im = self.intermediates(&state.a)?;
            let theta = self.objective_at(&state.a, &im);
            if !theta.is_finite() {
                return Err(Error::Numerical(format!(
                    "objective became {theta} at iteration {}",
                    state.iterations
                )));
            }
            let prev = state.trace.last().copied();
            state.trace.push(theta);
            if let Some(prev) = prev {
                if prev == 0.0 || (theta - prev).abs() / prev.abs() < self.cfg.rel_tol {
                    break;
                }
            }
            if state.iterations >= self.cfg.max_iters {
                warn!("completion stopped at max_iters = {} before converging", self.cfg.max_iters);
                break;
            }
            state.skipped_updates += self.update(&mut state.a, &im);
            state.iterations += 1;
            if state.iterations % 100 == 0 {
                debug!("iteration {}: objective {theta}", state.iterations);
            }
        }
        if state.skipped_updates > 0 {
            warn!("{} updates skipped on a zero denominator", state.skipped_updates);
        }
        Ok(state)
    }

    pub fn solve(&self) -> Result<CompletionState> {
        self.run(CompletionState {
            a: self.initial(),
            trace: Vec::new(),
            iterations: 0,
            skipped_updates: 0,
        })
    }
}

pub fn objective(
    a: &DenseTensor3,
    t: &SparseTensor3,
    a0: &DenseTensor3,
    adj: &AdjacencySet,
    cfg: &CompletionConfig,
) -> Result<f64> {
    Solver::new(t, a0, adj, cfg)?.objective(a)
}

/// Θ evaluated term by term from its definition, forming the reconstruction
/// and every pairwise difference explicitly. Quadratic in the number of
/// non-anchors; meant for checking the fast path.
pub fn objective_direct(
    a: &DenseTensor3,
    t: &SparseTensor3,
    a0: &DenseTensor3,
    adj: &AdjacencySet,
    cfg: &CompletionConfig,
) -> Result<f64> {
    let solver = Solver::new(t, a0, adj, cfg)?;
    solver.check(a)?;
    let recon = a
        .mode_product(&adj.t, Mode::One)?
        .mode_product(&adj.i_m, Mode::Two)?
        .mode_product(&adj.u_m, Mode::Three)?;
    let fit = recon.sub(&t.to_dense()).frob_norm_sq();
    let by_image = a.mode_product(&adj.i_m, Mode::Two)?;
    let by_user = a.mode_product(&adj.u_m, Mode::Three)?;
    let (n1, _, n3) = by_image.dims();
    let mut graph_i = 0.0;
    for (i, j, w) in adj.w_i.triplets() {
        let mut d = 0.0;
        for t in 0..n1 {
            for k in 0..n3 {
                let x = by_image.get(t, i, k) - by_image.get(t, j, k);
                d += x * x;
            }
        }
        graph_i += w * d;
    }
    let (u1, u2, _) = by_user.dims();
    let mut graph_u = 0.0;
    for (i, j, w) in adj.w_u.triplets() {
        let mut d = 0.0;
        for t in 0..u1 {
            for m in 0..u2 {
                let x = by_user.get(t, m, i) - by_user.get(t, m, j);
                d += x * x;
            }
        }
        graph_u += w * d;
    }
    Ok(fit
        + cfg.alpha * a.sub(a0).frob_norm_sq()
        + cfg.beta * a.frob_norm_sq()
        + 0.5 * cfg.lambda1 * graph_i
        + 0.5 * cfg.lambda2 * graph_u)
}

pub fn gradient(
    a: &DenseTensor3,
    t: &SparseTensor3,
    a0: &DenseTensor3,
    adj: &AdjacencySet,
    cfg: &CompletionConfig,
) -> Result<DenseTensor3> {
    Solver::new(t, a0, adj, cfg)?.gradient(a)
}

/// One update of `state`, appending the objective at the new iterate.
pub fn multiplicative_step(
    state: &CompletionState,
    t: &SparseTensor3,
    a0: &DenseTensor3,
    adj: &AdjacencySet,
    cfg: &CompletionConfig,
) -> Result<CompletionState> {
    let solver = Solver::new(t, a0, adj, cfg)?;
    let mut next = state.clone();
    let im = solver.intermediates(&next.a)?;
    next.skipped_updates += solver.update(&mut next.a, &im);
    next.iterations += 1;
    next.trace.push(solver.objective(&next.a)?);
    Ok(next)
}

pub fn solve(
    t: &SparseTensor3,
    a0: &DenseTensor3,
    adj: &AdjacencySet,
    cfg: &CompletionConfig,
) -> Result<CompletionState> {
    Solver::new(t, a0, adj, cfg)?.solve()
}

/// `iter,objective` rows.
pub fn format_trace(trace: &[f64]) -> String {
    let mut s = String::from("iter,objective\n");
    for (i, v) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{v:e}\n"));
    }
    s
}
