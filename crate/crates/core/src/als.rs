//! Alternating least squares for CP decomposition, with an exact solver and
//! two sketched ones: STS-CP (exact Khatri-Rao leverage sampling) and
//! CP-ARLS-LEV (product of per-factor leverage distributions).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{dot, gram, hadamard_chain, pinv_psd, Matrix};
use crate::error::{Error, Result};
use crate::krp::KrpSampler;
use crate::lstsq::{product_lev_sample, residual_epsilon, solve_sampled, SketchConfig};
use crate::tensor::{fit, KruskalTensor, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Exact,
    StsCp,
    CpArlsLev,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Exact => "exact",
            Solver::StsCp => "sts-cp",
            Solver::CpArlsLev => "cp-arls-lev",
        })
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Solver::Exact),
            "sts-cp" => Ok(Solver::StsCp),
            "cp-arls-lev" => Ok(Solver::CpArlsLev),
            other => Err(Error::InvalidInput(format!("unknown solver {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocess {
    #[default]
    None,
    /// `x -> log(1 + x)` on stored values.
    Log,
}

impl FromStr for Preprocess {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Preprocess::None),
            "log" => Ok(Preprocess::Log),
            other => Err(Error::InvalidInput(format!("unknown preprocessing {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AlsOptions {
    pub max_rounds: usize,
    /// Rounds between fit evaluations.
    pub epoch_length: usize,
    pub stop_tolerance: f64,
    pub solver: Solver,
    pub sketch: SketchConfig,
    pub preprocess: Preprocess,
    /// Evaluate the fit after every round, not only at epoch ends.
    pub fit_every_round: bool,
    /// Solve every subproblem exactly as well and report the sketched
    /// solution's residual inflation.
    pub epsilon_oracle: bool,
}

impl Default for AlsOptions {
    fn default() -> Self {
        AlsOptions {
            max_rounds: 100,
            epoch_length: 5,
            stop_tolerance: 1e-4,
            solver: Solver::Exact,
            sketch: SketchConfig::default(),
            preprocess: Preprocess::None,
            fit_every_round: false,
            epsilon_oracle: false,
        }
    }
}

impl AlsOptions {
    fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 || self.epoch_length == 0 {
            return Err(Error::InvalidInput("round counts must be positive".into()));
        }
        if !(self.stop_tolerance > 0.0) {
            return Err(Error::InvalidInput("stop tolerance must be positive".into()));
        }
        if self.sketch.samples == 0 {
            return Err(Error::InvalidInput("sample count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub mode: usize,
    pub epsilon: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub fit: Option<f64>,
    pub solves: Vec<SolveRecord>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct AlsResult {
    pub model: KruskalTensor,
    pub rounds: Vec<RoundRecord>,
    pub epoch_fits: Vec<f64>,
    pub final_fit: f64,
    pub converged: bool,
}

/// True once the best fit of the last three epochs improves on the best
/// earlier fit by no more than `tol`.
pub fn epoch_rule_stops(epoch_fits: &[f64], tol: f64) -> bool {
    let t = epoch_fits.len();
    if t < 4 {
        return false;
    }
    let best = |s: &[f64]| s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    best(&epoch_fits[t - 3..]) - best(&epoch_fits[..t - 3]) <= tol
}

/// Runs ALS with `opts.solver`. Factors start Gaussian with unit columns.
pub fn decompose<G: Rng + ?Sized>(tensor: &Tensor, rank: usize, opts: &AlsOptions, rng: &mut G) -> Result<AlsResult> {
    opts.validate()?;
    if rank == 0 {
        return Err(Error::InvalidInput("rank must be positive".into()));
    }
    let pre;
    let tensor = match opts.preprocess {
        Preprocess::None => tensor,
        Preprocess::Log => {
            pre = tensor.log1p();
            &pre
        }
    };
    let t2 = tensor.norm_sq();
    if t2 == 0.0 {
        return Err(Error::InvalidInput("tensor is zero".into()));
    }
    let n = tensor.order();
    if n < 2 {
        return Err(Error::InvalidInput("tensor needs at least two modes".into()));
    }

    let mut model = KruskalTensor::random(tensor.dims(), rank, rng)?;
    let mut grams: Vec<Matrix> = model.factors.iter().map(gram).collect();
    let mut sampler = match opts.solver {
        Solver::StsCp => Some(KrpSampler::new(&model.factors)?),
        _ => None,
    };

    let mut rounds = Vec::new();
    let mut epoch_fits = Vec::new();
    let mut converged = false;
    for round in 1..=opts.max_rounds {
        let start = Instant::now();
        let mut solves = Vec::with_capacity(n);
        for j in 0..n {
            let t0 = Instant::now();
            let others: Vec<&Matrix> = (0..n).filter(|&k| k != j).map(|k| &grams[k]).collect();
            let g = hadamard_chain(&others, rank, rank)?;
            let exact = |model: &KruskalTensor| -> Result<(Matrix, Matrix)> {
                let m = tensor.mttkrp(j, &model.factors)?;
                let x = m.matmul(&pinv_psd(&g)?)?;
                Ok((m, x))
            };

            let (x, epsilon) = match opts.solver {
                Solver::Exact => {
                    let (_, x) = exact(&model)?;
                    (x, opts.epsilon_oracle.then_some(0.0))
                }
                Solver::StsCp | Solver::CpArlsLev => {
                    let batch = match &sampler {
                        Some(s) => s.sample(Some(j), opts.sketch.samples, rng)?,
                        None => product_lev_sample(&model.factors, Some(j), opts.sketch.samples, rng)?,
                    };
                    let rhs = tensor.sampled_rhs_rows(j, &batch)?;
                    let x = solve_sampled(&batch, &rhs)?.transpose();
                    let epsilon = if opts.epsilon_oracle {
                        let (m, x_opt) = exact(&model)?;
                        let best = subproblem_residual(t2, &m, &g, &x_opt);
                        let got = subproblem_residual(t2, &m, &g, &x);
                        Some(residual_epsilon(best, got, t2.sqrt()))
                    } else {
                        None
                    };
                    (x, epsilon)
                }
            };

            let mut u = x;
            let norms = u.column_norms();
            u.scale_columns_inv(&norms);
            model.sigma = norms;
            grams[j] = gram(&u);
            if let Some(s) = sampler.as_mut() {
                s.update_factor(j, &u)?;
            }
            model.factors[j] = u;
            solves.push(SolveRecord {
                mode: j,
                epsilon,
                seconds: t0.elapsed().as_secs_f64(),
            });
        }

        let at_epoch = round % opts.epoch_length == 0;
        let fit_now = if at_epoch || opts.fit_every_round {
            Some(fit(&model, tensor)?)
        } else {
            None
        };
        rounds.push(RoundRecord {
            round,
            fit: fit_now,
            solves,
            seconds: start.elapsed().as_secs_f64(),
        });
        if at_epoch {
            epoch_fits.push(fit_now.expect("fit computed at epoch end"));
            if epoch_rule_stops(&epoch_fits, opts.stop_tolerance) {
                converged = true;
                break;
            }
        }
    }

    let final_fit = match rounds.last().and_then(|r| r.fit) {
        Some(f) => f,
        None => fit(&model, tensor)?,
    };
    Ok(AlsResult {
        model,
        rounds,
        epoch_fits,
        final_fit,
        converged,
    })
}

/// `‖mat(T, j) - X U_{≠j}^T‖_F` from the MTTKRP `M` and Gram `G` of the
/// design.
fn subproblem_residual(t2: f64, m: &Matrix, g: &Matrix, x: &Matrix) -> f64 {
    let cross = dot(m.data(), x.data());
    let quad: f64 = (0..x.rows())
        .map(|i| {
            let xi = x.row(i);
            xi.iter().enumerate().map(|(a, &v)| v * dot(g.row(a), xi)).sum::<f64>()
        })
        .sum();
    (t2 - 2.0 * cross + quad).max(0.0).sqrt()
}

fn with_solver(opts: &AlsOptions, solver: Solver) -> AlsOptions {
    AlsOptions {
        solver,
        ..opts.clone()
    }
}

pub fn cp_als_exact<G: Rng + ?Sized>(tensor: &Tensor, rank: usize, opts: &AlsOptions, rng: &mut G) -> Result<AlsResult> {
    decompose(tensor, rank, &with_solver(opts, Solver::Exact), rng)
}

pub fn sts_cp<G: Rng + ?Sized>(tensor: &Tensor, rank: usize, opts: &AlsOptions, rng: &mut G) -> Result<AlsResult> {
    decompose(tensor, rank, &with_solver(opts, Solver::StsCp), rng)
}

pub fn cp_arls_lev<G: Rng + ?Sized>(tensor: &Tensor, rank: usize, opts: &AlsOptions, rng: &mut G) -> Result<AlsResult> {
    decompose(tensor, rank, &with_solver(opts, Solver::CpArlsLev), rng)
}

/// Ground-truth Kruskal tensor with Gaussian factors plus Gaussian noise of
/// norm `noise · ‖T‖`.
pub fn synthetic_tensor<G: Rng + ?Sized>(dims: &[usize], rank: usize, noise: f64, rng: &mut G) -> Result<Tensor> {
    let truth = KruskalTensor::random(dims, rank, rng)?;
    let clean = truth.to_dense()?;
    let e: Vec<f64> = clean
        .values()
        .iter()
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let scale = if noise > 0.0 {
        noise * dot(clean.values(), clean.values()).sqrt() / dot(&e, &e).sqrt()
    } else {
        0.0
    };
    let values = clean.values().iter().zip(&e).map(|(v, z)| v + scale * z).collect();
    Ok(Tensor::Dense(crate::tensor::DenseTensor::new(dims.to_vec(), values)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::khatri_rao_chain;
    use crate::tensor::DenseTensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn epoch_rule() {
        assert!(!epoch_rule_stops(&[0.1, 0.2, 0.3], 1e-4));
        assert!(!epoch_rule_stops(&[0.1, 0.2, 0.3, 0.4], 1e-4));
        assert!(!epoch_rule_stops(&[0.1, 0.5, 0.5, 0.5], 1e-4));
        assert!(epoch_rule_stops(&[0.1, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5], 1e-4));
        assert!(epoch_rule_stops(&[0.5, 0.4, 0.5, 0.50005], 1e-4));
        assert!(!epoch_rule_stops(&[0.5, 0.4, 0.5, 0.5002], 1e-4));
    }

    #[test]
    fn parse_enums() {
        assert_eq!("sts-cp".parse::<Solver>().unwrap(), Solver::StsCp);
        assert_eq!(Solver::CpArlsLev.to_string(), "cp-arls-lev");
        assert!("qr".parse::<Solver>().is_err());
        assert_eq!("log".parse::<Preprocess>().unwrap(), Preprocess::Log);
    }

    fn rank_one(dims: &[usize], seed: u64) -> Tensor {
        let mut k = KruskalTensor::random(dims, 1, &mut rng(seed)).unwrap();
        k.sigma = vec![2.0];
        Tensor::Dense(k.to_dense().unwrap())
    }

    #[test]
    fn exact_recovers_rank_one() {
        let t = rank_one(&[4, 5, 3], 1);
        let opts = AlsOptions {
            max_rounds: 5,
            ..Default::default()
        };
        let r = cp_als_exact(&t, 1, &opts, &mut rng(2)).unwrap();
        assert!(r.final_fit >= 1.0 - 1e-6, "fit {}", r.final_fit);
        assert!((r.model.sigma[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn sts_cp_recovers_rank_one() {
        let t = rank_one(&[6, 5, 4], 3);
        let opts = AlsOptions {
            max_rounds: 10,
            sketch: SketchConfig::new(64, 0.1, 0.1, 0).unwrap(),
            ..Default::default()
        };
        let r = sts_cp(&t, 1, &opts, &mut rng(4)).unwrap();
        assert!(r.final_fit >= 0.999, "fit {}", r.final_fit);
    }

    #[test]
    fn exact_fit_is_monotone() {
        let mut g = rng(5);
        let n = 64;
        let t = Tensor::Dense(
            DenseTensor::new(vec![4, 4, 4], (0..n).map(|_| g.random_range(-1.0..1.0)).collect()).unwrap(),
        );
        let opts = AlsOptions {
            max_rounds: 30,
            fit_every_round: true,
            ..Default::default()
        };
        let r = cp_als_exact(&t, 4, &opts, &mut g).unwrap();
        let fits: Vec<f64> = r.rounds.iter().map(|x| x.fit.unwrap()).collect();
        assert!(fits.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{fits:?}");
    }

    /// ALS with the design `U_N ⊙ ... ⊙ U_1` (without `U_j`) materialized.
    fn naive_rounds(t: &DenseTensor, init: &KruskalTensor, rounds: usize) -> KruskalTensor {
        let mut k = init.clone();
        let n = t.dims().len();
        for _ in 0..rounds {
            for j in 0..n {
                let rev: Vec<&Matrix> = (0..n).rev().filter(|&i| i != j).map(|i| &k.factors[i]).collect();
                let a = khatri_rao_chain(&rev).unwrap();
                let rhs = t.unfold(j).unwrap().matmul(&a).unwrap();
                let mut x = rhs.matmul(&pinv_psd(&gram(&a)).unwrap()).unwrap();
                let norms = x.column_norms();
                x.scale_columns_inv(&norms);
                k.sigma = norms;
                k.factors[j] = x;
            }
        }
        k
    }

    #[test]
    fn exact_matches_materialized_solver() {
        for seed in 0..3 {
            let mut g = rng(100 + seed);
            let t = DenseTensor::new(vec![3, 3, 3], (0..27).map(|_| g.random_range(-1.0..1.0)).collect()).unwrap();
            let init = KruskalTensor::random(&[3, 3, 3], 2, &mut rng(seed)).unwrap();
            for rounds in 1..=3 {
                let opts = AlsOptions {
                    max_rounds: rounds,
                    ..Default::default()
                };
                let r = cp_als_exact(&Tensor::Dense(t.clone()), 2, &opts, &mut rng(seed)).unwrap();
                let naive = naive_rounds(&t, &init, rounds);
                for (a, b) in r.model.factors.iter().zip(&naive.factors) {
                    assert!(a.max_abs_diff(b) < 1e-8);
                }
                assert!(r.model.sigma.iter().zip(&naive.sigma).all(|(a, b)| (a - b).abs() < 1e-8));
            }
        }
    }

    #[test]
    fn exact_solver_epsilon_is_zero_and_sketched_is_not() {
        let t = synthetic_tensor(&[8, 8, 8], 3, 0.1, &mut rng(6)).unwrap();
        let base = AlsOptions {
            max_rounds: 2,
            epsilon_oracle: true,
            sketch: SketchConfig::new(64, 0.1, 0.1, 0).unwrap(),
            ..Default::default()
        };
        let e = cp_als_exact(&t, 3, &base, &mut rng(7)).unwrap();
        assert!(e.rounds.iter().flat_map(|r| &r.solves).all(|s| s.epsilon == Some(0.0)));
        let s = cp_arls_lev(&t, 3, &base, &mut rng(7)).unwrap();
        assert!(s.rounds.iter().flat_map(|r| &r.solves).all(|s| s.epsilon.unwrap() >= 0.0));
        assert_eq!(s.rounds[0].solves.len(), 3);
    }

    #[test]
    fn same_seed_same_model() {
        let t = synthetic_tensor(&[6, 7, 5], 2, 0.01, &mut rng(8)).unwrap();
        let opts = AlsOptions {
            max_rounds: 4,
            solver: Solver::StsCp,
            sketch: SketchConfig::new(100, 0.1, 0.1, 0).unwrap(),
            ..Default::default()
        };
        let a = decompose(&t, 2, &opts, &mut rng(9)).unwrap();
        let b = decompose(&t, 2, &opts, &mut rng(9)).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn sparse_and_dense_exact_agree() {
        let t = synthetic_tensor(&[5, 4, 6], 2, 0.05, &mut rng(10)).unwrap();
        let sparse = match &t {
            Tensor::Dense(d) => Tensor::Sparse(d.to_sparse()),
            _ => unreachable!(),
        };
        let opts = AlsOptions {
            max_rounds: 3,
            ..Default::default()
        };
        let a = cp_als_exact(&t, 2, &opts, &mut rng(1)).unwrap();
        let b = cp_als_exact(&sparse, 2, &opts, &mut rng(1)).unwrap();
        for (x, y) in a.model.factors.iter().zip(&b.model.factors) {
            assert!(x.max_abs_diff(y) < 1e-9);
        }
    }

    #[test]
    fn converges_and_stops_early() {
        let t = rank_one(&[4, 4, 4], 11);
        let opts = AlsOptions {
            max_rounds: 200,
            ..Default::default()
        };
        let r = cp_als_exact(&t, 1, &opts, &mut rng(12)).unwrap();
        assert!(r.converged);
        assert_eq!(r.rounds.len(), 20);
        assert_eq!(r.epoch_fits.len(), 4);
    }

    #[test]
    fn rejects_bad_options() {
        let t = rank_one(&[2, 2], 0);
        let opts = AlsOptions {
            max_rounds: 0,
            ..Default::default()
        };
        assert!(decompose(&t, 1, &opts, &mut rng(0)).is_err());
        assert!(decompose(&t, 0, &AlsOptions::default(), &mut rng(0)).is_err());
    }

    #[test]
    fn synthetic_noise_level() {
        let clean = synthetic_tensor(&[5, 5, 5], 2, 0.0, &mut rng(13)).unwrap();
        let noisy = synthetic_tensor(&[5, 5, 5], 2, 0.1, &mut rng(13)).unwrap();
        let (Tensor::Dense(c), Tensor::Dense(n)) = (clean, noisy) else { unreachable!() };
        let diff: f64 = c.values().iter().zip(n.values()).map(|(a, b)| (a - b).powi(2)).sum();
        let norm: f64 = c.values().iter().map(|v| v * v).sum();
        assert!(((diff / norm).sqrt() - 0.1).abs() < 1e-12);
    }
}
