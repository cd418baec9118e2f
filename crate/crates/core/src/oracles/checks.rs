//! Randomized checks of the decomposition, projection, lock, loss gradient
//! and drift recurrence against the reference kernels in [`super::naive`].

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{finite_diff_gradient, max_relative_error, naive, scaled_max_error};
use crate::error::Result;
use crate::gsd::{energy_truncate, entanglement_spectrum, partition_spectrum, BlockBases, ExcisionBases};
use crate::model::{encode, infonce_grad, infonce_loss, init_params, ForgetLock, FrozenBackbone, Modality, ModelConfig, ParamVector};
use crate::numerics::{dot, norm, DenseMatrix};
use crate::rng::{derive_seed, rng_from, Rng as ChaRng};
use crate::unlearn::{bilateral_excision_step, simulate_recurrence, GradientSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleReport {
    pub fn new(name: &str, instances: usize, max_deviation: f64, tolerance: f64) -> Self {
        OracleReport {
            name: name.to_string(),
            instances,
            max_deviation,
            tolerance,
            passed: max_deviation <= tolerance,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {} instances, max deviation {:.3e} (tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.max_deviation,
            self.tolerance
        )
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaRng) -> DenseMatrix {
    let normal = rand_distr::StandardNormal;
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(normal))
}

fn unit_vector(d: usize, rng: &mut ChaRng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Forget and retain update matrices in `R^d` whose column spaces overlap
/// partially, with a random mixing strength.
pub fn random_instance(d: usize, rng: &mut ChaRng) -> (DenseMatrix, DenseMatrix) {
    let p = rng.random_range(2..=(d / 2).max(2));
    let q = rng.random_range(2..=(d / 2).max(2));
    let g_f = gaussian_matrix(d, p + 2, rng);
    let mix = gaussian_matrix(p + 2, q, rng);
    let noise = rng.random_range(0.0..2.0);
    let g_r = naive::matmul(&g_f, &mix).add(&gaussian_matrix(d, q, rng).scaled(noise)).expect("same shape");
    (g_f, g_r)
}

fn naive_mat_t_vec(b: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    naive::mat_vec(&b.transpose(), x)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_bases(d: usize, rng: &mut ChaRng, delta: f64, tau: f64) -> Result<(BlockBases, DenseMatrix)> {
    let (g_f, g_r) = random_instance(d, rng);
    let f = energy_truncate(&g_f, tau)?;
    let r = energy_truncate(&g_r, tau)?;
    let spec = entanglement_spectrum(&f, &r)?;
    Ok((partition_spectrum(&spec, delta), r.phi))
}

/// Idempotency, self-adjointness and complement preservation of `Π_u`,
/// compared against the dense `B_u B_uᵀ`.
pub fn projector_laws(trials: usize, max_dim: usize, seed: u64) -> Result<OracleReport> {
    let worst: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let mut rng = rng_from(derive_seed(seed, &format!("projector{t}")));
            let d = rng.random_range(4..=max_dim.max(4));
            let delta = rng.random_range(0.0..1.0);
            let (b, _) = random_bases(d, &mut rng, delta, 0.95)?;
            let p = naive::projector_matrix(&b.b_u);
            let x = unit_vector(d, &mut rng);
            let y = unit_vector(d, &mut rng);
            let px = b.project(&x)?;
            let ppx = b.project(&px)?;
            let py = b.project(&y)?;
            let rest: Vec<f64> = x.iter().zip(&px).map(|(a, c)| a - c).collect();
            let mut dev = max_abs_diff(&px, &ppx);
            dev = dev.max((dot(&px, &y) - dot(&x, &py)).abs());
            dev = dev.max(norm(&b.project(&rest)?));
            dev = dev.max(max_abs_diff(&px, &naive::mat_vec(&p, &x)));
            let p2 = naive::matmul(&p, &p);
            dev = dev.max(p2.max_abs_diff(&p)?);
            dev = dev.max(p.transpose().max_abs_diff(&p)?);
            Ok(dev)
        })
        .collect::<Result<_>>()?;
    Ok(OracleReport::new("projector laws", trials, worst.into_iter().fold(0.0, f64::max), 1e-10))
}

/// `‖Π_u(w* − w_n)‖` per block after one excision step, on model-sized blocks.
pub fn exact_erasure(trials: usize, seed: u64) -> Result<OracleReport> {
    let cfg = ModelConfig { hidden_dim: 8, embed_dim: 4, lora_rank: 2, ..ModelConfig::default() };
    let mut rng = rng_from(derive_seed(seed, "erasure.bases"));
    let mut blocks = BTreeMap::new();
    for (key, len) in cfg.layout() {
        let g_f = gaussian_matrix(len, 6, &mut rng);
        let g_r = gaussian_matrix(len, 6, &mut rng).add(&g_f.scaled(0.7))?;
        let spec = entanglement_spectrum(&energy_truncate(&g_f, 0.95)?, &energy_truncate(&g_r, 0.95)?)?;
        blocks.insert(key, partition_spectrum(&spec, 0.9));
    }
    let bases = ExcisionBases { blocks };
    let w_n = init_params(&cfg, derive_seed(seed, "erasure.w_n"))?;
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = rng_from(derive_seed(seed, &format!("erasure{t}")));
        let mut w = w_n.clone();
        let scale = 10f64.powf(rng.random_range(-3.0..2.0));
        for (_, v) in w.iter_mut() {
            v.iter_mut().for_each(|x| *x += scale * rng.sample::<f64, _>(rand_distr::StandardNormal));
        }
        let w_star = bilateral_excision_step(&w, &w_n, &bases)?;
        let disp = w_star.sub(&w_n)?;
        for (key, b) in &bases.blocks {
            let c = naive_mat_t_vec(&b.b_u, disp.expect_block(key)?);
            worst = worst.max(norm(&c));
        }
    }
    Ok(OracleReport::new("exact erasure", trials, worst, 1e-10))
}

/// Energy identity in canonical coordinates, monotone `η_f` over a
/// 21-point grid and `η_f(1) ≥ τ_e`.
pub fn energy_and_eta_f(trials: usize, max_dim: usize, seed: u64) -> Result<OracleReport> {
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let devs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let mut rng = rng_from(derive_seed(seed, &format!("energy{t}")));
            let d = rng.random_range(6..=max_dim.max(6));
            let tau = rng.random_range(0.5..0.99);
            let (g_f, g_r) = random_instance(d, &mut rng);
            let f = energy_truncate(&g_f, tau)?;
            let spec = entanglement_spectrum(&f, &energy_truncate(&g_r, tau)?)?;
            let total = g_f.frobenius_sq();
            let mut dev: f64 = 0.0;
            // Canonical coordinates of every column carry the same energy as the forget basis.
            for j in 0..g_f.cols() {
                let g = g_f.col(j);
                let a = naive_mat_t_vec(&f.phi, g);
                let c = naive_mat_t_vec(&spec.canonical_dirs, g);
                dev = dev.max((dot(&a, &a) - dot(&c, &c)).abs() / total);
            }
            let mut prev = f64::NEG_INFINITY;
            for &delta in &grid {
                let b = partition_spectrum(&spec, delta);
                let (mut removed, mut ent) = (0.0, 0.0);
                let mut pyth: f64 = 0.0;
                for j in 0..g_f.cols() {
                    let g = g_f.col(j);
                    let u = naive_mat_t_vec(&b.b_u, g);
                    let e = naive_mat_t_vec(&b.b_e, g);
                    removed += dot(&u, &u);
                    ent += dot(&e, &e);
                    let pu = naive::mat_vec(&naive::projector_matrix(&b.b_u), g);
                    let rest: Vec<f64> = g.iter().zip(&pu).map(|(x, y)| x - y).collect();
                    pyth = pyth.max((dot(g, g) - dot(&pu, &pu) - dot(&rest, &rest)).abs() / total);
                }
                dev = dev.max(pyth);
                let eta = removed / total;
                dev = dev.max((removed + ent - f.retained_energy()).abs() / total);
                if eta < prev - 1e-12 {
                    dev = dev.max(prev - eta);
                }
                prev = eta;
            }
            let shortfall = (tau - prev).max(0.0);
            Ok(dev.max(shortfall))
        })
        .collect::<Result<_>>()?;
    Ok(OracleReport::new("energy identity and eta_f monotonicity", trials, devs.into_iter().fold(0.0, f64::max), 1e-8))
}

/// Worst relative excess of `‖Π_u v‖²` over `δ²` for random unit `v` in the
/// retain subspace, plus the dense-matrix bound `λ_max(Φ_rᵀΠ_uΦ_r) ≤ δ²`
/// at every grid point.
pub fn retention_bound(trials: usize, samples: usize, max_dim: usize, seed: u64) -> Result<OracleReport> {
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let devs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let mut rng = rng_from(derive_seed(seed, &format!("retention{t}")));
            let d = rng.random_range(6..=max_dim.max(6));
            let (g_f, g_r) = random_instance(d, &mut rng);
            let f = energy_truncate(&g_f, 0.95)?;
            let r = energy_truncate(&g_r, 0.95)?;
            let spec = entanglement_spectrum(&f, &r)?;
            let mut dev: f64 = 0.0;
            let delta = rng.random_range(0.05..1.0);
            let b = partition_spectrum(&spec, delta);
            for _ in 0..samples {
                let c = unit_vector(r.phi.cols(), &mut rng);
                let v = naive::mat_vec(&r.phi, &c);
                let u = naive_mat_t_vec(&b.b_u, &v);
                let excess = dot(&u, &u) - delta * delta * (1.0 + 1e-8);
                dev = dev.max(excess.max(0.0));
            }
            for &dg in &grid {
                let b = partition_spectrum(&spec, dg);
                let p = naive::projector_matrix(&b.b_u);
                let m = naive::matmul(&r.phi.transpose(), &naive::matmul(&p, &r.phi));
                let lam = naive::symmetric_eigenvalues(&m).into_iter().fold(0.0, f64::max);
                let eta_r = b.kappa_u.iter().fold(0.0f64, |m, k| m.max(k * k));
                dev = dev.max((lam - dg * dg * (1.0 + 1e-8)).max(0.0));
                dev = dev.max((eta_r - dg * dg).max(0.0));
                dev = dev.max((lam - eta_r).abs() - 1e-9).max(0.0);
            }
            Ok(dev)
        })
        .collect::<Result<_>>()?;
    Ok(OracleReport::new("retention bound", trials, devs.into_iter().fold(0.0, f64::max), 1e-14))
}

/// Principal-angle cosines against the eigenvalues of `Φ_fᵀ P_r Φ_f`, and
/// the planar closed form `κ = |cos θ|`.
pub fn principal_angles(trials: usize, max_dim: usize, seed: u64) -> Result<OracleReport> {
    let mut worst: f64 = 0.0;
    for i in 0..=32 {
        let theta = std::f64::consts::PI * i as f64 / 32.0;
        let f = energy_truncate(&DenseMatrix::from_columns(2, &[vec![1.0, 0.0]])?, 1.0)?;
        let r = energy_truncate(&DenseMatrix::from_columns(2, &[vec![theta.cos(), theta.sin()]])?, 1.0)?;
        let k = entanglement_spectrum(&f, &r)?.kappa[0];
        worst = worst.max((k - theta.cos().abs()).abs());
    }
    let devs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let mut rng = rng_from(derive_seed(seed, &format!("angles{t}")));
            let d = rng.random_range(4..=max_dim.max(4));
            let (g_f, g_r) = random_instance(d, &mut rng);
            let f = energy_truncate(&g_f, 0.9)?;
            let r = energy_truncate(&g_r, 0.9)?;
            let spec = entanglement_spectrum(&f, &r)?;
            let pr = naive::projector_matrix(&r.phi);
            let m = naive::matmul(&f.phi.transpose(), &naive::matmul(&pr, &f.phi));
            let mut eig = naive::symmetric_eigenvalues(&m);
            eig.sort_by(|a, b| b.total_cmp(a));
            Ok(spec
                .kappa
                .iter()
                .zip(&eig)
                .map(|(k, e)| (k * k - e.clamp(0.0, 1.0)).abs())
                .fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    worst = devs.into_iter().fold(worst, f64::max);
    Ok(OracleReport::new("principal angles", trials + 33, worst, 1e-10))
}

/// Lock zero set in both directions and analytic gradient against central
/// differences.
pub fn lock_characterization(trials: usize, seed: u64) -> Result<OracleReport> {
    let cfg = ModelConfig { input_dim_v: 4, input_dim_t: 4, hidden_dim: 6, embed_dim: 3, lora_rank: 2, ..ModelConfig::default() };
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = rng_from(derive_seed(seed, &format!("lock{t}")));
        let reference = init_params(&cfg, rng.random())?;
        let mut bases = BTreeMap::new();
        for (key, len) in cfg.layout() {
            let width = rng.random_range(1..4);
            let g_f = gaussian_matrix(len, width, &mut rng);
            let g_r = gaussian_matrix(len, 2, &mut rng);
            let spec = entanglement_spectrum(&energy_truncate(&g_f, 1.0)?, &energy_truncate(&g_r, 1.0)?)?;
            bases.insert(key, partition_spectrum(&spec, 1.0).b_u);
        }
        let lock = ForgetLock::new(bases.clone(), reference.clone())?;
        let excision = ExcisionBases {
            blocks: bases
                .iter()
                .map(|(k, b)| (*k, BlockBases { b_u: b.clone(), ..BlockBases::empty(b.rows()) }))
                .collect(),
        };
        let mut w = reference.clone();
        for (_, v) in w.iter_mut() {
            v.iter_mut().for_each(|x| *x += rng.random_range(-1.0..1.0));
        }
        // A displacement with its unique part removed sits in the zero set.
        let on = bilateral_excision_step(&w, &reference, &excision)?;
        worst = worst.max(lock.value(&on)?);
        // Adding any unique direction leaves it.
        let mut off = on.clone();
        let (key, b) = bases.iter().next().expect("non-empty layout");
        for (x, u) in off.block_mut(key).expect("layout").iter_mut().zip(b.col(0)) {
            *x += 1e-3 * u;
        }
        let v_off = lock.value(&off)?;
        if !(v_off > 0.0 && (v_off - 1e-6).abs() < 1e-12) {
            worst = worst.max(1.0);
        }
        let (_, g) = lock.value_and_grad(&w)?;
        let disp = w.sub(&reference)?;
        for (key, b) in &bases {
            let dense = naive::mat_vec(&naive::projector_matrix(b), disp.expect_block(key)?);
            let twice: Vec<f64> = dense.iter().map(|x| 2.0 * x).collect();
            worst = worst.max(max_abs_diff(g.expect_block(key)?, &twice));
        }
        let fd = finite_diff_gradient(|p| lock.value(p), &w, 1e-5)?;
        worst = worst.max(scaled_max_error(&g, &fd));
    }
    Ok(OracleReport::new("forget lock characterization", trials, worst, 1e-6))
}

/// Analytic InfoNCE gradient against central differences on random small
/// configurations; single-pair batches must give an exactly zero gradient.
pub fn infonce_gradient(trials: usize, seed: u64) -> Result<OracleReport> {
    let devs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let mut rng = rng_from(derive_seed(seed, &format!("infonce{t}")));
            let hidden = rng.random_range(4..9);
            let cfg = ModelConfig {
                input_dim_v: rng.random_range(3..8),
                input_dim_t: rng.random_range(3..8),
                hidden_dim: hidden,
                embed_dim: rng.random_range(2..6),
                lora_rank: rng.random_range(1..hidden.min(4)),
                n_adapter_blocks: rng.random_range(1..3),
                temperature: rng.random_range(0.2..1.5),
                seed: rng.random(),
            };
            let bb = FrozenBackbone::new(&cfg)?;
            let mut w = init_params(&cfg, rng.random())?;
            for (_, v) in w.iter_mut() {
                v.iter_mut().for_each(|x| *x += 0.3 * rng.random_range(-1.0..1.0));
            }
            let n = rng.random_range(2..7);
            let xv = gaussian_matrix(cfg.input_dim_v, n, &mut rng);
            let xt = gaussian_matrix(cfg.input_dim_t, n, &mut rng);
            let analytic = infonce_grad(&bb, &w, &xv, &xt)?.grad;
            let f = |p: &ParamVector| -> Result<f64> {
                let zv = encode(&bb, p, Modality::Visual, &xv)?;
                let zt = encode(&bb, p, Modality::Text, &xt)?;
                infonce_loss(&zv, &zt, cfg.temperature)
            };
            let fd = finite_diff_gradient(f, &w, 1e-5)?;
            let mut dev = max_relative_error(&analytic, &fd, 1e-8);
            let single = infonce_grad(&bb, &w, &xv.select_columns(&[0]), &xt.select_columns(&[0]))?.grad;
            if single.norm() != 0.0 {
                dev = f64::INFINITY;
            }
            Ok(dev)
        })
        .collect::<Result<_>>()?;
    Ok(OracleReport::new("infonce gradient", trials, devs.into_iter().fold(0.0, f64::max), 1e-4))
}

/// Worst-case recurrence iterates against `(G/2α)(1 − (1 − 2ηα)^t)` over a
/// grid of `(α, η)`, including the large-`t` limit.
pub fn recurrence_closed_form(g_u: f64, t_max: usize) -> Result<OracleReport> {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for &alpha in &[0.1, 0.25, 0.5, 1.0, 2.0, 4.0] {
        for &frac in &[0.05, 0.2, 0.5, 0.9] {
            let lr = frac / (2.0 * alpha);
            let d = simulate_recurrence(g_u, alpha, lr, t_max, GradientSequence::WorstCase)?;
            let c = 1.0 - 2.0 * lr * alpha;
            let mut pow = 1.0;
            for v in &d {
                let closed = g_u / (2.0 * alpha) * (1.0 - pow);
                worst = worst.max((v - closed).abs());
                pow *= c;
            }
            let limit = g_u / (2.0 * alpha);
            if c.powi(t_max as i32) < 1e-12 {
                worst = worst.max(((d[t_max] - limit).abs() - 1e-9).max(0.0));
            }
            n += 1;
        }
    }
    Ok(OracleReport::new("drift recurrence closed form", n, worst, 1e-12))
}

/// Dense kernels against the naive reference kernels.
pub fn dense_kernels(trials: usize, seed: u64) -> Result<OracleReport> {
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = rng_from(derive_seed(seed, &format!("kernels{t}")));
        let (m, k, n) = (rng.random_range(1..20), rng.random_range(1..20), rng.random_range(1..20));
        let a = gaussian_matrix(m, k, &mut rng);
        let b = gaussian_matrix(k, n, &mut rng);
        worst = worst.max(crate::numerics::matmul(&a, &b)?.max_abs_diff(&naive::matmul(&a, &b))?);
        let svd = crate::numerics::thin_svd(&a)?;
        let gram = naive::matmul(&a.transpose(), &a);
        let mut eig = naive::symmetric_eigenvalues(&gram);
        eig.sort_by(|x, y| y.total_cmp(x));
        for (s, e) in svd.singular_values.iter().zip(&eig) {
            worst = worst.max((s * s - e.max(0.0)).abs() / gram.max_abs().max(1.0));
        }
    }
    Ok(OracleReport::new("dense kernels", trials, worst, 1e-9))
}

/// The full suite behind `verify`.
pub fn verify_suite(seed: u64) -> Result<Vec<OracleReport>> {
    Ok(vec![
        dense_kernels(50, seed)?,
        projector_laws(200, 64, seed)?,
        exact_erasure(100, seed)?,
        principal_angles(200, 8, seed)?,
        energy_and_eta_f(50, 32, seed)?,
        retention_bound(50, 10_000, 8, seed)?,
        lock_characterization(20, seed)?,
        infonce_gradient(20, seed)?,
        recurrence_closed_form(1.0, 2000)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_pass_flag_follows_tolerance() {
        assert!(OracleReport::new("x", 1, 1e-11, 1e-10).passed);
        assert!(!OracleReport::new("x", 1, 1e-9, 1e-10).passed);
        assert!(OracleReport::new("x", 1, 0.0, 0.0).passed);
    }

    #[test]
    fn small_suite_passes() {
        for r in [
            projector_laws(20, 16, 1).unwrap(),
            exact_erasure(5, 1).unwrap(),
            principal_angles(30, 6, 1).unwrap(),
            energy_and_eta_f(5, 12, 1).unwrap(),
            retention_bound(5, 200, 8, 1).unwrap(),
            recurrence_closed_form(1.0, 500).unwrap(),
            dense_kernels(5, 1).unwrap(),
        ] {
            assert!(r.passed, "{}", r.line());
        }
    }

    #[test]
    fn orthogonal_complement_has_no_collateral() {
        let f = energy_truncate(&DenseMatrix::from_columns(3, &[vec![1.0, 0.0, 0.0]]).unwrap(), 1.0).unwrap();
        let r = energy_truncate(&DenseMatrix::from_columns(3, &[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap(), 1.0).unwrap();
        let b = partition_spectrum(&entanglement_spectrum(&f, &r).unwrap(), 0.5);
        for j in 0..r.phi.cols() {
            assert_eq!(norm(&b.project(r.phi.col(j)).unwrap()), 0.0);
        }
    }

    #[test]
    fn recurrence_limit_and_origin() {
        let d = simulate_recurrence(2.0, 1.0, 0.2, 3000, GradientSequence::WorstCase).unwrap();
        assert_eq!(d[0], 0.0);
        assert!((d[3000] - 1.0).abs() < 1e-9);
    }
}
