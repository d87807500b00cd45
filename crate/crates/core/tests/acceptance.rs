//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saabkit::analysis::{compare_report, cumulative_ac_curve, energy_table, Ordering};
use saabkit::cli::persist::{kernel_from_json, kernel_to_json, LOAD_ORTHO_TOL};
use saabkit::linalg::CovarianceAccumulator;
use saabkit::residuals::{synth_ar1, ResidualBlockSet};
use saabkit::training::{convergence_monitor, FittedKernel};
use saabkit::transforms::{
    dct_kernel, klt_kernel, saab_fit_multistage, AffineOrthoKernel, BlockVector, SaabFit, StagePlan,
};
use saabkit::viz::{basis_grid, basis_image, tile};

const RHO: f64 = 0.95;
/// Residual standard deviation in 8-bit pixel units.
const SIGMA: f64 = 10.0;
const TRAIN_COUNT: usize = 50_000;
const MARGIN: f64 = 1.25;

const PLANS: [&[usize]; 7] = [&[4], &[2, 2], &[8], &[2, 4], &[4, 2], &[16], &[4, 4]];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

struct Fixture {
    train: BTreeMap<usize, ResidualBlockSet>,
    saab: Vec<SaabFit>,
    dct: Vec<AffineOrthoKernel>,
}

impl Fixture {
    fn build() -> Self {
        let mut train = BTreeMap::new();
        for (i, n) in [4usize, 8, 16].into_iter().enumerate() {
            train.insert(n, synth_ar1(RHO, SIGMA, n, TRAIN_COUNT, 100 + i as u64).unwrap());
        }
        let saab = PLANS
            .iter()
            .map(|p| {
                let plan = StagePlan::new(p.to_vec()).unwrap();
                saab_fit_multistage(&train[&plan.block_side()].blocks, &plan, MARGIN).unwrap()
            })
            .collect();
        let dct = [2, 4, 8, 16].into_iter().map(|n| dct_kernel(n).unwrap()).collect();
        Self { train, saab, dct }
    }

    fn saab(&self, stages: &[usize]) -> &SaabFit {
        self.saab.iter().find(|f| f.kernel.plan.stages() == stages).unwrap()
    }

    fn dct(&self, n: usize) -> &AffineOrthoKernel {
        self.dct.iter().find(|k| k.n == n).unwrap()
    }

    fn affine(&self) -> impl Iterator<Item = &AffineOrthoKernel> {
        self.dct.iter().chain(self.saab.iter().map(|f| &f.kernel))
    }
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// `||M M^T - I||_F` computed independently of the library.
fn ortho_err(k: &AffineOrthoKernel) -> f64 {
    let d = k.dim();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            let g: f64 = (0..d).map(|t| k.matrix[i * d + t] * k.matrix[j * d + t]).sum();
            let e = g - if i == j { 1.0 } else { 0.0 };
            s += e * e;
        }
    }
    s.sqrt()
}

fn c1_orthonormality(fx: &Fixture) -> Outcome {
    let mut worst = (0.0f64, String::new());
    for k in fx.affine() {
        let e = ortho_err(k);
        if e >= worst.0 {
            worst = (e, k.label());
        }
    }
    Outcome::new(worst.0 < 1e-9, format!("max ||MM^T-I||_F = {:.3e} ({})", worst.0, worst.1))
}

fn c2_reconstruction(fx: &Fixture) -> Outcome {
    let mut worst = 0.0f64;
    for k in fx.affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(k.dim() as u64);
        for _ in 0..1000 {
            let x = BlockVector::new(k.n, (0..k.dim()).map(|_| rng.random_range(-255.0..255.0)).collect()).unwrap();
            let back = k.inverse(&k.forward(&x).unwrap()).unwrap();
            for (a, b) in x.values().iter().zip(back.values()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Outcome::new(worst < 1e-10, format!("max |x - inv(fwd(x))| = {worst:.3e}"))
}

fn c3_dct_oracle(_: &Fixture) -> Outcome {
    let mut worst = 0.0f64;
    for n in [2usize, 4, 8, 16] {
        let k = dct_kernel(n).unwrap();
        let lam = |v: usize| if v == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
        for p in 0..n {
            for q in 0..n {
                for m in 0..n {
                    for j in 0..n {
                        let want = 2.0 / n as f64
                            * lam(p)
                            * lam(q)
                            * (((2 * m + 1) * p) as f64 * PI / (2 * n) as f64).cos()
                            * (((2 * j + 1) * q) as f64 * PI / (2 * n) as f64).cos();
                        let got = k.matrix[(p * n + q) * n * n + m * n + j];
                        worst = worst.max((want - got).abs());
                    }
                }
            }
        }
    }
    Outcome::new(worst < 1e-12, format!("max entry deviation = {worst:.3e}"))
}

fn c4_energy_conservation(fx: &Fixture) -> Outcome {
    let mut worst_total = 0.0f64;
    let mut worst_dc = 0.0f64;
    for (&n, set) in &fx.train {
        let dct = energy_table(fx.dct(n), set).unwrap();
        for fit in fx.saab.iter().filter(|f| f.kernel.n == n) {
            let s = energy_table(&fit.kernel, set).unwrap();
            worst_total = worst_total.max((s.total_energy - dct.total_energy).abs() / dct.total_energy);
            if fit.kernel.plan.is_one_stage() {
                worst_dc = worst_dc.max((s.dc_energy - dct.dc_energy).abs() / dct.dc_energy);
            }
        }
    }
    Outcome::new(
        worst_total < 1e-10 && worst_dc < 1e-12,
        format!("max total rel diff = {worst_total:.3e}, max one-stage DC rel diff = {worst_dc:.3e}"),
    )
}

fn c5_pca_optimality(fx: &Fixture) -> Outcome {
    let set = &fx.train[&4];
    let saab = cumulative_ac_curve(&fx.saab(&[4]).kernel, set, Ordering::MeanEnergyDesc).unwrap();
    let mut worst = f64::INFINITY;
    for ord in [Ordering::Native, Ordering::MeanEnergyDesc, Ordering::Zigzag] {
        let dct = cumulative_ac_curve(fx.dct(4), set, ord).unwrap();
        for (s, d) in saab.values.iter().zip(&dct.values) {
            worst = worst.min(s - d);
        }
    }
    Outcome::new(worst >= -1e-9, format!("min (Saab - DCT) E_K slack = {worst:.3e} percent points"))
}

fn c6_two_stage_direction(fx: &Fixture) -> Outcome {
    let set = &fx.train[&4];
    let one = fx.saab(&[4]);
    let two = fx.saab(&[2, 2]);
    let dc1 = energy_table(&one.kernel, set).unwrap().dc_energy;
    let dc2 = energy_table(&two.kernel, set).unwrap().dc_energy;

    let curves = vec![
        cumulative_ac_curve(fx.dct(4), set, Ordering::MeanEnergyDesc).unwrap(),
        cumulative_ac_curve(&one.kernel, set, Ordering::MeanEnergyDesc).unwrap(),
        cumulative_ac_curve(&two.kernel, set, Ordering::MeanEnergyDesc).unwrap(),
    ];
    let failing: Vec<usize> = (0..8).filter(|&k| curves[2].values[k] < curves[0].values[k]).map(|k| k + 1).collect();
    let cmp = compare_report(curves, Vec::new()).unwrap();
    let csv_path = out_dir().join("criterion6_curves.csv");
    std::fs::write(&csv_path, cmp.aligned_csv()).unwrap();

    let a = dc2 < dc1;
    let b = failing.is_empty();
    Outcome::new(
        a && b,
        format!(
            "(a) DC two-stage {dc2:.4} vs one-stage {dc1:.4}: {}; (b) E_K >= DCT for K=1..8: {}; curves at {}",
            if a { "ok" } else { "violated" },
            if b { "ok".to_string() } else { format!("violated at K={failing:?}") },
            csv_path.display()
        ),
    )
}

fn c7_convergence(_: &Fixture) -> Outcome {
    let mut converged = 0;
    let mut decreasing = 0;
    let mut ms = Vec::new();
    for seed in 0..20u64 {
        let set = synth_ar1(RHO, SIGMA, 8, 200_000, 7000 + seed).unwrap();
        let stream = set.blocks.iter().map(|b| b.values().iter().map(|v| v / 255.0).collect::<Vec<_>>());
        let (_, trace) = convergence_monitor(stream, 5000, 1.5e-4, 200_000).unwrap();
        if let Some(m) = trace.converged_at {
            converged += 1;
            ms.push(m);
        }
        let first = trace.checkpoints.first().unwrap().diff;
        let last = trace.checkpoints.last().unwrap().diff;
        if last < first {
            decreasing += 1;
        }
    }
    ms.sort_unstable();
    Outcome::new(
        converged == 20 && decreasing >= 19,
        format!(
            "converged {converged}/20 (M from {} to {}), final < first diff in {decreasing}/20",
            ms.first().copied().unwrap_or(0),
            ms.last().copied().unwrap_or(0)
        ),
    )
}

fn c8_non_negativity(fx: &Fixture) -> Outcome {
    let mut train_ok = true;
    let mut worst_fresh = 1.0f64;
    for fit in fx.saab.iter().filter(|f| f.cascade.stages.len() == 2) {
        let n = fit.kernel.n;
        let frac = |set: &ResidualBlockSet| {
            let (mut pos, mut total) = (0usize, 0usize);
            for b in &set.blocks {
                for v in fit.cascade.stage_inputs(b, 1).unwrap().iter().flatten() {
                    total += 1;
                    pos += usize::from(*v >= 0.0);
                }
            }
            pos as f64 / total as f64
        };
        train_ok &= frac(&fx.train[&n]) == 1.0;
        let fresh = synth_ar1(RHO, SIGMA, n, 10_000, 9000 + n as u64).unwrap();
        worst_fresh = worst_fresh.min(frac(&fresh));
    }
    Outcome::new(
        train_ok && worst_fresh >= 0.999,
        format!(
            "training inputs all >= 0: {train_ok}; min fresh fraction >= 0 = {:.5}",
            worst_fresh
        ),
    )
}

fn c9_visualization(fx: &Fixture) -> Outcome {
    let mut problems = Vec::new();
    for k in fx.affine() {
        let flat_dc = k.kind == saabkit::transforms::KernelKind::Dct || k.plan.is_one_stage();
        if flat_dc && basis_image(k, 0).unwrap().pixels.iter().any(|&p| p != 128) {
            problems.push(format!("{} DC tile not flat", k.label()));
        }
        for idx in 1..k.dim() {
            let img = basis_image(k, idx).unwrap();
            if !img.pixels.contains(&0) || !img.pixels.contains(&255) {
                problems.push(format!("{} tile {idx} misses an extreme", k.label()));
            }
        }
        let columns = 8.min(k.dim());
        let order: Vec<usize> = (1..k.dim()).collect();
        let g = basis_grid(k, columns, &order, None).unwrap();
        let rows = k.dim().div_ceil(columns);
        if (g.width, g.height) != (columns * k.n + columns - 1, rows * k.n + rows - 1) {
            problems.push(format!("{} grid is {}x{}", k.label(), g.width, g.height));
        }
        if tile(&g, k.n, columns, 0).unwrap() != basis_image(k, 0).unwrap() {
            problems.push(format!("{} first tile differs", k.label()));
        }
        if basis_grid(k, columns, &order, None).unwrap().to_pgm() != g.to_pgm() {
            problems.push(format!("{} grid not reproducible", k.label()));
        }
    }
    let g = basis_grid(fx.dct(4), 8, &(1..16).collect::<Vec<_>>(), None).unwrap();
    if (g.width, g.height) != (39, 9) {
        problems.push("4x4 grid with 8 columns is not 39x9".into());
    }
    let detail = if problems.is_empty() {
        "all tiles and grids as specified".to_string()
    } else {
        problems.join("; ")
    };
    Outcome::new(problems.is_empty(), detail)
}

fn c10_persistence(fx: &Fixture) -> Outcome {
    let mut kernels: Vec<FittedKernel> = fx.affine().cloned().map(FittedKernel::Affine).collect();
    for set in fx.train.values() {
        let flat: Vec<f64> = set.blocks.iter().flat_map(|b| b.values().to_vec()).collect();
        let acc = CovarianceAccumulator::from_rows_par(set.n * set.n, &flat).unwrap();
        kernels.push(FittedKernel::Klt(klt_kernel(&acc).unwrap()));
    }
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for k in &kernels {
        match kernel_from_json(&kernel_to_json(k).unwrap()) {
            Ok(back) => {
                let (a, b) = match (k, &back) {
                    (FittedKernel::Affine(a), FittedKernel::Affine(b)) => (a.matrix.clone(), b.matrix.clone()),
                    (FittedKernel::Klt(a), FittedKernel::Klt(b)) => {
                        (a.basis.concat(), b.basis.concat())
                    }
                    _ => {
                        failures.push("kind changed".to_string());
                        continue;
                    }
                };
                for (x, y) in a.iter().zip(&b) {
                    worst = worst.max((x - y).abs());
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    Outcome::new(
        failures.is_empty() && worst < 1e-15,
        format!(
            "{} kernels, max abs matrix diff = {worst:.3e}, guard tol {LOAD_ORTHO_TOL:e}{}",
            kernels.len(),
            if failures.is_empty() { String::new() } else { format!(", failures: {failures:?}") }
        ),
    )
}

type Criterion = (u32, &'static str, Duration, fn(&Fixture) -> Outcome);

fn main() {
    let t0 = Instant::now();
    let fx = Fixture::build();
    let setup = t0.elapsed();
    println!("fixture: {} Saab kernels on {TRAIN_COUNT} AR(1) blocks per size in {:.1?}", fx.saab.len(), setup);

    let criteria: [Criterion; 10] = [
        (1, "orthonormality", Duration::from_secs(60), c1_orthonormality),
        (2, "perfect reconstruction", Duration::from_secs(10), c2_reconstruction),
        (3, "DCT oracle", Duration::from_secs(60), c3_dct_oracle),
        (4, "energy conservation", Duration::from_secs(60), c4_energy_conservation),
        (5, "PCA optimality", Duration::from_secs(30), c5_pca_optimality),
        (6, "two-stage direction", Duration::from_secs(60), c6_two_stage_direction),
        (7, "convergence", Duration::from_secs(300), c7_convergence),
        (8, "non-negativity", Duration::from_secs(60), c8_non_negativity),
        (9, "visualization", Duration::from_secs(60), c9_visualization),
        (10, "round-trip persistence", Duration::from_secs(60), c10_persistence),
    ];

    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        let t = Instant::now();
        let out = check(&fx);
        // criterion 1 includes fitting every kernel
        let elapsed = t.elapsed() + if id == 1 { setup } else { Duration::ZERO };
        let pass = out.pass && elapsed <= budget;
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} {name}: {} | {} | {:.2?} (budget {:?})",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed,
            budget
        );
    }
    println!("acceptance: {}/10 passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

