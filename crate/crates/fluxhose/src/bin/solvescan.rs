// Scratch diagnostic binary; removed before release.
use fluxhose::geometry::*;
use fluxhose::magnetostatics::*;

fn main() {
    let tol: f64 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(1e-7);
    let ov = SceneOverrides { tip_past_wall: Some(0.0), ..Default::default() };
    let scene = build_paper_scene(&ov).unwrap();
    let grid = GridSpec::from_domain(&scene.domain, 50e-6).unwrap();
    let mg = rasterize(&scene, &grid).unwrap();
    let opts = SolverOptions { tolerance: tol, max_iterations: Some(200_000), ..Default::default() };
    let t0 = std::time::Instant::now();
    let field = match solve(&mg, &opts) {
        Ok(f) => f,
        Err(e) => { eprintln!("FAILED {e}"); return; }
    };
    eprintln!("tol {tol:e}: iters {} res {:.2e} [{:.0?}]", field.iterations, field.residual_norm, t0.elapsed());
    let pot = field.potential();
    let s = grid.nz + 1;
    let node = |r_mm: f64, z_mm: f64| -> usize {
        let i = (r_mm * 1e-3 / grid.spacing).round() as usize;
        let j = ((z_mm * 1e-3 - grid.z_min) / grid.spacing).round() as usize;
        i * s + j
    };
    let psi = |r_mm: f64, z_mm: f64| {
        let n = node(r_mm, z_mm);
        let i = n / s;
        pot.a_phi[n] * (i as f64 * grid.spacing)
    };
    eprintln!("psi core(0.5,1):   {:.4e}", psi(0.5, 1.0));
    eprintln!("psi bore(2.2,1):   {:.4e}", psi(2.2, 1.0));
    eprintln!("psi wall(5,1):     {:.4e}", psi(5.0, 1.0));
    eprintln!("psi wall(15,1):    {:.4e}", psi(15.0, 1.0));
    eprintln!("psi vac(5,5):      {:.4e}", psi(5.0, 5.0));
    eprintln!("psi vac(5,-5):     {:.4e}", psi(5.0, -5.0));
    let hole_flux = flux_through_disk(&field, 2.2e-3, 1.0e-3).unwrap();
    let core_flux = flux_through_disk(&field, 0.5e-3, 1.0e-3).unwrap();
    let (_, bz_c) = probe(&field, scene.probes[0]).unwrap();
    let (_, bz_s) = probe(&field, scene.probes[1]).unwrap();
    eprintln!("hole/core {:.3e}  bz_c {:.3e} bz_s {:.3e}", (hole_flux/core_flux).abs(), bz_c, bz_s);
}
