//! Derivative-free Nelder-Mead simplex minimizer.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadConfig {
    /// Stop once the largest vertex distance from the best vertex drops
    /// below this.
    pub diameter_tol: f64,
    pub max_iter: usize,
    /// Edge length of the initial simplex along each axis.
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            diameter_tol: 1e-8,
            max_iter: 2000,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Minimum<const N: usize> {
    pub x: [f64; N],
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

/// Minimizes `f` from `start`. Non-finite objective values are treated as
/// `+inf`, which lets callers encode constraints as infeasible regions.
pub fn nelder_mead<const N: usize, F>(mut f: F, start: [f64; N], cfg: &NelderMeadConfig) -> Minimum<N>
where
    F: FnMut(&[f64; N]) -> f64,
{
    let mut eval = |x: &[f64; N]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((start, eval(&start)));
    for i in 0..N {
        let mut v = start;
        v[i] += cfg.initial_step;
        let fv = eval(&v);
        simplex.push((v, fv));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if diameter(&simplex) < cfg.diameter_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = [0.0; N];
        for (v, _) in &simplex[..N] {
            for k in 0..N {
                centroid[k] += v[k] / N as f64;
            }
        }
        let worst = simplex[N];
        let along = |t: f64| -> [f64; N] {
            let mut p = [0.0; N];
            for k in 0..N {
                p[k] = centroid[k] + t * (worst.0[k] - centroid[k]);
            }
            p
        };

        let xr = along(-ALPHA);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-GAMMA);
            let fe = eval(&xe);
            simplex[N] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[N - 1].1 {
            simplex[N] = (xr, fr);
            continue;
        }
        // contraction, outside if the reflected point beats the worst
        let (xc, fc) = if fr < worst.1 {
            let xc = along(-RHO);
            (xc, eval(&xc))
        } else {
            let xc = along(RHO);
            (xc, eval(&xc))
        };
        if fc < worst.1.min(fr) {
            simplex[N] = (xc, fc);
            continue;
        }
        let best = simplex[0].0;
        for vertex in simplex.iter_mut().skip(1) {
            for (x, b) in vertex.0.iter_mut().zip(best) {
                *x = b + SIGMA * (*x - b);
            }
            vertex.1 = eval(&vertex.0);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    Minimum {
        x: simplex[0].0,
        value: simplex[0].1,
        iterations,
        converged,
    }
}

fn diameter<const N: usize>(simplex: &[([f64; N], f64)]) -> f64 {
    let best = &simplex[0].0;
    simplex[1..]
        .iter()
        .map(|(v, _)| {
            v.iter()
                .zip(best)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64; 2]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(f, [-1.2, 1.0], &NelderMeadConfig { initial_step: 0.5, ..Default::default() });
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn respects_infeasible_region() {
        // minimum of (x-2)^2 restricted to x <= 1
        let f = |x: &[f64; 1]| if x[0] > 1.0 { f64::INFINITY } else { (x[0] - 2.0).powi(2) };
        let m = nelder_mead(f, [0.0], &NelderMeadConfig::default());
        assert!((m.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn iteration_cap() {
        let f = |x: &[f64; 2]| x[0] * x[0] + x[1] * x[1];
        let m = nelder_mead(f, [5.0, 5.0], &NelderMeadConfig { max_iter: 3, ..Default::default() });
        assert!(!m.converged);
        assert_eq!(m.iterations, 3);
    }
}
