//! Monte Carlo generator for the Dickey-Fuller critical value table used by
//! `stationarity::adf_test` (constant, no trend).
//!
//! For each series length N it simulates `REPS` Gaussian random walks,
//! regresses Δy_t on (1, y_{t-1}) and records the t-ratio of the level
//! coefficient. The N = ∞ row is the intercept of a least-squares fit of the
//! finite-N quantiles on (1, 1/N, 1/N²).
//!
//! Run with `cargo run --release -p nsevt-core --example df_critical_values`.
//! An optional first argument overrides the replication count.

use nsevt_core::synth::PortableRng;

const SIZES: [usize; 7] = [25, 50, 100, 250, 500, 1000, 2000];
const LEVELS: [f64; 3] = [0.01, 0.05, 0.10];

fn df_tstat(y: &mut [f64], rng: &mut PortableRng) -> f64 {
    let n = y.len();
    y[0] = 0.0;
    for t in 1..n {
        y[t] = y[t - 1] + rng.normal();
    }
    // regress d_t = y_t - y_{t-1} on y_{t-1}, t = 1..n-1, with intercept
    let m = (n - 1) as f64;
    let (mut sx, mut sd) = (0.0, 0.0);
    for t in 1..n {
        sx += y[t - 1];
        sd += y[t] - y[t - 1];
    }
    let (mx, md) = (sx / m, sd / m);
    let (mut sxx, mut sxd) = (0.0, 0.0);
    for t in 1..n {
        let a = y[t - 1] - mx;
        sxx += a * a;
        sxd += a * (y[t] - y[t - 1] - md);
    }
    let beta = sxd / sxx;
    let mut sse = 0.0;
    for t in 1..n {
        let e = (y[t] - y[t - 1] - md) - beta * (y[t - 1] - mx);
        sse += e * e;
    }
    let s2 = sse / (m - 2.0);
    beta / (s2 / sxx).sqrt()
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    // linear interpolation between order statistics
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[(lo + 1).min(sorted.len() - 1)] - sorted[lo])
}

fn main() {
    let reps: usize = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(1_000_000);
    let mut rows = Vec::new();
    for (i, &n) in SIZES.iter().enumerate() {
        let mut rng = PortableRng::with_stream(20_240_601, i as u64);
        let mut y = vec![0.0; n];
        let mut stats: Vec<f64> = (0..reps).map(|_| df_tstat(&mut y, &mut rng)).collect();
        stats.sort_by(f64::total_cmp);
        let q: Vec<f64> = LEVELS.iter().map(|&p| quantile(&stats, p)).collect();
        eprintln!("N={n:5}  {:?}", q);
        rows.push((n, q));
    }

    // response surface q(N) = c0 + c1/N + c2/N^2
    let mut infinity = [0.0; 3];
    for (j, slot) in infinity.iter_mut().enumerate() {
        let mut ata = [[0.0f64; 3]; 3];
        let mut aty = [0.0f64; 3];
        for (n, q) in &rows {
            let x = 1.0 / *n as f64;
            let basis = [1.0, x, x * x];
            for a in 0..3 {
                aty[a] += basis[a] * q[j];
                for b in 0..3 {
                    ata[a][b] += basis[a] * basis[b];
                }
            }
        }
        *slot = solve3(ata, aty)[0];
    }

    println!("// {reps} replications per row");
    println!("const DF_TABLE: [(f64, [f64; 3]); 6] = [");
    for (n, q) in rows.iter().filter(|(n, _)| *n <= 500) {
        println!("    ({:.1}, [{:.4}, {:.4}, {:.4}]),", n, q[0], q[1], q[2]);
    }
    println!(
        "    (f64::INFINITY, [{:.4}, {:.4}, {:.4}]),",
        infinity[0], infinity[1], infinity[2]
    );
    println!("];");
}

#[allow(clippy::needless_range_loop)]
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}
