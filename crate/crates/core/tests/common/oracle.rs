//! Test-side re-derivations of the link, timing and EE formulas with the
//! default constants written out by hand.

use malora_core::topology::NetworkTopology;

pub const SENSITIVITY: [f64; 6] = [-123.0, -126.0, -129.0, -132.0, -134.5, -137.0];
pub const POWER_DRAW_MW: [f64; 8] = [49.5, 52.8, 56.4, 61.7, 70.0, 82.5, 99.0, 125.4];
pub const SIR: [[f64; 6]; 6] = [
    [6.0, -8.0, -9.0, -9.0, -9.0, -9.0],
    [-11.0, 6.0, -11.0, -12.0, -13.0, -13.0],
    [-15.0, -13.0, 6.0, -13.0, -14.0, -15.0],
    [-19.0, -18.0, -17.0, 6.0, -17.0, -18.0],
    [-22.0, -22.0, -21.0, -20.0, 6.0, -20.0],
    [-25.0, -25.0, -25.0, -24.0, -23.0, 6.0],
];
pub const SIGMA: f64 = 10.0;
pub const LAMBDA: f64 = 0.01;

/// Normal CDF via the complementary error function.
pub fn phi(x: f64, sd: f64) -> f64 {
    0.5 * libm::erfc(-x / (sd * std::f64::consts::SQRT_2))
}

/// Airtime for SF `f` at 20 bytes, CR 4/5, 8 preamble symbols, 125 kHz.
pub fn airtime(f: u32) -> f64 {
    let de = if f >= 11 { 1.0 } else { 0.0 };
    let f_ = f as f64;
    let blocks = ((8.0 * 20.0 - 4.0 * f_ + 28.0 + 16.0) / (4.0 * (f_ - 2.0 * de))).ceil().max(0.0);
    let payload = 8.0 + blocks * 5.0;
    (8.0 + 4.25 + payload) * 2f64.powi(f as i32) / 125_000.0
}

pub fn path_loss(d: f64) -> f64 {
    98.0729 + 10.0 * 2.1495 * (d / 40.0).log10()
}

/// PDR and EE for every device, action index = sf_rank * 8 + tp_rank.
pub fn hand_report(topo: &NetworkTopology, actions: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = actions.len();
    let sf = |i: usize| actions[i] / 8;
    let tp_dbm = |i: usize| 2.0 + 2.0 * (actions[i] % 8) as f64;
    let z = |i: usize, k: usize| tp_dbm(i) - path_loss(topo.distance(i, k));
    let mut pdr = vec![0.0; n];
    let mut ee = vec![0.0; n];
    for i in 0..n {
        let fi = sf(i);
        let mut miss = 1.0;
        for k in 0..topo.num_gateways() {
            let psi = phi(z(i, k) - SENSITIVITY[fi], SIGMA);
            let mut zeta = 1.0;
            for j in (0..n).filter(|&j| j != i && topo.same_channel(i, j)) {
                let fj = sf(j);
                let tsym = 2f64.powi(fi as i32 + 7) / 125_000.0;
                let window = airtime(fj as u32 + 7) + airtime(fi as u32 + 7) - 3.0 * tsym;
                let h = 1.0 - (-LAMBDA * window).exp();
                let loss = phi(SIR[fi][fj] - (z(i, k) - z(j, k)), 2.0 * SIGMA);
                zeta *= 1.0 - h * loss;
            }
            miss *= 1.0 - psi * zeta;
        }
        pdr[i] = 1.0 - miss;
        let energy = POWER_DRAW_MW[actions[i] % 8] * airtime(fi as u32 + 7);
        ee[i] = if pdr[i] > 0.0 { 160.0 * pdr[i] / energy } else { 0.0 };
    }
    (pdr, ee)
}

/// Simpson's rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// Delivery probability of one of two co-located same-SF devices under
/// per-packet shadowing and pairwise capture, by quadrature:
/// `int_{-inf}^{z - eta} pdf(x) exp(-rate * window * Phi((x + omega) / sigma)) dx`.
pub fn colocated_pair_pdr(margin_db: f64, rate_window: f64, omega: f64, sigma: f64) -> f64 {
    let pdf = |x: f64| (-(x / sigma).powi(2) / 2.0).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    simpson(
        |x| pdf(x) * (-rate_window * phi(x + omega, sigma)).exp(),
        -12.0 * sigma,
        margin_db,
        20_000,
    )
}
