//! Plain-vector reference formulas used as oracles by unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::layers::{GruCell, Linear};
use crate::numerics::{ParamId, ParamStore, Tensor};

pub type M = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> M {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

pub fn vecmat(x: &[f64], w: &M) -> Vec<f64> {
    (0..w[0].len())
        .map(|j| x.iter().zip(w).map(|(a, row)| a * row[j]).sum())
        .collect()
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn vadd(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Textbook GRU step on plain vectors.
pub fn gru_ref(store: &ParamStore, c: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
    let p = |id| mat(store.get(id));
    let b = |id: ParamId| store.get(id).data().to_vec();
    let lin = |w, u, bias: Vec<f64>, hh: &[f64]| -> Vec<f64> {
        let a = vecmat(x, &p(w));
        let c2 = vecmat(hh, &p(u));
        a.iter()
            .zip(&c2)
            .zip(&bias)
            .map(|((a, c), b)| a + c + b)
            .collect()
    };
    let z: Vec<f64> = lin(c.w_z, c.u_z, b(c.b_z), h)
        .into_iter()
        .map(sig)
        .collect();
    let r: Vec<f64> = lin(c.w_r, c.u_r, b(c.b_r), h)
        .into_iter()
        .map(sig)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = lin(c.w_h, c.u_h, b(c.b_h), &rh)
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..h.len())
        .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i])
        .collect()
}

pub fn linear_ref(s: &ParamStore, l: &Linear, x: &[f64]) -> Vec<f64> {
    let y = vecmat(x, &mat(s.get(l.w)));
    match l.b {
        Some(b) => vadd(&y, s.get(b).data()),
        None => y,
    }
}

pub fn randm(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect(),
    )
}

/// Replaces every parameter (including zero-initialized biases and unit
/// norm gains) with uniform noise so that no term hides behind a zero.
pub fn scramble(store: &mut ParamStore, r: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        let t = store.get(id);
        let fresh = Tensor::new(
            t.shape().to_vec(),
            (0..t.len()).map(|_| r.gen_range(-1.0..1.0)).collect(),
        )
        .expect("same shape");
        *store.get_mut(id) = fresh;
    }
}
