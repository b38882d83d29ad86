use super::Lattice;

/// Tensor-product Lagrange interpolation with `points` nodes per axis (even).
///
/// Coordinates within 1e-9 of a node snap to it, so sampling at nodes is
/// exact. Returns `false` when the stencil leaves the lattice or the mask.
pub fn interpolate(
    lattice: &Lattice,
    channels: &[Vec<f64>],
    mask: &[bool],
    x: &[f64],
    points: usize,
    out: &mut [f64],
) -> bool {
    let n = lattice.dim();
    let m = lattice.points_per_axis() as i64;
    let mut axes: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for &xk in x {
        let f = lattice.frac_index(xk);
        let nearest = f.round();
        if (f - nearest).abs() < 1e-9 {
            if nearest < 0.0 || nearest as i64 >= m {
                return false;
            }
            axes.push(vec![(nearest as usize, 1.0)]);
            continue;
        }
        let base = f.floor() as i64 - (points as i64 / 2 - 1);
        if base < 0 || base + points as i64 > m {
            return false;
        }
        let nodes: Vec<f64> = (0..points).map(|i| (base + i as i64) as f64).collect();
        let weights = (0..points).map(|i| {
            let mut w = 1.0;
            for (j, &xj) in nodes.iter().enumerate() {
                if j != i {
                    w *= (f - xj) / (nodes[i] - xj);
                }
            }
            (base as usize + i, w)
        });
        axes.push(weights.collect());
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    let strides: Vec<usize> = (0..n).map(|k| lattice.stride(k)).collect();
    let mut cursor = vec![0usize; n];
    loop {
        let mut node = 0;
        let mut w = 1.0;
        for k in 0..n {
            let (idx, wk) = axes[k][cursor[k]];
            node += idx * strides[k];
            w *= wk;
        }
        if !mask[node] {
            return false;
        }
        for (o, c) in out.iter_mut().zip(channels) {
            *o += w * c[node];
        }
        let mut k = n;
        loop {
            if k == 0 {
                return true;
            }
            k -= 1;
            cursor[k] += 1;
            if cursor[k] < axes[k].len() {
                break;
            }
            cursor[k] = 0;
        }
    }
}
