//! Real spherical harmonics and their Laplacian penalties.

use nalgebra::DMatrix;

use crate::skygrid::UnitVec;

/// Number of real harmonics up to and including degree `degree`.
pub fn n_harmonics(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Degree of each column of [`design_matrix`].
pub fn column_degrees(degree: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n_harmonics(degree));
    for l in 0..=degree {
        for _ in 0..(2 * l + 1) {
            out.push(l);
        }
    }
    out
}

/// Orthonormal real spherical harmonics evaluated at one point, ordered by
/// degree `l` and then `m = -l..=l`.
pub fn harmonics_at(p: &UnitVec, degree: usize, out: &mut [f64]) {
    let ct = p.z.clamp(-1.0, 1.0);
    let st = p.x.hypot(p.y);
    let phi = p.y.atan2(p.x);

    // fully normalized associated Legendre functions, indexed [l][m]
    let size = degree + 1;
    let mut pl = vec![0.0; size * size];
    let at = |l: usize, m: usize| l * size + m;
    pl[at(0, 0)] = (1.0 / (4.0 * std::f64::consts::PI)).sqrt();
    for m in 1..=degree {
        let mf = m as f64;
        pl[at(m, m)] = -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * st * pl[at(m - 1, m - 1)];
    }
    for m in 0..degree {
        pl[at(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * ct * pl[at(m, m)];
    }
    for m in 0..=degree {
        for l in (m + 2)..=degree {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            pl[at(l, m)] = a * (ct * pl[at(l - 1, m)] - b * pl[at(l - 2, m)]);
        }
    }

    let sqrt2 = std::f64::consts::SQRT_2;
    let mut c = 0;
    for l in 0..=degree {
        for mm in -(l as isize)..=(l as isize) {
            let m = mm.unsigned_abs();
            out[c] = if mm == 0 {
                pl[at(l, 0)]
            } else if mm > 0 {
                sqrt2 * pl[at(l, m)] * (m as f64 * phi).cos()
            } else {
                sqrt2 * pl[at(l, m)] * (m as f64 * phi).sin()
            };
            c += 1;
        }
    }
}

/// Rows = points, columns = harmonics up to `degree`.
pub fn design_matrix(points: &[UnitVec], degree: usize) -> DMatrix<f64> {
    let p = n_harmonics(degree);
    let mut x = DMatrix::<f64>::zeros(points.len(), p);
    let mut row = vec![0.0; p];
    for (i, pt) in points.iter().enumerate() {
        harmonics_at(pt, degree, &mut row);
        for (c, v) in row.iter().enumerate() {
            x[(i, c)] = *v;
        }
    }
    x
}

/// Diagonal of the summed Laplacian-power penalty `Σ_q (l(l+1))^q`.
pub fn laplacian_penalty(degree: usize, orders: &[u32]) -> Vec<f64> {
    column_degrees(degree)
        .into_iter()
        .map(|l| {
            let eig = (l * (l + 1)) as f64;
            orders.iter().map(|q| eig.powi(*q as i32)).sum()
        })
        .collect()
}
