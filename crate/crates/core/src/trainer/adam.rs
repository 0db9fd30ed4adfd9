/// Adaptive-moment optimizer state for one parameter group.
///
/// Table updates are lazy: only entries touched by the current batch have
/// their moments advanced, while bias correction uses the group step count.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments_finite(&self) -> bool {
        self.m.iter().chain(&self.v).all(|x| x.is_finite())
    }

    fn begin(&mut self) -> (f64, f64) {
        self.step += 1;
        let t = self.step as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }

    #[inline]
    fn update(&mut self, i: usize, p: &mut f64, g: f64, c1: f64, c2: f64) {
        let m = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
        let v = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
        self.m[i] = m;
        self.v[i] = v;
        *p -= self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
    }

    /// Dense update over parameter slices laid out back to back.
    pub fn step_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        let (c1, c2) = self.begin();
        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (k, (pk, &gk)) in p.iter_mut().zip(g.iter()).enumerate() {
                self.update(offset + k, pk, gk, c1, c2);
            }
            offset += p.len();
        }
    }

    /// Sparse update of `width`-wide rows `rows[i]` with gradient rows `grads[i]`.
    pub fn step_rows(&mut self, params: &mut [f64], rows: &[u32], width: usize, grads: &[f64]) {
        let (c1, c2) = self.begin();
        for (i, &r) in rows.iter().enumerate() {
            let base = r as usize * width;
            for k in 0..width {
                let idx = base + k;
                let mut p = params[idx];
                self.update(idx, &mut p, grads[i * width + k], c1, c2);
                params[idx] = p;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = Adam::new(3, 0.1, 0.9, 0.99, 1e-15);
        let mut p = vec![1.0, 1.0, 1.0];
        opt.step_slices(&mut [&mut p[..]], &[&[2.0, -0.5, 0.0][..]]);
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] - 1.1).abs() < 1e-12);
        assert_eq!(p[2], 1.0);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn sparse_rows_leave_others_untouched() {
        let mut opt = Adam::new(6, 0.01, 0.9, 0.99, 1e-15);
        let mut p = vec![0.0; 6];
        opt.step_rows(&mut p, &[2], 2, &[1.0, -1.0]);
        assert_eq!(&p[..4], &[0.0; 4]);
        assert!((p[4] + 0.01).abs() < 1e-12 && (p[5] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adam::new(1, 0.05, 0.9, 0.99, 1e-15);
        let mut x = vec![3.0];
        for _ in 0..2000 {
            let g = 2.0 * (x[0] - 1.0);
            opt.step_slices(&mut [&mut x[..]], &[&[g][..]]);
        }
        assert!((x[0] - 1.0).abs() < 1e-3);
    }
}
