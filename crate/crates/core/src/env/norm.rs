/// Per-feature running mean and variance (Welford), used to standardize observations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    /// Standardized values are clipped to `[-clip, clip]`.
    pub clip: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            clip: 10.0,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    /// Standard deviation of feature `i`, floored so constant features map to 0.
    #[inline]
    pub fn std(&self, i: usize) -> f64 {
        if self.count < 2.0 {
            return 1.0;
        }
        (self.m2[i] / (self.count - 1.0)).sqrt().max(1e-6)
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(x.iter().enumerate().map(|(i, &v)| {
            ((v - self.mean[i]) / self.std(i)).clamp(-self.clip, self.clip)
        }));
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.normalize_into(x, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_two_pass_statistics() {
        let xs = [[1.0, 5.0], [2.0, 5.0], [4.0, 5.0], [9.0, 5.0]];
        let mut n = RunningNorm::new(2);
        xs.iter().for_each(|x| n.update(x));
        let mean = 4.0;
        let var = xs.iter().map(|x| (x[0] - mean) * (x[0] - mean)).sum::<f64>() / 3.0;
        assert!((n.mean[0] - mean).abs() < 1e-12);
        assert!((n.std(0) - var.sqrt()).abs() < 1e-12);
        let z = n.normalize(&[4.0, 5.0]);
        assert_eq!(z, vec![0.0, 0.0]);
    }
}
