use serde::Serialize;

/// Smooth scalar test functions on R^n with exact derivatives.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TestFunction {
    Constant {
        value: f64,
    },
    /// `x_coord^degree`.
    Monomial {
        coord: usize,
        degree: u32,
    },
    /// `exp(-|x - center|^2 / (2 width^2))`.
    Gaussian {
        center: Vec<f64>,
        width: f64,
    },
    /// `level * tanh(x_coord / level)`: bounded and 1-Lipschitz.
    Clamp {
        coord: usize,
        level: f64,
    },
}

impl TestFunction {
    /// Short identifier used in pairing tables.
    pub fn id(&self) -> String {
        match self {
            TestFunction::Constant { value } => format!("const({value})"),
            TestFunction::Monomial { coord, degree } => format!("x{coord}^{degree}"),
            TestFunction::Gaussian { center, width } => {
                let c: Vec<String> = center.iter().map(|v| v.to_string()).collect();
                format!("gauss([{}];{width})", c.join(" "))
            }
            TestFunction::Clamp { coord, level } => format!("clamp(x{coord};{level})"),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Constant { value } => *value,
            TestFunction::Monomial { coord, degree } => x[*coord].powi(*degree as i32),
            TestFunction::Gaussian { center, width } => {
                (-sq_dist(x, center) / (2.0 * width * width)).exp()
            }
            TestFunction::Clamp { coord, level } => level * (x[*coord] / level).tanh(),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            TestFunction::Constant { .. } => {}
            TestFunction::Monomial { coord, degree } => {
                if *degree > 0 {
                    out[*coord] = *degree as f64 * x[*coord].powi(*degree as i32 - 1);
                }
            }
            TestFunction::Gaussian { center, width } => {
                let s2 = width * width;
                let g = (-sq_dist(x, center) / (2.0 * s2)).exp();
                for k in 0..x.len() {
                    out[k] = -g * (x[k] - center[k]) / s2;
                }
            }
            TestFunction::Clamp { coord, level } => {
                let th = (x[*coord] / level).tanh();
                out[*coord] = 1.0 - th * th;
            }
        }
    }

    /// Row-major `n x n` Hessian.
    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            TestFunction::Constant { .. } => {}
            TestFunction::Monomial { coord, degree } => {
                if *degree > 1 {
                    let d = *degree as f64;
                    out[coord * n + coord] = d * (d - 1.0) * x[*coord].powi(*degree as i32 - 2);
                }
            }
            TestFunction::Gaussian { center, width } => {
                let s2 = width * width;
                let g = (-sq_dist(x, center) / (2.0 * s2)).exp();
                for i in 0..n {
                    for j in 0..n {
                        let di = (x[i] - center[i]) / s2;
                        let dj = (x[j] - center[j]) / s2;
                        out[i * n + j] = g * (di * dj - if i == j { 1.0 / s2 } else { 0.0 });
                    }
                }
            }
            TestFunction::Clamp { coord, level } => {
                let th = (x[*coord] / level).tanh();
                out[coord * n + coord] = -2.0 * th * (1.0 - th * th) / level;
            }
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Finite list of test functions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dictionary {
    pub dim: usize,
    pub entries: Vec<TestFunction>,
}

impl Dictionary {
    /// Monomials of degree 1..=4 per coordinate, three Gaussians along the
    /// diagonal and two clamps per coordinate.
    pub fn standard(dim: usize) -> Self {
        let mut entries = Vec::new();
        for coord in 0..dim {
            for degree in 1..=4 {
                entries.push(TestFunction::Monomial { coord, degree });
            }
        }
        for c in [-1.0, 0.0, 1.0] {
            entries.push(TestFunction::Gaussian {
                center: vec![c; dim],
                width: 1.0,
            });
        }
        for coord in 0..dim {
            for level in [1.0, 2.0] {
                entries.push(TestFunction::Clamp { coord, level });
            }
        }
        Self { dim, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(TestFunction::id).collect()
    }
}
