use crate::gsolve::{GEquation, Residual, Scalar};
use crate::system::{FineSystem, ProjectionMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzSpec {
    pub sigma: f64,
    pub b: f64,
    pub r: f64,
}

impl Default for LorenzSpec {
    fn default() -> Self {
        LorenzSpec {
            sigma: 10.0,
            b: 8.0 / 3.0,
            r: 25.0,
        }
    }
}

impl LorenzSpec {
    pub fn system(&self) -> FineSystem {
        let LorenzSpec { sigma, b, r } = *self;
        FineSystem::new("lorenz", 3, move |f, out| {
            let (x, y, z) = (f[0], f[1], f[2]);
            out[0] = sigma * (y - x);
            out[1] = r * x - y - x * z;
            out[2] = x * y - b * z;
        })
        .with_param("sigma", sigma)
        .with_param("b", b)
        .with_param("r", r)
    }

    /// Retains `(x, z)`.
    pub fn projection(&self) -> ProjectionMap {
        ProjectionMap::selection(3, &[0, 2]).expect("valid selection")
    }

    /// The two non-trivial fixed points `(±√(b(r−1)), ±√(b(r−1)), r−1)`.
    pub fn fixed_points(&self) -> [[f64; 3]; 2] {
        let a = (self.b * (self.r - 1.0)).sqrt();
        [[a, a, self.r - 1.0], [-a, -a, self.r - 1.0]]
    }

    pub fn geq(&self) -> GEquation {
        GEquation::new("lorenz", LorenzResidual(*self))
    }
}

/// `σ(G−x)G_x + (xG−bz)G_z + G + x(z−r)` with `G = y(x, z)`.
#[derive(Debug, Clone, Copy)]
pub struct LorenzResidual(pub LorenzSpec);

impl Residual for LorenzResidual {
    fn coarse_dim(&self) -> usize {
        2
    }
    fn n_components(&self) -> usize {
        1
    }
    fn eval<S: Scalar>(&self, c: &[f64], g: &[S], grad: &[S], out: &mut [S]) {
        let LorenzSpec { sigma, b, r } = self.0;
        let (x, z) = (c[0], c[1]);
        let gv = g[0];
        out[0] = (gv - S::real(x)).scale(sigma) * grad[0]
            + (gv.scale(x) - S::real(b * z)) * grad[1]
            + gv
            + S::real(x * (z - r));
    }
}

pub fn lorenz() -> FineSystem {
    LorenzSpec::default().system()
}

pub fn lorenz_geq() -> GEquation {
    LorenzSpec::default().geq()
}
