use super::dual::Real;
use super::GRAVITY;

/// Rigid-body quadcopter, north-east-down frame.
///
/// State: `[x, y, z, φ, θ, ψ, ẋ, ẏ, ż, φ̇, θ̇, ψ̇]`. Controls are the four rotor
/// torques τ, mapped to body inputs `u = Mτ` (thrust, roll, pitch, yaw) by the
/// mixer `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadcopter {
    pub mass: f64,
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    pub arm_length: f64,
    pub drag: f64,
    pub noise_scale: f64,
}

impl Quadcopter {
    pub const N_X: usize = 12;
    pub const N_U: usize = 4;
    pub const N_W: usize = 12;

    /// Row-major 4×4 rotor mixer.
    pub fn mixer(&self) -> [f64; 16] {
        let d = self.drag;
        [
            1.0, 1.0, 1.0, 1.0, //
            0.0, -1.0, 0.0, 1.0, //
            1.0, 0.0, -1.0, 0.0, //
            d, -d, d, -d,
        ]
    }

    pub(crate) fn drift<S: Real>(&self, x: &[S]) -> Vec<S> {
        let (pd, td, sd) = (x[9], x[10], x[11]);
        let c = |v: f64| S::cst(v);
        vec![
            x[6],
            x[7],
            x[8],
            x[9],
            x[10],
            x[11],
            c(0.0),
            c(0.0),
            c(GRAVITY),
            c(self.iyy / self.ixx) * sd * td - c(self.izz / self.ixx) * td * sd,
            c(self.izz / self.iyy) * pd * sd - c(self.ixx / self.iyy) * sd * pd,
            c(self.ixx / self.izz) * td * pd - c(self.iyy / self.izz) * pd * td,
        ]
    }

    /// Row-major 12×4 map from body inputs `(u₁..u₄)` to state rates.
    pub(crate) fn body_actuation<S: Real>(&self, x: &[S]) -> Vec<S> {
        let (phi, th, psi) = (x[3], x[4], x[5]);
        let (sp, cp) = (phi.sin(), phi.cos());
        let (st, ct) = (th.sin(), th.cos());
        let (ss, cs) = (psi.sin(), psi.cos());
        let inv_m = S::cst(-1.0 / self.mass);
        let mut g = vec![S::cst(0.0); 12 * 4];
        g[6 * 4] = inv_m * (sp * ss + cp * cs * st);
        g[7 * 4] = inv_m * (cp * ss * st - cs * sp);
        g[8 * 4] = inv_m * cp * ct;
        g[9 * 4 + 1] = S::cst(self.arm_length / self.ixx);
        g[10 * 4 + 2] = S::cst(self.arm_length / self.iyy);
        g[11 * 4 + 3] = S::cst(1.0 / self.izz);
        g
    }

    /// Row-major 12×4 actuation with respect to rotor torques.
    pub(crate) fn actuation<S: Real>(&self, x: &[S]) -> Vec<S> {
        let body = self.body_actuation(x);
        let mix = self.mixer();
        let mut g = vec![S::cst(0.0); 12 * 4];
        for i in 0..12 {
            for j in 0..4 {
                let mut acc = S::cst(0.0);
                for k in 0..4 {
                    if mix[k * 4 + j] != 0.0 {
                        acc = acc + body[i * 4 + k] * S::cst(mix[k * 4 + j]);
                    }
                }
                g[i * 4 + j] = acc;
            }
        }
        g
    }

    pub(crate) fn diffusion<S: Real>(&self, _x: &[S]) -> Vec<S> {
        let mut d = vec![S::cst(0.0); 12 * 12];
        for i in 6..12 {
            d[i * 12 + i] = S::cst(self.noise_scale);
        }
        d
    }
}
