use super::dual::Real;
use super::GRAVITY;

/// Cart-pole with state `[x, θ, ẋ, θ̇]` and a horizontal force on the cart.
/// θ = 0 is hanging down; the swing-up target is θ = π.
#[derive(Clone, Debug, PartialEq)]
pub struct Cartpole {
    pub mass_pole: f64,
    pub mass_cart: f64,
    pub length: f64,
    /// Multiplier on the identity diffusion of the two velocity channels.
    pub noise_scale: f64,
}

impl Cartpole {
    pub const N_X: usize = 4;
    pub const N_U: usize = 1;
    pub const N_W: usize = 4;

    pub(crate) fn drift<S: Real>(&self, x: &[S]) -> Vec<S> {
        let mp = S::cst(self.mass_pole);
        let mc = S::cst(self.mass_cart);
        let l = S::cst(self.length);
        let g = S::cst(GRAVITY);
        let (th, xd, thd) = (x[1], x[2], x[3]);
        let (s, c) = (th.sin(), th.cos());
        let den = mc + mp * s * s;
        let acc_cart = mp * s * (l * thd * thd + g * c) / den;
        let acc_pole = (-(mp * l * thd * thd * c * s) - (mc + mp) * g * s) / (l * den);
        vec![xd, thd, acc_cart, acc_pole]
    }

    /// Column vector `[0, 0, 1/den, -1/(l·den)]`.
    pub(crate) fn actuation<S: Real>(&self, x: &[S]) -> Vec<S> {
        let s = x[1].sin();
        let den = S::cst(self.mass_cart) + S::cst(self.mass_pole) * s * s;
        let one = S::cst(1.0);
        vec![
            S::cst(0.0),
            S::cst(0.0),
            one / den,
            -one / (S::cst(self.length) * den),
        ]
    }

    pub(crate) fn diffusion<S: Real>(&self, _x: &[S]) -> Vec<S> {
        let mut d = vec![S::cst(0.0); 16];
        d[2 * 4 + 2] = S::cst(self.noise_scale);
        d[3 * 4 + 3] = S::cst(self.noise_scale);
        d
    }

    /// Kinetic plus potential energy, with the pivot as the potential zero.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let (th, xd, thd) = (x[1], x[2], x[3]);
        let mp = self.mass_pole;
        let l = self.length;
        // pole tip velocity relative to the cart, θ measured from hanging down
        let vx = xd + l * thd * th.cos();
        let vy = l * thd * th.sin();
        0.5 * self.mass_cart * xd * xd + 0.5 * mp * (vx * vx + vy * vy) - mp * GRAVITY * l * th.cos()
    }
}
