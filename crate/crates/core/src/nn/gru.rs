use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Gated recurrent unit, reset gate applied after the hidden projection:
///
/// ```text
/// z  = σ(W_z m + U_z h + b_z)
/// r  = σ(W_r m + U_r h + b_r)
/// n  = tanh(W_n m + r ⊙ (U_n h) + b_n)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_n: ParamId,
    pub u_n: ParamId,
    pub b_n: ParamId,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let (i, h) = (input_dim, hidden_dim);
        let mut w = |name: &str, rng: &mut R| {
            store.register_uniform(format!("{prefix}.{name}"), &[h, i], i, rng)
        };
        let w_z = w("Wz", rng);
        let w_r = w("Wr", rng);
        let w_n = w("Wn", rng);
        let mut u = |name: &str, rng: &mut R| {
            store.register_uniform(format!("{prefix}.{name}"), &[h, h], h, rng)
        };
        let u_z = u("Uz", rng);
        let u_r = u("Ur", rng);
        let u_n = u("Un", rng);
        let mut b = |name: &str| store.register(format!("{prefix}.{name}"), Tensor::zeros(&[h]));
        let b_z = b("bz");
        let b_r = b("br");
        let b_n = b("bn");
        GruCell {
            input_dim,
            hidden_dim,
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_n,
            u_n,
            b_n,
        }
    }

    /// `x·Wᵀ` for a `[rows×in]` batch.
    fn project(tape: &mut Tape, params: &Bound, x: Var, w: ParamId) -> Result<Var> {
        let wt = tape.transpose(params.var(w))?;
        tape.matmul(x, wt)
    }

    /// One recurrence step. Accepts a single node (`h[d_V]`, `m[d_M]`) or a
    /// batch of nodes (`h[n×d_V]`, `m[n×d_M]`).
    pub fn step(&self, tape: &mut Tape, params: &Bound, h_prev: Var, m: Var) -> Result<Var> {
        let hs = tape.shape(h_prev).to_vec();
        let ms = tape.shape(m).to_vec();
        let ok = match (hs.as_slice(), ms.as_slice()) {
            ([h], [x]) => *h == self.hidden_dim && *x == self.input_dim,
            ([n1, h], [n2, x]) => n1 == n2 && *h == self.hidden_dim && *x == self.input_dim,
            _ => false,
        };
        if !ok {
            return Err(Error::shape("gru_step", &hs, &ms));
        }
        let single = hs.len() == 1;
        let (h, x) = if single {
            (
                tape.reshape(h_prev, &[1, self.hidden_dim])?,
                tape.reshape(m, &[1, self.input_dim])?,
            )
        } else {
            (h_prev, m)
        };

        let gate = |tape: &mut Tape, w: ParamId, u: ParamId, b: ParamId| -> Result<Var> {
            let a = Self::project(tape, params, x, w)?;
            let c = Self::project(tape, params, h, u)?;
            let s = tape.add(a, c)?;
            let s = tape.add_row(s, params.var(b))?;
            tape.sigmoid(s)
        };
        let z = gate(tape, self.w_z, self.u_z, self.b_z)?;
        let r = gate(tape, self.w_r, self.u_r, self.b_r)?;

        let wn = Self::project(tape, params, x, self.w_n)?;
        let un = Self::project(tape, params, h, self.u_n)?;
        let gated = tape.mul(r, un)?;
        let pre = tape.add(wn, gated)?;
        let pre = tape.add_row(pre, params.var(self.b_n))?;
        let n = tape.tanh(pre)?;

        // h' = n + z ⊙ (h − n)
        let diff = tape.sub(h, n)?;
        let carry = tape.mul(z, diff)?;
        let out = tape.add(n, carry)?;
        if single {
            tape.reshape(out, &[self.hidden_dim])
        } else {
            Ok(out)
        }
    }
}
