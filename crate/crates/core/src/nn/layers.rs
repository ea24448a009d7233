use rand::Rng;

use super::{ParamId, ParamStore, Tape, Var};

/// Affine map `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), input, output, scale, rng);
        let b = store.add_uniform(format!("{name}.b"), 1, output, scale, rng);
        Linear { w, b }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.w);
        let b = t.param(self.b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }
}

/// Single LSTM cell with gates ordered (input, forget, candidate, output).
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let wx = store.add_uniform(format!("{name}.wx"), input, 4 * hidden, scale, rng);
        let wh = store.add_uniform(format!("{name}.wh"), hidden, 4 * hidden, scale, rng);
        let b = store.add_uniform(format!("{name}.b"), 1, 4 * hidden, scale, rng);
        Lstm { wx, wh, b, hidden }
    }

    /// Projects every input row through `Wx` and adds the bias, once per sequence.
    pub fn project_inputs(&self, t: &mut Tape, xs: Var) -> Var {
        let wx = t.param(self.wx);
        let b = t.param(self.b);
        let p = t.matmul(xs, wx);
        t.add_row(p, b)
    }

    /// One step given the pre-projected input row `xp` (`x Wx + b`).
    pub fn step_projected(&self, t: &mut Tape, xp: Var, h: Var, c: Var) -> (Var, Var) {
        let wh = t.param(self.wh);
        let hp = t.matmul(h, wh);
        let z = t.add(xp, hp);
        let n = self.hidden;
        let i = t.slice_cols(z, 0, n);
        let f = t.slice_cols(z, n, 2 * n);
        let g = t.slice_cols(z, 2 * n, 3 * n);
        let o = t.slice_cols(z, 3 * n, 4 * n);
        let i = t.sigmoid(i);
        let f = t.sigmoid(f);
        let g = t.tanh(g);
        let o = t.sigmoid(o);
        let fc = t.mul(f, c);
        let ig = t.mul(i, g);
        let c_next = t.add(fc, ig);
        let tc = t.tanh(c_next);
        let h_next = t.mul(o, tc);
        (h_next, c_next)
    }

    /// One step on a raw input row.
    pub fn step(&self, t: &mut Tape, x: Var, h: Var, c: Var) -> (Var, Var) {
        let xp = self.project_inputs(t, x);
        self.step_projected(t, xp, h, c)
    }

    /// Runs over the rows of `xs` (optionally right-to-left) from a zero state.
    /// Returns the hidden state at every position, in input order, and the final state.
    pub fn run(&self, t: &mut Tape, xs: Var, reverse: bool) -> (Vec<Var>, Var) {
        let n = t.value(xs).rows;
        let proj = self.project_inputs(t, xs);
        let mut h = t.constant(super::Matrix::zeros(1, self.hidden));
        let mut c = t.constant(super::Matrix::zeros(1, self.hidden));
        let mut outs = vec![h; n];
        let order: Vec<usize> = if reverse {
            (0..n).rev().collect()
        } else {
            (0..n).collect()
        };
        for pos in order {
            let xp = t.row(proj, pos);
            let (h2, c2) = self.step_projected(t, xp, h, c);
            h = h2;
            c = c2;
            outs[pos] = h;
        }
        (outs, h)
    }
}
