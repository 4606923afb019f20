use crate::error::{Error, Result};
use crate::grad::{MapVar, Tape};
use crate::real::Real;
use crate::tensor::{
    chan_sub, conv2d, ew_add, ew_mul, ew_sub, fc, global_avg_pool, relu, scale_channels, sigmoid,
    softmax_pair, split_channels, ChannelVec, Tensor4,
};

use super::{BlockVars, FusionKind, MSConvState, SKConvState};

/// Every intermediate of one block evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<T: Real> {
    pub kind: FusionKind,
    pub u1: Tensor4<T>,
    pub u2: Tensor4<T>,
    /// Map pooled into the attention.
    pub u3: Tensor4<T>,
    /// Map reweighted by the attention.
    pub u4: Tensor4<T>,
    pub s: ChannelVec<T>,
    pub z: ChannelVec<T>,
    pub a_hat: ChannelVec<T>,
    pub b_hat: ChannelVec<T>,
    /// `σ(â − b̂)`; for the softmax reference this is the weight `a` on `U1`.
    pub c: ChannelVec<T>,
    pub v: Tensor4<T>,
}

fn check_input<T: Real>(x: &Tensor4<T>, st: &MSConvState<T>) -> Result<()> {
    if x.dims().c != st.k3.c_in() {
        return Err(Error::shape(
            "msconv_forward",
            format!("input has {} channels, block expects {}", x.dims().c, st.k3.c_in()),
        ));
    }
    Ok(())
}

/// Evaluate one block under any fusion kind, keeping every intermediate.
pub fn forward_traced<T: Real>(
    kind: FusionKind,
    x: &Tensor4<T>,
    st: &MSConvState<T>,
) -> Result<Trace<T>> {
    check_input(x, st)?;
    let u1 = conv2d(x, &st.k3)?;
    let u2 = conv2d(x, &st.k5)?;
    let sum = || ew_add(&u1, &u2);
    let diff = || ew_sub(&u1, &u2);
    let (u3, u4) = match kind {
        FusionKind::MsConv => (ew_mul(&u1, &u2)?, diff()?),
        FusionKind::MsConvSum => (sum()?, diff()?),
        FusionKind::NoMo => {
            let d = diff()?;
            (d.clone(), d)
        }
        FusionKind::NoSo => (ew_mul(&u1, &u2)?, sum()?),
        FusionKind::NoMoNoSo => {
            let s = sum()?;
            (s.clone(), s)
        }
        FusionKind::SkConvReference => (sum()?, diff()?),
    };
    let s = global_avg_pool(&u3);
    let z = relu(&fc(&s, &st.w_reduce, &st.b_reduce)?);
    let (a_hat, b_hat) = split_channels(&fc(&z, &st.w_expand, &st.b_expand)?, st.channels())?;
    let (c, v) = if kind == FusionKind::SkConvReference {
        let (a, b) = softmax_pair(&a_hat, &b_hat)?;
        let v = ew_add(&scale_channels(&a, &u1)?, &scale_channels(&b, &u2)?)?;
        (a, v)
    } else {
        let c = sigmoid(&chan_sub(&a_hat, &b_hat)?);
        let v = ew_add(&u2, &scale_channels(&c, &u4)?)?;
        (c, v)
    };
    crate::tensor::ops::debug_finite("msconv_forward", || v.all_finite())?;
    Ok(Trace {
        kind,
        u1,
        u2,
        u3,
        u4,
        s,
        z,
        a_hat,
        b_hat,
        c,
        v,
    })
}

/// The MSConv block: returns `V` and the full trace.
pub fn msconv_forward<T: Real>(x: &Tensor4<T>, st: &MSConvState<T>) -> Result<(Tensor4<T>, Trace<T>)> {
    let trace = forward_traced(FusionKind::MsConv, x, st)?;
    Ok((trace.v.clone(), trace))
}

/// Softmax-weighted two-branch fusion `V = a ⊙ U1 + b ⊙ U2`.
pub fn skconv_forward<T: Real>(x: &Tensor4<T>, st: &SKConvState<T>) -> Result<Tensor4<T>> {
    Ok(forward_traced(FusionKind::SkConvReference, x, st)?.v)
}

pub fn ablate<T: Real>(kind: FusionKind, x: &Tensor4<T>, st: &MSConvState<T>) -> Result<Tensor4<T>> {
    match kind {
        FusionKind::SkConvReference => skconv_forward(x, st),
        _ => Ok(forward_traced(kind, x, st)?.v),
    }
}

/// Record one block evaluation on a tape. Produces values identical to
/// [`forward_traced`].
pub fn block_forward_tape<T: Real>(
    tape: &mut Tape<T>,
    kind: FusionKind,
    x: MapVar,
    vars: &BlockVars,
) -> Result<MapVar> {
    let channels = tape.value(vars.k3).c_out();
    if tape.value(x).dims().c != tape.value(vars.k3).c_in() {
        return Err(Error::shape(
            "msconv_forward",
            format!(
                "input has {} channels, block expects {}",
                tape.value(x).dims().c,
                tape.value(vars.k3).c_in()
            ),
        ));
    }
    let u1 = tape.conv2d(x, vars.k3)?;
    let u2 = tape.conv2d(x, vars.k5)?;
    let (u3, u4) = match kind {
        FusionKind::MsConv => (tape.mul(u1, u2)?, tape.sub(u1, u2)?),
        FusionKind::MsConvSum | FusionKind::SkConvReference => {
            (tape.add(u1, u2)?, tape.sub(u1, u2)?)
        }
        FusionKind::NoMo => {
            let d = tape.sub(u1, u2)?;
            (d, d)
        }
        FusionKind::NoSo => (tape.mul(u1, u2)?, tape.add(u1, u2)?),
        FusionKind::NoMoNoSo => {
            let s = tape.add(u1, u2)?;
            (s, s)
        }
    };
    let s = tape.global_avg_pool(u3)?;
    let z = tape.fc(s, vars.w_reduce, vars.b_reduce)?;
    let z = tape.relu(z)?;
    let ab = tape.fc(z, vars.w_expand, vars.b_expand)?;
    let (a_hat, b_hat) = tape.split(ab, channels)?;
    if kind == FusionKind::SkConvReference {
        let (a, b) = tape.softmax_pair(a_hat, b_hat)?;
        let p = tape.scale_channels(a, u1)?;
        let q = tape.scale_channels(b, u2)?;
        tape.add(p, q)
    } else {
        let logit = tape.chan_sub(a_hat, b_hat)?;
        let c = tape.sigmoid(logit)?;
        let w = tape.scale_channels(c, u4)?;
        tape.add(u2, w)
    }
}

/// Largest absolute difference between the softmax form
/// `a ⊙ U1 + b ⊙ U2` and the sigmoid form `(U1 − U2) ⊙ σ(â − b̂) + U2`.
pub fn equivalence_check<T: Real>(
    u1: &Tensor4<T>,
    u2: &Tensor4<T>,
    a_hat: &ChannelVec<T>,
    b_hat: &ChannelVec<T>,
) -> Result<T> {
    let (a, b) = softmax_pair(a_hat, b_hat)?;
    let v_softmax = ew_add(&scale_channels(&a, u1)?, &scale_channels(&b, u2)?)?;
    let c = sigmoid(&chan_sub(a_hat, b_hat)?);
    let v_sigmoid = ew_add(&scale_channels(&c, &ew_sub(u1, u2)?)?, u2)?;
    Ok(v_softmax
        .data()
        .iter()
        .zip(v_sigmoid.data())
        .map(|(&p, &q)| (p - q).abs())
        .fold(T::zero(), T::max))
}
