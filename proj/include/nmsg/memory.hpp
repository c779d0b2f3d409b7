#ifndef NMSG_MEMORY_HPP
#define NMSG_MEMORY_HPP

// External memory M [l x k] and the read / compose / write controllers.
// Vectors are row matrices: q_t, m_bar_t, m_t, m'_t are [1 x k], z_t is [1 x l].

#include <utility>

#include "nmsg/layers.hpp"

namespace nmsg {

/// Memory matrix plus the recurrent states of the three controllers.
struct MemoryState {
    Var M;
    LstmState ic;
    LstmState oc;
    LstmState wc;
};

/// Everything one memory step produced. q, m and mprime are marked on the tape and
/// serve as the synthetic-gradient attachment points.
struct StepTrace {
    Var x;
    Var q;
    Var z;
    Var mbar;
    Var m;
    Var mprime;
    Var yhat;
};

/// q_t = f_r(x_t). Advances the input-controller state and marks q_t.
inline Var read_query(Tape& tape, LstmCell& ic, Var x, LstmState& state)
{
    state = ic.step(tape, x, state);
    tape.mark(state.h);
    return state.h;
}

/// z_t = softmax over slots of <q_t, M[i,:]>.
inline Var attend(Var q, Var M)
{
    const Shape& qs = q.shape();
    const Shape& ms = M.shape();
    if (qs.size() != 2 || qs[0] != 1 || ms.size() != 2 || qs[1] != ms[1])
        throw DimensionError("attend: query " + shape_str(qs) + " vs memory " + shape_str(ms));
    return softmax_rows(matmul(q, transpose(M)));
}

/// m_bar_t = z_t M (attention-weighted slot mixture) and m_t = f_o(m_bar_t). Marks m_t.
inline std::pair<Var, Var> retrieve(Tape& tape, LstmCell& oc, Var z, Var M, LstmState& state)
{
    const Shape& zs = z.shape();
    if (zs.size() != 2 || zs[0] != 1 || M.shape().size() != 2 || zs[1] != M.shape()[0])
        throw DimensionError("retrieve: weights " + shape_str(zs) + " vs memory " + shape_str(M.shape()));
    Var mbar = matmul(z, M);
    state = oc.step(tape, mbar, state);
    tape.mark(state.h);
    return {mbar, state.h};
}

/// Row-wise erase/add: M_t[i,:] = (1 - z[i]) M[i,:] + z[i] m'.
inline Var write_rule(Var M, Var z, Var mprime)
{
    const Shape& ms = M.shape();
    const Shape& zs = z.shape();
    const Shape& ws = mprime.shape();
    if (ms.size() != 2 || zs.size() != 2 || zs[0] != 1 || zs[1] != ms[0] || ws != Shape{1, ms[1]})
        throw DimensionError("write: memory " + shape_str(ms) + ", weights " + shape_str(zs) + ", update " + shape_str(ws));
    Var zc = reshape(z, {ms[0], 1});
    Var keep = add_scalar(mul_scalar(zc, -1.0), 1.0);
    return add(mul(keep, M), mul(zc, mprime));
}

/// m'_t = f_w(m_t) and the updated memory. Marks m'_t.
inline std::pair<Var, Var> write(Tape& tape, LstmCell& wc, Var m, Var z, Var M, LstmState& state)
{
    state = wc.step(tape, m, state);
    tape.mark(state.h);
    Var next = write_rule(M, z, state.h);
    return {state.h, next};
}

/// y_hat_t = f_D(m_t).
inline Var decode(Tape& tape, Dense& dec, Var m) { return dec.forward(tape, m); }

} // namespace nmsg

#endif
