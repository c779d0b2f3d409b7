#ifndef NMSG_LOSSES_HPP
#define NMSG_LOSSES_HPP

#include "nmsg/ops.hpp"

namespace nmsg {

/// -sum(y log(y_hat + 1e-12)), averaged over rows.
inline Var cross_entropy(Var yhat, const Tensor& onehot)
{
    if (yhat.shape() != onehot.shape())
        throw DimensionError("cross_entropy: prediction " + shape_str(yhat.shape()) + " vs target " + shape_str(onehot.shape()));
    const std::size_t rows = yhat.shape().size() >= 2 ? yhat.shape()[0] : 1;
    Tape& t = yhat.tape();
    Var ll = mul(t.constant(onehot), log(add_scalar(yhat, 1e-12)));
    return mul_scalar(sum(ll), -1.0 / static_cast<double>(rows));
}

/// Mean squared elementwise difference.
inline Var mse(Var yhat, const Tensor& target)
{
    if (yhat.shape() != target.shape())
        throw DimensionError("mse: prediction " + shape_str(yhat.shape()) + " vs target " + shape_str(target.shape()));
    Var d = sub(yhat, yhat.tape().constant(target));
    return mean(mul(d, d));
}

} // namespace nmsg

#endif
