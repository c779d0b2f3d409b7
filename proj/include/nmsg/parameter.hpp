#ifndef NMSG_PARAMETER_HPP
#define NMSG_PARAMETER_HPP

#include <string>
#include <utility>

#include "nmsg/tensor.hpp"

namespace nmsg {

/// A named trainable tensor owned by a layer.
struct Parameter {
    std::string name;
    Tensor value;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}
};

} // namespace nmsg

#endif
