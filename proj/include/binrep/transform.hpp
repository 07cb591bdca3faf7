#pragma once

#include "binrep/network.hpp"
#include "binrep/tensor.hpp"

namespace binrep {

/// Folds every rectifier slope into the affine layer directly before it
/// (W <- k*W per output channel, b <- k*b) and resets the slopes to 1. The
/// network function is unchanged in both Linear and Step mode. Throws
/// TransformError when a rectifier does not directly follow a conv/fc layer.
Network absorb_slopes(const Network& net);

/// Rewrites a ReLU network as a bounded-rectifier network that computes the
/// same function on inputs whose pre-activations stay within the calibration
/// range. For each ReLU with preceding pre-activation z and bound
/// M = max|z| over `calibration`:
///   b <- b - M/2,  slope <- 1/M   (so f = relu(z)/M on |z| <= M)
///   next affine weight <- M * weight
/// Throws DegenerateLayerError when some M is zero and TransformError when a
/// ReLU does not directly follow a conv/fc layer.
Network cast_relu_net(const Network& relu_net, const Tensor& calibration);

}  // namespace binrep
