#pragma once

#include "mtseg/tensor.hpp"

namespace mtseg::nn {

/// Stride-1 convolution with an odd cubic kernel and zero padding k/2.
/// x: (Cin, X, Y, Z), w: (Cout, Cin, k, k, k) with kx fastest, b: (Cout).
template <class T>
Tensor<T> conv3d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// Kernel 2, stride 2 convolution; halves each (even) spatial dim.
/// w: (Cout, Cin, 2, 2, 2).
template <class T>
Tensor<T> strided_conv3d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                         const Tensor<T>& b);

/// Kernel 2, stride 2 transposed convolution; doubles each spatial dim.
/// w: (Cin, Cout, 2, 2, 2).
template <class T>
Tensor<T> transposed_conv3d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                            const Tensor<T>& b);

template <class T>
Tensor<T> leaky_relu(Tape<T>& tape, const Tensor<T>& x, T slope);

/// Concatenates along the channel axis; spatial dims must agree.
template <class T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

/// Softmax over axis 0 independently at every voxel.
template <class T>
Tensor<T> softmax_channels(Tape<T>& tape, const Tensor<T>& x);

/// Scalar sum of all elements.
template <class T>
Tensor<T> sum_all(Tape<T>& tape, const Tensor<T>& x);

/// Scalar sum of x * weights (weights are constants). Used by tests to turn
/// an op output into a generic scalar objective.
template <class T>
Tensor<T> weighted_sum(Tape<T>& tape, const Tensor<T>& x, std::span<const T> weights);

}  // namespace mtseg::nn
