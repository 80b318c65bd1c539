#pragma once

#include <string>

#include "casceq/tensor_container.hpp"
#include "casceq/types.hpp"

namespace casceq {

Tensor matrix_tensor(std::string name, const MatrixD& m);
Tensor vector_tensor(std::string name, const VectorD& v);

/// Throws InputError unless the tensor is 2-D (resp. 1-D).
MatrixD tensor_matrix(const Tensor& t);
VectorD tensor_vector(const Tensor& t);

}  // namespace casceq
