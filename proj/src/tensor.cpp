#include "trajforge/tensor.hpp"

namespace trajforge {
template class TensorStore<float>;
template class TensorStore<double>;
}  // namespace trajforge
