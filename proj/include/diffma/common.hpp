#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace diffma {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

/// Thrown when a forward pass produces a non-finite activation. Carries the
/// index of the block where the value first appeared.
class NanAbort : public std::runtime_error {
 public:
  NanAbort(int block_index, const std::string& what)
      : std::runtime_error(what), block_index_(block_index) {}
  int block_index() const { return block_index_; }

 private:
  int block_index_;
};

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* field) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string("non-finite values in field '") +
                                field + "'");
  }
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace diffma
