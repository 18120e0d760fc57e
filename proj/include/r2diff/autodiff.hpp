#pragma once

// Reverse-mode differentiation over a small set of matrix operations:
// affine maps, GELU, layer norm, multi-head self-attention, squared error.
// Values are row-major matrices whose rows are tokens.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace r2diff::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
  std::size_t id = 0;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;

  /// With record = false no backward closures or caches are kept.
  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const noexcept { return record_; }

  Var constant(Mat value);
  /// A parameter block whose gradient lands at flat offset `offset`.
  Var parameter(std::size_t offset, Mat value);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  /// a + broadcast of the 1 x n row vector `row`.
  Var add_row(Var a, Var row);
  Var gelu(Var a);
  Var layer_norm(Var a, Var gain, Var bias, Scalar eps = Scalar(1e-5));
  /// qkv: (B*S) x 3h with [Q | K | V] columns; full attention within each
  /// group of S rows, split over `heads` heads. Returns (B*S) x h.
  Var attention(Var qkv, std::size_t seq, std::size_t heads);
  /// Inserts row b of `extra` after every `group` rows of `tokens`.
  Var append_rows(Var tokens, Var extra, std::size_t group);
  /// Inverse of append_rows: keeps the first `group` rows of each group + 1.
  Var drop_last_rows(Var tokens, std::size_t group);
  /// scale * sum (a - target)^2, a 1 x 1 value.
  Var squared_error(Var a, const Mat& target, Scalar scale);

  /// Seeds d(root)/d(root) = 1 and accumulates parameter gradients into
  /// param_grad at each parameter's offset.
  void backward(Var root, std::span<Scalar> param_grad);

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> backward;
    std::ptrdiff_t param_offset = -1;
  };

  Var push(Mat value);
  Mat& grad_of(std::size_t id);

  bool record_;
  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace r2diff::ad
