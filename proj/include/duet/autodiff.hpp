#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "duet/matrix.hpp"

namespace duet::ag {

using Index = int;

// Dynamic tape for reverse-mode differentiation. Nodes hold dense values;
// backward closures scatter into parent gradients. The tape is built once per
// forward pass and discarded.
class Tape {
 public:
  Index constant(Matrix v) { return push(std::move(v), nullptr); }

  const Matrix& val(Index i) const { return nodes_[i].val; }
  Matrix& grad(Index i) { return nodes_[i].grad; }

  // Runs backward from a 1x1 loss node.
  void backward(Index loss);

  // -- elementwise --
  Index add(Index a, Index b);
  Index sub(Index a, Index b);
  Index mul(Index a, Index b);
  Index div(Index a, Index b);
  Index affine(Index a, double scale, double shift);  // scale*a + shift
  Index relu(Index a);
  Index softplus_op(Index a);
  Index gelu(Index a);
  Index sigmoid(Index a);
  Index rcp_clamped(Index a, double floor);          // 1/max(a, floor)
  Index bernoulli_logit(Index p, double p_eps);      // log(p/(1-p)), p clamped

  // -- linear algebra --
  Index matmul(Index a, Index b);
  Index transpose(Index a);
  Index add_broadcast_rows(Index a, Index row);  // a(N,d) + row(1,d)

  // -- reductions / shaping --
  Index sum(Index a);                        // 1x1
  Index max_reduce(Index a);                 // 1x1, grad to first argmax
  Index row_softmax(Index a);
  Index gather_cols(Index a, std::vector<int> idx);  // a is 1xM -> 1xk
  Index concat_rows(const std::vector<Index>& rows); // k of (1xd) -> kxd
  Index concat_scalars(const std::vector<Index>& xs);  // k of (1x1) -> 1xk
  // Matrix from scalar nodes placed at (row, col); other entries from base.
  Index assemble(Matrix base, const std::vector<std::tuple<int, int, Index>>& entries);

  Index scale_by(Index a, Index s);  // s is 1x1

  Index layer_norm(Index a, Index gain, Index bias, double eps);

  // Forward value = hard (constant), backward gradient passes to soft.
  Index straight_through(Index soft, double hard);

  Index l1_loss(Index a, Index b);  // mean |a-b|, 1x1

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix val;
    Matrix grad;
    std::function<void(Tape&)> back;
  };
  std::vector<Node> nodes_;

  Index push(Matrix v, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{std::move(v), Matrix(), std::move(back)});
    return static_cast<Index>(nodes_.size() - 1);
  }
  Index unary(Index a, const std::function<double(double)>& f,
              const std::function<double(double, double)>& dfdx);
};

}  // namespace duet::ag
