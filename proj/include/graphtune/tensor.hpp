#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "graphtune/common.hpp"
#include "graphtune/graph.hpp"

namespace graphtune::nn {

// Node of the dynamic reverse-mode tape. All tensors are rank-2, row-major,
// 64-bit floats; vectors are n x 1 and scalars 1 x 1.
struct TensorNode {
  Index rows = 0;
  Index cols = 0;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward_fn;  // scatters this->grad into parents

  std::size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false);
  static Tensor from_matrix(const Matrix& m, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  Index rows() const { return node_->rows; }
  Index cols() const { return node_->cols; }
  bool requires_grad() const { return node_->requires_grad; }
  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  double item() const;
  Matrix to_matrix() const;

  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

  // Reverse pass from a scalar; accumulates into requires_grad leaves.
  void backward() const;

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

using SparseRef = std::shared_ptr<const SparseMatrix>;

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor spmm(const SparseRef& s, const Tensor& x);  // no grad through s
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);  // bias is 1 x d
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_colvec(const Tensor& x, const Tensor& v);  // v is n x 1
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor scale_by_scalar(const Tensor& x, const Tensor& s, double offset = 0.0);  // (offset + s) * x, s is 1x1
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor elu(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor exp_elem(const Tensor& x);
Tensor log_elem(const Tensor& x);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor col_slice(const Tensor& x, Index begin, Index end);
Tensor row_gather(const Tensor& x, const std::vector<Index>& idx);
Tensor segment_sum(const Tensor& x, const std::vector<Index>& seg, Index num_segments);
Tensor segment_mean(const Tensor& x, const std::vector<Index>& seg, Index num_segments);
Tensor segment_max(const Tensor& x, const std::vector<Index>& seg, Index num_segments);
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);
Tensor row_l2_normalize(const Tensor& x);
Tensor l2_normalize_flat(const Tensor& x);  // x / ||x||_F over all entries

// Mean over masked rows of -log softmax(logits)[label].
Tensor softmax_cross_entropy_masked(const Tensor& logits,
                                    const std::vector<Index>& labels,
                                    const std::vector<std::uint8_t>& mask);

// Forward-only row softmax (used for predictions).
Matrix softmax_rows(const Matrix& logits);

}  // namespace graphtune::nn
