#include "graphtune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <Eigen/Dense>

namespace graphtune::nn {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

ECMap cmap(const TensorNode& t) { return {t.data.data(), t.rows, t.cols}; }
EMap map_data(TensorNode& t) { return {t.data.data(), t.rows, t.cols}; }
EMap map_grad(TensorNode& t) {
  t.ensure_grad();
  return {t.grad.data(), t.rows, t.cols};
}
ECMap cmap_grad(const TensorNode& t) { return {t.grad.data(), t.rows, t.cols}; }

std::shared_ptr<TensorNode> new_node(Index rows, Index cols) {
  auto n = std::make_shared<TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->data.assign(static_cast<std::size_t>(rows * cols), 0.0);
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch (" +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
}

// Wires parents/backward only when some parent needs gradients.
Tensor finish(std::shared_ptr<TensorNode> out,
              std::vector<std::shared_ptr<TensorNode>> parents,
              std::function<void()> backward_fn) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (needs) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(out));
}

}  // namespace

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
  auto n = new_node(rows, cols);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from_matrix(const Matrix& m, bool requires_grad) {
  auto n = new_node(m.rows, m.cols);
  n->data = m.data;
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

double Tensor::item() const {
  if (node_->data.size() != 1) throw ShapeError("item(): tensor is not scalar");
  return node_->data[0];
}

Matrix Tensor::to_matrix() const {
  Matrix m(rows(), cols());
  m.data = node_->data;
  return m;
}

void Tensor::backward() const {
  if (node_->data.size() != 1)
    throw ShapeError("backward(): root must be scalar");
  node_->ensure_grad();
  node_->grad[0] = 1.0;

  // iterative post-order topological sort
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      TensorNode* child = node->parents[next_child++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward_fn) {
      for (auto& p : node->parents)
        if (p->requires_grad) p->ensure_grad();
      node->backward_fn();
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dims " + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()));
  auto out = new_node(a.rows(), b.cols());
  map_data(*out).noalias() = cmap(*a.node()) * cmap(*b.node());
  TensorNode* o = out.get();
  auto pa = a.ptr(), pb = b.ptr();
  return finish(std::move(out), {pa, pb}, [o, pa, pb]() {
    if (pa->requires_grad)
      map_grad(*pa).noalias() += cmap_grad(*o) * cmap(*pb).transpose();
    if (pb->requires_grad)
      map_grad(*pb).noalias() += cmap(*pa).transpose() * cmap_grad(*o);
  });
}

Tensor spmm(const SparseRef& s, const Tensor& x) {
  if (s->cols != x.rows())
    throw ShapeError("spmm: inner dims " + std::to_string(s->cols) + " vs " +
                     std::to_string(x.rows()));
  const Index d = x.cols();
  auto out = new_node(s->rows, d);
  {
    const auto& xd = x.data();
    auto& od = out->data;
    for (Index i = 0; i < s->rows; ++i) {
      double* orow = od.data() + i * d;
      for (Index k = s->row_offsets[static_cast<std::size_t>(i)];
           k < s->row_offsets[static_cast<std::size_t>(i) + 1]; ++k) {
        const double v = s->values[static_cast<std::size_t>(k)];
        const double* xrow =
            xd.data() + s->col_indices[static_cast<std::size_t>(k)] * d;
        for (Index c = 0; c < d; ++c) orow[c] += v * xrow[c];
      }
    }
  }
  TensorNode* o = out.get();
  auto px = x.ptr();
  // dX = S^T dY, via scatter over the rows of S.
  return finish(std::move(out), {px}, [o, px, s]() {
    const Index d = o->cols;
    const auto& og = o->grad;
    auto& xg = px->grad;
    for (Index i = 0; i < s->rows; ++i) {
      const double* grow = og.data() + i * d;
      for (Index k = s->row_offsets[static_cast<std::size_t>(i)];
           k < s->row_offsets[static_cast<std::size_t>(i) + 1]; ++k) {
        const double v = s->values[static_cast<std::size_t>(k)];
        double* xrow = xg.data() + s->col_indices[static_cast<std::size_t>(k)] * d;
        for (Index c = 0; c < d; ++c) xrow[c] += v * grow[c];
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto out = new_node(a.rows(), a.cols());
  for (std::size_t i = 0; i < out->size(); ++i)
    out->data[i] = a.data()[i] + b.data()[i];
  TensorNode* o = out.get();
  auto pa = a.ptr(), pb = b.ptr();
  return finish(std::move(out), {pa, pb}, [o, pa, pb]() {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < o->size(); ++i) pa->grad[i] += o->grad[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < o->size(); ++i) pb->grad[i] += o->grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto out = new_node(a.rows(), a.cols());
  for (std::size_t i = 0; i < out->size(); ++i)
    out->data[i] = a.data()[i] - b.data()[i];
  TensorNode* o = out.get();
  auto pa = a.ptr(), pb = b.ptr();
  return finish(std::move(out), {pa, pb}, [o, pa, pb]() {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < o->size(); ++i) pa->grad[i] += o->grad[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < o->size(); ++i) pb->grad[i] -= o->grad[i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols())
    throw ShapeError("add_bias: bias must be 1x" + std::to_string(x.cols()));
  auto out = new_node(x.rows(), x.cols());
  const Index d = x.cols();
  for (Index i = 0; i < x.rows(); ++i)
    for (Index c = 0; c < d; ++c)
      out->data[static_cast<std::size_t>(i * d + c)] =
          x.data()[static_cast<std::size_t>(i * d + c)] +
          bias.data()[static_cast<std::size_t>(c)];
  TensorNode* o = out.get();
  auto px = x.ptr(), pbias = bias.ptr();
  return finish(std::move(out), {px, pbias}, [o, px, pbias]() {
    const Index d = o->cols;
    if (px->requires_grad)
      for (std::size_t i = 0; i < o->size(); ++i) px->grad[i] += o->grad[i];
    if (pbias->requires_grad)
      for (Index i = 0; i < o->rows; ++i)
        for (Index c = 0; c < d; ++c)
          pbias->grad[static_cast<std::size_t>(c)] +=
              o->grad[static_cast<std::size_t>(i * d + c)];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto out = new_node(a.rows(), a.cols());
  for (std::size_t i = 0; i < out->size(); ++i)
    out->data[i] = a.data()[i] * b.data()[i];
  TensorNode* o = out.get();
  auto pa = a.ptr(), pb = b.ptr();
  return finish(std::move(out), {pa, pb}, [o, pa, pb]() {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < o->size(); ++i)
        pa->grad[i] += o->grad[i] * pb->data[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < o->size(); ++i)
        pb->grad[i] += o->grad[i] * pa->data[i];
  });
}

Tensor mul_colvec(const Tensor& x, const Tensor& v) {
  if (v.rows() != x.rows() || v.cols() != 1)
    throw ShapeError("mul_colvec: v must be " + std::to_string(x.rows()) + "x1");
  auto out = new_node(x.rows(), x.cols());
  const Index d = x.cols();
  for (Index i = 0; i < x.rows(); ++i) {
    const double s = v.data()[static_cast<std::size_t>(i)];
    for (Index c = 0; c < d; ++c)
      out->data[static_cast<std::size_t>(i * d + c)] =
          x.data()[static_cast<std::size_t>(i * d + c)] * s;
  }
  TensorNode* o = out.get();
  auto px = x.ptr(), pv = v.ptr();
  return finish(std::move(out), {px, pv}, [o, px, pv]() {
    const Index d = o->cols;
    for (Index i = 0; i < o->rows; ++i) {
      const double s = pv->data[static_cast<std::size_t>(i)];
      for (Index c = 0; c < d; ++c) {
        const std::size_t k = static_cast<std::size_t>(i * d + c);
        if (px->requires_grad) px->grad[k] += o->grad[k] * s;
        if (pv->requires_grad)
          pv->grad[static_cast<std::size_t>(i)] += o->grad[k] * px->data[k];
      }
    }
  });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "divide");
  auto out = new_node(a.rows(), a.cols());
  for (std::size_t i = 0; i < out->size(); ++i)
    out->data[i] = a.data()[i] / b.data()[i];
  TensorNode* o = out.get();
  auto pa = a.ptr(), pb = b.ptr();
  return finish(std::move(out), {pa, pb}, [o, pa, pb]() {
    for (std::size_t i = 0; i < o->size(); ++i) {
      const double inv_b = 1.0 / pb->data[i];
      if (pa->requires_grad) pa->grad[i] += o->grad[i] * inv_b;
      if (pb->requires_grad)
        pb->grad[i] -= o->grad[i] * pa->data[i] * inv_b * inv_b;
    }
  });
}

Tensor scale(const Tensor& x, double c) {
  auto out = new_node(x.rows(), x.cols());
  for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = x.data()[i] * c;
  TensorNode* o = out.get();
  auto px = x.ptr();
  return finish(std::move(out), {px}, [o, px, c]() {
    for (std::size_t i = 0; i < o->size(); ++i) px->grad[i] += o->grad[i] * c;
  });
}

Tensor scale_by_scalar(const Tensor& x, const Tensor& s, double offset) {
  if (s.rows() != 1 || s.cols() != 1)
    throw ShapeError("scale_by_scalar: scale must be 1x1");
  const double factor = offset + s.data()[0];
  auto out = new_node(x.rows(), x.cols());
  for (std::size_t i = 0; i < out->size(); ++i)
    out->data[i] = x.data()[i] * factor;
  TensorNode* o = out.get();
  auto px = x.ptr(), ps = s.ptr();
  return finish(std::move(out), {px, ps}, [o, px, ps, factor]() {
    if (px->requires_grad)
      for (std::size_t i = 0; i < o->size(); ++i)
        px->grad[i] += o->grad[i] * factor;
    if (ps->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < o->size(); ++i)
        acc += o->grad[i] * px->data[i];
      ps->grad[0] += acc;
    }
  });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& x, Fwd fwd, Bwd bwd_from_input) {
  auto out = new_node(x.rows(), x.cols());
  for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = fwd(x.data()[i]);
  TensorNode* o = out.get();
  auto px = x.ptr();
  return finish(std::move(out), {px}, [o, px, bwd_from_input]() {
    for (std::size_t i = 0; i < o->size(); ++i)
      px->grad[i] += o->grad[i] * bwd_from_input(px->data[i]);
  });
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary_elementwise(
      x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v) { return v > 0 ? 1.0 : slope; });
}

Tensor elu(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return v > 0 ? v : std::expm1(v); },
      [](double v) { return v > 0 ? 1.0 : std::exp(v); });
}

Tensor tanh_act(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return std::tanh(v); },
      [](double v) {
        const double t = std::tanh(v);
        return 1.0 - t * t;
      });
}

Tensor exp_elem(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return std::exp(v); },
      [](double v) { return std::exp(v); });
}

Tensor log_elem(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return std::log(v); },
      [](double v) { return 1.0 / v; });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty input");
  const Index n = parts.front().rows();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw ShapeError("concat_cols: row mismatch");
    total += p.cols();
  }
  auto out = new_node(n, total);
  Index off = 0;
  for (const auto& p : parts) {
    const Index d = p.cols();
    for (Index i = 0; i < n; ++i)
      for (Index c = 0; c < d; ++c)
        out->data[static_cast<std::size_t>(i * total + off + c)] =
            p.data()[static_cast<std::size_t>(i * d + c)];
    off += d;
  }
  TensorNode* o = out.get();
  std::vector<std::shared_ptr<TensorNode>> parents;
  for (const auto& p : parts) parents.push_back(p.ptr());
  auto parent_copy = parents;
  return finish(std::move(out), std::move(parents), [o, parent_copy]() {
    const Index total = o->cols;
    Index off = 0;
    for (const auto& p : parent_copy) {
      const Index d = p->cols;
      if (p->requires_grad) {
        for (Index i = 0; i < o->rows; ++i)
          for (Index c = 0; c < d; ++c)
            p->grad[static_cast<std::size_t>(i * d + c)] +=
                o->grad[static_cast<std::size_t>(i * total + off + c)];
      }
      off += d;
    }
  });
}

Tensor col_slice(const Tensor& x, Index begin, Index end) {
  if (begin < 0 || end > x.cols() || begin >= end)
    throw ShapeError("col_slice: bad range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") for " + std::to_string(x.cols()) +
                     " cols");
  const Index d = end - begin;
  auto out = new_node(x.rows(), d);
  const Index xc = x.cols();
  for (Index i = 0; i < x.rows(); ++i)
    for (Index c = 0; c < d; ++c)
      out->data[static_cast<std::size_t>(i * d + c)] =
          x.data()[static_cast<std::size_t>(i * xc + begin + c)];
  TensorNode* o = out.get();
  auto px = x.ptr();
  return finish(std::move(out), {px}, [o, px, begin]() {
    const Index d = o->cols, xc = px->cols;
    for (Index i = 0; i < o->rows; ++i)
      for (Index c = 0; c < d; ++c)
        px->grad[static_cast<std::size_t>(i * xc + begin + c)] +=
            o->grad[static_cast<std::size_t>(i * d + c)];
  });
}

Tensor row_gather(const Tensor& x, const std::vector<Index>& idx) {
  const Index m = static_cast<Index>(idx.size());
  const Index d = x.cols();
  for (Index i : idx)
    if (i < 0 || i >= x.rows()) throw ShapeError("row_gather: index out of range");
  auto out = new_node(m, d);
  for (Index i = 0; i < m; ++i)
    for (Index c = 0; c < d; ++c)
      out->data[static_cast<std::size_t>(i * d + c)] =
          x.data()[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)] * d + c)];
  TensorNode* o = out.get();
  auto px = x.ptr();
  auto idx_copy = idx;
  return finish(std::move(out), {px}, [o, px, idx_copy]() {
    const Index d = o->cols;
    for (Index i = 0; i < o->rows; ++i)
      for (Index c = 0; c < d; ++c)
        px->grad[static_cast<std::size_t>(idx_copy[static_cast<std::size_t>(i)] * d + c)] +=
            o->grad[static_cast<std::size_t>(i * d + c)];
  });
}

namespace {

void check_segments(const Tensor& x, const std::vector<Index>& seg,
                    Index num_segments) {
  if (static_cast<Index>(seg.size()) != x.rows())
    throw ShapeError("segment op: index length != rows");
  for (Index s : seg)
    if (s < 0 || s >= num_segments)
      throw ShapeError("segment op: segment id out of range");
}

}  // namespace

Tensor segment_sum(const Tensor& x, const std::vector<Index>& seg,
                   Index num_segments) {
  check_segments(x, seg, num_segments);
  const Index d = x.cols();
  auto out = new_node(num_segments, d);
  for (Index i = 0; i < x.rows(); ++i) {
    const Index s = seg[static_cast<std::size_t>(i)];
    for (Index c = 0; c < d; ++c)
      out->data[static_cast<std::size_t>(s * d + c)] +=
          x.data()[static_cast<std::size_t>(i * d + c)];
  }
  TensorNode* o = out.get();
  auto px = x.ptr();
  auto seg_copy = seg;
  return finish(std::move(out), {px}, [o, px, seg_copy]() {
    const Index d = o->cols;
    for (Index i = 0; i < px->rows; ++i) {
      const Index s = seg_copy[static_cast<std::size_t>(i)];
      for (Index c = 0; c < d; ++c)
        px->grad[static_cast<std::size_t>(i * d + c)] +=
            o->grad[static_cast<std::size_t>(s * d + c)];
    }
  });
}

Tensor segment_mean(const Tensor& x, const std::vector<Index>& seg,
                    Index num_segments) {
  check_segments(x, seg, num_segments);
  const Index d = x.cols();
  std::vector<double> count(static_cast<std::size_t>(num_segments), 0.0);
  for (Index s : seg) count[static_cast<std::size_t>(s)] += 1.0;
  auto out = new_node(num_segments, d);
  for (Index i = 0; i < x.rows(); ++i) {
    const Index s = seg[static_cast<std::size_t>(i)];
    for (Index c = 0; c < d; ++c)
      out->data[static_cast<std::size_t>(s * d + c)] +=
          x.data()[static_cast<std::size_t>(i * d + c)];
  }
  for (Index s = 0; s < num_segments; ++s) {
    const double cnt = count[static_cast<std::size_t>(s)];
    if (cnt > 0)
      for (Index c = 0; c < d; ++c)
        out->data[static_cast<std::size_t>(s * d + c)] /= cnt;
  }
  TensorNode* o = out.get();
  auto px = x.ptr();
  auto seg_copy = seg;
  auto count_copy = count;
  return finish(std::move(out), {px}, [o, px, seg_copy, count_copy]() {
    const Index d = o->cols;
    for (Index i = 0; i < px->rows; ++i) {
      const Index s = seg_copy[static_cast<std::size_t>(i)];
      const double cnt = count_copy[static_cast<std::size_t>(s)];
      for (Index c = 0; c < d; ++c)
        px->grad[static_cast<std::size_t>(i * d + c)] +=
            o->grad[static_cast<std::size_t>(s * d + c)] / cnt;
    }
  });
}

Tensor segment_max(const Tensor& x, const std::vector<Index>& seg,
                   Index num_segments) {
  check_segments(x, seg, num_segments);
  const Index d = x.cols();
  auto out = new_node(num_segments, d);
  // argmax row per (segment, col); empty segments stay 0
  std::vector<Index> arg(static_cast<std::size_t>(num_segments * d), -1);
  for (Index i = 0; i < x.rows(); ++i) {
    const Index s = seg[static_cast<std::size_t>(i)];
    for (Index c = 0; c < d; ++c) {
      const std::size_t k = static_cast<std::size_t>(s * d + c);
      const double v = x.data()[static_cast<std::size_t>(i * d + c)];
      if (arg[k] < 0 || v > out->data[k]) {
        out->data[k] = v;
        arg[k] = i;
      }
    }
  }
  TensorNode* o = out.get();
  auto px = x.ptr();
  auto arg_copy = arg;
  return finish(std::move(out), {px}, [o, px, arg_copy]() {
    const Index d = o->cols;
    for (Index s = 0; s < o->rows; ++s)
      for (Index c = 0; c < d; ++c) {
        const std::size_t k = static_cast<std::size_t>(s * d + c);
        if (arg_copy[k] >= 0)
          px->grad[static_cast<std::size_t>(arg_copy[k] * d + c)] += o->grad[k];
      }
  });
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw Error("dropout: p must be < 1");
  auto out = new_node(x.rows(), x.cols());
  auto mask = std::make_shared<std::vector<double>>(out->size());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < out->size(); ++i) {
    (*mask)[i] = unit(rng) >= p ? keep_scale : 0.0;
    out->data[i] = x.data()[i] * (*mask)[i];
  }
  TensorNode* o = out.get();
  auto px = x.ptr();
  return finish(std::move(out), {px}, [o, px, mask]() {
    for (std::size_t i = 0; i < o->size(); ++i)
      px->grad[i] += o->grad[i] * (*mask)[i];
  });
}

Tensor row_l2_normalize(const Tensor& x) {
  const Index d = x.cols();
  auto out = new_node(x.rows(), d);
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.rows()));
  constexpr double kEps = 1e-12;
  for (Index i = 0; i < x.rows(); ++i) {
    double ss = 0.0;
    for (Index c = 0; c < d; ++c) {
      const double v = x.data()[static_cast<std::size_t>(i * d + c)];
      ss += v * v;
    }
    const double nrm = std::sqrt(ss);
    (*norms)[static_cast<std::size_t>(i)] = nrm;
    if (nrm > kEps)
      for (Index c = 0; c < d; ++c)
        out->data[static_cast<std::size_t>(i * d + c)] =
            x.data()[static_cast<std::size_t>(i * d + c)] / nrm;
  }
  TensorNode* o = out.get();
  auto px = x.ptr();
  return finish(std::move(out), {px}, [o, px, norms]() {
    const Index d = o->cols;
    for (Index i = 0; i < o->rows; ++i) {
      const double nrm = (*norms)[static_cast<std::size_t>(i)];
      if (nrm <= kEps) continue;
      double dot = 0.0;
      for (Index c = 0; c < d; ++c)
        dot += o->grad[static_cast<std::size_t>(i * d + c)] *
               o->data[static_cast<std::size_t>(i * d + c)];
      for (Index c = 0; c < d; ++c) {
        const std::size_t k = static_cast<std::size_t>(i * d + c);
        px->grad[k] += (o->grad[k] - o->data[k] * dot) / nrm;
      }
    }
  });
}

Tensor l2_normalize_flat(const Tensor& x) {
  auto out = new_node(x.rows(), x.cols());
  constexpr double kEps = 1e-12;
  double ss = 0.0;
  for (double v : x.data()) ss += v * v;
  const double nrm = std::sqrt(ss);
  if (nrm > kEps)
    for (std::size_t i = 0; i < out->size(); ++i)
      out->data[i] = x.data()[i] / nrm;
  TensorNode* o = out.get();
  auto px = x.ptr();
  return finish(std::move(out), {px}, [o, px, nrm]() {
    if (nrm <= kEps) return;
    double dot = 0.0;
    for (std::size_t i = 0; i < o->size(); ++i) dot += o->grad[i] * o->data[i];
    for (std::size_t i = 0; i < o->size(); ++i)
      px->grad[i] += (o->grad[i] - o->data[i] * dot) / nrm;
  });
}

Tensor softmax_cross_entropy_masked(const Tensor& logits,
                                    const std::vector<Index>& labels,
                                    const std::vector<std::uint8_t>& mask) {
  const Index n = logits.rows(), C = logits.cols();
  if (static_cast<Index>(labels.size()) != n ||
      static_cast<Index>(mask.size()) != n)
    throw ShapeError("softmax_cross_entropy_masked: labels/mask length");
  auto probs = std::make_shared<std::vector<double>>(logits.data().size());
  double loss = 0.0;
  Index count = 0;
  for (Index i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * C;
    double* prow = probs->data() + i * C;
    double mx = row[0];
    for (Index c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (Index c = 0; c < C; ++c) {
      prow[c] = std::exp(row[c] - mx);
      sum += prow[c];
    }
    for (Index c = 0; c < C; ++c) prow[c] /= sum;
    if (mask[static_cast<std::size_t>(i)]) {
      const Index y = labels[static_cast<std::size_t>(i)];
      if (y < 0 || y >= C)
        throw ShapeError("softmax_cross_entropy_masked: label out of range");
      loss -= std::log(std::max(prow[y], 1e-300));
      ++count;
    }
  }
  if (count == 0) throw Error("softmax_cross_entropy_masked: empty mask");
  auto out = new_node(1, 1);
  out->data[0] = loss / static_cast<double>(count);
  TensorNode* o = out.get();
  auto pl = logits.ptr();
  auto labels_copy = labels;
  auto mask_copy = mask;
  return finish(std::move(out), {pl}, [o, pl, probs, labels_copy, mask_copy]() {
    const Index n = pl->rows, C = pl->cols;
    Index count = 0;
    for (auto m : mask_copy) count += m ? 1 : 0;
    const double g = o->grad[0] / static_cast<double>(count);
    for (Index i = 0; i < n; ++i) {
      if (!mask_copy[static_cast<std::size_t>(i)]) continue;
      const double* prow = probs->data() + i * C;
      double* grow = pl->grad.data() + i * C;
      const Index y = labels_copy[static_cast<std::size_t>(i)];
      for (Index c = 0; c < C; ++c)
        grow[c] += g * (prow[c] - (c == y ? 1.0 : 0.0));
    }
  });
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows, logits.cols);
  for (Index i = 0; i < logits.rows; ++i) {
    double mx = logits(i, 0);
    for (Index c = 1; c < logits.cols; ++c) mx = std::max(mx, logits(i, c));
    double sum = 0.0;
    for (Index c = 0; c < logits.cols; ++c) {
      out(i, c) = std::exp(logits(i, c) - mx);
      sum += out(i, c);
    }
    for (Index c = 0; c < logits.cols; ++c) out(i, c) /= sum;
  }
  return out;
}

}  // namespace graphtune::nn
