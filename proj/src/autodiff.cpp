#include "sed/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sed::ad {

int64_t param_count(const ParamVector& p) {
  int64_t n = 0;
  for (const auto& [name, t] : p) n += t.size();
  return n;
}

bool params_all_finite(const ParamVector& p) {
  for (const auto& [name, t] : p)
    if (!t.all_finite()) return false;
  return true;
}

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor& Tape::grad_buf(NodeId id) {
  Node& n = at(id);
  if (!n.grad_live) {
    n.grad = Tensor(n.val.shape);
    n.grad_live = true;
  }
  return n.grad;
}

NodeId Tape::constant(Tensor v) {
  Node n;
  n.op = Op::Const;
  n.val = std::move(v);
  return push(std::move(n));
}

NodeId Tape::param(const std::string& name, const Tensor& value) {
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return it->second;
  Node n;
  n.op = Op::Param;
  n.val = value;
  n.needs_grad = true;
  n.pname = name;
  NodeId id = push(std::move(n));
  param_nodes_[name] = id;
  return id;
}

NodeId Tape::stop_grad(NodeId x) {
  Node n;
  n.op = Op::StopGrad;
  n.in = {x};
  n.val = val(x);
  return push(std::move(n));
}

static int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

NodeId Tape::conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
  const Tensor& X = val(x);
  const Tensor& W = val(w);
  const Tensor& B = val(b);
  if (X.ndim() != 3 || W.ndim() != 4 || B.ndim() != 1)
    throw std::invalid_argument("conv2d: bad ranks");
  const int cin = X.dim(0), h = X.dim(1), iw = X.dim(2);
  const int cout = W.dim(0), kh = W.dim(2), kw = W.dim(3);
  if (W.dim(1) != cin || B.dim(0) != cout) throw std::invalid_argument("conv2d: shape mismatch");
  const int oh = conv_out_dim(h, kh, stride, pad);
  const int ow = conv_out_dim(iw, kw, stride, pad);

  Node n;
  n.op = Op::Conv2d;
  n.in = {x, w, b};
  n.i0 = stride;
  n.i1 = pad;
  n.needs_grad = at(x).needs_grad || at(w).needs_grad || at(b).needs_grad;
  n.val = Tensor({cout, oh, ow});

  const double* xp = X.v.data();
  const double* wp = W.v.data();
  double* op_ = n.val.v.data();
  for (int co = 0; co < cout; ++co) {
    const double bias = B[co];
    double* oplane = op_ + static_cast<int64_t>(co) * oh * ow;
    std::fill(oplane, oplane + static_cast<int64_t>(oh) * ow, bias);
    for (int ci = 0; ci < cin; ++ci) {
      const double* xplane = xp + static_cast<int64_t>(ci) * h * iw;
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const double wv = wp[((static_cast<int64_t>(co) * cin + ci) * kh + ky) * kw + kx];
          // valid ox range where ix = ox*stride + kx - pad lies in [0, iw)
          int ox0 = 0;
          while (ox0 < ow && ox0 * stride + kx - pad < 0) ++ox0;
          int ox1 = ow;
          while (ox1 > ox0 && (ox1 - 1) * stride + kx - pad >= iw) --ox1;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const double* src = xplane + static_cast<int64_t>(iy) * iw + (kx - pad);
            double* dst = oplane + static_cast<int64_t>(oy) * ow;
            if (stride == 1) {
              for (int ox = ox0; ox < ox1; ++ox) dst[ox] += wv * src[ox];
            } else {
              for (int ox = ox0; ox < ox1; ++ox) dst[ox] += wv * src[ox * stride];
            }
          }
        }
    }
  }
  return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
  Node n;
  n.op = Op::Relu;
  n.in = {x};
  n.needs_grad = at(x).needs_grad;
  n.val = val(x);
  for (double& v : n.val.v) v = v > 0 ? v : 0.0;
  return push(std::move(n));
}

static void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

NodeId Tape::add(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "add");
  Node n;
  n.op = Op::Add;
  n.in = {a, b};
  n.needs_grad = at(a).needs_grad || at(b).needs_grad;
  n.val = val(a);
  const Tensor& B = val(b);
  for (int64_t i = 0; i < n.val.size(); ++i) n.val[i] += B[i];
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "sub");
  Node n;
  n.op = Op::Sub;
  n.in = {a, b};
  n.needs_grad = at(a).needs_grad || at(b).needs_grad;
  n.val = val(a);
  const Tensor& B = val(b);
  for (int64_t i = 0; i < n.val.size(); ++i) n.val[i] -= B[i];
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "mul");
  Node n;
  n.op = Op::Mul;
  n.in = {a, b};
  n.needs_grad = at(a).needs_grad || at(b).needs_grad;
  n.val = val(a);
  const Tensor& B = val(b);
  for (int64_t i = 0; i < n.val.size(); ++i) n.val[i] *= B[i];
  return push(std::move(n));
}

NodeId Tape::scale(NodeId x, double c) {
  Node n;
  n.op = Op::Scale;
  n.in = {x};
  n.c0 = c;
  n.needs_grad = at(x).needs_grad;
  n.val = val(x);
  for (double& v : n.val.v) v *= c;
  return push(std::move(n));
}

NodeId Tape::add_n(const std::vector<NodeId>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_n: empty input");
  Node n;
  n.op = Op::AddN;
  n.in = xs;
  n.val = val(xs[0]);
  for (size_t i = 1; i < xs.size(); ++i) {
    require_same_shape(n.val, val(xs[i]), "add_n");
    const Tensor& t = val(xs[i]);
    for (int64_t j = 0; j < n.val.size(); ++j) n.val[j] += t[j];
  }
  for (NodeId x : xs) n.needs_grad = n.needs_grad || at(x).needs_grad;
  return push(std::move(n));
}

NodeId Tape::softmax_rows(NodeId logits) {
  const Tensor& Z = val(logits);
  if (Z.ndim() != 2) throw std::invalid_argument("softmax_rows: expected [N,K]");
  Node n;
  n.op = Op::SoftmaxRows;
  n.in = {logits};
  n.needs_grad = at(logits).needs_grad;
  n.val = Z;
  const int N = Z.dim(0), K = Z.dim(1);
  for (int i = 0; i < N; ++i) {
    double* row = n.val.v.data() + static_cast<int64_t>(i) * K;
    double m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    double s = 0.0;
    for (int k = 0; k < K; ++k) {
      row[k] = std::exp(row[k] - m);
      s += row[k];
    }
    const double inv = 1.0 / s;
    for (int k = 0; k < K; ++k) row[k] *= inv;
  }
  return push(std::move(n));
}

NodeId Tape::log_clamped(NodeId x, double eps) {
  Node n;
  n.op = Op::LogClamped;
  n.in = {x};
  n.c0 = eps;
  n.needs_grad = at(x).needs_grad;
  n.val = val(x);
  for (double& v : n.val.v) v = std::log(std::max(v, eps));
  return push(std::move(n));
}

NodeId Tape::square(NodeId x) {
  Node n;
  n.op = Op::Square;
  n.in = {x};
  n.needs_grad = at(x).needs_grad;
  n.val = val(x);
  for (double& v : n.val.v) v *= v;
  return push(std::move(n));
}

NodeId Tape::sum_all(NodeId x) {
  Node n;
  n.op = Op::SumAll;
  n.in = {x};
  n.needs_grad = at(x).needs_grad;
  double s = 0.0;
  for (double v : val(x).v) s += v;
  n.val = Tensor::scalar(s);
  return push(std::move(n));
}

NodeId Tape::weighted_sum_all(NodeId x, std::shared_ptr<const std::vector<double>> w) {
  const Tensor& X = val(x);
  if (static_cast<int64_t>(w->size()) != X.size())
    throw std::invalid_argument("weighted_sum_all: weight length mismatch");
  Node n;
  n.op = Op::WeightedSumAll;
  n.in = {x};
  n.wrow = std::move(w);
  n.needs_grad = at(x).needs_grad;
  double s = 0.0;
  for (int64_t i = 0; i < X.size(); ++i) s += (*n.wrow)[static_cast<size_t>(i)] * X[i];
  n.val = Tensor::scalar(s);
  return push(std::move(n));
}

NodeId Tape::kl_rows(NodeId probs, std::shared_ptr<const Tensor> target,
                     std::shared_ptr<const std::vector<double>> row_w, double eps) {
  const Tensor& P = val(probs);
  if (P.ndim() != 2 || !P.same_shape(*target)) throw std::invalid_argument("kl_rows: shape mismatch");
  const int N = P.dim(0), K = P.dim(1);
  if (static_cast<int>(row_w->size()) != N) throw std::invalid_argument("kl_rows: weight length");
  Node n;
  n.op = Op::KlRows;
  n.in = {probs};
  n.target = std::move(target);
  n.wrow = std::move(row_w);
  n.c0 = eps;
  n.needs_grad = at(probs).needs_grad;
  double s = 0.0;
  for (int i = 0; i < N; ++i) {
    const double w = (*n.wrow)[static_cast<size_t>(i)];
    if (w == 0.0) continue;
    double row = 0.0;
    for (int k = 0; k < K; ++k) {
      const double t = (*n.target)[static_cast<int64_t>(i) * K + k];
      if (t <= 0.0) continue;
      const double p = std::max(P[static_cast<int64_t>(i) * K + k], eps);
      row += t * (std::log(t) - std::log(p));
    }
    s += w * row;
  }
  n.val = Tensor::scalar(s);
  return push(std::move(n));
}

NodeId Tape::ce_rows(NodeId probs, std::shared_ptr<const std::vector<int>> cls,
                     std::shared_ptr<const std::vector<double>> row_w, double eps) {
  const Tensor& P = val(probs);
  if (P.ndim() != 2) throw std::invalid_argument("ce_rows: expected [N,K]");
  const int N = P.dim(0), K = P.dim(1);
  if (static_cast<int>(cls->size()) != N || static_cast<int>(row_w->size()) != N)
    throw std::invalid_argument("ce_rows: index/weight length");
  Node n;
  n.op = Op::CeRows;
  n.in = {probs};
  n.cls = std::move(cls);
  n.wrow = std::move(row_w);
  n.c0 = eps;
  n.needs_grad = at(probs).needs_grad;
  double s = 0.0;
  for (int i = 0; i < N; ++i) {
    const int c = (*n.cls)[static_cast<size_t>(i)];
    if (c < 0) continue;
    if (c >= K) throw std::invalid_argument("ce_rows: class out of range");
    const double w = (*n.wrow)[static_cast<size_t>(i)];
    if (w == 0.0) continue;
    s += w * -std::log(std::max(P[static_cast<int64_t>(i) * K + c], eps));
  }
  n.val = Tensor::scalar(s);
  return push(std::move(n));
}

NodeId Tape::l2_rows(NodeId x, std::shared_ptr<const Tensor> target,
                     std::shared_ptr<const std::vector<double>> row_w) {
  const Tensor& X = val(x);
  if (X.ndim() != 2 || !X.same_shape(*target)) throw std::invalid_argument("l2_rows: shape mismatch");
  const int N = X.dim(0), K = X.dim(1);
  if (static_cast<int>(row_w->size()) != N) throw std::invalid_argument("l2_rows: weight length");
  Node n;
  n.op = Op::L2Rows;
  n.in = {x};
  n.target = std::move(target);
  n.wrow = std::move(row_w);
  n.needs_grad = at(x).needs_grad;
  double s = 0.0;
  for (int i = 0; i < N; ++i) {
    const double w = (*n.wrow)[static_cast<size_t>(i)];
    if (w == 0.0) continue;
    double row = 0.0;
    for (int k = 0; k < K; ++k) {
      const double d = X[static_cast<int64_t>(i) * K + k] - (*n.target)[static_cast<int64_t>(i) * K + k];
      row += d * d;
    }
    s += w * row;
  }
  n.val = Tensor::scalar(s);
  return push(std::move(n));
}

NodeId Tape::chw_to_rows(NodeId x, int anchors, int cols, int channel_offset) {
  const Tensor& X = val(x);
  if (X.ndim() != 3) throw std::invalid_argument("chw_to_rows: expected [C,H,W]");
  const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
  if (channel_offset + anchors * cols > C) throw std::invalid_argument("chw_to_rows: channel overflow");
  Node n;
  n.op = Op::ChwToRows;
  n.in = {x};
  n.i0 = anchors;
  n.i1 = cols;
  n.i2 = channel_offset;
  n.needs_grad = at(x).needs_grad;
  n.val = Tensor({H * W * anchors, cols});
  for (int a = 0; a < anchors; ++a)
    for (int k = 0; k < cols; ++k) {
      const double* src = X.v.data() + static_cast<int64_t>(channel_offset + a * cols + k) * H * W;
      for (int yx = 0; yx < H * W; ++yx)
        n.val[(static_cast<int64_t>(yx) * anchors + a) * cols + k] = src[yx];
    }
  return push(std::move(n));
}

double Tape::scalar(NodeId id) const {
  const Tensor& t = val(id);
  if (t.size() != 1) throw std::invalid_argument("scalar: node is not scalar");
  return t[0];
}

ParamVector Tape::backward(NodeId loss) {
  const double lv = scalar(loss);
  if (!std::isfinite(lv)) throw std::runtime_error("backward: non-finite loss value");

  grad_buf(loss)[0] = 1.0;

  for (NodeId id = loss; id >= 0; --id) {
    Node& n = at(id);
    if (!n.grad_live || !n.needs_grad) continue;
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Const:
      case Op::Param:
      case Op::StopGrad:
        break;
      case Op::Conv2d: {
        const Tensor& X = val(n.in[0]);
        const Tensor& W = val(n.in[1]);
        const int cin = X.dim(0), h = X.dim(1), iw = X.dim(2);
        const int cout = W.dim(0), kh = W.dim(2), kw = W.dim(3);
        const int oh = n.val.dim(1), ow = n.val.dim(2);
        const int stride = n.i0, pad = n.i1;
        const bool need_x = at(n.in[0]).needs_grad;
        const bool need_w = at(n.in[1]).needs_grad;
        const bool need_b = at(n.in[2]).needs_grad;
        Tensor* gx = need_x ? &grad_buf(n.in[0]) : nullptr;
        Tensor* gw = need_w ? &grad_buf(n.in[1]) : nullptr;
        Tensor* gb = need_b ? &grad_buf(n.in[2]) : nullptr;
        for (int co = 0; co < cout; ++co) {
          const double* gplane = g.v.data() + static_cast<int64_t>(co) * oh * ow;
          if (gb) {
            double s = 0.0;
            for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) s += gplane[i];
            (*gb)[co] += s;
          }
          for (int ci = 0; ci < cin; ++ci) {
            const double* xplane = X.v.data() + static_cast<int64_t>(ci) * h * iw;
            double* gxplane = gx ? gx->v.data() + static_cast<int64_t>(ci) * h * iw : nullptr;
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int64_t widx = ((static_cast<int64_t>(co) * cin + ci) * kh + ky) * kw + kx;
                const double wv = W[widx];
                double wacc = 0.0;
                int ox0 = 0;
                while (ox0 < ow && ox0 * stride + kx - pad < 0) ++ox0;
                int ox1 = ow;
                while (ox1 > ox0 && (ox1 - 1) * stride + kx - pad >= iw) --ox1;
                for (int oy = 0; oy < oh; ++oy) {
                  const int iy = oy * stride + ky - pad;
                  if (iy < 0 || iy >= h) continue;
                  const double* grow = gplane + static_cast<int64_t>(oy) * ow;
                  const double* xrow = xplane + static_cast<int64_t>(iy) * iw + (kx - pad);
                  if (gw) {
                    for (int ox = ox0; ox < ox1; ++ox) wacc += grow[ox] * xrow[ox * stride];
                  }
                  if (gxplane) {
                    double* gxrow = gxplane + static_cast<int64_t>(iy) * iw + (kx - pad);
                    for (int ox = ox0; ox < ox1; ++ox) gxrow[ox * stride] += wv * grow[ox];
                  }
                }
                if (gw) (*gw)[widx] += wacc;
              }
          }
        }
        break;
      }
      case Op::Relu: {
        const Tensor& X = val(n.in[0]);
        Tensor& gx = grad_buf(n.in[0]);
        for (int64_t i = 0; i < X.size(); ++i)
          if (X[i] > 0) gx[i] += g[i];
        break;
      }
      case Op::Add: {
        for (int j = 0; j < 2; ++j)
          if (at(n.in[j]).needs_grad) {
            Tensor& gi = grad_buf(n.in[j]);
            for (int64_t i = 0; i < g.size(); ++i) gi[i] += g[i];
          }
        break;
      }
      case Op::Sub: {
        if (at(n.in[0]).needs_grad) {
          Tensor& ga = grad_buf(n.in[0]);
          for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (at(n.in[1]).needs_grad) {
          Tensor& gb = grad_buf(n.in[1]);
          for (int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
        break;
      }
      case Op::Mul: {
        const Tensor& A = val(n.in[0]);
        const Tensor& B = val(n.in[1]);
        if (at(n.in[0]).needs_grad) {
          Tensor& ga = grad_buf(n.in[0]);
          for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
        }
        if (at(n.in[1]).needs_grad) {
          Tensor& gb = grad_buf(n.in[1]);
          for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
        }
        break;
      }
      case Op::Scale: {
        Tensor& gx = grad_buf(n.in[0]);
        for (int64_t i = 0; i < g.size(); ++i) gx[i] += n.c0 * g[i];
        break;
      }
      case Op::AddN: {
        for (NodeId in : n.in)
          if (at(in).needs_grad) {
            Tensor& gi = grad_buf(in);
            for (int64_t i = 0; i < g.size(); ++i) gi[i] += g[i];
          }
        break;
      }
      case Op::SoftmaxRows: {
        const Tensor& P = n.val;
        const int N = P.dim(0), K = P.dim(1);
        Tensor& gz = grad_buf(n.in[0]);
        for (int i = 0; i < N; ++i) {
          const double* p = P.v.data() + static_cast<int64_t>(i) * K;
          const double* gr = g.v.data() + static_cast<int64_t>(i) * K;
          double dot = 0.0;
          for (int k = 0; k < K; ++k) dot += gr[k] * p[k];
          double* gzr = gz.v.data() + static_cast<int64_t>(i) * K;
          for (int k = 0; k < K; ++k) gzr[k] += p[k] * (gr[k] - dot);
        }
        break;
      }
      case Op::LogClamped: {
        const Tensor& X = val(n.in[0]);
        Tensor& gx = grad_buf(n.in[0]);
        for (int64_t i = 0; i < X.size(); ++i)
          if (X[i] > n.c0) gx[i] += g[i] / X[i];
        break;
      }
      case Op::Square: {
        const Tensor& X = val(n.in[0]);
        Tensor& gx = grad_buf(n.in[0]);
        for (int64_t i = 0; i < X.size(); ++i) gx[i] += 2.0 * X[i] * g[i];
        break;
      }
      case Op::SumAll: {
        Tensor& gx = grad_buf(n.in[0]);
        const double gs = g[0];
        for (int64_t i = 0; i < gx.size(); ++i) gx[i] += gs;
        break;
      }
      case Op::WeightedSumAll: {
        Tensor& gx = grad_buf(n.in[0]);
        const double gs = g[0];
        for (int64_t i = 0; i < gx.size(); ++i) gx[i] += gs * (*n.wrow)[static_cast<size_t>(i)];
        break;
      }
      case Op::KlRows: {
        const Tensor& P = val(n.in[0]);
        const int N = P.dim(0), K = P.dim(1);
        Tensor& gp = grad_buf(n.in[0]);
        const double gs = g[0];
        for (int i = 0; i < N; ++i) {
          const double w = (*n.wrow)[static_cast<size_t>(i)];
          if (w == 0.0) continue;
          for (int k = 0; k < K; ++k) {
            const int64_t idx = static_cast<int64_t>(i) * K + k;
            const double t = (*n.target)[idx];
            if (t <= 0.0) continue;
            if (P[idx] > n.c0) gp[idx] -= gs * w * t / P[idx];
          }
        }
        break;
      }
      case Op::CeRows: {
        const Tensor& P = val(n.in[0]);
        const int K = P.dim(1);
        Tensor& gp = grad_buf(n.in[0]);
        const double gs = g[0];
        for (size_t i = 0; i < n.cls->size(); ++i) {
          const int c = (*n.cls)[i];
          if (c < 0) continue;
          const double w = (*n.wrow)[i];
          if (w == 0.0) continue;
          const int64_t idx = static_cast<int64_t>(i) * K + c;
          if (P[idx] > n.c0) gp[idx] -= gs * w / P[idx];
        }
        break;
      }
      case Op::L2Rows: {
        const Tensor& X = val(n.in[0]);
        const int N = X.dim(0), K = X.dim(1);
        Tensor& gx = grad_buf(n.in[0]);
        const double gs = g[0];
        for (int i = 0; i < N; ++i) {
          const double w = (*n.wrow)[static_cast<size_t>(i)];
          if (w == 0.0) continue;
          for (int k = 0; k < K; ++k) {
            const int64_t idx = static_cast<int64_t>(i) * K + k;
            gx[idx] += gs * 2.0 * w * (X[idx] - (*n.target)[idx]);
          }
        }
        break;
      }
      case Op::ChwToRows: {
        const Tensor& X = val(n.in[0]);
        const int H = X.dim(1), W = X.dim(2);
        const int A = n.i0, K = n.i1, off = n.i2;
        Tensor& gx = grad_buf(n.in[0]);
        for (int a = 0; a < A; ++a)
          for (int k = 0; k < K; ++k) {
            double* dst = gx.v.data() + static_cast<int64_t>(off + a * K + k) * H * W;
            for (int yx = 0; yx < H * W; ++yx)
              dst[yx] += g[(static_cast<int64_t>(yx) * A + a) * K + k];
          }
        break;
      }
    }
  }

  ParamVector grads;
  for (const auto& [name, id] : param_nodes_) {
    Node& n = at(id);
    grads[name] = n.grad_live ? n.grad : Tensor(n.val.shape);
  }
  return grads;
}

double finite_diff_max_rel_err(const ParamVector& p,
                               const std::function<double(const ParamVector&)>& f,
                               const ParamVector& analytic, double h, double denom_floor) {
  ParamVector work = p;
  double worst = 0.0;
  for (auto& [name, t] : work) {
    const Tensor& ga = analytic.at(name);
    for (int64_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + h;
      const double fp = f(work);
      t[i] = orig - h;
      const double fm = f(work);
      t[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double denom = std::max({denom_floor, std::abs(fd), std::abs(ga[i])});
      worst = std::max(worst, std::abs(fd - ga[i]) / denom);
    }
  }
  return worst;
}

}  // namespace sed::ad
