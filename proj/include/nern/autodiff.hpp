#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nern/error.hpp"
#include "nern/tensor.hpp"

namespace nern {

// Reverse-mode tape over dense tensors. Nodes are created eagerly (values are
// computed at op-construction time); creation order is therefore a topological
// order and backward() walks it once in reverse.
template <typename T>
class Graph {
 public:
  using Id = int32_t;
  static constexpr Id kNone = -1;

  enum class Op : uint8_t {
    Leaf,
    Detach,
    Conv2d,
    Dense,
    Relu,
    Add,
    Sub,
    Mul,
    Scale,
    Reshape,
    Sum,
    Mean,
    Gap2d,
    L2Norm,
    RowL2Norm,
    RowNormalize,
    Softmax,
    Log,
    KlDiv,
    GatherScalars,
    GatherKernels,
    CosineSmooth,
  };

  struct Node {
    Op op;
    std::array<Id, 3> in{kNone, kNone, kNone};
    Tensor<T> value;
    Tensor<T> grad;  // allocated during backward for nodes that need it
    bool requires_grad = false;
    int i0 = 0, i1 = 0;  // stride/pad or other small attrs
    T s0 = T(0);         // scale factor
    std::vector<uint32_t> index;  // gather tables
    std::array<uint32_t, 4> dims{0, 0, 0, 0};
  };

  Id param(Tensor<T> v) { return push(Op::Leaf, {kNone, kNone, kNone}, std::move(v), true); }
  Id constant(Tensor<T> v) { return push(Op::Leaf, {kNone, kNone, kNone}, std::move(v), false); }

  Id detach(Id x) {
    Tensor<T> v = nodes_[size_t(x)].value;
    return push(Op::Detach, {x, kNone, kNone}, std::move(v), false);
  }

  Id conv2d(Id x, Id w, Id b, int stride, int pad) {
    const Tensor<T>& X = val(x);
    const Tensor<T>& W = val(w);
    if (X.rank() != 4 || W.rank() != 4) fail(ErrorCode::ShapeMismatch, "conv2d wants 4d tensors");
    const size_t B = X.shape[0], Cin = X.shape[1], H = X.shape[2], Wd = X.shape[3];
    const size_t Cout = W.shape[0], k = W.shape[2];
    if (W.shape[1] != Cin)
      fail(ErrorCode::ShapeMismatch,
           "conv2d channel mismatch: input " + X.shape_str() + " weight " + W.shape_str());
    if (W.shape[3] != k) fail(ErrorCode::ShapeMismatch, "conv2d kernel must be square");
    if (stride < 1 || pad < 0 || k < 1) fail(ErrorCode::InvalidArgument, "conv2d bad stride/pad/k");
    const long Ho = (long(H) + 2 * pad - long(k)) / stride + 1;
    const long Wo = (long(Wd) + 2 * pad - long(k)) / stride + 1;
    if (Ho < 1 || Wo < 1) fail(ErrorCode::ShapeMismatch, "conv2d non-positive output extent");
    if (b != kNone) {
      const Tensor<T>& Bv = val(b);
      if (Bv.numel() != Cout) fail(ErrorCode::ShapeMismatch, "conv2d bias size mismatch");
    }
    Tensor<T> out({B, Cout, size_t(Ho), size_t(Wo)});
    conv2d_forward(X, W, b == kNone ? nullptr : &val(b), out, stride, pad);
    Id id = push(Op::Conv2d, {x, w, b}, std::move(out),
                 needs_grad(x) || needs_grad(w) || (b != kNone && needs_grad(b)));
    nodes_[size_t(id)].i0 = stride;
    nodes_[size_t(id)].i1 = pad;
    return id;
  }

  Id dense(Id x, Id w, Id b) {
    const Tensor<T>& X = val(x);
    const Tensor<T>& W = val(w);
    const Tensor<T>& Bv = val(b);
    if (X.rank() != 2 || W.rank() != 2) fail(ErrorCode::ShapeMismatch, "dense wants 2d tensors");
    const size_t Bn = X.shape[0], Din = X.shape[1], Dout = W.shape[0];
    if (W.shape[1] != Din)
      fail(ErrorCode::ShapeMismatch,
           "dense dim mismatch: input " + X.shape_str() + " weight " + W.shape_str());
    if (Bv.numel() != Dout) fail(ErrorCode::ShapeMismatch, "dense bias size mismatch");
    Tensor<T> out({Bn, Dout});
    for (size_t i = 0; i < Bn; ++i) {
      const T* xi = X.ptr() + i * Din;
      T* oi = out.ptr() + i * Dout;
      for (size_t o = 0; o < Dout; ++o) {
        const T* wo = W.ptr() + o * Din;
        T acc = Bv[o];
        for (size_t j = 0; j < Din; ++j) acc += xi[j] * wo[j];
        oi[o] = acc;
      }
    }
    return push(Op::Dense, {x, w, b}, std::move(out), needs_grad(x) || needs_grad(w) || needs_grad(b));
  }

  Id relu(Id x) {
    Tensor<T> out = val(x);
    for (T& v : out.data) v = v > T(0) ? v : T(0);
    return push(Op::Relu, {x, kNone, kNone}, std::move(out), needs_grad(x));
  }

  Id add(Id a, Id b) { return binary(Op::Add, a, b); }
  Id sub(Id a, Id b) { return binary(Op::Sub, a, b); }
  Id mul(Id a, Id b) { return binary(Op::Mul, a, b); }

  Id scale(Id x, T c) {
    Tensor<T> out = val(x);
    for (T& v : out.data) v *= c;
    Id id = push(Op::Scale, {x, kNone, kNone}, std::move(out), needs_grad(x));
    nodes_[size_t(id)].s0 = c;
    return id;
  }

  Id reshape(Id x, std::vector<size_t> shape) {
    const Tensor<T>& X = val(x);
    Tensor<T> out(std::move(shape), X.data);
    return push(Op::Reshape, {x, kNone, kNone}, std::move(out), needs_grad(x));
  }

  Id sum(Id x) {
    T acc = T(0);
    for (T v : val(x).data) acc += v;
    return push(Op::Sum, {x, kNone, kNone}, Tensor<T>::scalar(acc), needs_grad(x));
  }

  Id mean(Id x) {
    T acc = T(0);
    for (T v : val(x).data) acc += v;
    return push(Op::Mean, {x, kNone, kNone}, Tensor<T>::scalar(acc / T(val(x).numel())),
                needs_grad(x));
  }

  Id gap2d(Id x) {
    const Tensor<T>& X = val(x);
    if (X.rank() != 4) fail(ErrorCode::ShapeMismatch, "gap2d wants 4d input");
    const size_t B = X.shape[0], C = X.shape[1], HW = X.shape[2] * X.shape[3];
    Tensor<T> out({B, C});
    for (size_t b = 0; b < B; ++b)
      for (size_t c = 0; c < C; ++c) {
        const T* p = X.ptr() + (b * C + c) * HW;
        T acc = T(0);
        for (size_t i = 0; i < HW; ++i) acc += p[i];
        out.at2(b, c) = acc / T(HW);
      }
    return push(Op::Gap2d, {x, kNone, kNone}, std::move(out), needs_grad(x));
  }

  Id l2norm(Id x) {
    T acc = T(0);
    for (T v : val(x).data) acc += v * v;
    return push(Op::L2Norm, {x, kNone, kNone}, Tensor<T>::scalar(std::sqrt(acc)), needs_grad(x));
  }

  Id row_l2norm(Id x) {
    const Tensor<T>& X = val(x);
    if (X.rank() != 2) fail(ErrorCode::ShapeMismatch, "row_l2norm wants 2d input");
    const size_t B = X.shape[0], D = X.shape[1];
    Tensor<T> out({B});
    for (size_t b = 0; b < B; ++b) {
      const T* p = X.ptr() + b * D;
      T acc = T(0);
      for (size_t j = 0; j < D; ++j) acc += p[j] * p[j];
      out[b] = std::sqrt(acc);
    }
    return push(Op::RowL2Norm, {x, kNone, kNone}, std::move(out), needs_grad(x));
  }

  // rows scaled to unit l2 norm; zero rows stay zero
  Id row_normalize(Id x) {
    const Tensor<T>& X = val(x);
    if (X.rank() != 2) fail(ErrorCode::ShapeMismatch, "row_normalize wants 2d input");
    const size_t B = X.shape[0], D = X.shape[1];
    Tensor<T> out({B, D});
    for (size_t b = 0; b < B; ++b) {
      const T* p = X.ptr() + b * D;
      T* q = out.ptr() + b * D;
      T acc = T(0);
      for (size_t j = 0; j < D; ++j) acc += p[j] * p[j];
      const T n = std::sqrt(acc);
      if (n > T(0))
        for (size_t j = 0; j < D; ++j) q[j] = p[j] / n;
      else
        for (size_t j = 0; j < D; ++j) q[j] = T(0);
    }
    return push(Op::RowNormalize, {x, kNone, kNone}, std::move(out), needs_grad(x));
  }

  Id softmax(Id x) {
    const Tensor<T>& X = val(x);
    if (X.rank() != 2) fail(ErrorCode::ShapeMismatch, "softmax wants 2d logits");
    const size_t B = X.shape[0], K = X.shape[1];
    Tensor<T> out({B, K});
    for (size_t b = 0; b < B; ++b) {
      const T* p = X.ptr() + b * K;
      T* q = out.ptr() + b * K;
      T mx = p[0];
      for (size_t k = 1; k < K; ++k) mx = p[k] > mx ? p[k] : mx;
      T z = T(0);
      for (size_t k = 0; k < K; ++k) {
        q[k] = std::exp(p[k] - mx);
        z += q[k];
      }
      for (size_t k = 0; k < K; ++k) q[k] /= z;
    }
    return push(Op::Softmax, {x, kNone, kNone}, std::move(out), needs_grad(x));
  }

  Id log(Id x) {
    Tensor<T> out = val(x);
    for (T& v : out.data) {
      if (v <= T(0)) fail(ErrorCode::InvalidArgument, "log of non-positive value");
      v = std::log(v);
    }
    return push(Op::Log, {x, kNone, kNone}, std::move(out), needs_grad(x));
  }

  // mean over batch rows of KL(p || q); rows must be distributions.
  Id kl_div(Id p, Id q) {
    const Tensor<T>& P = val(p);
    const Tensor<T>& Q = val(q);
    if (!P.same_shape(Q) || P.rank() != 2)
      fail(ErrorCode::ShapeMismatch, "kl_div wants matching 2d distributions");
    const size_t B = P.shape[0], K = P.shape[1];
    for (size_t b = 0; b < B; ++b) {
      T sp = T(0), sq = T(0);
      for (size_t k = 0; k < K; ++k) {
        const T pv = P.at2(b, k), qv = Q.at2(b, k);
        if (pv < T(0) || qv < T(0)) fail(ErrorCode::InvalidDistribution, "kl_div negative entry");
        if (qv == T(0) && pv > T(0))
          fail(ErrorCode::InvalidDistribution, "kl_div: q is zero where p > 0");
        sp += pv;
        sq += qv;
      }
      if (std::abs(double(sp) - 1.0) > 1e-6 || std::abs(double(sq) - 1.0) > 1e-6)
        fail(ErrorCode::InvalidDistribution, "kl_div rows must sum to 1");
    }
    T acc = T(0);
    for (size_t b = 0; b < B; ++b)
      for (size_t k = 0; k < K; ++k) {
        const T pv = P.at2(b, k);
        if (pv > T(0)) {
          const T pf = pv < kEps ? kEps : pv;
          const T qf = Q.at2(b, k) < kEps ? kEps : Q.at2(b, k);
          acc += pv * (std::log(pf) - std::log(qf));
        }
      }
    return push(Op::KlDiv, {p, q, kNone}, Tensor<T>::scalar(acc / T(B)),
                needs_grad(p) || needs_grad(q));
  }

  // 1d gather by flat indices into the input's buffer
  Id gather_scalars(Id x, std::vector<uint32_t> flat) {
    const Tensor<T>& X = val(x);
    if (flat.empty()) fail(ErrorCode::InvalidArgument, "gather_scalars: empty index set");
    Tensor<T> out({flat.size()});
    for (size_t i = 0; i < flat.size(); ++i) {
      if (flat[i] >= X.numel()) fail(ErrorCode::InvalidArgument, "gather_scalars: index overflow");
      out[i] = X.data[flat[i]];
    }
    Id id = push(Op::GatherScalars, {x, kNone, kNone}, std::move(out), needs_grad(x));
    nodes_[size_t(id)].index = std::move(flat);
    return id;
  }

  // Assemble a [F,C,k,k] weight tensor from predictor rows [n, kmax*kmax]:
  // slot (f,c) takes the centered k x k crop of row row_ids[f*C + c].
  Id gather_kernels(Id rows, std::vector<uint32_t> row_ids, size_t F, size_t C, size_t k,
                    size_t kmax) {
    const Tensor<T>& R = val(rows);
    if (R.rank() != 2 || R.shape[1] != kmax * kmax)
      fail(ErrorCode::ShapeMismatch, "gather_kernels: rows must be [n, kmax^2]");
    if (k > kmax) fail(ErrorCode::InvalidArgument, "gather_kernels: k > kmax");
    if (row_ids.size() != F * C) fail(ErrorCode::ShapeMismatch, "gather_kernels: row id count");
    const size_t off = (kmax - k) / 2;
    Tensor<T> out({F, C, k, k});
    for (size_t s = 0; s < F * C; ++s) {
      if (row_ids[s] >= R.shape[0]) fail(ErrorCode::InvalidArgument, "gather_kernels: row overflow");
      const T* src = R.ptr() + size_t(row_ids[s]) * kmax * kmax;
      T* dst = out.ptr() + s * k * k;
      for (size_t ky = 0; ky < k; ++ky)
        for (size_t kx = 0; kx < k; ++kx) dst[ky * k + kx] = src[(ky + off) * kmax + (kx + off)];
    }
    Id id = push(Op::GatherKernels, {rows, kNone, kNone}, std::move(out), needs_grad(rows));
    auto& nd = nodes_[size_t(id)];
    nd.index = std::move(row_ids);
    nd.dims = {uint32_t(F), uint32_t(C), uint32_t(k), uint32_t(kmax)};
    return id;
  }

  // Adjacent-kernel smoothness of one conv weight tensor [F,C,k,k]:
  // sum of Delta(w[f,c], w[f+1,c]) over f<F-1 plus Delta(w[f,c], w[f,c+1]) over
  // c<C-1, where Delta is cosine distance for k>=2 and squared difference for
  // 1x1 kernels. Zero-norm kernels are treated as maximally distant (1.0)
  // unless both are zero.
  Id cosine_smoothness(Id w) {
    const Tensor<T>& W = val(w);
    if (W.rank() != 4) fail(ErrorCode::ShapeMismatch, "cosine_smoothness wants [F,C,k,k]");
    const size_t F = W.shape[0], C = W.shape[1], k = W.shape[2], kk = k * W.shape[3];
    T acc = T(0);
    for (size_t f = 0; f < F; ++f)
      for (size_t c = 0; c < C; ++c) {
        const T* u = W.ptr() + (f * C + c) * kk;
        if (f + 1 < F) acc += kernel_delta(u, W.ptr() + ((f + 1) * C + c) * kk, kk);
        if (c + 1 < C) acc += kernel_delta(u, W.ptr() + (f * C + c + 1) * kk, kk);
      }
    return push(Op::CosineSmooth, {w, kNone, kNone}, Tensor<T>::scalar(acc), needs_grad(w));
  }

  void backward(Id loss) {
    if (backward_done_)
      fail(ErrorCode::InvalidArgument, "backward called twice on the same tape");
    backward_done_ = true;
    Node& L = nodes_[size_t(loss)];
    if (L.value.numel() != 1) fail(ErrorCode::InvalidArgument, "loss must be scalar");
    for (Node& n : nodes_)
      if (n.requires_grad) n.grad = Tensor<T>(n.value.shape);
    if (!L.requires_grad) return;  // loss detached from every parameter
    L.grad[0] = T(1);
    for (Id id = loss; id >= 0; --id) {
      Node& n = nodes_[size_t(id)];
      if (!n.requires_grad) continue;
      backward_node(n);
    }
  }

  const Tensor<T>& value(Id id) const { return nodes_[size_t(id)].value; }
  const Tensor<T>& grad(Id id) const {
    const Node& n = nodes_[size_t(id)];
    if (n.grad.data.empty()) fail(ErrorCode::InvalidArgument, "no gradient on this node");
    return n.grad;
  }
  bool needs_grad(Id id) const { return id != kNone && nodes_[size_t(id)].requires_grad; }
  size_t size() const { return nodes_.size(); }

  static constexpr T kEps = T(1e-12);

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;

  const Tensor<T>& val(Id id) const { return nodes_[size_t(id)].value; }

  Id push(Op op, std::array<Id, 3> in, Tensor<T> v, bool req) {
    Node n;
    n.op = op;
    n.in = in;
    n.value = std::move(v);
    n.requires_grad = req;
    nodes_.push_back(std::move(n));
    return Id(nodes_.size() - 1);
  }

  Id binary(Op op, Id a, Id b) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    if (!A.same_shape(B))
      fail(ErrorCode::ShapeMismatch,
           "elementwise shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
    Tensor<T> out(A.shape);
    const size_t n = A.numel();
    switch (op) {
      case Op::Add:
        for (size_t i = 0; i < n; ++i) out[i] = A[i] + B[i];
        break;
      case Op::Sub:
        for (size_t i = 0; i < n; ++i) out[i] = A[i] - B[i];
        break;
      case Op::Mul:
        for (size_t i = 0; i < n; ++i) out[i] = A[i] * B[i];
        break;
      default:
        fail(ErrorCode::InvalidArgument, "bad binary op");
    }
    return push(op, {a, b, kNone}, std::move(out), needs_grad(a) || needs_grad(b));
  }

  static T kernel_delta(const T* u, const T* v, size_t n) {
    if (n == 1) {
      const T d = u[0] - v[0];
      return d * d;
    }
    T uu = T(0), vv = T(0), uv = T(0);
    for (size_t i = 0; i < n; ++i) {
      uu += u[i] * u[i];
      vv += v[i] * v[i];
      uv += u[i] * v[i];
    }
    const T nu = std::sqrt(uu), nv = std::sqrt(vv);
    if (nu == T(0) || nv == T(0)) return (nu == T(0) && nv == T(0)) ? T(0) : T(1);
    if (uu == vv && uu == uv) return T(0);  // elementwise-identical kernels, exactly
    return T(1) - uv / (nu * nv);
  }

  // d Delta(u,v) accumulated into gu, gv with upstream scalar g
  static void kernel_delta_grad(const T* u, const T* v, size_t n, T g, T* gu, T* gv) {
    if (n == 1) {
      const T d = u[0] - v[0];
      if (gu) gu[0] += g * T(2) * d;
      if (gv) gv[0] -= g * T(2) * d;
      return;
    }
    T uu = T(0), vv = T(0), uv = T(0);
    for (size_t i = 0; i < n; ++i) {
      uu += u[i] * u[i];
      vv += v[i] * v[i];
      uv += u[i] * v[i];
    }
    const T nu = std::sqrt(uu), nv = std::sqrt(vv);
    if (nu == T(0) || nv == T(0)) return;  // flat region of the 0/1 plateau
    const T inv = T(1) / (nu * nv);
    const T cu = uv / (uu * nu * nv);  // cos/|u|^2 term
    const T cv = uv / (vv * nu * nv);
    for (size_t i = 0; i < n; ++i) {
      if (gu) gu[i] += g * (cu * u[i] - v[i] * inv);
      if (gv) gv[i] += g * (cv * v[i] - u[i] * inv);
    }
  }

  static void conv2d_forward(const Tensor<T>& X, const Tensor<T>& W, const Tensor<T>* bias,
                             Tensor<T>& out, int stride, int pad) {
    const size_t B = X.shape[0], Cin = X.shape[1], H = X.shape[2], Wd = X.shape[3];
    const size_t Cout = W.shape[0], k = W.shape[2];
    const size_t Ho = out.shape[2], Wo = out.shape[3];
    for (size_t b = 0; b < B; ++b)
      for (size_t co = 0; co < Cout; ++co) {
        T* o = out.ptr() + (b * Cout + co) * Ho * Wo;
        const T bv = bias ? (*bias)[co] : T(0);
        for (size_t i = 0; i < Ho * Wo; ++i) o[i] = bv;
        for (size_t ci = 0; ci < Cin; ++ci) {
          const T* xp = X.ptr() + (b * Cin + ci) * H * Wd;
          const T* wp = W.ptr() + (co * Cin + ci) * k * k;
          for (size_t ky = 0; ky < k; ++ky)
            for (size_t kx = 0; kx < k; ++kx) {
              const T wv = wp[ky * k + kx];
              if (wv == T(0)) continue;
              for (size_t y = 0; y < Ho; ++y) {
                const long iy = long(y) * stride - pad + long(ky);
                if (iy < 0 || iy >= long(H)) continue;
                const T* xrow = xp + size_t(iy) * Wd;
                T* orow = o + y * Wo;
                for (size_t x = 0; x < Wo; ++x) {
                  const long ix = long(x) * stride - pad + long(kx);
                  if (ix < 0 || ix >= long(Wd)) continue;
                  orow[x] += wv * xrow[size_t(ix)];
                }
              }
            }
        }
      }
  }

  void backward_node(Node& n) {
    const Tensor<T>& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Detach:
        break;
      case Op::Conv2d: {
        Node& xn = nodes_[size_t(n.in[0])];
        Node& wn = nodes_[size_t(n.in[1])];
        Node* bn = n.in[2] == kNone ? nullptr : &nodes_[size_t(n.in[2])];
        conv2d_backward(xn, wn, bn, n);
        break;
      }
      case Op::Dense: {
        Node& xn = nodes_[size_t(n.in[0])];
        Node& wn = nodes_[size_t(n.in[1])];
        Node& bn = nodes_[size_t(n.in[2])];
        const Tensor<T>& X = xn.value;
        const Tensor<T>& W = wn.value;
        const size_t Bn = X.shape[0], Din = X.shape[1], Dout = W.shape[0];
        for (size_t i = 0; i < Bn; ++i) {
          const T* gi = g.ptr() + i * Dout;
          if (xn.requires_grad) {
            T* gx = xn.grad.ptr() + i * Din;
            for (size_t o = 0; o < Dout; ++o) {
              const T gv = gi[o];
              if (gv == T(0)) continue;
              const T* wo = W.ptr() + o * Din;
              for (size_t j = 0; j < Din; ++j) gx[j] += gv * wo[j];
            }
          }
          if (wn.requires_grad) {
            const T* xi = X.ptr() + i * Din;
            for (size_t o = 0; o < Dout; ++o) {
              const T gv = gi[o];
              if (gv == T(0)) continue;
              T* gw = wn.grad.ptr() + o * Din;
              for (size_t j = 0; j < Din; ++j) gw[j] += gv * xi[j];
            }
          }
          if (bn.requires_grad)
            for (size_t o = 0; o < Dout; ++o) bn.grad[o] += gi[o];
        }
        break;
      }
      case Op::Relu: {
        Node& xn = nodes_[size_t(n.in[0])];
        if (!xn.requires_grad) break;
        for (size_t i = 0; i < g.numel(); ++i)
          if (xn.value[i] > T(0)) xn.grad[i] += g[i];
        break;
      }
      case Op::Add: {
        accumulate(n.in[0], g, T(1));
        accumulate(n.in[1], g, T(1));
        break;
      }
      case Op::Sub: {
        accumulate(n.in[0], g, T(1));
        accumulate(n.in[1], g, T(-1));
        break;
      }
      case Op::Mul: {
        Node& an = nodes_[size_t(n.in[0])];
        Node& bn = nodes_[size_t(n.in[1])];
        if (an.requires_grad)
          for (size_t i = 0; i < g.numel(); ++i) an.grad[i] += g[i] * bn.value[i];
        if (bn.requires_grad)
          for (size_t i = 0; i < g.numel(); ++i) bn.grad[i] += g[i] * an.value[i];
        break;
      }
      case Op::Scale:
        accumulate(n.in[0], g, n.s0);
        break;
      case Op::Reshape: {
        Node& xn = nodes_[size_t(n.in[0])];
        if (!xn.requires_grad) break;
        for (size_t i = 0; i < g.numel(); ++i) xn.grad[i] += g[i];
        break;
      }
      case Op::Sum: {
        Node& xn = nodes_[size_t(n.in[0])];
        if (!xn.requires_grad) break;
        const T gv = g[0];
        for (T& v : xn.grad.data) v += gv;
        break;
      }
      case Op::Mean: {
        Node& xn = nodes_[size_t(n.in[0])];
        if (!xn.requires_grad) break;
        const T gv = g[0] / T(xn.value.numel());
        for (T& v : xn.grad.data) v += gv;
        break;
      }
      case Op::Gap2d: {
        Node& xn = nodes_[size_t(n.in[0])];
        if (!xn.requires_grad) break;
        const size_t B = xn.value.shape[0], C = xn.value.shape[1],
                     HW = xn.value.shape[2] * xn.value.shape[3];
        for (size_t b = 0; b < B; ++b)
          for (size_t c = 0; c < C; ++c) {
            const T gv = g.at2(b, c) / T(HW);
            T* p = xn.grad.ptr() + (b * C + c) * HW;
            for (size_t i = 0; i < HW; ++i) p[i] += gv;
          }
        break;
      }
      case Op::L2Norm: {
        Node& xn = nodes_[size_t(n.in[0])];
        if (!xn.requires_grad) break;
        const T nv = n.value[0];
        if (nv == T(0)) break;
        const T gv = g[0] / nv;
        for (size_t i = 0; i < xn.value.numel(); ++i) xn.grad[i] += gv * xn.value[i];
        break;
      }
      case Op::RowL2Norm: {
        Node& xn = nodes_[size_t(n.in[0])];
        if (!xn.requires_grad) break;
        const size_t B = xn.value.shape[0], D = xn.value.shape[1];
        for (size_t b = 0; b < B; ++b) {
          const T nv = n.value[b];
          if (nv == T(0)) continue;
          const T gv = g[b] / nv;
          const T* p = xn.value.ptr() + b * D;
          T* q = xn.grad.ptr() + b * D;
          for (size_t j = 0; j < D; ++j) q[j] += gv * p[j];
        }
        break;
      }
      case Op::RowNormalize: {
        Node& xn = nodes_[size_t(n.in[0])];
        if (!xn.requires_grad) break;
        const size_t B = xn.value.shape[0], D = xn.value.shape[1];
        for (size_t b = 0; b < B; ++b) {
          const T* x = xn.value.ptr() + b * D;
          const T* y = n.value.ptr() + b * D;  // normalized row
          const T* gr = g.ptr() + b * D;
          T nn = T(0);
          for (size_t j = 0; j < D; ++j) nn += x[j] * x[j];
          const T nv = std::sqrt(nn);
          if (nv == T(0)) continue;
          T dot = T(0);
          for (size_t j = 0; j < D; ++j) dot += gr[j] * y[j];
          T* q = xn.grad.ptr() + b * D;
          for (size_t j = 0; j < D; ++j) q[j] += (gr[j] - dot * y[j]) / nv;
        }
        break;
      }
      case Op::Softmax: {
        Node& xn = nodes_[size_t(n.in[0])];
        if (!xn.requires_grad) break;
        const size_t B = n.value.shape[0], K = n.value.shape[1];
        for (size_t b = 0; b < B; ++b) {
          const T* y = n.value.ptr() + b * K;
          const T* gr = g.ptr() + b * K;
          T dot = T(0);
          for (size_t k = 0; k < K; ++k) dot += gr[k] * y[k];
          T* q = xn.grad.ptr() + b * K;
          for (size_t k = 0; k < K; ++k) q[k] += y[k] * (gr[k] - dot);
        }
        break;
      }
      case Op::Log: {
        Node& xn = nodes_[size_t(n.in[0])];
        if (!xn.requires_grad) break;
        for (size_t i = 0; i < g.numel(); ++i) xn.grad[i] += g[i] / xn.value[i];
        break;
      }
      case Op::KlDiv: {
        Node& pn = nodes_[size_t(n.in[0])];
        Node& qn = nodes_[size_t(n.in[1])];
        const size_t B = pn.value.shape[0], K = pn.value.shape[1];
        const T gv = g[0] / T(B);
        for (size_t b = 0; b < B; ++b)
          for (size_t k = 0; k < K; ++k) {
            const T pv = pn.value.at2(b, k);
            if (pv <= T(0)) continue;
            const T qf = qn.value.at2(b, k) < kEps ? kEps : qn.value.at2(b, k);
            if (qn.requires_grad) qn.grad.at2(b, k) -= gv * pv / qf;
            if (pn.requires_grad) {
              const T pf = pv < kEps ? kEps : pv;
              pn.grad.at2(b, k) += gv * (std::log(pf) - std::log(qf) + T(1));
            }
          }
        break;
      }
      case Op::GatherScalars: {
        Node& xn = nodes_[size_t(n.in[0])];
        if (!xn.requires_grad) break;
        for (size_t i = 0; i < n.index.size(); ++i) xn.grad.data[n.index[i]] += g[i];
        break;
      }
      case Op::GatherKernels: {
        Node& xn = nodes_[size_t(n.in[0])];
        if (!xn.requires_grad) break;
        const size_t C = n.dims[1], k = n.dims[2], kmax = n.dims[3];
        const size_t off = (kmax - k) / 2;
        const size_t FC = n.index.size();
        (void)C;
        for (size_t s = 0; s < FC; ++s) {
          T* dst = xn.grad.ptr() + size_t(n.index[s]) * kmax * kmax;
          const T* src = g.ptr() + s * k * k;
          for (size_t ky = 0; ky < k; ++ky)
            for (size_t kx = 0; kx < k; ++kx) dst[(ky + off) * kmax + (kx + off)] += src[ky * k + kx];
        }
        break;
      }
      case Op::CosineSmooth: {
        Node& wn = nodes_[size_t(n.in[0])];
        if (!wn.requires_grad) break;
        const Tensor<T>& W = wn.value;
        const size_t F = W.shape[0], C = W.shape[1], kk = W.shape[2] * W.shape[3];
        const T gv = g[0];
        for (size_t f = 0; f < F; ++f)
          for (size_t c = 0; c < C; ++c) {
            const T* u = W.ptr() + (f * C + c) * kk;
            T* gu = wn.grad.ptr() + (f * C + c) * kk;
            if (f + 1 < F)
              kernel_delta_grad(u, W.ptr() + ((f + 1) * C + c) * kk, kk, gv, gu,
                                wn.grad.ptr() + ((f + 1) * C + c) * kk);
            if (c + 1 < C)
              kernel_delta_grad(u, W.ptr() + (f * C + c + 1) * kk, kk, gv, gu,
                                wn.grad.ptr() + (f * C + c + 1) * kk);
          }
        break;
      }
    }
  }

  void accumulate(Id target, const Tensor<T>& g, T factor) {
    if (target == kNone) return;
    Node& t = nodes_[size_t(target)];
    if (!t.requires_grad) return;
    for (size_t i = 0; i < g.numel(); ++i) t.grad[i] += factor * g[i];
  }

  void conv2d_backward(Node& xn, Node& wn, Node* bn, Node& n) {
    const Tensor<T>& X = xn.value;
    const Tensor<T>& W = wn.value;
    const Tensor<T>& g = n.grad;
    const int stride = n.i0, pad = n.i1;
    const size_t B = X.shape[0], Cin = X.shape[1], H = X.shape[2], Wd = X.shape[3];
    const size_t Cout = W.shape[0], k = W.shape[2];
    const size_t Ho = g.shape[2], Wo = g.shape[3];
    if (bn && bn->requires_grad) {
      for (size_t b = 0; b < B; ++b)
        for (size_t co = 0; co < Cout; ++co) {
          const T* gp = g.ptr() + (b * Cout + co) * Ho * Wo;
          T acc = T(0);
          for (size_t i = 0; i < Ho * Wo; ++i) acc += gp[i];
          bn->grad[co] += acc;
        }
    }
    const bool need_x = xn.requires_grad, need_w = wn.requires_grad;
    if (!need_x && !need_w) return;
    for (size_t b = 0; b < B; ++b)
      for (size_t co = 0; co < Cout; ++co) {
        const T* gp = g.ptr() + (b * Cout + co) * Ho * Wo;
        for (size_t ci = 0; ci < Cin; ++ci) {
          const T* xp = X.ptr() + (b * Cin + ci) * H * Wd;
          T* gxp = need_x ? xn.grad.ptr() + (b * Cin + ci) * H * Wd : nullptr;
          const T* wp = W.ptr() + (co * Cin + ci) * k * k;
          T* gwp = need_w ? wn.grad.ptr() + (co * Cin + ci) * k * k : nullptr;
          for (size_t ky = 0; ky < k; ++ky)
            for (size_t kx = 0; kx < k; ++kx) {
              const T wv = wp[ky * k + kx];
              T wacc = T(0);
              for (size_t y = 0; y < Ho; ++y) {
                const long iy = long(y) * stride - pad + long(ky);
                if (iy < 0 || iy >= long(H)) continue;
                const T* xrow = xp + size_t(iy) * Wd;
                T* gxrow = gxp ? gxp + size_t(iy) * Wd : nullptr;
                const T* grow = gp + y * Wo;
                for (size_t x = 0; x < Wo; ++x) {
                  const long ix = long(x) * stride - pad + long(kx);
                  if (ix < 0 || ix >= long(Wd)) continue;
                  const T gv = grow[x];
                  if (gxrow) gxrow[size_t(ix)] += wv * gv;
                  wacc += xrow[size_t(ix)] * gv;
                }
              }
              if (gwp) gwp[ky * k + kx] += wacc;
            }
        }
      }
  }
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace nern
