// SPDX-License-Identifier: Apache-2.0
#include "faststi/autograd.hpp"

#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>

#include "faststi/kernels.hpp"

namespace faststi {

namespace {

std::size_t last_dim(const Tensor& t) { return t.shape.back(); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

int Tape::push(Tensor val, bool needs_grad, std::function<void(Tape&)> pull) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  n.pull = std::move(pull);
  if (needs_grad) n.grad = Tensor(n.val.shape);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::constant(Tensor v) { return {push(std::move(v), false, nullptr)}; }

Var Tape::param(const double* values, std::vector<std::size_t> shape,
                double* grad_sink) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(values, values + Tensor::numel_of(t.shape));
  const int id = push(std::move(t), true, nullptr);
  nodes_[id].pull = [id, grad_sink](Tape& tp) {
    const auto& g = tp.nodes_[id].grad;
    for (std::size_t i = 0; i < g.data.size(); ++i) grad_sink[i] += g.data[i];
  };
  return {id};
}

Var Tape::add(Var a, Var b) {
  const auto& ta = nodes_[a.id].val;
  const auto& tb = nodes_[b.id].val;
  if (ta.shape != tb.shape) throw std::invalid_argument("add: shape mismatch");
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = ta.data[i] + tb.data[i];
  const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].pull = [id, a, b](Tape& tp) {
      const auto& g = tp.nodes_[id].grad.data;
      if (tp.nodes_[a.id].needs_grad) {
        auto& ga = tp.nodes_[a.id].grad.data;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (tp.nodes_[b.id].needs_grad) {
        auto& gb = tp.nodes_[b.id].grad.data;
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
  return {id};
}

Var Tape::scale(Var a, double s) {
  const auto& ta = nodes_[a.id].val;
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = s * ta.data[i];
  const bool ng = nodes_[a.id].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].pull = [id, a, s](Tape& tp) {
      const auto& g = tp.nodes_[id].grad.data;
      auto& ga = tp.nodes_[a.id].grad.data;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    };
  return {id};
}

Var Tape::linear(Var x, Var W, Var b) {
  const auto& tx = nodes_[x.id].val;
  const auto& tw = nodes_[W.id].val;
  if (tw.rank() != 2 || last_dim(tx) != tw.dim(0))
    throw std::invalid_argument("linear: shape mismatch");
  const std::size_t cin = tw.dim(0), cout = tw.dim(1);
  const std::size_t rows = tx.numel() / cin;

  auto shape = tx.shape;
  shape.back() = cout;
  Tensor out(shape);
  kern::matmul_nn(rows, cout, cin, tx.data.data(), tw.data.data(),
                  out.data.data());
  if (b.id >= 0) {
    const auto& tb = nodes_[b.id].val;
    if (tb.numel() != cout) throw std::invalid_argument("linear: bias mismatch");
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cout; ++c) out.data[r * cout + c] += tb.data[c];
  }

  const bool ng = nodes_[x.id].needs_grad || nodes_[W.id].needs_grad ||
                  (b.id >= 0 && nodes_[b.id].needs_grad);
  const int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].pull = [id, x, W, b, rows, cin, cout](Tape& tp) {
      const auto& g = tp.nodes_[id].grad.data;
      if (tp.nodes_[x.id].needs_grad)
        kern::matmul_nt(rows, cin, cout, g.data(),
                        tp.nodes_[W.id].val.data.data(),
                        tp.nodes_[x.id].grad.data.data(), true);
      if (tp.nodes_[W.id].needs_grad)
        kern::matmul_tn(cin, cout, rows, tp.nodes_[x.id].val.data.data(),
                        g.data(), tp.nodes_[W.id].grad.data.data(), true);
      if (b.id >= 0 && tp.nodes_[b.id].needs_grad) {
        auto& gb = tp.nodes_[b.id].grad.data;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cout; ++c) gb[c] += g[r * cout + c];
      }
    };
  return {id};
}

Var Tape::silu(Var x) {
  const auto& tx = nodes_[x.id].val;
  Tensor out(tx.shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = tx.data[i] * sigmoid(tx.data[i]);
  const bool ng = nodes_[x.id].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].pull = [id, x](Tape& tp) {
      const auto& g = tp.nodes_[id].grad.data;
      const auto& v = tp.nodes_[x.id].val.data;
      auto& gx = tp.nodes_[x.id].grad.data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = sigmoid(v[i]);
        gx[i] += g[i] * s * (1.0 + v[i] * (1.0 - s));
      }
    };
  return {id};
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const auto& tx = nodes_[x.id].val;
  const std::size_t c = last_dim(tx);
  const std::size_t rows = tx.numel() / c;
  const auto& tg = nodes_[gain.id].val;
  const auto& tb = nodes_[bias.id].val;
  if (tg.numel() != c || tb.numel() != c)
    throw std::invalid_argument("layer_norm: gain/bias mismatch");

  Tensor out(tx.shape);
  // saved per-row statistics for the backward pass
  auto mu = std::make_shared<std::vector<double>>(rows);
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = tx.data.data() + r * c;
    double m = 0.0;
    for (std::size_t j = 0; j < c; ++j) m += row[j];
    m /= c;
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - m) * (row[j] - m);
    var /= c;
    const double rs = 1.0 / std::sqrt(var + eps);
    (*mu)[r] = m;
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < c; ++j)
      out.data[r * c + j] = (row[j] - m) * rs * tg.data[j] + tb.data[j];
  }

  const bool ng = nodes_[x.id].needs_grad || nodes_[gain.id].needs_grad ||
                  nodes_[bias.id].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].pull = [id, x, gain, bias, rows, c, mu, rstd](Tape& tp) {
      const auto& g = tp.nodes_[id].grad.data;
      const auto& v = tp.nodes_[x.id].val.data;
      const auto& gn = tp.nodes_[gain.id].val.data;
      for (std::size_t r = 0; r < rows; ++r) {
        const double m = (*mu)[r], rs = (*rstd)[r];
        // xhat, gy in terms of saved stats
        if (tp.nodes_[gain.id].needs_grad || tp.nodes_[bias.id].needs_grad) {
          auto& gg = tp.nodes_[gain.id].grad.data;
          auto& gb = tp.nodes_[bias.id].grad.data;
          for (std::size_t j = 0; j < c; ++j) {
            const double xh = (v[r * c + j] - m) * rs;
            gg[j] += g[r * c + j] * xh;
            gb[j] += g[r * c + j];
          }
        }
        if (tp.nodes_[x.id].needs_grad) {
          double sum_gy = 0.0, sum_gyxh = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double gy = g[r * c + j] * gn[j];
            const double xh = (v[r * c + j] - m) * rs;
            sum_gy += gy;
            sum_gyxh += gy * xh;
          }
          auto& gx = tp.nodes_[x.id].grad.data;
          for (std::size_t j = 0; j < c; ++j) {
            const double gy = g[r * c + j] * gn[j];
            const double xh = (v[r * c + j] - m) * rs;
            gx[r * c + j] +=
                rs * (gy - sum_gy / c - xh * sum_gyxh / c);
          }
        }
      }
    };
  return {id};
}

Var Tape::mha(Var q, Var k, Var v, int heads) {
  const auto& tq = nodes_[q.id].val;
  const auto& tk = nodes_[k.id].val;
  const auto& tv = nodes_[v.id].val;
  if (tq.rank() != 3 || tq.shape != tk.shape || tq.shape != tv.shape)
    throw std::invalid_argument("mha: q/k/v must share [B,S,C]");
  const std::size_t B = tq.dim(0), S = tq.dim(1), C = tq.dim(2);
  if (heads < 1 || C % heads != 0)
    throw std::invalid_argument("mha: channels must divide heads");
  const std::size_t dh = C / static_cast<std::size_t>(heads);
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

  // softmax probabilities saved for backward: [B, heads, S, S]
  auto probs = std::make_shared<std::vector<double>>(B * heads * S * S);
  Tensor out(tq.shape);

  auto block = [&](const Tensor& t, std::size_t b, std::size_t h,
                   std::vector<double>& dst) {
    dst.resize(S * dh);
    for (std::size_t s = 0; s < S; ++s)
      std::memcpy(dst.data() + s * dh, t.data.data() + (b * S + s) * C + h * dh,
                  dh * sizeof(double));
  };

  std::vector<double> qb, kb, vb, sc(S * S), ob(S * dh);
  for (std::size_t b = 0; b < B; ++b) {
    for (int h = 0; h < heads; ++h) {
      block(tq, b, h, qb);
      block(tk, b, h, kb);
      block(tv, b, h, vb);
      kern::matmul_nt(S, S, dh, qb.data(), kb.data(), sc.data());
      for (auto& s : sc) s *= scl;
      kern::softmax_rows(S, S, sc.data());
      std::memcpy(probs->data() + (b * heads + h) * S * S, sc.data(),
                  S * S * sizeof(double));
      kern::matmul_nn(S, dh, S, sc.data(), vb.data(), ob.data());
      for (std::size_t s = 0; s < S; ++s)
        std::memcpy(out.data.data() + (b * S + s) * C + h * dh,
                    ob.data() + s * dh, dh * sizeof(double));
    }
  }

  const bool ng = nodes_[q.id].needs_grad || nodes_[k.id].needs_grad ||
                  nodes_[v.id].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].pull = [id, q, k, v, B, S, C, heads, dh, scl, probs](Tape& tp) {
      const auto& g = tp.nodes_[id].grad;
      const auto& tq2 = tp.nodes_[q.id].val;
      const auto& tk2 = tp.nodes_[k.id].val;
      const auto& tv2 = tp.nodes_[v.id].val;

      auto block = [&](const Tensor& t, std::size_t b, std::size_t h,
                       std::vector<double>& dst) {
        dst.resize(S * dh);
        for (std::size_t s = 0; s < S; ++s)
          std::memcpy(dst.data() + s * dh,
                      t.data.data() + (b * S + s) * C + h * dh,
                      dh * sizeof(double));
      };
      auto scatter_add = [&](Tensor& t, std::size_t b, std::size_t h,
                             const std::vector<double>& src) {
        for (std::size_t s = 0; s < S; ++s) {
          double* dst = t.data.data() + (b * S + s) * C + h * dh;
          const double* sp = src.data() + s * dh;
          for (std::size_t d = 0; d < dh; ++d) dst[d] += sp[d];
        }
      };

      std::vector<double> qb, kb, vb, gb(S * dh), dp(S * S), ds(S * S),
          dq(S * dh), dk(S * dh), dv(S * dh);
      for (std::size_t b = 0; b < B; ++b) {
        for (int h = 0; h < heads; ++h) {
          block(tq2, b, h, qb);
          block(tk2, b, h, kb);
          block(tv2, b, h, vb);
          for (std::size_t s = 0; s < S; ++s)
            std::memcpy(gb.data() + s * dh,
                        g.data.data() + (b * S + s) * C + h * dh,
                        dh * sizeof(double));
          const double* P = probs->data() + (b * heads + h) * S * S;

          // dV = P^T gb ; dP = gb V^T ; dS = P o (dP - rowsum(dP o P))
          kern::matmul_tn(S, dh, S, P, gb.data(), dv.data());
          kern::matmul_nt(S, S, dh, gb.data(), vb.data(), dp.data());
          for (std::size_t i = 0; i < S; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < S; ++j)
              dot += dp[i * S + j] * P[i * S + j];
            for (std::size_t j = 0; j < S; ++j)
              ds[i * S + j] = P[i * S + j] * (dp[i * S + j] - dot) * scl;
          }
          kern::matmul_nn(S, dh, S, ds.data(), kb.data(), dq.data());
          kern::matmul_tn(S, dh, S, ds.data(), qb.data(), dk.data());

          if (tp.nodes_[v.id].needs_grad)
            scatter_add(tp.nodes_[v.id].grad, b, h, dv);
          if (tp.nodes_[q.id].needs_grad)
            scatter_add(tp.nodes_[q.id].grad, b, h, dq);
          if (tp.nodes_[k.id].needs_grad)
            scatter_add(tp.nodes_[k.id].grad, b, h, dk);
        }
      }
    };
  return {id};
}

Var Tape::node_mix(Var x, const std::vector<double>& P, std::size_t N) {
  const auto& tx = nodes_[x.id].val;
  if (tx.rank() != 3 || tx.dim(1) != N)
    throw std::invalid_argument("node_mix: expected [L,N,C]");
  const std::size_t L = tx.dim(0), C = tx.dim(2);
  Tensor out(tx.shape);
  kern::node_mix(L, N, C, P.data(), tx.data.data(), out.data.data());
  const bool ng = nodes_[x.id].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng) {
    // the lambda keeps its own copy of P: callers may pass temporaries
    auto Pc = std::make_shared<std::vector<double>>(P);
    nodes_[id].pull = [id, x, Pc, L, N, C](Tape& tp) {
      kern::node_mix(L, N, C, Pc->data(), tp.nodes_[id].grad.data.data(),
                     tp.nodes_[x.id].grad.data.data(), true, /*transpose=*/true);
    };
  }
  return {id};
}

Var Tape::transpose_ln(Var x) {
  const auto& tx = nodes_[x.id].val;
  if (tx.rank() != 3) throw std::invalid_argument("transpose_ln: rank != 3");
  const std::size_t L = tx.dim(0), N = tx.dim(1), C = tx.dim(2);
  Tensor out({N, L, C});
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t n = 0; n < N; ++n)
      std::memcpy(out.data.data() + (n * L + l) * C,
                  tx.data.data() + (l * N + n) * C, C * sizeof(double));
  const bool ng = nodes_[x.id].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].pull = [id, x, L, N, C](Tape& tp) {
      const auto& g = tp.nodes_[id].grad;
      auto& gx = tp.nodes_[x.id].grad;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t l = 0; l < L; ++l) {
          const double* src = g.data.data() + (n * L + l) * C;
          double* dst = gx.data.data() + (l * N + n) * C;
          for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
        }
    };
  return {id};
}

Var Tape::concat_channels(Var a, Var b) {
  const auto& ta = nodes_[a.id].val;
  const auto& tb = nodes_[b.id].val;
  if (ta.rank() != 3 || tb.rank() != 3 || ta.dim(0) != tb.dim(0) ||
      ta.dim(1) != tb.dim(1))
    throw std::invalid_argument("concat_channels: shape mismatch");
  const std::size_t rows = ta.dim(0) * ta.dim(1);
  const std::size_t ca = ta.dim(2), cb = tb.dim(2);
  Tensor out({ta.dim(0), ta.dim(1), ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(out.data.data() + r * (ca + cb), ta.data.data() + r * ca,
                ca * sizeof(double));
    std::memcpy(out.data.data() + r * (ca + cb) + ca, tb.data.data() + r * cb,
                cb * sizeof(double));
  }
  const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].pull = [id, a, b, rows, ca, cb](Tape& tp) {
      const auto& g = tp.nodes_[id].grad.data;
      for (std::size_t r = 0; r < rows; ++r) {
        if (tp.nodes_[a.id].needs_grad) {
          auto& ga = tp.nodes_[a.id].grad.data;
          for (std::size_t c = 0; c < ca; ++c)
            ga[r * ca + c] += g[r * (ca + cb) + c];
        }
        if (tp.nodes_[b.id].needs_grad) {
          auto& gb = tp.nodes_[b.id].grad.data;
          for (std::size_t c = 0; c < cb; ++c)
            gb[r * cb + c] += g[r * (ca + cb) + ca + c];
        }
      }
    };
  return {id};
}

Var Tape::add_channel_vec(Var x, Var v) {
  const auto& tx = nodes_[x.id].val;
  const auto& tv = nodes_[v.id].val;
  const std::size_t c = last_dim(tx);
  if (tv.numel() != c) throw std::invalid_argument("add_channel_vec: mismatch");
  const std::size_t rows = tx.numel() / c;
  Tensor out(tx.shape);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j)
      out.data[r * c + j] = tx.data[r * c + j] + tv.data[j];
  const bool ng = nodes_[x.id].needs_grad || nodes_[v.id].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].pull = [id, x, v, rows, c](Tape& tp) {
      const auto& g = tp.nodes_[id].grad.data;
      if (tp.nodes_[x.id].needs_grad) {
        auto& gx = tp.nodes_[x.id].grad.data;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (tp.nodes_[v.id].needs_grad) {
        auto& gv = tp.nodes_[v.id].grad.data;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) gv[j] += g[r * c + j];
      }
    };
  return {id};
}

Var Tape::mul_const(Var x, const std::vector<double>& m) {
  const auto& tx = nodes_[x.id].val;
  if (tx.numel() != m.size()) throw std::invalid_argument("mul_const: mismatch");
  Tensor out(tx.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = tx.data[i] * m[i];
  const bool ng = nodes_[x.id].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng) {
    auto mc = std::make_shared<std::vector<double>>(m);
    nodes_[id].pull = [id, x, mc](Tape& tp) {
      const auto& g = tp.nodes_[id].grad.data;
      auto& gx = tp.nodes_[x.id].grad.data;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mc)[i];
    };
  }
  return {id};
}

Var Tape::reshape(Var x, std::vector<std::size_t> shape) {
  const auto& tx = nodes_[x.id].val;
  if (Tensor::numel_of(shape) != tx.numel())
    throw std::invalid_argument("reshape: numel mismatch");
  Tensor out;
  out.shape = std::move(shape);
  out.data = tx.data;
  const bool ng = nodes_[x.id].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].pull = [id, x](Tape& tp) {
      const auto& g = tp.nodes_[id].grad.data;
      auto& gx = tp.nodes_[x.id].grad.data;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    };
  return {id};
}

Var Tape::masked_mse(Var pred, const std::vector<double>& target,
                     const std::vector<std::uint8_t>& mask) {
  const auto& tp0 = nodes_[pred.id].val;
  if (tp0.numel() != target.size() || target.size() != mask.size())
    throw std::invalid_argument("masked_mse: size mismatch");
  std::size_t count = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double d = tp0.data[i] - target[i];
    loss += d * d;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("masked_mse: empty mask");
  loss /= static_cast<double>(count);

  Tensor out({1});
  out.data[0] = loss;
  const bool ng = nodes_[pred.id].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng) {
    auto tc = std::make_shared<std::vector<double>>(target);
    auto mc = std::make_shared<std::vector<std::uint8_t>>(mask);
    nodes_[id].pull = [id, pred, tc, mc, count](Tape& tp) {
      const double g = tp.nodes_[id].grad.data[0];
      const auto& v = tp.nodes_[pred.id].val.data;
      auto& gp = tp.nodes_[pred.id].grad.data;
      const double w = 2.0 * g / static_cast<double>(count);
      for (std::size_t i = 0; i < v.size(); ++i)
        if ((*mc)[i]) gp[i] += w * (v[i] - (*tc)[i]);
    };
  }
  return {id};
}

void Tape::backward(Var loss) {
  auto& ln = nodes_[loss.id];
  if (ln.val.numel() != 1) throw std::invalid_argument("backward: loss not scalar");
  if (!ln.needs_grad) return;  // no parameters anywhere upstream
  ln.grad.data[0] = 1.0;
  for (int i = loss.id; i >= 0; --i)
    if (nodes_[i].needs_grad && nodes_[i].pull) nodes_[i].pull(*this);
}

}  // namespace faststi
