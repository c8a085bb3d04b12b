#include "duet/autodiff.hpp"

#include <cmath>

namespace duet::ag {

namespace {
constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
}  // namespace

void Tape::backward(Index loss) {
  if (val(loss).rows != 1 || val(loss).cols != 1)
    throw Error(ErrorKind::ShapeMismatch, "backward needs a scalar loss");
  for (auto& n : nodes_) {
    n.grad = Matrix(n.val.rows, n.val.cols);
  }
  nodes_[loss].grad(0, 0) = 1.0;
  for (Index i = static_cast<Index>(nodes_.size()) - 1; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back(*this);
  }
}

Index Tape::unary(Index a, const std::function<double(double)>& f,
                  const std::function<double(double, double)>& dfdx) {
  Matrix out = val(a);
  for (double& e : out.v) e = f(e);
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [a, self, dfdx](Tape& t) {
    const Matrix& x = t.val(a);
    const Matrix& y = t.val(self);
    const Matrix& gy = t.grad(self);
    Matrix& gx = t.grad(a);
    for (size_t i = 0; i < gx.size(); ++i) gx.v[i] += dfdx(x.v[i], y.v[i]) * gy.v[i];
  };
  return self;
}

Index Tape::add(Index a, Index b) {
  Index self = push(duet::add(val(a), val(b)), nullptr);
  nodes_[self].back = [a, b, self](Tape& t) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a);
    Matrix& gb = t.grad(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.v[i] += g.v[i];
      gb.v[i] += g.v[i];
    }
  };
  return self;
}

Index Tape::sub(Index a, Index b) {
  Index self = push(duet::sub(val(a), val(b)), nullptr);
  nodes_[self].back = [a, b, self](Tape& t) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a);
    Matrix& gb = t.grad(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.v[i] += g.v[i];
      gb.v[i] -= g.v[i];
    }
  };
  return self;
}

Index Tape::mul(Index a, Index b) {
  if (!val(a).same_shape(val(b))) throw Error(ErrorKind::ShapeMismatch, "mul shape mismatch");
  Matrix out = val(a);
  for (size_t i = 0; i < out.size(); ++i) out.v[i] *= val(b).v[i];
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [a, b, self](Tape& t) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.val(a);
    const Matrix& bv = t.val(b);
    Matrix& ga = t.grad(a);
    Matrix& gb = t.grad(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.v[i] += g.v[i] * bv.v[i];
      gb.v[i] += g.v[i] * av.v[i];
    }
  };
  return self;
}

Index Tape::div(Index a, Index b) {
  if (!val(a).same_shape(val(b))) throw Error(ErrorKind::ShapeMismatch, "div shape mismatch");
  Matrix out = val(a);
  for (size_t i = 0; i < out.size(); ++i) out.v[i] /= val(b).v[i];
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [a, b, self](Tape& t) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.val(a);
    const Matrix& bv = t.val(b);
    Matrix& ga = t.grad(a);
    Matrix& gb = t.grad(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.v[i] += g.v[i] / bv.v[i];
      gb.v[i] -= g.v[i] * av.v[i] / (bv.v[i] * bv.v[i]);
    }
  };
  return self;
}

Index Tape::affine(Index a, double scale, double shift) {
  Matrix out = val(a);
  for (double& e : out.v) e = scale * e + shift;
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [a, self, scale](Tape& t) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a);
    for (size_t i = 0; i < g.size(); ++i) ga.v[i] += scale * g.v[i];
  };
  return self;
}

Index Tape::relu(Index a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Index Tape::softplus_op(Index a) {
  return unary(a, [](double x) { return duet::softplus(x); },
               [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Index Tape::gelu(Index a) {
  return unary(a,
               [](double x) { return 0.5 * x * (1.0 + std::erf(x / kSqrt2)); },
               [](double x, double) {
                 double phi = 0.5 * (1.0 + std::erf(x / kSqrt2));
                 return phi + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
               });
}

Index Tape::sigmoid(Index a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Index Tape::rcp_clamped(Index a, double floor) {
  return unary(a,
               [floor](double x) { return 1.0 / std::max(x, floor); },
               [floor](double x, double y) { return x > floor ? -y * y : 0.0; });
}

Index Tape::bernoulli_logit(Index p, double p_eps) {
  double lo = p_eps, hi = 1.0 - p_eps;
  return unary(p,
               [lo, hi](double x) {
                 double pc = std::min(std::max(x, lo), hi);
                 return std::log(pc) - std::log1p(-pc);
               },
               [lo, hi](double x, double) {
                 if (x <= lo || x >= hi) return 0.0;
                 return 1.0 / (x * (1.0 - x));
               });
}

Index Tape::matmul(Index a, Index b) {
  Index self = push(duet::matmul(val(a), val(b)), nullptr);
  nodes_[self].back = [a, b, self](Tape& t) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.val(a);
    const Matrix& bv = t.val(b);
    // ga += g * b^T
    Matrix& ga = t.grad(a);
    for (int i = 0; i < av.rows; ++i)
      for (int j = 0; j < bv.cols; ++j) {
        double gij = g(i, j);
        if (gij == 0.0) continue;
        for (int k2 = 0; k2 < av.cols; ++k2) ga(i, k2) += gij * bv(k2, j);
      }
    // gb += a^T * g
    Matrix& gb = t.grad(b);
    for (int i = 0; i < av.rows; ++i)
      for (int k2 = 0; k2 < av.cols; ++k2) {
        double aik = av(i, k2);
        if (aik == 0.0) continue;
        for (int j = 0; j < bv.cols; ++j) gb(k2, j) += aik * g(i, j);
      }
  };
  return self;
}

Index Tape::transpose(Index a) {
  Index self = push(duet::transpose(val(a)), nullptr);
  nodes_[self].back = [a, self](Tape& t) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a);
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j) ga(j, i) += g(i, j);
  };
  return self;
}

Index Tape::add_broadcast_rows(Index a, Index row) {
  const Matrix& av = val(a);
  const Matrix& rv = val(row);
  if (rv.rows != 1 || rv.cols != av.cols)
    throw Error(ErrorKind::ShapeMismatch, "add_broadcast_rows shape mismatch");
  Matrix out = av;
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out(i, j) += rv(0, j);
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [a, row, self](Tape& t) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a);
    Matrix& gr = t.grad(row);
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j) {
        ga(i, j) += g(i, j);
        gr(0, j) += g(i, j);
      }
  };
  return self;
}

Index Tape::sum(Index a) {
  Matrix out(1, 1);
  for (double e : val(a).v) out(0, 0) += e;
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [a, self](Tape& t) {
    double g = t.grad(self)(0, 0);
    Matrix& ga = t.grad(a);
    for (double& e : ga.v) e += g;
  };
  return self;
}

Index Tape::max_reduce(Index a) {
  const Matrix& av = val(a);
  int arg = 0;
  for (size_t i = 1; i < av.size(); ++i)
    if (av.v[i] > av.v[arg]) arg = static_cast<int>(i);
  Matrix out(1, 1);
  out(0, 0) = av.v[arg];
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [a, self, arg](Tape& t) {
    t.grad(a).v[arg] += t.grad(self)(0, 0);
  };
  return self;
}

Index Tape::row_softmax(Index a) {
  Matrix out = val(a);
  for (int i = 0; i < out.rows; ++i) {
    double mx = -1e300;
    for (int j = 0; j < out.cols; ++j) mx = std::max(mx, out(i, j));
    double denom = 0;
    for (int j = 0; j < out.cols; ++j) {
      out(i, j) = std::exp(out(i, j) - mx);
      denom += out(i, j);
    }
    for (int j = 0; j < out.cols; ++j) out(i, j) /= denom;
  }
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [a, self](Tape& t) {
    const Matrix& y = t.val(self);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a);
    for (int i = 0; i < y.rows; ++i) {
      double dot = 0;
      for (int j = 0; j < y.cols; ++j) dot += g(i, j) * y(i, j);
      for (int j = 0; j < y.cols; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  };
  return self;
}

Index Tape::gather_cols(Index a, std::vector<int> idx) {
  const Matrix& av = val(a);
  if (av.rows != 1) throw Error(ErrorKind::ShapeMismatch, "gather_cols expects a row vector");
  Matrix out(1, static_cast<int>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) out(0, static_cast<int>(i)) = av(0, idx[i]);
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [a, self, idx = std::move(idx)](Tape& t) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a);
    for (size_t i = 0; i < idx.size(); ++i) ga(0, idx[i]) += g(0, static_cast<int>(i));
  };
  return self;
}

Index Tape::concat_rows(const std::vector<Index>& rows) {
  int d = val(rows[0]).cols;
  Matrix out(static_cast<int>(rows.size()), d);
  for (size_t i = 0; i < rows.size(); ++i) {
    const Matrix& r = val(rows[i]);
    if (r.rows != 1 || r.cols != d) throw Error(ErrorKind::ShapeMismatch, "concat_rows width mismatch");
    for (int j = 0; j < d; ++j) out(static_cast<int>(i), j) = r(0, j);
  }
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [rows, self](Tape& t) {
    const Matrix& g = t.grad(self);
    for (size_t i = 0; i < rows.size(); ++i) {
      Matrix& gr = t.grad(rows[i]);
      for (int j = 0; j < g.cols; ++j) gr(0, j) += g(static_cast<int>(i), j);
    }
  };
  return self;
}

Index Tape::concat_scalars(const std::vector<Index>& xs) {
  Matrix out(1, static_cast<int>(xs.size()));
  for (size_t i = 0; i < xs.size(); ++i) out(0, static_cast<int>(i)) = val(xs[i])(0, 0);
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [xs, self](Tape& t) {
    const Matrix& g = t.grad(self);
    for (size_t i = 0; i < xs.size(); ++i) t.grad(xs[i])(0, 0) += g(0, static_cast<int>(i));
  };
  return self;
}

Index Tape::assemble(Matrix base, const std::vector<std::tuple<int, int, Index>>& entries) {
  for (const auto& [r, c, node] : entries) base(r, c) = val(node)(0, 0);
  Index self = push(std::move(base), nullptr);
  nodes_[self].back = [entries, self](Tape& t) {
    const Matrix& g = t.grad(self);
    for (const auto& [r, c, node] : entries) t.grad(node)(0, 0) += g(r, c);
  };
  return self;
}

Index Tape::scale_by(Index a, Index s) {
  double sv = val(s)(0, 0);
  Matrix out = val(a);
  for (double& e : out.v) e *= sv;
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [a, s, self](Tape& t) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.val(a);
    double sv2 = t.val(s)(0, 0);
    Matrix& ga = t.grad(a);
    double acc = 0;
    for (size_t i = 0; i < g.size(); ++i) {
      ga.v[i] += sv2 * g.v[i];
      acc += av.v[i] * g.v[i];
    }
    t.grad(s)(0, 0) += acc;
  };
  return self;
}

Index Tape::layer_norm(Index a, Index gain, Index bias, double eps) {
  const Matrix& x = val(a);
  const Matrix& gn = val(gain);
  const Matrix& bs = val(bias);
  if (gn.rows != 1 || gn.cols != x.cols || bs.rows != 1 || bs.cols != x.cols)
    throw Error(ErrorKind::ShapeMismatch, "layer_norm gain/bias shape mismatch");
  Matrix out(x.rows, x.cols);
  std::vector<double> inv(x.rows), mean(x.rows);
  for (int i = 0; i < x.rows; ++i) {
    double mu = 0;
    for (int j = 0; j < x.cols; ++j) mu += x(i, j);
    mu /= x.cols;
    double var = 0;
    for (int j = 0; j < x.cols; ++j) {
      double d = x(i, j) - mu;
      var += d * d;
    }
    var /= x.cols;
    mean[i] = mu;
    inv[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < x.cols; ++j) out(i, j) = (x(i, j) - mu) * inv[i] * gn(0, j) + bs(0, j);
  }
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [a, gain, bias, self, inv = std::move(inv), mean = std::move(mean)](Tape& t) {
    const Matrix& x2 = t.val(a);
    const Matrix& gn2 = t.val(gain);
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad(a);
    Matrix& gg = t.grad(gain);
    Matrix& gb = t.grad(bias);
    int cols = x2.cols;
    for (int i = 0; i < x2.rows; ++i) {
      // xhat = (x - mu) * inv ; y = xhat * gain + bias
      double m1 = 0, m2 = 0;  // mean(dxhat), mean(dxhat*xhat)
      for (int j = 0; j < cols; ++j) {
        double xhat = (x2(i, j) - mean[i]) * inv[i];
        double dxhat = g(i, j) * gn2(0, j);
        gg(0, j) += g(i, j) * xhat;
        gb(0, j) += g(i, j);
        m1 += dxhat;
        m2 += dxhat * xhat;
      }
      m1 /= cols;
      m2 /= cols;
      for (int j = 0; j < cols; ++j) {
        double xhat = (x2(i, j) - mean[i]) * inv[i];
        double dxhat = g(i, j) * gn2(0, j);
        gx(i, j) += inv[i] * (dxhat - m1 - xhat * m2);
      }
    }
  };
  return self;
}

Index Tape::straight_through(Index soft, double hard) {
  Matrix out(1, 1);
  out(0, 0) = hard;
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [soft, self](Tape& t) { t.grad(soft)(0, 0) += t.grad(self)(0, 0); };
  return self;
}

Index Tape::l1_loss(Index a, Index b) {
  const Matrix& av = val(a);
  const Matrix& bv = val(b);
  if (!av.same_shape(bv)) throw Error(ErrorKind::ShapeMismatch, "l1_loss shape mismatch");
  Matrix out(1, 1);
  double acc = 0;
  for (size_t i = 0; i < av.size(); ++i) acc += std::abs(av.v[i] - bv.v[i]);
  out(0, 0) = acc / static_cast<double>(av.size());
  Index self = push(std::move(out), nullptr);
  nodes_[self].back = [a, b, self](Tape& t) {
    const Matrix& av2 = t.val(a);
    const Matrix& bv2 = t.val(b);
    double g = t.grad(self)(0, 0) / static_cast<double>(av2.size());
    Matrix& ga = t.grad(a);
    Matrix& gb = t.grad(b);
    for (size_t i = 0; i < av2.size(); ++i) {
      double d = av2.v[i] - bv2.v[i];
      double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
      ga.v[i] += g * s;
      gb.v[i] -= g * s;
    }
  };
  return self;
}

}  // namespace duet::ag
