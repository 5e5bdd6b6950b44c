// SPDX-License-Identifier: Apache-2.0
#include "confsearch/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace confsearch {

namespace {

void checkSameShape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shapeToString(a.shape()) + " vs " + shapeToString(b.shape()));
  }
}

void check2d(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected a 2-d tensor, got " +
                                shapeToString(x.shape()));
  }
}

// Records the entry when grad mode is on and any input is tracked. The
// closure receives "need" flags frozen at record time.
template <typename Fn>
void maybeRecord(const char* op, std::initializer_list<Tensor> inputs, const Tensor& out,
                 Fn makeBackward) {
  Tape* tape = Tape::active();
  if (!tape) return;
  bool any = false;
  for (const Tensor& t : inputs) any = any || tape->tracked(t);
  if (!any) return;
  tape->record(op, inputs, out, makeBackward(*tape));
}

const std::vector<double>* outGrad(const Tensor& out) {
  const std::vector<double>& g = out.data().grad;
  return g.empty() ? nullptr : &g;
}

constexpr double kLayerNormEps = 1e-12;
constexpr double kBatchNormEps = 1e-5;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return axpy(a, b, 1.0); }

Tensor axpy(const Tensor& a, const Tensor& b, double c) {
  checkSameShape(a, b, "axpy");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + c * b.at(i);
  Tensor out = Tensor::fromVector(a.shape(), std::move(v));
  maybeRecord("axpy", {a, b}, out, [&](Tape& tape) {
    const bool na = tape.tracked(a), nb = tape.tracked(b);
    return [a, b, out, c, na, nb]() {
      const auto* og = outGrad(out);
      if (!og) return;
      Tensor am = a, bm = b;
      for (std::size_t i = 0; i < og->size(); ++i) {
        if (na) accumGrad(am.data(), i, (*og)[i]);
        if (nb) accumGrad(bm.data(), i, c * (*og)[i]);
      }
    };
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  checkSameShape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * b.at(i);
  Tensor out = Tensor::fromVector(a.shape(), std::move(v));
  maybeRecord("mul", {a, b}, out, [&](Tape& tape) {
    const bool na = tape.tracked(a), nb = tape.tracked(b);
    return [a, b, out, na, nb]() {
      const auto* og = outGrad(out);
      if (!og) return;
      Tensor am = a, bm = b;
      for (std::size_t i = 0; i < og->size(); ++i) {
        if (na) accumGrad(am.data(), i, (*og)[i] * b.at(i));
        if (nb) accumGrad(bm.data(), i, (*og)[i] * a.at(i));
      }
    };
  });
  return out;
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * x.at(i);
  Tensor out = Tensor::fromVector(x.shape(), std::move(v));
  maybeRecord("scale", {x}, out, [&](Tape&) {
    return [x, out, c]() {
      const auto* og = outGrad(out);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t i = 0; i < og->size(); ++i) accumGrad(xm.data(), i, c * (*og)[i]);
    };
  });
  return out;
}

Tensor scaleByScalar(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw std::invalid_argument("scaleByScalar: multiplier must be scalar");
  const double c = s.at(0);
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * x.at(i);
  Tensor out = Tensor::fromVector(x.shape(), std::move(v));
  maybeRecord("scale_by_scalar", {x, s}, out, [&](Tape& tape) {
    const bool nx = tape.tracked(x), ns = tape.tracked(s);
    return [x, s, out, c, nx, ns]() {
      const auto* og = outGrad(out);
      if (!og) return;
      Tensor xm = x, sm = s;
      double dot = 0.0;
      for (std::size_t i = 0; i < og->size(); ++i) {
        if (nx) accumGrad(xm.data(), i, c * (*og)[i]);
        dot += (*og)[i] * x.at(i);
      }
      if (ns) accumGrad(sm.data(), 0, dot);
    };
  });
  return out;
}

Tensor addRowVector(const Tensor& x, const Tensor& v) {
  check2d(x, "addRowVector");
  if (v.rank() != 1 || v.size() != x.cols()) {
    throw std::invalid_argument("addRowVector: vector length " + shapeToString(v.shape()) +
                                " does not match columns of " + shapeToString(x.shape()));
  }
  const std::size_t T = x.rows(), d = x.cols();
  std::vector<double> out(T * d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < d; ++c) out[t * d + c] = x.at(t, c) + v.at(c);
  Tensor o = Tensor::fromVector({T, d}, std::move(out));
  maybeRecord("add_row_vector", {x, v}, o, [&](Tape& tape) {
    const bool nx = tape.tracked(x), nv = tape.tracked(v);
    return [x, v, o, T, d, nx, nv]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x, vm = v;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < d; ++c) {
          const double g = (*og)[t * d + c];
          if (nx) accumGrad(xm.data(), t * d + c, g);
          if (nv) accumGrad(vm.data(), c, g);
        }
    };
  });
  return o;
}

Tensor sumAll(const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.at(i);
  Tensor out = Tensor::scalar(s);
  maybeRecord("sum", {x}, out, [&](Tape&) {
    return [x, out]() {
      const auto* og = outGrad(out);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t i = 0; i < x.size(); ++i) accumGrad(xm.data(), i, (*og)[0]);
    };
  });
  return out;
}

Tensor mean(const Tensor& x) { return scale(sumAll(x), 1.0 / static_cast<double>(x.size())); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  check2d(a, "matmul");
  check2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                shapeToString(a.shape()) + " vs " + shapeToString(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0, a.values().data(),
              static_cast<int>(k), b.values().data(), static_cast<int>(n), 0.0, out.data(),
              static_cast<int>(n));
  Tensor o = Tensor::fromVector({m, n}, std::move(out));
  maybeRecord("matmul", {a, b}, o, [&](Tape& tape) {
    const bool na = tape.tracked(a), nb = tape.tracked(b);
    return [a, b, o, m, k, n, na, nb]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor am = a, bm = b;
      if (na) {
        // dA += G * B^T
        auto& ga = ensureGrad(am.data());
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m),
                    static_cast<int>(k), static_cast<int>(n), 1.0, og->data(),
                    static_cast<int>(n), b.values().data(), static_cast<int>(n), 1.0,
                    ga.data(), static_cast<int>(k));
      }
      if (nb) {
        // dB += A^T * G
        auto& gb = ensureGrad(bm.data());
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(k),
                    static_cast<int>(n), static_cast<int>(m), 1.0, a.values().data(),
                    static_cast<int>(k), og->data(), static_cast<int>(n), 1.0, gb.data(),
                    static_cast<int>(n));
      }
    };
  });
  return o;
}

Tensor transpose(const Tensor& x) {
  check2d(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.at(i, j);
  Tensor o = Tensor::fromVector({c, r}, std::move(out));
  maybeRecord("transpose", {x}, o, [&](Tape&) {
    return [x, o, r, c]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) accumGrad(xm.data(), i * c + j, (*og)[j * r + i]);
    };
  });
  return o;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return addRowVector(matmul(x, w), b);
}

Tensor sliceCols(const Tensor& x, std::size_t start, std::size_t count) {
  check2d(x, "sliceCols");
  if (start + count > x.cols()) {
    throw std::invalid_argument("sliceCols: range out of bounds for " +
                                shapeToString(x.shape()));
  }
  const std::size_t T = x.rows(), d = x.cols();
  std::vector<double> out(T * count);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < count; ++c) out[t * count + c] = x.at(t, start + c);
  Tensor o = Tensor::fromVector({T, count}, std::move(out));
  maybeRecord("slice_cols", {x}, o, [&](Tape&) {
    return [x, o, T, d, start, count]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < count; ++c)
          accumGrad(xm.data(), t * d + start + c, (*og)[t * count + c]);
    };
  });
  return o;
}

Tensor concatCols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concatCols: no inputs");
  const std::size_t T = parts[0].rows();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    check2d(p, "concatCols");
    if (p.rows() != T) throw std::invalid_argument("concatCols: row count mismatch");
    total += p.cols();
  }
  std::vector<double> out(T * total);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < p.cols(); ++c) out[t * total + off + c] = p.at(t, c);
    off += p.cols();
  }
  Tensor o = Tensor::fromVector({T, total}, std::move(out));
  Tape* tape = Tape::active();
  if (tape) {
    bool any = false;
    for (const Tensor& p : parts) any = any || tape->tracked(p);
    if (any) {
      std::vector<Tensor> held = parts;
      std::vector<bool> need;
      for (const Tensor& p : parts) need.push_back(tape->tracked(p));
      tape->record("concat_cols", parts, o, [held, o, T, total, need]() {
        const auto* og = outGrad(o);
        if (!og) return;
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < held.size(); ++pi) {
          Tensor p = held[pi];
          const std::size_t pc = p.cols();
          if (need[pi]) {
            for (std::size_t t = 0; t < T; ++t)
              for (std::size_t c = 0; c < pc; ++c)
                accumGrad(p.data(), t * pc + c, (*og)[t * total + off + c]);
          }
          off += pc;
        }
      });
    }
  }
  return o;
}

Tensor row(const Tensor& x, std::size_t r) {
  check2d(x, "row");
  if (r >= x.rows()) throw std::invalid_argument("row: index out of range");
  const std::size_t d = x.cols();
  std::vector<double> out(d);
  for (std::size_t c = 0; c < d; ++c) out[c] = x.at(r, c);
  Tensor o = Tensor::fromVector({d}, std::move(out));
  maybeRecord("row", {x}, o, [&](Tape&) {
    return [x, o, r, d]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t c = 0; c < d; ++c) accumGrad(xm.data(), r * d + c, (*og)[c]);
    };
  });
  return o;
}

Tensor gatherCols(const Tensor& x, const std::vector<std::size_t>& idx) {
  check2d(x, "gatherCols");
  for (std::size_t j : idx)
    if (j >= x.cols()) throw std::invalid_argument("gatherCols: index out of range");
  const std::size_t T = x.rows(), d = x.cols(), m = idx.size();
  std::vector<double> out(T * m);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < m; ++c) out[t * m + c] = x.at(t, idx[c]);
  Tensor o = Tensor::fromVector({T, m}, std::move(out));
  maybeRecord("gather_cols", {x}, o, [&](Tape&) {
    return [x, o, idx, T, d, m]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < m; ++c)
          accumGrad(xm.data(), t * d + idx[c], (*og)[t * m + c]);
    };
  });
  return o;
}

Tensor elem(const Tensor& x, std::size_t i) {
  if (i >= x.size()) throw std::invalid_argument("elem: index out of range");
  Tensor o = Tensor::scalar(x.at(i));
  maybeRecord("elem", {x}, o, [&](Tape&) {
    return [x, o, i]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x;
      accumGrad(xm.data(), i, (*og)[0]);
    };
  });
  return o;
}

Tensor shiftRight(const Tensor& x, std::size_t k, double pad) {
  if (x.rank() != 1) throw std::invalid_argument("shiftRight: expected a 1-d tensor");
  const std::size_t n = x.size();
  std::vector<double> out(n, pad);
  for (std::size_t i = k; i < n; ++i) out[i] = x.at(i - k);
  Tensor o = Tensor::fromVector({n}, std::move(out));
  maybeRecord("shift_right", {x}, o, [&](Tape&) {
    return [x, o, k, n]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t i = k; i < n; ++i) accumGrad(xm.data(), i - k, (*og)[i]);
    };
  });
  return o;
}

Tensor logaddexp(const Tensor& a, const Tensor& b) {
  checkSameShape(a, b, "logaddexp");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.at(i), y = b.at(i);
    const double m = std::max(x, y);
    out[i] = std::isfinite(m) ? m + std::log1p(std::exp(-std::abs(x - y))) : m;
    if (x == kNegInf && y == kNegInf) out[i] = kNegInf;
  }
  Tensor o = Tensor::fromVector(a.shape(), std::move(out));
  maybeRecord("logaddexp", {a, b}, o, [&](Tape& tape) {
    const bool na = tape.tracked(a), nb = tape.tracked(b);
    return [a, b, o, na, nb]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor am = a, bm = b;
      for (std::size_t i = 0; i < og->size(); ++i) {
        if (!std::isfinite(o.at(i))) continue;  // no mass reached this cell
        if (na) accumGrad(am.data(), i, (*og)[i] * std::exp(a.at(i) - o.at(i)));
        if (nb) accumGrad(bm.data(), i, (*og)[i] * std::exp(b.at(i) - o.at(i)));
      }
    };
  });
  return o;
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) > 0.0 ? x.at(i) : 0.0;
  Tensor o = Tensor::fromVector(x.shape(), std::move(out));
  maybeRecord("relu", {x}, o, [&](Tape&) {
    return [x, o]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t i = 0; i < og->size(); ++i)
        if (x.at(i) > 0.0) accumGrad(xm.data(), i, (*og)[i]);
    };
  });
  return o;
}

namespace {
double sigmoidScalar(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoidScalar(x.at(i));
  Tensor o = Tensor::fromVector(x.shape(), std::move(out));
  maybeRecord("sigmoid", {x}, o, [&](Tape&) {
    return [x, o]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t i = 0; i < og->size(); ++i) {
        const double y = o.at(i);
        accumGrad(xm.data(), i, (*og)[i] * y * (1.0 - y));
      }
    };
  });
  return o;
}

Tensor swish(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * sigmoidScalar(x.at(i));
  Tensor o = Tensor::fromVector(x.shape(), std::move(out));
  maybeRecord("swish", {x}, o, [&](Tape&) {
    return [x, o]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t i = 0; i < og->size(); ++i) {
        const double s = sigmoidScalar(x.at(i));
        accumGrad(xm.data(), i, (*og)[i] * (s + x.at(i) * s * (1.0 - s)));
      }
    };
  });
  return o;
}

Tensor glu(const Tensor& x) {
  check2d(x, "glu");
  if (x.cols() % 2 != 0) {
    throw std::invalid_argument("glu: column count must be even, got " +
                                shapeToString(x.shape()));
  }
  const std::size_t T = x.rows(), d = x.cols() / 2, full = x.cols();
  std::vector<double> out(T * d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < d; ++c)
      out[t * d + c] = x.at(t, c) * sigmoidScalar(x.at(t, d + c));
  Tensor o = Tensor::fromVector({T, d}, std::move(out));
  maybeRecord("glu", {x}, o, [&](Tape&) {
    return [x, o, T, d, full]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < d; ++c) {
          const double g = (*og)[t * d + c];
          const double a = x.at(t, c);
          const double s = sigmoidScalar(x.at(t, d + c));
          accumGrad(xm.data(), t * full + c, g * s);
          accumGrad(xm.data(), t * full + d + c, g * a * s * (1.0 - s));
        }
    };
  });
  return o;
}

namespace {

struct AxisView {
  std::size_t groups;  // number of independent softmax groups
  std::size_t len;     // elements per group
  std::size_t stride;  // stride between consecutive elements of a group
  std::size_t step;    // offset between group starts
};

AxisView axisView(const Tensor& x, std::size_t axis, const char* op) {
  if (x.rank() == 1) {
    if (axis != 0) throw std::invalid_argument(std::string(op) + ": invalid axis for 1-d");
    return {1, x.size(), 1, 0};
  }
  if (x.rank() != 2 || axis > 1) {
    throw std::invalid_argument(std::string(op) + ": invalid axis " + std::to_string(axis) +
                                " for " + shapeToString(x.shape()));
  }
  if (axis == 1) return {x.rows(), x.cols(), 1, x.cols()};
  return {x.cols(), x.rows(), x.cols(), 1};
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisView v = axisView(x, axis, "softmax");
  std::vector<double> out(x.size());
  for (std::size_t g = 0; g < v.groups; ++g) {
    const std::size_t base = g * v.step;
    double mx = kNegInf;
    for (std::size_t i = 0; i < v.len; ++i) mx = std::max(mx, x.at(base + i * v.stride));
    double sum = 0.0;
    for (std::size_t i = 0; i < v.len; ++i) {
      const double e = std::exp(x.at(base + i * v.stride) - mx);
      out[base + i * v.stride] = e;
      sum += e;
    }
    for (std::size_t i = 0; i < v.len; ++i) out[base + i * v.stride] /= sum;
  }
  Tensor o = Tensor::fromVector(x.shape(), std::move(out));
  maybeRecord("softmax", {x}, o, [&](Tape&) {
    return [x, o, v]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t g = 0; g < v.groups; ++g) {
        const std::size_t base = g * v.step;
        double dot = 0.0;
        for (std::size_t i = 0; i < v.len; ++i) {
          const std::size_t k = base + i * v.stride;
          dot += (*og)[k] * o.at(k);
        }
        for (std::size_t i = 0; i < v.len; ++i) {
          const std::size_t k = base + i * v.stride;
          accumGrad(xm.data(), k, o.at(k) * ((*og)[k] - dot));
        }
      }
    };
  });
  return o;
}

Tensor logSoftmax(const Tensor& x, std::size_t axis) {
  const AxisView v = axisView(x, axis, "logSoftmax");
  std::vector<double> out(x.size());
  for (std::size_t g = 0; g < v.groups; ++g) {
    const std::size_t base = g * v.step;
    double mx = kNegInf;
    for (std::size_t i = 0; i < v.len; ++i) mx = std::max(mx, x.at(base + i * v.stride));
    double sum = 0.0;
    for (std::size_t i = 0; i < v.len; ++i) sum += std::exp(x.at(base + i * v.stride) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t i = 0; i < v.len; ++i)
      out[base + i * v.stride] = x.at(base + i * v.stride) - lse;
  }
  Tensor o = Tensor::fromVector(x.shape(), std::move(out));
  maybeRecord("log_softmax", {x}, o, [&](Tape&) {
    return [x, o, v]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t g = 0; g < v.groups; ++g) {
        const std::size_t base = g * v.step;
        double gsum = 0.0;
        for (std::size_t i = 0; i < v.len; ++i) gsum += (*og)[base + i * v.stride];
        for (std::size_t i = 0; i < v.len; ++i) {
          const std::size_t k = base + i * v.stride;
          accumGrad(xm.data(), k, (*og)[k] - std::exp(o.at(k)) * gsum);
        }
      }
    };
  });
  return o;
}

Tensor layerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  check2d(x, "layerNorm");
  const std::size_t T = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw std::invalid_argument("layerNorm: gain/bias must have length " + std::to_string(d));
  }
  std::vector<double> out(T * d), xhat(T * d), invstd(T);
  for (std::size_t t = 0; t < T; ++t) {
    double m = 0.0;
    for (std::size_t c = 0; c < d; ++c) m += x.at(t, c);
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double z = x.at(t, c) - m;
      var += z * z;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    invstd[t] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (x.at(t, c) - m) * is;
      xhat[t * d + c] = h;
      out[t * d + c] = h * gain.at(c) + bias.at(c);
    }
  }
  Tensor o = Tensor::fromVector({T, d}, std::move(out));
  maybeRecord("layer_norm", {x, gain, bias}, o, [&](Tape& tape) {
    const bool nx = tape.tracked(x), ng = tape.tracked(gain), nb = tape.tracked(bias);
    return [x, gain, bias, o, xh = std::move(xhat), is = std::move(invstd), T, d, nx, ng,
            nb]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x, gm = gain, bm = bias;
      for (std::size_t t = 0; t < T; ++t) {
        double sumDh = 0.0, sumDhXh = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double dh = (*og)[t * d + c] * gain.at(c);
          sumDh += dh;
          sumDhXh += dh * xh[t * d + c];
        }
        const double invd = 1.0 / static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c) {
          const double g = (*og)[t * d + c];
          if (ng) accumGrad(gm.data(), c, g * xh[t * d + c]);
          if (nb) accumGrad(bm.data(), c, g);
          if (nx) {
            const double dh = g * gain.at(c);
            accumGrad(xm.data(), t * d + c,
                      is[t] * (dh - invd * sumDh - invd * xh[t * d + c] * sumDhXh));
          }
        }
      }
    };
  });
  return o;
}

Tensor batchNorm(const Tensor& x, const Tensor& gain, const Tensor& bias, Tensor& runningMean,
                 Tensor& runningVar, bool train, double momentum) {
  check2d(x, "batchNorm");
  const std::size_t T = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d || runningMean.size() != d ||
      runningVar.size() != d) {
    throw std::invalid_argument("batchNorm: parameter length must be " + std::to_string(d));
  }
  if (!train) {
    std::vector<double> out(T * d);
    for (std::size_t c = 0; c < d; ++c) {
      const double is = 1.0 / std::sqrt(runningVar.at(c) + kBatchNormEps);
      for (std::size_t t = 0; t < T; ++t)
        out[t * d + c] = (x.at(t, c) - runningMean.at(c)) * is * gain.at(c) + bias.at(c);
    }
    Tensor o = Tensor::fromVector({T, d}, std::move(out));
    maybeRecord("batch_norm_eval", {x, gain, bias}, o, [&](Tape& tape) {
      const bool nx = tape.tracked(x), ng = tape.tracked(gain), nb = tape.tracked(bias);
      Tensor rm = runningMean, rv = runningVar;
      return [x, gain, bias, o, rm, rv, T, d, nx, ng, nb]() {
        const auto* og = outGrad(o);
        if (!og) return;
        Tensor xm = x, gm = gain, bm = bias;
        for (std::size_t c = 0; c < d; ++c) {
          const double is = 1.0 / std::sqrt(rv.at(c) + kBatchNormEps);
          for (std::size_t t = 0; t < T; ++t) {
            const double g = (*og)[t * d + c];
            if (nx) accumGrad(xm.data(), t * d + c, g * gain.at(c) * is);
            if (ng) accumGrad(gm.data(), c, g * (x.at(t, c) - rm.at(c)) * is);
            if (nb) accumGrad(bm.data(), c, g);
          }
        }
      };
    });
    return o;
  }

  std::vector<double> mu(d, 0.0), var(d, 0.0), out(T * d), xhat(T * d), invstd(d);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t t = 0; t < T; ++t) mu[c] += x.at(t, c);
    mu[c] /= static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) {
      const double z = x.at(t, c) - mu[c];
      var[c] += z * z;
    }
    var[c] /= static_cast<double>(T);
    invstd[c] = 1.0 / std::sqrt(var[c] + kBatchNormEps);
    for (std::size_t t = 0; t < T; ++t) {
      const double h = (x.at(t, c) - mu[c]) * invstd[c];
      xhat[t * d + c] = h;
      out[t * d + c] = h * gain.at(c) + bias.at(c);
    }
    runningMean.mut(c) = (1.0 - momentum) * runningMean.at(c) + momentum * mu[c];
    runningVar.mut(c) = (1.0 - momentum) * runningVar.at(c) + momentum * var[c];
  }
  Tensor o = Tensor::fromVector({T, d}, std::move(out));
  maybeRecord("batch_norm", {x, gain, bias}, o, [&](Tape& tape) {
    const bool nx = tape.tracked(x), ng = tape.tracked(gain), nb = tape.tracked(bias);
    return [x, gain, bias, o, xh = std::move(xhat), is = std::move(invstd), T, d, nx, ng,
            nb]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x, gm = gain, bm = bias;
      const double invT = 1.0 / static_cast<double>(T);
      for (std::size_t c = 0; c < d; ++c) {
        double sumDh = 0.0, sumDhXh = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
          const double dh = (*og)[t * d + c] * gain.at(c);
          sumDh += dh;
          sumDhXh += dh * xh[t * d + c];
        }
        for (std::size_t t = 0; t < T; ++t) {
          const double g = (*og)[t * d + c];
          if (ng) accumGrad(gm.data(), c, g * xh[t * d + c]);
          if (nb) accumGrad(bm.data(), c, g);
          if (nx) {
            const double dh = g * gain.at(c);
            accumGrad(xm.data(), t * d + c,
                      is[c] * (dh - invT * sumDh - invT * xh[t * d + c] * sumDhXh));
          }
        }
      }
    };
  });
  return o;
}

Tensor maskScale(const Tensor& x, const Tensor& mask, double factor) {
  checkSameShape(x, mask, "maskScale");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * mask.at(i) * factor;
  Tensor o = Tensor::fromVector(x.shape(), std::move(out));
  maybeRecord("mask_scale", {x}, o, [&](Tape&) {
    return [x, mask, o, factor]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x;
      for (std::size_t i = 0; i < og->size(); ++i)
        accumGrad(xm.data(), i, (*og)[i] * mask.at(i) * factor);
    };
  });
  return o;
}

Tensor dropout(const Tensor& x, double p, bool train, Rng* rng, Tensor* maskOut) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!train || p == 0.0) {
    if (maskOut) *maskOut = Tensor();
    return x;
  }
  if (!rng) throw std::invalid_argument("dropout: train mode needs an rng");
  Tensor mask = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) mask.mut(i) = rng->uniform() < p ? 0.0 : 1.0;
  if (maskOut) *maskOut = mask;
  return maskScale(x, mask, 1.0 / (1.0 - p));
}

Tensor depthwiseConv1d(const Tensor& x, const Tensor& kernel, int dilation) {
  check2d(x, "depthwiseConv1d");
  check2d(kernel, "depthwiseConv1d");
  const std::size_t T = x.rows(), d = x.cols(), k = kernel.rows();
  if (kernel.cols() != d) {
    throw std::invalid_argument("depthwiseConv1d: kernel channels " +
                                shapeToString(kernel.shape()) + " do not match input " +
                                shapeToString(x.shape()));
  }
  if (k % 2 == 0) throw std::invalid_argument("depthwiseConv1d: kernel length must be odd");
  if (dilation < 1) throw std::invalid_argument("depthwiseConv1d: dilation must be >= 1");
  const long long h = static_cast<long long>(k - 1) / 2;
  std::vector<double> out(T * d, 0.0);
  for (long long t = 0; t < static_cast<long long>(T); ++t) {
    for (long long a = 0; a < static_cast<long long>(k); ++a) {
      const long long src = t + (a - h) * dilation;
      if (src < 0 || src >= static_cast<long long>(T)) continue;  // zero padding
      for (std::size_t c = 0; c < d; ++c)
        out[t * d + c] += x.at(static_cast<std::size_t>(src), c) *
                          kernel.at(static_cast<std::size_t>(a), c);
    }
  }
  Tensor o = Tensor::fromVector({T, d}, std::move(out));
  maybeRecord("depthwise_conv1d", {x, kernel}, o, [&](Tape& tape) {
    const bool nx = tape.tracked(x), nk = tape.tracked(kernel);
    return [x, kernel, o, T, d, k, h, dilation, nx, nk]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor xm = x, km = kernel;
      for (long long t = 0; t < static_cast<long long>(T); ++t) {
        for (long long a = 0; a < static_cast<long long>(k); ++a) {
          const long long src = t + (a - h) * dilation;
          if (src < 0 || src >= static_cast<long long>(T)) continue;
          for (std::size_t c = 0; c < d; ++c) {
            const double g = (*og)[t * d + c];
            if (nx)
              accumGrad(xm.data(), static_cast<std::size_t>(src) * d + c,
                        g * kernel.at(static_cast<std::size_t>(a), c));
            if (nk)
              accumGrad(km.data(), static_cast<std::size_t>(a) * d + c,
                        g * x.at(static_cast<std::size_t>(src), c));
          }
        }
      }
    };
  });
  return o;
}

Tensor addRelativeBias(const Tensor& scores, const Tensor& rel) {
  check2d(scores, "addRelativeBias");
  const std::size_t T = scores.rows();
  if (scores.cols() != T || rel.size() != 2 * T - 1) {
    throw std::invalid_argument("addRelativeBias: scores must be [TxT] and rel of size 2T-1");
  }
  std::vector<double> out(T * T);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < T; ++j) out[i * T + j] = scores.at(i, j) + rel.at(i - j + T - 1);
  Tensor o = Tensor::fromVector({T, T}, std::move(out));
  maybeRecord("add_relative_bias", {scores, rel}, o, [&](Tape& tape) {
    const bool ns = tape.tracked(scores), nr = tape.tracked(rel);
    return [scores, rel, o, T, ns, nr]() {
      const auto* og = outGrad(o);
      if (!og) return;
      Tensor sm = scores, rm = rel;
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < T; ++j) {
          const double g = (*og)[i * T + j];
          if (ns) accumGrad(sm.data(), i * T + j, g);
          if (nr) accumGrad(rm.data(), i - j + T - 1, g);
        }
    };
  });
  return o;
}

}  // namespace confsearch
