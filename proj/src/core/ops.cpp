// SPDX-License-Identifier: Apache-2.0
#include "emofuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>

#include "emofuse/error.hpp"

namespace emofuse::ad {

namespace {

Tape &tapeOf(Var v) {
  if (!v.valid())
    throw ContractError("operation on an unbound variable");
  return *v.tape();
}

Tape &commonTape(Var a, Var b) {
  if (a.tape() != b.tape() || !a.valid())
    throw ContractError("operands live on different tapes");
  return *a.tape();
}

// Splits `shape` around `axis` into (outer, dim, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, dim = 1, inner = 1;
};

AxisSplit splitAt(const Shape &shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i)
    s.outer *= shape[i];
  s.dim = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  return s;
}

/// out[i][:] += sum over p, in order, of a(i, p) * b[p][:], where a(i, p) is
/// a[i * rowStride + p * colStride] and b, out are row-major with n columns.
/// Four p terms share one pass over the output row; the left-to-right sum
/// keeps every entry's rounding identical to the one-term-at-a-time loop.
void accumulateRowProducts(const double *a, std::size_t rowStride,
                           std::size_t colStride, const double *b, double *out,
                           std::size_t m, std::size_t k, std::size_t n) {
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    const double *b0 = b + p * n, *b1 = b0 + n, *b2 = b1 + n, *b3 = b2 + n;
    std::size_t i = 0;
    // Row pairs share each load of the four b rows.
    for (; i + 2 <= m; i += 2) {
      const double *ai = a + i * rowStride + p * colStride;
      const double *ei = ai + rowStride;
      const double a0 = ai[0], a1 = ai[colStride], a2 = ai[2 * colStride],
                   a3 = ai[3 * colStride];
      const double e0 = ei[0], e1 = ei[colStride], e2 = ei[2 * colStride],
                   e3 = ei[3 * colStride];
      double *row = out + i * n, *next = row + n;
      for (std::size_t j = 0; j < n; ++j) {
        const double x0 = b0[j], x1 = b1[j], x2 = b2[j], x3 = b3[j];
        row[j] = row[j] + a0 * x0 + a1 * x1 + a2 * x2 + a3 * x3;
        next[j] = next[j] + e0 * x0 + e1 * x1 + e2 * x2 + e3 * x3;
      }
    }
    for (; i < m; ++i) {
      const double *ai = a + i * rowStride + p * colStride;
      const double a0 = ai[0], a1 = ai[colStride], a2 = ai[2 * colStride],
                   a3 = ai[3 * colStride];
      double *row = out + i * n;
      for (std::size_t j = 0; j < n; ++j)
        row[j] = row[j] + a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
  }
  for (; p < k; ++p) {
    const double *bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double aip = a[i * rowStride + p * colStride];
      double *row = out + i * n;
      for (std::size_t j = 0; j < n; ++j)
        row[j] += aip * bp[j];
    }
  }
}

double sigmoidScalar(double x) {
  if (x >= 0)
    return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

} // namespace

Var matmul(Var a, Var b) {
  Tape &tape = commonTape(a, b);
  const Tensor &A = a.value();
  const Tensor &B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
    throw ShapeError("matmul shape mismatch: " + shapeToString(A.shape()) +
                     " . " + shapeToString(B.shape()));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor C(Shape{m, n});
  const double *pa = A.raw();
  const double *pb = B.raw();
  double *pc = C.raw();
  accumulateRowProducts(pa, k, 1, pb, pc, m, k, n);
  return tape.record(
      "matmul", std::move(C), {a, b}, [m, k, n](const BackwardContext &ctx) {
        const double *dc = ctx.outputGrad.raw();
        const double *pa = ctx.inputs[0]->raw();
        const double *pb = ctx.inputs[1]->raw();
        if (Tensor *ga = ctx.inputGrads[0]) {
          double *da = ga->raw();
          for (std::size_t i = 0; i < m; ++i) {
            const double *dcrow = dc + i * n;
            std::size_t p = 0;
            // Four independent dot products hide add latency; each still
            // sums over j in order.
            for (; p + 4 <= k; p += 4) {
              const double *b0 = pb + p * n, *b1 = b0 + n, *b2 = b1 + n, *b3 = b2 + n;
              double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
              for (std::size_t j = 0; j < n; ++j) {
                acc0 += dcrow[j] * b0[j];
                acc1 += dcrow[j] * b1[j];
                acc2 += dcrow[j] * b2[j];
                acc3 += dcrow[j] * b3[j];
              }
              da[i * k + p] += acc0;
              da[i * k + p + 1] += acc1;
              da[i * k + p + 2] += acc2;
              da[i * k + p + 3] += acc3;
            }
            for (; p < k; ++p) {
              const double *brow = pb + p * n;
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j)
                acc += dcrow[j] * brow[j];
              da[i * k + p] += acc;
            }
          }
        }
        if (Tensor *gb = ctx.inputGrads[1]) {
          // dB = A^T dC: row p of dB sums a[i][p] * dC row i over i in order.
          accumulateRowProducts(pa, 1, k, dc, gb->raw(), k, m, n);
        }
      });
}

Var apply(Unary fn, Var x) {
  Tape &tape = tapeOf(x);
  const Tensor &X = x.value();
  Tensor Y(X.shape());
  auto xs = X.values();
  auto ys = Y.values();
  const char *name = "relu";
  switch (fn) {
  case Unary::kRelu:
    for (std::size_t i = 0; i < xs.size(); ++i)
      ys[i] = xs[i] > 0.0 ? xs[i] : 0.0;
    break;
  case Unary::kSigmoid:
    name = "sigmoid";
    for (std::size_t i = 0; i < xs.size(); ++i)
      ys[i] = sigmoidScalar(xs[i]);
    break;
  case Unary::kTanh:
    name = "tanh";
    for (std::size_t i = 0; i < xs.size(); ++i)
      ys[i] = std::tanh(xs[i]);
    break;
  }
  return tape.record(name, std::move(Y), {x}, [fn](const BackwardContext &ctx) {
    Tensor *gx = ctx.inputGrads[0];
    auto dy = ctx.outputGrad.values();
    auto y = ctx.output.values();
    auto in = ctx.inputs[0]->values();
    auto dx = gx->values();
    switch (fn) {
    case Unary::kRelu:
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (in[i] > 0.0)
          dx[i] += dy[i];
      break;
    case Unary::kSigmoid:
      for (std::size_t i = 0; i < dx.size(); ++i)
        dx[i] += dy[i] * y[i] * (1.0 - y[i]);
      break;
    case Unary::kTanh:
      for (std::size_t i = 0; i < dx.size(); ++i)
        dx[i] += dy[i] * (1.0 - y[i] * y[i]);
      break;
    }
  });
}

Var relu(Var x) { return apply(Unary::kRelu, x); }
Var sigmoid(Var x) { return apply(Unary::kSigmoid, x); }
Var tanh(Var x) { return apply(Unary::kTanh, x); }

Var apply(Binary fn, Var a, Var b) {
  Tape &tape = commonTape(a, b);
  const Tensor &A = a.value();
  const Tensor &B = b.value();
  // broadcast: 0 = same shape, 1 = b is a bias over a, 2 = a is a bias over b
  int mode = -1;
  if (A.shape() == B.shape())
    mode = 0;
  else if (B.rank() == 1 && A.rank() >= 1 && A.shape().back() == B.dim(0))
    mode = 1;
  else if (A.rank() == 1 && B.rank() >= 1 && B.shape().back() == A.dim(0))
    mode = 2;
  if (mode < 0)
    throw ShapeError("cannot broadcast " + shapeToString(A.shape()) + " with " +
                     shapeToString(B.shape()));
  Tensor Y(mode == 2 ? B.shape() : A.shape());
  const std::size_t n = Y.numel();
  const std::size_t width = mode == 0 ? n : (mode == 1 ? B.numel() : A.numel());
  const double *pa = A.raw();
  const double *pb = B.raw();
  double *py = Y.raw();
  auto ia = [mode, width](std::size_t i) { return mode == 2 ? i % width : i; };
  auto ib = [mode, width](std::size_t i) { return mode == 1 ? i % width : i; };
  const char *name = "add";
  switch (fn) {
  case Binary::kAdd:
    for (std::size_t i = 0; i < n; ++i)
      py[i] = pa[ia(i)] + pb[ib(i)];
    break;
  case Binary::kSub:
    name = "sub";
    for (std::size_t i = 0; i < n; ++i)
      py[i] = pa[ia(i)] - pb[ib(i)];
    break;
  case Binary::kMul:
    name = "mul";
    for (std::size_t i = 0; i < n; ++i)
      py[i] = pa[ia(i)] * pb[ib(i)];
    break;
  }
  return tape.record(
      name, std::move(Y), {a, b},
      [fn, n, ia, ib](const BackwardContext &ctx) {
        const double *dy = ctx.outputGrad.raw();
        const double *pa = ctx.inputs[0]->raw();
        const double *pb = ctx.inputs[1]->raw();
        Tensor *ga = ctx.inputGrads[0];
        Tensor *gb = ctx.inputGrads[1];
        double *da = ga ? ga->raw() : nullptr;
        double *db = gb ? gb->raw() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          const double g = dy[i];
          switch (fn) {
          case Binary::kAdd:
            if (da)
              da[ia(i)] += g;
            if (db)
              db[ib(i)] += g;
            break;
          case Binary::kSub:
            if (da)
              da[ia(i)] += g;
            if (db)
              db[ib(i)] -= g;
            break;
          case Binary::kMul:
            if (da)
              da[ia(i)] += g * pb[ib(i)];
            if (db)
              db[ib(i)] += g * pa[ia(i)];
            break;
          }
        }
      });
}

Var add(Var a, Var b) { return apply(Binary::kAdd, a, b); }
Var sub(Var a, Var b) { return apply(Binary::kSub, a, b); }
Var mul(Var a, Var b) { return apply(Binary::kMul, a, b); }

Var affine(Var x, double alpha, double beta) {
  Tape &tape = tapeOf(x);
  Tensor Y(x.shape());
  auto xs = x.value().values();
  auto ys = Y.values();
  for (std::size_t i = 0; i < xs.size(); ++i)
    ys[i] = alpha * xs[i] + beta;
  return tape.record("affine", std::move(Y), {x},
                     [alpha](const BackwardContext &ctx) {
                       auto dy = ctx.outputGrad.values();
                       auto dx = ctx.inputGrads[0]->values();
                       for (std::size_t i = 0; i < dx.size(); ++i)
                         dx[i] += alpha * dy[i];
                     });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty())
    throw ContractError("concat of zero parts");
  Tape &tape = tapeOf(parts[0]);
  const Shape &first = parts[0].shape();
  if (axis >= first.size())
    throw ShapeError("concat axis " + std::to_string(axis) +
                     " out of range for " + shapeToString(first));
  Shape out = first;
  out[axis] = 0;
  std::vector<std::size_t> widths;
  for (const Var &p : parts) {
    if (p.tape() != &tape)
      throw ContractError("concat parts live on different tapes");
    const Shape &s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      ok = i == axis || s[i] == first[i];
    if (!ok)
      throw ShapeError("concat side dimensions disagree: " +
                       shapeToString(first) + " vs " + shapeToString(s));
    out[axis] += s[axis];
  }
  const AxisSplit split = splitAt(out, axis);
  for (const Var &p : parts)
    widths.push_back(p.shape()[axis] * split.inner);
  const std::size_t rowWidth = split.dim * split.inner;
  Tensor Y(out);
  double *py = Y.raw();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double *src = parts[k].value().raw();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(src + o * widths[k], widths[k], py + o * rowWidth + offset);
    offset += widths[k];
  }
  const std::size_t outer = split.outer;
  return tape.record(
      "concat", std::move(Y), parts,
      [widths, outer, rowWidth](const BackwardContext &ctx) {
        const double *dy = ctx.outputGrad.raw();
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (Tensor *g = ctx.inputGrads[k]) {
            double *dst = g->raw();
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < widths[k]; ++i)
                dst[o * widths[k] + i] += dy[o * rowWidth + offset + i];
          }
          offset += widths[k];
        }
      });
}

Var reshape(Var x, Shape shape) {
  Tape &tape = tapeOf(x);
  Tensor Y = x.value().reshaped(std::move(shape));
  return tape.record("reshape", std::move(Y), {x},
                     [](const BackwardContext &ctx) {
                       auto dy = ctx.outputGrad.values();
                       auto dx = ctx.inputGrads[0]->values();
                       for (std::size_t i = 0; i < dx.size(); ++i)
                         dx[i] += dy[i];
                     });
}

Var take(Var x, std::size_t axis, std::size_t index) {
  Tape &tape = tapeOf(x);
  const Shape &s = x.shape();
  if (axis >= s.size() || index >= s[axis])
    throw ShapeError("take index " + std::to_string(index) + " on axis " +
                     std::to_string(axis) + " out of range for " +
                     shapeToString(s));
  const AxisSplit split = splitAt(s, axis);
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis)
      out.push_back(s[i]);
  Tensor Y(out);
  const double *src = x.value().raw();
  double *dst = Y.raw();
  for (std::size_t o = 0; o < split.outer; ++o)
    std::copy_n(src + (o * split.dim + index) * split.inner, split.inner,
                dst + o * split.inner);
  return tape.record(
      "take", std::move(Y), {x}, [split, index](const BackwardContext &ctx) {
        const double *dy = ctx.outputGrad.raw();
        double *dx = ctx.inputGrads[0]->raw();
        for (std::size_t o = 0; o < split.outer; ++o)
          for (std::size_t i = 0; i < split.inner; ++i)
            dx[(o * split.dim + index) * split.inner + i] +=
                dy[o * split.inner + i];
      });
}

Var stack(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty())
    throw ContractError("stack of zero parts");
  const Shape &first = parts[0].shape();
  if (axis > first.size())
    throw ShapeError("stack axis out of range for " + shapeToString(first));
  Shape unit = first;
  unit.insert(unit.begin() + static_cast<std::ptrdiff_t>(axis), 1);
  std::vector<Var> lifted;
  lifted.reserve(parts.size());
  for (const Var &p : parts) {
    if (p.shape() != first)
      throw ShapeError("stack parts disagree: " + shapeToString(first) +
                       " vs " + shapeToString(p.shape()));
    lifted.push_back(reshape(p, unit));
  }
  return concat(lifted, axis);
}

Var sum(Var x) {
  Tape &tape = tapeOf(x);
  double s = 0.0;
  for (double v : x.value().values())
    s += v;
  return tape.record("sum", Tensor::scalar(s), {x},
                     [](const BackwardContext &ctx) {
                       const double g = ctx.outputGrad[0];
                       for (double &d : ctx.inputGrads[0]->values())
                         d += g;
                     });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().numel());
  if (n == 0)
    throw ShapeError("mean of an empty tensor");
  return affine(sum(x), 1.0 / n, 0.0);
}

Var softmax(Var logits) {
  Tape &tape = tapeOf(logits);
  const Tensor &X = logits.value();
  if (X.rank() == 0 || X.shape().back() == 0)
    throw ShapeError("softmax needs a non-empty last axis");
  const std::size_t c = X.shape().back();
  const std::size_t rows = X.numel() / c;
  Tensor Y(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double *x = X.raw() + r * c;
    double *y = Y.raw() + r * c;
    const double mx = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < c; ++j)
      y[j] /= z;
  }
  return tape.record("softmax", std::move(Y), {logits},
                     [rows, c](const BackwardContext &ctx) {
                       const double *y = ctx.output.raw();
                       const double *dy = ctx.outputGrad.raw();
                       double *dx = ctx.inputGrads[0]->raw();
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j)
                           dot += dy[r * c + j] * y[r * c + j];
                         for (std::size_t j = 0; j < c; ++j)
                           dx[r * c + j] += y[r * c + j] * (dy[r * c + j] - dot);
                       }
                     });
}

Var crossEntropy(Var logits, const Tensor &onehot) {
  Tape &tape = tapeOf(logits);
  const Tensor &X = logits.value();
  if (X.rank() != 2 || onehot.shape() != X.shape())
    throw ShapeError("cross entropy expects matching [B x C] logits and "
                     "targets, got " +
                     shapeToString(X.shape()) + " and " +
                     shapeToString(onehot.shape()));
  const std::size_t b = X.dim(0), c = X.dim(1);
  if (b == 0)
    throw ShapeError("cross entropy over an empty batch");
  std::vector<std::size_t> target(b);
  for (std::size_t r = 0; r < b; ++r) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = onehot.at(r, j);
      if (v == 1.0) {
        ++ones;
        target[r] = j;
      } else if (v != 0.0) {
        ones = 2;
      }
    }
    if (ones != 1)
      throw ValidationError("one-hot row " + std::to_string(r) +
                            " does not contain exactly one 1");
  }
  auto probs = std::make_shared<std::vector<double>>(b * c);
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const double *x = X.raw() + r * c;
    const double mx = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      z += std::exp(x[j] - mx);
    const double logZ = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j)
      (*probs)[r * c + j] = std::exp(x[j] - logZ);
    loss += logZ - x[target[r]];
  }
  loss /= static_cast<double>(b);
  return tape.record(
      "cross_entropy", Tensor::scalar(loss), {logits},
      [probs, target, b, c](const BackwardContext &ctx) {
        const double g = ctx.outputGrad[0] / static_cast<double>(b);
        double *dx = ctx.inputGrads[0]->raw();
        for (std::size_t r = 0; r < b; ++r)
          for (std::size_t j = 0; j < c; ++j)
            dx[r * c + j] +=
                g * ((*probs)[r * c + j] - (j == target[r] ? 1.0 : 0.0));
      });
}

Var crossEntropy(Var logits, std::span<const int> labels) {
  const Shape &s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size())
    throw ShapeError("cross entropy: " + std::to_string(labels.size()) +
                     " labels for logits " + shapeToString(s));
  Tensor onehot(s);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= s[1])
      throw ValidationError("label " + std::to_string(labels[r]) +
                            " out of range");
    onehot.at(r, static_cast<std::size_t>(labels[r])) = 1.0;
  }
  return crossEntropy(logits, onehot);
}

Var gatherRows(Var x, std::span<const std::size_t> rows) {
  Tape &tape = tapeOf(x);
  const Tensor &X = x.value();
  if (X.rank() != 2)
    throw ShapeError("gatherRows expects a rank-2 tensor, got " +
                     shapeToString(X.shape()));
  const std::size_t n = X.dim(0), d = X.dim(1);
  Tensor Y(Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n)
      throw ShapeError("gatherRows index " + std::to_string(rows[i]) +
                       " out of range for " + shapeToString(X.shape()));
    std::copy_n(X.raw() + rows[i] * d, d, Y.raw() + i * d);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return tape.record("gather_rows", std::move(Y), {x},
                     [idx, d](const BackwardContext &ctx) {
                       const double *dy = ctx.outputGrad.raw();
                       double *dx = ctx.inputGrads[0]->raw();
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < d; ++j)
                           dx[idx[i] * d + j] += dy[i * d + j];
                     });
}

Var selectRows(const std::vector<bool> &takeA, Var a, Var b) {
  Tape &tape = commonTape(a, b);
  const Tensor &A = a.value();
  const Tensor &B = b.value();
  if (A.rank() != 2 || A.shape() != B.shape() || takeA.size() != A.dim(0))
    throw ShapeError("selectRows shape mismatch: " + shapeToString(A.shape()) +
                     " vs " + shapeToString(B.shape()));
  const std::size_t d = A.dim(1);
  Tensor Y(A.shape());
  for (std::size_t r = 0; r < takeA.size(); ++r)
    std::copy_n((takeA[r] ? A : B).raw() + r * d, d, Y.raw() + r * d);
  return tape.record("select_rows", std::move(Y), {a, b},
                     [takeA, d](const BackwardContext &ctx) {
                       const double *dy = ctx.outputGrad.raw();
                       for (std::size_t r = 0; r < takeA.size(); ++r) {
                         Tensor *g = ctx.inputGrads[takeA[r] ? 0 : 1];
                         if (!g)
                           continue;
                         double *dst = g->raw() + r * d;
                         for (std::size_t j = 0; j < d; ++j)
                           dst[j] += dy[r * d + j];
                       }
                     });
}

Var reduceTime(Var x, std::span<const std::size_t> lengths, Reduction r) {
  Tape &tape = tapeOf(x);
  const Tensor &X = x.value();
  if (X.rank() != 3 || lengths.size() != X.dim(0))
    throw ShapeError("reduceTime expects [B x T x C] with B lengths, got " +
                     shapeToString(X.shape()) + " and " +
                     std::to_string(lengths.size()) + " lengths");
  const std::size_t B = X.dim(0), T = X.dim(1), C = X.dim(2);
  for (auto len : lengths)
    if (len < 1 || len > T)
      throw ContractError("sequence length " + std::to_string(len) +
                          " outside [1, " + std::to_string(T) + "]");
  Tensor Y(Shape{B, C});
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  if (r == Reduction::kMean) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        // Offsets from the first frame keep a constant column exact.
        const double x0 = X.at(b, 0, c);
        double s = 0.0;
        for (std::size_t t = 1; t < lens[b]; ++t)
          s += X.at(b, t, c) - x0;
        Y.at(b, c) = x0 + s / static_cast<double>(lens[b]);
      }
    return tape.record("reduce_mean_time", std::move(Y), {x},
                       [lens, T, C](const BackwardContext &ctx) {
                         Tensor &dx = *ctx.inputGrads[0];
                         for (std::size_t b = 0; b < lens.size(); ++b) {
                           const double inv = 1.0 / static_cast<double>(lens[b]);
                           for (std::size_t t = 0; t < lens[b]; ++t)
                             for (std::size_t c = 0; c < C; ++c)
                               dx.at(b, t, c) += ctx.outputGrad.at(b, c) * inv;
                         }
                         (void)T;
                       });
  }
  // Median: remember which time indices were picked (one or two per cell).
  auto picks = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>(
      B * C);
  std::vector<std::pair<double, std::size_t>> column;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      column.clear();
      for (std::size_t t = 0; t < lens[b]; ++t)
        column.emplace_back(X.at(b, t, c), t);
      std::sort(column.begin(), column.end());
      const std::size_t n = column.size();
      std::pair<std::size_t, std::size_t> pick;
      if (n % 2 == 1) {
        pick = {column[n / 2].second, column[n / 2].second};
        Y.at(b, c) = column[n / 2].first;
      } else {
        pick = {column[n / 2 - 1].second, column[n / 2].second};
        Y.at(b, c) = 0.5 * (column[n / 2 - 1].first + column[n / 2].first);
      }
      (*picks)[b * C + c] = pick;
    }
  return tape.record("reduce_median_time", std::move(Y), {x},
                     [picks, B, C](const BackwardContext &ctx) {
                       Tensor &dx = *ctx.inputGrads[0];
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t c = 0; c < C; ++c) {
                           const auto [lo, hi] = (*picks)[b * C + c];
                           const double g = ctx.outputGrad.at(b, c);
                           if (lo == hi) {
                             dx.at(b, lo, c) += g;
                           } else {
                             dx.at(b, lo, c) += 0.5 * g;
                             dx.at(b, hi, c) += 0.5 * g;
                           }
                         }
                     });
}

Var dropout(Var x, double rate, bool train, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ContractError("dropout rate must lie in [0, 1), got " +
                        std::to_string(rate));
  if (!train || rate == 0.0)
    return x;
  Tape &tape = tapeOf(x);
  tape.markStochastic();
  const std::size_t n = x.value().numel();
  auto mask = std::make_shared<std::vector<double>>(n);
  std::mt19937_64 rng(seed);
  const double keepScale = 1.0 / (1.0 - rate);
  for (auto &m : *mask) {
    // 53-bit uniform in [0, 1), independent of the standard library's
    // distribution implementations
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u >= rate ? keepScale : 0.0;
  }
  Tensor Y(x.shape());
  auto xs = x.value().values();
  for (std::size_t i = 0; i < n; ++i)
    Y[i] = xs[i] * (*mask)[i];
  return tape.record("dropout", std::move(Y), {x},
                     [mask](const BackwardContext &ctx) {
                       auto dy = ctx.outputGrad.values();
                       auto dx = ctx.inputGrads[0]->values();
                       for (std::size_t i = 0; i < dx.size(); ++i)
                         dx[i] += dy[i] * (*mask)[i];
                     });
}

Var batchNormTrain(Var x, Var gamma, Var beta, double epsilon,
                   Tensor *batchMean, Tensor *batchVar) {
  Tape &tape = tapeOf(x);
  const Tensor &X = x.value();
  if (X.rank() != 2 || gamma.shape() != Shape{X.dim(1)} ||
      beta.shape() != Shape{X.dim(1)})
    throw ShapeError("batch norm expects [B x F] input with [F] gamma/beta, "
                     "got " +
                     shapeToString(X.shape()));
  const std::size_t B = X.dim(0), F = X.dim(1);
  if (B < 2)
    throw ContractError("batch norm in train mode needs a batch of at least 2");
  if (!(epsilon > 0.0))
    throw ContractError("batch norm epsilon must be positive");
  Tensor mu(Shape{F}), var(Shape{F});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f)
      mu[f] += X.at(b, f);
  for (std::size_t f = 0; f < F; ++f)
    mu[f] /= static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) {
      const double d = X.at(b, f) - mu[f];
      var[f] += d * d;
    }
  for (std::size_t f = 0; f < F; ++f)
    var[f] /= static_cast<double>(B);
  auto invStd = std::make_shared<std::vector<double>>(F);
  auto xhat = std::make_shared<std::vector<double>>(B * F);
  Tensor Y(X.shape());
  const Tensor &G = gamma.value();
  const Tensor &Bt = beta.value();
  for (std::size_t f = 0; f < F; ++f)
    (*invStd)[f] = 1.0 / std::sqrt(var[f] + epsilon);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) {
      const double h = (X.at(b, f) - mu[f]) * (*invStd)[f];
      (*xhat)[b * F + f] = h;
      Y.at(b, f) = G[f] * h + Bt[f];
    }
  if (batchMean)
    *batchMean = mu;
  if (batchVar)
    *batchVar = var;
  return tape.record(
      "batch_norm", std::move(Y), {x, gamma, beta},
      [invStd, xhat, B, F](const BackwardContext &ctx) {
        const Tensor &dy = ctx.outputGrad;
        const Tensor &G = *ctx.inputs[1];
        std::vector<double> sumD(F, 0.0), sumDH(F, 0.0);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t f = 0; f < F; ++f) {
            const double g = dy.at(b, f);
            sumD[f] += g;
            sumDH[f] += g * (*xhat)[b * F + f];
          }
        if (Tensor *gg = ctx.inputGrads[1])
          for (std::size_t f = 0; f < F; ++f)
            (*gg)[f] += sumDH[f];
        if (Tensor *gb = ctx.inputGrads[2])
          for (std::size_t f = 0; f < F; ++f)
            (*gb)[f] += sumD[f];
        if (Tensor *gx = ctx.inputGrads[0]) {
          const double n = static_cast<double>(B);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t f = 0; f < F; ++f) {
              const double h = (*xhat)[b * F + f];
              gx->at(b, f) += G[f] * (*invStd)[f] / n *
                              (n * dy.at(b, f) - sumD[f] - h * sumDH[f]);
            }
        }
      });
}

} // namespace emofuse::ad
