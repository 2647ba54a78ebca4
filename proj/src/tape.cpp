#include "milkit/tape.hpp"

#include <algorithm>
#include <cmath>

namespace milkit {

namespace {

void check_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                                      Tensor::shape_str(t.shape()));
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Value Tape::push(Tensor value, std::function<void(Tape&, Node&)> bw) {
  if (!value.all_finite())
    throw Error("non-finite value produced on tape at node " + std::to_string(nodes_.size()));
  Node n;
  n.value = std::move(value);
  n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_of(Value v) {
  Node& n = nodes_[v.id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Value v, const Tensor& g) { grad_of(v).add_scaled(g, 1.0); }

void Tape::accumulate_at(int id, std::size_t flat_index, double g) {
  grad_of(Value{id}).at(flat_index) += g;
}

Value Tape::constant(Tensor v) { return push(std::move(v)); }

Value Tape::param(ParamStore& store, const std::string& name) {
  Value v = push(store.value(name));
  nodes_[v.id].sink = &store.grad(name);
  return v;
}

Value Tape::matmul(Value a, Value b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  Tensor c = milkit::matmul(av, bv);
  return push(std::move(c), [a, b](Tape& t, Node& n) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    const Tensor& dc = n.grad;
    const int m = av.shape()[0], k = av.shape()[1], nn = bv.shape()[1];
    Tensor& da = t.grad_of(a);
    Tensor& db = t.grad_of(b);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < nn; ++j) {
        const double g = dc.at(i, j);
        if (g == 0.0) continue;
        for (int p = 0; p < k; ++p) {
          da.at(i, p) += g * bv.at(p, j);
          db.at(p, j) += g * av.at(i, p);
        }
      }
  });
}

Value Tape::matmul_nt(Value a, Value b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_matrix(av, "matmul_nt");
  check_matrix(bv, "matmul_nt");
  if (av.shape()[1] != bv.shape()[1])
    throw ShapeError("matmul_nt shape mismatch: " + Tensor::shape_str(av.shape()) + " * " +
                     Tensor::shape_str(bv.shape()) + "^T");
  const int m = av.shape()[0], k = av.shape()[1], nn = bv.shape()[0];
  Tensor c({m, nn});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < nn; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += av.at(i, p) * bv.at(j, p);
      c.at(i, j) = s;
    }
  return push(std::move(c), [a, b](Tape& t, Node& n) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    const Tensor& dc = n.grad;
    const int m = av.shape()[0], k = av.shape()[1], nn = bv.shape()[0];
    Tensor& da = t.grad_of(a);
    Tensor& db = t.grad_of(b);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < nn; ++j) {
        const double g = dc.at(i, j);
        if (g == 0.0) continue;
        for (int p = 0; p < k; ++p) {
          da.at(i, p) += g * bv.at(j, p);
          db.at(j, p) += g * av.at(i, p);
        }
      }
  });
}

Value Tape::transpose(Value a) {
  const Tensor& av = val(a);
  check_matrix(av, "transpose");
  Tensor c({av.shape()[1], av.shape()[0]});
  for (int i = 0; i < av.shape()[0]; ++i)
    for (int j = 0; j < av.shape()[1]; ++j) c.at(j, i) = av.at(i, j);
  return push(std::move(c), [a](Tape& t, Node& n) {
    Tensor& da = t.grad_of(a);
    for (int i = 0; i < da.shape()[0]; ++i)
      for (int j = 0; j < da.shape()[1]; ++j) da.at(i, j) += n.grad.at(j, i);
  });
}

Value Tape::add(Value a, Value b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv))
    throw ShapeError("add shape mismatch: " + Tensor::shape_str(av.shape()) + " vs " +
                     Tensor::shape_str(bv.shape()));
  Tensor c = av;
  c.add_scaled(bv, 1.0);
  return push(std::move(c), [a, b](Tape& t, Node& n) {
    t.accumulate(a, n.grad);
    t.accumulate(b, n.grad);
  });
}

Value Tape::add_rowvec(Value a, Value b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_matrix(av, "add_rowvec");
  const int cols = av.shape()[1];
  if (static_cast<int>(bv.size()) != cols)
    throw ShapeError("add_rowvec: vector length " + std::to_string(bv.size()) +
                     " vs matrix " + Tensor::shape_str(av.shape()));
  Tensor c = av;
  for (int i = 0; i < av.shape()[0]; ++i)
    for (int j = 0; j < cols; ++j) c.at(i, j) += bv.at(static_cast<std::size_t>(j));
  return push(std::move(c), [a, b](Tape& t, Node& n) {
    t.accumulate(a, n.grad);
    Tensor& db = t.grad_of(b);
    for (int i = 0; i < n.grad.shape()[0]; ++i)
      for (int j = 0; j < n.grad.shape()[1]; ++j) db.at(static_cast<std::size_t>(j)) += n.grad.at(i, j);
  });
}

Value Tape::mul(Value a, Value b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv))
    throw ShapeError("mul shape mismatch: " + Tensor::shape_str(av.shape()) + " vs " +
                     Tensor::shape_str(bv.shape()));
  Tensor c = av;
  for (std::size_t i = 0; i < c.size(); ++i) c.at(i) *= bv.at(i);
  return push(std::move(c), [a, b](Tape& t, Node& n) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    Tensor& da = t.grad_of(a);
    Tensor& db = t.grad_of(b);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      da.at(i) += n.grad.at(i) * bv.at(i);
      db.at(i) += n.grad.at(i) * av.at(i);
    }
  });
}

Value Tape::mul_const(Value a, const Tensor& mask) {
  const Tensor& av = val(a);
  if (!av.same_shape(mask))
    throw ShapeError("mul_const shape mismatch: " + Tensor::shape_str(av.shape()) + " vs " +
                     Tensor::shape_str(mask.shape()));
  Tensor c = av;
  for (std::size_t i = 0; i < c.size(); ++i) c.at(i) *= mask.at(i);
  Tensor m = mask;
  return push(std::move(c), [a, m = std::move(m)](Tape& t, Node& n) {
    Tensor& da = t.grad_of(a);
    for (std::size_t i = 0; i < n.grad.size(); ++i) da.at(i) += n.grad.at(i) * m.at(i);
  });
}

Value Tape::mul_colvec(Value a, Value col) {
  const Tensor& av = val(a);
  const Tensor& cv = val(col);
  check_matrix(av, "mul_colvec");
  if (static_cast<int>(cv.size()) != av.shape()[0])
    throw ShapeError("mul_colvec: column length " + std::to_string(cv.size()) +
                     " vs matrix " + Tensor::shape_str(av.shape()));
  Tensor c = av;
  for (int i = 0; i < av.shape()[0]; ++i) {
    const double s = cv.at(static_cast<std::size_t>(i));
    for (int j = 0; j < av.shape()[1]; ++j) c.at(i, j) *= s;
  }
  return push(std::move(c), [a, col](Tape& t, Node& n) {
    const Tensor& av = t.val(a);
    const Tensor& cv = t.val(col);
    Tensor& da = t.grad_of(a);
    Tensor& dcol = t.grad_of(col);
    for (int i = 0; i < av.shape()[0]; ++i) {
      const double s = cv.at(static_cast<std::size_t>(i));
      double acc = 0.0;
      for (int j = 0; j < av.shape()[1]; ++j) {
        da.at(i, j) += n.grad.at(i, j) * s;
        acc += n.grad.at(i, j) * av.at(i, j);
      }
      dcol.at(static_cast<std::size_t>(i)) += acc;
    }
  });
}

Value Tape::scale(Value a, double c) {
  Tensor out = val(a);
  for (double& v : out.data()) v *= c;
  return push(std::move(out), [a, c](Tape& t, Node& n) {
    Tensor& da = t.grad_of(a);
    da.add_scaled(n.grad, c);
  });
}

Value Tape::mul_scalar_node(Value a, Value s) {
  const Tensor& sv = val(s);
  if (sv.size() != 1) throw ShapeError("mul_scalar_node: scalar operand has size " +
                                       std::to_string(sv.size()));
  const double c = sv.at(std::size_t{0});
  Tensor y = val(a);
  for (double& v : y.data()) v *= c;
  return push(std::move(y), [a, s](Tape& t, Node& n) {
    const Tensor& av = t.val(a);
    const double c = t.val(s).at(std::size_t{0});
    Tensor& da = t.grad_of(a);
    Tensor& ds = t.grad_of(s);
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
      da.at(i) += n.grad.at(i) * c;
      acc += n.grad.at(i) * av.at(i);
    }
    ds.at(std::size_t{0}) += acc;
  });
}

Value Tape::row_softmax(Value a, const std::vector<double>* key_offsets) {
  const Tensor& av = val(a);
  const int rows = av.rank() == 2 ? av.shape()[0] : 1;
  const int cols = av.rank() == 2 ? av.shape()[1] : static_cast<int>(av.size());
  if (key_offsets && static_cast<int>(key_offsets->size()) != cols)
    throw ShapeError("row_softmax: offset length mismatch");
  Tensor y = av;
  for (int i = 0; i < rows; ++i) {
    double* r = &y.data()[static_cast<std::size_t>(i) * cols];
    if (key_offsets)
      for (int j = 0; j < cols; ++j) r[j] += (*key_offsets)[j];
    double mx = r[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    for (int j = 0; j < cols; ++j) r[j] /= sum;
  }
  return push(std::move(y), [a, rows, cols](Tape& t, Node& n) {
    const Tensor& y = n.value;
    Tensor& da = t.grad_of(a);
    for (int i = 0; i < rows; ++i) {
      const double* yr = &y.data()[static_cast<std::size_t>(i) * cols];
      const double* gr = &n.grad.data()[static_cast<std::size_t>(i) * cols];
      double dot = 0.0;
      for (int j = 0; j < cols; ++j) dot += yr[j] * gr[j];
      double* dr = &da.data()[static_cast<std::size_t>(i) * cols];
      for (int j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Value Tape::layer_norm(Value x, Value gamma, Value beta, double eps) {
  const Tensor& xv = val(x);
  check_matrix(xv, "layer_norm");
  const int rows = xv.shape()[0], cols = xv.shape()[1];
  const Tensor& gv = val(gamma);
  const Tensor& bv = val(beta);
  if (static_cast<int>(gv.size()) != cols || static_cast<int>(bv.size()) != cols)
    throw ShapeError("layer_norm: gamma/beta length mismatch");
  Tensor y({rows, cols});
  Tensor xhat({rows, cols});
  std::vector<double> inv_std(rows);
  for (int i = 0; i < rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += xv.at(i, j);
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double d = xv.at(i, j) - mean;
      var += d * d;
    }
    var /= cols;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < cols; ++j) {
      xhat.at(i, j) = (xv.at(i, j) - mean) * inv_std[i];
      y.at(i, j) = gv.at(std::size_t(j)) * xhat.at(i, j) + bv.at(std::size_t(j));
    }
  }
  return push(std::move(y), [x, gamma, beta, xhat = std::move(xhat),
                             inv_std = std::move(inv_std), rows, cols](Tape& t, Node& n) {
    const Tensor& gv = t.val(gamma);
    Tensor& dx = t.grad_of(x);
    Tensor& dg = t.grad_of(gamma);
    Tensor& db = t.grad_of(beta);
    for (int i = 0; i < rows; ++i) {
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (int j = 0; j < cols; ++j) {
        const double g = n.grad.at(i, j);
        dg.at(std::size_t(j)) += g * xhat.at(i, j);
        db.at(std::size_t(j)) += g;
        const double dxh = g * gv.at(std::size_t(j));
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xhat.at(i, j);
      }
      mean_dxhat /= cols;
      mean_dxhat_xhat /= cols;
      for (int j = 0; j < cols; ++j) {
        const double dxh = n.grad.at(i, j) * gv.at(std::size_t(j));
        dx.at(i, j) += inv_std[i] * (dxh - mean_dxhat - xhat.at(i, j) * mean_dxhat_xhat);
      }
    }
  });
}

Value Tape::gelu(Value a) {
  Tensor y = val(a);
  for (double& v : y.data()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return push(std::move(y), [a](Tape& t, Node& n) {
    const Tensor& xv = t.val(a);
    Tensor& da = t.grad_of(a);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double x = xv.at(i);
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      da.at(i) += n.grad.at(i) * (cdf + x * pdf);
    }
  });
}

Value Tape::tanh_act(Value a) {
  Tensor y = val(a);
  for (double& v : y.data()) v = std::tanh(v);
  return push(std::move(y), [a](Tape& t, Node& n) {
    Tensor& da = t.grad_of(a);
    for (std::size_t i = 0; i < n.value.size(); ++i) {
      const double y = n.value.at(i);
      da.at(i) += n.grad.at(i) * (1.0 - y * y);
    }
  });
}

Value Tape::sigmoid(Value a) {
  Tensor y = val(a);
  for (double& v : y.data()) v = 1.0 / (1.0 + std::exp(-v));
  return push(std::move(y), [a](Tape& t, Node& n) {
    Tensor& da = t.grad_of(a);
    for (std::size_t i = 0; i < n.value.size(); ++i) {
      const double y = n.value.at(i);
      da.at(i) += n.grad.at(i) * y * (1.0 - y);
    }
  });
}

Value Tape::softplus(Value a) {
  Tensor y = val(a);
  for (double& v : y.data()) v = v > 30.0 ? v : std::log1p(std::exp(v));
  return push(std::move(y), [a](Tape& t, Node& n) {
    const Tensor& xv = t.val(a);
    Tensor& da = t.grad_of(a);
    for (std::size_t i = 0; i < xv.size(); ++i)
      da.at(i) += n.grad.at(i) / (1.0 + std::exp(-xv.at(i)));
  });
}

Value Tape::sum(Value a) {
  double s = 0.0;
  for (double v : val(a).data()) s += v;
  return push(Tensor::scalar(s), [a](Tape& t, Node& n) {
    Tensor& da = t.grad_of(a);
    const double g = n.grad.at(std::size_t{0});
    for (double& v : da.data()) v += g;
  });
}

Value Tape::mean_rows(Value a) {
  const Tensor& av = val(a);
  check_matrix(av, "mean_rows");
  const int rows = av.shape()[0], cols = av.shape()[1];
  Tensor y({1, cols});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) y.at(std::size_t(j)) += av.at(i, j) / rows;
  return push(std::move(y), [a, rows, cols](Tape& t, Node& n) {
    Tensor& da = t.grad_of(a);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) da.at(i, j) += n.grad.at(std::size_t(j)) / rows;
  });
}

Value Tape::max_rows(Value a) {
  const Tensor& av = val(a);
  check_matrix(av, "max_rows");
  const int rows = av.shape()[0], cols = av.shape()[1];
  Tensor y({1, cols});
  std::vector<int> arg(cols, 0);
  for (int j = 0; j < cols; ++j) {
    double best = av.at(0, j);
    for (int i = 1; i < rows; ++i)
      if (av.at(i, j) > best) {
        best = av.at(i, j);
        arg[j] = i;
      }
    y.at(std::size_t(j)) = best;
  }
  return push(std::move(y), [a, arg = std::move(arg), cols](Tape& t, Node& n) {
    Tensor& da = t.grad_of(a);
    for (int j = 0; j < cols; ++j) da.at(arg[j], j) += n.grad.at(std::size_t(j));
  });
}

Value Tape::slice_cols(Value a, int start, int len) {
  const Tensor& av = val(a);
  check_matrix(av, "slice_cols");
  if (start < 0 || len <= 0 || start + len > av.shape()[1])
    throw ShapeError("slice_cols out of range");
  const int rows = av.shape()[0];
  Tensor y({rows, len});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < len; ++j) y.at(i, j) = av.at(i, start + j);
  return push(std::move(y), [a, start, len, rows](Tape& t, Node& n) {
    Tensor& da = t.grad_of(a);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < len; ++j) da.at(i, start + j) += n.grad.at(i, j);
  });
}

Value Tape::slice_rows(Value a, int start, int len) {
  const Tensor& av = val(a);
  check_matrix(av, "slice_rows");
  if (start < 0 || len <= 0 || start + len > av.shape()[0])
    throw ShapeError("slice_rows out of range");
  const int cols = av.shape()[1];
  Tensor y({len, cols});
  for (int i = 0; i < len; ++i)
    for (int j = 0; j < cols; ++j) y.at(i, j) = av.at(start + i, j);
  return push(std::move(y), [a, start, len, cols](Tape& t, Node& n) {
    Tensor& da = t.grad_of(a);
    for (int i = 0; i < len; ++i)
      for (int j = 0; j < cols; ++j) da.at(start + i, j) += n.grad.at(i, j);
  });
}

Value Tape::concat_rows(Value a, Value b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_matrix(av, "concat_rows");
  check_matrix(bv, "concat_rows");
  if (av.shape()[1] != bv.shape()[1])
    throw ShapeError("concat_rows column mismatch: " + Tensor::shape_str(av.shape()) + " vs " +
                     Tensor::shape_str(bv.shape()));
  const int ra = av.shape()[0], rb = bv.shape()[0], cols = av.shape()[1];
  Tensor y({ra + rb, cols});
  for (int i = 0; i < ra; ++i)
    for (int j = 0; j < cols; ++j) y.at(i, j) = av.at(i, j);
  for (int i = 0; i < rb; ++i)
    for (int j = 0; j < cols; ++j) y.at(ra + i, j) = bv.at(i, j);
  return push(std::move(y), [a, b, ra, rb, cols](Tape& t, Node& n) {
    Tensor& da = t.grad_of(a);
    Tensor& db = t.grad_of(b);
    for (int i = 0; i < ra; ++i)
      for (int j = 0; j < cols; ++j) da.at(i, j) += n.grad.at(i, j);
    for (int i = 0; i < rb; ++i)
      for (int j = 0; j < cols; ++j) db.at(i, j) += n.grad.at(ra + i, j);
  });
}

Value Tape::select_rows(Value a, std::vector<int> idx) {
  const Tensor& av = val(a);
  check_matrix(av, "select_rows");
  const int cols = av.shape()[1];
  for (int i : idx)
    if (i < 0 || i >= av.shape()[0]) throw ShapeError("select_rows index out of range");
  Tensor y({static_cast<int>(idx.size()), cols});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (int j = 0; j < cols; ++j) y.at(static_cast<int>(i), j) = av.at(idx[i], j);
  return push(std::move(y), [a, idx = std::move(idx), cols](Tape& t, Node& n) {
    Tensor& da = t.grad_of(a);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < cols; ++j) da.at(idx[i], j) += n.grad.at(static_cast<int>(i), j);
  });
}

Value Tape::ce_loss(Value logits, int label) {
  const Tensor& lv = val(logits);
  const int c = static_cast<int>(lv.size());
  if (label < 0 || label >= c)
    throw InputError("ce_loss: label " + std::to_string(label) + " out of range [0," +
                     std::to_string(c) + ")");
  double mx = lv.at(std::size_t{0});
  for (int j = 1; j < c; ++j) mx = std::max(mx, lv.at(std::size_t(j)));
  double lse = 0.0;
  for (int j = 0; j < c; ++j) lse += std::exp(lv.at(std::size_t(j)) - mx);
  lse = mx + std::log(lse);
  return push(Tensor::scalar(lse - lv.at(std::size_t(label))), [logits, label, c](Tape& t, Node& n) {
    const Tensor& lv = t.val(logits);
    Tensor p = milkit::softmax(lv);
    Tensor& dl = t.grad_of(logits);
    const double g = n.grad.at(std::size_t{0});
    for (int j = 0; j < c; ++j) dl.at(std::size_t(j)) += g * (p.at(std::size_t(j)) - (j == label ? 1.0 : 0.0));
  });
}

Value Tape::nll_mean_rows(Value sims, int label) {
  const Tensor& sv = val(sims);
  check_matrix(sv, "nll_mean_rows");
  const int m = sv.shape()[0], c = sv.shape()[1];
  if (label < 0 || label >= c) throw InputError("nll_mean_rows: label out of range");
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    double mx = sv.at(i, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, sv.at(i, j));
    double lse = 0.0;
    for (int j = 0; j < c; ++j) lse += std::exp(sv.at(i, j) - mx);
    total += mx + std::log(lse) - sv.at(i, label);
  }
  return push(Tensor::scalar(total / m), [sims, label, m, c](Tape& t, Node& n) {
    const Tensor& sv = t.val(sims);
    Tensor p = milkit::softmax(sv);
    Tensor& ds = t.grad_of(sims);
    const double g = n.grad.at(std::size_t{0}) / m;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < c; ++j) ds.at(i, j) += g * (p.at(i, j) - (j == label ? 1.0 : 0.0));
  });
}

Value Tape::prob_mean_rows(Value sims, int label) {
  const Tensor& sv = val(sims);
  check_matrix(sv, "prob_mean_rows");
  const int m = sv.shape()[0], c = sv.shape()[1];
  if (label < 0 || label >= c) throw InputError("prob_mean_rows: label out of range");
  Tensor p = milkit::softmax(sv);
  double total = 0.0;
  for (int i = 0; i < m; ++i) total += p.at(i, label);
  return push(Tensor::scalar(total / m), [sims, label, m, c, p = std::move(p)](Tape& t, Node& n) {
    Tensor& ds = t.grad_of(sims);
    const double g = n.grad.at(std::size_t{0}) / m;
    for (int i = 0; i < m; ++i) {
      const double pl = p.at(i, label);
      for (int j = 0; j < c; ++j)
        ds.at(i, j) += g * pl * ((j == label ? 1.0 : 0.0) - p.at(i, j));
    }
  });
}

void Tape::backward(Value out, double seed) {
  if (ran_backward_) throw Error("Tape::backward called twice");
  ran_backward_ = true;
  if (!out.valid() || val(out).size() != 1)
    throw InputError("backward: output must be a scalar node");
  grad_of(out).at(std::size_t{0}) = seed;
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, n);
    if (n.sink) n.sink->add_scaled(n.grad, 1.0);
  }
}

}  // namespace milkit
