#include "armour/autograd.hpp"

#include <cmath>
#include <utility>

namespace armour {

GradTape::Var GradTape::push(Tensor value, std::vector<Var> parents, BackFn back) {
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(back), false});
  return nodes_.size() - 1;
}

void GradTape::accumulate(std::vector<Tensor>& grads, const GradTape& tape, Var v,
                          const Tensor& g) {
  if (grads[v].numel() == 0) grads[v] = Tensor(tape.value(v).shape);
  for (std::size_t i = 0; i < g.numel(); ++i) grads[v].data[i] += g.data[i];
}

GradTape::Var GradTape::leaf(Tensor value) {
  Var v = push(std::move(value), {}, nullptr);
  nodes_[v].leaf = true;
  return v;
}

GradTape::Var GradTape::matmul(Var a, Var b) {
  Tensor out = armour::matmul(value(a), value(b));
  return push(std::move(out), {a, b},
              [a, b](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
                accumulate(grads, t, a, armour::matmul_transpose_b(g, t.value(b)));
                accumulate(grads, t, b, armour::matmul(armour::transpose(t.value(a)), g));
              });
}

GradTape::Var GradTape::matmul_transpose_b(Var a, Var b) {
  Tensor out = armour::matmul_transpose_b(value(a), value(b));
  return push(std::move(out), {a, b},
              [a, b](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
                accumulate(grads, t, a, armour::matmul(g, t.value(b)));
                accumulate(grads, t, b, armour::matmul(armour::transpose(g), t.value(a)));
              });
}

GradTape::Var GradTape::transpose(Var a) {
  Tensor out = armour::transpose(value(a));
  return push(std::move(out), {a},
              [a](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
                accumulate(grads, t, a, armour::transpose(g));
              });
}

GradTape::Var GradTape::softmax_rows(Var a) {
  Tensor out = armour::softmax_rows(value(a));
  Var v = push(std::move(out), {a}, nullptr);
  nodes_[v].back = [a, v](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
    const Tensor& p = t.value(v);
    const std::size_t c = p.shape[p.rank() - 1];
    const std::size_t nrows = p.numel() / c;
    Tensor da(p.shape);
    for (std::size_t i = 0; i < nrows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g.data[i * c + j] * p.data[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        da.data[i * c + j] = p.data[i * c + j] * (g.data[i * c + j] - dot);
    }
    accumulate(grads, t, a, da);
  };
  return v;
}

GradTape::Var GradTape::concat_last_axis(Var a, Var b) {
  Tensor out = armour::concat_last_axis(value(a), value(b));
  const std::size_t p = value(a).shape.back();
  const std::size_t q = value(b).shape.back();
  return push(std::move(out), {a, b},
              [a, b, p, q](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
                Tensor ga(t.value(a).shape), gb(t.value(b).shape);
                const std::size_t lead = (p + q) == 0 ? 0 : g.numel() / (p + q);
                for (std::size_t i = 0; i < lead; ++i) {
                  for (std::size_t j = 0; j < p; ++j) ga.data[i * p + j] = g.data[i * (p + q) + j];
                  for (std::size_t j = 0; j < q; ++j)
                    gb.data[i * q + j] = g.data[i * (p + q) + p + j];
                }
                accumulate(grads, t, a, ga);
                accumulate(grads, t, b, gb);
              });
}

GradTape::Var GradTape::add(Var a, Var b) {
  Tensor out = armour::add(value(a), value(b));
  return push(std::move(out), {a, b},
              [a, b](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
                accumulate(grads, t, a, g);
                accumulate(grads, t, b, g);
              });
}

GradTape::Var GradTape::hadamard(Var a, Var b) {
  Tensor out = armour::hadamard(value(a), value(b));
  return push(std::move(out), {a, b},
              [a, b](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
                accumulate(grads, t, a, armour::hadamard(g, t.value(b)));
                accumulate(grads, t, b, armour::hadamard(g, t.value(a)));
              });
}

GradTape::Var GradTape::scale(Var a, double c) {
  Tensor out = armour::scale(value(a), c);
  return push(std::move(out), {a},
              [a, c](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
                accumulate(grads, t, a, armour::scale(g, c));
              });
}

GradTape::Var GradTape::add_row_bias(Var m, Var bias) {
  Tensor out = armour::add_row_bias(value(m), value(bias));
  return push(std::move(out), {m, bias},
              [m, bias](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
                accumulate(grads, t, m, g);
                const std::size_t c = g.shape[1];
                Tensor gb({c});
                for (std::size_t i = 0; i < g.shape[0]; ++i)
                  for (std::size_t j = 0; j < c; ++j) gb.data[j] += g.data[i * c + j];
                accumulate(grads, t, bias, gb);
              });
}

GradTape::Var GradTape::slice_cols(Var m, std::size_t c0, std::size_t c1) {
  Tensor out = armour::slice_cols(value(m), c0, c1);
  return push(std::move(out), {m},
              [m, c0, c1](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
                const Tensor& src = t.value(m);
                Tensor gm(src.shape);
                const std::size_t w = c1 - c0;
                for (std::size_t i = 0; i < src.shape[0]; ++i)
                  for (std::size_t j = 0; j < w; ++j)
                    gm.data[i * src.shape[1] + c0 + j] = g.data[i * w + j];
                accumulate(grads, t, m, gm);
              });
}

GradTape::Var GradTape::mask_diagonal(Var m, double sentinel) {
  Tensor out = armour::mask_diagonal(value(m), sentinel);
  return push(std::move(out), {m},
              [m](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
                // Masked positions are constants; they pass no gradient.
                Tensor gm = g;
                for (std::size_t i = 0; i < gm.shape[0]; ++i) gm.at(i, i) = 0.0;
                accumulate(grads, t, m, gm);
              });
}

GradTape::Var GradTape::gelu(Var a) {
  Tensor out = armour::gelu(value(a));
  return push(std::move(out), {a},
              [a](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
                const Tensor& x = t.value(a);
                constexpr double inv_sqrt2 = 0.7071067811865475244;
                constexpr double inv_sqrt2pi = 0.3989422804014326779;
                Tensor da(x.shape);
                for (std::size_t i = 0; i < x.numel(); ++i) {
                  const double v = x.data[i];
                  const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                  const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                  da.data[i] = g.data[i] * (cdf + v * pdf);
                }
                accumulate(grads, t, a, da);
              });
}

GradTape::Var GradTape::mean_rows(Var m) {
  Tensor out = armour::mean_rows(value(m));
  return push(std::move(out), {m},
              [m](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
                const Tensor& src = t.value(m);
                const std::size_t r = src.shape[0], c = src.shape[1];
                Tensor gm(src.shape);
                for (std::size_t i = 0; i < r; ++i)
                  for (std::size_t j = 0; j < c; ++j)
                    gm.data[i * c + j] = g.data[j] / static_cast<double>(r);
                accumulate(grads, t, m, gm);
              });
}

GradTape::Var GradTape::sum(Var a) {
  Tensor out = Tensor::scalar(armour::sum(value(a)));
  return push(std::move(out), {a},
              [a](const GradTape& t, const Tensor& g, std::vector<Tensor>& grads) {
                Tensor ga(t.value(a).shape, g.data[0]);
                accumulate(grads, t, a, ga);
              });
}

GradTape::Var GradTape::lookup_rows(Var table, std::vector<std::size_t> ids) {
  const Tensor& tab = value(table);
  if (tab.rank() != 2) {
    throw ShapeError("lookup_rows: table must be rank-2, got " + shape_string(tab));
  }
  const std::size_t d = tab.shape[1];
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tab.shape[0]) {
      throw ShapeError("lookup_rows: index " + std::to_string(ids[i]) + " out of range for " +
                       shape_string(tab));
    }
    for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] = tab.data[ids[i] * d + j];
  }
  return push(std::move(out), {table},
              [table, ids = std::move(ids), d](const GradTape& t, const Tensor& g,
                                               std::vector<Tensor>& grads) {
                Tensor gt(t.value(table).shape);
                for (std::size_t i = 0; i < ids.size(); ++i)
                  for (std::size_t j = 0; j < d; ++j)
                    gt.data[ids[i] * d + j] += g.data[i * d + j];
                accumulate(grads, t, table, gt);
              });
}

GradTape::Var GradTape::cross_entropy_with_logits(Var logits, std::vector<std::size_t> labels) {
  const Tensor& z = value(logits);
  if (z.rank() != 2 || z.shape[0] != labels.size()) {
    throw ShapeError("cross_entropy_with_logits: logits " + shape_string(z) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = z.shape[0], c = z.shape[1];
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &z.data[i * c];
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < c; ++j) lse += std::exp(row[j] - m);
    loss += (m + std::log(lse)) - row[labels[i]];
  }
  loss /= static_cast<double>(n);
  return push(Tensor::scalar(loss), {logits},
              [logits, labels = std::move(labels)](const GradTape& t, const Tensor& g,
                                                   std::vector<Tensor>& grads) {
                const Tensor& z = t.value(logits);
                const std::size_t n = z.shape[0], c = z.shape[1];
                Tensor p = armour::softmax_rows(z);
                const double w = g.data[0] / static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i) {
                  for (std::size_t j = 0; j < c; ++j) p.data[i * c + j] *= w;
                  p.data[i * c + labels[i]] -= w;
                }
                accumulate(grads, t, logits, p);
              });
}

std::unordered_map<GradTape::Var, Tensor> GradTape::backward(Var loss) const {
  if (value(loss).numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_string(value(loss)));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[loss] = Tensor(value(loss).shape, 1.0);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const Node& node = nodes_[i];
    if (grads[i].numel() == 0 || node.leaf) continue;
    node.back(*this, grads[i], grads);
  }
  std::unordered_map<Var, Tensor> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].leaf) continue;
    out.emplace(i, grads[i].numel() ? std::move(grads[i]) : Tensor(nodes_[i].value.shape));
  }
  return out;
}

}  // namespace armour
