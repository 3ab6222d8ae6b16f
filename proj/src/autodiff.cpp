#include "neulns/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace neulns::ad {

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Tensor value) { return push(std::move(value), true, nullptr); }

Var Tape::param(Parameter& p, bool track) {
  Var v = push(p.value, track, nullptr);
  if (track) entries_.back().param = &p;
  return v;
}

Var Tape::push(Tensor value, bool requires_grad, Backward fn) {
  Entry e;
  e.value = std::move(value);
  e.requires_grad = requires_grad;
  if (requires_grad) e.backward = std::move(fn);
  entries_.push_back(std::move(e));
  return Var(this, static_cast<int>(entries_.size()) - 1);
}

void Tape::accumulate(int id, const Tensor& g) {
  Entry& e = entries_[static_cast<std::size_t>(id)];
  if (!e.requires_grad) return;
  if (e.grad.size() == 0) {
    e.grad = g;
  } else {
    e.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw Error("backward: Var belongs to another tape");
  Entry& root = entries_[static_cast<std::size_t>(loss.id_)];
  if (root.value.rows() != 1 || root.value.cols() != 1) throw Error("backward: loss must be a scalar");
  if (!root.requires_grad) throw NoGradPath("loss does not depend on any differentiable input");
  root.grad = Tensor::Ones(1, 1);
  for (int id = loss.id_; id >= 0; --id) {
    Entry& e = entries_[static_cast<std::size_t>(id)];
    if (!e.requires_grad || e.grad.size() == 0) continue;
    if (e.backward) e.backward(e.grad);
    if (e.param) e.param->grad += e.grad;
  }
}

namespace {

Tape& tape_of(const Var& a) {
  if (!a.tape()) throw Error("operation on an empty Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw Error("operands belong to different tapes");
  return tape_of(a);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(std::string(op) + ": shape mismatch");
}

template <typename F, typename D>
Var unary(Var a, F forward, D derivative) {
  Tape& t = tape_of(a);
  Tensor y = a.value().unaryExpr(forward);
  const int ia = a.id();
  return t.push(std::move(y), a.requires_grad(), [&t, ia, derivative](const Tensor& g) {
    const Tensor& x = t.value(ia);
    Tensor d = x.unaryExpr(derivative);
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) throw Error("matmul: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() * b.value(), a.requires_grad() || b.requires_grad(), [&t, ia, ib](const Tensor& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), a.requires_grad() || b.requires_grad(), [&t, ia, ib](const Tensor& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), a.requires_grad() || b.requires_grad(), [&t, ia, ib](const Tensor& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) t.accumulate(ib, -g);
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value().cwiseProduct(b.value()), a.requires_grad() || b.requires_grad(),
                [&t, ia, ib](const Tensor& g) {
                  if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                  if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                });
}

Var add_row(Var a, Var r) {
  Tape& t = tape_of(a, r);
  if (r.rows() != 1 || r.cols() != a.cols()) throw Error("add_row: shape mismatch");
  Tensor y = a.value().rowwise() + r.value().row(0);
  const int ia = a.id(), ir = r.id();
  return t.push(std::move(y), a.requires_grad() || r.requires_grad(), [&t, ia, ir](const Tensor& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value() * s, a.requires_grad(), [&t, ia, s](const Tensor& g) { t.accumulate(ia, g * s); });
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().array() + s, a.requires_grad(), [&t, ia](const Tensor& g) { t.accumulate(ia, g); });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Tensor y = a.value().array().tanh();
  const int iy = static_cast<int>(t.size());
  return t.push(std::move(y), a.requires_grad(), [&t, ia, iy](const Tensor& g) {
    const auto y = t.value(iy).array();
    t.accumulate(ia, (g.array() * (1.0 - y * y)).matrix());
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Tensor y = (1.0 + (-a.value().array()).exp()).inverse();
  const int iy = static_cast<int>(t.size());
  return t.push(std::move(y), a.requires_grad(), [&t, ia, iy](const Tensor& g) {
    const auto y = t.value(iy).array();
    t.accumulate(ia, (g.array() * y * (1.0 - y)).matrix());
  });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x) { return x > 0.0 ? 1.0 : slope; });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Tensor y = a.value().array().exp();
  const int iy = static_cast<int>(t.size());
  return t.push(std::move(y), a.requires_grad(),
                [&t, ia, iy](const Tensor& g) { t.accumulate(ia, g.cwiseProduct(t.value(iy))); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Tensor y(1, 1);
  y(0, 0) = a.value().sum();
  return t.push(std::move(y), a.requires_grad(),
                [&t, ia, r, c](const Tensor& g) { t.accumulate(ia, Tensor::Constant(r, c, g(0, 0))); });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const Eigen::Index r = a.rows();
  Tensor y = a.value().colwise().mean();
  return t.push(std::move(y), a.requires_grad(), [&t, ia, r](const Tensor& g) {
    Tensor d = g.replicate(r, 1) / static_cast<double>(r);
    t.accumulate(ia, d);
  });
}

Var row(Var a, Eigen::Index i) { return slice_rows(a, i, 1); }

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.rows()) throw Error("slice_rows: out of range");
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Tensor y = a.value().middleRows(start, count);
  return t.push(std::move(y), a.requires_grad(), [&t, ia, r, c, start, count](const Tensor& g) {
    Tensor d = Tensor::Zero(r, c);
    d.middleRows(start, count) = g;
    t.accumulate(ia, d);
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.cols()) throw Error("slice_cols: out of range");
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Tensor y = a.value().middleCols(start, count);
  return t.push(std::move(y), a.requires_grad(), [&t, ia, r, c, start, count](const Tensor& g) {
    Tensor d = Tensor::Zero(r, c);
    d.middleCols(start, count) = g;
    t.accumulate(ia, d);
  });
}

namespace {

void check_adjacency(const Adjacency& adj, Eigen::Index n) {
  if (adj.nodes() != n) throw Error("egate: adjacency size does not match the node count");
  for (int i = 0; i < adj.nodes(); ++i) {
    if (adj.offsets[static_cast<std::size_t>(i) + 1] <= adj.offsets[static_cast<std::size_t>(i)]) {
      throw IsolatedNode("node " + std::to_string(i) + " has no unmasked arcs");
    }
  }
}

// Pre-activations and normalised weights, both arcs x c.
void egate_weights_impl(const Tensor& p, const Tensor& q, const Tensor& e, const Adjacency& adj, double slope,
                        Tensor& pre, Tensor& w) {
  const Eigen::Index c = p.cols();
  pre.resize(adj.arcs(), c);
  w.resize(adj.arcs(), c);
  for (int i = 0; i < adj.nodes(); ++i) {
    const int lo = adj.offsets[static_cast<std::size_t>(i)];
    const int hi = adj.offsets[static_cast<std::size_t>(i) + 1];
    Eigen::RowVectorXd mx = Eigen::RowVectorXd::Constant(c, -kInfinity);
    for (int k = lo; k < hi; ++k) {
      const int j = adj.targets[static_cast<std::size_t>(k)];
      pre.row(k) = p.row(i) + q.row(j) + e.row(k);
      w.row(k) = pre.row(k).unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
      mx = mx.cwiseMax(w.row(k));
    }
    Eigen::RowVectorXd total = Eigen::RowVectorXd::Zero(c);
    for (int k = lo; k < hi; ++k) {
      w.row(k) = (w.row(k) - mx).array().exp();
      total += w.row(k);
    }
    for (int k = lo; k < hi; ++k) w.row(k).array() /= total.array();
  }
}

}  // namespace

Tensor egate_weights(const Tensor& p, const Tensor& q, const Tensor& e, const Adjacency& adj, double slope) {
  check_adjacency(adj, p.rows());
  Tensor pre, w;
  egate_weights_impl(p, q, e, adj, slope, pre, w);
  return w;
}

Var egate_attend(Var p, Var q, Var e, Var x, const Adjacency& adj, double slope) {
  Tape& t = tape_of(p, q);
  tape_of(e, x);
  tape_of(p, x);
  const Eigen::Index n = p.rows(), c = p.cols();
  if (q.rows() != n || x.rows() != n || q.cols() != c || x.cols() != c || e.cols() != c) {
    throw Error("egate: shape mismatch");
  }
  check_adjacency(adj, n);
  if (e.rows() != adj.arcs()) throw Error("egate: edge rows do not match the arc count");

  auto pre = std::make_shared<Tensor>();
  auto w = std::make_shared<Tensor>();
  egate_weights_impl(p.value(), q.value(), e.value(), adj, slope, *pre, *w);

  const Tensor& xv = x.value();
  Tensor out = xv;
  for (int i = 0; i < adj.nodes(); ++i) {
    for (int k = adj.offsets[static_cast<std::size_t>(i)]; k < adj.offsets[static_cast<std::size_t>(i) + 1]; ++k) {
      out.row(i) += w->row(k).cwiseProduct(xv.row(adj.targets[static_cast<std::size_t>(k)]));
    }
  }

  const bool rg = p.requires_grad() || q.requires_grad() || e.requires_grad() || x.requires_grad();
  const int ip = p.id(), iq = q.id(), ie = e.id(), ix = x.id();
  return t.push(std::move(out), rg, [&t, ip, iq, ie, ix, adj, slope, pre, w, n, c](const Tensor& g) {
    const Tensor& xv = t.value(ix);
    Tensor dp = Tensor::Zero(n, c), dq = Tensor::Zero(n, c), dx = g;
    Tensor de(adj.arcs(), c);
    Eigen::RowVectorXd dw_dot(c);
    for (int i = 0; i < adj.nodes(); ++i) {
      const int lo = adj.offsets[static_cast<std::size_t>(i)];
      const int hi = adj.offsets[static_cast<std::size_t>(i) + 1];
      const auto gi = g.row(i);
      dw_dot.setZero();
      for (int k = lo; k < hi; ++k) {
        const int j = adj.targets[static_cast<std::size_t>(k)];
        dx.row(j) += gi.cwiseProduct(w->row(k));
        dw_dot += w->row(k).cwiseProduct(gi.cwiseProduct(xv.row(j)));
      }
      for (int k = lo; k < hi; ++k) {
        const int j = adj.targets[static_cast<std::size_t>(k)];
        for (Eigen::Index d = 0; d < c; ++d) {
          const double dw = gi(d) * xv(j, d);
          double dl = (*w)(k, d) * (dw - dw_dot(d));
          if (!((*pre)(k, d) > 0.0)) dl *= slope;
          de(k, d) = dl;
          dp(i, d) += dl;
          dq(j, d) += dl;
        }
      }
    }
    t.accumulate(ip, dp);
    t.accumulate(iq, dq);
    t.accumulate(ie, de);
    t.accumulate(ix, dx);
  });
}

std::vector<double> masked_softmax(const Tensor& scores, const std::vector<char>& allowed) {
  if (scores.size() != static_cast<Eigen::Index>(allowed.size())) throw Error("softmax: mask size mismatch");
  double mx = -kInfinity;
  for (std::size_t j = 0; j < allowed.size(); ++j) {
    if (allowed[j]) mx = std::max(mx, scores(static_cast<Eigen::Index>(j)));
  }
  if (mx == -kInfinity) throw Error("softmax: every entry is masked");
  std::vector<double> p(allowed.size(), 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < allowed.size(); ++j) {
    if (allowed[j]) total += p[j] = std::exp(scores(static_cast<Eigen::Index>(j)) - mx);
  }
  for (double& v : p) v /= total;
  return p;
}

Var log_softmax_pick(Var scores, const std::vector<char>& allowed, Eigen::Index index) {
  Tape& t = tape_of(scores);
  if (scores.cols() != 1) throw Error("log_softmax_pick: expected a column");
  if (index < 0 || index >= scores.rows() || !allowed[static_cast<std::size_t>(index)]) {
    throw Error("log_softmax_pick: index is masked");
  }
  const Tensor& s = scores.value();
  double mx = -kInfinity;
  for (Eigen::Index j = 0; j < s.rows(); ++j) {
    if (allowed[static_cast<std::size_t>(j)]) mx = std::max(mx, s(j, 0));
  }
  double total = 0.0;
  for (Eigen::Index j = 0; j < s.rows(); ++j) {
    if (allowed[static_cast<std::size_t>(j)]) total += std::exp(s(j, 0) - mx);
  }
  Tensor y(1, 1);
  y(0, 0) = s(index, 0) - mx - std::log(total);
  const int is = scores.id();
  const Eigen::Index n = s.rows();
  return t.push(std::move(y), scores.requires_grad(), [&t, is, allowed, index, mx, total, n](const Tensor& g) {
    const Tensor& s = t.value(is);
    Tensor d = Tensor::Zero(n, 1);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (allowed[static_cast<std::size_t>(j)]) d(j, 0) = -g(0, 0) * std::exp(s(j, 0) - mx) / total;
    }
    d(index, 0) += g(0, 0);
    t.accumulate(is, d);
  });
}

Var ppo_clip(Var logp, double logp_old, double advantage, double eps) {
  Tape& t = tape_of(logp);
  const double rho = std::exp(logp.scalar() - logp_old);
  const double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps);
  const double plain = rho * advantage;
  const double capped = clipped * advantage;
  // slope of the chosen branch with respect to logp
  double slope = 0.0;
  if (plain <= capped || clipped == rho) slope = rho * advantage;
  Tensor y(1, 1);
  y(0, 0) = std::min(plain, capped);
  const int il = logp.id();
  return t.push(std::move(y), logp.requires_grad(),
                [&t, il, slope](const Tensor& g) { t.accumulate(il, g * slope); });
}

double grad_check(std::span<Parameter* const> params, const std::function<Var(Tape&)>& loss, double step) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  auto value_at = [&]() {
    Tape tape;
    return loss(tape).scalar();
  };
  double worst = 0.0;
  for (Parameter* p : params) {
    for (Eigen::Index k = 0; k < p->value.size(); ++k) {
      double& x = p->value.data()[k];
      const double saved = x;
      const double analytic = p->grad.data()[k];
      // A ReLU-type kink inside [x - h, x + h] spoils the central difference,
      // so each coordinate is measured again at h / 10 and the better error kept.
      double err = kInfinity;
      for (double h : {step, step / 10.0}) {
        x = saved + h;
        const double up = value_at();
        x = saved - h;
        const double down = value_at();
        x = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        err = std::min(err, std::abs(analytic - numeric) / denom);
      }
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace neulns::ad
