#include "sergan/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace sergan {

Parameter& Module::register_param(const std::string& local, Tensor init) {
  const std::string full = name_ + "." + local;
  for (const auto& p : params_)
    if (p.name == full)
      throw std::logic_error("Module: duplicate parameter name " + full);
  params_.emplace_back(full, std::move(init));
  return params_.back();
}

Parameter& Module::find(const std::string& pname) {
  for (auto& p : params_)
    if (p.name == pname) return p;
  throw std::out_of_range("Module " + name_ + ": no parameter named " + pname);
}

Tensor kaiming_uniform(std::vector<int> shape, int fan_in, RngStream& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Conv2dLayer NetBuilder::conv(const std::string& name, int ci, int co, int k, int stride,
                             int pad, RngStream& rng) {
  Conv2dLayer l;
  l.w = &register_param(name + ".w", kaiming_uniform({co, ci, k, k}, ci * k * k, rng));
  l.b = &register_param(name + ".b", zeros({co}));
  l.stride = stride;
  l.pad = pad;
  return l;
}

Conv2dLayer NetBuilder::deconv(const std::string& name, int ci, int co, int k,
                               int stride, int pad, RngStream& rng) {
  Conv2dLayer l;
  l.w = &register_param(name + ".w", kaiming_uniform({ci, co, k, k}, ci * k * k, rng));
  l.b = &register_param(name + ".b", zeros({co}));
  l.stride = stride;
  l.pad = pad;
  return l;
}

LinearLayer NetBuilder::linear(const std::string& name, int in, int out, RngStream& rng) {
  LinearLayer l;
  l.w = &register_param(name + ".w", kaiming_uniform({out, in}, in, rng));
  l.b = &register_param(name + ".b", zeros({out}));
  return l;
}

LstmLayer NetBuilder::lstm(const std::string& name, int in, int hidden, RngStream& rng) {
  LstmLayer l;
  l.wx = &register_param(name + ".wx", kaiming_uniform({4 * hidden, in}, in, rng));
  l.wh = &register_param(name + ".wh", kaiming_uniform({4 * hidden, hidden}, hidden, rng));
  Tensor bias({4 * hidden});
  for (int i = hidden; i < 2 * hidden; ++i) bias[static_cast<std::size_t>(i)] = 1.0;
  l.b = &register_param(name + ".b", std::move(bias));
  l.hidden = hidden;
  return l;
}

AttentionPool NetBuilder::attention(const std::string& name, int hidden, int attn_dim,
                                    RngStream& rng) {
  AttentionPool a;
  a.w = &register_param(name + ".w", kaiming_uniform({attn_dim, hidden}, hidden, rng));
  a.b = &register_param(name + ".b", zeros({attn_dim}));
  a.v = &register_param(name + ".v", kaiming_uniform({1, attn_dim}, attn_dim, rng));
  return a;
}

Var NetBuilder::apply(Tape& t, const Conv2dLayer& l, Var x) const {
  return t.conv2d(x, use(t, *l.w), use(t, *l.b), l.stride, l.pad);
}

Var NetBuilder::apply_deconv(Tape& t, const Conv2dLayer& l, Var x) const {
  return t.deconv2d(x, use(t, *l.w), use(t, *l.b), l.stride, l.pad);
}

Var NetBuilder::apply(Tape& t, const LinearLayer& l, Var x) const {
  return t.linear(x, use(t, *l.w), use(t, *l.b));
}

std::vector<Var> NetBuilder::apply(Tape& t, const LstmLayer& l, Var x) const {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 4) throw std::invalid_argument("lstm: expected [N,C,T,B]");
  const int N = xv.dim(0), T = xv.dim(2);
  const int H = l.hidden;
  Var wx = use(t, *l.wx);
  Var wh = use(t, *l.wh);
  Var b = use(t, *l.b);
  Var h = t.constant(Tensor({N, H}));
  Var c = t.constant(Tensor({N, H}));
  std::vector<Var> steps;
  steps.reserve(static_cast<std::size_t>(T));
  for (int step = 0; step < T; ++step) {
    Var xt = t.time_slice(x, step);
    Var gates = t.linear(xt, wx, b);
    // recurrent contribution (bias already added once)
    Var rec = t.linear(h, wh, -1);
    gates = t.add(gates, rec);
    Var ig = t.sigmoid(t.cols(gates, 0, H));
    Var fg = t.sigmoid(t.cols(gates, H, H));
    Var gg = t.tanh_op(t.cols(gates, 2 * H, H));
    Var og = t.sigmoid(t.cols(gates, 3 * H, H));
    c = t.add(t.mul(fg, c), t.mul(ig, gg));
    h = t.mul(og, t.tanh_op(c));
    steps.push_back(h);
  }
  return steps;
}

Var NetBuilder::apply(Tape& t, const AttentionPool& a, const std::vector<Var>& steps) const {
  if (steps.empty()) throw std::invalid_argument("attention: no steps");
  Var w = use(t, *a.w);
  Var b = use(t, *a.b);
  Var v = use(t, *a.v);
  std::vector<Var> scores;
  scores.reserve(steps.size());
  for (Var h : steps) {
    Var e = t.linear(t.tanh_op(t.linear(h, w, b)), v, -1);  // [N,1]
    scores.push_back(t.col(e, 0));
  }
  Var alpha = t.softmax_rows(t.stack_cols(scores));  // [N,T]
  Var ctx = t.row_scale(steps[0], t.col(alpha, 0));
  for (std::size_t s = 1; s < steps.size(); ++s)
    ctx = t.add(ctx, t.row_scale(steps[s], t.col(alpha, static_cast<int>(s))));
  return ctx;
}

}  // namespace sergan
