#include "metaopt/inner_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace metaopt {

InnerModel::InnerModel(Config cfg) : cfg_(cfg) {
  if (cfg_.in_channels <= 0 || cfg_.height <= 0 || cfg_.width <= 0 || cfg_.n_classes < 2 ||
      cfg_.kernel <= 0)
    throw std::invalid_argument("InnerModel: bad config");
  for (int i = 0; i < 4; ++i)
    if (cfg_.channels[static_cast<std::size_t>(i)] <= 0 || cfg_.strides[static_cast<std::size_t>(i)] <= 0)
      throw std::invalid_argument("InnerModel: channels and strides must be positive");

  auto add = [this](const std::string& name, Shape shape, std::int64_t fan_in, bool is_bias) {
    ParamEntry e;
    e.name = name;
    e.shape = std::move(shape);
    e.offset = layout_.n_params;
    e.size = numel_of(e.shape);
    e.fan_in = fan_in;
    e.is_bias = is_bias;
    layout_.n_params += e.size;
    layout_.tensors.push_back(std::move(e));
  };

  int cin = cfg_.in_channels;
  for (int l = 0; l < 4; ++l) {
    const int cout = cfg_.channels[static_cast<std::size_t>(l)];
    const std::int64_t fan = static_cast<std::int64_t>(cin) * cfg_.kernel * cfg_.kernel;
    add("conv" + std::to_string(l + 1) + "_w", {cout, cin, cfg_.kernel, cfg_.kernel}, fan, false);
    add("conv" + std::to_string(l + 1) + "_b", {cout}, fan, true);
    cin = cout;
  }
  add("fc_w", {cin, cfg_.n_classes}, cin, false);
  add("fc_b", {cfg_.n_classes}, cin, true);
}

std::vector<double> InnerModel::init_params(Rng& rng) const {
  std::vector<double> w(static_cast<std::size_t>(layout_.n_params), 0.0);
  for (const auto& e : layout_.tensors) {
    if (e.is_bias) continue;
    const double std = std::sqrt(2.0 / static_cast<double>(e.fan_in));
    for (std::int64_t i = 0; i < e.size; ++i) w[static_cast<std::size_t>(e.offset + i)] = std * rng.normal();
  }
  return w;
}

namespace {

void load_tensor(std::span<const double> params, const ParamEntry& e, Tensor& t) {
  if (t.shape != e.shape) t = Tensor(e.shape);
  std::copy(params.begin() + e.offset, params.begin() + e.offset + e.size, t.data.begin());
}

}  // namespace

void InnerModel::forward(std::span<const double> params, const ImageBatch& batch,
                         InnerWorkspace& ws) const {
  if (static_cast<std::int64_t>(params.size()) != layout_.n_params)
    throw std::invalid_argument("InnerModel: parameter vector has wrong length");
  if (batch.x.rank() != 4 || batch.x.dim(1) != cfg_.in_channels ||
      batch.x.dim(2) != cfg_.height || batch.x.dim(3) != cfg_.width)
    throw std::invalid_argument("InnerModel: batch shape " + shape_str(batch.x.shape) +
                                " does not match config");

  for (int l = 0; l < 4; ++l) {
    load_tensor(params, layout_.tensors[static_cast<std::size_t>(2 * l)], ws.w[static_cast<std::size_t>(l)]);
    load_tensor(params, layout_.tensors[static_cast<std::size_t>(2 * l + 1)], ws.b[static_cast<std::size_t>(l)]);
  }
  load_tensor(params, layout_.tensors[8], ws.fc_w);
  load_tensor(params, layout_.tensors[9], ws.fc_b);

  const Tensor* x = &batch.x;
  for (int l = 0; l < 4; ++l) {
    conv2d_forward(*x, ws.w[static_cast<std::size_t>(l)], ws.b[static_cast<std::size_t>(l)],
                   cfg_.strides[static_cast<std::size_t>(l)], ws.pre[static_cast<std::size_t>(l)]);
    relu_forward(ws.pre[static_cast<std::size_t>(l)], ws.post[static_cast<std::size_t>(l)]);
    x = &ws.post[static_cast<std::size_t>(l)];
  }
  spatial_mean_forward(*x, ws.pooled);
  linear_forward(ws.pooled, ws.fc_w, ws.fc_b, ws.logits);
}

double InnerModel::loss_and_grad(std::span<const double> params, const ImageBatch& batch,
                                 std::span<double> grad, InnerWorkspace& ws) const {
  if (static_cast<std::int64_t>(grad.size()) != layout_.n_params)
    throw std::invalid_argument("InnerModel: gradient vector has wrong length");
  forward(params, batch, ws);
  const double loss = softmax_cross_entropy(ws.logits, batch.labels, &ws.glogits);

  linear_backward(ws.pooled, ws.fc_w, ws.glogits, ws.gpooled, ws.gfc_w, ws.gfc_b);
  spatial_mean_backward(ws.post[3].shape, ws.gpooled, ws.gpost[3]);
  for (int l = 3; l >= 0; --l) {
    relu_backward(ws.pre[static_cast<std::size_t>(l)], ws.gpost[static_cast<std::size_t>(l)],
                  ws.gpre[static_cast<std::size_t>(l)]);
    const Tensor& xin = l == 0 ? batch.x : ws.post[static_cast<std::size_t>(l - 1)];
    Tensor& gx = l == 0 ? ws.gx : ws.gpost[static_cast<std::size_t>(l - 1)];
    conv2d_backward(xin, ws.w[static_cast<std::size_t>(l)], cfg_.strides[static_cast<std::size_t>(l)],
                    ws.gpre[static_cast<std::size_t>(l)], gx, ws.gw[static_cast<std::size_t>(l)],
                    ws.gb[static_cast<std::size_t>(l)]);
  }

  auto store = [&](const ParamEntry& e, const Tensor& t) {
    std::copy(t.data.begin(), t.data.end(), grad.begin() + e.offset);
  };
  for (int l = 0; l < 4; ++l) {
    store(layout_.tensors[static_cast<std::size_t>(2 * l)], ws.gw[static_cast<std::size_t>(l)]);
    store(layout_.tensors[static_cast<std::size_t>(2 * l + 1)], ws.gb[static_cast<std::size_t>(l)]);
  }
  store(layout_.tensors[8], ws.gfc_w);
  store(layout_.tensors[9], ws.gfc_b);
  return loss;
}

double InnerModel::loss(std::span<const double> params, const ImageBatch& batch,
                        InnerWorkspace& ws) const {
  forward(params, batch, ws);
  return softmax_cross_entropy(ws.logits, batch.labels, nullptr);
}

double InnerModel::accuracy(std::span<const double> params, const ImageBatch& batch,
                            InnerWorkspace& ws) const {
  forward(params, batch, ws);
  int correct = 0;
  for (std::int64_t b = 0; b < ws.logits.dim(0); ++b)
    if (argmax_row(ws.logits, b) == batch.labels[static_cast<std::size_t>(b)]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(ws.logits.dim(0));
}

double InnerModel::loss_and_grad(std::span<const double> params, const ImageBatch& batch,
                                 std::span<double> grad) const {
  InnerWorkspace ws;
  return loss_and_grad(params, batch, grad, ws);
}

double InnerModel::loss(std::span<const double> params, const ImageBatch& batch) const {
  InnerWorkspace ws;
  return loss(params, batch, ws);
}

GradCheckReport run_gradcheck(int n_configs, std::uint64_t seed, double eps, double tol) {
  if (n_configs <= 0) throw std::invalid_argument("run_gradcheck: need at least one config");
  GradCheckReport rep;
  rep.n_configs = n_configs;
  rep.tol = tol;
  Rng rng(seed);

  const std::array<std::array<int, 4>, 3> stride_sets{{{2, 2, 1, 1}, {1, 2, 2, 1}, {2, 1, 2, 1}}};

  for (int cfg_i = 0; cfg_i < n_configs; ++cfg_i) {
    InnerModel::Config cfg;
    cfg.in_channels = rng.uniform_int(1, 3);
    cfg.height = rng.uniform_int(6, 8);
    cfg.width = rng.uniform_int(6, 8);
    cfg.n_classes = rng.uniform_int(3, 4);
    for (auto& c : cfg.channels) c = rng.uniform_int(2, 6);
    const auto& strides = stride_sets[static_cast<std::size_t>(rng.below(3))];
    std::copy(strides.begin(), strides.end(), cfg.strides.begin());
    InnerModel model(cfg);

    Rng init_rng = rng.split();

    const int B = 4;
    ImageBatch batch;
    batch.x = Tensor({B, cfg.in_channels, cfg.height, cfg.width});
    for (auto& v : batch.x.data) v = rng.uniform();
    for (int b = 0; b < B; ++b) batch.labels.push_back(rng.uniform_int(0, cfg.n_classes - 1));

    // Central differences across a ReLU kink give O(1) errors even when the
    // analytic gradient is right. A step of eps moves any pre-activation by
    // well under 100*eps here, so resample the init until every unit clears
    // that margin.
    const double kink_margin = 100.0 * eps;
    InnerWorkspace ws;
    std::vector<double> params;
    for (int tries = 0;; ++tries) {
      if (tries >= 200) throw std::runtime_error("run_gradcheck: no kink-free init found");
      params = model.init_params(init_rng);
      model.loss(params, batch, ws);
      double min_abs = std::numeric_limits<double>::infinity();
      for (const auto& pre : ws.pre)
        for (const double z : pre.data) min_abs = std::min(min_abs, std::abs(z));
      if (min_abs >= kink_margin) break;
    }

    std::vector<double> analytic(params.size());
    model.loss_and_grad(params, batch, analytic, ws);

    auto objective = [&](std::span<const double> p) { return model.loss(p, batch); };
    const auto fd = finite_diff_grad(objective, params, eps);

    const double err = rel_err_norm(analytic, fd);
    rep.per_config.push_back(err);
    rep.max_rel_err = std::max(rep.max_rel_err, err);
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace metaopt
