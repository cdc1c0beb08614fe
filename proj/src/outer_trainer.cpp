#include "metaopt/outer_trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <stdexcept>

#include "metaopt/text_util.hpp"

namespace metaopt {

std::int64_t truncation_length(const TruncationSchedule& s, std::int64_t outer_iter, Rng& rng) {
  if (s.start <= 0 || s.end < s.start || s.ramp < 0)
    throw std::invalid_argument("truncation schedule: need 0 < start <= end and ramp >= 0");
  if (s.jitter < 0.0 || s.jitter >= 1.0)
    throw std::invalid_argument("truncation schedule: jitter must lie in [0, 1)");
  if (outer_iter < 0) throw std::invalid_argument("truncation_length: negative iteration");
  double base;
  if (s.ramp == 0 || outer_iter >= s.ramp)
    base = static_cast<double>(s.end);
  else
    base = static_cast<double>(s.start) +
           static_cast<double>(s.end - s.start) * static_cast<double>(outer_iter) /
               static_cast<double>(s.ramp);
  // one draw always, so schedule settings never shift the caller's stream
  const double u = rng.uniform();
  const double factor = 1.0 + s.jitter * (2.0 * u - 1.0);
  const auto len = static_cast<std::int64_t>(std::llround(base * factor));
  return std::max<std::int64_t>(1, len);
}

OuterTrainer::OuterTrainer(const InnerModel& model, const DatasetSplits& data, OuterConfig cfg,
                           const SeverityTable& table)
    : model_(&model), data_(&data), cfg_(cfg), table_(&table) {
  if (cfg_.pairs_per_batch <= 0 || cfg_.sigma_es <= 0.0 || cfg_.outer_iters <= 0 ||
      cfg_.inner_batch <= 0 || cfg_.eval_batch <= 0 || cfg_.eval_every <= 0 ||
      cfg_.horizon <= 0 || cfg_.abort_factor <= 1.0 || cfg_.workers <= 0 || cfg_.max_staleness < 0)
    throw std::invalid_argument("OuterConfig: non-positive field");
  if (data_->train.size() == 0 || data_->valid.size() == 0)
    throw std::invalid_argument("OuterTrainer: train and valid splits must be non-empty");
}

double OuterTrainer::outer_loss(UnrollState& state, InnerWorkspace& ws) const {
  if (cfg_.sample_corruptions)
    state.corruption = sample_train_corruption(state.rng, cfg_.max_severity);
  ImageBatch batch;
  sample_minibatch(data_->valid, cfg_.eval_batch, state.rng, batch);
  corrupt_batch(state.corruption, *table_, batch, state.rng);
  return model_->loss(state.w, batch, ws);
}

void OuterTrainer::reinit_state(UnrollState& state, InnerWorkspace& ws) const {
  state.w = model_->init_params(state.rng);
  state.opt_state.reset();
  state.steps_done = 0;
  if (!cfg_.sample_corruptions) state.corruption = cfg_.fixed_corruption;
  state.initial_outer_loss = outer_loss(state, ws);
}

UnrollState OuterTrainer::make_state(Rng rng, InnerWorkspace& ws) const {
  UnrollState st(model_->layout(), opt_.config(), rng);
  reinit_state(st, ws);
  return st;
}

TruncationResult OuterTrainer::run_truncation(std::span<const double> theta, UnrollState& state,
                                              std::int64_t len, InnerWorkspace& ws,
                                              std::vector<double>& grad_buf) const {
  if (len <= 0) throw std::invalid_argument("run_truncation: length must be positive");
  grad_buf.resize(static_cast<std::size_t>(model_->n_params()));

  TruncationResult res;
  double loss_sum = 0.0;
  ImageBatch batch;
  for (std::int64_t i = 1; i <= len; ++i) {
    if (state.steps_done >= cfg_.horizon) reinit_state(state, ws);
    sample_minibatch(data_->train, cfg_.inner_batch, state.rng, batch);
    learned_inner_step(*model_, batch, opt_, theta, state.opt_state, state.w, grad_buf, ws);
    ++state.steps_done;
    if (i % cfg_.eval_every == 0 || i == len) {
      const double l = outer_loss(state, ws);
      const double threshold = cfg_.abort_factor * state.initial_outer_loss;
      if (!std::isfinite(l) || l > threshold) {
        loss_sum += threshold;  // record the cap, not the blow-up
        ++res.n_aborts;
        reinit_state(state, ws);
      } else {
        loss_sum += l;
      }
      ++res.n_evals;
    }
  }
  res.mean_outer_loss = loss_sum / static_cast<double>(res.n_evals);
  return res;
}

namespace {

struct PairOutcome {
  double loss_plus = 0.0, loss_minus = 0.0;
  double len = 0.0;
  int aborts = 0;
};

}  // namespace

OuterResult OuterTrainer::train(std::span<const double> theta0,
                                const IterCallback& on_iter) const {
  if (static_cast<std::int64_t>(theta0.size()) != opt_.theta_dim())
    throw std::invalid_argument("OuterTrainer: theta0 has wrong length");
  return cfg_.async ? train_async(theta0, on_iter) : train_sync(theta0, on_iter);
}

OuterResult OuterTrainer::train_sync(std::span<const double> theta0,
                                     const IterCallback& on_iter) const {
  const std::int64_t d = opt_.theta_dim();
  const int pairs = cfg_.pairs_per_batch;
  std::vector<double> theta(theta0.begin(), theta0.end());
  AdamState adam(d, cfg_.outer_adam);
  Rng master(mix64(cfg_.seed) ^ 0x6f757465725f6573ULL);

  struct Slot {
    UnrollState state;
    InnerWorkspace ws;
    std::vector<double> grad_buf;
    Slot(UnrollState s) : state(std::move(s)) {}
  };
  std::vector<Slot> slots;
  slots.reserve(static_cast<std::size_t>(pairs));
  {
    InnerWorkspace init_ws;
    for (int s = 0; s < pairs; ++s) slots.emplace_back(make_state(master.split(), init_ws));
  }

  ThreadPool pool(cfg_.workers);
  std::vector<double> eps(static_cast<std::size_t>(pairs) * d);
  std::vector<std::int64_t> lens(static_cast<std::size_t>(pairs));
  std::vector<PairOutcome> outcomes(static_cast<std::size_t>(pairs));
  std::vector<UnrollState> carried(slots.size(), slots.front().state);
  std::vector<double> grad(static_cast<std::size_t>(d));

  OuterResult out;
  const auto t_start = std::chrono::steady_clock::now();

  for (std::int64_t k = 0; k < cfg_.outer_iters; ++k) {
    // all master draws happen here, in slot order, so results do not depend
    // on how the pool schedules the work
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(pairs) * d; ++i)
      eps[static_cast<std::size_t>(i)] = master.normal();
    for (int s = 0; s < pairs; ++s) lens[static_cast<std::size_t>(s)] = truncation_length(cfg_.schedule, k, master);

    pool.parallel_for(pairs, [&](int s) {
      Slot& slot = slots[static_cast<std::size_t>(s)];
      const double* e = eps.data() + static_cast<std::size_t>(s) * d;
      std::vector<double> theta_p(theta), theta_m(theta);
      for (std::int64_t j = 0; j < d; ++j) {
        theta_p[static_cast<std::size_t>(j)] += cfg_.sigma_es * e[j];
        theta_m[static_cast<std::size_t>(j)] -= cfg_.sigma_es * e[j];
      }
      UnrollState pos = slot.state;
      UnrollState neg = slot.state;
      const auto rp = run_truncation(theta_p, pos, lens[static_cast<std::size_t>(s)], slot.ws, slot.grad_buf);
      const auto rm = run_truncation(theta_m, neg, lens[static_cast<std::size_t>(s)], slot.ws, slot.grad_buf);
      outcomes[static_cast<std::size_t>(s)] = {rp.mean_outer_loss, rm.mean_outer_loss,
                                               static_cast<double>(lens[static_cast<std::size_t>(s)]),
                                               rp.n_aborts + rm.n_aborts};
      carried[static_cast<std::size_t>(s)] = std::move(pos);
    });

    std::fill(grad.begin(), grad.end(), 0.0);
    double loss_acc = 0.0, len_acc = 0.0;
    std::int64_t aborts = 0;
    for (int s = 0; s < pairs; ++s) {
      const auto& o = outcomes[static_cast<std::size_t>(s)];
      const double coef =
          (o.loss_plus - o.loss_minus) / (2.0 * cfg_.sigma_es * static_cast<double>(pairs));
      axpy(coef, std::span<const double>(eps.data() + static_cast<std::size_t>(s) * d, static_cast<std::size_t>(d)), grad);
      loss_acc += 0.5 * (o.loss_plus + o.loss_minus);
      len_acc += o.len;
      aborts += o.aborts;
      slots[static_cast<std::size_t>(s)].state = std::move(carried[static_cast<std::size_t>(s)]);
    }
    if (!all_finite(grad))
      throw std::runtime_error("outer training produced a non-finite gradient at iteration " +
                               std::to_string(k));
    adam.step(theta, grad);

    OuterLogRow row;
    row.outer_iter = k;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    row.trunc_len = len_acc / pairs;
    row.mean_outer_loss = loss_acc / pairs;
    row.n_aborts = aborts;
    out.log.push_back(row);
    if (on_iter) on_iter(row, theta);
  }
  out.theta = std::move(theta);
  return out;
}

OuterResult OuterTrainer::train_async(std::span<const double> theta0,
                                      const IterCallback& on_iter) const {
  const std::int64_t d = opt_.theta_dim();
  const int pairs = cfg_.pairs_per_batch;
  std::vector<double> theta(theta0.begin(), theta0.end());
  AdamState adam(d, cfg_.outer_adam);
  Rng master(mix64(cfg_.seed) ^ 0x6f757465725f6573ULL);

  struct Slot {
    UnrollState state;
    Rng es_rng;
    InnerWorkspace ws;
    std::vector<double> grad_buf;
    Slot(UnrollState s, Rng r) : state(std::move(s)), es_rng(r) {}
  };
  std::vector<Slot> slots;
  slots.reserve(static_cast<std::size_t>(pairs));
  {
    InnerWorkspace init_ws;
    for (int s = 0; s < pairs; ++s) {
      Rng es = master.split();
      slots.emplace_back(make_state(master.split(), init_ws), es);
    }
  }

  struct Contribution {
    std::vector<double> term;  // eps * (Lp - Lm) / (2 sigma)
    double mean_loss = 0.0, len = 0.0;
    int aborts = 0;
    std::int64_t version = 0;
  };

  std::mutex mu;
  std::condition_variable slot_cv, inbox_cv;
  std::deque<int> free_slots;
  std::deque<Contribution> inbox;
  bool stop = false;
  std::int64_t version = 0;
  for (int s = 0; s < pairs; ++s) free_slots.push_back(s);

  auto worker = [&] {
    std::vector<double> theta_snap;
    for (;;) {
      int s;
      std::int64_t v;
      {
        std::unique_lock lock(mu);
        slot_cv.wait(lock, [&] { return stop || !free_slots.empty(); });
        if (stop) return;
        s = free_slots.front();
        free_slots.pop_front();
        theta_snap = theta;
        v = version;
      }
      Slot& slot = slots[static_cast<std::size_t>(s)];
      Contribution c;
      c.version = v;
      c.term.resize(static_cast<std::size_t>(d));
      std::vector<double> eps(static_cast<std::size_t>(d));
      for (auto& e : eps) e = slot.es_rng.normal();
      const std::int64_t len = truncation_length(cfg_.schedule, std::min(v, cfg_.outer_iters - 1), slot.es_rng);

      std::vector<double> theta_p(theta_snap), theta_m(theta_snap);
      for (std::int64_t j = 0; j < d; ++j) {
        theta_p[static_cast<std::size_t>(j)] += cfg_.sigma_es * eps[static_cast<std::size_t>(j)];
        theta_m[static_cast<std::size_t>(j)] -= cfg_.sigma_es * eps[static_cast<std::size_t>(j)];
      }
      UnrollState pos = slot.state;
      UnrollState neg = slot.state;
      const auto rp = run_truncation(theta_p, pos, len, slot.ws, slot.grad_buf);
      const auto rm = run_truncation(theta_m, neg, len, slot.ws, slot.grad_buf);
      slot.state = std::move(pos);

      const double coef = (rp.mean_outer_loss - rm.mean_outer_loss) / (2.0 * cfg_.sigma_es);
      for (std::int64_t j = 0; j < d; ++j) c.term[static_cast<std::size_t>(j)] = coef * eps[static_cast<std::size_t>(j)];
      c.mean_loss = 0.5 * (rp.mean_outer_loss + rm.mean_outer_loss);
      c.len = static_cast<double>(len);
      c.aborts = rp.n_aborts + rm.n_aborts;
      {
        std::lock_guard lock(mu);
        inbox.push_back(std::move(c));
        free_slots.push_back(s);
      }
      inbox_cv.notify_one();
      slot_cv.notify_one();
    }
  };

  OuterResult out;
  const auto t_start = std::chrono::steady_clock::now();
  {
    ThreadPool pool(cfg_.workers);
    for (int i = 0; i < cfg_.workers; ++i) pool.submit(worker);

    std::vector<double> grad(static_cast<std::size_t>(d));
    for (std::int64_t k = 0; k < cfg_.outer_iters; ++k) {
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss_acc = 0.0, len_acc = 0.0;
      std::int64_t aborts = 0;
      int taken = 0;
      while (taken < pairs) {
        Contribution c;
        {
          std::unique_lock lock(mu);
          inbox_cv.wait(lock, [&] { return !inbox.empty(); });
          c = std::move(inbox.front());
          inbox.pop_front();
        }
        if (version - c.version > cfg_.max_staleness) continue;  // too stale, drop
        axpy(1.0 / pairs, c.term, grad);
        loss_acc += c.mean_loss;
        len_acc += c.len;
        aborts += c.aborts;
        ++taken;
      }
      if (!all_finite(grad))
        throw std::runtime_error("outer training produced a non-finite gradient at iteration " +
                                 std::to_string(k));
      {
        std::lock_guard lock(mu);
        adam.step(theta, grad);
        ++version;
      }

      OuterLogRow row;
      row.outer_iter = k;
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      row.trunc_len = len_acc / pairs;
      row.mean_outer_loss = loss_acc / pairs;
      row.n_aborts = aborts;
      out.log.push_back(row);
      if (on_iter) on_iter(row, theta);
    }
    {
      std::lock_guard lock(mu);
      stop = true;
    }
    slot_cv.notify_all();
  }  // pool joins here
  out.theta = std::move(theta);
  return out;
}

std::vector<double> es_gradient(const EsObjective& f, std::span<const double> theta, double sigma,
                                int pairs, Rng& master, ThreadPool* pool) {
  if (sigma <= 0.0) throw std::invalid_argument("es_gradient: sigma must be positive");
  if (pairs <= 0) throw std::invalid_argument("es_gradient: need at least one pair");
  const std::int64_t d = static_cast<std::int64_t>(theta.size());
  std::vector<double> eps(static_cast<std::size_t>(pairs) * d);
  for (auto& e : eps) e = master.normal();

  std::vector<double> lp(static_cast<std::size_t>(pairs)), lm(static_cast<std::size_t>(pairs));
  auto eval_pair = [&](int i) {
    std::vector<double> point(theta.begin(), theta.end());
    const double* e = eps.data() + static_cast<std::size_t>(i) * d;
    for (std::int64_t j = 0; j < d; ++j) point[static_cast<std::size_t>(j)] += sigma * e[j];
    lp[static_cast<std::size_t>(i)] = f(i, point, true);
    for (std::int64_t j = 0; j < d; ++j) point[static_cast<std::size_t>(j)] -= 2.0 * sigma * e[j];
    lm[static_cast<std::size_t>(i)] = f(i, point, false);
  };
  if (pool)
    pool->parallel_for(pairs, eval_pair);
  else
    for (int i = 0; i < pairs; ++i) eval_pair(i);

  for (int i = 0; i < pairs; ++i)
    if (!std::isfinite(lp[static_cast<std::size_t>(i)]) || !std::isfinite(lm[static_cast<std::size_t>(i)]))
      throw std::runtime_error("es_gradient: objective returned a non-finite value");

  std::vector<double> grad(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < pairs; ++i) {
    const double coef = (lp[static_cast<std::size_t>(i)] - lm[static_cast<std::size_t>(i)]) /
                        (2.0 * sigma * static_cast<double>(pairs));
    axpy(coef, std::span<const double>(eps.data() + static_cast<std::size_t>(i) * d, static_cast<std::size_t>(d)), grad);
  }
  return grad;
}

int select_best_seed(const std::vector<std::vector<OuterLogRow>>& logs, int last_k) {
  if (logs.empty()) throw std::invalid_argument("select_best_seed: no logs");
  if (last_k <= 0) throw std::invalid_argument("select_best_seed: last_k must be positive");
  int best = -1;
  double best_mean = 0.0;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    if (logs[i].empty()) throw std::invalid_argument("select_best_seed: empty log");
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(last_k), logs[i].size());
    double sum = 0.0;
    for (std::size_t r = logs[i].size() - n; r < logs[i].size(); ++r) sum += logs[i][r].mean_outer_loss;
    const double mean = sum / static_cast<double>(n);
    if (best < 0 || mean < best_mean) {
      best = static_cast<int>(i);
      best_mean = mean;
    }
  }
  return best;
}

void write_outer_log_csv(const std::string& path, std::span<const OuterLogRow> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "outer_iter,wall_seconds,trunc_len,mean_outer_loss,n_aborts\n";
  for (const auto& r : rows)
    out << r.outer_iter << ',' << fmt_g17(r.wall_seconds) << ',' << fmt_g17(r.trunc_len) << ','
        << fmt_g17(r.mean_outer_loss) << ',' << r.n_aborts << '\n';
  if (!out) throw std::runtime_error("short write on " + path);
}

}  // namespace metaopt
