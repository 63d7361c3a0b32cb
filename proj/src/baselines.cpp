#include "geia/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <spdlog/spdlog.h>

#include "geia/checkpoint.hpp"
#include "geia/errors.hpp"
#include "geia/kernels.hpp"
#include "geia/rng.hpp"
#include "geia/textops.hpp"

namespace geia {

using nlohmann::json;
namespace k = kernels;

// ---------------------------------------------------------------- vocab

WordVocab::WordVocab(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<int>(i)).second)
      throw ConfigError("duplicate word in vocabulary: " + words_[i]);
  }
}

WordVocab WordVocab::from_texts(const std::vector<std::string>& texts) {
  std::vector<std::string> all;
  for (const auto& t : texts) {
    for (auto& w : word_tokens(t)) all.push_back(std::move(w));
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return WordVocab(std::move(all));
}

int WordVocab::index(const std::string& w) const {
  auto it = index_.find(w);
  return it == index_.end() ? -1 : it->second;
}

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void normal_fill(std::span<double> dst, double stddev, Rng& rng) {
  for (double& v : dst) v = rng.normal() * stddev;
}

void check_embeddings(const std::vector<EmbeddingVector>& embeddings,
                      const std::vector<std::string>& texts) {
  if (embeddings.size() != texts.size())
    throw DataError("embeddings and texts differ in count");
  if (embeddings.empty()) throw DataError("empty training stream");
  const std::size_t d = embeddings.front().dim();
  for (const auto& e : embeddings) {
    if (e.dim() != d) throw DataError("training embeddings differ in dimension");
  }
}

// Shared minibatch loop: per-epoch seeded shuffle, Adam on the full
// parameter vector. `step` returns the batch loss and fills gradients.
template <typename StepFn>
TrainingLog run_epochs(std::size_t n, std::vector<double>& params, const TrainConfig& cfg,
                       const char* name, StepFn step) {
  TrainingLog log;
  std::vector<double> grad(params.size());
  Adam adam(params.size(), AdamConfig{cfg.learning_rate});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + bs)));
      loss += step(idx, grad);
      adam.step(params, grad);
      ++batches;
      ++log.steps;
    }
    log.epoch_loss.push_back(loss / static_cast<double>(batches));
    spdlog::debug("{} epoch {} loss {:.5f}", name, epoch + 1, log.epoch_loss.back());
  }
  return log;
}

std::vector<std::string> texts_of(const std::vector<SentenceRecord>& records) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.text);
  return out;
}

}  // namespace

// ------------------------------------------------------------------ MLC

MLCModel::MLCModel(WordVocab vocab, std::string victim_id, int victim_dim)
    : vocab_(std::move(vocab)), victim_id_(std::move(victim_id)), victim_dim_(victim_dim) {
  if (victim_dim_ < 1) throw ConfigError("victim dimension must be positive");
  if (vocab_.size() == 0) throw DataError("MLC vocabulary is empty");
  params_.assign(param_count(), 0.0);
}

std::size_t MLCModel::param_count() const {
  const auto d = static_cast<std::size_t>(victim_dim_), v = vocab_.size();
  return d * d + d + d * v + v;
}

void MLCModel::set_threshold(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
  threshold_ = t;
}

void MLCModel::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 2));
  const auto d = static_cast<std::size_t>(victim_dim_), v = vocab_.size();
  std::fill(params_.begin(), params_.end(), 0.0);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  normal_fill(std::span(params_).subspan(0, d * d), s, rng);
  normal_fill(std::span(params_).subspan(d * d + d, d * v), s, rng);
}

std::vector<std::vector<double>> MLCModel::probabilities(
    const std::vector<EmbeddingVector>& x) const {
  const auto d = static_cast<std::size_t>(victim_dim_), v = vocab_.size(), b = x.size();
  std::span<const double> p(params_);
  std::vector<double> in(b * d), h(b * d), z(b * v);
  for (std::size_t i = 0; i < b; ++i) {
    if (x[i].dim() != d) throw ConfigError("embedding dimension does not match the MLC model");
    std::copy(x[i].values.begin(), x[i].values.end(), in.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  k::gemm(in, p.subspan(0, d * d), h, b, d, d);
  k::add_row_bias(h, p.subspan(d * d, d), b, d);
  for (double& a : h) a = std::max(a, 0.0);
  k::gemm(h, p.subspan(d * d + d, d * v), z, b, d, v);
  k::add_row_bias(z, p.subspan(d * d + d + d * v, v), b, v);
  std::vector<std::vector<double>> out(b, std::vector<double>(v));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < v; ++j) out[i][j] = sigmoid(z[i * v + j]);
  return out;
}

double MLCModel::loss_and_grad(const std::vector<const EmbeddingVector*>& x,
                               const std::vector<std::vector<double>>& targets,
                               std::vector<double>& grad) const {
  const auto d = static_cast<std::size_t>(victim_dim_), v = vocab_.size(), b = x.size();
  if (b == 0 || targets.size() != b) throw DataError("malformed MLC batch");
  grad.assign(params_.size(), 0.0);
  std::span<const double> p(params_);
  std::span<double> g(grad);
  std::vector<double> in(b * d), a1(b * d), h(b * d), z(b * v);
  for (std::size_t i = 0; i < b; ++i)
    std::copy(x[i]->values.begin(), x[i]->values.end(), in.begin() + static_cast<std::ptrdiff_t>(i * d));
  k::gemm(in, p.subspan(0, d * d), a1, b, d, d);
  k::add_row_bias(a1, p.subspan(d * d, d), b, d);
  for (std::size_t i = 0; i < a1.size(); ++i) h[i] = std::max(a1[i], 0.0);
  k::gemm(h, p.subspan(d * d + d, d * v), z, b, d, v);
  k::add_row_bias(z, p.subspan(d * d + d + d * v, v), b, v);

  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  std::vector<double> dz(b * v);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < v; ++j) {
      const double zz = z[i * v + j], y = targets[i][j];
      loss += std::max(zz, 0.0) - zz * y + std::log1p(std::exp(-std::abs(zz)));
      dz[i * v + j] = (sigmoid(zz) - y) * inv_b;
    }
  }
  k::gemm_at(h, dz, g.subspan(d * d + d, d * v), d, b, v);
  k::column_sum(dz, g.subspan(d * d + d + d * v, v), b, v);
  std::vector<double> dh(b * d);
  k::gemm_bt(dz, p.subspan(d * d + d, d * v), dh, b, v, d);
  for (std::size_t i = 0; i < dh.size(); ++i)
    if (a1[i] <= 0.0) dh[i] = 0.0;
  k::gemm_at(in, dh, g.subspan(0, d * d), d, b, d);
  k::column_sum(dh, g.subspan(d * d, d), b, d);
  return loss * inv_b;
}

std::vector<double> multi_hot(const WordVocab& vocab, const std::vector<std::string>& words) {
  std::vector<double> y(vocab.size(), 0.0);
  for (const auto& w : words) {
    const int i = vocab.index(w);
    if (i >= 0) y[static_cast<std::size_t>(i)] = 1.0;
  }
  return y;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(i * 0.05);
  return grid;
}

MLCModel train_mlc_on(const std::vector<EmbeddingVector>& embeddings,
                      const std::vector<std::string>& texts, const TrainConfig& cfg,
                      TrainingLog* log) {
  cfg.validate();
  check_embeddings(embeddings, texts);
  MLCModel model(WordVocab::from_texts(texts), embeddings.front().victim_id,
                 static_cast<int>(embeddings.front().dim()));
  model.init(cfg.seed);
  std::vector<std::vector<double>> targets;
  targets.reserve(texts.size());
  for (const auto& t : texts) targets.push_back(multi_hot(model.vocab(), word_tokens(t)));

  TrainingLog l = run_epochs(
      texts.size(), model.params(), cfg, "mlc",
      [&](const std::vector<std::size_t>& idx, std::vector<double>& grad) {
        std::vector<const EmbeddingVector*> xs;
        std::vector<std::vector<double>> ys;
        for (std::size_t i : idx) {
          xs.push_back(&embeddings[i]);
          ys.push_back(targets[i]);
        }
        return model.loss_and_grad(xs, ys, grad);
      });
  if (log) *log = std::move(l);
  return model;
}

MLCModel train_mlc(const VictimRegistry& registry, const std::string& victim_id,
                   const std::vector<SentenceRecord>& train_records, const TrainConfig& cfg,
                   TrainingLog* log) {
  cfg.validate();
  if (train_records.empty()) throw DataError("empty training stream");
  const auto texts = texts_of(train_records);
  const std::string before = registry.snapshot_checksum(victim_id);
  MLCModel m = train_mlc_on(registry.embed(victim_id, texts), texts, cfg, log);
  if (log) {
    log->victim_checksum_before = before;
    log->victim_checksum_after = registry.snapshot_checksum(victim_id);
  }
  return m;
}

double tune_threshold(const MLCModel& model, const std::vector<EmbeddingVector>& dev_embeddings,
                      const std::vector<std::string>& dev_texts, const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("threshold grid is empty");
  if (dev_embeddings.empty()) throw DataError("dev split is empty");
  if (dev_embeddings.size() != dev_texts.size())
    throw DataError("dev embeddings and texts differ in count");
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  const auto probs = model.probabilities(dev_embeddings);
  std::vector<TokenBag> gold;
  for (const auto& t : dev_texts) gold.push_back(word_tokens(t));

  double best_t = sorted.front(), best_f1 = -1.0;
  for (double t : sorted) {
    std::vector<TokenBag> pred(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i)
      for (std::size_t j = 0; j < probs[i].size(); ++j)
        if (probs[i][j] >= t) pred[i].push_back(model.vocab().word(j));
    const double f1 = micro_prf1(pred, gold).f1;
    spdlog::debug("mlc threshold {:.2f} dev F1 {:.4f}", t, f1);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_t = t;
    }
  }
  return best_t;
}

TokenBag predict_mlc(const MLCModel& model, const EmbeddingVector& embedding) {
  return predict_mlc(model, embedding, model.threshold());
}

TokenBag predict_mlc(const MLCModel& model, const EmbeddingVector& embedding, double threshold) {
  const auto probs = model.probabilities({embedding});
  TokenBag out;
  for (std::size_t j = 0; j < probs[0].size(); ++j)
    if (probs[0][j] >= threshold) out.push_back(model.vocab().word(j));
  return out;
}

// ------------------------------------------------------------------ MSP

namespace {

// Offsets of the MSP parameter blocks.
struct MspLayout {
  std::size_t d, r, v;
  std::size_t emb, wi, bi, wx, uzr, uh, bg, wo, bo, total;

  MspLayout(std::size_t d_, std::size_t r_, std::size_t v_) : d(d_), r(r_), v(v_) {
    std::size_t o = 0;
    auto take = [&](std::size_t n) {
      const std::size_t at = o;
      o += n;
      return at;
    };
    emb = take((v + 1) * r);  // row v is the start symbol
    wi = take(d * r);
    bi = take(r);
    wx = take(r * 3 * r);  // z | r | candidate
    uzr = take(r * 2 * r);
    uh = take(r * r);
    bg = take(3 * r);
    wo = take(r * v);
    bo = take(v);
    total = o;
  }
};

struct MspStep {
  std::vector<int> input;                    // b
  std::vector<double> x, h, z, rr, hh, rh;   // b x r each
  std::vector<double> dlogits;               // b x v
};

}  // namespace

MSPModel::MSPModel(WordVocab vocab, std::string victim_id, int victim_dim, MSPSpec spec)
    : vocab_(std::move(vocab)), victim_id_(std::move(victim_id)), victim_dim_(victim_dim),
      spec_(spec) {
  if (victim_dim_ < 1) throw ConfigError("victim dimension must be positive");
  if (spec_.steps < 1) throw ConfigError("MSP steps must be >= 1");
  if (spec_.recurrent_dim == 0) spec_.recurrent_dim = victim_dim_;
  if (spec_.recurrent_dim < 1) throw ConfigError("MSP recurrent dimension must be positive");
  if (vocab_.size() == 0) throw DataError("MSP vocabulary is empty");
  params_.assign(param_count(), 0.0);
}

std::size_t MSPModel::param_count() const {
  return MspLayout(static_cast<std::size_t>(victim_dim_),
                   static_cast<std::size_t>(spec_.recurrent_dim), vocab_.size())
      .total;
}

void MSPModel::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 3));
  const MspLayout L(static_cast<std::size_t>(victim_dim_),
                    static_cast<std::size_t>(spec_.recurrent_dim), vocab_.size());
  std::span<double> p(params_);
  std::fill(params_.begin(), params_.end(), 0.0);
  const double sr = 1.0 / std::sqrt(static_cast<double>(L.r));
  normal_fill(p.subspan(L.emb, (L.v + 1) * L.r), sr, rng);
  normal_fill(p.subspan(L.wi, L.d * L.r), 1.0 / std::sqrt(static_cast<double>(L.d)), rng);
  normal_fill(p.subspan(L.wx, L.r * 3 * L.r), sr, rng);
  normal_fill(p.subspan(L.uzr, L.r * 2 * L.r), sr, rng);
  normal_fill(p.subspan(L.uh, L.r * L.r), sr, rng);
  normal_fill(p.subspan(L.wo, L.r * L.v), sr, rng);
}

namespace {

// One GRU step for a batch. Fills the step cache and returns the new state.
std::vector<double> gru_step(const MspLayout& L, std::span<const double> p, MspStep& s) {
  const std::size_t b = s.input.size(), r = L.r;
  s.x.assign(b * r, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const auto row = p.subspan(L.emb + static_cast<std::size_t>(s.input[i]) * r, r);
    std::copy(row.begin(), row.end(), s.x.begin() + static_cast<std::ptrdiff_t>(i * r));
  }
  std::vector<double> gx(b * 3 * r), gh(b * 2 * r), ah(b * r);
  k::gemm(s.x, p.subspan(L.wx, r * 3 * r), gx, b, r, 3 * r);
  k::add_row_bias(gx, p.subspan(L.bg, 3 * r), b, 3 * r);
  k::gemm(s.h, p.subspan(L.uzr, r * 2 * r), gh, b, r, 2 * r);
  s.z.resize(b * r);
  s.rr.resize(b * r);
  s.rh.resize(b * r);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      s.z[i * r + j] = sigmoid(gx[i * 3 * r + j] + gh[i * 2 * r + j]);
      s.rr[i * r + j] = sigmoid(gx[i * 3 * r + r + j] + gh[i * 2 * r + r + j]);
      s.rh[i * r + j] = s.rr[i * r + j] * s.h[i * r + j];
    }
  }
  k::gemm(s.rh, p.subspan(L.uh, r * r), ah, b, r, r);
  s.hh.resize(b * r);
  std::vector<double> hn(b * r);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      const std::size_t q = i * r + j;
      s.hh[q] = std::tanh(ah[q] + gx[i * 3 * r + 2 * r + j]);
      hn[q] = (1.0 - s.z[q]) * s.h[q] + s.z[q] * s.hh[q];
    }
  }
  return hn;
}

std::vector<double> initial_state(const MspLayout& L, std::span<const double> p,
                                  std::span<const double> x, std::size_t b) {
  std::vector<double> h(b * L.r);
  k::gemm(x, p.subspan(L.wi, L.d * L.r), h, b, L.d, L.r);
  k::add_row_bias(h, p.subspan(L.bi, L.r), b, L.r);
  for (double& v : h) v = std::tanh(v);
  return h;
}

std::vector<double> output_log_probs(const MspLayout& L, std::span<const double> p,
                                     std::span<const double> h, std::size_t b) {
  std::vector<double> logits(b * L.v), lp(b * L.v);
  k::gemm(h, p.subspan(L.wo, L.r * L.v), logits, b, L.r, L.v);
  k::add_row_bias(logits, p.subspan(L.bo, L.v), b, L.v);
  k::log_softmax_rows(logits, lp, b, L.v);
  return lp;
}

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace

double MSPModel::loss_and_grad(const std::vector<const EmbeddingVector*>& x,
                               const std::vector<std::vector<int>>& gold,
                               std::vector<double>& grad) const {
  const MspLayout L(static_cast<std::size_t>(victim_dim_),
                    static_cast<std::size_t>(spec_.recurrent_dim), vocab_.size());
  const std::size_t b = x.size(), r = L.r, v = L.v, T = static_cast<std::size_t>(spec_.steps);
  if (b == 0 || gold.size() != b) throw DataError("malformed MSP batch");
  std::span<const double> p(params_);
  grad.assign(params_.size(), 0.0);
  std::span<double> g(grad);

  std::vector<double> in(b * L.d);
  for (std::size_t i = 0; i < b; ++i) {
    if (gold[i].empty()) throw DataError("MSP sample with no gold words");
    std::copy(x[i]->values.begin(), x[i]->values.end(), in.begin() + static_cast<std::ptrdiff_t>(i * L.d));
  }
  const std::vector<double> h0 = initial_state(L, p, in, b);

  std::vector<std::map<int, int>> remaining(b);
  for (std::size_t i = 0; i < b; ++i)
    for (int w : gold[i]) ++remaining[i][w];

  const double scale = 1.0 / (static_cast<double>(T) * static_cast<double>(b));
  double loss = 0.0;
  std::vector<MspStep> steps(T);
  std::vector<double> h = h0;
  std::vector<int> next(b, static_cast<int>(v));
  std::vector<std::vector<double>> states;  // h after each step
  for (std::size_t t = 0; t < T; ++t) {
    MspStep& s = steps[t];
    s.input = next;
    s.h = h;
    h = gru_step(L, p, s);
    states.push_back(h);
    const auto lp = output_log_probs(L, p, h, b);
    s.dlogits.assign(b * v, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      const std::span<const double> row(lp.data() + i * v, v);
      auto& rem = remaining[i];
      int size = 0;
      for (const auto& [w, c] : rem) size += c;
      if (size == 0) {
        next[i] = static_cast<int>(argmax_row(row));
        continue;
      }
      int pick = -1;
      for (const auto& [w, c] : rem) {
        const double q = static_cast<double>(c) / size;
        loss -= q * row[static_cast<std::size_t>(w)];
        s.dlogits[i * v + static_cast<std::size_t>(w)] -= q * scale;
        if (pick < 0 || row[static_cast<std::size_t>(w)] > row[static_cast<std::size_t>(pick)]) pick = w;
      }
      for (std::size_t j = 0; j < v; ++j) s.dlogits[i * v + j] += std::exp(row[j]) * scale;
      if (--rem[pick] == 0) rem.erase(pick);
      next[i] = pick;
    }
  }

  // Backpropagation through time.
  std::vector<double> dh(b * r, 0.0), tmp(b * r);
  for (std::size_t t = T; t-- > 0;) {
    const MspStep& s = steps[t];
    k::gemm_at(states[t], s.dlogits, g.subspan(L.wo, r * v), r, b, v, true);
    k::column_sum(s.dlogits, g.subspan(L.bo, v), b, v, true);
    k::gemm_bt(s.dlogits, p.subspan(L.wo, r * v), dh, b, v, r, true);

    std::vector<double> dgx(b * 3 * r), dgh(b * 2 * r), dah(b * r), dprev(b * r);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < r; ++j) {
        const std::size_t q = i * r + j;
        const double dz = dh[q] * (s.hh[q] - s.h[q]);
        dah[q] = dh[q] * s.z[q] * (1.0 - s.hh[q] * s.hh[q]);
        dprev[q] = dh[q] * (1.0 - s.z[q]);
        const double daz = dz * s.z[q] * (1.0 - s.z[q]);
        dgx[i * 3 * r + j] = daz;
        dgh[i * 2 * r + j] = daz;
        dgx[i * 3 * r + 2 * r + j] = dah[q];
      }
    }
    std::vector<double> drh(b * r);
    k::gemm_bt(dah, p.subspan(L.uh, r * r), drh, b, r, r);
    k::gemm_at(s.rh, dah, g.subspan(L.uh, r * r), r, b, r, true);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < r; ++j) {
        const std::size_t q = i * r + j;
        const double dr = drh[q] * s.h[q];
        dprev[q] += drh[q] * s.rr[q];
        const double dar = dr * s.rr[q] * (1.0 - s.rr[q]);
        dgx[i * 3 * r + r + j] = dar;
        dgh[i * 2 * r + r + j] = dar;
      }
    }
    k::gemm_at(s.x, dgx, g.subspan(L.wx, r * 3 * r), r, b, 3 * r, true);
    k::column_sum(dgx, g.subspan(L.bg, 3 * r), b, 3 * r, true);
    std::vector<double> dx(b * r);
    k::gemm_bt(dgx, p.subspan(L.wx, r * 3 * r), dx, b, 3 * r, r);
    for (std::size_t i = 0; i < b; ++i) {
      double* row = grad.data() + L.emb + static_cast<std::size_t>(s.input[i]) * r;
      for (std::size_t j = 0; j < r; ++j) row[j] += dx[i * r + j];
    }
    k::gemm_at(s.h, dgh, g.subspan(L.uzr, r * 2 * r), r, b, 2 * r, true);
    k::gemm_bt(dgh, p.subspan(L.uzr, r * 2 * r), dprev, b, 2 * r, r, true);
    dh.swap(dprev);
  }
  for (std::size_t q = 0; q < dh.size(); ++q) dh[q] *= 1.0 - h0[q] * h0[q];
  k::gemm_at(in, dh, g.subspan(L.wi, L.d * r), L.d, b, r, true);
  k::column_sum(dh, g.subspan(L.bi, r), b, r, true);
  return loss * scale;
}

std::vector<int> MSPModel::predict_indices(const EmbeddingVector& x) const {
  const MspLayout L(static_cast<std::size_t>(victim_dim_),
                    static_cast<std::size_t>(spec_.recurrent_dim), vocab_.size());
  if (x.dim() != L.d) throw ConfigError("embedding dimension does not match the MSP model");
  std::span<const double> p(params_);
  std::vector<double> h = initial_state(L, p, x.values, 1);
  MspStep s;
  s.input = {static_cast<int>(L.v)};
  std::vector<int> out;
  for (int t = 0; t < spec_.steps; ++t) {
    s.h = h;
    h = gru_step(L, p, s);
    const auto lp = output_log_probs(L, p, h, 1);
    const int w = static_cast<int>(argmax_row(lp));
    out.push_back(w);
    s.input = {w};
  }
  return out;
}

MSPModel train_msp_on(const std::vector<EmbeddingVector>& embeddings,
                      const std::vector<std::string>& texts, const TrainConfig& cfg,
                      const MSPSpec& spec, TrainingLog* log) {
  cfg.validate();
  check_embeddings(embeddings, texts);
  MSPModel model(WordVocab::from_texts(texts), embeddings.front().victim_id,
                 static_cast<int>(embeddings.front().dim()), spec);
  model.init(cfg.seed);

  std::vector<std::size_t> kept;
  std::vector<std::vector<int>> gold(texts.size());
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (const auto& w : word_tokens(texts[i]))
      if (const int id = model.vocab().index(w); id >= 0) gold[i].push_back(id);
    if (gold[i].empty()) {
      spdlog::info("msp: skipping sample {} with no words", i);
      ++skipped;
    } else {
      kept.push_back(i);
    }
  }
  if (kept.empty()) throw DataError("no MSP training sample has words");

  TrainingLog l = run_epochs(
      kept.size(), model.params(), cfg, "msp",
      [&](const std::vector<std::size_t>& idx, std::vector<double>& grad) {
        std::vector<const EmbeddingVector*> xs;
        std::vector<std::vector<int>> ys;
        for (std::size_t i : idx) {
          xs.push_back(&embeddings[kept[i]]);
          ys.push_back(gold[kept[i]]);
        }
        return model.loss_and_grad(xs, ys, grad);
      });
  l.skipped_records = skipped;
  if (log) *log = std::move(l);
  return model;
}

MSPModel train_msp(const VictimRegistry& registry, const std::string& victim_id,
                   const std::vector<SentenceRecord>& train_records, const TrainConfig& cfg,
                   const MSPSpec& spec, TrainingLog* log) {
  cfg.validate();
  if (train_records.empty()) throw DataError("empty training stream");
  const auto texts = texts_of(train_records);
  const std::string before = registry.snapshot_checksum(victim_id);
  MSPModel m = train_msp_on(registry.embed(victim_id, texts), texts, cfg, spec, log);
  if (log) {
    log->victim_checksum_before = before;
    log->victim_checksum_after = registry.snapshot_checksum(victim_id);
  }
  return m;
}

TokenBag predict_msp(const MSPModel& model, const EmbeddingVector& embedding) {
  TokenBag out;
  for (int i : model.predict_indices(embedding))
    out.push_back(model.vocab().word(static_cast<std::size_t>(i)));
  return out;
}

// ------------------------------------------------------------ checkpoints

void save_mlc(const MLCModel& model, const std::filesystem::path& dir) {
  json fields{{"victim_id", model.victim_id()},
              {"victim_dim", model.victim_dim()},
              {"hidden_dims", {model.hidden_dim()}},
              {"output_dim", model.output_dim()},
              {"threshold", model.threshold()},
              {"vocab", model.vocab().words()}};
  write_checkpoint(dir, "MLC", std::move(fields), model.params());
}

MLCModel load_mlc(const std::filesystem::path& dir) {
  Checkpoint ck = read_checkpoint(dir, "MLC");
  const auto& h = ck.header;
  MLCModel m(WordVocab(h.at("vocab").get<std::vector<std::string>>()),
             h.at("victim_id").get<std::string>(), h.at("victim_dim").get<int>());
  if (m.params().size() != ck.weights.size())
    throw ConfigError("checkpoint parameter count does not match its configuration");
  m.params() = std::move(ck.weights);
  m.set_threshold(h.at("threshold").get<double>());
  return m;
}

void save_msp(const MSPModel& model, const std::filesystem::path& dir) {
  json fields{{"victim_id", model.victim_id()},
              {"victim_dim", model.victim_dim()},
              {"recurrent_dim", model.recurrent_dim()},
              {"steps", model.steps()},
              {"removal_policy", "most_probable"},
              {"vocab", model.vocab().words()}};
  write_checkpoint(dir, "MSP", std::move(fields), model.params());
}

MSPModel load_msp(const std::filesystem::path& dir) {
  Checkpoint ck = read_checkpoint(dir, "MSP");
  const auto& h = ck.header;
  if (h.value("removal_policy", "most_probable") != "most_probable")
    throw ConfigError("unknown MSP removal policy");
  MSPSpec spec;
  spec.recurrent_dim = h.at("recurrent_dim");
  spec.steps = h.at("steps");
  MSPModel m(WordVocab(h.at("vocab").get<std::vector<std::string>>()),
             h.at("victim_id").get<std::string>(), h.at("victim_dim").get<int>(), spec);
  if (m.params().size() != ck.weights.size())
    throw ConfigError("checkpoint parameter count does not match its configuration");
  m.params() = std::move(ck.weights);
  return m;
}

}  // namespace geia
