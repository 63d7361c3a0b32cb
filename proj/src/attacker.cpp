#include "geia/attacker.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "geia/checkpoint.hpp"
#include "geia/errors.hpp"

namespace geia {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
}

// ---------------------------------------------------------------- projection

ProjectionModule::ProjectionModule(int victim_dim, int decoder_dim, ProjectionMode mode,
                                   ParamLayout& layout)
    : victim_dim_(victim_dim), decoder_dim_(decoder_dim) {
  if (victim_dim < 1 || decoder_dim < 1) throw ConfigError("projection dimensions must be positive");
  switch (mode) {
    case ProjectionMode::Auto: bypass_ = victim_dim == decoder_dim; break;
    case ProjectionMode::Force: bypass_ = false; break;
    case ProjectionMode::Bypass:
      if (victim_dim != decoder_dim)
        throw ConfigError("projection bypass requested but victim dim " +
                          std::to_string(victim_dim) + " != decoder dim " +
                          std::to_string(decoder_dim));
      bypass_ = true;
      break;
  }
  if (!bypass_) {
    weight_ = layout.add(static_cast<std::size_t>(victim_dim) * decoder_dim);
    bias_ = layout.add(static_cast<std::size_t>(decoder_dim));
  }
}

void ProjectionModule::init(std::span<double> params, Rng& rng) const {
  if (bypass_) return;
  const double stdev = 1.0 / std::sqrt(static_cast<double>(victim_dim_));
  for (auto& w : weight_.of(params)) w = rng.normal() * stdev;
  for (auto& b : bias_.of(params)) b = 0.0;
}

std::vector<double> ProjectionModule::apply(std::span<const double> params,
                                            std::span<const double> x) const {
  if (static_cast<int>(x.size()) != victim_dim_)
    throw ConfigError("embedding dimension " + std::to_string(x.size()) +
                      " does not match victim dimension " + std::to_string(victim_dim_));
  if (bypass_) return {x.begin(), x.end()};
  const auto w = weight_.of(params);
  const auto b = bias_.of(params);
  std::vector<double> y(b.begin(), b.end());
  const auto out = static_cast<std::size_t>(decoder_dim_);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < out; ++j) y[j] += x[i] * w[i * out + j];
  return y;
}

void ProjectionModule::backward(std::span<const double> x, std::span<const double> dy,
                                std::span<double> grads) const {
  if (bypass_) return;
  auto gw = weight_.of(grads);
  auto gb = bias_.of(grads);
  const auto out = static_cast<std::size_t>(decoder_dim_);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < out; ++j) gw[i * out + j] += x[i] * dy[j];
  for (std::size_t j = 0; j < out; ++j) gb[j] += dy[j];
}

// -------------------------------------------------------------------- model

AttackerModel::AttackerModel(DecoderConfig config, std::shared_ptr<const Tokenizer> tokenizer,
                             std::string victim_id, int victim_dim, ProjectionMode projection,
                             bool supervise_eos)
    : tokenizer_(std::move(tokenizer)),
      victim_id_(std::move(victim_id)),
      mode_(projection),
      supervise_eos_(supervise_eos) {
  if (!tokenizer_) throw ConfigError("attacker needs a tokenizer");
  if (config.vocab_size != tokenizer_->vocab_size())
    throw ConfigError("decoder vocabulary size does not match the tokenizer");
  ParamLayout layout;
  decoder_ = Decoder(config, layout);
  projection_ = ProjectionModule(victim_dim, config.hidden, projection, layout);
  params_.assign(layout.size(), 0.0);
}

void AttackerModel::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 1));
  decoder_.init(params_, rng);
  projection_.init(params_, rng);
}

std::vector<double> AttackerModel::project(const EmbeddingVector& e) const {
  return projection_.apply(params_, e.values);
}

DecoderInput AttackerModel::make_input(const std::optional<EmbeddingVector>& prefix,
                                       const std::vector<int>& tokens, bool with_targets) const {
  DecoderInput in;
  if (prefix) in.prefix = project(*prefix);
  in.tokens.reserve(tokens.size() + 1);
  in.tokens.push_back(tokenizer_->bos_id());
  in.tokens.insert(in.tokens.end(), tokens.begin(), tokens.end());
  in.targets.assign(in.tokens.size(), -1);
  if (with_targets) {
    for (std::size_t i = 0; i < tokens.size(); ++i) in.targets[i] = tokens[i];
    if (supervise_eos_) in.targets[tokens.size()] = tokenizer_->eos_id();
  }
  return in;
}

// ----------------------------------------------------------------- training

TrainingLog train_attacker_on(AttackerModel& model, const std::vector<EmbeddingVector>& embeddings,
                              const std::vector<std::vector<int>>& token_ids,
                              const TrainConfig& cfg) {
  cfg.validate();
  if (embeddings.size() != token_ids.size())
    throw DataError("embeddings and token sequences differ in count");
  if (embeddings.empty()) throw DataError("empty training stream");

  TrainingLog log;
  const auto& dec = model.decoder();
  std::vector<double> grads(model.params().size());
  Adam adam(grads.size(), AdamConfig{cfg.learning_rate});
  std::vector<std::size_t> order(embeddings.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<double>> projected(static_cast<std::size_t>(cfg.batch_size));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t target_count = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<DecoderInput> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t idx = order[i];
        batch.push_back(model.make_input(embeddings[idx], token_ids[idx], true));
      }
      std::fill(grads.begin(), grads.end(), 0.0);
      const LossResult r = dec.loss_and_grad(model.params(), grads, batch);
      for (std::size_t i = start; i < end; ++i) {
        const auto& pg = r.prefix_grads[i - start];
        if (!pg.empty())
          model.projection().backward(embeddings[order[i]].values, pg, grads);
      }
      adam.step(model.params(), grads);
      loss_sum += r.loss_sum;
      target_count += r.targets;
      ++log.steps;
    }
    const double mean = target_count ? loss_sum / static_cast<double>(target_count) : 0.0;
    log.epoch_loss.push_back(mean);
    spdlog::debug("attacker epoch {} loss {:.5f}", epoch + 1, mean);
  }
  return log;
}

TrainResult train_attacker(const VictimRegistry& registry, const std::string& victim_id,
                           const std::vector<SentenceRecord>& train_records,
                           const TrainConfig& cfg, const AttackerSpec& spec) {
  cfg.validate();
  const VictimDescriptor& victim = registry.descriptor(victim_id);
  if (train_records.empty()) throw DataError("empty training stream");

  std::shared_ptr<const Tokenizer> tokenizer = spec.tokenizer;
  if (!tokenizer) {
    std::vector<std::string> texts;
    texts.reserve(train_records.size());
    for (const auto& r : train_records) texts.push_back(r.text);
    tokenizer = std::make_shared<WordTokenizer>(WordTokenizer::build(texts));
  }

  std::vector<std::vector<int>> token_ids;
  std::vector<std::string> texts;
  for (const auto& r : train_records) {
    auto seq = tokenizer->tokenize(r.text).token_ids;
    if (seq.empty()) throw DataError("record '" + r.id + "' tokenizes to no tokens");
    if (seq.size() > static_cast<std::size_t>(cfg.max_len))
      seq.resize(static_cast<std::size_t>(cfg.max_len));
    token_ids.push_back(std::move(seq));
    texts.push_back(r.text);
  }

  DecoderConfig dc;
  dc.layers = spec.layers;
  dc.hidden = spec.hidden;
  dc.heads = spec.heads;
  dc.max_len = cfg.max_len;
  dc.vocab_size = tokenizer->vocab_size();
  AttackerModel model(dc, tokenizer, victim_id, victim.dim, spec.projection, spec.supervise_eos);
  model.init(cfg.seed);

  TrainingLog log;
  log.victim_checksum_before = registry.snapshot_checksum(victim_id);
  const auto embeddings = registry.embed(victim_id, texts);
  TrainingLog inner = train_attacker_on(model, embeddings, token_ids, cfg);
  log.epoch_loss = std::move(inner.epoch_loss);
  log.steps = inner.steps;
  log.victim_checksum_after = registry.snapshot_checksum(victim_id);
  return {std::move(model), std::move(log)};
}

// ---------------------------------------------------------------- inference

double sequence_log_prob(const AttackerModel& model, const std::optional<EmbeddingVector>& prefix,
                         const std::vector<int>& tokens, bool with_eos) {
  DecoderInput in = model.make_input(prefix, tokens, false);
  for (std::size_t i = 0; i < tokens.size(); ++i) in.targets[i] = tokens[i];
  if (with_eos) in.targets[tokens.size()] = model.tokenizer().eos_id();
  const std::vector<DecoderInput> batch{in};
  const auto lp = model.decoder().log_probs(model.params(), batch);
  const auto v = static_cast<std::size_t>(model.config().vocab_size);
  const std::size_t first = in.prefix ? 1 : 0;
  double total = 0.0;
  for (std::size_t t = 0; t < in.targets.size(); ++t) {
    if (in.targets[t] >= 0) total += lp[(first + t) * v + static_cast<std::size_t>(in.targets[t])];
  }
  return total;
}

namespace {

struct Candidate {
  double score;
  std::size_t parent;
  int token;
};

std::vector<bool> generable_mask(const AttackerModel& model) {
  std::vector<bool> mask(static_cast<std::size_t>(model.config().vocab_size), true);
  for (int id : model.tokenizer().non_generable_ids()) mask[static_cast<std::size_t>(id)] = false;
  return mask;
}

// Higher score first; equal scores resolved by the lexicographically smaller
// token sequence.
bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.tokens != b.tokens) return a.tokens < b.tokens;
  return a.ended_with_eos && !b.ended_with_eos;
}

int checked_max_len(const AttackerModel& model, int max_len) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  return std::min(max_len, model.config().max_len);
}

}  // namespace

Hypothesis greedy_decode(const AttackerModel& model, const EmbeddingVector& embedding,
                         int max_len) {
  max_len = checked_max_len(model, max_len);
  const auto mask = generable_mask(model);
  const int eos = model.tokenizer().eos_id();
  const std::size_t v = mask.size();
  const std::vector<double> prefix = model.project(embedding);
  Hypothesis h;
  for (int step = 0; step < max_len; ++step) {
    DecoderInput in = model.make_input(std::nullopt, h.tokens, false);
    in.prefix = prefix;
    const std::vector<DecoderInput> batch{std::move(in)};
    const auto lp = model.decoder().last_log_probs(model.params(), batch);
    std::size_t best = v;
    for (std::size_t j = 0; j < v; ++j) {
      if (mask[j] && (best == v || lp[j] > lp[best])) best = j;
    }
    h.score += lp[best];
    if (static_cast<int>(best) == eos) {
      h.ended_with_eos = true;
      break;
    }
    h.tokens.push_back(static_cast<int>(best));
  }
  return h;
}

Hypothesis beam_search(const AttackerModel& model, const EmbeddingVector& embedding,
                       int beam_size, int max_len) {
  if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
  max_len = checked_max_len(model, max_len);
  const auto mask = generable_mask(model);
  const int eos = model.tokenizer().eos_id();
  const std::size_t v = mask.size();
  const std::vector<double> prefix = model.project(embedding);

  std::vector<Hypothesis> alive{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (int step = 0; step < max_len && !alive.empty(); ++step) {
    std::vector<DecoderInput> batch;
    batch.reserve(alive.size());
    for (const auto& h : alive) {
      DecoderInput in = model.make_input(std::nullopt, h.tokens, false);
      in.prefix = prefix;
      batch.push_back(std::move(in));
    }
    const auto lp = model.decoder().last_log_probs(model.params(), batch);

    // Alive hypotheses are kept sorted by `better`, so parent index order is
    // also the lexicographic tie-break order among equal-length prefixes.
    std::vector<std::size_t> lex(alive.size());
    std::iota(lex.begin(), lex.end(), 0);
    std::sort(lex.begin(), lex.end(),
              [&](std::size_t a, std::size_t b) { return alive[a].tokens < alive[b].tokens; });
    std::vector<std::size_t> lex_rank(alive.size());
    for (std::size_t r = 0; r < lex.size(); ++r) lex_rank[lex[r]] = r;

    std::vector<Candidate> cands;
    cands.reserve(alive.size() * v);
    for (std::size_t b = 0; b < alive.size(); ++b) {
      for (std::size_t j = 0; j < v; ++j) {
        if (mask[j]) cands.push_back({alive[b].score + lp[b * v + j], b, static_cast<int>(j)});
      }
    }
    const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(beam_size));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [&](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return lex_rank[a.parent] < lex_rank[b.parent];
                        return a.token < b.token;
                      });

    std::vector<Hypothesis> next;
    for (std::size_t c = 0; c < keep; ++c) {
      Hypothesis h = alive[cands[c].parent];
      h.score = cands[c].score;
      if (cands[c].token == eos) {
        h.ended_with_eos = true;
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(cands[c].token);
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
    if (!alive.empty() && static_cast<int>(alive.front().tokens.size()) == max_len) {
      finished.insert(finished.end(), alive.begin(), alive.end());
      alive.clear();
    }
    // Scores only decrease with length, so no alive hypothesis can overtake.
    if (!finished.empty() && !alive.empty()) {
      const double best_finished =
          std::max_element(finished.begin(), finished.end(),
                           [](const auto& a, const auto& b) { return a.score < b.score; })
              ->score;
      const double best_alive =
          std::max_element(alive.begin(), alive.end(),
                           [](const auto& a, const auto& b) { return a.score < b.score; })
              ->score;
      if (best_finished > best_alive) break;
    }
  }
  finished.insert(finished.end(), alive.begin(), alive.end());
  // The greedy path competes too, so a wider beam never returns a lower
  // score than greedy decoding.
  finished.push_back(greedy_decode(model, embedding, max_len));
  return *std::min_element(finished.begin(), finished.end(), better);
}

std::string invert(const AttackerModel& model, const EmbeddingVector& embedding, int beam_size,
                   int max_len) {
  return model.tokenizer().decode(beam_search(model, embedding, beam_size, max_len).tokens);
}

double ScoredSequence::mean() const {
  if (log_probs.empty()) return 0.0;
  return std::accumulate(log_probs.begin(), log_probs.end(), 0.0) /
         static_cast<double>(log_probs.size());
}

ScoredSequence score_sequence(const AttackerModel& model, std::string_view text,
                              const std::optional<EmbeddingVector>& prefix) {
  ScoredSequence out;
  out.tokens = model.tokenizer().tokenize(text);
  if (out.tokens.token_ids.empty()) throw DataError("text tokenizes to no tokens");
  const auto limit = static_cast<std::size_t>(model.config().max_len);
  if (out.tokens.size() > limit) {
    out.tokens.token_ids.resize(limit);
    out.tokens.offsets.resize(limit);
  }
  const DecoderInput in = model.make_input(prefix, out.tokens.token_ids, true);
  const std::vector<DecoderInput> batch{in};
  const auto lp = model.decoder().log_probs(model.params(), batch);
  const auto v = static_cast<std::size_t>(model.config().vocab_size);
  const std::size_t first = in.prefix ? 1 : 0;
  out.log_probs.reserve(out.tokens.size());
  for (std::size_t t = 0; t < out.tokens.size(); ++t)
    out.log_probs.push_back(lp[(first + t) * v + static_cast<std::size_t>(out.tokens.token_ids[t])]);
  return out;
}

// --------------------------------------------------------------- checkpoint

namespace {

std::string_view to_string(ProjectionMode m) {
  switch (m) {
    case ProjectionMode::Auto: return "auto";
    case ProjectionMode::Force: return "force";
    case ProjectionMode::Bypass: return "bypass";
  }
  return "auto";
}

ProjectionMode parse_projection_mode(const std::string& s) {
  if (s == "force") return ProjectionMode::Force;
  if (s == "bypass") return ProjectionMode::Bypass;
  return ProjectionMode::Auto;
}

}  // namespace

void save_attacker(const AttackerModel& model, const std::filesystem::path& dir) {
  const auto& c = model.config();
  json fields{{"victim_id", model.victim_id()},
              {"victim_dim", model.victim_dim()},
              {"tokenizer_id", model.tokenizer().id()},
              {"supervise_eos", model.supervise_eos()},
              {"projection", to_string(model.projection_mode())},
              {"bypass", model.projection().bypass()},
              {"decoder",
               {{"layers", c.layers},
                {"hidden", c.hidden},
                {"heads", c.heads},
                {"max_len", c.max_len},
                {"vocab_size", c.vocab_size}}}};
  write_checkpoint(dir, "GEIA", std::move(fields), model.params());
  model.tokenizer().save(dir / "tokenizer");
}

AttackerModel load_attacker(const std::filesystem::path& dir) {
  Checkpoint ck = read_checkpoint(dir, "GEIA");
  const auto& h = ck.header;
  std::shared_ptr<const Tokenizer> tok = load_tokenizer(dir / "tokenizer");
  if (tok->id() != h.at("tokenizer_id").get<std::string>())
    throw ConfigError("checkpoint tokenizer id mismatch");
  DecoderConfig c;
  const auto& d = h.at("decoder");
  c.layers = d.at("layers");
  c.hidden = d.at("hidden");
  c.heads = d.at("heads");
  c.max_len = d.at("max_len");
  c.vocab_size = d.at("vocab_size");
  AttackerModel model(c, tok, h.at("victim_id").get<std::string>(), h.at("victim_dim").get<int>(),
                      parse_projection_mode(h.value("projection", "auto")),
                      h.value("supervise_eos", true));
  if (model.params().size() != ck.weights.size())
    throw ConfigError("checkpoint parameter count does not match its configuration");
  std::copy(ck.weights.begin(), ck.weights.end(), model.params().begin());
  return model;
}

}  // namespace geia
