#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geia/rng.hpp"

namespace geia {

struct DecoderConfig {
  int layers = 2;
  int hidden = 64;
  int heads = 2;
  int max_len = 64;  // subword tokens per sentence, excluding BOS/EOS
  int vocab_size = 0;

  int positions() const { return max_len + 2; }
  int ffn() const { return 4 * hidden; }

  // Desk-scale geometry (default) and GPT-2-medium geometry.
  static DecoderConfig tiny(int vocab_size);
  static DecoderConfig gpt2_medium(int vocab_size);
};

// Named region of a flat parameter vector.
struct Slice {
  std::size_t offset = 0;
  std::size_t size = 0;

  std::span<double> of(std::span<double> flat) const { return flat.subspan(offset, size); }
  std::span<const double> of(std::span<const double> flat) const {
    return flat.subspan(offset, size);
  }
};

// Allocates consecutive slices; the final size() is the flat vector length.
class ParamLayout {
 public:
  Slice add(std::size_t size) {
    Slice s{size_, size};
    size_ += size;
    return s;
  }
  std::size_t size() const { return size_; }

 private:
  std::size_t size_ = 0;
};

// One sequence fed to the decoder. Rows are laid out as
// [prefix?] tokens[0] tokens[1] ...; the prefix sits at position 0 and
// tokens[j] at position 1 + j whether or not a prefix is present, so the
// text rows see identical positional embeddings in both cases.
struct DecoderInput {
  std::optional<std::vector<double>> prefix;  // hidden-dim vector
  std::vector<int> tokens;
  // Per token row: the id it must predict, or -1. The prefix row never
  // carries a target.
  std::vector<int> targets;

  std::size_t rows() const { return tokens.size() + (prefix ? 1 : 0); }
};

struct LossResult {
  double loss_sum = 0.0;      // summed negative log-likelihood over targets
  std::size_t targets = 0;    // number of target rows
  // Gradient of the mean loss w.r.t. each prefix (empty where no prefix).
  std::vector<std::vector<double>> prefix_grads;
};

// GPT-2 style pre-LayerNorm decoder with learned positions and a language
// model head tied to the token embedding. Holds only the parameter layout;
// weights live in caller-owned flat vectors.
class Decoder {
 public:
  Decoder() = default;
  Decoder(DecoderConfig config, ParamLayout& layout);

  const DecoderConfig& config() const { return config_; }

  void init(std::span<double> params, Rng& rng) const;

  // Log-probabilities for every row of every input, row-major
  // [sum(rows), vocab].
  std::vector<double> log_probs(std::span<const double> params,
                                std::span<const DecoderInput> batch) const;
  // Log-probabilities at the last row of each input, [batch, vocab].
  std::vector<double> last_log_probs(std::span<const double> params,
                                     std::span<const DecoderInput> batch) const;

  // Mean cross-entropy over all target rows of the batch; gradients of that
  // mean are accumulated into `grads`.
  LossResult loss_and_grad(std::span<const double> params, std::span<double> grads,
                           std::span<const DecoderInput> batch) const;

 private:
  struct LayerSlices {
    Slice ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };
  struct Activations;

  void forward(std::span<const double> params, std::span<const DecoderInput> batch,
               Activations& act) const;

  DecoderConfig config_;
  Slice wte_, wpe_, lnf_g_, lnf_b_;
  std::vector<LayerSlices> layers_;
};

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t size, AdamConfig config) : config_(config), m_(size, 0.0), v_(size, 0.0) {}
  void step(std::span<double> params, std::span<const double> grads);
  long steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace geia
