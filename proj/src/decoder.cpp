#include "geia/decoder.hpp"

#include <cmath>
#include <numbers>

#include "geia/errors.hpp"
#include "geia/kernels.hpp"

namespace geia {

namespace kn = kernels;

DecoderConfig DecoderConfig::tiny(int vocab_size) {
  DecoderConfig c;
  c.vocab_size = vocab_size;
  return c;
}

DecoderConfig DecoderConfig::gpt2_medium(int vocab_size) {
  DecoderConfig c;
  c.layers = 24;
  c.hidden = 1024;
  c.heads = 16;
  c.vocab_size = vocab_size;
  return c;
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

// y = (x - mean) * rstd * g + b, per row.
void layer_norm(std::span<const double> x, std::span<const double> g, std::span<const double> b,
                std::span<double> xhat, std::span<double> rstd, std::span<double> y,
                std::size_t rows, std::size_t d) {
#pragma omp parallel for schedule(static) if (rows * d > (1 << 14))
  for (std::ptrdiff_t ri = 0; ri < static_cast<std::ptrdiff_t>(rows); ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    const double* xr = x.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mean) * rs;
      xhat[r * d + j] = h;
      y[r * d + j] = h * g[j] + b[j];
    }
  }
}

// Accumulates dx; dg/db accumulated in fixed row order.
void layer_norm_backward(std::span<const double> dy, std::span<const double> xhat,
                         std::span<const double> rstd, std::span<const double> g,
                         std::span<double> dx, std::span<double> dg, std::span<double> db,
                         std::size_t rows, std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      dg[j] += dy[r * d + j] * xhat[r * d + j];
      db[j] += dy[r * d + j];
    }
  }
#pragma omp parallel for schedule(static) if (rows * d > (1 << 14))
  for (std::ptrdiff_t ri = 0; ri < static_cast<std::ptrdiff_t>(rows); ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double dxh = dy[r * d + j] * g[j];
      mean_dxhat += dxh;
      mean_dxhat_xhat += dxh * xhat[r * d + j];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double dxh = dy[r * d + j] * g[j];
      dx[r * d + j] += rstd[r] * (dxh - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
    }
  }
}

}  // namespace

struct Decoder::Activations {
  std::size_t rows = 0;
  std::vector<std::size_t> seq_start;  // first row of each sequence
  std::vector<std::size_t> att_start;  // offset of each sequence's T*T block per head
  std::size_t att_size = 0;

  std::vector<double> x0;
  struct Layer {
    std::vector<double> h_in, xhat1, rstd1, a1, qkv, probs, att, h_mid, xhat2, rstd2, a2, fc, gel;
  };
  std::vector<Layer> layers;
  std::vector<double> h_final, xhatf, rstdf, af, logits, logp;
};

Decoder::Decoder(DecoderConfig config, ParamLayout& layout) : config_(config) {
  if (config.layers < 1 || config.hidden < 1 || config.heads < 1 || config.vocab_size < 1 ||
      config.max_len < 1)
    throw ConfigError("decoder dimensions must be positive");
  if (config.hidden % config.heads != 0) throw ConfigError("hidden size must divide by heads");
  const auto d = static_cast<std::size_t>(config.hidden);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto f = static_cast<std::size_t>(config.ffn());
  wte_ = layout.add(v * d);
  wpe_ = layout.add(static_cast<std::size_t>(config.positions()) * d);
  for (int l = 0; l < config.layers; ++l) {
    LayerSlices s;
    s.ln1_g = layout.add(d);
    s.ln1_b = layout.add(d);
    s.w_qkv = layout.add(d * 3 * d);
    s.b_qkv = layout.add(3 * d);
    s.w_o = layout.add(d * d);
    s.b_o = layout.add(d);
    s.ln2_g = layout.add(d);
    s.ln2_b = layout.add(d);
    s.w_fc = layout.add(d * f);
    s.b_fc = layout.add(f);
    s.w_proj = layout.add(f * d);
    s.b_proj = layout.add(d);
    layers_.push_back(s);
  }
  lnf_g_ = layout.add(d);
  lnf_b_ = layout.add(d);
}

void Decoder::init(std::span<double> params, Rng& rng) const {
  auto normal = [&](Slice s, double stdev) {
    for (auto& x : s.of(params)) x = rng.normal() * stdev;
  };
  auto fill = [&](Slice s, double value) {
    for (auto& x : s.of(params)) x = value;
  };
  const double residual_std = 0.02 / std::sqrt(2.0 * config_.layers);
  normal(wte_, 0.02);
  normal(wpe_, 0.01);
  for (const auto& s : layers_) {
    fill(s.ln1_g, 1.0);
    fill(s.ln1_b, 0.0);
    normal(s.w_qkv, 0.02);
    fill(s.b_qkv, 0.0);
    normal(s.w_o, residual_std);
    fill(s.b_o, 0.0);
    fill(s.ln2_g, 1.0);
    fill(s.ln2_b, 0.0);
    normal(s.w_fc, 0.02);
    fill(s.b_fc, 0.0);
    normal(s.w_proj, residual_std);
    fill(s.b_proj, 0.0);
  }
  fill(lnf_g_, 1.0);
  fill(lnf_b_, 0.0);
}

void Decoder::forward(std::span<const double> params, std::span<const DecoderInput> batch,
                      Activations& act) const {
  const auto d = static_cast<std::size_t>(config_.hidden);
  const auto v = static_cast<std::size_t>(config_.vocab_size);
  const auto f = static_cast<std::size_t>(config_.ffn());
  const auto nh = static_cast<std::size_t>(config_.heads);
  const std::size_t hd = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  act.seq_start.clear();
  act.att_start.clear();
  act.rows = 0;
  act.att_size = 0;
  for (const auto& in : batch) {
    if (in.tokens.size() != in.targets.size())
      throw ConfigError("decoder input has mismatched tokens/targets");
    if (in.tokens.size() + 1 > static_cast<std::size_t>(config_.positions()))
      throw ConfigError("sequence longer than decoder positions");
    if (in.prefix && in.prefix->size() != d) throw ConfigError("prefix has wrong dimension");
    if (in.rows() == 0) throw ConfigError("empty decoder input");
    act.seq_start.push_back(act.rows);
    act.att_start.push_back(act.att_size);
    act.rows += in.rows();
    act.att_size += in.rows() * in.rows() * nh;
  }
  const std::size_t n = act.rows;

  const auto wte = wte_.of(params);
  const auto wpe = wpe_.of(params);
  act.x0.assign(n * d, 0.0);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& in = batch[s];
    std::size_t row = act.seq_start[s];
    if (in.prefix) {
      for (std::size_t j = 0; j < d; ++j) act.x0[row * d + j] = (*in.prefix)[j] + wpe[j];
      ++row;
    }
    for (std::size_t t = 0; t < in.tokens.size(); ++t, ++row) {
      const int tok = in.tokens[t];
      if (tok < 0 || tok >= config_.vocab_size) throw ConfigError("token id out of vocabulary");
      const std::size_t pos = t + 1;
      for (std::size_t j = 0; j < d; ++j)
        act.x0[row * d + j] = wte[static_cast<std::size_t>(tok) * d + j] + wpe[pos * d + j];
    }
  }

  act.layers.resize(layers_.size());
  const std::vector<double>* h = &act.x0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& s = layers_[l];
    auto& L = act.layers[l];
    L.h_in = *h;
    L.xhat1.resize(n * d);
    L.rstd1.resize(n);
    L.a1.resize(n * d);
    layer_norm(L.h_in, s.ln1_g.of(params), s.ln1_b.of(params), L.xhat1, L.rstd1, L.a1, n, d);

    L.qkv.resize(n * 3 * d);
    kn::gemm(L.a1, s.w_qkv.of(params), L.qkv, n, d, 3 * d);
    kn::add_row_bias(L.qkv, s.b_qkv.of(params), n, 3 * d);

    L.probs.assign(act.att_size, 0.0);
    L.att.assign(n * d, 0.0);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(batch.size()); ++si) {
      const auto sq = static_cast<std::size_t>(si);
      const std::size_t r0 = act.seq_start[sq];
      const std::size_t T = batch[sq].rows();
      for (std::size_t hh = 0; hh < nh; ++hh) {
        double* P = L.probs.data() + act.att_start[sq] + hh * T * T;
        for (std::size_t i = 0; i < T; ++i) {
          const double* q = L.qkv.data() + (r0 + i) * 3 * d + hh * hd;
          double mx = -INFINITY;
          for (std::size_t j = 0; j <= i; ++j) {
            const double* k = L.qkv.data() + (r0 + j) * 3 * d + d + hh * hd;
            double dot = 0.0;
            for (std::size_t c = 0; c < hd; ++c) dot += q[c] * k[c];
            P[i * T + j] = dot * scale;
            mx = std::max(mx, P[i * T + j]);
          }
          double sum = 0.0;
          for (std::size_t j = 0; j <= i; ++j) {
            P[i * T + j] = std::exp(P[i * T + j] - mx);
            sum += P[i * T + j];
          }
          double* out = L.att.data() + (r0 + i) * d + hh * hd;
          for (std::size_t j = 0; j <= i; ++j) {
            P[i * T + j] /= sum;
            const double* vv = L.qkv.data() + (r0 + j) * 3 * d + 2 * d + hh * hd;
            for (std::size_t c = 0; c < hd; ++c) out[c] += P[i * T + j] * vv[c];
          }
        }
      }
    }

    L.h_mid = L.h_in;
    kn::gemm(L.att, s.w_o.of(params), L.h_mid, n, d, d, /*accumulate=*/true);
    kn::add_row_bias(L.h_mid, s.b_o.of(params), n, d);

    L.xhat2.resize(n * d);
    L.rstd2.resize(n);
    L.a2.resize(n * d);
    layer_norm(L.h_mid, s.ln2_g.of(params), s.ln2_b.of(params), L.xhat2, L.rstd2, L.a2, n, d);

    L.fc.resize(n * f);
    kn::gemm(L.a2, s.w_fc.of(params), L.fc, n, d, f);
    kn::add_row_bias(L.fc, s.b_fc.of(params), n, f);
    L.gel.resize(n * f);
    for (std::size_t i = 0; i < n * f; ++i) L.gel[i] = gelu(L.fc[i]);

    // The next layer's input (or h_final) is h_mid + MLP output.
    std::vector<double>& next = (l + 1 < layers_.size()) ? act.layers[l + 1].h_in : act.h_final;
    next = L.h_mid;
    kn::gemm(L.gel, s.w_proj.of(params), next, n, f, d, /*accumulate=*/true);
    kn::add_row_bias(next, s.b_proj.of(params), n, d);
    h = &next;
  }

  act.xhatf.resize(n * d);
  act.rstdf.resize(n);
  act.af.resize(n * d);
  layer_norm(act.h_final, lnf_g_.of(params), lnf_b_.of(params), act.xhatf, act.rstdf, act.af, n,
             d);
  act.logits.resize(n * v);
  kn::gemm_bt(act.af, wte, act.logits, n, d, v);
  act.logp.resize(n * v);
  kn::log_softmax_rows(act.logits, act.logp, n, v);
}

std::vector<double> Decoder::log_probs(std::span<const double> params,
                                       std::span<const DecoderInput> batch) const {
  Activations act;
  forward(params, batch, act);
  return std::move(act.logp);
}

std::vector<double> Decoder::last_log_probs(std::span<const double> params,
                                            std::span<const DecoderInput> batch) const {
  Activations act;
  forward(params, batch, act);
  const auto v = static_cast<std::size_t>(config_.vocab_size);
  std::vector<double> out(batch.size() * v);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const std::size_t last = act.seq_start[s] + batch[s].rows() - 1;
    std::copy_n(act.logp.begin() + static_cast<std::ptrdiff_t>(last * v), v,
                out.begin() + static_cast<std::ptrdiff_t>(s * v));
  }
  return out;
}

LossResult Decoder::loss_and_grad(std::span<const double> params, std::span<double> grads,
                                  std::span<const DecoderInput> batch) const {
  Activations act;
  forward(params, batch, act);
  const auto d = static_cast<std::size_t>(config_.hidden);
  const auto v = static_cast<std::size_t>(config_.vocab_size);
  const auto f = static_cast<std::size_t>(config_.ffn());
  const auto nh = static_cast<std::size_t>(config_.heads);
  const std::size_t hd = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t n = act.rows;

  LossResult result;
  // Row index -> target id (or -1).
  std::vector<int> row_target(n, -1);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const std::size_t first_tok = act.seq_start[s] + (batch[s].prefix ? 1 : 0);
    for (std::size_t t = 0; t < batch[s].targets.size(); ++t) {
      const int tgt = batch[s].targets[t];
      if (tgt >= config_.vocab_size) throw ConfigError("target id out of vocabulary");
      row_target[first_tok + t] = tgt;
      if (tgt >= 0) {
        result.loss_sum -= act.logp[(first_tok + t) * v + static_cast<std::size_t>(tgt)];
        ++result.targets;
      }
    }
  }
  result.prefix_grads.resize(batch.size());
  if (result.targets == 0) return result;
  const double inv = 1.0 / static_cast<double>(result.targets);

  std::vector<double> dlogits(n * v, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    if (row_target[r] < 0) continue;
    for (std::size_t j = 0; j < v; ++j) dlogits[r * v + j] = std::exp(act.logp[r * v + j]) * inv;
    dlogits[r * v + static_cast<std::size_t>(row_target[r])] -= inv;
  }

  const auto wte = wte_.of(params);
  auto g_wte = wte_.of(grads);
  std::vector<double> daf(n * d);
  kn::gemm(dlogits, wte, daf, n, v, d);
  kn::gemm_at(dlogits, act.af, g_wte, v, n, d, /*accumulate=*/true);

  std::vector<double> dh(n * d, 0.0);
  layer_norm_backward(daf, act.xhatf, act.rstdf, lnf_g_.of(params), dh, lnf_g_.of(grads),
                      lnf_b_.of(grads), n, d);

  std::vector<double> dgel(n * f), da(n * d), datt(n * d), dqkv(n * 3 * d);
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& s = layers_[li];
    const auto& L = act.layers[li];

    // MLP block: h_out = h_mid + gelu(a2 W_fc + b_fc) W_proj + b_proj
    kn::gemm_bt(dh, s.w_proj.of(params), dgel, n, d, f);
    kn::gemm_at(L.gel, dh, s.w_proj.of(grads), f, n, d, true);
    kn::column_sum(dh, s.b_proj.of(grads), n, d, true);
    for (std::size_t i = 0; i < n * f; ++i) dgel[i] *= gelu_grad(L.fc[i]);
    kn::gemm_bt(dgel, s.w_fc.of(params), da, n, f, d);
    kn::gemm_at(L.a2, dgel, s.w_fc.of(grads), d, n, f, true);
    kn::column_sum(dgel, s.b_fc.of(grads), n, f, true);
    // dh now becomes d(h_mid)
    layer_norm_backward(da, L.xhat2, L.rstd2, s.ln2_g.of(params), dh, s.ln2_g.of(grads),
                        s.ln2_b.of(grads), n, d);

    // Attention block: h_mid = h_in + att W_o + b_o
    kn::gemm_bt(dh, s.w_o.of(params), datt, n, d, d);
    kn::gemm_at(L.att, dh, s.w_o.of(grads), d, n, d, true);
    kn::column_sum(dh, s.b_o.of(grads), n, d, true);

    std::fill(dqkv.begin(), dqkv.end(), 0.0);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(batch.size()); ++si) {
      const auto sq = static_cast<std::size_t>(si);
      const std::size_t r0 = act.seq_start[sq];
      const std::size_t T = batch[sq].rows();
      std::vector<double> dP(T);
      for (std::size_t hh = 0; hh < nh; ++hh) {
        const double* P = L.probs.data() + act.att_start[sq] + hh * T * T;
        for (std::size_t i = 0; i < T; ++i) {
          const double* dout = datt.data() + (r0 + i) * d + hh * hd;
          double dot_pd = 0.0;
          for (std::size_t j = 0; j <= i; ++j) {
            const double* vv = L.qkv.data() + (r0 + j) * 3 * d + 2 * d + hh * hd;
            double acc = 0.0;
            for (std::size_t c = 0; c < hd; ++c) acc += dout[c] * vv[c];
            dP[j] = acc;
            dot_pd += acc * P[i * T + j];
          }
          const double* q = L.qkv.data() + (r0 + i) * 3 * d + hh * hd;
          double* dq = dqkv.data() + (r0 + i) * 3 * d + hh * hd;
          for (std::size_t j = 0; j <= i; ++j) {
            const double pij = P[i * T + j];
            double* dv = dqkv.data() + (r0 + j) * 3 * d + 2 * d + hh * hd;
            for (std::size_t c = 0; c < hd; ++c) dv[c] += pij * dout[c];
            const double ds = pij * (dP[j] - dot_pd) * scale;
            const double* k = L.qkv.data() + (r0 + j) * 3 * d + d + hh * hd;
            double* dk = dqkv.data() + (r0 + j) * 3 * d + d + hh * hd;
            for (std::size_t c = 0; c < hd; ++c) {
              dq[c] += ds * k[c];
              dk[c] += ds * q[c];
            }
          }
        }
      }
    }

    kn::gemm_bt(dqkv, s.w_qkv.of(params), da, n, 3 * d, d);
    kn::gemm_at(L.a1, dqkv, s.w_qkv.of(grads), d, n, 3 * d, true);
    kn::column_sum(dqkv, s.b_qkv.of(grads), n, 3 * d, true);
    // dh becomes d(h_in)
    layer_norm_backward(da, L.xhat1, L.rstd1, s.ln1_g.of(params), dh, s.ln1_g.of(grads),
                        s.ln1_b.of(grads), n, d);
  }

  auto g_wpe = wpe_.of(grads);
  for (std::size_t sq = 0; sq < batch.size(); ++sq) {
    const auto& in = batch[sq];
    std::size_t row = act.seq_start[sq];
    if (in.prefix) {
      result.prefix_grads[sq].assign(dh.begin() + static_cast<std::ptrdiff_t>(row * d),
                                     dh.begin() + static_cast<std::ptrdiff_t>((row + 1) * d));
      for (std::size_t j = 0; j < d; ++j) g_wpe[j] += dh[row * d + j];
      ++row;
    }
    for (std::size_t t = 0; t < in.tokens.size(); ++t, ++row) {
      const auto tok = static_cast<std::size_t>(in.tokens[t]);
      const std::size_t pos = t + 1;
      for (std::size_t j = 0; j < d; ++j) {
        g_wte[tok * d + j] += dh[row * d + j];
        g_wpe[pos * d + j] += dh[row * d + j];
      }
    }
  }
  return result;
}

void Adam::step(std::span<double> params, std::span<const double> grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
#pragma omp parallel for schedule(static) if (params.size() > (1 << 16))
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(params.size()); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grads[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grads[i] * grads[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
  }
}

}  // namespace geia
