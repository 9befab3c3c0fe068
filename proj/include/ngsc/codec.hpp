// Copyright 2026 The ngsc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// The compression network: analysis g_a, hyper analysis h_a, hyper
// synthesis h_s, synthesis g_s, and the QIndex token generators.
//
//   g_a: conv3x3/2 over [RGB, m, r] -> 3 x (NSTB stage, conv3x3/2)  => y at /16
//   h_a: conv3x3/1 -> 2 x (NSTB stage, conv3x3/2)                    => z at /64
//   h_s: 2 x (deconv4x4/2, NSTB stage) -> conv1x1                    => mu, sigma
//   g_s: [y_hat, m_hat] -> 3 x (deconv4x4/2, NSTB stage) -> deconv   => x_hat

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ngsc/likelihood.hpp"
#include "ngsc/nstb.hpp"

namespace ngsc {

inline constexpr int kLatentStride = 16;
inline constexpr int kPadMultiple = 64;

struct CodecConfig {
  int64_t channels = 32;
  int64_t latent_channels = 192;
  int64_t hyper_channels = 64;
  int heads = 4;
  int window = 8;
  int ngram = 2;
  int tokens = 4;
  int mlp_ratio = 2;
  int blocks_per_atm = 2;
  int token_hidden = 32;
  bool ngram_enabled = true;
  bool tag_mlp_enabled = true;

  static constexpr int kAnalysisAtms = 3;
  static constexpr int kHyperAtms = 2;

  NstbConfig block(int64_t dim) const {
    NstbConfig b;
    b.dim = dim;
    b.heads = heads;
    b.window = window;
    b.ngram = ngram;
    b.mlp_ratio = mlp_ratio;
    b.ngram_enabled = ngram_enabled;
    b.tag_mlp_enabled = tag_mlp_enabled;
    return b;
  }

  void validate() const {
    if (channels < 1 || latent_channels < 1 || hyper_channels < 1) throw ConfigError("channel widths must be positive");
    if (tokens < 0) throw ConfigError("tokens must be >= 0");
    if (blocks_per_atm < 1) throw ConfigError("blocks_per_atm must be >= 1");
    if (token_hidden < 1) throw ConfigError("token_hidden must be >= 1");
    block(channels).validate();
    block(hyper_channels).validate();
  }

  /// Canonical "key = value" text; parse(to_text()) is the identity.
  std::string to_text() const {
    std::ostringstream o;
    o << "channels = " << channels << "\n"
      << "latent_channels = " << latent_channels << "\n"
      << "hyper_channels = " << hyper_channels << "\n"
      << "heads = " << heads << "\n"
      << "window = " << window << "\n"
      << "ngram = " << ngram << "\n"
      << "tokens = " << tokens << "\n"
      << "mlp_ratio = " << mlp_ratio << "\n"
      << "blocks_per_atm = " << blocks_per_atm << "\n"
      << "token_hidden = " << token_hidden << "\n"
      << "ngram_enabled = " << (ngram_enabled ? "true" : "false") << "\n"
      << "tag_mlp_enabled = " << (tag_mlp_enabled ? "true" : "false") << "\n";
    return o.str();
  }

  /// Applies one key; returns false for keys this struct does not own.
  bool set(const std::string& key, const std::string& value) {
    auto as_int = [&](auto& field) {
      size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != value.size()) throw ConfigError("config: " + key + " expects an integer, got '" + value + "'");
      field = static_cast<std::remove_reference_t<decltype(field)>>(v);
    };
    auto as_bool = [&](bool& field) {
      if (value == "true" || value == "1")
        field = true;
      else if (value == "false" || value == "0")
        field = false;
      else
        throw ConfigError("config: " + key + " expects true/false, got '" + value + "'");
    };
    if (key == "channels") as_int(channels);
    else if (key == "latent_channels") as_int(latent_channels);
    else if (key == "hyper_channels") as_int(hyper_channels);
    else if (key == "heads") as_int(heads);
    else if (key == "window") as_int(window);
    else if (key == "ngram") as_int(ngram);
    else if (key == "tokens") as_int(tokens);
    else if (key == "mlp_ratio") as_int(mlp_ratio);
    else if (key == "blocks_per_atm") as_int(blocks_per_atm);
    else if (key == "token_hidden") as_int(token_hidden);
    else if (key == "ngram_enabled") as_bool(ngram_enabled);
    else if (key == "tag_mlp_enabled") as_bool(tag_mlp_enabled);
    else return false;
    return true;
  }

  static CodecConfig parse(const std::string& text) {
    CodecConfig c;
    for (const auto& [k, v] : parse_key_values(text))
      if (!c.set(k, v)) throw ConfigError("config: unknown key '" + k + "'");
    c.validate();
    return c;
  }

  /// "key = value" lines; '#' starts a comment. Later keys override.
  static std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text) {
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
  }
};

enum class Mode { kTrain, kEval };

/// Reflect-pads bottom/right to the next multiple; returns the input itself
/// when already aligned.
template <class T>
Tensor<T> pad_to_multiple(const Tensor<T>& x, int64_t multiple = kPadMultiple) {
  detail::require_rank4(x.shape(), "pad_to_multiple");
  if (multiple < 1) throw ConfigError("pad_to_multiple: multiple must be positive");
  const int64_t h = (x.dim(2) + multiple - 1) / multiple * multiple;
  const int64_t w = (x.dim(3) + multiple - 1) / multiple * multiple;
  if (h == x.dim(2) && w == x.dim(3)) return x;
  return reflect_pad_br(x, h, w);
}

/// Train: v + U(-0.5, 0.5) noise (identity gradient). Eval: round(v - mu) + mu,
/// ties away from zero, symbols clamped to the 16-bit range. Eval output is
/// not differentiable.
template <class T>
Tensor<T> quantize(const Tensor<T>& v, std::type_identity_t<const Tensor<T>*> mu, Mode mode, Rng* rng = nullptr) {
  if (mu && mu->shape() != v.shape()) throw ShapeError("quantize: mu shape mismatch");
  if (mode == Mode::kTrain) {
    if (!rng) throw ConfigError("quantize: training mode needs an rng");
    return add(v, uniform_tensor<T>(v.shape(), *rng, -0.5, 0.5));
  }
  Tensor<T> out(v.shape());
  auto vs = v.data();
  auto os = out.data();
  for (size_t i = 0; i < os.size(); ++i) {
    const T m = mu ? mu->data()[i] : T(0);
    const T s = std::clamp(std::round(vs[i] - m), T(-32768), T(32767));
    os[i] = s + m;
  }
  return out;
}

/// Integer symbols round(v - mu) with the same clamp as quantize.
template <class T>
std::vector<int32_t> quantize_symbols(const Tensor<T>& v, std::type_identity_t<const Tensor<T>*> mu) {
  std::vector<int32_t> s(static_cast<size_t>(v.numel()));
  auto vs = v.data();
  for (size_t i = 0; i < s.size(); ++i) {
    const T m = mu ? mu->data()[i] : T(0);
    s[i] = static_cast<int32_t>(std::clamp(std::round(vs[i] - m), T(-32768), T(32767)));
  }
  return s;
}

/// Learned tokens per stage from the mean QIndex of each image.
template <class T>
struct TokenGenerator {
  Linear<T> in;
  std::vector<Linear<T>> heads;
  std::vector<int64_t> dims;
  int tokens = 0;

  TokenGenerator() = default;
  TokenGenerator(ParameterSet<T>& ps, const std::string& name, const std::vector<int64_t>& stage_dims, int tokens_,
                 int hidden, Rng& rng)
      : dims(stage_dims), tokens(tokens_) {
    if (!tokens) return;
    in = Linear<T>(ps, name + ".in", 1, hidden, rng);
    for (size_t i = 0; i < dims.size(); ++i)
      heads.emplace_back(ps, name + ".stage" + std::to_string(i), hidden, tokens * dims[i], rng);
  }

  /// q: [B, 1]. Returns one [B, L, D_i] tensor per stage (undefined if L = 0).
  std::vector<Tensor<T>> operator()(const Tensor<T>& q) const {
    std::vector<Tensor<T>> out(dims.size());
    if (!tokens) return out;
    Tensor<T> h = gelu_tanh(in(q));
    for (size_t i = 0; i < dims.size(); ++i) out[i] = reshape(heads[i](h), Shape{q.dim(0), tokens, dims[i]});
    return out;
  }
};

template <class T>
struct Conditioning {
  std::vector<Tensor<T>> encoder;  // g_a stages then h_a stages
  std::vector<Tensor<T>> decoder;  // h_s stages then g_s stages
  Tensor<T> m_hat;                 // [B, 1, H/16, W/16]
};

template <class T>
struct ForwardResult {
  Tensor<T> x_hat;  // cropped to the input extent
  Tensor<T> y, y_hat, z, z_hat, mu, sigma;
  Tensor<T> likelihood_y, likelihood_z;
};

template <class T>
class CodecNet {
 public:
  CodecNet(const CodecConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng = Rng::derive(seed, 0x636f646563);
    const int64_t c = cfg.channels, lat = cfg.latent_channels, hyp = cfg.hyper_channels;

    ga_stem_ = Conv2d<T>(ps_, "g_a.stem", 5, c, 3, 2, 1, rng);
    for (int i = 0; i < CodecConfig::kAnalysisAtms; ++i) {
      const std::string n = "g_a.atm" + std::to_string(i);
      ga_blocks_.push_back(stage(n, c, rng));
      ga_down_.emplace_back(ps_, n + ".down", c, i + 1 == CodecConfig::kAnalysisAtms ? lat : c, 3, 2, 1, rng);
    }
    ha_stem_ = Conv2d<T>(ps_, "h_a.stem", lat, hyp, 3, 1, 1, rng);
    for (int i = 0; i < CodecConfig::kHyperAtms; ++i) {
      const std::string n = "h_a.atm" + std::to_string(i);
      ha_blocks_.push_back(stage(n, hyp, rng));
      ha_down_.emplace_back(ps_, n + ".down", hyp, hyp, 3, 2, 1, rng);
    }
    for (int i = 0; i < CodecConfig::kHyperAtms; ++i) {
      const std::string n = "h_s.atm" + std::to_string(i);
      hs_up_.emplace_back(ps_, n + ".up", hyp, hyp, 4, 2, 1, rng);
      hs_blocks_.push_back(stage(n, hyp, rng));
    }
    hs_head_ = Conv2d<T>(ps_, "h_s.head", hyp, 2 * lat, 1, 1, 0, rng);
    for (int i = 0; i < CodecConfig::kAnalysisAtms; ++i) {
      const std::string n = "g_s.atm" + std::to_string(i);
      gs_up_.emplace_back(ps_, n + ".up", i == 0 ? lat + 1 : c, c, 4, 2, 1, rng);
      gs_blocks_.push_back(stage(n, c, rng));
    }
    gs_out_ = ConvTranspose2d<T>(ps_, "g_s.out", c, 3, 4, 2, 1, rng);
    // Start from mid-grey reconstructions.
    for (auto& v : gs_out_.bias.data()) v = T(0.5);

    std::vector<int64_t> enc_dims(CodecConfig::kAnalysisAtms, c), dec_dims(CodecConfig::kHyperAtms, hyp);
    enc_dims.insert(enc_dims.end(), CodecConfig::kHyperAtms, hyp);
    dec_dims.insert(dec_dims.end(), CodecConfig::kAnalysisAtms, c);
    lt_a_ = TokenGenerator<T>(ps_, "lt_a", enc_dims, cfg.tokens, cfg.token_hidden, rng);
    lt_s_ = TokenGenerator<T>(ps_, "lt_s", dec_dims, cfg.tokens, cfg.token_hidden, rng);

    prior_loc_ = ps_.add("prior.loc", Tensor<T>({hyp}, T(0)));
    prior_log_scale_ = ps_.add("prior.log_scale", Tensor<T>({hyp}, T(0)));
  }

  const CodecConfig& config() const { return cfg_; }
  const ParameterSet<T>& parameters() const { return ps_; }
  ParameterSet<T>& parameters() { return ps_; }
  const Tensor<T>& prior_loc() const { return prior_loc_; }
  const Tensor<T>& prior_log_scale() const { return prior_log_scale_; }

  /// m: [B, 1, H, W] padded QIndex map. Tokens use the per-image mean of m;
  /// m_hat is its 16 x 16 average pool.
  Conditioning<T> derive_condition(const Tensor<T>& m) const {
    detail::require_rank4(m.shape(), "derive_condition");
    const int64_t b = m.dim(0), plane = m.dim(2) * m.dim(3);
    Tensor<T> q({b, 1});
    for (int64_t i = 0; i < b; ++i) {
      double s = 0;
      for (int64_t k = 0; k < plane; ++k) s += static_cast<double>(m[i * plane + k]);
      q[i] = static_cast<T>(s / static_cast<double>(plane));
    }
    return {lt_a_(q), lt_s_(q), avg_pool2d(m, kLatentStride)};
  }

  /// input: [B, 5, H, W] = [RGB, m, r]. Returns y at /16.
  Tensor<T> analysis(const Tensor<T>& input, const Conditioning<T>& cond) const {
    if (input.rank() != 4 || input.dim(1) != 5) throw ShapeError("analysis expects [B,5,H,W], got " + shape_str(input.shape()));
    Tensor<T> h = ga_stem_(input);
    for (size_t i = 0; i < ga_blocks_.size(); ++i) h = ga_down_[i](run_stage(ga_blocks_[i], h, cond.encoder, i));
    return h;
  }

  Tensor<T> hyper_analysis(const Tensor<T>& y, const Conditioning<T>& cond) const {
    Tensor<T> h = ha_stem_(y);
    for (size_t i = 0; i < ha_blocks_.size(); ++i)
      h = ha_down_[i](run_stage(ha_blocks_[i], h, cond.encoder, ga_blocks_.size() + i));
    return h;
  }

  /// Returns {mu, sigma}; sigma = softplus(raw) + 0.04.
  std::pair<Tensor<T>, Tensor<T>> hyper_synthesis(const Tensor<T>& z_hat, const Conditioning<T>& cond) const {
    Tensor<T> h = z_hat;
    for (size_t i = 0; i < hs_blocks_.size(); ++i) h = run_stage(hs_blocks_[i], hs_up_[i](h), cond.decoder, i);
    Tensor<T> params = hs_head_(h);
    const int64_t lat = cfg_.latent_channels;
    return {slice(params, 1, 0, lat), add_scalar(softplus(slice(params, 1, lat, lat)), T(kSigmaFloor))};
  }

  /// x_hat at the padded extent, unclamped.
  Tensor<T> synthesis(const Tensor<T>& y_hat, const Conditioning<T>& cond) const {
    if (cond.m_hat.dim(2) != y_hat.dim(2) || cond.m_hat.dim(3) != y_hat.dim(3))
      throw ShapeError("synthesis: m_hat " + shape_str(cond.m_hat.shape()) + " vs y_hat " + shape_str(y_hat.shape()));
    Tensor<T> h = concat<T>({y_hat, cond.m_hat}, 1);
    for (size_t i = 0; i < gs_blocks_.size(); ++i)
      h = run_stage(gs_blocks_[i], gs_up_[i](h), cond.decoder, hs_blocks_.size() + i);
    return gs_out_(h);
  }

  /// Full pass. x: [B, 3, H, W] in [0, 1]; m, r: [B, 1, H, W] (r null means
  /// all ones). Eval mode clamps x_hat to [0, 1].
  ForwardResult<T> forward(const Tensor<T>& x, const Tensor<T>& m, std::type_identity_t<const Tensor<T>*> r, Mode mode,
                           Rng* rng = nullptr) const {
    detail::require_rank4(x.shape(), "forward");
    if (x.dim(1) != 3) throw ShapeError("forward expects 3 colour channels, got " + shape_str(x.shape()));
    const Shape plane{x.dim(0), 1, x.dim(2), x.dim(3)};
    if (m.shape() != plane || (r && r->shape() != plane))
      throw ShapeError("forward: QIndex/ROI maps must be " + shape_str(plane));
    Tensor<T> ones;
    if (!r) ones = Tensor<T>(plane, T(1));
    const Tensor<T>& roi = r ? *r : ones;

    Tensor<T> mp = pad_to_multiple(clamp(m, T(0), T(1)));
    Conditioning<T> cond = derive_condition(mp);
    Tensor<T> input = concat<T>({pad_to_multiple(x), mp, pad_to_multiple(clamp(roi, T(0), T(1)))}, 1);

    ForwardResult<T> out;
    out.y = analysis(input, cond);
    out.z = hyper_analysis(out.y, cond);
    out.z_hat = quantize(out.z, nullptr, mode, rng);
    std::tie(out.mu, out.sigma) = hyper_synthesis(out.z_hat, cond);
    out.y_hat = quantize(out.y, &out.mu, mode, rng);
    Tensor<T> xh = crop2d(synthesis(out.y_hat, cond), 0, 0, x.dim(2), x.dim(3));
    out.x_hat = mode == Mode::kEval ? clamp(xh, T(0), T(1)) : xh;
    out.likelihood_y = likelihood_y(out.y_hat, out.mu, out.sigma);
    out.likelihood_z = likelihood_z(out.z_hat, prior_loc_, prior_log_scale_);
    return out;
  }

 private:
  std::vector<Nstb<T>> stage(const std::string& name, int64_t dim, Rng& rng) {
    std::vector<Nstb<T>> blocks;
    for (int j = 0; j < cfg_.blocks_per_atm; ++j)
      blocks.emplace_back(ps_, name + ".nstb" + std::to_string(j), cfg_.block(dim), rng);
    return blocks;
  }

  static Tensor<T> run_stage(const std::vector<Nstb<T>>& blocks, Tensor<T> h, const std::vector<Tensor<T>>& tokens,
                             size_t slot) {
    const Tensor<T>* lt = tokens[slot].defined() ? &tokens[slot] : nullptr;
    for (size_t j = 0; j < blocks.size(); ++j) h = blocks[j](h, lt, static_cast<int>(j));
    return h;
  }

  CodecConfig cfg_;
  ParameterSet<T> ps_;
  Conv2d<T> ga_stem_, ha_stem_, hs_head_;
  std::vector<std::vector<Nstb<T>>> ga_blocks_, ha_blocks_, hs_blocks_, gs_blocks_;
  std::vector<Conv2d<T>> ga_down_, ha_down_;
  std::vector<ConvTranspose2d<T>> hs_up_, gs_up_;
  ConvTranspose2d<T> gs_out_;
  TokenGenerator<T> lt_a_, lt_s_;
  Tensor<T> prior_loc_, prior_log_scale_;
};

}  // namespace ngsc
