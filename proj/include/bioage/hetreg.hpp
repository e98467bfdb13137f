#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "bioage/cohort.hpp"
#include "bioage/errors.hpp"
#include "bioage/json_util.hpp"
#include "bioage/rng.hpp"

namespace bioage {

// Heteroscedastic age regressor: a fully connected trunk over the feature
// chunk, the sex covariate concatenated before two final dense layers, and a
// two-node head producing the predicted mean age and the log-variance of a
// Gaussian over the age label. Trained by minimizing the Gaussian negative
// log-likelihood with exact analytic gradients.

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

struct ChunkPrediction {
  double mean_age = 0.0;      // years
  double log_variance = 0.0;  // s = log sigma^2, clamped to [kLogVarMin, kLogVarMax]

  double sigma() const { return std::exp(0.5 * log_variance); }
};

struct DenseLayer {
  int in = 0;
  int out = 0;
  std::vector<double> w;  // row-major [out][in]
  std::vector<double> b;  // [out]
};

struct ModelParams {
  int input_dim = 0;
  std::vector<DenseLayer> trunk;  // ReLU layers
  DenseLayer fusion;              // (trunk output ++ sex) -> fusion width, ReLU
  DenseLayer head;                // fusion width -> 2, identity
};

// Gradients share the parameter layout.
using ModelGradients = ModelParams;

struct TrainConfig {
  std::vector<int> hidden_sizes{64, 32};
  int fusion_width = 16;
  int epochs = 200;
  int minibatch = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double init_scale = 1.0;  // multiplies the fan-based uniform init bound
  bool bias_only = false;   // freeze all weights at zero: constant predictor
  std::uint64_t seed = 0;

  void validate() const {
    for (int h : hidden_sizes) {
      if (h < 1) throw ConfigError("trainer.hidden_sizes: sizes must be >= 1");
    }
    if (fusion_width < 1) throw ConfigError("trainer.fusion_width: must be >= 1");
    if (epochs < 1) throw ConfigError("trainer.epochs: must be >= 1");
    if (minibatch < 1) throw ConfigError("trainer.minibatch: must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("trainer.learning_rate: must be > 0");
    if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("trainer.beta1: must be in [0, 1)");
    if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("trainer.beta2: must be in [0, 1)");
    if (!(epsilon > 0)) throw ConfigError("trainer.epsilon: must be > 0");
    if (init_scale < 0) throw ConfigError("trainer.init_scale: must be >= 0");
  }
};

inline TrainConfig train_config_from_json(const json& j, const std::string& path = "trainer") {
  TrainConfig cfg;
  ObjectReader r(j, path);
  cfg.hidden_sizes = r.get_or<std::vector<int>>("hidden_sizes", cfg.hidden_sizes);
  cfg.fusion_width = r.get_or<int>("fusion_width", cfg.fusion_width);
  cfg.epochs = r.get_or<int>("epochs", cfg.epochs);
  cfg.minibatch = r.get_or<int>("minibatch", cfg.minibatch);
  cfg.learning_rate = r.get_or<double>("learning_rate", cfg.learning_rate);
  cfg.beta1 = r.get_or<double>("beta1", cfg.beta1);
  cfg.beta2 = r.get_or<double>("beta2", cfg.beta2);
  cfg.epsilon = r.get_or<double>("epsilon", cfg.epsilon);
  cfg.init_scale = r.get_or<double>("init_scale", cfg.init_scale);
  cfg.bias_only = r.get_or<bool>("bias_only", cfg.bias_only);
  cfg.seed = r.get_or<std::uint64_t>("seed", cfg.seed);
  r.finish();
  cfg.validate();
  return cfg;
}

inline json train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["hidden_sizes"] = cfg.hidden_sizes;
  j["fusion_width"] = cfg.fusion_width;
  j["epochs"] = cfg.epochs;
  j["minibatch"] = cfg.minibatch;
  j["learning_rate"] = cfg.learning_rate;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["epsilon"] = cfg.epsilon;
  j["init_scale"] = cfg.init_scale;
  j["bias_only"] = cfg.bias_only;
  j["seed"] = cfg.seed;
  return j;
}

// One training row: a feature chunk with its subject's sex and CA label.
struct Example {
  std::vector<double> features;
  int sex = 0;
  double label = 0.0;  // chronological age, years
};

inline std::vector<Example> make_examples(std::span<const Subject> subjects) {
  std::vector<Example> out;
  for (const auto& s : subjects) {
    for (const auto& chunk : s.chunks) {
      out.push_back(Example{chunk.values, s.sex, s.chronological_age});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter plumbing
// ---------------------------------------------------------------------------

inline std::vector<DenseLayer*> layers_of(ModelParams& p) {
  std::vector<DenseLayer*> out;
  for (auto& l : p.trunk) out.push_back(&l);
  out.push_back(&p.fusion);
  out.push_back(&p.head);
  return out;
}

inline std::vector<const DenseLayer*> layers_of(const ModelParams& p) {
  std::vector<const DenseLayer*> out;
  for (auto& l : p.trunk) out.push_back(&l);
  out.push_back(&p.fusion);
  out.push_back(&p.head);
  return out;
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for (auto* layer : layers_of(z)) {
    std::fill(layer->w.begin(), layer->w.end(), 0.0);
    std::fill(layer->b.begin(), layer->b.end(), 0.0);
  }
  return z;
}

inline ModelParams init_params(int input_dim, const TrainConfig& cfg) {
  cfg.validate();
  if (input_dim < 1) throw ConfigError("init_params: input_dim must be >= 1");
  Rng rng(derive_seed(cfg.seed, 0x2001));
  ModelParams p;
  p.input_dim = input_dim;

  auto make_layer = [&](int in, int out) {
    DenseLayer l;
    l.in = in;
    l.out = out;
    l.w.resize(static_cast<std::size_t>(in) * out);
    l.b.assign(static_cast<std::size_t>(out), 0.0);
    const double a = cfg.init_scale * std::sqrt(6.0 / (in + out));
    for (auto& v : l.w) v = cfg.bias_only ? 0.0 : rng.uniform(-a, a);
    return l;
  };

  int width = input_dim;
  for (int h : cfg.hidden_sizes) {
    p.trunk.push_back(make_layer(width, h));
    width = h;
  }
  p.fusion = make_layer(width + 1, cfg.fusion_width);  // +1 for the sex covariate
  p.head = make_layer(cfg.fusion_width, 2);
  return p;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace detail {

inline void affine(const DenseLayer& l, const std::vector<double>& in, std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(l.out), 0.0);
  for (int r = 0; r < l.out; ++r) {
    const double* wr = l.w.data() + static_cast<std::size_t>(r) * l.in;
    double acc = l.b[static_cast<std::size_t>(r)];
    for (int c = 0; c < l.in; ++c) acc += wr[c] * in[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = acc;
  }
}

// Forward pass keeping pre-activations for backprop. Buffers are reused
// across calls inside the training loop.
struct ForwardTrace {
  std::vector<std::vector<double>> trunk_pre;   // per trunk layer
  std::vector<std::vector<double>> trunk_act;   // post-ReLU
  std::vector<double> fusion_in;                // trunk output ++ sex
  std::vector<double> fusion_pre;
  std::vector<double> fusion_act;
  std::vector<double> head_out;                 // {mean, raw log-variance}
};

inline void run_forward(const ModelParams& p, std::span<const double> chunk, int sex,
                        ForwardTrace& t) {
  if (static_cast<int>(chunk.size()) != p.input_dim) {
    throw RuntimeError("forward: chunk dimension " + std::to_string(chunk.size()) +
                       " does not match model input dimension " + std::to_string(p.input_dim));
  }
  t.trunk_pre.resize(p.trunk.size());
  t.trunk_act.resize(p.trunk.size());
  const std::vector<double>* cur = nullptr;
  std::vector<double> input(chunk.begin(), chunk.end());
  cur = &input;
  for (std::size_t i = 0; i < p.trunk.size(); ++i) {
    affine(p.trunk[i], *cur, t.trunk_pre[i]);
    t.trunk_act[i] = t.trunk_pre[i];
    for (auto& v : t.trunk_act[i]) v = v > 0 ? v : 0.0;
    cur = &t.trunk_act[i];
  }
  t.fusion_in = *cur;
  t.fusion_in.push_back(static_cast<double>(sex));
  affine(p.fusion, t.fusion_in, t.fusion_pre);
  t.fusion_act = t.fusion_pre;
  for (auto& v : t.fusion_act) v = v > 0 ? v : 0.0;
  affine(p.head, t.fusion_act, t.head_out);
}

}  // namespace detail

inline double clamp_log_variance(double raw) {
  return raw < kLogVarMin ? kLogVarMin : (raw > kLogVarMax ? kLogVarMax : raw);
}

inline ChunkPrediction forward(const ModelParams& p, std::span<const double> chunk, int sex) {
  detail::ForwardTrace t;
  detail::run_forward(p, chunk, sex, t);
  return ChunkPrediction{t.head_out[0], clamp_log_variance(t.head_out[1])};
}

inline ChunkPrediction forward(const ModelParams& p, const FeatureChunk& chunk, int sex) {
  return forward(p, std::span<const double>(chunk.values), sex);
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

// Mean Gaussian negative log-likelihood in the log-variance parameterization:
// (1/N) sum_i [ (label_i - mean_i)^2 * exp(-s_i) / 2 + s_i / 2 ].
inline double nll_loss(std::span<const ChunkPrediction> predictions, std::span<const double> labels) {
  if (predictions.empty()) throw RuntimeError("nll_loss: empty prediction list");
  if (predictions.size() != labels.size()) {
    throw RuntimeError("nll_loss: " + std::to_string(predictions.size()) + " predictions vs " +
                       std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double resid = labels[i] - predictions[i].mean_age;
    const double s = predictions[i].log_variance;
    total += 0.5 * resid * resid * std::exp(-s) + 0.5 * s;
  }
  return total / static_cast<double>(predictions.size());
}

namespace detail {

// Per-sample reverse pass; accumulates into grads (not averaged here).
// Returns the sample's loss contribution.
inline double backward_sample(const ModelParams& p, const Example& ex, ForwardTrace& t,
                              ModelGradients& grads) {
  run_forward(p, ex.features, ex.sex, t);
  const double mean = t.head_out[0];
  const double s_raw = t.head_out[1];
  const double s = clamp_log_variance(s_raw);
  const double resid = mean - ex.label;
  const double inv_var = std::exp(-s);
  const double loss = 0.5 * resid * resid * inv_var + 0.5 * s;

  // d/d mean and d/d s of the per-sample loss; the clamp passes no gradient
  // outside its active range.
  const double d_mean = resid * inv_var;
  double d_s = 0.5 * (1.0 - resid * resid * inv_var);
  if (s_raw < kLogVarMin || s_raw > kLogVarMax) d_s = 0.0;

  const double head_delta[2] = {d_mean, d_s};
  DenseLayer& gh = grads.head;
  std::vector<double> d_fusion_act(static_cast<std::size_t>(p.head.in), 0.0);
  for (int r = 0; r < 2; ++r) {
    const double g = head_delta[r];
    double* gw = gh.w.data() + static_cast<std::size_t>(r) * p.head.in;
    const double* wr = p.head.w.data() + static_cast<std::size_t>(r) * p.head.in;
    for (int c = 0; c < p.head.in; ++c) {
      gw[c] += g * t.fusion_act[static_cast<std::size_t>(c)];
      d_fusion_act[static_cast<std::size_t>(c)] += g * wr[c];
    }
    gh.b[static_cast<std::size_t>(r)] += g;
  }

  // Fusion layer (ReLU).
  std::vector<double> d_fusion_pre = d_fusion_act;
  for (int r = 0; r < p.fusion.out; ++r) {
    if (t.fusion_pre[static_cast<std::size_t>(r)] <= 0) d_fusion_pre[static_cast<std::size_t>(r)] = 0.0;
  }
  DenseLayer& gf = grads.fusion;
  std::vector<double> d_fusion_in(static_cast<std::size_t>(p.fusion.in), 0.0);
  for (int r = 0; r < p.fusion.out; ++r) {
    const double g = d_fusion_pre[static_cast<std::size_t>(r)];
    if (g == 0.0) continue;
    double* gw = gf.w.data() + static_cast<std::size_t>(r) * p.fusion.in;
    const double* wr = p.fusion.w.data() + static_cast<std::size_t>(r) * p.fusion.in;
    for (int c = 0; c < p.fusion.in; ++c) {
      gw[c] += g * t.fusion_in[static_cast<std::size_t>(c)];
      d_fusion_in[static_cast<std::size_t>(c)] += g * wr[c];
    }
    gf.b[static_cast<std::size_t>(r)] += g;
  }

  // Trunk, deepest layer first. The sex entry of d_fusion_in is dropped.
  std::vector<double> d_act(d_fusion_in.begin(), d_fusion_in.end() - 1);
  for (std::size_t li = p.trunk.size(); li-- > 0;) {
    const DenseLayer& l = p.trunk[li];
    DenseLayer& gl = grads.trunk[li];
    std::vector<double> d_pre = d_act;
    for (int r = 0; r < l.out; ++r) {
      if (t.trunk_pre[li][static_cast<std::size_t>(r)] <= 0) d_pre[static_cast<std::size_t>(r)] = 0.0;
    }
    const std::vector<double>* prev_act;
    std::vector<double> input_copy;
    if (li == 0) {
      input_copy.assign(ex.features.begin(), ex.features.end());
      prev_act = &input_copy;
    } else {
      prev_act = &t.trunk_act[li - 1];
    }
    std::vector<double> d_prev(static_cast<std::size_t>(l.in), 0.0);
    for (int r = 0; r < l.out; ++r) {
      const double g = d_pre[static_cast<std::size_t>(r)];
      if (g == 0.0) continue;
      double* gw = gl.w.data() + static_cast<std::size_t>(r) * l.in;
      const double* wr = l.w.data() + static_cast<std::size_t>(r) * l.in;
      for (int c = 0; c < l.in; ++c) {
        gw[c] += g * (*prev_act)[static_cast<std::size_t>(c)];
        d_prev[static_cast<std::size_t>(c)] += g * wr[c];
      }
      gl.b[static_cast<std::size_t>(r)] += g;
    }
    d_act = std::move(d_prev);
  }
  return loss;
}

}  // namespace detail

// Exact gradient of nll_loss over the batch (mean-normalized), with the
// optional batch loss reported through loss_out.
inline ModelGradients nll_gradients(const ModelParams& p, std::span<const Example> batch,
                                    double* loss_out = nullptr) {
  if (batch.empty()) throw RuntimeError("nll_gradients: empty batch");
  ModelGradients grads = zeros_like(p);
  detail::ForwardTrace trace;
  double total = 0.0;
  for (const auto& ex : batch) total += detail::backward_sample(p, ex, trace, grads);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (auto* layer : layers_of(grads)) {
    for (auto& v : layer->w) v *= inv_n;
    for (auto& v : layer->b) v *= inv_n;
  }
  if (loss_out) *loss_out = total * inv_n;
  return grads;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

inline TrainResult train(std::span<const Example> dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw RuntimeError("train: empty dataset");
  const int input_dim = static_cast<int>(dataset.front().features.size());

  TrainResult result;
  result.params = init_params(input_dim, cfg);
  ModelParams adam_m = zeros_like(result.params);
  ModelParams adam_v = zeros_like(result.params);

  Rng shuffle_rng(derive_seed(cfg.seed, 0x2002));
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<Example> batch;
  detail::ForwardTrace trace;
  long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_total = 0.0;
    std::size_t cursor = 0;
    int batch_index = 0;
    while (cursor < order.size()) {
      const std::size_t take = std::min<std::size_t>(cfg.minibatch, order.size() - cursor);
      batch.clear();
      for (std::size_t i = 0; i < take; ++i) batch.push_back(dataset[order[cursor + i]]);
      cursor += take;
      ++batch_index;

      double batch_loss = 0.0;
      ModelGradients grads = nll_gradients(result.params, batch, &batch_loss);
      if (!std::isfinite(batch_loss)) {
        throw RuntimeError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      epoch_total += batch_loss * static_cast<double>(take);

      ++step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      auto params_layers = layers_of(result.params);
      auto grads_layers = layers_of(grads);
      auto m_layers = layers_of(adam_m);
      auto v_layers = layers_of(adam_v);
      for (std::size_t li = 0; li < params_layers.size(); ++li) {
        auto update = [&](std::vector<double>& theta, const std::vector<double>& g,
                          std::vector<double>& m, std::vector<double>& v) {
          for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
          }
        };
        if (!cfg.bias_only) {
          update(params_layers[li]->w, grads_layers[li]->w, m_layers[li]->w, v_layers[li]->w);
        }
        update(params_layers[li]->b, grads_layers[li]->b, m_layers[li]->b, v_layers[li]->b);
      }
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(dataset.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace detail {
inline json layer_to_json(const DenseLayer& l) {
  return json{{"in", l.in}, {"out", l.out}, {"w", l.w}, {"b", l.b}};
}

inline DenseLayer layer_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  DenseLayer l;
  l.in = r.require<int>("in");
  l.out = r.require<int>("out");
  l.w = r.require<std::vector<double>>("w");
  l.b = r.require<std::vector<double>>("b");
  r.finish();
  if (l.w.size() != static_cast<std::size_t>(l.in) * l.out || l.b.size() != static_cast<std::size_t>(l.out)) {
    throw IoError(path + ": inconsistent layer shape");
  }
  return l;
}
}  // namespace detail

struct LoadedModel {
  ModelParams params;
  TrainConfig config;
};

// JSON checkpoint. Doubles are emitted in shortest round-trip form, so
// save -> load -> forward is bit-exact.
inline json model_to_json(const ModelParams& p, const TrainConfig& cfg) {
  json j;
  j["format"] = "bioage-model";
  j["version"] = 1;
  j["input_dim"] = p.input_dim;
  j["trunk"] = json::array();
  for (const auto& l : p.trunk) j["trunk"].push_back(detail::layer_to_json(l));
  j["fusion"] = detail::layer_to_json(p.fusion);
  j["head"] = detail::layer_to_json(p.head);
  j["train_config"] = train_config_to_json(cfg);
  return j;
}

inline LoadedModel model_from_json(const json& j, const std::string& what) {
  try {
    ObjectReader r(j, what);
    if (r.require<std::string>("format") != "bioage-model") throw IoError(what + ": not a model file");
    if (r.require<int>("version") != 1) throw IoError(what + ": unsupported model version");
    LoadedModel out;
    out.params.input_dim = r.require<int>("input_dim");
    for (const auto& l : r.raw("trunk")) {
      out.params.trunk.push_back(detail::layer_from_json(l, what + ".trunk"));
    }
    out.params.fusion = detail::layer_from_json(r.raw("fusion"), what + ".fusion");
    out.params.head = detail::layer_from_json(r.raw("head"), what + ".head");
    out.config = train_config_from_json(r.raw("train_config"), what + ".train_config");
    r.finish();
    return out;
  } catch (const ConfigError& e) {
    throw IoError(std::string(e.what()));
  }
}

inline void save_model(const std::filesystem::path& path, const ModelParams& p, const TrainConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << model_to_json(p, cfg).dump(2) << "\n";
  if (!out.good()) throw IoError("write failed: " + path.string());
}

inline LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing model checkpoint: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
  return model_from_json(j, path.string());
}

}  // namespace bioage
