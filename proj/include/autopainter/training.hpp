#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autopainter/checkpoint.hpp"
#include "autopainter/dataset.hpp"
#include "autopainter/errors.hpp"
#include "autopainter/features.hpp"
#include "autopainter/losses.hpp"
#include "autopainter/networks.hpp"
#include "autopainter/param_set.hpp"

namespace autopainter {

namespace fs = std::filesystem;

struct TrainConfig {
  int resolution = 512;
  int batch_size = 0;  // 0: 1 at >128^2, 4 at <=128^2
  std::int64_t total_steps = 1000;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  LossWeights weights{};
  GeneratorLossForm generator_loss = GeneratorLossForm::kNonSaturating;
  int d_steps_per_g_step = 1;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 500;

  int generator_depth = 0;  // 0: GeneratorConfig::default_depth(resolution)
  int generator_filters = 64;
  double noise_stddev = 0.1;
  int discriminator_filters = 64;
  int discriminator_strided_layers = 4;

  std::string feature_checkpoint;  // empty: seeded surrogate extractor
  int feature_tap_layer = 4;

  std::string train_manifest;
  std::string out_dir = "run";
  std::string resume_from;

  int effective_batch_size() const { return batch_size > 0 ? batch_size : (resolution <= 128 ? 4 : 1); }

  GeneratorConfig generator_config() const {
    GeneratorConfig g;
    g.resolution = resolution;
    g.depth = generator_depth > 0 ? generator_depth : GeneratorConfig::default_depth(resolution);
    g.base_filters = generator_filters;
    g.noise_stddev = noise_stddev;
    return g;
  }

  DiscriminatorConfig discriminator_config() const {
    DiscriminatorConfig d;
    d.resolution = resolution;
    d.base_filters = discriminator_filters;
    d.strided_layers = discriminator_strided_layers;
    return d;
  }

  void validate() const {
    if (batch_size < 0 || effective_batch_size() < 1) throw ConfigError("train: batch_size must be >= 1");
    if (total_steps < 1) throw ConfigError("train: total_steps must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("train: adam betas must lie in [0, 1)");
    if (d_steps_per_g_step < 1) throw ConfigError("train: d_steps_per_g_step must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be >= 1");
    weights.validate();
    generator_config().validate();
    discriminator_config().validate();
  }

  nlohmann::json to_json() const {
    return {{"resolution", resolution},
            {"batch_size", effective_batch_size()},
            {"total_steps", total_steps},
            {"learning_rate", learning_rate},
            {"adam_betas", {beta1, beta2}},
            {"weights", {{"w_p", weights.w_p}, {"w_f", weights.w_f}, {"w_G", weights.w_G}, {"w_tv", weights.w_tv}}},
            {"generator_loss", generator_loss == GeneratorLossForm::kSaturating ? "saturating" : "non_saturating"},
            {"d_steps_per_g_step", d_steps_per_g_step},
            {"seed", seed},
            {"checkpoint_every", checkpoint_every},
            {"generator", generator_config().to_json()},
            {"discriminator", discriminator_config().to_json()},
            {"feature_extractor", {{"checkpoint", feature_checkpoint}, {"tap_layer", feature_tap_layer}}},
            {"train_manifest", train_manifest},
            {"out_dir", out_dir},
            {"resume_from", resume_from}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.resolution = j.value("resolution", c.resolution);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("adam_betas")) {
      c.beta1 = j["adam_betas"].at(0);
      c.beta2 = j["adam_betas"].at(1);
    }
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      c.weights.w_p = w.value("w_p", c.weights.w_p);
      c.weights.w_f = w.value("w_f", c.weights.w_f);
      c.weights.w_G = w.value("w_G", c.weights.w_G);
      c.weights.w_tv = w.value("w_tv", c.weights.w_tv);
    }
    const std::string form = j.value("generator_loss", std::string("non_saturating"));
    if (form == "saturating")
      c.generator_loss = GeneratorLossForm::kSaturating;
    else if (form == "non_saturating")
      c.generator_loss = GeneratorLossForm::kNonSaturating;
    else
      throw ConfigError("train: generator_loss must be saturating or non_saturating");
    c.d_steps_per_g_step = j.value("d_steps_per_g_step", c.d_steps_per_g_step);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("generator")) {
      const auto& g = j["generator"];
      c.generator_depth = g.value("depth", c.generator_depth);
      c.generator_filters = g.value("base_filters", c.generator_filters);
      c.noise_stddev = g.value("noise_stddev", c.noise_stddev);
    }
    if (j.contains("discriminator")) {
      const auto& d = j["discriminator"];
      c.discriminator_filters = d.value("base_filters", c.discriminator_filters);
      c.discriminator_strided_layers = d.value("strided_layers", c.discriminator_strided_layers);
    }
    if (j.contains("feature_extractor")) {
      const auto& f = j["feature_extractor"];
      c.feature_checkpoint = f.value("checkpoint", c.feature_checkpoint);
      c.feature_tap_layer = f.value("tap_layer", c.feature_tap_layer);
    }
    c.train_manifest = j.value("train_manifest", c.train_manifest);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.resume_from = j.value("resume_from", c.resume_from);
    return c;
  }
};

template <typename T>
struct AdamState {
  ParamSet<T> m;
  ParamSet<T> v;
  std::int64_t t = 0;
};

template <typename T>
AdamState<T> make_adam_state(const ParamSet<T>& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& s, double lr, double beta1,
               double beta2, double eps = 1e-8) {
  ++s.t;
  const double c1 = 1.0 - std::pow(beta1, double(s.t));
  const double c2 = 1.0 - std::pow(beta2, double(s.t));
  // Bias corrections folded into the step size: lr * mhat / (sqrt(vhat) + eps).
  const T step = T(lr / c1);
  const T inv_sqrt_c2 = T(1.0 / std::sqrt(c2));
  const T b1 = T(beta1), b2 = T(beta2), one_b1 = T(1 - beta1), one_b2 = T(1 - beta2), e = T(eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    T* p = params.at(k).data();
    const T* g = grads.at(k).data();
    T* m = s.m.at(k).data();
    T* v = s.v.at(k).data();
    const std::size_t n = params.at(k).size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + one_b1 * g[i];
      v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
      p[i] -= step * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + e);
    }
  }
}

template <typename T>
struct TrainState {
  ParamSet<T> generator;
  ParamSet<T> discriminator;
  AdamState<T> generator_opt;
  AdamState<T> discriminator_opt;
  std::int64_t step = 0;
  std::mt19937_64 noise_rng;
};

struct StepMetrics {
  std::int64_t step = 0;
  double L_p = 0, L_f = 0, L_G = 0, L_tv = 0, L_D = 0;
  double d_real_mean = 0, d_fake_mean = 0;
  double total = 0;

  nlohmann::ordered_json to_json() const {
    return {{"step", step}, {"L_p", L_p},   {"L_f", L_f}, {"L_G", L_G}, {"L_tv", L_tv}, {"L_D", L_D},
            {"d_real_mean", d_real_mean}, {"d_fake_mean", d_fake_mean}};
  }

  friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

struct StepOptions {
  bool update_discriminator = true;
  bool update_generator = true;
};

/// Generator objective terms and parameter gradients for one batch and noise plane.
template <typename T>
struct GeneratorObjective {
  LossParts parts;
  double total = 0.0;
  ParamSet<T> grads;
  Tensor<T> fake;
  double d_fake_mean = 0.0;
};

template <typename T>
T grid_mean(const Tensor<T>& grid) {
  return std::accumulate(grid.storage().begin(), grid.storage().end(), T(0)) / T(grid.size());
}

template <typename T>
class Trainer {
 public:
  explicit Trainer(TrainConfig config)
      : cfg_(std::move(config)),
        gen_(cfg_.generator_config()),
        disc_(cfg_.discriminator_config()),
        phi_(load_extractor(cfg_)) {
    cfg_.validate();
  }

  Trainer(TrainConfig config, ParamSet<T> feature_params)
      : cfg_(std::move(config)),
        gen_(cfg_.generator_config()),
        disc_(cfg_.discriminator_config()),
        phi_(std::move(feature_params)) {
    cfg_.validate();
  }

  const TrainConfig& config() const { return cfg_; }
  const Generator<T>& generator() const { return gen_; }
  const Discriminator<T>& discriminator() const { return disc_; }
  const Vgg16Extractor<T>& extractor() const { return phi_; }

  TrainState<T> init_state() const {
    TrainState<T> s;
    s.generator = gen_.init(mix_seed(cfg_.seed, 1));
    s.discriminator = disc_.init(mix_seed(cfg_.seed, 2));
    s.generator_opt = make_adam_state(s.generator);
    s.discriminator_opt = make_adam_state(s.discriminator);
    s.noise_rng.seed(mix_seed(cfg_.seed, 3));
    return s;
  }

  Tensor<T> sample_noise(std::int64_t n, std::mt19937_64& rng) const {
    return gaussian_tensor<T>({n, 1, cfg_.resolution, cfg_.resolution}, cfg_.noise_stddev, rng);
  }

  /// Composite generator loss and its gradient w.r.t. every generator parameter.
  GeneratorObjective<T> generator_objective(const ParamSet<T>& generator, const ParamSet<T>& discriminator,
                                            const Batch<T>& batch, const Tensor<T>& noise,
                                            const LossWeights& w) const {
    GeneratorTape<T> gt;
    Tensor<T> fake = gen_.forward(generator, generator_input(batch.input, noise), &gt);
    return generator_objective(generator, discriminator, batch, std::move(fake), gt, w);
  }

  /// As above, reusing a recorded generator forward pass.
  GeneratorObjective<T> generator_objective(const ParamSet<T>& generator, const ParamSet<T>& discriminator,
                                            const Batch<T>& batch, Tensor<T> fake, const GeneratorTape<T>& gt,
                                            const LossWeights& w) const {
    GeneratorObjective<T> out;
    out.fake = std::move(fake);
    Tensor<T> d_fake(out.fake.shape());

    DiscriminatorTape<T> dt;
    disc_.logits(discriminator, batch.input, out.fake, &dt);
    out.parts.adversarial = adversarial_generator_loss(dt.probs, cfg_.generator_loss);
    out.d_fake_mean = grid_mean(dt.probs);
    if (w.w_G > 0) {
      const Tensor<T> d_logits = cfg_.generator_loss == GeneratorLossForm::kNonSaturating
                                     ? bce_logit_grad(dt.probs, true, T(1))
                                     : bce_logit_grad(dt.probs, false, T(-1));
      d_fake.add_scaled(disc_.backward(discriminator, dt, d_logits, nullptr).image, T(w.w_G));
    }

    out.parts.pixel = pixel_loss(batch.target, out.fake);
    if (w.w_p > 0) d_fake.add_scaled(pixel_loss_grad(batch.target, out.fake), T(w.w_p));

    const Tensor<T> phi_y = phi_.forward(batch.target);
    if (w.w_f > 0) {
      auto fl = feature_loss_with_grad(phi_, phi_y, out.fake);
      out.parts.feature = fl.value;
      d_fake.add_scaled(fl.grad, T(w.w_f));
    } else {
      out.parts.feature = mean_squared_difference(phi_y, phi_.forward(out.fake));
    }

    out.parts.tv = tv_loss(out.fake);
    if (w.w_tv > 0) d_fake.add_scaled(tv_loss_grad(out.fake), T(w.w_tv));

    out.total = composite_loss(w, out.parts);
    out.grads = generator.zeros_like();
    gen_.backward(generator, gt, d_fake, out.grads);
    return out;
  }

  /// Discriminator loss on (real, fake) pairs plus parameter gradients.
  struct DiscriminatorObjective {
    double loss = 0.0;
    double real_mean = 0.0;
    double fake_mean = 0.0;
    ParamSet<T> grads;
  };

  DiscriminatorObjective discriminator_objective(const ParamSet<T>& discriminator, const Tensor<T>& condition,
                                                 const Tensor<T>& real, const Tensor<T>& fake,
                                                 bool with_grads = true) const {
    DiscriminatorTape<T> rt, ft;
    disc_.logits(discriminator, condition, real, &rt);
    disc_.logits(discriminator, condition, fake, &ft);
    DiscriminatorObjective out;
    out.loss = discriminator_loss(rt.probs, ft.probs);
    out.real_mean = grid_mean(rt.probs);
    out.fake_mean = grid_mean(ft.probs);
    if (with_grads) {
      out.grads = discriminator.zeros_like();
      disc_.backward(discriminator, rt, bce_logit_grad(rt.probs, true, T(1)), &out.grads, false);
      disc_.backward(discriminator, ft, bce_logit_grad(ft.probs, false, T(1)), &out.grads, false);
    }
    return out;
  }

  /// One alternating update: discriminator step(s) on a detached fake, then one generator step.
  StepMetrics train_step(TrainState<T>& s, const Batch<T>& batch, StepOptions opt = {}) const {
    if (batch.input.rank() != 4 || batch.input.dim(2) != cfg_.resolution || batch.input.dim(3) != cfg_.resolution)
      throw ParameterError("train_step: batch resolution does not match config (" +
                           std::to_string(cfg_.resolution) + ")");
    StepMetrics m;
    m.step = s.step + 1;
    const Tensor<T> noise = sample_noise(batch.size(), s.noise_rng);
    GeneratorTape<T> gt;
    Tensor<T> fake = gen_.forward(s.generator, generator_input(batch.input, noise), &gt);

    for (int k = 0; k < cfg_.d_steps_per_g_step; ++k) {
      auto d = discriminator_objective(s.discriminator, batch.input, batch.target, fake, opt.update_discriminator);
      if (k == 0) {
        m.L_D = d.loss;
        m.d_real_mean = d.real_mean;
        m.d_fake_mean = d.fake_mean;
      }
      guard_finite(m, "L_D", d.loss);
      if (opt.update_discriminator)
        adam_step(s.discriminator, d.grads, s.discriminator_opt, cfg_.learning_rate, cfg_.beta1, cfg_.beta2);
    }

    GeneratorObjective<T> g;
    try {
      g = generator_objective(s.generator, s.discriminator, batch, std::move(fake), gt, cfg_.weights);
    } catch (const LossError& e) {
      throw TrainingError("step " + std::to_string(m.step) + ": " + e.what() + " " + diagnostic(m));
    }
    m.L_p = g.parts.pixel;
    m.L_f = g.parts.feature;
    m.L_G = g.parts.adversarial;
    m.L_tv = g.parts.tv;
    m.total = g.total;
    if (opt.update_generator)
      adam_step(s.generator, g.grads, s.generator_opt, cfg_.learning_rate, cfg_.beta1, cfg_.beta2);
    if (!s.generator.all_finite() || !s.discriminator.all_finite())
      throw TrainingError("step " + std::to_string(m.step) + ": non-finite parameters after update " + diagnostic(m));
    ++s.step;
    return m;
  }

  /// Sample indices for `step`: consecutive slices of per-epoch seeded permutations.
  std::vector<std::size_t> batch_indices(std::int64_t step, std::size_t dataset_size) const {
    const auto b = static_cast<std::size_t>(cfg_.effective_batch_size());
    std::vector<std::size_t> out;
    std::vector<std::size_t> perm;
    std::int64_t perm_epoch = -1;
    for (std::size_t k = 0; k < b; ++k) {
      const std::size_t pos = static_cast<std::size_t>(step) * b + k;
      const auto epoch = static_cast<std::int64_t>(pos / dataset_size);
      if (epoch != perm_epoch) {
        perm.resize(dataset_size);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::mt19937_64 rng(mix_seed(cfg_.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        std::shuffle(perm.begin(), perm.end(), rng);
        perm_epoch = epoch;
      }
      out.push_back(perm[pos % dataset_size]);
    }
    return out;
  }

  // Checkpointing ------------------------------------------------------------------------------

  void save_state(const TrainState<T>& s, const fs::path& path) const {
    const ParamSet<float> g = s.generator.template cast<float>(), d = s.discriminator.template cast<float>();
    const ParamSet<float> gm = s.generator_opt.m.template cast<float>(), gv = s.generator_opt.v.template cast<float>();
    const ParamSet<float> dm = s.discriminator_opt.m.template cast<float>(),
                          dv = s.discriminator_opt.v.template cast<float>();
    std::ostringstream rng;
    rng << s.noise_rng;
    nlohmann::json meta{{"step", s.step},
                        {"noise_rng", rng.str()},
                        {"generator_adam_t", s.generator_opt.t},
                        {"discriminator_adam_t", s.discriminator_opt.t},
                        {"train_config", cfg_.to_json()},
                        {"feature_extractor", phi_.params().config()}};
    save_checkpoint(path,
                    {{"generator", &g},
                     {"discriminator", &d},
                     {"generator.adam_m", &gm},
                     {"generator.adam_v", &gv},
                     {"discriminator.adam_m", &dm},
                     {"discriminator.adam_v", &dv}},
                    meta);
  }

  TrainState<T> load_state(const fs::path& path) const {
    CheckpointData data = load_checkpoint_file(path);
    auto take = [&](const std::string& name, const nlohmann::json& expected) {
      auto it = data.groups.find(name);
      if (it == data.groups.end()) throw LoadError(path.string() + ": missing group " + name);
      require_config(it->second, expected, path.string() + " [" + name + "]");
      return it->second.template cast<T>();
    };
    const nlohmann::json gcfg = gen_.config().to_json(), dcfg = disc_.config().to_json();
    TrainState<T> s;
    s.generator = take("generator", gcfg);
    s.discriminator = take("discriminator", dcfg);
    s.generator_opt = {take("generator.adam_m", gcfg), take("generator.adam_v", gcfg),
                       data.metadata.value("generator_adam_t", std::int64_t{0})};
    s.discriminator_opt = {take("discriminator.adam_m", dcfg), take("discriminator.adam_v", dcfg),
                           data.metadata.value("discriminator_adam_t", std::int64_t{0})};
    s.step = data.metadata.at("step");
    std::istringstream rng(data.metadata.at("noise_rng").get<std::string>());
    rng >> s.noise_rng;
    if (!rng) throw LoadError(path.string() + ": corrupt noise RNG state");
    return s;
  }

 private:
  static Vgg16Extractor<T> load_extractor(const TrainConfig& c) {
    if (c.feature_checkpoint.empty())
      return Vgg16Extractor<T>(Vgg16Extractor<T>::surrogate_params(c.feature_tap_layer, mix_seed(c.seed, 4)));
    CheckpointData data = load_checkpoint_file(c.feature_checkpoint);
    auto it = data.groups.find("features");
    if (it == data.groups.end()) throw LoadError(c.feature_checkpoint + ": no 'features' group");
    nlohmann::json cfg = it->second.config();
    cfg["tap_layer"] = c.feature_tap_layer;
    ParamSet<T> p(cfg);
    for (std::size_t i = 0; i < it->second.size(); ++i)
      p.add(it->second.name(i), it->second.at(i).template cast<T>());
    return Vgg16Extractor<T>(std::move(p));
  }

  static std::string diagnostic(const StepMetrics& m) { return "[terms: " + m.to_json().dump() + "]"; }

  static void guard_finite(const StepMetrics& m, const char* term, double value) {
    if (!std::isfinite(value))
      throw TrainingError("step " + std::to_string(m.step) + ": non-finite " + term + " " + diagnostic(m));
  }

  TrainConfig cfg_;
  Generator<T> gen_;
  Discriminator<T> disc_;
  Vgg16Extractor<T> phi_;
};

struct TrainSummary {
  std::int64_t steps_run = 0;
  StepMetrics last;
  fs::path final_checkpoint;
};

/// Full loop over the train manifest: checkpoints every `checkpoint_every` steps plus a final
/// one, metrics appended to `<out_dir>/metrics.jsonl`, run provenance in `<out_dir>/run.json`.
inline TrainSummary train(const TrainConfig& config, std::ostream* progress = nullptr) {
  config.validate();
  if (config.train_manifest.empty()) throw ConfigError("train: train_manifest is not set");
  const DatasetManifest manifest = read_manifest(config.train_manifest);
  if (manifest.entries.empty()) throw ConfigError("train: dataset " + config.train_manifest + " is empty");
  if (manifest.resolution != config.resolution)
    throw ConfigError("train: manifest resolution " + std::to_string(manifest.resolution) +
                      " differs from config resolution " + std::to_string(config.resolution));

  Trainer<float> trainer(config);
  TrainState<float> state = config.resume_from.empty() ? trainer.init_state() : trainer.load_state(config.resume_from);

  const fs::path out(config.out_dir);
  fs::create_directories(out / "checkpoints");
  {
    nlohmann::json run{{"config", config.to_json()},
                       {"generator_config_hash", state.generator.config_hash()},
                       {"discriminator_config_hash", state.discriminator.config_hash()},
                       {"feature_extractor",
                        {{"config", trainer.extractor().params().config()},
                         {"source", config.feature_checkpoint.empty() ? "surrogate" : config.feature_checkpoint},
                         {"hash", trainer.extractor().params().config_hash()}}}};
    std::ofstream(out / "run.json") << run.dump(2) << "\n";
  }
  std::ofstream log(out / "metrics.jsonl", config.resume_from.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw LoadError("cannot open metrics log in " + out.string());

  auto checkpoint = [&](const fs::path& path) {
    try {
      trainer.save_state(state, path);
    } catch (const std::exception& e) {
      log.flush();
      throw TrainingError("checkpoint " + path.string() + " failed: " + e.what());
    }
  };

  TrainSummary summary;
  while (state.step < config.total_steps) {
    const Batch<float> batch = load_batch<float>(manifest, trainer.batch_indices(state.step, manifest.entries.size()));
    StepMetrics m;
    try {
      m = trainer.train_step(state, batch);
    } catch (...) {
      log.flush();
      throw;
    }
    log << m.to_json().dump() << "\n";
    log.flush();
    if (progress && (m.step % 10 == 0 || m.step == config.total_steps))
      *progress << "step " << m.step << " L_p=" << m.L_p << " L_D=" << m.L_D << "\n";
    if (m.step % config.checkpoint_every == 0)
      checkpoint(out / "checkpoints" / ("step_" + std::to_string(m.step) + ".json"));
    summary.last = m;
    ++summary.steps_run;
  }
  summary.final_checkpoint = out / "final.json";
  checkpoint(summary.final_checkpoint);
  return summary;
}

}  // namespace autopainter
