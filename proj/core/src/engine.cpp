#include "samda/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>

#include "samda/adamw.hpp"
#include "samda/checkpoint.hpp"
#include "samda/errors.hpp"
#include "samda/ops.hpp"
#include "samda/rng.hpp"
#include "samda/stats.hpp"

namespace samda::engine {

namespace fs = std::filesystem;
using adapt::Method;

namespace {

// Label constants for derive_seed streams.
constexpr std::uint64_t kStreamShuffle = 0x5f1;
constexpr std::uint64_t kStreamTrainPrompt = 0x7a1;
constexpr std::uint64_t kStreamEvalPrompt = 0xe7a;
constexpr std::uint64_t kStreamAttach = 0xa77;

bool encoder_frozen(Method m) { return m == Method::kDecoderFt || m == Method::kSamDaDec; }

std::string sample_id(const data::Sample& s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "v%04u_s%02u", s.volume_id, s.slice_index);
  return buf;
}

}  // namespace

// ---- configs -----------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ValidationError("train: lr must be positive");
  if (!(weight_decay >= 0)) throw ValidationError("train: weight_decay must be non-negative");
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (prompt_jitter < 0) throw ValidationError("train: prompt_jitter must be non-negative");
  if (base_checkpoint.empty() && method != Method::kFullFt) {
    throw ValidationError("train: method " + adapt::method_name(method) + " adapts a base model; set base_checkpoint");
  }
  model.validate();
  adapter.validate();
  lora.validate();
  loss.validate();
}

Json to_json(const TrainConfig& c) {
  Json j = {{"version", config::kConfigVersion},
            {"method", adapt::method_name(c.method)},
            {"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"prompt_jitter", c.prompt_jitter},
            {"cache_encoder", c.cache_encoder},
            {"model", config::to_json(c.model)},
            {"adapter", config::to_json(c.adapter)},
            {"lora", config::to_json(c.lora)},
            {"loss", config::to_json(c.loss)},
            {"data_dir", c.data_dir},
            {"base_checkpoint", c.base_checkpoint},
            {"group", c.group}};
  return j;
}

TrainConfig train_config_from_json(const Json& j, bool top_level, TrainConfig c) {
  if (top_level) config::check_version(j, "train config");
  config::ObjectReader r(j, "train");
  int version = 0;
  r.get("version", version);
  std::string method = adapt::method_name(c.method);
  r.get("method", method);
  c.method = adapt::parse_method(method);
  r.get("lr", c.lr);
  r.get("weight_decay", c.weight_decay);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("seed", c.seed);
  r.get("prompt_jitter", c.prompt_jitter);
  r.get("cache_encoder", c.cache_encoder);
  if (const auto* m = r.child("model")) c.model = config::model_config_from_json(*m, "train.model");
  if (const auto* a = r.child("adapter")) c.adapter = config::adapter_config_from_json(*a, "train.adapter");
  if (const auto* l = r.child("lora")) c.lora = config::lora_config_from_json(*l, "train.lora");
  if (const auto* l = r.child("loss")) c.loss = config::loss_config_from_json(*l, "train.loss");
  r.get("data_dir", c.data_dir);
  r.get("base_checkpoint", c.base_checkpoint);
  r.get("group", c.group);
  r.finish();
  return c;
}

// ---- prompts -----------------------------------------------------------------

sam::PromptPoint interior_point(const loss::BinaryMask& mask, std::uint64_t seed, int jitter) {
  const int h = mask.height, w = mask.width;
  const auto at = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < w && y < h && mask.data[static_cast<std::size_t>(y * w + x)] != 0;
  };
  double cx = 0, cy = 0;
  std::int64_t n = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (at(x, y)) {
        cx += x;
        cy += y;
        ++n;
      }
  if (n == 0) throw ValidationError("cannot place a positive prompt on an empty mask");
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);

  const auto nearest = [&](bool eroded) {
    int bx = -1, by = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!at(x, y)) continue;
        if (eroded && !(at(x - 1, y) && at(x + 1, y) && at(x, y - 1) && at(x, y + 1))) continue;
        const double d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        if (d < best) {
          best = d;
          bx = x;
          by = y;
        }
      }
    return std::pair{bx, by};
  };
  auto [x, y] = nearest(true);
  if (x < 0) std::tie(x, y) = nearest(false);

  if (jitter > 0) {
    CounterRng rng(seed);
    const int jx = x + static_cast<int>(rng.uniform_int(-jitter, jitter));
    const int jy = y + static_cast<int>(rng.uniform_int(-jitter, jitter));
    if (at(jx, jy)) {
      x = jx;
      y = jy;
    }
  }
  return {static_cast<double>(x), static_cast<double>(y), true};
}

sam::PromptSet eval_prompt(const data::Sample& s, int jitter) {
  return {{interior_point(s.mask, derive_seed(kStreamEvalPrompt, {s.volume_id, s.slice_index}), jitter)}};
}

// ---- model files -------------------------------------------------------------

Json to_json(const ModelSpec& s) {
  return {{"version", config::kConfigVersion},
          {"method", adapt::method_name(s.method)},
          {"model", config::to_json(s.model)},
          {"adapter", config::to_json(s.adapter)},
          {"lora", config::to_json(s.lora)},
          {"attach_seed", s.attach_seed}};
}

ModelSpec model_spec_from_json(const Json& j) {
  config::check_version(j, "checkpoint sidecar");
  ModelSpec s;
  config::ObjectReader r(j, "sidecar");
  int version = 0;
  r.get("version", version);
  std::string method;
  r.get("method", method);
  s.method = adapt::parse_method(method);
  if (const auto* m = r.child("model")) s.model = config::model_config_from_json(*m, "sidecar.model");
  if (const auto* a = r.child("adapter")) s.adapter = config::adapter_config_from_json(*a, "sidecar.adapter");
  if (const auto* l = r.child("lora")) s.lora = config::lora_config_from_json(*l, "sidecar.lora");
  r.get("attach_seed", s.attach_seed);
  r.finish();
  return s;
}

std::unique_ptr<sam::SamModel<float>> build_model(const ModelSpec& spec) {
  auto model = std::make_unique<sam::SamModel<float>>(spec.model);
  adapt::prepare_method(*model, spec.method, spec.adapter, spec.lora, spec.attach_seed);
  return model;
}

fs::path sidecar_path(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".json"); }

void save_model(const fs::path& checkpoint, const sam::SamModel<float>& model, const ModelSpec& spec) {
  write_checkpoint(checkpoint, to_checkpoint(model.params()));
  config::write_json_file(sidecar_path(checkpoint), to_json(spec));
}

LoadedModel load_model(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw ValidationError("checkpoint not found: " + checkpoint.string());
  const auto side = sidecar_path(checkpoint);
  if (!fs::exists(side)) throw ValidationError("checkpoint sidecar not found: " + side.string());
  LoadedModel out;
  out.spec = model_spec_from_json(config::read_json_file(side));
  out.model = build_model(out.spec);
  load_checkpoint(out.model->params(), read_checkpoint(checkpoint), true);
  return out;
}

// ---- data --------------------------------------------------------------------

Dataset Dataset::open(const fs::path& root) {
  const auto manifest = root / "manifest.json";
  if (!fs::exists(manifest)) throw ValidationError("no dataset at " + root.string() + " (manifest.json missing)");
  return {root, data::read_manifest(manifest)};
}

bool Dataset::has(const std::string& domain, const std::string& split) const {
  return manifest.find(domain, split) != nullptr;
}

std::vector<data::Sample> Dataset::load(const std::string& domain, const std::string& split) const {
  return data::load_split(root, manifest, domain, split);
}

Tensor<float> image_tensor(const data::Sample& s) { return Tensor<float>::from({s.height, s.width}, s.image); }

// ---- evaluation --------------------------------------------------------------

Json to_json(const EvalResult& r) {
  return {{"domain", r.domain}, {"split", r.split},         {"mean", r.mean},
          {"std", r.std},       {"per_image", r.per_image}, {"sample_ids", r.sample_ids}};
}

EvalResult eval_result_from_json(const Json& j) {
  EvalResult r;
  try {
    r.domain = j.at("domain").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.mean = j.at("mean").get<double>();
    r.std = j.at("std").get<double>();
    r.per_image = j.at("per_image").get<std::vector<double>>();
    if (j.contains("sample_ids")) r.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed evaluation record: ") + e.what());
  }
  return r;
}

EvalResult evaluate_predictor(const Predictor& predict, const std::vector<data::Sample>& samples,
                              const std::string& domain, const std::string& split, int jitter) {
  EvalResult r{domain, split, {}, {}, 0.0, 0.0};
  for (const auto& s : samples) {
    const auto logits = predict(s, eval_prompt(s, jitter));
    r.per_image.push_back(loss::compute_iou(loss::binarize(logits), s.mask));
    r.sample_ids.push_back(sample_id(s));
  }
  r.mean = stats::mean(r.per_image);
  r.std = stats::stddev(r.per_image);
  return r;
}

EvalResult evaluate(const sam::SamModel<float>& model, const std::vector<data::Sample>& samples,
                    const std::string& domain, const std::string& split, int jitter) {
  NoGradGuard no_grad;
  return evaluate_predictor(
      [&model](const data::Sample& s, const sam::PromptSet& p) { return model.predict(image_tensor(s), p).logits; },
      samples, domain, split, jitter);
}

// ---- supervised training -----------------------------------------------------

namespace {

struct TrainingSet {
  std::vector<data::Sample> samples;
  std::vector<sam::ImageEmbedding<float>> cached;  // empty unless the encoder is frozen and caching is on
};

TrainingSet prepare_split(const Dataset& ds, const std::string& domain, const std::string& split,
                          const sam::SamModel<float>& model, bool cache) {
  TrainingSet t{ds.load(domain, split), {}};
  if (cache) {
    NoGradGuard no_grad;
    for (const auto& s : t.samples) t.cached.push_back(model.encode_image(image_tensor(s)));
  }
  return t;
}

sam::MaskPrediction<float> forward(const sam::SamModel<float>& model, const TrainingSet& set, std::size_t i,
                                   const sam::PromptSet& prompt) {
  if (!set.cached.empty()) return model.decode_masks(set.cached[i], model.encode_prompts(prompt));
  return model.predict(image_tensor(set.samples[i]), prompt);
}

double validation_iou(const sam::SamModel<float>& model, const TrainingSet& val, int jitter) {
  NoGradGuard no_grad;
  std::vector<double> ious;
  for (std::size_t i = 0; i < val.samples.size(); ++i) {
    const auto pred = forward(model, val, i, eval_prompt(val.samples[i], jitter));
    ious.push_back(loss::compute_iou(loss::binarize(pred.logits), val.samples[i].mask));
  }
  return stats::mean(ious);
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TrainResult train_supervised(const TrainConfig& cfg, const fs::path& out_dir, const ProgressFn& progress) {
  cfg.validate();
  if (cfg.data_dir.empty()) throw ValidationError("train: no dataset given (data_dir or --data)");
  const auto ds = Dataset::open(cfg.data_dir);
  if (!ds.has("source", "train") || !ds.has("source", "val")) {
    throw ValidationError("train: dataset lacks source/train or source/val");
  }
  const auto log = [&](const std::string& msg) {
    if (progress) progress(msg);
  };

  ModelSpec spec{cfg.method, cfg.model, cfg.adapter, cfg.lora, derive_seed(cfg.seed, {kStreamAttach})};
  std::unique_ptr<sam::SamModel<float>> model;
  if (!cfg.base_checkpoint.empty()) {
    auto base = load_model(cfg.base_checkpoint);
    if (base.spec.method != Method::kFullFt && base.spec.method != Method::kDecoderFt) {
      throw ValidationError("train: base checkpoint must be a plain model (full_ft or decoder_ft), got " +
                            adapt::method_name(base.spec.method));
    }
    spec.model = base.spec.model;
    model = std::make_unique<sam::SamModel<float>>(spec.model);
    load_checkpoint(model->params(), to_checkpoint(base.model->params()), true);
    adapt::prepare_method(*model, spec.method, spec.adapter, spec.lora, spec.attach_seed);
  } else {
    model = build_model(spec);
  }
  auto& params = model->params();

  const bool cache = cfg.cache_encoder && encoder_frozen(cfg.method);
  auto train = prepare_split(ds, "source", "train", *model, cache);
  auto val = prepare_split(ds, "source", "val", *model, cache);
  for (const auto& s : train.samples) {
    if (s.mask.count() == 0) throw ValidationError("train: empty training mask in volume " + std::to_string(s.volume_id));
  }

  const auto frozen = params.snapshot([&](const std::string& n) { return !params.at(n).trainable; });
  TrainResult result;
  result.trainable = params.count(true);
  result.total = params.count(false);

  AdamW<float> opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  const auto trainable = [&](const std::string& n) { return params.at(n).trainable; };
  auto best = params.snapshot(trainable);
  double best_iou = validation_iou(*model, val, cfg.prompt_jitter);
  result.val_iou.push_back(best_iou);
  log("epoch 0 val IoU " + std::to_string(best_iou));

  std::vector<std::size_t> order(train.samples.size());
  params.zero_grad();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    CounterRng shuffle(derive_seed(cfg.seed, {kStreamShuffle, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const auto idx = order[b];
        const auto& s = train.samples[idx];
        const sam::PromptSet prompt{{interior_point(
            s.mask,
            derive_seed(cfg.seed, {kStreamTrainPrompt, s.volume_id, s.slice_index, static_cast<std::uint64_t>(epoch)}),
            cfg.prompt_jitter)}};
        const auto pred = forward(*model, train, idx, prompt);
        auto l = loss::supervised_loss(pred, s.mask, cfg.loss);
        epoch_loss += l.total.item();
        ops::scale(l.total, inv).backward();
      }
      opt.step(params);
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    const double v = validation_iou(*model, val, cfg.prompt_jitter);
    result.val_iou.push_back(v);
    log("epoch " + std::to_string(epoch) + " loss " + std::to_string(result.epoch_loss.back()) + " val IoU " +
        std::to_string(v));
    if (v > best_iou) {
      best_iou = v;
      best = params.snapshot(trainable);
      result.best_epoch = epoch;
    }
  }
  params.restore(best);

  for (const auto& [name, values] : frozen) {
    const auto now = params.tensor(name).data();
    if (!bit_equal(values, std::vector<float>(now.begin(), now.end()))) {
      throw IntegrityError("freeze audit: frozen parameter " + name + " changed during training");
    }
  }

  fs::create_directories(out_dir);
  result.checkpoint = out_dir / "checkpoint.sdck";
  save_model(result.checkpoint, *model, spec);

  for (const auto& domain : {std::string("source"), std::string("target")}) {
    if (!ds.has(domain, "test")) continue;
    result.evaluations.push_back(evaluate(*model, ds.load(domain, "test"), domain, "test", cfg.prompt_jitter));
    log(domain + "/test IoU " + std::to_string(result.evaluations.back().mean));
  }

  Json evals = Json::array();
  for (const auto& e : result.evaluations) evals.push_back(to_json(e));
  result.fragment = {{"version", config::kConfigVersion},
                     {"kind", "train"},
                     {"group", cfg.label()},
                     {"method", adapt::method_name(cfg.method)},
                     {"seed", cfg.seed},
                     {"params", {{"trainable", result.trainable}, {"total", result.total}}},
                     {"loss_curve", result.epoch_loss},
                     {"val_iou_curve", result.val_iou},
                     {"best_epoch", result.best_epoch},
                     {"checkpoint", result.checkpoint.filename().string()},
                     {"evaluations", evals},
                     {"config", to_json(cfg)}};
  config::write_json_file(out_dir / "train.fragment.json", result.fragment);
  return result;
}

// ---- ablation ----------------------------------------------------------------

AblationAxis parse_axis(const std::string& name) {
  if (name == "size") return AblationAxis::kSize;
  if (name == "placement") return AblationAxis::kPlacement;
  if (name == "method") return AblationAxis::kMethod;
  throw ValidationError("unknown ablation axis '" + name + "' (expected size, placement or method)");
}

std::string axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::kSize:
      return "size";
    case AblationAxis::kPlacement:
      return "placement";
    case AblationAxis::kMethod:
      return "method";
  }
  return "?";
}

Json to_json(const ExperimentConfig& c) {
  Json methods = Json::array();
  for (auto m : c.methods) methods.push_back(adapt::method_name(m));
  auto train = to_json(c.train);
  auto base = to_json(c.base);
  train.erase("version");
  base.erase("version");
  return {{"version", config::kConfigVersion}, {"train", train}, {"base", base},
          {"seeds", c.seeds},                  {"sizes", c.sizes}, {"methods", methods}};
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  config::check_version(j, "experiment config");
  ExperimentConfig c;
  c.base.method = Method::kFullFt;
  config::ObjectReader r(j, "experiment");
  int version = 0;
  r.get("version", version);
  if (const auto* t = r.child("train")) c.train = train_config_from_json(*t, false, c.train);
  if (const auto* b = r.child("base")) c.base = train_config_from_json(*b, false, c.base);
  r.get("seeds", c.seeds);
  r.get("sizes", c.sizes);
  std::vector<std::string> methods;
  for (auto m : c.methods) methods.push_back(adapt::method_name(m));
  r.get("methods", methods);
  c.methods.clear();
  for (const auto& m : methods) c.methods.push_back(adapt::parse_method(m));
  r.finish();
  if (c.seeds.empty()) throw ValidationError("experiment: at least one seed is required");
  if (c.sizes.empty()) throw ValidationError("experiment: at least one adapter size is required");
  for (int s : c.sizes) {
    if (s < 1) throw ValidationError("experiment: adapter sizes must be positive");
  }
  if (c.base.method != Method::kFullFt) throw ValidationError("experiment: the base model must be trained with full_ft");
  return c;
}

std::vector<AblationRun> ablation_matrix(const ExperimentConfig& c, AblationAxis axis) {
  std::vector<std::pair<std::string, TrainConfig>> variants;
  switch (axis) {
    case AblationAxis::kSize:
      for (int size : c.sizes) {
        auto t = c.train;
        t.method = Method::kSamDaDec;
        t.adapter.prompt_dim = size;
        t.group = "sam_da_dec_Da" + std::to_string(size);
        variants.emplace_back(t.group, t);
      }
      break;
    case AblationAxis::kPlacement:
      for (auto m : {Method::kSamDaDec, Method::kSamDaEnc}) {
        auto t = c.train;
        t.method = m;
        t.group = m == Method::kSamDaDec ? "decoder" : "encoder";
        variants.emplace_back(t.group, t);
      }
      break;
    case AblationAxis::kMethod:
      for (auto m : c.methods) {
        auto t = c.train;
        t.method = m;
        t.group = adapt::method_name(m);
        variants.emplace_back(t.group, t);
      }
      break;
  }
  std::vector<AblationRun> runs;
  for (const auto& [group, t] : variants) {
    for (auto seed : c.seeds) {
      auto run = t;
      run.seed = seed;
      runs.push_back({group, seed, run});
    }
  }
  return runs;
}

fs::path run_ablation(const ExperimentConfig& c, AblationAxis axis, const fs::path& out_dir,
                      const ProgressFn& progress) {
  auto base_path = fs::path(c.train.base_checkpoint);
  if (base_path.empty()) {
    auto base = c.base;
    base.method = Method::kFullFt;
    base.base_checkpoint.clear();
    if (base.data_dir.empty()) base.data_dir = c.train.data_dir;
    base.group = "base";
    if (progress) progress("training base model");
    base_path = train_supervised(base, out_dir / "base", progress).checkpoint;
  }
  for (auto& run : ablation_matrix(c, axis)) {
    run.config.base_checkpoint = base_path.string();
    if (progress) progress("run " + run.group + " seed " + std::to_string(run.seed));
    train_supervised(run.config, out_dir / run.group / ("seed" + std::to_string(run.seed)), progress);
  }
  return base_path;
}

}  // namespace samda::engine
