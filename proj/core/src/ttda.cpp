#include "samda/ttda.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>

#include "samda/adamw.hpp"
#include "samda/checkpoint.hpp"
#include "samda/errors.hpp"
#include "samda/ops.hpp"
#include "samda/stats.hpp"

namespace samda::ttda {

using adapt::Method;

void TTDAConfig::validate() const {
  if (iterations < 1) throw ValidationError("ttda: iterations must be >= 1");
  if (!(lr > 0)) throw ValidationError("ttda: lr must be positive");
  if (!(weight_decay >= 0)) throw ValidationError("ttda: weight_decay must be non-negative");
  if (max_negatives < 1) throw ValidationError("ttda: max_negatives must be >= 1");
  if (prompt_jitter < 0) throw ValidationError("ttda: prompt_jitter must be non-negative");
  loss.validate();
}

Json to_json(const TTDAConfig& c) {
  return {{"version", config::kConfigVersion},
          {"method", adapt::method_name(c.method)},
          {"iterations", c.iterations},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"lambda_entropy", c.loss.lambda_entropy},
          {"lambda_proximity", c.loss.lambda_proximity},
          {"lambda_contrastive", c.loss.lambda_contrastive},
          {"entropy_percentile", c.loss.entropy_percentile},
          {"contrastive_temperature", c.loss.contrastive_temperature},
          {"positive_offset", c.loss.positive_offset},
          {"negative_min_offset", c.loss.negative_min_offset},
          {"focal_gamma", c.loss.focal_gamma},
          {"dice_smooth", c.loss.dice_smooth},
          {"max_negatives", c.max_negatives},
          {"prompt_jitter", c.prompt_jitter},
          {"domain", c.domain},
          {"split", c.split},
          {"seed", c.seed}};
}

TTDAConfig ttda_config_from_json(const Json& j) {
  config::check_version(j, "ttda config");
  TTDAConfig c;
  config::ObjectReader r(j, "ttda");
  int version = 0;
  r.get("version", version);
  std::string method = adapt::method_name(c.method);
  r.get("method", method);
  c.method = adapt::parse_method(method);
  r.get("iterations", c.iterations);
  r.get("lr", c.lr);
  r.get("weight_decay", c.weight_decay);
  r.get("lambda_entropy", c.loss.lambda_entropy);
  r.get("lambda_proximity", c.loss.lambda_proximity);
  r.get("lambda_contrastive", c.loss.lambda_contrastive);
  r.get("entropy_percentile", c.loss.entropy_percentile);
  r.get("contrastive_temperature", c.loss.contrastive_temperature);
  r.get("positive_offset", c.loss.positive_offset);
  r.get("negative_min_offset", c.loss.negative_min_offset);
  r.get("focal_gamma", c.loss.focal_gamma);
  r.get("dice_smooth", c.loss.dice_smooth);
  r.get("max_negatives", c.max_negatives);
  r.get("prompt_jitter", c.prompt_jitter);
  r.get("domain", c.domain);
  r.get("split", c.split);
  r.get("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

void prepare_model(engine::LoadedModel& loaded, const TTDAConfig& cfg) {
  if (loaded.spec.method == cfg.method) return;
  if (loaded.spec.method != Method::kFullFt && loaded.spec.method != Method::kDecoderFt) {
    throw ValidationError("ttda: checkpoint was trained with " + adapt::method_name(loaded.spec.method) +
                          " and cannot be adapted with " + adapt::method_name(cfg.method));
  }
  adapt::prepare_method(*loaded.model, cfg.method, loaded.spec.adapter, loaded.spec.lora, cfg.seed);
  loaded.spec.method = cfg.method;
  loaded.spec.attach_seed = cfg.seed;
}

namespace {

struct Context {
  int positive = -1;
  std::vector<int> negatives;
};

// Same-volume neighbours of every sample: the positive at +-positive_offset
// (forward first) and up to max_negatives slices at least negative_min_offset away.
std::vector<Context> volume_context(const std::vector<data::Sample>& samples, const TTDAConfig& cfg) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> index;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    index[{samples[i].volume_id, samples[i].slice_index}] = static_cast<int>(i);
  }
  std::vector<Context> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto find = [&](std::int64_t slice) {
      if (slice < 0) return -1;
      auto it = index.find({s.volume_id, static_cast<std::uint32_t>(slice)});
      return it == index.end() ? -1 : it->second;
    };
    out[i].positive = find(static_cast<std::int64_t>(s.slice_index) + cfg.loss.positive_offset);
    if (out[i].positive < 0) out[i].positive = find(static_cast<std::int64_t>(s.slice_index) - cfg.loss.positive_offset);
    std::vector<std::pair<std::int64_t, int>> far;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      if (samples[k].volume_id != s.volume_id) continue;
      const auto d = std::llabs(static_cast<std::int64_t>(samples[k].slice_index) - static_cast<std::int64_t>(s.slice_index));
      if (d >= cfg.loss.negative_min_offset) far.emplace_back(d, static_cast<int>(k));
    }
    std::sort(far.begin(), far.end());
    for (std::size_t k = 0; k < far.size() && static_cast<int>(k) < cfg.max_negatives; ++k) {
      out[i].negatives.push_back(far[k].second);
    }
  }
  return out;
}

bool encoder_frozen(const sam::SamModel<float>& model) {
  for (const auto& [name, p] : model.params()) {
    if (name.rfind("encoder.", 0) == 0 && p.trainable) return false;
    if (name.rfind("adapter.encoder.", 0) == 0 || name.rfind("adapter.lora.", 0) == 0) {
      if (p.trainable) return false;
    }
  }
  return true;
}

}  // namespace

TTDAResult run_ttda(sam::SamModel<float>& model, const std::vector<data::Sample>& samples, const TTDAConfig& cfg,
                    const engine::ProgressFn& progress) {
  cfg.validate();
  if (samples.empty()) throw ValidationError("ttda: no samples to adapt");
  auto& params = model.params();
  if (params.count(true) == 0) throw ValidationError("ttda: the model has no trainable parameters");

  const auto trainable = [&](const std::string& n) { return params.at(n).trainable; };
  const auto start = params.snapshot(trainable);
  const auto start_bytes = encode_checkpoint(to_checkpoint(params));
  const bool frozen_encoder = encoder_frozen(model);
  const auto context = volume_context(samples, cfg);
  const auto& lc = cfg.loss;

  // Detached pooled decoder embeddings of the starting model, for the contrastive term.
  std::vector<std::optional<Tensor<float>>> pooled(samples.size());
  const auto pooled_at = [&](int k) -> const Tensor<float>& {
    auto& p = pooled[static_cast<std::size_t>(k)];
    if (!p) {
      NoGradGuard no_grad;
      const auto& s = samples[static_cast<std::size_t>(k)];
      p = loss::pool_embedding(model.predict(engine::image_tensor(s), engine::eval_prompt(s, cfg.prompt_jitter)).dense);
    }
    return *p;
  };

  TTDAResult result;
  std::size_t decreased = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto prompt = engine::eval_prompt(s, cfg.prompt_jitter);
    const auto image = engine::image_tensor(s);
    sam::ImageEmbedding<float> cached;
    if (frozen_encoder) {
      NoGradGuard no_grad;
      cached = model.encode_image(image);
    }
    const auto forward = [&]() {
      if (frozen_encoder) return model.decode_masks(cached, model.encode_prompts(prompt));
      return model.predict(image, prompt);
    };

    SampleRecord rec;
    rec.id = "v" + std::to_string(s.volume_id) + "_s" + std::to_string(s.slice_index);
    rec.volume_id = s.volume_id;
    rec.slice_index = s.slice_index;
    std::vector<float> initial_probs;
    {
      NoGradGuard no_grad;
      const auto pred = forward();
      rec.iou_before = loss::compute_iou(loss::binarize(pred.logits), s.mask);
      rec.entropy_before = loss::binary_entropy_loss(pred.logits, lc.entropy_percentile).item();
      const auto probs = ops::sigmoid(pred.logits);
      initial_probs.assign(probs.data().begin(), probs.data().end());
    }

    const auto& ctx = context[i];
    const bool contrastive = lc.lambda_contrastive > 0 && ctx.positive >= 0 && !ctx.negatives.empty();
    Tensor<float> positive;
    std::vector<Tensor<float>> negatives;
    if (contrastive) {
      positive = pooled_at(ctx.positive);
      for (int k : ctx.negatives) negatives.push_back(pooled_at(k));
    }
    rec.used_contrastive = contrastive;

    const bool any_term = lc.lambda_entropy > 0 || lc.lambda_proximity > 0 || contrastive;
    if (any_term) {
      AdamW<float> opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
      params.zero_grad();
      for (int it = 0; it < cfg.iterations; ++it) {
        const auto pred = forward();
        std::vector<Tensor<float>> terms;
        if (lc.lambda_entropy > 0) {
          terms.push_back(ops::scale(loss::binary_entropy_loss(pred.logits, lc.entropy_percentile), lc.lambda_entropy));
        }
        if (lc.lambda_proximity > 0) {
          terms.push_back(ops::scale(loss::proximity_reg(pred.logits, initial_probs, lc), lc.lambda_proximity));
        }
        if (contrastive) {
          terms.push_back(ops::scale(loss::slice_contrastive_loss(loss::pool_embedding(pred.dense), positive, negatives,
                                                                  lc.contrastive_temperature),
                                     lc.lambda_contrastive));
        }
        auto total = terms.front();
        for (std::size_t t = 1; t < terms.size(); ++t) total = ops::add(total, terms[t]);
        total.backward();
        opt.step(params);
      }
    }
    {
      NoGradGuard no_grad;
      const auto pred = forward();
      rec.iou_after = loss::compute_iou(loss::binarize(pred.logits), s.mask);
      rec.entropy_after = loss::binary_entropy_loss(pred.logits, lc.entropy_percentile).item();
    }
    if (rec.entropy_after < rec.entropy_before) ++decreased;

    params.restore(start);
    for (auto& [name, p] : params) p.tensor.clear_grad();
    if (encode_checkpoint(to_checkpoint(params)) != start_bytes) {
      throw IntegrityError("ttda: weights differ from the starting checkpoint after restoring sample " + rec.id);
    }
    ++result.restores_verified;
    if (progress) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s IoU %.4f -> %.4f, confident entropy %.3g -> %.3g", rec.id.c_str(),
                    rec.iou_before, rec.iou_after, rec.entropy_before, rec.entropy_after);
      progress(buf);
    }
    result.samples.push_back(std::move(rec));
  }

  std::vector<double> before, after, eb, ea;
  std::vector<std::string> ids;
  for (const auto& r : result.samples) {
    before.push_back(r.iou_before);
    after.push_back(r.iou_after);
    eb.push_back(r.entropy_before);
    ea.push_back(r.entropy_after);
    ids.push_back(r.id);
  }
  result.mean_before = stats::mean(before);
  result.mean_after = stats::mean(after);
  result.entropy_decreased_fraction = static_cast<double>(decreased) / static_cast<double>(result.samples.size());

  engine::EvalResult eval_before{cfg.domain, cfg.split, before, ids, result.mean_before, stats::stddev(before)};
  engine::EvalResult eval_after{cfg.domain, cfg.split, after, ids, result.mean_after, stats::stddev(after)};
  result.fragment = {{"version", config::kConfigVersion},
                     {"kind", "ttda"},
                     {"group", "ttda_" + adapt::method_name(cfg.method)},
                     {"method", adapt::method_name(cfg.method)},
                     {"seed", cfg.seed},
                     {"params", {{"trainable", params.count(true)}, {"total", params.count(false)}}},
                     {"before", engine::to_json(eval_before)},
                     {"evaluations", Json::array({engine::to_json(eval_after)})},
                     {"entropy_before", eb},
                     {"entropy_after", ea},
                     {"entropy_decreased_fraction", result.entropy_decreased_fraction},
                     {"restores_verified", result.restores_verified},
                     {"config", to_json(cfg)}};
  return result;
}

}  // namespace samda::ttda
