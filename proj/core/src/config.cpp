#include "samda/config.hpp"

#include <fstream>
#include <sstream>

#include "samda/errors.hpp"

namespace samda::config {

ObjectReader::ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) throw ValidationError(path_ + ": expected a JSON object");
}

const Json* ObjectReader::child(const char* key) {
  seen_.insert(key);
  if (!j_.contains(key)) return nullptr;
  const auto& c = j_.at(key);
  if (!c.is_object()) throw ValidationError(path_ + "." + key + ": expected a JSON object");
  return &c;
}

void ObjectReader::finish() const {
  for (const auto& [key, value] : j_.items()) {
    if (!seen_.count(key)) throw ValidationError(path_ + ": unknown key '" + key + "'");
  }
}

void check_version(const Json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("version")) throw ValidationError(what + ": missing \"version\" field");
  const auto& v = j.at("version");
  if (!v.is_number_integer() || v.get<int>() != kConfigVersion) {
    throw ValidationError(what + ": unsupported version " + v.dump() + " (expected " + std::to_string(kConfigVersion) +
                          ")");
  }
}

Json to_json(const sam::ModelConfig& c) {
  return {{"image_size", c.image_size},     {"patch_size", c.patch_size},       {"enc_dim", c.enc_dim},
          {"enc_depth", c.enc_depth},       {"enc_heads", c.enc_heads},         {"enc_mlp_ratio", c.enc_mlp_ratio},
          {"dec_dim", c.dec_dim},           {"dec_depth", c.dec_depth},         {"dec_heads", c.dec_heads},
          {"dec_mlp_ratio", c.dec_mlp_ratio}, {"num_mask_tokens", c.num_mask_tokens}, {"seed", c.seed}};
}

sam::ModelConfig model_config_from_json(const Json& j, const std::string& path) {
  sam::ModelConfig c;
  ObjectReader r(j, path);
  r.get("image_size", c.image_size);
  r.get("patch_size", c.patch_size);
  r.get("enc_dim", c.enc_dim);
  r.get("enc_depth", c.enc_depth);
  r.get("enc_heads", c.enc_heads);
  r.get("enc_mlp_ratio", c.enc_mlp_ratio);
  r.get("dec_dim", c.dec_dim);
  r.get("dec_depth", c.dec_depth);
  r.get("dec_heads", c.dec_heads);
  r.get("dec_mlp_ratio", c.dec_mlp_ratio);
  r.get("num_mask_tokens", c.num_mask_tokens);
  r.get("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

Json to_json(const adapt::AdapterConfig& c) {
  return {{"prompts", c.prompts},
          {"prompt_dim", c.prompt_dim},
          {"key_dim", c.key_dim},
          {"value_dim", c.value_dim},
          {"placement", adapt::placement_name(c.placement)},
          {"encoder_adapted_blocks", c.encoder_adapted_blocks},
          {"init_scale", c.init_scale}};
}

adapt::AdapterConfig adapter_config_from_json(const Json& j, const std::string& path) {
  adapt::AdapterConfig c;
  ObjectReader r(j, path);
  r.get("prompts", c.prompts);
  r.get("prompt_dim", c.prompt_dim);
  r.get("key_dim", c.key_dim);
  r.get("value_dim", c.value_dim);
  std::string placement = adapt::placement_name(c.placement);
  r.get("placement", placement);
  c.placement = adapt::parse_placement(placement);
  r.get("encoder_adapted_blocks", c.encoder_adapted_blocks);
  r.get("init_scale", c.init_scale);
  r.finish();
  c.validate();
  return c;
}

namespace {

std::string projection_key(sam::Projection p) {
  switch (p) {
    case sam::Projection::kQuery:
      return "q";
    case sam::Projection::kKey:
      return "k";
    case sam::Projection::kValue:
      return "v";
  }
  return "?";
}

sam::Projection parse_projection(const std::string& s, const std::string& path) {
  if (s == "q") return sam::Projection::kQuery;
  if (s == "k") return sam::Projection::kKey;
  if (s == "v") return sam::Projection::kValue;
  throw ValidationError(path + ": unknown LoRA target '" + s + "' (expected q, k or v)");
}

}  // namespace

Json to_json(const adapt::LoraConfig& c) {
  Json targets = Json::array();
  for (auto t : c.targets) targets.push_back(projection_key(t));
  return {{"rank", c.rank}, {"alpha", c.alpha}, {"targets", targets}};
}

adapt::LoraConfig lora_config_from_json(const Json& j, const std::string& path) {
  adapt::LoraConfig c;
  ObjectReader r(j, path);
  r.get("rank", c.rank);
  r.get("alpha", c.alpha);
  std::vector<std::string> targets;
  for (auto t : c.targets) targets.push_back(projection_key(t));
  r.get("targets", targets);
  c.targets.clear();
  for (const auto& t : targets) c.targets.push_back(parse_projection(t, path + ".targets"));
  r.finish();
  c.validate();
  return c;
}

Json to_json(const loss::LossConfig& c) {
  return {{"dice_weight", c.dice_weight},
          {"ce_weight", c.ce_weight},
          {"iou_loss_weight", c.iou_loss_weight},
          {"focal_gamma", c.focal_gamma},
          {"dice_smooth", c.dice_smooth},
          {"entropy_percentile", c.entropy_percentile},
          {"lambda_entropy", c.lambda_entropy},
          {"lambda_proximity", c.lambda_proximity},
          {"lambda_contrastive", c.lambda_contrastive},
          {"contrastive_temperature", c.contrastive_temperature},
          {"positive_offset", c.positive_offset},
          {"negative_min_offset", c.negative_min_offset}};
}

loss::LossConfig loss_config_from_json(const Json& j, const std::string& path) {
  loss::LossConfig c;
  ObjectReader r(j, path);
  r.get("dice_weight", c.dice_weight);
  r.get("ce_weight", c.ce_weight);
  r.get("iou_loss_weight", c.iou_loss_weight);
  r.get("focal_gamma", c.focal_gamma);
  r.get("dice_smooth", c.dice_smooth);
  r.get("entropy_percentile", c.entropy_percentile);
  r.get("lambda_entropy", c.lambda_entropy);
  r.get("lambda_proximity", c.lambda_proximity);
  r.get("lambda_contrastive", c.lambda_contrastive);
  r.get("contrastive_temperature", c.contrastive_temperature);
  r.get("positive_offset", c.positive_offset);
  r.get("negative_min_offset", c.negative_min_offset);
  r.finish();
  c.validate();
  return c;
}

Json to_json(const data::DomainConfig& c) {
  return {{"name", c.name},
          {"num_blobs", {c.min_blobs, c.max_blobs}},
          {"radius", {c.min_radius, c.max_radius}},
          {"drift", c.drift},
          {"foreground", {c.fg_min, c.fg_max}},
          {"background", {c.bg_min, c.bg_max}},
          {"texture", c.texture},
          {"gamma", c.gamma},
          {"noise_sigma", c.noise_sigma},
          {"speckle_sigma", c.speckle_sigma},
          {"blur_radius", c.blur_radius},
          {"edge_softness", c.edge_softness},
          {"seed", c.seed}};
}

data::DomainConfig domain_config_from_json(const Json& j, const std::string& path, data::DomainConfig c) {
  ObjectReader r(j, path);
  r.get("name", c.name);
  std::pair<int, int> blobs{c.min_blobs, c.max_blobs};
  std::pair<double, double> radius{c.min_radius, c.max_radius}, fg{c.fg_min, c.fg_max}, bg{c.bg_min, c.bg_max};
  r.get("num_blobs", blobs);
  r.get("radius", radius);
  r.get("foreground", fg);
  r.get("background", bg);
  std::tie(c.min_blobs, c.max_blobs) = blobs;
  std::tie(c.min_radius, c.max_radius) = radius;
  std::tie(c.fg_min, c.fg_max) = fg;
  std::tie(c.bg_min, c.bg_max) = bg;
  r.get("drift", c.drift);
  r.get("texture", c.texture);
  r.get("gamma", c.gamma);
  r.get("noise_sigma", c.noise_sigma);
  r.get("speckle_sigma", c.speckle_sigma);
  r.get("blur_radius", c.blur_radius);
  r.get("edge_softness", c.edge_softness);
  r.get("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

namespace {

Json sizes_json(const data::SplitSizes& s) { return {{"train", s.train}, {"val", s.val}, {"test", s.test}}; }

data::SplitSizes sizes_from_json(const Json& j, const std::string& path, data::SplitSizes s) {
  ObjectReader r(j, path);
  r.get("train", s.train);
  r.get("val", s.val);
  r.get("test", s.test);
  r.finish();
  return s;
}

}  // namespace

Json to_json(const data::DatasetSpec& s) {
  return {{"version", kConfigVersion},
          {"seed", s.seed},
          {"image_size", s.image_size},
          {"slices_per_volume", s.slices_per_volume},
          {"source_sizes", sizes_json(s.source_sizes)},
          {"target_sizes", sizes_json(s.target_sizes)},
          {"source", to_json(s.source)},
          {"target", to_json(s.target)}};
}

data::DatasetSpec dataset_spec_from_json(const Json& j) {
  check_version(j, "dataset config");
  data::DatasetSpec s;
  ObjectReader r(j, "dataset");
  int version = 0;
  r.get("version", version);
  r.get("seed", s.seed);
  r.get("image_size", s.image_size);
  r.get("slices_per_volume", s.slices_per_volume);
  if (const auto* c = r.child("source_sizes")) s.source_sizes = sizes_from_json(*c, r.path("source_sizes"), s.source_sizes);
  if (const auto* c = r.child("target_sizes")) s.target_sizes = sizes_from_json(*c, r.path("target_sizes"), s.target_sizes);
  if (const auto* c = r.child("source")) s.source = domain_config_from_json(*c, r.path("source"), s.source);
  if (const auto* c = r.child("target")) s.target = domain_config_from_json(*c, r.path("target"), s.target);
  r.finish();
  s.validate();
  return s;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return Json::parse(buf.str());
  } catch (const Json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw ValidationError("write failed for " + path.string());
}

}  // namespace samda::config
