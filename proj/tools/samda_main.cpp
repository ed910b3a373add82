// samda: command-line front end for data generation, training, evaluation,
// test-time adaptation, ablations and reports.

#include <cstdio>
#include <iostream>
#include <fstream>

#include "CLI11.hpp"
#include "samda/adapter.hpp"
#include "samda/config.hpp"
#include "samda/engine.hpp"
#include "samda/errors.hpp"
#include "samda/report.hpp"
#include "samda/synth.hpp"
#include "samda/ttda.hpp"

namespace {

using namespace samda;
namespace fs = std::filesystem;

constexpr int kExitValidation = 1;
constexpr int kExitIntegrity = 2;

bool quiet = false;

void progress(const std::string& msg) {
  if (!quiet) std::cerr << "[samda] " << msg << '\n';
}

std::string grouped(std::int64_t v) {
  std::string s = std::to_string(v < 0 ? -v : v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return v < 0 ? "-" + s : s;
}

int cmd_gen_data(const std::string& config_path, const std::string& out) {
  const auto spec = config::dataset_spec_from_json(config::read_json_file(config_path));
  const auto manifest = data::generate_dataset(spec, out);
  for (const auto& s : manifest.splits) {
    std::cout << s.domain << "/" << s.split << ": " << s.sample_count() << " samples in " << s.volumes.size()
              << " volumes\n";
  }
  std::cout << "wrote " << (fs::path(out) / "manifest.json").string() << '\n';
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out) {
  auto cfg = engine::train_config_from_json(config::read_json_file(config_path));
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  const auto r = engine::train_supervised(cfg, out, progress);
  std::cout << "method " << adapt::method_name(cfg.method) << ": trainable " << grouped(r.trainable) << " of "
            << grouped(r.total) << ", best epoch " << r.best_epoch << " (val IoU " << r.val_iou[static_cast<std::size_t>(r.best_epoch)]
            << ")\n";
  for (const auto& e : r.evaluations) {
    std::cout << e.domain << "/" << e.split << " IoU " << e.mean << " +- " << e.std << '\n';
  }
  std::cout << "checkpoint " << r.checkpoint.string() << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& domain,
             const std::string& split, const std::string& report_path, int jitter) {
  const auto loaded = engine::load_model(checkpoint);
  const auto ds = engine::Dataset::open(data_dir);
  if (!ds.has(domain, split)) throw ValidationError("dataset has no " + domain + "/" + split + " split");
  const auto r = engine::evaluate(*loaded.model, ds.load(domain, split), domain, split, jitter);
  const auto& params = loaded.model->params();
  const Json fragment = {{"version", config::kConfigVersion},
                         {"kind", "eval"},
                         {"group", "eval_" + adapt::method_name(loaded.spec.method)},
                         {"method", adapt::method_name(loaded.spec.method)},
                         {"checkpoint", checkpoint},
                         {"params", {{"trainable", params.count(true)}, {"total", params.count(false)}}},
                         {"evaluations", Json::array({engine::to_json(r)})}};
  if (!report_path.empty()) config::write_json_file(report_path, fragment);
  std::cout << domain << "/" << split << " IoU " << r.mean << " +- " << r.std << " over " << r.per_image.size()
            << " images\n";
  return 0;
}

struct TTDAOverrides {
  int iterations = -1;
  double lr = -1, lambda_entropy = -1, lambda_proximity = -1, lambda_contrastive = -1, q = -1;
  std::string method;
};

int cmd_ttda(const std::string& checkpoint, const std::string& data_dir, const std::string& config_path,
             const std::string& report_path, const TTDAOverrides& o) {
  auto cfg = config_path.empty() ? ttda::TTDAConfig{} : ttda::ttda_config_from_json(config::read_json_file(config_path));
  if (o.iterations >= 0) cfg.iterations = o.iterations;
  if (o.lr >= 0) cfg.lr = o.lr;
  if (o.lambda_entropy >= 0) cfg.loss.lambda_entropy = o.lambda_entropy;
  if (o.lambda_proximity >= 0) cfg.loss.lambda_proximity = o.lambda_proximity;
  if (o.lambda_contrastive >= 0) cfg.loss.lambda_contrastive = o.lambda_contrastive;
  if (o.q >= 0) cfg.loss.entropy_percentile = o.q;
  if (!o.method.empty()) cfg.method = adapt::parse_method(o.method);
  cfg.validate();

  auto loaded = engine::load_model(checkpoint);
  ttda::prepare_model(loaded, cfg);
  const auto ds = engine::Dataset::open(data_dir);
  if (!ds.has(cfg.domain, cfg.split)) throw ValidationError("dataset has no " + cfg.domain + "/" + cfg.split + " split");
  const auto r = ttda::run_ttda(*loaded.model, ds.load(cfg.domain, cfg.split), cfg, progress);
  auto fragment = r.fragment;
  fragment["checkpoint"] = checkpoint;
  if (!report_path.empty()) config::write_json_file(report_path, fragment);
  std::cout << "ttda " << adapt::method_name(cfg.method) << " on " << cfg.domain << "/" << cfg.split << ": IoU "
            << r.mean_before << " -> " << r.mean_after << ", entropy decreased on "
            << 100.0 * r.entropy_decreased_fraction << "% of " << r.samples.size() << " samples, "
            << r.restores_verified << " restores verified\n";
  return 0;
}

int cmd_ablate(const std::string& axis_name, const std::string& config_path, const std::string& out,
               const std::string& data_dir) {
  const auto axis = engine::parse_axis(axis_name);
  auto cfg = engine::experiment_config_from_json(config::read_json_file(config_path));
  if (!data_dir.empty()) cfg.train.data_dir = data_dir;
  if (cfg.train.data_dir.empty()) throw ValidationError("ablate: no dataset (train.data_dir or --data)");
  if (cfg.base.data_dir.empty()) cfg.base.data_dir = cfg.train.data_dir;
  const auto runs = engine::ablation_matrix(cfg, axis);
  progress(std::to_string(runs.size()) + " runs on axis " + axis_name);
  engine::run_ablation(cfg, axis, out, progress);
  const auto rep = report::emit_report(out);
  config::write_json_file(fs::path(out) / "report.json", rep.json);
  std::ofstream(fs::path(out) / "report.txt") << rep.table;
  std::cout << rep.table;
  return 0;
}

int cmd_report(const std::string& run, const std::string& format) {
  if (format != "json" && format != "table") throw ValidationError("--format must be json or table");
  const auto rep = report::emit_report(run);
  if (format == "json") {
    std::cout << rep.json.dump(2) << '\n';
  } else {
    std::cout << rep.table;
  }
  return 0;
}

std::int64_t registry_adapter_count(const adapt::AdapterConfig& cfg, int model_dim, int layers) {
  ParamStore<float> store;
  for (int l = 0; l < layers; ++l) adapt::AdapterLayer<float>(store, "adapter.decoder." + std::to_string(l), model_dim, cfg);
  return store.count(true);
}

int cmd_paramcount(const std::string& config_path) {
  engine::TrainConfig cfg;
  if (!config_path.empty()) {
    const auto j = config::read_json_file(config_path);
    config::check_version(j, "paramcount config");
    // An experiment config counts its shared train settings.
    cfg = j.contains("train") ? engine::experiment_config_from_json(j).train : engine::train_config_from_json(j);
  }
  const auto& m = cfg.model;
  const auto& a = cfg.adapter;
  const auto formula = adapt::adapter_param_count(a, m.dec_dim, m.dec_depth);
  std::cout << "decoder adapter (N=" << a.prompts << ", D_a=" << a.prompt_dim << ", D_k=" << a.key_dim
            << ", D_v=" << a.value_dim << ", D_t=" << m.dec_dim << ", " << m.dec_depth << " layers): closed form "
            << grouped(formula) << ", registry " << grouped(registry_adapter_count(a, m.dec_dim, m.dec_depth)) << '\n';

  const auto full = adapt::AdapterConfig::full_scale();
  const auto full_formula = adapt::adapter_param_count(full, 256, 2);
  std::cout << "full-size decoder adapter (N=2, D_a=512, D_k=D_v=256, D_t=256, 2 layers): closed form "
            << grouped(full_formula) << ", registry " << grouped(registry_adapter_count(full, 256, 2))
            << "; published SAM-DA figure 0.66M\n"
            << "note: the per-layer closed form N*D_a + 1 + 5 biased projections gives " << grouped(full_formula)
            << "; the often quoted " << grouped(full_formula - 2 * 256)
            << " is the same sum with an unbiased W_t; the published 0.66M cannot be recovered from the stated dimensions (dropping W_t entirely gives "
            << grouped(full_formula - 2 * (256 * 256 + 256)) << ")\n\n";

  std::printf("%-11s %12s %12s %9s\n", "method", "trainable", "total", "train%");
  for (auto method : adapt::kAllMethods) {
    engine::ModelSpec spec{method, m, a, cfg.lora, 0};
    const auto model = engine::build_model(spec);
    const auto t = model->params().count(true), n = model->params().count(false);
    std::printf("%-11s %12s %12s %8.2f%%\n", adapt::method_name(method).c_str(), grouped(t).c_str(),
                grouped(n).c_str(), 100.0 * static_cast<double>(t) / static_cast<double>(n));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"samda: SAM-style segmenter with decoder prompt adapters"};
  app.require_subcommand(1);
  app.add_flag("-q,--quiet", quiet, "Suppress progress output on stderr");

  std::string config_path, out, data_dir, checkpoint, domain = "target", split = "test", report_path, axis, run,
                                                                 format = "table";
  int jitter = 2;
  TTDAOverrides overrides;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic source/target dataset");
  gen->add_option("--config", config_path, "Dataset config JSON")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Supervised training on source/train");
  train->add_option("--config", config_path, "Train config JSON")->required();
  train->add_option("--data", data_dir, "Dataset directory (overrides data_dir)");
  train->add_option("--out", out, "Run directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (.sdck)")->required();
  eval->add_option("--data", data_dir, "Dataset directory")->required();
  eval->add_option("--domain", domain, "Domain name")->required();
  eval->add_option("--split", split, "Split name");
  eval->add_option("--report", report_path, "Write an eval fragment JSON here");
  eval->add_option("--jitter", jitter, "Prompt jitter in pixels");

  auto* tt = app.add_subcommand("ttda", "Per-sample test-time adaptation");
  tt->add_option("--checkpoint", checkpoint, "Checkpoint (.sdck)")->required();
  tt->add_option("--data", data_dir, "Dataset directory")->required();
  tt->add_option("--config", config_path, "TTDA config JSON");
  tt->add_option("--report", report_path, "Write a ttda fragment JSON here");
  tt->add_option("--method", overrides.method, "Trainable set to adapt");
  tt->add_option("--iterations", overrides.iterations, "Iterations per sample");
  tt->add_option("--lr", overrides.lr, "Learning rate");
  tt->add_option("--lambda-entropy", overrides.lambda_entropy, "Entropy weight");
  tt->add_option("--lambda-proximity", overrides.lambda_proximity, "Proximity weight");
  tt->add_option("--lambda-contrastive", overrides.lambda_contrastive, "Contrastive weight");
  tt->add_option("--q", overrides.q, "Confident-pixel fraction");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate an ablation matrix");
  ablate->add_option("--axis", axis, "size, placement or method")->required();
  ablate->add_option("--config", config_path, "Experiment config JSON")->required();
  ablate->add_option("--out", out, "Output directory")->required();
  ablate->add_option("--data", data_dir, "Dataset directory (overrides train.data_dir)");

  auto* rep = app.add_subcommand("report", "Aggregate run fragments");
  rep->add_option("--run", run, "Run directory or fragment file")->required();
  rep->add_option("--format", format, "json or table");

  auto* pc = app.add_subcommand("paramcount", "Print adapter and per-method parameter counts");
  pc->add_option("--config", config_path, "Train or experiment config JSON (defaults if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*gen) return cmd_gen_data(config_path, out);
    if (*train) return cmd_train(config_path, data_dir, out);
    if (*eval) return cmd_eval(checkpoint, data_dir, domain, split, report_path, jitter);
    if (*tt) return cmd_ttda(checkpoint, data_dir, config_path, report_path, overrides);
    if (*ablate) return cmd_ablate(axis, config_path, out, data_dir);
    if (*rep) return cmd_report(run, format);
    if (*pc) return cmd_paramcount(config_path);
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << '\n';
    return kExitIntegrity;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitIntegrity;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const DimensionError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return 0;
}
