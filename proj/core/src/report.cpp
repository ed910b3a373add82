#include "samda/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "samda/errors.hpp"
#include "samda/stats.hpp"

namespace samda::report {

namespace fs = std::filesystem;

namespace {

constexpr double kMeanTolerance = 1e-9;

struct DomainStats {
  std::vector<double> run_means;
  std::vector<std::vector<double>> per_image;  // one list per run
  std::vector<std::string> sample_ids;
};

struct Group {
  std::string name;
  std::string kind;
  std::string method;
  std::int64_t trainable = -1;
  std::int64_t total = -1;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> keys;  // "domain/split" in first-seen order
  std::map<std::string, DomainStats> domains;
  std::vector<Json> loss_curves;
  // ttda only
  std::vector<double> before;
  std::vector<double> after;
  std::vector<double> entropy_fraction;
};

double checked_mean(const Json& eval, const std::string& where) {
  const auto per_image = eval.at("per_image").get<std::vector<double>>();
  const double stored = eval.at("mean").get<double>();
  const double recomputed = stats::mean(per_image);
  if (per_image.empty() || !(std::fabs(recomputed - stored) <= kMeanTolerance)) {
    throw IntegrityError(where + ": stored mean " + std::to_string(stored) + " does not match the per-image mean " +
                         std::to_string(recomputed));
  }
  return recomputed;
}

void add_eval(Group& g, const Json& eval, const std::string& where) {
  const auto key = eval.at("domain").get<std::string>() + "/" + eval.at("split").get<std::string>();
  const double m = checked_mean(eval, where + " " + key);
  auto& d = g.domains[key];
  if (std::find(g.keys.begin(), g.keys.end(), key) == g.keys.end()) g.keys.push_back(key);
  auto per_image = eval.at("per_image").get<std::vector<double>>();
  std::vector<std::string> ids;
  if (eval.contains("sample_ids")) ids = eval.at("sample_ids").get<std::vector<std::string>>();
  if (!d.per_image.empty() && (d.per_image.front().size() != per_image.size() || (!ids.empty() && ids != d.sample_ids))) {
    throw IntegrityError(where + ": runs of group '" + g.name + "' were evaluated on different images for " + key);
  }
  if (d.sample_ids.empty()) d.sample_ids = ids;
  d.run_means.push_back(m);
  d.per_image.push_back(std::move(per_image));
}

// Per-image scores averaged over runs (paired across groups by image).
std::vector<double> image_means(const DomainStats& d) {
  std::vector<double> out(d.per_image.front().size(), 0.0);
  for (const auto& run : d.per_image) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += run[i];
  }
  for (auto& v : out) v /= static_cast<double>(d.per_image.size());
  return out;
}

std::pair<double, double> summary(const DomainStats& d) {
  const double m = stats::mean(d.run_means);
  const double s = d.run_means.size() >= 2 ? stats::stddev(d.run_means) : stats::stddev(d.per_image.front());
  return {m, s};
}

Json ttest_json(const std::string& a, const std::string& b, const std::string& key, const stats::TTestResult& r) {
  Json j = {{"a", a}, {"b", b}, {"domain", key}, {"dof", r.dof}, {"mean_diff", r.mean_diff},
            {"p", r.p}, {"degenerate", r.degenerate}};
  if (std::isfinite(r.t)) {
    j["t"] = r.t;
  } else {
    j["t"] = r.t > 0 ? "inf" : "-inf";
  }
  return j;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

std::string lpad(std::string s, std::size_t w) {
  if (s.size() < w) s.insert(0, w - s.size(), ' ');
  return s;
}

}  // namespace

std::vector<Json> collect_fragments(const fs::path& run_dir) {
  if (!fs::exists(run_dir)) throw ValidationError("run directory not found: " + run_dir.string());
  std::vector<fs::path> paths;
  if (fs::is_regular_file(run_dir)) {
    paths.push_back(run_dir);
  } else {
    for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
      const auto name = e.path().filename().string();
      if (e.is_regular_file() && name.size() > 14 && name.ends_with(".fragment.json")) paths.push_back(e.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw ValidationError("no *.fragment.json files under " + run_dir.string());
  std::vector<Json> out;
  for (const auto& p : paths) {
    auto j = config::read_json_file(p);
    j["source_path"] = fs::relative(p, fs::is_directory(run_dir) ? run_dir : run_dir.parent_path()).string();
    out.push_back(std::move(j));
  }
  return out;
}

Report build_report(const std::vector<Json>& fragments) {
  std::vector<Group> groups;
  const auto find_group = [&](const std::string& name) -> Group* {
    for (auto& g : groups) {
      if (g.name == name) return &g;
    }
    return nullptr;
  };

  for (const auto& f : fragments) {
    const auto where = f.value("source_path", std::string("fragment"));
    try {
      config::check_version(f, where);
      const auto kind = f.at("kind").get<std::string>();
      if (kind != "train" && kind != "eval" && kind != "ttda") throw ValidationError(where + ": unknown kind " + kind);
      const auto name = f.value("group", f.value("method", std::string("unnamed")));
      auto* g = find_group(name);
      if (!g) {
        groups.push_back({});
        g = &groups.back();
        g->name = name;
        g->kind = kind;
        g->method = f.value("method", std::string());
      }
      if (g->kind != kind) throw IntegrityError(where + ": group '" + name + "' mixes " + g->kind + " and " + kind);
      if (f.contains("params")) {
        const auto t = f.at("params").at("trainable").get<std::int64_t>();
        const auto n = f.at("params").at("total").get<std::int64_t>();
        if (g->trainable >= 0 && (g->trainable != t || g->total != n)) {
          throw IntegrityError(where + ": parameter counts disagree within group '" + name + "'");
        }
        g->trainable = t;
        g->total = n;
      }
      g->seeds.push_back(f.value("seed", std::uint64_t{0}));
      for (const auto& e : f.at("evaluations")) add_eval(*g, e, where);
      if (f.contains("loss_curve")) g->loss_curves.push_back(f.at("loss_curve"));
      if (kind == "ttda") {
        const auto& before = f.at("before");
        const double mb = checked_mean(before, where + " before");
        const double ma = checked_mean(f.at("evaluations").at(0), where + " after");
        g->before.push_back(mb);
        g->after.push_back(ma);
        g->entropy_fraction.push_back(f.at("entropy_decreased_fraction").get<double>());
        Json eb = before;
        eb["split"] = before.at("split").get<std::string>() + "@before";
        add_eval(*g, eb, where);
      }
    } catch (const Json::exception& e) {
      throw ValidationError(where + ": malformed fragment: " + e.what());
    }
  }

  Json jgroups = Json::array();
  for (const auto& g : groups) {
    Json domains = Json::object();
    for (const auto& key : g.keys) {
      const auto& d = g.domains.at(key);
      const auto [m, s] = summary(d);
      domains[key] = {{"mean", m},
                      {"std", s},
                      {"std_over", d.run_means.size() >= 2 ? "runs" : "images"},
                      {"run_means", d.run_means},
                      {"per_image", d.per_image},
                      {"sample_ids", d.sample_ids}};
    }
    Json jg = {{"group", g.name}, {"kind", g.kind}, {"method", g.method}, {"runs", g.seeds.size()}, {"seeds", g.seeds}};
    if (g.total > 0) {
      jg["params"] = {{"trainable", g.trainable},
                      {"total", g.total},
                      {"trainable_fraction", static_cast<double>(g.trainable) / static_cast<double>(g.total)}};
    }
    jg["domains"] = domains;
    if (!g.loss_curves.empty()) jg["loss_curves"] = g.loss_curves;
    if (g.kind == "ttda") {
      jg["ttda"] = {{"mean_before", stats::mean(g.before)},
                    {"mean_after", stats::mean(g.after)},
                    {"entropy_decreased_fraction", stats::mean(g.entropy_fraction)}};
    }
    jgroups.push_back(jg);
  }

  // Paired t-tests on image-wise IoU against the reference group.
  Json ttests = Json::array();
  const Group* ref = nullptr;
  for (const auto& g : groups) {
    if (g.name == "sam_da_dec") ref = &g;
  }
  if (!ref) {
    for (const auto& g : groups) {
      if (g.kind != "ttda") {
        ref = &g;
        break;
      }
    }
  }
  for (const auto& g : groups) {
    if (g.kind == "ttda") {
      for (const auto& key : g.keys) {
        if (key.ends_with("@before")) continue;
        const auto before_key = key + "@before";
        if (!g.domains.count(before_key)) continue;
        const auto a = image_means(g.domains.at(key));
        const auto b = image_means(g.domains.at(before_key));
        if (a.size() >= 2) ttests.push_back(ttest_json(g.name + ":after", g.name + ":before", key, stats::paired_t_test(a, b)));
      }
      continue;
    }
    if (!ref || &g == ref) continue;
    for (const auto& key : ref->keys) {
      if (!g.domains.count(key)) continue;
      const auto a = image_means(ref->domains.at(key));
      const auto b = image_means(g.domains.at(key));
      if (a.size() != b.size() || a.size() < 2) continue;
      ttests.push_back(ttest_json(ref->name, g.name, key, stats::paired_t_test(a, b)));
    }
  }

  Report rep;
  rep.json = {{"version", config::kConfigVersion},
              {"fragments", fragments.size()},
              {"groups", jgroups},
              {"ttests", ttests}};

  // Text table: groups x domains with a parameter column.
  std::vector<std::string> keys;
  for (const auto& g : groups) {
    for (const auto& k : g.keys) {
      if (!k.ends_with("@before") && std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
  }
  std::size_t name_w = 6;
  for (const auto& g : groups) name_w = std::max(name_w, g.name.size());
  std::ostringstream out;
  out << pad("method", name_w) << "  " << lpad("runs", 4) << "  " << lpad("trainable", 10) << "  " << lpad("total", 10)
      << "  " << lpad("train%", 7);
  for (const auto& k : keys) out << "  " << pad(k, 17);
  out << '\n';
  for (const auto& g : groups) {
    out << pad(g.name, name_w) << "  " << lpad(std::to_string(g.seeds.size()), 4) << "  ";
    if (g.total > 0) {
      out << lpad(std::to_string(g.trainable), 10) << "  " << lpad(std::to_string(g.total), 10) << "  "
          << lpad(fmt("%.2f", 100.0 * static_cast<double>(g.trainable) / static_cast<double>(g.total)), 7);
    } else {
      out << lpad("-", 10) << "  " << lpad("-", 10) << "  " << lpad("-", 7);
    }
    for (const auto& k : keys) {
      std::string cell = "-";
      if (g.domains.count(k)) {
        const auto [m, s] = summary(g.domains.at(k));
        cell = fmt("%.4f", m) + " +- " + fmt("%.4f", s);
      }
      out << "  " << pad(cell, 17);
    }
    out << '\n';
  }
  bool any_ttda = false;
  for (const auto& g : groups) any_ttda = any_ttda || g.kind == "ttda";
  if (any_ttda) {
    out << "\nTTDA" << '\n';
    out << pad("group", name_w) << "  " << lpad("IoU before", 10) << "  " << lpad("IoU after", 10) << "  "
        << lpad("entropy down", 12) << '\n';
    for (const auto& g : groups) {
      if (g.kind != "ttda") continue;
      out << pad(g.name, name_w) << "  " << lpad(fmt("%.4f", stats::mean(g.before)), 10) << "  "
          << lpad(fmt("%.4f", stats::mean(g.after)), 10) << "  "
          << lpad(fmt("%.1f%%", 100.0 * stats::mean(g.entropy_fraction)), 12) << '\n';
    }
  }
  if (!ttests.empty()) {
    out << "\npaired t-tests (image-wise IoU)\n";
    for (const auto& t : ttests) {
      const std::string tv = t.at("t").is_string() ? t.at("t").get<std::string>() : fmt("%.4f", t.at("t").get<double>());
      out << "  " << t.at("a").get<std::string>() << " vs " << t.at("b").get<std::string>() << " on "
          << t.at("domain").get<std::string>() << ": t=" << tv << " p=" << fmt("%.4g", t.at("p").get<double>())
          << " dof=" << t.at("dof").get<int>() << (t.at("degenerate").get<bool>() ? " (degenerate)" : "") << '\n';
    }
  }
  rep.table = out.str();
  return rep;
}

Report emit_report(const fs::path& run_dir) { return build_report(collect_fragments(run_dir)); }

}  // namespace samda::report
