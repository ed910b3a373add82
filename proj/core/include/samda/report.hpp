#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "samda/config.hpp"

namespace samda::report {

struct Report {
  Json json;
  std::string table;
};

// Every *.fragment.json below `run_dir`, in path order.
std::vector<Json> collect_fragments(const std::filesystem::path& run_dir);

// Aggregates fragments by their "group" label. Each stored mean is
// recomputed from its per-image list; a difference above 1e-9, or fragments
// of one group that disagree on parameter counts or image lists, raise
// IntegrityError.
Report build_report(const std::vector<Json>& fragments);

Report emit_report(const std::filesystem::path& run_dir);

}  // namespace samda::report
