#pragma once

#include <fstream>
#include <string>

#include "json.hpp"

namespace repo::metrics {

/// Append-only JSONL stream: one compact object per line.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  void write(const nlohmann::json& obj);
  void flush();

 private:
  std::ofstream out_;
};

}  // namespace repo::metrics
