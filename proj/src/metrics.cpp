#include "repo/metrics.hpp"

#include <stdexcept>

namespace repo::metrics {

MetricsWriter::MetricsWriter(const std::string& path)
    : out_(path, std::ios::app) {
  if (!out_) throw std::runtime_error("cannot open metrics file " + path);
}

void MetricsWriter::write(const nlohmann::json& obj) {
  out_ << obj.dump() << "\n";
}

void MetricsWriter::flush() { out_.flush(); }

}  // namespace repo::metrics
