#include "lafs/metrics.hpp"

#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace lafs {

MetricsWriter::MetricsWriter(const std::string& path) : path_(path) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) ||
                     std::filesystem::file_size(path, ec) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw std::runtime_error("metrics: " + path + ": cannot open for appending");
  if (fresh) out_ << "step,phase,name,value\n";
}

void MetricsWriter::log(int64_t step, const std::string& phase, const std::string& name,
                        double value) {
  if (phase.find(',') != std::string::npos || name.find(',') != std::string::npos)
    throw std::invalid_argument("metrics: comma in field '" + phase + "'/'" + name + "'");
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  out_ << step << ',' << phase << ',' << name << ',' << buf << '\n';
  if (!out_) throw std::runtime_error("metrics: " + path_ + ": write failed");
}

void MetricsWriter::flush() { out_.flush(); }

}  // namespace lafs
