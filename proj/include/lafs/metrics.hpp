#pragma once

// Append-only metrics log: CSV columns step,phase,name,value. The header is
// written once when the file is new or empty. Values are formatted with %.9g
// and no timestamps are recorded, so identical runs produce identical bytes.

#include <cstdint>
#include <fstream>
#include <string>

namespace lafs {

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);

  void log(int64_t step, const std::string& phase, const std::string& name, double value);
  void flush();
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
};

}  // namespace lafs
