#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace mqarch::csv {

/// Minimal comma-separated I/O: header row mandatory, '.' decimal point,
/// no quoting (none of the emitted fields need it).
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int col(const std::string& name) const;           // -1 if absent
    int col_required(const std::string& name) const;  // throws IoError
};

Table read(const std::string& path);

class Writer {
  public:
    Writer(const std::string& path, const std::vector<std::string>& header);
    void row(const std::vector<std::string>& fields);
    void close();

  private:
    std::ofstream out_;
    size_t width_;
    std::string path_;
};

/// Round-trip exact formatting ("%.17g") for reproducible outputs.
std::string fmt(double v);
std::string fmt(int v);
std::string fmt(long v);

double parse_double(const std::string& s);
int parse_int(const std::string& s);

}  // namespace mqarch::csv
