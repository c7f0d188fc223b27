#include "mqarch/csv.hpp"

#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "mqarch/errors.hpp"

namespace mqarch::csv {

namespace {
std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}
}  // namespace

int Table::col(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

int Table::col_required(const std::string& name) const {
    int c = col(name);
    if (c < 0) throw IoError("missing CSV column '" + name + "'");
    return c;
}

Table read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty CSV " + path);
    t.header = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split(line);
        if (fields.size() != t.header.size())
            throw IoError("ragged CSV row in " + path);
        t.rows.push_back(std::move(fields));
    }
    return t;
}

Writer::Writer(const std::string& path, const std::vector<std::string>& header)
    : out_(path), width_(header.size()), path_(path) {
    if (!out_) throw IoError("cannot write " + path);
    for (size_t i = 0; i < header.size(); ++i) {
        if (i) out_ << ',';
        out_ << header[i];
    }
    out_ << '\n';
}

void Writer::row(const std::vector<std::string>& fields) {
    if (fields.size() != width_) throw IoError("bad row width for " + path_);
    for (size_t i = 0; i < fields.size(); ++i) {
        if (i) out_ << ',';
        out_ << fields[i];
    }
    out_ << '\n';
}

void Writer::close() {
    out_.flush();
    if (!out_) throw IoError("write failure on " + path_);
    out_.close();
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt(int v) { return std::to_string(v); }
std::string fmt(long v) { return std::to_string(v); }

double parse_double(const std::string& s) {
    if (s.empty()) throw IoError("empty numeric field");
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw IoError("bad numeric field '" + s + "'");
    return v;
}

int parse_int(const std::string& s) {
    if (s.empty()) throw IoError("empty integer field");
    char* end = nullptr;
    long v = std::strtol(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
        throw IoError("bad integer field '" + s + "'");
    return static_cast<int>(v);
}

}  // namespace mqarch::csv
