#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cgmfas/common.hpp"

namespace cgmfas::csv {

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

inline std::vector<std::string> split_line(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, sep)) out.push_back(trim(field));
    if (!line.empty() && line.back() == sep) out.push_back("");
    return out;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
};

inline Table read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file: " + path);
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV file: " + path);
    t.header = split_line(line);
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        t.rows.push_back(split_line(line));
    }
    return t;
}

inline double parse_double(const std::string& s, const std::string& what) {
    if (s.empty()) throw DataError("empty numeric field for " + what);
    std::size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw DataError("bad numeric value '" + s + "' for " + what);
    }
    if (pos != s.size()) throw DataError("bad numeric value '" + s + "' for " + what);
    return v;
}

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path) {
        if (!out_) throw DataError("cannot open for writing: " + path);
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << fields[i];
        }
        out_ << '\n';
    }

    std::ofstream& stream() { return out_; }

private:
    std::ofstream out_;
};

}  // namespace cgmfas::csv
