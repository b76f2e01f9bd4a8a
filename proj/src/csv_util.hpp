#pragma once

// Internal CSV helpers with deterministic float formatting so identical runs
// produce byte-identical result files.

#include "phrec/errors.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace phrec::csvu {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

inline std::string fmt(int v) { return std::to_string(v); }

class Writer {
public:
    Writer(const std::filesystem::path& path, const std::vector<std::string>& header)
        : path_(path), out_(path) {
        if (!out_) throw IoError("cannot write " + path.string());
        write_row_strings(header);
    }

    void row(const std::vector<std::string>& cells) { write_row_strings(cells); }

    ~Writer() = default;

private:
    void write_row_strings(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
        if (!out_) throw IoError("write failed for " + path_.string());
    }

    std::filesystem::path path_;
    std::ofstream out_;
};

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw ValidationError("missing CSV column: " + name);
    }
    double num(std::size_t row, int col) const { return std::stod(rows[row][col]); }
};

inline Table read_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    Table t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        if (first) {
            t.header = cells;
            first = false;
        } else {
            t.rows.push_back(cells);
        }
    }
    return t;
}

} // namespace phrec::csvu
