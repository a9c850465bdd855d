#pragma once

#include <string>
#include <vector>

#include "soh/common.hpp"

namespace soh::csv {

// Minimal comma-separated reader. No quoting: none of the pipeline's file
// formats need it. Skips blank lines, validates column counts, reports the
// 1-based line number on malformed input.
class Reader {
public:
    explicit Reader(const std::string& path);

    // Validates that the header equals `expected` (exact match).
    void expect_header(const std::vector<std::string>& expected);

    // Returns false at end of file. Fields are written into `out`.
    bool next_row(std::vector<std::string>& out);

    std::size_t line_number() const { return line_; }
    const std::string& path() const { return path_; }

    double to_double(const std::string& field) const;
    std::int64_t to_int(const std::string& field) const;

private:
    std::string path_;
    std::string data_;
    std::size_t pos_ = 0;
    std::size_t line_ = 0;
};

class Writer {
public:
    explicit Writer(const std::string& path);
    ~Writer();

    void header(const std::vector<std::string>& cols);
    void field(const std::string& s);
    void field(double v);
    void field(std::int64_t v);
    void end_row();

private:
    std::string path_;
    std::string buf_;
    bool row_open_ = false;
    void flush();
};

// Shortest round-trip decimal form, deterministic across runs.
std::string format_double(double v);

}  // namespace soh::csv
