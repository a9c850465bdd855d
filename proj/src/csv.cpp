#include "soh/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace soh::csv {

Reader::Reader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    data_ = ss.str();
}

void Reader::expect_header(const std::vector<std::string>& expected) {
    std::vector<std::string> row;
    if (!next_row(row)) throw ParseError(path_ + ": missing header row");
    if (row != expected) {
        std::string want;
        for (const auto& c : expected) {
            if (!want.empty()) want += ',';
            want += c;
        }
        throw ParseError(path_ + ":1: header mismatch, expected '" + want + "'");
    }
}

bool Reader::next_row(std::vector<std::string>& out) {
    while (pos_ < data_.size()) {
        std::size_t end = data_.find('\n', pos_);
        if (end == std::string::npos) end = data_.size();
        std::size_t len = end - pos_;
        if (len > 0 && data_[pos_ + len - 1] == '\r') --len;
        ++line_;
        if (len == 0) {
            pos_ = end + 1;
            continue;
        }
        out.clear();
        std::size_t field_start = pos_;
        const std::size_t row_end = pos_ + len;
        for (std::size_t i = pos_; i <= row_end; ++i) {
            if (i == row_end || data_[i] == ',') {
                out.emplace_back(data_, field_start, i - field_start);
                field_start = i + 1;
            }
        }
        pos_ = end + 1;
        return true;
    }
    return false;
}

double Reader::to_double(const std::string& field) const {
    double v = 0;
    auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc{} || p != field.data() + field.size())
        throw ParseError(path_ + ":" + std::to_string(line_) + ": bad numeric field '" + field + "'");
    return v;
}

std::int64_t Reader::to_int(const std::string& field) const {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc{} || p != field.data() + field.size())
        throw ParseError(path_ + ":" + std::to_string(line_) + ": bad integer field '" + field + "'");
    return v;
}

std::string format_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

Writer::Writer(const std::string& path) : path_(path) {}

Writer::~Writer() { flush(); }

void Writer::header(const std::vector<std::string>& cols) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (i) buf_ += ',';
        buf_ += cols[i];
    }
    buf_ += '\n';
}

void Writer::field(const std::string& s) {
    if (row_open_) buf_ += ',';
    buf_ += s;
    row_open_ = true;
}

void Writer::field(double v) { field(format_double(v)); }

void Writer::field(std::int64_t v) { field(std::to_string(v)); }

void Writer::end_row() {
    buf_ += '\n';
    row_open_ = false;
}

void Writer::flush() {
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path_);
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
}

}  // namespace soh::csv
