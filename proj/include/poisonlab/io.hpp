#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "poisonlab/common.hpp"

namespace poisonlab {

// Shortest round-trip decimal form; keeps emitted reports byte-stable.
inline std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NotFoundError("cannot open for writing: " + path.string());
    out << content;
    if (!out) throw InternalError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open for reading: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Minimal CSV assembler. Fields are expected to be free of commas/newlines
// (all writers here emit ids, labels and numbers).
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) {
        append_row(header);
    }

    void append_row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) body_ += ',';
            body_ += fields[i];
        }
        body_ += '\n';
    }

    const std::string& str() const { return body_; }

    void save(const std::filesystem::path& path) const { write_text_file(path, body_); }

private:
    std::string body_;
};

}  // namespace poisonlab
