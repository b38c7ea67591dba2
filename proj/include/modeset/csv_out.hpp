#pragma once

#include <charconv>
#include <fstream>
#include <string>
#include <vector>

#include "modeset/errors.hpp"

namespace modeset {

// Shortest round-trip decimal form; byte-stable across runs.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// Minimal CSV emitter for the result files. Values are written in the
// order appended; no quoting is needed for the numeric/identifier
// payloads this library produces.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header)
        : out_(path) {
        if (!out_) throw IoError("cannot open " + path + " for writing");
        write_row(header);
    }

    void write_row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

}  // namespace modeset
